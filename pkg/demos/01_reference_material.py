#!/usr/bin/env python3
"""Walk through the analytic layered reference material.

Builds the built-in two-layer target (a colorful diffuse base mixed with a
grooved brushed-metal layer), inspects its prefiltered parameter pyramid,
evaluates the BRDF along a sweep of outgoing angles, and estimates the
directional albedo by Monte Carlo. Writes a few PFM maps next to the script.
"""

import os

import numpy as np

from neuralmat import geom, material, pfm

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

graph, tex = material.builtin_two_layer(128)
print(f"material: {len(graph.layers)} layers, textures {tex.width}x{tex.height}, "
      f"{tex.n_levels} pyramid levels")

# The finest level stores the raw maps; coarse levels fold normal-map
# variation into roughness (moment-based prefiltering).
for lvl in (0, 3, 5):
    rough = tex.pyramid[lvl]["roughness"]
    print(f"  level {lvl}: roughness mean {rough.mean():.3f} "
          f"(min {rough.min():.3f}, max {rough.max():.3f})")
pfm.write_pfm(os.path.join(out_dir, "albedo_map.pfm"),
              tex.channels["albedo"])
pfm.write_pfm(os.path.join(out_dir, "roughness_l0.pfm"),
              tex.pyramid[0]["roughness"])
pfm.write_pfm(os.path.join(out_dir, "roughness_l4.pfm"),
              tex.pyramid[4]["roughness"])

# BRDF slice: fix the incident direction, sweep the outgoing polar angle
# through the mirror direction.
wi = geom.normalize(np.array([[0.5, 0.0, 0.8]]))
thetas = np.deg2rad(np.linspace(-85, 85, 35))
wo = np.stack([np.sin(thetas), np.zeros_like(thetas), np.cos(thetas)], axis=-1)
uv = np.full((35, 2), 0.37)
f = material.eval_reference(graph, tex, uv, np.repeat(wi, 35, axis=0), wo)
print("\nBRDF slice (theta_o in degrees vs mean RGB value):")
for t, v in zip(np.rad2deg(thetas)[::5], f[::5]):
    print(f"  {t:+6.1f}  {v.mean():.4f}")

# Directional albedo by cosine-weighted Monte Carlo (unbiased).
rng = np.random.default_rng(0)
wo_n = np.array([[0.0, 0.0, 1.0]])
est = material.estimate_albedo(graph, tex, np.array([[0.37, 0.37]]),
                               np.repeat(wo_n, 200_000, axis=0), rng)
print(f"\ndirectional albedo at normal incidence: {est.mean(axis=0).round(4)}")

# Mollified evaluation blurs sharp peaks (used early in training).
peak = material.eval_reference(graph, tex, np.array([[0.37, 0.37]]),
                               wi, geom.reflect(wi, np.array([[0.0, 0.0, 1.0]])))
soft = material.eval_mollified(graph, tex, np.array([[0.37, 0.37]]),
                               wi, geom.reflect(wi, np.array([[0.0, 0.0, 1.0]])),
                               np.deg2rad(5.0), 512, rng)
print(f"peak value {peak.mean():.4f} -> mollified {soft.mean():.4f}")
print(f"\nwrote PFM maps to {out_dir}")
