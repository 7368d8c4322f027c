#!/usr/bin/env python3
"""Level-of-detail behavior of the latent pyramid.

Renders the neural material at increasing camera distances with
footprint-driven level selection, then at pinned pyramid levels, mirroring
how filtered appearance stabilizes under minification while level 0 keeps
full detail. Expects the archive from 02_train_neural_material.py.
"""

import os

import numpy as np

from neuralmat import pfm
from neuralmat.neural import load_archive
from neuralmat.render import (Camera, NeuralBinding, Quad, RenderConfig,
                              Scene, render)

out_dir = os.path.join(os.path.dirname(__file__), "out")
archive = os.path.join(out_dir, "two_layer_2x32.nma")
if not os.path.exists(archive):
    raise SystemExit("run 02_train_neural_material.py first")
mat = load_archive(archive)

quad = Quad(origin=(-8, -8, 0), edge_u=(16, 0, 0), edge_v=(0, 16, 0),
            material="m", uv_scale=(4, 4))
binding = NeuralBinding(mat)

print("footprint-driven level selection vs camera distance:")
for dist in (3.0, 6.0, 12.0, 24.0):
    cam = Camera((0, 0, dist), (0, 0, 0), (0, 1, 0), vfov_deg=45)
    scene = Scene(cam, [quad], {"m": binding}, env_radiance=(1, 1, 1))
    cfg = RenderConfig(width=96, height=96, spp=32, max_vertices=3, seed=2)
    img, aux = render(scene, cfg, return_aux=True)
    sel = aux["obj"] == 0
    print(f"  distance {dist:5.1f}: mean level {aux['level'][sel].mean():5.2f}, "
          f"image mean {img[sel].mean():.4f}")
    pfm.write_pfm(os.path.join(out_dir, f"lod_dist_{int(dist)}.pfm"), img)

print("\npinned pyramid levels at a fixed mid-distance view:")
cam = Camera((0, 0, 8), (0, 0, 0), (0, 1, 0), vfov_deg=45)
scene = Scene(cam, [quad], {"m": binding}, env_radiance=(1, 1, 1))
for lvl in (0.0, 1.0, 2.0, 4.0):
    cfg = RenderConfig(width=96, height=96, spp=32, max_vertices=3, seed=2,
                       force_level=lvl)
    img = render(scene, cfg)
    pfm.write_pfm(os.path.join(out_dir, f"lod_level_{int(lvl)}.pfm"), img)
    print(f"  level {lvl:3.1f}: image mean {img.mean():.4f}, "
          f"std {img.std():.4f}")
print(f"wrote images to {out_dir}")
