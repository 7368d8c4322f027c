#!/usr/bin/env python3
"""Bake the reference material into a neural material.

Runs a shortened two-phase optimization (encoder bootstrap, then direct
latent finetuning) with the importance-sampler decoder trained simultaneously
against the evolving BRDF, then saves the archive + loss history. Increase
`iterations` toward 20000 for production quality.
"""

import os

import numpy as np

from neuralmat import material, training
from neuralmat.neural import NeuralMaterial, NeuralMaterialConfig, save_archive

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

graph, tex = material.builtin_two_layer(128)
cfg = training.TrainConfig(iterations=2000, batch_size=2048, seed=3)
rng = np.random.default_rng(cfg.seed)
mat = NeuralMaterial.create(NeuralMaterialConfig(brdf_hidden="2x32"), rng)

print(f"training 2x32 decoder on {tex.width}x{tex.height} material, "
      f"{cfg.iterations} iterations (phase 1 ends at "
      f"{int(cfg.phase1_fraction * cfg.iterations)})")
mat, history = training.train(graph, tex, mat, cfg, rng)

for it, brdf_l1log, kl, albedo in history:
    print(f"  iter {it:5d}  brdf_l1log {brdf_l1log:.4f}  kl {kl:+.3f}")

archive = os.path.join(out_dir, "two_layer_2x32.nma")
save_archive(archive, mat)
training.write_history_csv(os.path.join(out_dir, "two_layer_loss.csv"), history)
print(f"saved {archive}")
print(f"latent pyramid: {mat.latent.n_levels} levels, "
      f"{mat.latent.width}x{mat.latent.height}x{mat.latent.channels}")
hist, edges = mat.latent.magnitude_histogram(8)
print("latent log2-magnitude histogram:", dict(zip(edges[:-1].astype(int), hist)))
