#!/usr/bin/env python3
"""Render the neural material next to its reference and report image errors.

Expects the archive produced by 02_train_neural_material.py. Renders the
same direct-lighting view with the reference graph and with the baked
neural material (both full-precision and the FP16 fused inference path),
then prints SMAPE and relative-error metrics.
"""

import os

import numpy as np

from neuralmat import material, pfm
from neuralmat.neural import load_archive
from neuralmat.render import (Camera, NeuralBinding, Quad, ReferenceBinding,
                              RenderConfig, Scene, compute_metrics, render)

out_dir = os.path.join(os.path.dirname(__file__), "out")
archive = os.path.join(out_dir, "two_layer_2x32.nma")
if not os.path.exists(archive):
    raise SystemExit("run 02_train_neural_material.py first")

graph, tex = material.builtin_two_layer(128)
mat = load_archive(archive)

quad = Quad(origin=(-4, -4, 0), edge_u=(8, 0, 0), edge_v=(0, 8, 0),
            material="m", uv_scale=(2, 2))
cam = Camera((0, -5, 5), (0, 0, 0), (0, 0, 1), vfov_deg=45)


def view(binding):
    return Scene(cam, [quad], {"m": binding}, env_radiance=(1, 1, 1))


cfg = RenderConfig(width=192, height=192, spp=256, max_vertices=3, seed=1)
print("rendering reference ...")
ref = render(view(ReferenceBinding(graph, tex)), cfg)
print("rendering neural (fp32 master weights) ...")
neu = render(view(NeuralBinding(mat)), cfg)
print("rendering neural (fp16 fused inference) ...")
neu16 = render(view(NeuralBinding(mat, fp16=True)), cfg)

pfm.write_pfm(os.path.join(out_dir, "render_reference.pfm"), ref)
pfm.write_pfm(os.path.join(out_dir, "render_neural.pfm"), neu)
pfm.write_pfm(os.path.join(out_dir, "render_neural_fp16.pfm"), neu16)

m = compute_metrics(neu, ref)
print("\nneural vs reference:")
for k, v in m.items():
    print(f"  {k:22s} {v:.5f}")
mq = compute_metrics(neu16, neu)
print(f"\nfp16 vs fp32 inference SMAPE: {mq['smape']:.6f}")
print(f"wrote renders to {out_dir}")
