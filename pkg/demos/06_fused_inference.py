#!/usr/bin/env python3
"""Quantized, packed, fused MLP inference.

Quantizes a 3x64 decoder to FP16, packs weights in access order, and
compares the naive per-sample per-layer path against the single-pass fused
path (FP16 weights/inputs, FP32 accumulation) for both accuracy and
throughput.
"""

import time

import numpy as np

from neuralmat import mlp

rng = np.random.default_rng(0)
net = mlp.Mlp.create((20, 64, 64, 64, 3), rng)
q = mlp.quantize(net)
print(f"parameters: {sum(p.size for p in net.param_arrays())} "
      f"({q.packed.nbytes} bytes packed FP16), clamped: {q.clamped}")

x = rng.standard_normal((65536, 20)).astype(np.float32)

# accuracy: fused vs the FP32 forward over dequantized weights
deq = q.dequantize()
a = q.fused_forward(x[:4096])
b = deq.forward(x[:4096].astype(np.float16).astype(np.float32))
print(f"fused vs dequantized-forward max abs diff: {np.abs(a-b).max():.2e}")

t0 = time.perf_counter()
for row in x[:2048]:
    net.forward(row)
naive = 2048 / (time.perf_counter() - t0)

t0 = time.perf_counter()
for row in x[:2048]:
    q.fused_forward(row)
fused_single = 2048 / (time.perf_counter() - t0)

t0 = time.perf_counter()
q.fused_forward(x)
fused_batch = 65536 / (time.perf_counter() - t0)

print(f"naive FP32 (per sample, per layer): {naive:10.0f} evals/s")
print(f"fused FP16 (per sample)           : {fused_single:10.0f} evals/s")
print(f"fused FP16 (batched)              : {fused_batch:10.0f} evals/s "
      f"({fused_batch/naive:.0f}x the naive path)")
