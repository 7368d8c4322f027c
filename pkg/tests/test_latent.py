import io

import numpy as np

from neuralmat import latent, mlp
from neuralmat.texture import PARAM_DIM
from tests.test_texture import make_tex


def random_pyramid(rng, res=16, channels=8):
    pyr = latent.LatentPyramid.zeros(res, res, channels)
    for lvl in pyr.levels:
        lvl[:] = rng.standard_normal(lvl.shape).astype(np.float32)
    return pyr


def test_resolution_halves_to_one():
    pyr = latent.LatentPyramid.zeros(64, 64)
    shapes = [l.shape[:2] for l in pyr.levels]
    assert shapes == [(64, 64), (32, 32), (16, 16), (8, 8), (4, 4), (2, 2), (1, 1)]


def test_integer_level_deterministic():
    rng = np.random.default_rng(0)
    pyr = random_pyramid(rng)
    uv = rng.random((100, 2))
    z1, l1 = pyr.fetch(uv, 2.0, rng.random(100))
    z2, l2 = pyr.fetch(uv, 2.0, rng.random(100))
    assert np.array_equal(z1, z2)
    assert np.all(l1 == 2) and np.all(l2 == 2)


def test_texel_center_identity():
    rng = np.random.default_rng(1)
    pyr = random_pyramid(rng)
    uv = np.array([[(3 + 0.5) / 16, (5 + 0.5) / 16]])
    z, _ = pyr.fetch(uv, 0.0, np.zeros(1))
    assert np.allclose(z[0], pyr.levels[0][5, 3], atol=1e-7)


def test_roulette_expectation_level_1p3():
    rng = np.random.default_rng(2)
    pyr = random_pyramid(rng)
    uv = np.array([0.37, 0.81])
    n = 100_000
    z, chosen = pyr.fetch(np.tile(uv, (n, 1)), 1.3, rng.random(n))
    z = z.astype(np.float64)
    target = 0.7 * pyr.fetch_level(uv[None, :], 1) + 0.3 * pyr.fetch_level(uv[None, :], 2)
    err = np.abs(z.mean(axis=0) - target[0])
    sigma = z.std(axis=0) / np.sqrt(n)
    assert np.all(err <= 3.0 * sigma + 1e-7)
    frac = np.mean(chosen == 2)
    assert abs(frac - 0.3) < 0.01


def test_adjoint_dot_product():
    # <fetch(pyr + eps*D) - fetch(pyr), g> / eps == <D, accumulate(g)>
    rng = np.random.default_rng(3)
    pyr = random_pyramid(rng)
    n = 64
    uv = rng.random((n, 2))
    levels = rng.integers(0, 3, n).astype(np.float64)
    u = rng.random(n)
    z0, chosen = pyr.fetch(uv, levels, u)
    g = rng.standard_normal((n, pyr.channels))
    grads = pyr.zero_grads()
    pyr.accumulate_texel_grads(grads, uv, chosen, g)

    delta = [rng.standard_normal(l.shape) for l in pyr.levels]
    eps = 1e-3
    pert = latent.LatentPyramid(
        [l + eps * d for l, d in zip(pyr.levels, delta)]
    )
    z1, _ = pert.fetch(uv, levels, u)
    lhs = float(np.sum((np.asarray(z1, np.float64) - z0) * g)) / eps
    rhs = float(sum(np.sum(d * gr) for d, gr in zip(delta, grads)))
    assert abs(lhs - rhs) / max(abs(rhs), 1e-6) < 1e-3


def test_grad_lands_on_single_texel_at_center():
    rng = np.random.default_rng(4)
    pyr = random_pyramid(rng)
    grads = pyr.zero_grads()
    uv = np.array([[(3 + 0.5) / 16, (5 + 0.5) / 16]])
    g = np.ones((1, 8))
    pyr.accumulate_texel_grads(grads, uv, np.array([0]), g)
    assert np.allclose(grads[0][5, 3], 1.0, atol=1e-9)
    assert np.isclose(np.abs(grads[0]).sum(), 8.0, atol=1e-6)


def test_grad_quarter_weights_at_texel_corner():
    rng = np.random.default_rng(5)
    pyr = random_pyramid(rng)
    grads = pyr.zero_grads()
    uv = np.array([[4.0 / 16, 6.0 / 16]])  # midpoint of 4 texel centers
    pyr.accumulate_texel_grads(grads, uv, np.array([0]), np.ones((1, 8)))
    got = sorted(np.unique(np.round(grads[0][grads[0] != 0], 6)))
    assert got == [0.25]


def test_bake_from_encoder_properties():
    rng = np.random.default_rng(6)
    tex = make_tex(res=16)
    enc = mlp.Mlp.create((PARAM_DIM, 16, 8), rng)
    pyr = latent.bake_from_encoder(enc, tex)
    # constant parameters give a constant latent texture at every level
    for lvl in pyr.levels:
        assert np.allclose(lvl, lvl.reshape(-1, 8)[0], atol=1e-6)
    # determinism
    pyr2 = latent.bake_from_encoder(enc, tex)
    for a, b in zip(pyr.levels, pyr2.levels):
        assert np.array_equal(a, b)
    # spot-check texels against direct encoder calls
    uv = np.array([[(2 + 0.5) / 16, (9 + 0.5) / 16]])
    k = tex.fetch_vector(uv, 0.0)
    assert np.allclose(pyr.levels[0][9, 2], enc.forward(k.astype(np.float32))[0],
                       atol=1e-7)


def test_pyramid_file_roundtrip():
    rng = np.random.default_rng(7)
    pyr = random_pyramid(rng)
    buf = io.BytesIO()
    latent.write_pyramid(buf, pyr)
    data = buf.getvalue()
    pyr2 = latent.read_pyramid(io.BytesIO(data))
    buf2 = io.BytesIO()
    latent.write_pyramid(buf2, pyr2)
    assert data == buf2.getvalue()
    # contents equal the fp16 render copy
    for a, b in zip(pyr.half_copy(), pyr2.levels):
        assert np.array_equal(a.astype(np.float32), b)


def test_magnitude_histogram():
    rng = np.random.default_rng(8)
    pyr = random_pyramid(rng)
    hist, edges = pyr.magnitude_histogram()
    assert hist.sum() > 0
