import numpy as np

from neuralmat import texture


def make_tex(**overrides):
    res = overrides.pop("res", 64)
    channels = {
        "albedo": texture.constant_map(res, (0.5, 0.5, 0.5)),
        "roughness": texture.constant_map(res, 0.3),
        "slope": np.zeros((res, res, 2)),
        "tangent_rotation": texture.constant_map(res, 0.0),
        "mix": texture.constant_map(res, 0.5),
        "specularity": texture.constant_map(res, 1.0),
    }
    channels.update(overrides)
    return texture.ParamTextures(channels)


def brute_force_gaussian_moments(img, uv, sigma, radius_sigmas=4):
    """Independent oracle: direct Gaussian-weighted moment accumulation over
    finest-level texels (wrap addressing)."""
    h, w = img.shape[:2]
    cx = uv[0] * w - 0.5
    cy = uv[1] * h - 0.5
    r = int(np.ceil(radius_sigmas * max(sigma, 1.0)))
    xs = np.arange(int(np.floor(cx)) - r, int(np.floor(cx)) + r + 1)
    ys = np.arange(int(np.floor(cy)) - r, int(np.floor(cy)) + r + 1)
    xx, yy = np.meshgrid(xs, ys)
    wgt = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    wgt /= wgt.sum()
    vals = img[yy % h, xx % w]
    if vals.ndim == 3:
        mean = np.sum(vals * wgt[:, :, None], axis=(0, 1))
        mean2 = np.sum(vals**2 * wgt[:, :, None], axis=(0, 1))
    else:
        mean = np.sum(vals * wgt)
        mean2 = np.sum(vals**2 * wgt)
    return mean, mean2 - mean**2


def test_sigma_zero_is_identity():
    tex = make_tex(albedo=texture.ramp_map(64, 0.1, 0.9)[:, :, None].repeat(3, 2))
    uv = np.array([[0.5 / 64 + 10 / 64, 0.5 / 64 + 20 / 64]])
    got = tex.fetch(uv, 0.0)
    assert np.allclose(got["albedo"][0], tex.channels["albedo"][20, 10], atol=1e-12)


def test_lean_consistency_sigma0_vs_raw_bilinear():
    rng = np.random.default_rng(0)
    tex = make_tex(roughness=rng.uniform(0.1, 0.9, (64, 64)))
    uv = rng.random((100, 2))
    got = tex.fetch(uv, 0.0)["roughness"]
    want = texture.bilinear_wrap(tex.channels["roughness"], uv)
    assert np.allclose(got, want, atol=1e-12)


def test_checkerboard_lean_roughness():
    # +-s slopes on both axes: large footprints see zero mean slope and an
    # added 2*s^2 roughness term
    res = 64
    s = 0.4
    base_alpha = 0.2
    checker = texture.checker_map(res, 32, -s, s)
    slope = np.stack([checker, checker], axis=-1)
    tex = make_tex(res=res, slope=slope,
                   roughness=texture.constant_map(res, base_alpha))
    lvl = 4  # sigma 8 texels covers many checker cells
    got = tex.fetch(np.array([[0.5, 0.5]]), float(texture.level_sigma(lvl)))
    assert np.abs(got["slope"][0]).max() < 2e-2
    # oracle: brute-force Gaussian moments at the same footprint
    mean, var = brute_force_gaussian_moments(
        slope, (0.5, 0.5), float(texture.level_sigma(lvl))
    )
    expected_alpha2 = base_alpha**2 + var[0] + var[1]
    assert np.isclose(var[0], s**2, rtol=0.05)
    assert np.isclose(got["roughness"][0] ** 2, expected_alpha2, rtol=0.05)
    assert np.isclose(got["roughness"][0] ** 2, base_alpha**2 + 2 * s**2,
                      rtol=0.05)


def test_ramp_mean_matches_brute_force():
    res = 64
    ramp = texture.ramp_map(res, 0.0, 1.0)
    tex = make_tex(res=res, mix=ramp)
    sigma = 2.0  # matches level 2, a 4x4-texel box
    uv = np.array([[0.4, 0.35]])
    got = tex.fetch(uv, sigma)["mix"][0]
    mean, _ = brute_force_gaussian_moments(ramp, uv[0], sigma)
    assert np.isclose(got, mean, atol=1e-3)


def test_level_sigma_mapping():
    assert texture.level_sigma(0) == 0.0
    assert texture.level_sigma(1) == 1.0
    assert texture.level_sigma(3) == 4.0
    assert texture.sigma_to_level(0.0, 7) == 0
    assert texture.sigma_to_level(1.0, 7) == 1
    assert texture.sigma_to_level(100.0, 7) == 6


def test_param_vector_roundtrip():
    tex = make_tex()
    uv = np.random.default_rng(1).random((10, 2))
    vec = tex.fetch_vector(uv, 0.0)
    assert vec.shape == (10, texture.PARAM_DIM)
    params = texture.vector_to_params(vec)
    assert np.allclose(params["albedo"], tex.fetch(uv, 0.0)["albedo"])


def test_finest_level_equals_source():
    rng = np.random.default_rng(2)
    tex = make_tex(roughness=rng.uniform(0.2, 0.8, (64, 64)))
    assert np.array_equal(tex.pyramid[0]["roughness"], tex.channels["roughness"])


def test_wraps_uv():
    tex = make_tex(mix=texture.ramp_map(64, 0.0, 1.0))
    a = tex.fetch(np.array([[0.25, 1.25]]), 0.0)["mix"]
    b = tex.fetch(np.array([[0.25, 0.25]]), 0.0)["mix"]
    assert np.allclose(a, b, atol=1e-12)
