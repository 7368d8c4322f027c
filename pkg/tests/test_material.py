import numpy as np
import pytest
from scipy.special import roots_legendre

from neuralmat import geom, material, texture
from tests.test_texture import make_tex


def lambert_setup(albedo=(0.5, 0.5, 0.5)):
    return material.builtin_lambertian(32, albedo)


def ggx_setup(alpha, fresnel_one=True, res=32):
    tex = make_tex(res=res, roughness=texture.constant_map(res, alpha))
    lobe = material.GgxLobe(fresnel_one=fresnel_one)
    graph = material.MaterialGraph([material.Layer(lobe, "base")])
    return graph, tex


def quadrature_albedo(graph, tex, wo, n_theta=256, n_phi=512):
    """Independent oracle: Gauss-Legendre quadrature of the cosine-weighted
    BRDF integral over the upper hemisphere."""
    xz, wz = roots_legendre(n_theta)
    z = 0.5 * (xz + 1.0)  # cos(theta) in (0, 1)
    wz = 0.5 * wz
    phi = (np.arange(n_phi) + 0.5) / n_phi * 2 * np.pi
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    r = np.sqrt(1 - zz**2)
    wi = np.stack([r * np.cos(pp), r * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    uv = np.full((wi.shape[0], 2), 0.5)
    f = material.eval_reference(graph, tex, uv, wi,
                                np.broadcast_to(wo, wi.shape))
    w = (wz[:, None] * np.full((1, n_phi), 2 * np.pi / n_phi)).reshape(-1)
    return np.sum(f * (w * zz.reshape(-1))[:, None] , axis=0)


def test_lambertian_value():
    graph, tex = lambert_setup()
    wi = geom.normalize(np.array([[0.3, 0.1, 0.9]]))
    wo = geom.normalize(np.array([[-0.2, 0.4, 0.8]]))
    f = material.eval_reference(graph, tex, np.array([[0.5, 0.5]]), wi, wo)
    assert np.allclose(f, 0.5 / np.pi, atol=1e-9)


def test_ggx_alpha1_golden_value():
    # alpha=1 makes D = 1/pi and height-correlated Smith G = 1 at normal
    # incidence, so f = 1 / (4 pi)
    graph, tex = ggx_setup(1.0)
    w = np.array([[0.0, 0.0, 1.0]])
    f = material.eval_reference(graph, tex, np.array([[0.5, 0.5]]), w, w)
    assert np.allclose(f, 1.0 / (4.0 * np.pi), rtol=1e-6)


def test_mix_weight_zero_is_first_lobe():
    res = 32
    tex = make_tex(res=res, mix=texture.constant_map(res, 0.0))
    lam = material.Layer(material.LambertLobe(), "base")
    spec = material.Layer(material.GgxLobe(), "mix", "mix")
    two = material.MaterialGraph([lam, spec])
    one = material.MaterialGraph([material.Layer(material.LambertLobe(), "base")])
    rng = np.random.default_rng(0)
    wi, wo = geom.sample_half_diff(rng, 200)
    uv = rng.random((200, 2))
    assert np.allclose(
        two.eval_params(tex.fetch(uv, 0.0), wi, wo),
        one.eval_params(tex.fetch(uv, 0.0), wi, wo),
        atol=1e-7,
    )


def test_mollified_zero_cone_identical():
    graph, tex = ggx_setup(0.2)
    rng = np.random.default_rng(1)
    wi, wo = geom.sample_half_diff(rng, 100)
    uv = rng.random((100, 2))
    a = material.eval_mollified(graph, tex, uv, wi, wo, 0.0, 8, rng)
    b = material.eval_reference(graph, tex, uv, wi, wo)
    assert np.array_equal(a, b)


def test_mollified_lambertian_constant():
    graph, tex = lambert_setup()
    rng = np.random.default_rng(2)
    wo = geom.normalize(np.array([[0.1, 0.2, 0.95]]))
    wi = geom.normalize(np.array([[0.3, -0.1, 0.9]]))
    uv = np.array([[0.5, 0.5]])
    a = material.eval_mollified(graph, tex, uv, wi, wo, np.deg2rad(5), 64, rng)
    b = material.eval_reference(graph, tex, uv, wi, wo)
    # cone stays inside the hemisphere here, so the constant BRDF is exact
    assert np.allclose(a, b, rtol=1e-6)


def test_mollified_flattens_sharp_peak():
    graph, tex = ggx_setup(0.05)
    rng = np.random.default_rng(3)
    w = np.array([[0.0, 0.0, 1.0]])
    uv = np.array([[0.5, 0.5]])
    peak = material.eval_reference(graph, tex, uv, w, w)
    mol = material.eval_mollified(graph, tex, uv, w, w, np.deg2rad(5), 4096, rng)
    assert np.all(mol < peak)


def test_albedo_lambertian():
    graph, tex = lambert_setup((0.6, 0.3, 0.2))
    rng = np.random.default_rng(4)
    wo = geom.normalize(np.array([[0.2, 0.1, 0.9]]))
    n = 100_000
    est = material.estimate_albedo(graph, tex, np.array([[0.5, 0.5]]),
                                   np.repeat(wo, n, axis=0), rng, 1)
    # Lambertian cosine-sampled estimator has zero variance
    assert np.allclose(est.mean(axis=0), [0.6, 0.3, 0.2], atol=1e-9)


def test_albedo_black_material():
    graph, tex = lambert_setup((0.0, 0.0, 0.0))
    rng = np.random.default_rng(5)
    est = material.estimate_albedo(graph, tex, np.array([[0.5, 0.5]]),
                                   np.array([[0.0, 0.0, 1.0]]), rng, 16)
    assert np.all(est == 0.0)


def test_albedo_ggx_matches_quadrature():
    graph, tex = ggx_setup(0.5)
    wo = np.array([0.0, 0.0, 1.0])
    oracle = quadrature_albedo(graph, tex, wo)
    rng = np.random.default_rng(6)
    n = 400_000
    est = material.estimate_albedo(graph, tex, np.array([[0.5, 0.5]]),
                                   np.broadcast_to(wo, (n, 3)), rng, 1)
    mc = est.mean(axis=0)
    assert np.all(np.abs(mc - oracle) / oracle < 0.01), (mc, oracle)


def test_non_negative_sweep():
    graph, tex = material.builtin_two_layer(64)
    rng = np.random.default_rng(7)
    wi, wo = geom.sample_half_diff(rng, 100_000)
    uv = rng.random((100_000, 2))
    f = material.eval_reference(graph, tex, uv, wi, wo)
    assert np.all(f >= 0.0)
    assert np.all(np.isfinite(f))


def test_reciprocity():
    graph, tex = material.builtin_two_layer(64)
    rng = np.random.default_rng(8)
    wi, wo = geom.sample_half_diff(rng, 10_000)
    uv = rng.random((10_000, 2))
    a = material.eval_reference(graph, tex, uv, wi, wo)
    b = material.eval_reference(graph, tex, uv, wo, wi)
    assert np.all(np.abs(a - b) <= 1e-5 * (1.0 + a))


def test_energy_bound_ggx_lobe():
    # white-Fresnel GGX: cosine-weighted integral stays below 1
    graph, tex = ggx_setup(0.3)
    rng = np.random.default_rng(9)
    for cos_o in (1.0, 0.7, 0.3):
        wo = geom.normalize(np.array([np.sqrt(1 - cos_o**2), 0.0, cos_o]))
        n = 200_000
        est = material.estimate_albedo(graph, tex, np.array([[0.5, 0.5]]),
                                       np.broadcast_to(wo, (n, 3)), rng, 1)
        mean = geom.luminance(est).mean()
        sigma = geom.luminance(est).std() / np.sqrt(n)
        assert mean <= 1.0 + 3 * sigma


def test_below_horizon_zero():
    graph, tex = material.builtin_two_layer(64)
    wi = np.array([[0.0, 0.0, -1.0]])
    wo = np.array([[0.0, 0.0, 1.0]])
    f = material.eval_reference(graph, tex, np.array([[0.5, 0.5]]), wi, wo)
    assert np.all(f == 0.0)


def test_material_json_roundtrip(tmp_path):
    graph, tex = material.builtin_two_layer(32)
    p = tmp_path / "mat.json"
    material.save_material(str(p), graph, tex)
    graph2, tex2 = material.load_material(str(p))
    rng = np.random.default_rng(10)
    wi, wo = geom.sample_half_diff(rng, 500)
    uv = rng.random((500, 2))
    a = material.eval_reference(graph, tex, uv, wi, wo)
    b = material.eval_reference(graph2, tex2, uv, wi, wo)
    assert np.allclose(a, b, atol=1e-5)
    # write -> read -> write is byte-identical
    other = tmp_path / "again"
    other.mkdir()
    material.save_material(str(other / "mat.json"), graph2, tex2)
    assert (tmp_path / "mat.json").read_bytes() == (other / "mat.json").read_bytes()
    for ch in ["albedo", "roughness", "slope"]:
        a_bytes = (tmp_path / f"mat_{ch}.pfm").read_bytes()
        b_bytes = (other / f"mat_{ch}.pfm").read_bytes()
        assert a_bytes == b_bytes
