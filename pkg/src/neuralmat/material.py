"""Analytic layered reference material.

A MaterialGraph is an ordered stack of lobes: a base lobe plus layers that
are either linearly mixed in or coated on top. Lobes are Lambertian diffuse
or isotropic Trowbridge-Reitz (GGX) microfacet reflection with Smith
height-correlated masking and Schlick Fresnel, optionally driven by a slope
(normal) map and a tangent rotation. Evaluation is reciprocal per lobe and
non-negative; directions below the geometric horizon yield zero.

Evaluation works on batches: direction arrays are (..., 3) and parameter
dicts hold arrays fetched from ParamTextures at the finest level.
"""

import json

import numpy as np

from . import geom
from .texture import ParamTextures, constant_map
from . import texture as _texture
from . import pfm

MIN_COS = 1e-9
MIN_ALPHA = 1e-3


def ggx_d(m, alpha):
    """Trowbridge-Reitz NDF for unit half vectors m, isotropic roughness."""
    z = m[..., 2]
    a2 = alpha * alpha
    k = z * z * (a2 - 1.0) + 1.0
    return np.where(z > 0.0, a2 / (np.pi * k * k), 0.0)


def smith_lambda(w, alpha):
    z = np.clip(np.abs(w[..., 2]), MIN_COS, 1.0)
    tan2 = (1.0 - z * z) / (z * z)
    return 0.5 * (np.sqrt(1.0 + alpha * alpha * tan2) - 1.0)


def smith_g_height_correlated(wi, wo, alpha):
    return 1.0 / (1.0 + smith_lambda(wi, alpha) + smith_lambda(wo, alpha))


def schlick_fresnel(f0, cos_t):
    cos_t = np.clip(cos_t, 0.0, 1.0)
    m = (1.0 - cos_t) ** 5
    return f0 + (1.0 - f0) * m


def sample_ggx_half(u, alpha):
    """Plain NDF sampling (density D(m) cos(m)) of the isotropic GGX."""
    u = np.asarray(u, dtype=np.float64)
    tan2 = alpha * alpha * u[..., 0] / np.maximum(1.0 - u[..., 0], 1e-12)
    cos_t = 1.0 / np.sqrt(1.0 + tan2)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * np.pi * u[..., 1]
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def ggx_half_pdf(m, wo, alpha):
    """Density of directions reflected off NDF-sampled half vectors."""
    cos_mo = np.abs(geom.dot(wo, m))
    return ggx_d(m, alpha) * np.abs(m[..., 2]) / np.maximum(4.0 * cos_mo, 1e-12)


class LambertLobe:
    kind = "lambert"

    def __init__(self, albedo_channel="albedo", tint=(1.0, 1.0, 1.0)):
        self.albedo_channel = albedo_channel
        self.tint = np.asarray(tint, dtype=np.float64)

    def shading_frame(self, params):
        return None

    def eval(self, params, wi, wo):
        up = (wi[..., 2] > 0.0) & (wo[..., 2] > 0.0)
        alb = params[self.albedo_channel] * self.tint
        return np.where(up[..., None], alb / np.pi, 0.0)

    def to_json(self):
        return {"kind": self.kind, "albedo_channel": self.albedo_channel,
                "tint": self.tint.tolist()}


class GgxLobe:
    """Isotropic GGX reflection, optionally normal-mapped via slope channels.

    f0 is (r, g, b), scaled by the specularity channel when bound;
    `fresnel_one` forces F = 1 (useful for white-furnace style checks).
    """

    kind = "ggx"

    def __init__(self, roughness_channel="roughness", f0=(1.0, 1.0, 1.0),
                 specularity_channel=None, slope_channel=None,
                 rotation_channel=None, fresnel_one=False):
        self.roughness_channel = roughness_channel
        self.f0 = np.asarray(f0, dtype=np.float64)
        self.specularity_channel = specularity_channel
        self.slope_channel = slope_channel
        self.rotation_channel = rotation_channel
        self.fresnel_one = fresnel_one

    def shading_frame(self, params):
        """Perturbed orthonormal frame from slopes + tangent rotation, or
        None when the lobe follows the geometric frame."""
        if self.slope_channel is None and self.rotation_channel is None:
            return None
        if self.slope_channel is not None:
            s = params[self.slope_channel]
            n = geom.normalize(
                np.stack([-s[..., 0], -s[..., 1], np.ones_like(s[..., 0])], axis=-1)
            )
        else:
            ref = params[self.roughness_channel]
            n = np.zeros(ref.shape + (3,))
            n[..., 2] = 1.0
        if self.rotation_channel is not None:
            rot = params[self.rotation_channel]
            t = np.stack([np.cos(rot), np.sin(rot), np.zeros_like(rot)], axis=-1)
        else:
            t = np.zeros_like(n)
            t[..., 0] = 1.0
        return geom.orthonormal_frame(n, t)

    def _fresnel(self, params, cos_t):
        if self.fresnel_one:
            return np.ones(cos_t.shape + (3,))
        f0 = self.f0
        if self.specularity_channel is not None:
            f0 = f0 * params[self.specularity_channel][..., None]
        return schlick_fresnel(f0, cos_t[..., None])

    def eval(self, params, wi, wo):
        frame = self.shading_frame(params)
        li, lo = (wi, wo) if frame is None else (frame.to_local(wi), frame.to_local(wo))
        up = (wi[..., 2] > 0.0) & (wo[..., 2] > 0.0)
        zi = li[..., 2]
        zo = lo[..., 2]
        valid = up & (zi > MIN_COS) & (zo > MIN_COS)
        h = li + lo
        hn = np.linalg.norm(h, axis=-1, keepdims=True)
        h = h / np.maximum(hn, 1e-12)
        alpha = np.maximum(params[self.roughness_channel], MIN_ALPHA)
        d = ggx_d(h, alpha)
        g = smith_g_height_correlated(li, lo, alpha)
        f = self._fresnel(params, geom.dot(li, h))
        denom = np.maximum(4.0 * zi * zo, 1e-12)
        val = f * (d * g / denom)[..., None]
        return np.where(valid[..., None], val, 0.0)

    # --- sampling interface used by the renderer -------------------------
    def sample(self, params, wi, u):
        frame = self.shading_frame(params)
        li = wi if frame is None else frame.to_local(wi)
        alpha = np.maximum(params[self.roughness_channel], MIN_ALPHA)
        m = sample_ggx_half(u, alpha)
        lo = geom.reflect(li, m)
        return lo if frame is None else frame.to_world(lo)

    def pdf(self, params, wi, wo):
        frame = self.shading_frame(params)
        li, lo = (wi, wo) if frame is None else (frame.to_local(wi), frame.to_local(wo))
        h = li + lo
        hn = np.linalg.norm(h, axis=-1, keepdims=True)
        ok = hn[..., 0] > 1e-9
        h = h / np.maximum(hn, 1e-12)
        # the reflection warp covers the full sphere from the upper
        # half-vector hemisphere; flip antipodal recomputed half vectors
        h = np.where(h[..., 2:3] < 0.0, -h, h)
        alpha = np.maximum(params[self.roughness_channel], MIN_ALPHA)
        return np.where(ok, ggx_half_pdf(h, lo, alpha), 0.0)

    def to_json(self):
        return {
            "kind": self.kind,
            "roughness_channel": self.roughness_channel,
            "f0": self.f0.tolist(),
            "specularity_channel": self.specularity_channel,
            "slope_channel": self.slope_channel,
            "rotation_channel": self.rotation_channel,
            "fresnel_one": self.fresnel_one,
        }


def lobe_from_json(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "lambert":
        return LambertLobe(**d)
    if kind == "ggx":
        return GgxLobe(**d)
    raise ValueError(f"unknown lobe kind {kind!r}")


class Layer:
    """A lobe plus the rule combining it with the stack below it.

    op "base": first layer. op "mix": f = (1-w) * below + w * lobe with w
    from a channel or constant. op "coat": f = lobe + (1-F(cos_i)) *
    (1-F(cos_o)) * below, with F the coating lobe's own Fresnel.
    """

    def __init__(self, lobe, op="base", weight=None):
        if op not in ("base", "mix", "coat"):
            raise ValueError(f"unknown combine op {op!r}")
        self.lobe = lobe
        self.op = op
        self.weight = weight  # channel name (str) or constant for "mix"

    def mix_weight(self, params):
        if isinstance(self.weight, str):
            return params[self.weight]
        return np.asarray(self.weight, dtype=np.float64)

    def to_json(self):
        return {"lobe": self.lobe.to_json(), "op": self.op, "weight": self.weight}


class MaterialGraph:
    def __init__(self, layers):
        if not 1 <= len(layers) <= 5:
            raise ValueError("a material graph holds between 1 and 5 lobes")
        if layers[0].op != "base":
            raise ValueError("first layer must use the 'base' op")
        self.layers = layers

    def eval_params(self, params, wi, wo):
        """BRDF value (per-steradian RGB) from already-fetched parameters."""
        wi = np.asarray(wi, dtype=np.float64)
        wo = np.asarray(wo, dtype=np.float64)
        f = self.layers[0].lobe.eval(params, wi, wo)
        for layer in self.layers[1:]:
            g = layer.lobe.eval(params, wi, wo)
            if layer.op == "mix":
                w = layer.mix_weight(params)[..., None]
                f = (1.0 - w) * f + w * g
            else:  # coat
                ai = 1.0 - layer.lobe._fresnel(params, np.abs(wi[..., 2]))
                ao = 1.0 - layer.lobe._fresnel(params, np.abs(wo[..., 2]))
                f = g + ai * ao * f
        return f

    def to_json(self):
        return {"layers": [l.to_json() for l in self.layers]}

    @classmethod
    def from_json(cls, d):
        return cls([Layer(lobe_from_json(l["lobe"]), l["op"], l.get("weight"))
                    for l in d["layers"]])

    # --- renderer-facing lobe selection ----------------------------------
    def lobe_coefficients(self, params):
        """Non-negative per-lobe selection coefficients matching the linear
        structure of the stack (coat attenuation approximated as 1); used to
        pick sampling lobes. Shape: list aligned with layers."""
        coeffs = [np.ones(np.shape(params["roughness"]))]
        for layer in self.layers[1:]:
            if layer.op == "mix":
                w = layer.mix_weight(params) * np.ones_like(coeffs[0])
                coeffs = [c * (1.0 - w) for c in coeffs]
                coeffs.append(w)
            else:
                coeffs.append(np.ones_like(coeffs[0]))
        return coeffs

    def sample_params(self, params, wi, u3):
        """Draw an outgoing direction from the lobe mixture; returns
        (wo, pdf). The mixture pdf exactly matches this sampling process."""
        wi = np.asarray(wi, dtype=np.float64)
        coeffs = self.lobe_coefficients(params)
        total = np.sum(coeffs, axis=0)
        sel = np.stack(coeffs, axis=0) / np.maximum(total, 1e-12)
        cdf = np.cumsum(sel, axis=0)
        pick = np.sum(u3[..., 0][None, ...] >= cdf, axis=0)
        pick = np.minimum(pick, len(coeffs) - 1)
        wo = np.zeros_like(wi)
        u2 = u3[..., 1:3]
        for i, layer in enumerate(self.layers):
            m = pick == i
            if not np.any(m):
                continue
            sub = {k: v[m] for k, v in params.items()}
            if isinstance(layer.lobe, LambertLobe):
                wo[m] = geom.sample_cosine_hemisphere(u2[m])
            else:
                wo[m] = layer.lobe.sample(sub, wi[m], u2[m])
        return wo, self.pdf_params(params, wi, wo)

    def pdf_params(self, params, wi, wo):
        coeffs = self.lobe_coefficients(params)
        total = np.maximum(np.sum(coeffs, axis=0), 1e-12)
        p = np.zeros(np.shape(wi)[:-1])
        for c, layer in zip(coeffs, self.layers):
            if isinstance(layer.lobe, LambertLobe):
                lp = geom.cosine_hemisphere_pdf(wo)
            else:
                lp = layer.lobe.pdf(params, wi, wo)
            p = p + (c / total) * lp
        return p


def eval_reference(graph, tex, uv, wi, wo):
    """Ground-truth BRDF at the finest texture level."""
    params = tex.fetch(uv, 0.0)
    return graph.eval_params(params, wi, wo)


def eval_mollified(graph, tex, uv, wi, wo, cone_angle, n_samples, rng):
    """Average eval_reference over directions drawn uniformly in a cone of
    half-angle `cone_angle` around wo; cone_angle 0 reproduces it exactly."""
    if cone_angle <= 0.0:
        return eval_reference(graph, tex, uv, wi, wo)
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    wi = np.broadcast_to(np.atleast_2d(wi), wo.shape)
    uv = np.broadcast_to(np.atleast_2d(uv), wo.shape[:-1] + (2,))
    frame = geom.frame_from_normal(wo)
    acc = np.zeros(wo.shape[:-1] + (3,))
    cos_max = np.cos(cone_angle)
    for _ in range(n_samples):
        d = geom.sample_uniform_cone(rng.random(wo.shape[:-1] + (2,)), cos_max)
        acc += eval_reference(graph, tex, uv, wi, frame.to_world(d))
    return acc / n_samples


def estimate_albedo(graph, tex, uv, wo, rng, n_samples=1):
    """Unbiased MC estimate of the cosine-weighted hemispherical integral of
    the BRDF for fixed wo, using cosine-weighted incident samples."""
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    uv = np.broadcast_to(np.atleast_2d(uv), wo.shape[:-1] + (2,))
    acc = np.zeros(wo.shape[:-1] + (3,))
    for _ in range(n_samples):
        wi = geom.sample_cosine_hemisphere(rng.random(wo.shape[:-1] + (2,)))
        acc += eval_reference(graph, tex, uv, wi, wo) * np.pi
    return acc / n_samples


# ---------------------------------------------------------------------------
# Description files: JSON graph + PFM textures.


def save_material(path, graph, tex):
    """Write <path>.json plus one PFM per channel next to it."""
    import os

    base, _ = os.path.splitext(path)
    doc = {"graph": graph.to_json(), "textures": {}}
    for name, width in _texture.CHANNELS:
        fname = f"{os.path.basename(base)}_{name}.pfm"
        arr = tex.channels[name]
        if width == 2:  # store 2-channel slopes in an RGB map, blue unused
            arr = np.concatenate([arr, np.zeros(arr.shape[:2] + (1,))], axis=-1)
        pfm.write_pfm(os.path.join(os.path.dirname(path), fname), arr)
        doc["textures"][name] = fname
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def load_material(path):
    import os

    with open(path) as f:
        doc = json.load(f)
    graph = MaterialGraph.from_json(doc["graph"])
    channels = {}
    for name, width in _texture.CHANNELS:
        img = pfm.read_pfm(os.path.join(os.path.dirname(path), doc["textures"][name]))
        if width == 2:
            img = np.asarray(img)[:, :, :2]
        channels[name] = img
    return graph, ParamTextures(channels)


# ---------------------------------------------------------------------------
# Built-in materials (no external assets required).


def builtin_lambertian(res=64, albedo=(0.5, 0.5, 0.5)):
    channels = {
        "albedo": constant_map(res, albedo),
        "roughness": constant_map(res, 0.5),
        "slope": np.zeros((res, res, 2)),
        "tangent_rotation": constant_map(res, 0.0),
        "mix": constant_map(res, 0.0),
        "specularity": constant_map(res, 0.0),
    }
    graph = MaterialGraph([Layer(LambertLobe(), "base")])
    return graph, ParamTextures(channels)


def builtin_normal_mapped(res=64, seed=3):
    """Specular-dominated toy with a strong multi-scale normal map: glossy
    lobes shift direction rapidly across the surface, which rewards an
    explicit rotation into learned shading frames."""
    slopes = _texture.groove_slopes(res, 7.0, 0.7, 0.3)
    slopes = slopes + _texture.noise_slopes(res, 8, 0.35, seed)
    channels = {
        "albedo": np.tile(np.asarray([0.4, 0.35, 0.3]), (res, res, 1)),
        "roughness": _texture.value_noise(res, 6, seed + 1, 0.12, 0.25),
        "slope": slopes,
        "tangent_rotation": constant_map(res, 0.0),
        "mix": _texture.value_noise(res, 4, seed + 2, 0.75, 0.95),
        "specularity": constant_map(res, 1.0),
    }
    metal = GgxLobe(f0=(0.95, 0.85, 0.6), slope_channel="slope")
    graph = MaterialGraph(
        [Layer(LambertLobe(), "base"), Layer(metal, "mix", "mix")]
    )
    return graph, ParamTextures(channels)


def builtin_two_layer(res=128, groove_angle=0.45, seed=7):
    """Two-layer normal-mapped stand-in target: a colorful diffuse base mixed
    with a grooved, brushed-metal style GGX layer."""
    tint = np.stack(
        [
            _texture.value_noise(res, 6, seed, 0.25, 0.85),
            _texture.value_noise(res, 6, seed + 10, 0.2, 0.8),
            _texture.value_noise(res, 6, seed + 20, 0.3, 0.9),
        ],
        axis=-1,
    )
    slopes = _texture.groove_slopes(res, 5.0, 0.45, groove_angle)
    slopes = slopes + _texture.noise_slopes(res, 16, 0.12, seed + 30)
    channels = {
        "albedo": tint,
        "roughness": _texture.value_noise(res, 8, seed + 40, 0.15, 0.4),
        "slope": slopes,
        "tangent_rotation": _texture.value_noise(res, 4, seed + 50, -0.3, 0.3),
        "mix": _texture.value_noise(res, 5, seed + 60, 0.25, 0.85),
        "specularity": _texture.value_noise(res, 8, seed + 70, 0.6, 1.0),
    }
    metal = GgxLobe(
        f0=(1.0, 0.78, 0.4),
        specularity_channel="specularity",
        slope_channel="slope",
        rotation_channel="tangent_rotation",
    )
    graph = MaterialGraph(
        [Layer(LambertLobe(), "base"), Layer(metal, "mix", "mix")]
    )
    return graph, ParamTextures(channels)
