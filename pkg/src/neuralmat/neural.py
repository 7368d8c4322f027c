"""The neural material: latent codes decoded to BRDF values and sampler
parameters.

The BRDF decoder is preceded by a trainable frame-extraction layer: a single
linear layer maps the 8-channel latent code to N=2 raw (normal, tangent)
pairs, each turned into an orthonormal basis (bitangent = n x t / |n x t|,
tangent re-orthogonalized as b x n). Incident and outgoing directions are
expressed in every frame and concatenated with the latent code as decoder
input. The decoder's first three outputs pass through
f = max(exp(y) - 1, 0), the inverse of the log(1+x) training space; an
optional second RGB triplet (clamped at zero) predicts directional albedo.

The sampler decoder consumes (latent, wi) and emits 9 raw values mapped to
the proxy parameter ranges with quadratic tanh/sinh surrogates and a softmax
over the two mixture weights. An ablated variant emits only a mixture
weight and one isotropic roughness.
"""

import io
import json
import struct

import numpy as np

from . import geom, mlp
from .latent import LATENT_CHANNELS, LatentPyramid, read_pyramid, write_pyramid
from .proxy import ProxyParams
from .texture import PARAM_DIM

N_FRAMES = 2
_ARCHIVE_MAGIC = b"NMATARC1"


# --- output activations -----------------------------------------------------


def brdf_output(y):
    """max(exp(y) - 1, 0): non-negative, inverse of log1p."""
    return np.maximum(np.expm1(np.minimum(y, 60.0)), 0.0)


def brdf_output_grad(y):
    return np.where(y > 0.0, np.exp(np.minimum(y, 60.0)), 0.0)


def quad_tanh(x):
    """Quadratic-rational tanh surrogate, odd, monotone, range (-1, 1)."""
    ax = np.abs(x)
    return np.clip(x * (1.0 + 0.5 * ax) / (1.0 + ax + 0.5 * x * x), -1.0, 1.0)


def quad_tanh_grad(x):
    ax = np.abs(x)
    den = 1.0 + ax + 0.5 * x * x
    return (1.0 + ax) / (den * den)


def quad_sinh(x):
    """Cubic sinh surrogate, odd and unbounded."""
    return x * (1.0 + x * x / 6.0)


def quad_sinh_grad(x):
    return 1.0 + 0.5 * x * x


def softmax_pair(a, b):
    m = np.maximum(a, b)
    ea = np.exp(a - m)
    eb = np.exp(b - m)
    return ea / (ea + eb), eb / (ea + eb)


# --- configuration ----------------------------------------------------------


def parse_arch(s):
    n, w = s.lower().split("x")
    return (int(w),) * int(n)


class NeuralMaterialConfig:
    def __init__(self, brdf_hidden="2x32", sampler_hidden="3x32",
                 encoder_hidden="3x32", n_frames=N_FRAMES, albedo_head=False,
                 use_frames=True, vanilla_extra_width=12, sampler_isotropic=False,
                 param_dim=PARAM_DIM, channels=LATENT_CHANNELS):
        self.brdf_hidden = brdf_hidden
        self.sampler_hidden = sampler_hidden
        self.encoder_hidden = encoder_hidden
        self.n_frames = n_frames
        self.albedo_head = albedo_head
        self.use_frames = use_frames
        self.vanilla_extra_width = vanilla_extra_width
        self.sampler_isotropic = sampler_isotropic
        self.param_dim = param_dim
        self.channels = channels

    def to_json(self):
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, d):
        return cls(**d)


class NeuralMaterial:
    def __init__(self, cfg, encoder, frame_layer, brdf_decoder, sampler_decoder,
                 latent=None):
        self.cfg = cfg
        self.encoder = encoder
        self.frame_layer = frame_layer
        self.brdf_decoder = brdf_decoder
        self.sampler_decoder = sampler_decoder
        self.latent = latent
        self._half = None

    @classmethod
    def create(cls, cfg, rng):
        c = cfg.channels
        brdf_out = 6 if cfg.albedo_head else 3
        if cfg.use_frames:
            frame_layer = mlp.Mlp.create((c, 6 * cfg.n_frames), rng,
                                         out_act=mlp.ACT_LINEAR, weight_scale=0.1)
            # bias towards valid, canonical frames at initialization
            bias = np.tile([0.0, 0.0, 1.0, 1.0, 0.0, 0.0], cfg.n_frames)
            frame_layer.layers[0].b[:] = bias
            brdf_in = c + 6 * cfg.n_frames
            brdf_sizes = (brdf_in, *parse_arch(cfg.brdf_hidden), brdf_out)
        else:
            frame_layer = None
            brdf_in = c + 6
            brdf_sizes = (brdf_in, cfg.vanilla_extra_width,
                          *parse_arch(cfg.brdf_hidden), brdf_out)
        brdf_decoder = mlp.Mlp.create(brdf_sizes, rng)
        sampler_out = 2 if cfg.sampler_isotropic else 9
        sampler_decoder = mlp.Mlp.create(
            (c + 3, *parse_arch(cfg.sampler_hidden), sampler_out), rng
        )
        encoder = mlp.Mlp.create((cfg.param_dim, *parse_arch(cfg.encoder_hidden), c),
                                 rng)
        return cls(cfg, encoder, frame_layer, brdf_decoder, sampler_decoder)

    # --- caching of the FP16 inference copies -----------------------------
    def invalidate_half(self):
        self._half = None

    def half(self):
        if self._half is None:
            latent = None
            if self.latent is not None:
                # render copy: FP16 texels, fetched with FP32 arithmetic
                latent = LatentPyramid(
                    [l.astype(np.float32) for l in self.latent.half_copy()]
                )
            self._half = {
                "frame": mlp.quantize(self.frame_layer) if self.frame_layer else None,
                "brdf": mlp.quantize(self.brdf_decoder),
                "sampler": mlp.quantize(self.sampler_decoder),
                "latent": latent,
            }
        return self._half

    def clamp_warnings(self):
        h = self.half()
        total = h["brdf"].clamped + h["sampler"].clamped
        if h["frame"] is not None:
            total += h["frame"].clamped
        return total


# --- learned shading frames -------------------------------------------------


class FrameSet:
    """N orthonormal frames stacked as the combined direction transform."""

    __slots__ = ("t", "b", "n", "cache")

    def __init__(self, t, b, n, cache=None):
        self.t = t  # (B, N, 3)
        self.b = b
        self.n = n
        self.cache = cache

    def transform(self, w):
        """Rows (t_i.w, b_i.w, n_i.w) concatenated over frames: (B, 3N)."""
        w = w[:, None, :]
        out = np.stack(
            [
                np.sum(self.t * w, axis=-1),
                np.sum(self.b * w, axis=-1),
                np.sum(self.n * w, axis=-1),
            ],
            axis=-1,
        )
        return out.reshape(w.shape[0], -1)

    def transform_adjoint_dirs(self, g):
        """Gradient of transform() wrt the direction (frames constant)."""
        g = g.reshape(g.shape[0], -1, 3)
        return np.sum(
            g[..., 0:1] * self.t + g[..., 1:2] * self.b + g[..., 2:3] * self.n,
            axis=1,
        )


def frames_from_raw(raw, want_cache=False):
    """Turn a batch of 6N raw values into N orthonormal frames."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    b_sz = raw.shape[0]
    n_frames = raw.shape[1] // 6
    rawf = raw.reshape(b_sz, n_frames, 6)
    rn = rawf[..., 0:3]
    rt = rawf[..., 3:6]
    rn_len = np.maximum(np.linalg.norm(rn, axis=-1, keepdims=True), 1e-12)
    n = rn / rn_len
    c = np.cross(n, rt)
    c_len = np.linalg.norm(c, axis=-1, keepdims=True)
    degen = c_len[..., 0] < 1e-8
    if np.any(degen):
        # fallback: tangent from the axis least aligned with the normal
        rt = rt.copy()
        rt[degen] = geom.fallback_tangent(n[degen])
        c = np.cross(n, rt)
        c_len = np.linalg.norm(c, axis=-1, keepdims=True)
    c_len = np.maximum(c_len, 1e-12)
    b = c / c_len
    t = np.cross(b, n)
    cache = None
    if want_cache:
        cache = {"rn": rn, "rt": rt, "rn_len": rn_len, "c_len": c_len,
                 "degen": degen, "n": n, "b": b, "t": t}
    return FrameSet(t, b, n, cache)


def extract_frames(frame_layer, z, want_cache=False):
    """Run the frame layer and build its orthonormal frames."""
    raw = frame_layer.forward(np.asarray(z, dtype=np.float32))
    return frames_from_raw(raw, want_cache=want_cache)


def frames_backward(cache, gt, gb, gn):
    """Exact adjoint of the frame construction: gradients on the raw 6N
    frame-layer outputs from gradients on (t, b, n). The degenerate-branch
    fallback tangent is treated as a constant."""
    n, b, rt = cache["n"], cache["b"], cache["rt"]
    gb_tot = gb + np.cross(n, gt)
    gn_tot = gn + np.cross(gt, b)
    gc = (gb_tot - b * np.sum(b * gb_tot, axis=-1, keepdims=True)) / cache["c_len"]
    gn_tot = gn_tot + np.cross(rt, gc)
    grt = np.cross(gc, n)
    grt[cache["degen"]] = 0.0
    grn = (gn_tot - n * np.sum(n * gn_tot, axis=-1, keepdims=True)) / cache["rn_len"]
    b_sz = n.shape[0]
    return np.concatenate([grn, grt], axis=-1).reshape(b_sz, -1)


# --- decoding ---------------------------------------------------------------


def decoder_input(mat, z, wi, wo, frames=None):
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    if mat.cfg.use_frames:
        if frames is None:
            frames = extract_frames(mat.frame_layer, z)
        return np.concatenate([z, frames.transform(wi), frames.transform(wo)],
                              axis=-1), frames
    return np.concatenate([z, wi, wo], axis=-1), None


def eval_brdf(mat, z, wi, wo, fp16=False):
    """Decode BRDF values (and albedo when enabled) from latent codes.

    Directions below the horizon yield zero.
    """
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    if fp16 and mat.cfg.use_frames:
        h = mat.half()
        raw = h["frame"].fused_forward(np.atleast_2d(z).astype(np.float32))
        frames = frames_from_raw(raw)
        inp = np.concatenate(
            [np.atleast_2d(z), frames.transform(wi), frames.transform(wo)], axis=-1
        )
        y = h["brdf"].fused_forward(inp.astype(np.float32))
    else:
        inp, _ = decoder_input(mat, z, wi, wo)
        if fp16:
            y = mat.half()["brdf"].fused_forward(inp.astype(np.float32))
        else:
            y = mat.brdf_decoder.forward(inp.astype(np.float32))
    y = np.asarray(y, dtype=np.float64)
    up = ((wi[:, 2] > 0.0) & (wo[:, 2] > 0.0))[:, None]
    f = np.where(up, brdf_output(y[:, 0:3]), 0.0)
    if mat.cfg.albedo_head:
        albedo = np.where(up, np.maximum(y[:, 3:6], 0.0), 0.0)
        return f, albedo
    return f, None


def eval_material(mat, uv, level, wi, wo, u_rr, fp16=False):
    """Full evaluation through the latent texture (Russian-roulette level
    pick plus bilinear fetch), returning (f, albedo, chosen_level)."""
    pyramid = mat.half()["latent"] if fp16 else mat.latent
    z, chosen = pyramid.fetch(uv, level, u_rr)
    f, albedo = eval_brdf(mat, z, wi, wo, fp16=fp16)
    return f, albedo, chosen


# --- sampler head -----------------------------------------------------------

RAW_WD, RAW_MUDX, RAW_MUDY, RAW_WS, RAW_AX, RAW_AY, RAW_RHO, RAW_MUSX, RAW_MUSY = range(9)


def proxy_from_raw(raw, isotropic=False):
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if isotropic:
        wd = 0.5 * (quad_tanh(raw[:, 0]) + 1.0)
        alpha = 0.5 * (quad_tanh(raw[:, 1]) + 1.0)
        zeros = np.zeros_like(wd)
        return ProxyParams(wd, 1.0 - wd, np.stack([zeros, zeros], axis=-1),
                           np.stack([alpha, alpha], axis=-1), zeros,
                           np.stack([zeros, zeros], axis=-1))
    wd, ws = softmax_pair(raw[:, RAW_WD], raw[:, RAW_WS])
    mu_d = quad_sinh(raw[:, (RAW_MUDX, RAW_MUDY)])
    alpha = 0.5 * (quad_tanh(raw[:, (RAW_AX, RAW_AY)]) + 1.0)
    rho = quad_tanh(raw[:, RAW_RHO])
    mu_s = quad_sinh(raw[:, (RAW_MUSX, RAW_MUSY)])
    return ProxyParams(wd, ws, mu_d, alpha, rho, mu_s)


def proxy_raw_jacobian(raw, isotropic=False):
    """Per-sample derivative of each proxy parameter wrt its raw outputs,
    packaged for the trainer: dict of (gradient target -> columns)."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if isotropic:
        return {
            "wd": 0.5 * quad_tanh_grad(raw[:, 0]),
            "alpha": 0.5 * quad_tanh_grad(raw[:, 1]),
        }
    wd, ws = softmax_pair(raw[:, RAW_WD], raw[:, RAW_WS])
    return {
        "softmax_wdws": wd * ws,
        "mu_d": quad_sinh_grad(raw[:, (RAW_MUDX, RAW_MUDY)]),
        "alpha": 0.5 * quad_tanh_grad(raw[:, (RAW_AX, RAW_AY)]),
        "rho": quad_tanh_grad(raw[:, RAW_RHO]),
        "mu_s": quad_sinh_grad(raw[:, (RAW_MUSX, RAW_MUSY)]),
    }


def infer_proxy(mat, z, wi, fp16=False):
    """Sampler parameters for latent codes and incident directions."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    inp = np.concatenate([z, wi], axis=-1).astype(np.float32)
    if fp16:
        raw = mat.half()["sampler"].fused_forward(inp)
    else:
        raw = mat.sampler_decoder.forward(inp)
    return proxy_from_raw(raw, isotropic=mat.cfg.sampler_isotropic)


# --- archive ----------------------------------------------------------------


def save_archive(path, mat, include_encoder=False):
    """Single-file bundle: JSON metadata header plus the weight blobs; the
    latent pyramid is written next to it and referenced by file name."""
    import os

    latent_name = None
    if mat.latent is not None:
        latent_name = os.path.basename(os.path.splitext(path)[0]) + ".latents"
        with open(os.path.join(os.path.dirname(path), latent_name), "wb") as f:
            write_pyramid(f, mat.latent)
    header = {
        "config": mat.cfg.to_json(),
        "latent_file": latent_name,
        "has_encoder": bool(include_encoder and mat.encoder is not None),
        "clamped_warnings": mat.clamp_warnings(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_ARCHIVE_MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        if mat.cfg.use_frames:
            mlp.write_blob(f, mat.frame_layer)
        mlp.write_blob(f, mat.brdf_decoder)
        mlp.write_blob(f, mat.sampler_decoder)
        if header["has_encoder"]:
            mlp.write_blob(f, mat.encoder)


def load_archive(path):
    import os

    with open(path, "rb") as f:
        if f.read(8) != _ARCHIVE_MAGIC:
            raise ValueError("not a neural material archive")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        cfg = NeuralMaterialConfig.from_json(header["config"])
        frame_layer = None
        if cfg.use_frames:
            frame_layer, _ = mlp.read_blob(f)
        brdf, _ = mlp.read_blob(f)
        sampler, _ = mlp.read_blob(f)
        encoder = None
        if header.get("has_encoder"):
            encoder, _ = mlp.read_blob(f)
    latent = None
    if header.get("latent_file"):
        lp = os.path.join(os.path.dirname(path), header["latent_file"])
        with open(lp, "rb") as f:
            latent = read_pyramid(f)
    return NeuralMaterial(cfg, encoder, frame_layer, brdf, sampler, latent)
