"""Data generation, losses, and the two-phase optimization loop.

Phase 1 trains encoder and decoders end-to-end on online-generated samples;
at the phase boundary the latent pyramid is baked by evaluating the encoder
at every texel and the encoder is dropped. Phase 2 finetunes latent texels
directly through the decoder. Every iteration processes two batches: one
driving the BRDF decoder (log-space L1, plus squared error on the albedo
head) and one driving the importance-sampler decoder.

The sampler loss is a reparameterized estimate of the KL divergence from the
proxy to the current BRDF (luminance times cosine, treated as an
unnormalized, constant target). Both mixture lobes are sampled for every
record and combined with their mixture weights, which keeps the weights
differentiable without a discrete lobe pick; the explicit score term (zero
mean) is dropped, so the per-sample gradient vanishes identically when the
proxy matches the target exactly. Gradients reach only the sampler decoder:
latent codes are detached and the BRDF decoder and frame layer contribute
values and direction derivatives only.
"""

import csv
import json
import os
import struct

import numpy as np

from . import geom, mlp, proxy
from .latent import bake_from_encoder
from .material import estimate_albedo, eval_mollified
from .neural import (
    NeuralMaterial,
    brdf_output,
    brdf_output_grad,
    decoder_input,
    extract_frames,
    frames_backward,
    frames_from_raw,
    proxy_from_raw,
    proxy_raw_jacobian,
    save_archive,
)
from .texture import level_sigma

EPS_KL = 1e-4
LUM_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])
_TINY = 1e-30


class NonFiniteLossError(RuntimeError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class TrainConfig:
    def __init__(self, iterations=20_000, batch_size=4096, level_rate=1.0,
                 mollify_start_deg=5.0, mollify_fraction=0.25,
                 phase1_fraction=0.5, lr=1e-3, seed=0, max_taps=64,
                 albedo_weight=1.0, log_window_fraction=0.05,
                 checkpoint_every=0, out_dir=None):
        self.iterations = iterations
        self.batch_size = batch_size
        self.level_rate = level_rate
        self.mollify_start_deg = mollify_start_deg
        self.mollify_fraction = mollify_fraction
        self.phase1_fraction = phase1_fraction
        self.lr = lr
        self.seed = seed
        self.max_taps = max_taps
        self.albedo_weight = albedo_weight
        self.log_window_fraction = log_window_fraction
        self.checkpoint_every = checkpoint_every
        self.out_dir = out_dir
        if not (0.0 < phase1_fraction < 1.0):
            raise ValueError("phase1_fraction must lie in (0, 1)")

    def to_json(self):
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, d):
        return cls(**d)


def mollification_angle(cfg, iteration):
    """Cone half-angle in radians; linear decay to zero, then zero."""
    horizon = max(1, int(cfg.mollify_fraction * cfg.iterations))
    frac = max(0.0, 1.0 - iteration / horizon)
    return np.deg2rad(cfg.mollify_start_deg) * frac


def level_pmf(cfg, n_levels):
    w = np.exp(-cfg.level_rate * np.arange(n_levels))
    return w / w.sum()


class TrainingBatch:
    """Struct-of-arrays batch; len() and [i] give per-sample views."""

    def __init__(self, uv, level, sigma, wi, wo, k, target, albedo_target=None):
        self.uv = uv
        self.level = level
        self.sigma = sigma
        self.wi = wi
        self.wo = wo
        self.k = k
        self.target = target
        self.albedo_target = albedo_target

    def __len__(self):
        return self.uv.shape[0]

    def __getitem__(self, i):
        return {
            "uv": self.uv[i], "level": self.level[i], "sigma": self.sigma[i],
            "wi": self.wi[i], "wo": self.wo[i], "k": self.k[i],
            "target": self.target[i],
            "albedo_target": None if self.albedo_target is None
            else self.albedo_target[i],
        }


def generate_batch(graph, tex, cfg, rng, iteration, n=None, want_albedo=False,
                   n_levels=None):
    """Draw one batch of training records.

    uv is uniform; the pyramid level follows a truncated exponential
    favoring fine levels; direction pairs come from half/difference
    sampling. Targets average the finest-level reference over a number of
    Gaussian-footprint taps proportional to the filter area (one cone draw
    per tap while mollification is active).
    """
    b = n or cfg.batch_size
    n_levels = n_levels or tex.n_levels
    uv = rng.random((b, 2))
    levels = rng.choice(n_levels, size=b, p=level_pmf(cfg, n_levels))
    sigma = np.asarray(level_sigma(levels), dtype=np.float64)
    wi, wo = geom.sample_half_diff(rng, b)
    cone = mollification_angle(cfg, iteration)

    taps = np.clip(np.rint(4.0 * sigma**2).astype(np.int64), 1, cfg.max_taps)
    rep = np.repeat(np.arange(b), taps)
    jitter = rng.normal(0.0, 1.0, (rep.size, 2))
    uv_taps = uv[rep] + jitter * (sigma[rep, None] / [tex.width, tex.height])
    uv_taps %= 1.0
    vals = eval_mollified(graph, tex, uv_taps, wi[rep], wo[rep], cone, 1, rng)
    target = np.zeros((b, 3))
    np.add.at(target, rep, vals)
    target /= taps[:, None]

    k = tex.fetch_vector(uv, sigma)
    albedo_target = None
    if want_albedo:
        albedo_target = estimate_albedo(graph, tex, uv, wo, rng, 1)
    return TrainingBatch(uv, levels, sigma, wi, wo, k, target, albedo_target)


# --- losses -----------------------------------------------------------------


def loss_brdf(pred, target):
    """Mean absolute difference of log(1 + value) over channels."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.mean(np.abs(np.log1p(pred) - np.log1p(target))))


def loss_brdf_grad(pred, target):
    """d loss / d pred for the mean above."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    sign = np.sign(np.log1p(pred) - np.log1p(target))
    return sign / (1.0 + pred) / pred.size


def loss_albedo(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.mean((pred - target) ** 2))


def loss_albedo_grad(pred, target):
    return 2.0 * (np.asarray(pred) - np.asarray(target)) / np.asarray(pred).size


def _brdf_target_and_grad(mat, z, wi, wo):
    """Default sampler-loss target: luminance(f) * cos(theta_o) + eps and
    its derivative in the outgoing direction. The decoder and frames supply
    values only; no parameter gradients leave this function."""
    up = wo[:, 2] > 0.0
    frames = None
    if mat.cfg.use_frames:
        frames = extract_frames(mat.frame_layer, z)
    inp, _ = decoder_input(mat, z, wi, wo, frames=frames)
    y, cache = mat.brdf_decoder.forward_cached(inp.astype(np.float32))
    y = np.asarray(y, dtype=np.float64)
    f = brdf_output(y[:, 0:3])
    lum = geom.luminance(f)
    woz = np.maximum(wo[:, 2], 0.0)
    target = np.where(up, lum * woz, 0.0) + EPS_KL

    out_grad = np.zeros_like(y, dtype=np.float32)
    out_grad[:, 0:3] = (LUM_WEIGHTS[None, :] * brdf_output_grad(y[:, 0:3])
                        * woz[:, None]).astype(np.float32)
    _, din = mat.brdf_decoder.backward(cache, out_grad)
    din = np.asarray(din, dtype=np.float64)
    c = z.shape[1]
    if mat.cfg.use_frames:
        g_wo_block = din[:, c + 3 * mat.cfg.n_frames:]
        dtarget = frames.transform_adjoint_dirs(g_wo_block)
    else:
        dtarget = din[:, c + 3:]
    dtarget = dtarget + lum[:, None] * np.array([0.0, 0.0, 1.0])[None, :]
    dtarget = np.where(up[:, None], dtarget, 0.0)
    return target, dtarget


def sampler_loss_and_grads(mat, z, wi, rng, target_and_grad=None, us=None):
    """KL-style sampler loss plus gradients for the sampler decoder.

    Returns (loss, grads) where grads matches
    mat.sampler_decoder.backward()'s layer-gradient layout. `us` optionally
    fixes the two (b, 2) uniform draws (used by gradient oracles).
    """
    z = np.asarray(z, dtype=np.float64)
    wi = np.asarray(wi, dtype=np.float64)
    b = z.shape[0]
    iso = mat.cfg.sampler_isotropic
    inp = np.concatenate([z, wi], axis=-1).astype(np.float32)
    raw, cache = mat.sampler_decoder.forward_cached(inp)
    params = proxy_from_raw(raw, isotropic=iso)

    u_d, u_s = us if us is not None else (rng.random((b, 2)), rng.random((b, 2)))
    wo_d, aux_d = proxy.sample_diffuse(params, u_d)
    wo_s, aux_s = proxy.sample_specular(params, wi, u_s)

    if target_and_grad is None:
        f_d, df_d = _brdf_target_and_grad(mat, z, wi, wo_d)
        f_s, df_s = _brdf_target_and_grad(mat, z, wi, wo_s)
    else:
        f_d, df_d = target_and_grad(wo_d)
        f_s, df_s = target_and_grad(wo_s)

    p_d, dlogp_d = proxy.grad_log_pdf_wo(params, wi, wo_d)
    p_s, dlogp_s = proxy.grad_log_pdf_wo(params, wi, wo_s)
    ell_d = np.log(np.maximum(p_d, _TINY)) - np.log(f_d)
    ell_s = np.log(np.maximum(p_s, _TINY)) - np.log(f_s)
    loss = float(np.mean(params.wd * ell_d + params.ws * ell_s))

    brk_d = dlogp_d - df_d / f_d[:, None]
    brk_s = dlogp_s - df_s / f_s[:, None]
    jd = proxy.diffuse_sample_jacobian(params, wo_d, aux_d)
    js = proxy.specular_sample_jacobian(params, wi, wo_s, aux_s)
    g_mu_d = params.wd[:, None] * np.einsum("bi,bik->bk", brk_d, jd)
    g_spec = params.ws[:, None] * np.einsum("bi,bik->bk", brk_s, js)

    jac = proxy_raw_jacobian(raw, isotropic=iso)
    draw = np.zeros_like(np.asarray(raw, dtype=np.float64))
    if iso:
        draw[:, 0] = (ell_d - ell_s) * jac["wd"]
        draw[:, 1] = (g_spec[:, 0] + g_spec[:, 1]) * jac["alpha"]
    else:
        sj = jac["softmax_wdws"]
        draw[:, 0] = (ell_d - ell_s) * sj
        draw[:, 3] = (ell_s - ell_d) * sj
        draw[:, 1:3] = g_mu_d * jac["mu_d"]
        draw[:, 4:6] = g_spec[:, 0:2] * jac["alpha"]
        draw[:, 6] = g_spec[:, 2] * jac["rho"]
        draw[:, 7:9] = g_spec[:, 3:5] * jac["mu_s"]
    draw /= b
    grads, _ = mat.sampler_decoder.backward(cache, draw.astype(np.float32))
    return loss, grads


# --- optimization loop ------------------------------------------------------


def _lr_scale(iteration, total):
    if iteration >= 0.9 * total:
        return 0.01
    if iteration >= 0.6 * total:
        return 0.1
    return 1.0


class _Optimizers:
    def __init__(self, mat, cfg):
        self.encoder = mlp.AdamState(mat.encoder.param_arrays(), lr=cfg.lr)
        self.brdf = mlp.AdamState(mat.brdf_decoder.param_arrays(), lr=cfg.lr)
        self.sampler = mlp.AdamState(mat.sampler_decoder.param_arrays(), lr=cfg.lr)
        self.frame = (mlp.AdamState(mat.frame_layer.param_arrays(), lr=cfg.lr)
                      if mat.cfg.use_frames else None)
        self.latent = None

    def attach_latent(self, pyramid, cfg):
        self.latent = mlp.AdamState(pyramid.levels, lr=cfg.lr)


def _brdf_step(mat, batch, cfg, opts, phase2, scale, collect_latent_grads=None):
    """One BRDF-decoder batch: forward, losses, exact backward, Adam."""
    b = len(batch)
    if phase2:
        u_rr = np.zeros(b)
        z32, chosen = mat.latent.fetch(batch.uv, batch.level.astype(np.float64),
                                       u_rr)
        z = np.asarray(z32, dtype=np.float64)
    else:
        k32 = batch.k.astype(np.float32)
        z_out, enc_cache = mat.encoder.forward_cached(k32)
        z = np.asarray(z_out, dtype=np.float64)

    frames = None
    if mat.cfg.use_frames:
        fraw, fcache = mat.frame_layer.forward_cached(z.astype(np.float32))
        frames = frames_from_raw(fraw, want_cache=True)
    inp, _ = decoder_input(mat, z, batch.wi, batch.wo, frames=frames)
    y, cache = mat.brdf_decoder.forward_cached(inp.astype(np.float32))
    y = np.asarray(y, dtype=np.float64)
    f = brdf_output(y[:, 0:3])

    lb = loss_brdf(f, batch.target)
    dy = np.zeros_like(y)
    dy[:, 0:3] = loss_brdf_grad(f, batch.target) * brdf_output_grad(y[:, 0:3])
    la = 0.0
    if mat.cfg.albedo_head and batch.albedo_target is not None:
        a = np.maximum(y[:, 3:6], 0.0)
        la = loss_albedo(a, batch.albedo_target)
        dy[:, 3:6] = (cfg.albedo_weight * loss_albedo_grad(a, batch.albedo_target)
                      * (y[:, 3:6] > 0.0))

    grads, din = mat.brdf_decoder.backward(cache, dy.astype(np.float32))
    din = np.asarray(din, dtype=np.float64)
    c = z.shape[1]
    dz = din[:, :c]
    if mat.cfg.use_frames:
        nf = mat.cfg.n_frames
        gi = din[:, c:c + 3 * nf].reshape(b, nf, 3)
        go = din[:, c + 3 * nf:].reshape(b, nf, 3)
        gt = gi[..., 0:1] * batch.wi[:, None, :] + go[..., 0:1] * batch.wo[:, None, :]
        gb = gi[..., 1:2] * batch.wi[:, None, :] + go[..., 1:2] * batch.wo[:, None, :]
        gn = gi[..., 2:3] * batch.wi[:, None, :] + go[..., 2:3] * batch.wo[:, None, :]
        draw_frames = frames_backward(frames.cache, gt, gb, gn)
        fgrads, dz_frames = mat.frame_layer.backward(
            fcache, draw_frames.astype(np.float32)
        )
        dz = dz + np.asarray(dz_frames, dtype=np.float64)
        mlp.adam_step(mat.frame_layer, fgrads, opts.frame, scale)

    mlp.adam_step(mat.brdf_decoder, grads, opts.brdf, scale)
    if phase2:
        grad_levels = mat.latent.zero_grads()
        mat.latent.accumulate_texel_grads(grad_levels, batch.uv, chosen, dz)
        if collect_latent_grads is not None:
            collect_latent_grads(grad_levels)
        opts.latent.step(mat.latent.levels, grad_levels, scale)
    else:
        egrads, _ = mat.encoder.backward(enc_cache, dz.astype(np.float32))
        mlp.adam_step(mat.encoder, egrads, opts.encoder, scale)
    return lb, la


def train(graph, tex, mat, cfg, rng=None):
    """Run the two-phase loop; returns (mat, history).

    history rows are (iteration, brdf_l1log, kl, albedo_l2) running-window
    means. Raises NonFiniteLossError (with a diagnostic dump when an output
    directory is configured) if any loss goes non-finite.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    history = []
    if cfg.iterations == 0:
        return mat, history
    opts = _Optimizers(mat, cfg)
    phase1_end = int(cfg.phase1_fraction * cfg.iterations)
    window = max(1, int(cfg.log_window_fraction * cfg.iterations))
    acc = np.zeros(3)
    n_acc = 0
    for it in range(cfg.iterations):
        phase2 = it >= phase1_end
        if it == phase1_end:
            mat.latent = bake_from_encoder(mat.encoder, tex, mat.cfg.channels)
            opts.attach_latent(mat.latent, cfg)
            mat.invalidate_half()
        scale = _lr_scale(it, cfg.iterations)

        batch = generate_batch(graph, tex, cfg, rng, it,
                               want_albedo=mat.cfg.albedo_head)
        lb, la = _brdf_step(mat, batch, cfg, opts, phase2, scale)

        kl_batch = generate_kl_inputs(graph, tex, mat, cfg, rng, phase2)
        lk, sgrads = sampler_loss_and_grads(mat, *kl_batch, rng)
        mlp.adam_step(mat.sampler_decoder, sgrads, opts.sampler, scale)

        if not (np.isfinite(lb) and np.isfinite(lk) and np.isfinite(la)):
            dump = _dump_diagnostics(mat, cfg, it, (lb, lk, la))
            raise NonFiniteLossError(
                f"non-finite loss at iteration {it}: brdf={lb} kl={lk} albedo={la}",
                dump,
            )
        acc += (lb, lk, la)
        n_acc += 1
        if (it + 1) % window == 0 or it + 1 == cfg.iterations:
            history.append((it + 1, *(acc / n_acc)))
            acc[:] = 0.0
            n_acc = 0
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0 \
                and cfg.out_dir:
            _checkpoint(mat, cfg, opts, it + 1)
    mat.invalidate_half()
    return mat, history


def generate_kl_inputs(graph, tex, mat, cfg, rng, phase2):
    """Latent codes (detached) and incident directions for the sampler batch."""
    b = cfg.batch_size
    uv = rng.random((b, 2))
    n_levels = tex.n_levels
    levels = rng.choice(n_levels, size=b, p=level_pmf(cfg, n_levels))
    if phase2:
        z, _ = mat.latent.fetch(uv, levels.astype(np.float64), np.zeros(b))
        z = np.asarray(z, dtype=np.float64)
    else:
        k = tex.fetch_vector(uv, np.asarray(level_sigma(levels)))
        z = np.asarray(mat.encoder.forward(k.astype(np.float32)), dtype=np.float64)
    wi, _ = geom.sample_half_diff(rng, b)
    return z, wi


def train_sampler_only(graph, tex, mat, cfg, rng=None, isotropic=False):
    """Train a fresh sampler decoder against a frozen material (used for the
    isotropic-proxy ablation)."""
    import copy

    rng = rng or np.random.default_rng(cfg.seed)
    cfg2 = TrainConfig.from_json(cfg.to_json())
    new_cfg = copy.copy(mat.cfg)
    new_cfg.sampler_isotropic = isotropic
    out = 2 if isotropic else 9
    sampler = mlp.Mlp.create(
        (mat.cfg.channels + 3, *_sampler_sizes(mat), out), rng
    )
    clone = NeuralMaterial(new_cfg, mat.encoder, mat.frame_layer,
                           mat.brdf_decoder, sampler, mat.latent)
    opt = mlp.AdamState(sampler.param_arrays(), lr=cfg2.lr)
    for it in range(cfg2.iterations):
        z, wi = generate_kl_inputs(graph, tex, clone, cfg2, rng,
                                   phase2=clone.latent is not None)
        lk, grads = sampler_loss_and_grads(clone, z, wi, rng)
        if not np.isfinite(lk):
            raise NonFiniteLossError(f"non-finite sampler loss at {it}")
        mlp.adam_step(sampler, grads, opt, _lr_scale(it, cfg2.iterations))
    clone.invalidate_half()
    return clone


def _sampler_sizes(mat):
    from .neural import parse_arch

    return parse_arch(mat.cfg.sampler_hidden)


# --- history / checkpoints / dumps ------------------------------------------


def write_history_csv(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "brdf_l1log", "kl", "albedo_l2"])
        for row in history:
            w.writerow([row[0], f"{row[1]:.8f}", f"{row[2]:.8f}", f"{row[3]:.8f}"])


def read_history_csv(path):
    with open(path) as f:
        rows = list(csv.reader(f))[1:]
    return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows]


def write_array_blob(path, arrays):
    """name -> array container; deterministic bytes for identical content."""
    with open(path, "wb") as f:
        f.write(b"NMARRAY1")
        f.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            data = np.ascontiguousarray(arrays[name])
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            import io as _io

            buf = _io.BytesIO()
            np.save(buf, data)
            payload = buf.getvalue()
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)


def read_array_blob(path):
    import io as _io

    out = {}
    with open(path, "rb") as f:
        if f.read(8) != b"NMARRAY1":
            raise ValueError("not an array blob")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (plen,) = struct.unpack("<Q", f.read(8))
            out[name] = np.load(_io.BytesIO(f.read(plen)))
    return out


def _optimizer_arrays(opts):
    arrays = {}
    for label, state in (("encoder", opts.encoder), ("brdf", opts.brdf),
                         ("sampler", opts.sampler), ("frame", opts.frame),
                         ("latent", opts.latent)):
        if state is None:
            continue
        arrays[f"{label}/step"] = np.array([state.step_count])
        for i, (m, v) in enumerate(zip(state.m, state.v)):
            arrays[f"{label}/m{i}"] = m
            arrays[f"{label}/v{i}"] = v
    return arrays


def _checkpoint(mat, cfg, opts, iteration):
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_archive(os.path.join(cfg.out_dir, f"checkpoint_{iteration}.nma"), mat,
                 include_encoder=mat.latent is None)
    write_array_blob(os.path.join(cfg.out_dir, f"checkpoint_{iteration}.opt"),
                     _optimizer_arrays(opts))


def _dump_diagnostics(mat, cfg, iteration, losses):
    if not cfg.out_dir:
        return None
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, f"diagnostic_{iteration}.json")
    with open(path, "w") as f:
        json.dump({
            "iteration": iteration,
            "losses": {"brdf": losses[0], "kl": losses[1], "albedo": losses[2]},
            "clamped_fp16": mat.clamp_warnings(),
        }, f, indent=2)
    return path
