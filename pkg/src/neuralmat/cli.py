"""Command-line entry points.

Subcommands: train, render, validate, bench, inspect. All outputs are
machine-readable (JSON / CSV / PFM); exit codes are 0 on success, 2 for
usage or input errors, and 3 for numeric failures.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import pfm, proxy, training
from .chi2 import chi_square_test
from .material import load_material
from .neural import NeuralMaterial, NeuralMaterialConfig, eval_brdf, infer_proxy, \
    load_archive, save_archive
from .render import RenderConfig, compute_metrics, load_scene, render

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def cmd_train(args):
    try:
        with open(args.config) as f:
            doc = json.load(f)
        cfg = training.TrainConfig.from_json(doc["train"])
        mat_cfg = NeuralMaterialConfig.from_json(doc.get("material", {}))
        graph, tex = load_material(
            os.path.join(os.path.dirname(args.config), doc["reference"])
        )
        out_path = os.path.join(os.path.dirname(args.config),
                                doc.get("output", "trained.nma"))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as e:
        print(f"error: invalid training config: {e}", file=sys.stderr)
        return EXIT_INPUT

    rng = np.random.default_rng(cfg.seed)
    mat = NeuralMaterial.create(mat_cfg, rng)
    try:
        mat, history = training.train(graph, tex, mat, cfg, rng)
    except training.NonFiniteLossError as e:
        print(f"error: {e} (diagnostics: {e.dump_path})", file=sys.stderr)
        return EXIT_NUMERIC
    save_archive(out_path, mat, include_encoder=mat.latent is None)
    training.write_history_csv(os.path.splitext(out_path)[0] + "_loss.csv",
                               history)
    print(json.dumps({"archive": out_path, "iterations": cfg.iterations,
                      "final_losses": history[-1][1:] if history else None}))
    return EXIT_OK


def cmd_render(args):
    try:
        scene = load_scene(args.scene)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"error: cannot load scene: {e}", file=sys.stderr)
        return EXIT_INPUT
    cfg = RenderConfig(width=args.width, height=args.height, spp=args.spp,
                       seed=args.seed, max_vertices=args.max_vertices,
                       fp16=args.fp16)
    img = render(scene, cfg)
    if not np.all(np.isfinite(img)):
        print("error: non-finite pixels in render", file=sys.stderr)
        return EXIT_NUMERIC
    pfm.write_pfm(args.out, img)
    report = {"out": args.out, "spp": cfg.spp,
              "mean": float(np.mean(img)), "max": float(np.max(img))}
    if args.reference:
        ref = pfm.read_pfm(args.reference)
        report["metrics"] = compute_metrics(img, ref)
    print(json.dumps(report))
    return EXIT_OK


def _validate_material(mat, rng):
    checks = {}
    lvl0 = mat.latent.levels[0]
    texels = lvl0.reshape(-1, lvl0.shape[-1])
    pick = rng.integers(0, texels.shape[0], 8)

    # sampler pdf normalization + sample/pdf agreement on latent codes
    norm_ok = True
    chi_ok = 0
    norms = []
    for i in pick:
        z = texels[i][None, :]
        wi = geom_upper(rng)
        params = infer_proxy(mat, z, wi)
        est = proxy.normalize_check(params, wi[0], 2_000_000, rng)
        norms.append(est)
        norm_ok &= abs(est - 1.0) < 0.03
        rep = params.take(np.zeros(200_000, dtype=np.int64))

        def sample_fn(n, rep=rep, wi=wi):
            u = rng.random((n, 3))
            return proxy.sample(rep.take(np.zeros(n, dtype=np.int64)),
                                np.broadcast_to(wi[0], (n, 3)), u)

        def pdf_fn(dirs, params=params, wi=wi):
            rep = params.take(np.zeros(dirs.shape[0], dtype=np.int64))
            return proxy.pdf(rep, np.broadcast_to(wi[0], dirs.shape), dirs)

        ok, pval, _, _ = chi_square_test(sample_fn, pdf_fn, 200_000)
        chi_ok += int(ok)
    checks["sampler_normalization"] = {"pass": bool(norm_ok),
                                       "estimates": norms}
    checks["sampler_chi_square"] = {"pass": chi_ok >= 7,
                                    "passed": chi_ok, "total": 8}

    # FP16 vs FP32 inference agreement
    z = texels[rng.integers(0, texels.shape[0], 4096)]
    wi, wo = _random_pairs(rng, 4096)
    f32, _ = eval_brdf(mat, z, wi, wo, fp16=False)
    f16, _ = eval_brdf(mat, z, wi, wo, fp16=True)
    smape = float(np.mean(np.abs(f32 - f16)
                          / (np.abs(f32) + np.abs(f16) + 1e-3)))
    checks["fp16_agreement"] = {"pass": smape < 0.01, "smape": smape}

    # latent-fetch unbiasedness at a fractional level
    uv = rng.random((1, 2))
    target = (0.7 * mat.latent.fetch_level(uv, 1)
              + 0.3 * mat.latent.fetch_level(uv, 2)).astype(np.float64)
    n = 100_000
    zs, _ = mat.latent.fetch(np.repeat(uv, n, axis=0), 1.3, rng.random(n))
    zs = zs.astype(np.float64)
    err = np.abs(zs.mean(axis=0) - target[0])
    sigma = zs.std(axis=0) / np.sqrt(n)
    checks["latent_fetch_unbiased"] = {
        "pass": bool(np.all(err <= 3.0 * sigma + 1e-6)),
        "max_err": float(err.max()),
    }

    checks["fp16_clamp_warnings"] = {"pass": True,
                                     "count": int(mat.clamp_warnings())}
    return checks


def geom_upper(rng):
    from . import geom

    w = geom.sample_uniform_hemisphere(rng.random((1, 2)))
    w[:, 2] = np.maximum(w[:, 2], 0.3)
    return geom.normalize(w)


def _random_pairs(rng, n):
    from . import geom

    return geom.sample_half_diff(rng, n)


def cmd_validate(args):
    try:
        mat = load_archive(args.material)
        if mat.latent is None:
            raise ValueError("archive has no latent pyramid (train first)")
    except (OSError, ValueError) as e:
        print(f"error: cannot load archive: {e}", file=sys.stderr)
        return EXIT_INPUT
    rng = np.random.default_rng(args.seed)
    checks = _validate_material(mat, rng)
    report = {"material": args.material, "checks": checks,
              "pass": all(c["pass"] for c in checks.values())}
    out = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(out)
    print(out)
    return EXIT_OK if report["pass"] else EXIT_NUMERIC


def cmd_bench(args):
    try:
        mat = load_archive(args.material)
    except (OSError, ValueError) as e:
        print(f"error: cannot load archive: {e}", file=sys.stderr)
        return EXIT_INPUT
    from . import mlp as _mlp

    net = mat.brdf_decoder
    qnet = _mlp.quantize(net)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.n, net.in_dim)).astype(np.float32)

    t0 = time.perf_counter()
    naive = np.stack([net.forward(row) for row in x[: min(args.n, 20000)]])
    t_naive = time.perf_counter() - t0
    naive_rate = min(args.n, 20000) / t_naive

    t0 = time.perf_counter()
    fused_rows = np.stack([qnet.fused_forward(row)
                           for row in x[: min(args.n, 20000)]])
    t_fused = time.perf_counter() - t0
    fused_rate = min(args.n, 20000) / t_fused

    t0 = time.perf_counter()
    batched = qnet.fused_forward(x)
    t_batched = time.perf_counter() - t0
    batched_rate = args.n / t_batched

    from .neural import brdf_output

    # agreement measured on BRDF values (outputs through the decoder's
    # non-negative output map)
    fa = brdf_output(np.asarray(batched[:, :3], dtype=np.float64))
    fb = brdf_output(np.asarray(net.forward(x)[:, :3], dtype=np.float64))
    rel = np.abs(fa - fb) / (fb + 1e-2)
    report = {
        "n": args.n,
        "naive_fp32_evals_per_s": naive_rate,
        "fused_fp16_evals_per_s": fused_rate,
        "batched_fused_fp16_evals_per_s": batched_rate,
        "mean_rel_diff": float(rel.mean()),
        "max_rel_diff": float(rel.max()),
        "agreement_pass": bool(rel.mean() < 1e-2),
        "rows_checked": int(np.allclose(fused_rows, naive, atol=0.05, rtol=0.05)),
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["agreement_pass"] else EXIT_NUMERIC


def cmd_inspect(args):
    try:
        mat = load_archive(args.material)
    except (OSError, ValueError) as e:
        print(f"error: cannot load archive: {e}", file=sys.stderr)
        return EXIT_INPUT
    doc = {"config": mat.cfg.to_json(), "histograms": {}}
    nets = {"brdf_decoder": mat.brdf_decoder, "sampler_decoder": mat.sampler_decoder}
    if mat.frame_layer is not None:
        nets["frame_layer"] = mat.frame_layer
    for name, net in nets.items():
        doc["config"][f"{name}_params"] = int(
            sum(p.size for p in net.param_arrays())
        )
        mags = np.concatenate([np.abs(p.ravel()) for p in net.param_arrays()])
        mags = mags[mags > 0]
        hist, edges = np.histogram(np.log2(mags), bins=16, range=(-24, 16))
        doc["histograms"][name] = {"log2_bins": edges.tolist(),
                                   "counts": hist.tolist()}
    if mat.latent is not None:
        hist, edges = mat.latent.magnitude_histogram(16)
        doc["histograms"]["latent"] = {"log2_bins": edges.tolist(),
                                       "counts": hist.tolist()}
        doc["config"]["latent_levels"] = mat.latent.n_levels
        doc["config"]["latent_resolution"] = [mat.latent.width, mat.latent.height]
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="neuralmat",
                                description="neural material baking toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a neural material")
    t.add_argument("--config", required=True)
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("render", help="render a scene to a PFM image")
    r.add_argument("--scene", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--spp", type=int, default=64)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--width", type=int, default=256)
    r.add_argument("--height", type=int, default=256)
    r.add_argument("--max-vertices", type=int, default=6)
    r.add_argument("--fp16", action="store_true")
    r.add_argument("--reference", help="PFM to compare against")
    r.set_defaults(fn=cmd_render)

    v = sub.add_parser("validate", help="run the material validation suite")
    v.add_argument("--material", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(fn=cmd_validate)

    b = sub.add_parser("bench", help="inference throughput benchmark")
    b.add_argument("--material", required=True)
    b.add_argument("-n", type=int, default=200_000)
    b.set_defaults(fn=cmd_bench)

    i = sub.add_parser("inspect", help="print architecture and histograms")
    i.add_argument("--material", required=True)
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
