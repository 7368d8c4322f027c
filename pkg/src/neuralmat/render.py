"""CPU path tracer with next-event estimation and multiple importance
sampling.

The tracer is wavefront-style: tiles of pixels are traced through the bounce
loop as flat numpy batches (several samples per pass), which keeps the
per-hit neural decoding in large matrix operations. Per-tile counter-seeded
generators make images deterministic for a given seed regardless of tile
order; material groups are visited in sorted name order so the random
stream is reproducible.

Reference and neural materials share the eval/sample/pdf interface. Neural
bindings run the sampler decoder once per path vertex and cache the proxy
parameters for both the sample draw and any pdf queries at that vertex.
Texture level of detail uses an isotropic ray cone: the pixel's angular
width grows linearly along the ray plus a fixed spread per bounce, the
footprint is projected to texel area A, and the fractional level is
0.5 * log2(max(A, 1)).
"""

import json

import numpy as np

from . import geom, proxy
from .material import load_material
from .neural import eval_brdf, infer_proxy, load_archive

EPS_METRIC = 1e-3
RAY_EPS = 1e-5
BOUNCE_SPREAD = 0.05


class Camera:
    def __init__(self, position, look_at, up=(0.0, 0.0, 1.0), vfov_deg=45.0):
        self.position = np.asarray(position, dtype=np.float64)
        self.look_at = np.asarray(look_at, dtype=np.float64)
        self.up = np.asarray(up, dtype=np.float64)
        self.vfov_deg = float(vfov_deg)

    def rays(self, px, py, jitter, width, height):
        """Primary rays through jittered pixel positions: (o, d, spread)."""
        fwd = geom.normalize(self.look_at - self.position)
        right = geom.normalize(np.cross(fwd, self.up))
        up = np.cross(right, fwd)
        tan_half = np.tan(np.deg2rad(self.vfov_deg) / 2.0)
        aspect = width / height
        sx = ((px + jitter[:, 0]) / width * 2.0 - 1.0) * tan_half * aspect
        sy = (1.0 - (py + jitter[:, 1]) / height * 2.0) * tan_half
        d = geom.normalize(fwd[None, :] + sx[:, None] * right[None, :]
                           + sy[:, None] * up[None, :])
        o = np.broadcast_to(self.position, d.shape).copy()
        spread = 2.0 * tan_half / height
        return o, d, spread

    def to_json(self):
        return {"position": self.position.tolist(), "look_at": self.look_at.tolist(),
                "up": self.up.tolist(), "vfov_deg": self.vfov_deg}


class Quad:
    """Parallelogram origin + a*edge_u + b*edge_v for (a, b) in [0,1]^2; its
    uv is (a, b) scaled by uv_scale (the material fetch wraps)."""

    def __init__(self, origin, edge_u, edge_v, material=None, emission=None,
                 uv_scale=(1.0, 1.0)):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.edge_u = np.asarray(edge_u, dtype=np.float64)
        self.edge_v = np.asarray(edge_v, dtype=np.float64)
        self.material = material
        self.emission = None if emission is None else np.asarray(emission, float)
        self.uv_scale = np.asarray(uv_scale, dtype=np.float64)
        cr = np.cross(self.edge_u, self.edge_v)
        self.normal = geom.normalize(cr)
        self.area = float(np.linalg.norm(cr))
        g = np.array([
            [self.edge_u @ self.edge_u, self.edge_u @ self.edge_v],
            [self.edge_u @ self.edge_v, self.edge_v @ self.edge_v],
        ])
        self._ginv = np.linalg.inv(g)

    def intersect(self, o, d):
        denom = d @ self.normal
        rel = self.origin - o
        t = np.where(np.abs(denom) > 1e-12, (rel @ self.normal) / denom, np.inf)
        p = o + t[:, None] * d - self.origin
        pu = p @ self.edge_u
        pv = p @ self.edge_v
        a = self._ginv[0, 0] * pu + self._ginv[0, 1] * pv
        b = self._ginv[1, 0] * pu + self._ginv[1, 1] * pv
        hit = (t > RAY_EPS) & (a >= 0.0) & (a <= 1.0) & (b >= 0.0) & (b <= 1.0)
        uv = np.stack([a * self.uv_scale[0], b * self.uv_scale[1]], axis=-1)
        return np.where(hit, t, np.inf), uv

    def surface_frame(self, p, d):
        n = np.where((d @ self.normal)[:, None] > 0.0, -self.normal, self.normal)
        t = np.broadcast_to(geom.normalize(self.edge_u), p.shape)
        return geom.orthonormal_frame(n, t)

    def texel_density(self, res):
        du = res[0] * self.uv_scale[0] / np.linalg.norm(self.edge_u)
        dv = res[1] * self.uv_scale[1] / np.linalg.norm(self.edge_v)
        return float(np.sqrt(du * dv))

    def to_json(self):
        return {"type": "quad", "origin": self.origin.tolist(),
                "edge_u": self.edge_u.tolist(), "edge_v": self.edge_v.tolist(),
                "material": self.material,
                "emission": None if self.emission is None else self.emission.tolist(),
                "uv_scale": self.uv_scale.tolist()}


class Sphere:
    def __init__(self, center, radius, material=None, emission=None,
                 uv_scale=(1.0, 1.0)):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.material = material
        self.emission = None if emission is None else np.asarray(emission, float)
        self.uv_scale = np.asarray(uv_scale, dtype=np.float64)

    def intersect(self, o, d):
        oc = o - self.center
        b = np.sum(oc * d, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius**2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > RAY_EPS, t0, np.where(t1 > RAY_EPS, t1, np.inf))
        t = np.where(disc > 0.0, t, np.inf)
        p = o + t[:, None] * d - self.center
        with np.errstate(invalid="ignore"):
            theta = np.arccos(np.clip(p[:, 2] / self.radius, -1.0, 1.0))
            phi = np.arctan2(p[:, 1], p[:, 0]) % (2 * np.pi)
        uv = np.stack([phi / (2 * np.pi) * self.uv_scale[0],
                       theta / np.pi * self.uv_scale[1]], axis=-1)
        return t, np.nan_to_num(uv)

    def surface_frame(self, p, d):
        n = geom.normalize(p - self.center)
        n = np.where(np.sum(n * d, axis=-1)[:, None] > 0.0, -n, n)
        return geom.orthonormal_frame(n, geom.fallback_tangent(n))

    def texel_density(self, res):
        return float(res[0] * self.uv_scale[0] / (2 * np.pi * self.radius))

    def to_json(self):
        return {"type": "sphere", "center": self.center.tolist(),
                "radius": self.radius, "material": self.material,
                "emission": None if self.emission is None else self.emission.tolist(),
                "uv_scale": self.uv_scale.tolist()}


class ReferenceBinding:
    kind = "reference"

    def __init__(self, graph, tex):
        self.graph = graph
        self.tex = tex

    @property
    def resolution(self):
        return self.tex.width, self.tex.height

    @property
    def n_levels(self):
        return self.tex.n_levels


class NeuralBinding:
    kind = "neural"

    def __init__(self, mat, fp16=False):
        self.mat = mat
        self.fp16 = fp16

    @property
    def resolution(self):
        return self.mat.latent.width, self.mat.latent.height

    @property
    def n_levels(self):
        return self.mat.latent.n_levels


class Scene:
    def __init__(self, camera, objects, materials, env_radiance=None):
        self.camera = camera
        self.objects = objects
        self.materials = materials  # name -> binding
        self.env = None if env_radiance is None else np.asarray(env_radiance, float)
        self.lights = [i for i, ob in enumerate(objects) if ob.emission is not None]
        self.emission_table = np.zeros((len(objects), 3))
        self.is_emitter = np.zeros(len(objects), dtype=bool)
        for i, ob in enumerate(objects):
            if ob.emission is not None:
                self.emission_table[i] = ob.emission
                self.is_emitter[i] = True

    @property
    def n_lights(self):
        return len(self.lights) + (1 if self.env is not None else 0)


class RenderConfig:
    def __init__(self, width=256, height=256, spp=64, max_vertices=6, seed=0,
                 lod=True, force_level=None, nee=True, fp16=False,
                 mis_power2=False, tile=32, rays_per_pass=65536,
                 assert_pdf_consistency=False):
        if min(width, height, spp, max_vertices) <= 0:
            raise ValueError("render configuration values must be positive")
        self.width = width
        self.height = height
        self.spp = spp
        self.max_vertices = max_vertices
        self.seed = seed
        self.lod = lod
        self.force_level = force_level
        self.nee = nee
        self.fp16 = fp16
        self.mis_power2 = mis_power2
        self.tile = tile
        self.rays_per_pass = rays_per_pass
        self.assert_pdf_consistency = assert_pdf_consistency

    def with_seed(self, seed):
        d = dict(self.__dict__)
        d["seed"] = seed
        return RenderConfig(**d)


def _mis_weight(pa, pb, power2):
    if power2:
        pa2 = pa * pa
        return np.where(pa2 > 0, pa2 / np.maximum(pa2 + pb * pb, 1e-300), 0.0)
    return np.where(pa > 0, pa / np.maximum(pa + pb, 1e-300), 0.0)


class _Hits:
    __slots__ = ("t", "obj", "uv", "pos", "valid")

    def take(self, mask):
        h = _Hits()
        for f in _Hits.__slots__:
            setattr(h, f, getattr(self, f)[mask])
        return h


def _intersect(scene, o, d):
    n = o.shape[0]
    best_t = np.full(n, np.inf)
    best_obj = np.full(n, -1, dtype=np.int64)
    best_uv = np.zeros((n, 2))
    for idx, ob in enumerate(scene.objects):
        t, uv = ob.intersect(o, d)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_obj = np.where(closer, idx, best_obj)
        best_uv = np.where(closer[:, None], uv, best_uv)
    h = _Hits()
    h.t = best_t
    h.obj = best_obj
    h.uv = best_uv
    h.pos = o + np.where(np.isfinite(best_t), best_t, 0.0)[:, None] * d
    h.valid = np.isfinite(best_t)
    return h


def _occluded(scene, o, d, t_max):
    """Any-hit test strictly before t_max (scaled back so the sampled light
    surface itself never registers as its own blocker)."""
    blocked = np.zeros(o.shape[0], dtype=bool)
    limit = np.where(np.isfinite(t_max), t_max * (1.0 - 1e-3), np.inf)
    for ob in scene.objects:
        t, _ = ob.intersect(o, d)
        blocked |= t < limit
    return blocked


def _light_pdf_dir(scene, x, d):
    """Solid-angle pdf of the NEE strategy for direction d from x, with the
    uniform light-selection probability folded in."""
    if scene.n_lights == 0:
        return np.zeros(x.shape[0])
    total = np.zeros(x.shape[0])
    if scene.env is not None:
        total += 1.0 / (4.0 * np.pi)
    for idx in scene.lights:
        ob = scene.objects[idx]
        t, _ = ob.intersect(x, d)
        hit = np.isfinite(t)
        cosl = np.abs(d @ ob.normal)
        pdf = np.where(hit & (cosl > 1e-9),
                       np.where(hit, t, 0.0) ** 2 / np.maximum(ob.area * cosl, 1e-12),
                       0.0)
        total += pdf
    return total / scene.n_lights


def _sample_light(scene, x, rng):
    """Uniformly pick a light, sample a direction toward it. Returns
    (dir, dist, radiance, pdf) with the selection pdf folded in."""
    n = x.shape[0]
    pick = rng.integers(0, scene.n_lights, n)
    d = np.zeros((n, 3))
    dist = np.full(n, np.inf)
    rad = np.zeros((n, 3))
    pdf = np.zeros(n)
    slot = 0
    if scene.env is not None:
        sel = pick == slot
        d[sel] = geom.sample_uniform_sphere(rng.random((int(sel.sum()), 2)))
        rad[sel] = scene.env
        pdf[sel] = 1.0 / (4.0 * np.pi)
        slot += 1
    for idx in scene.lights:
        ob = scene.objects[idx]
        sel = pick == slot
        if np.any(sel):
            u = rng.random((int(sel.sum()), 2))
            p = ob.origin + u[:, 0:1] * ob.edge_u + u[:, 1:2] * ob.edge_v
            vec = p - x[sel]
            dd = np.linalg.norm(vec, axis=-1)
            dirs = vec / np.maximum(dd[:, None], 1e-12)
            cosl = np.abs(dirs @ ob.normal)
            d[sel] = dirs
            dist[sel] = dd
            rad[sel] = ob.emission
            pdf[sel] = dd * dd / np.maximum(ob.area * cosl, 1e-12)
        slot += 1
    return d, dist, rad, pdf / scene.n_lights


def footprint_to_level(area_texels, n_levels):
    """Fractional mip level from footprint area in level-0 texels^2."""
    lvl = 0.5 * np.log2(np.maximum(area_texels, 1.0))
    return np.clip(lvl, 0.0, n_levels - 1)


class _VertexShading:
    """Per-vertex material context. Neural bindings fetch the latent code and
    infer the analytic proxy once; sample() and pdf() reuse those cached
    parameters. Groups are visited in sorted material-name order so the
    random stream is deterministic."""

    def __init__(self, scene, cfg, hits, wo_local, level, rng):
        self.scene = scene
        self.cfg = cfg
        self.hits = hits
        self.wo_local = wo_local
        self.n = wo_local.shape[0]
        names = [scene.objects[i].material for i in hits.obj]
        self.groups = []
        for name in sorted(set(names)):
            sel = np.array([nm == name for nm in names])
            self.groups.append((scene.materials[name], sel))
        self.z = {}
        self.proxies = {}
        for binding, sel in self.groups:
            if binding.kind != "neural":
                continue
            mat = binding.mat
            ns = int(sel.sum())
            lv = level[sel] if cfg.lod else np.zeros(ns)
            if cfg.force_level is not None:
                lv = np.full(ns, float(cfg.force_level))
            fp16 = self._fp16(binding)
            pyramid = mat.half()["latent"] if fp16 else mat.latent
            z, _ = pyramid.fetch(hits.uv[sel], lv, rng.random(ns))
            key = id(binding)
            self.z[key] = z
            self.proxies[key] = infer_proxy(mat, z, wo_local[sel], fp16=fp16)

    def _fp16(self, binding):
        return self.cfg.fp16 or binding.fp16

    def eval(self, wi_local):
        out = np.zeros((self.n, 3))
        for binding, sel in self.groups:
            if binding.kind == "reference":
                params = binding.tex.fetch(self.hits.uv[sel], 0.0)
                out[sel] = binding.graph.eval_params(params, wi_local[sel],
                                                     self.wo_local[sel])
            else:
                f, _ = eval_brdf(binding.mat, self.z[id(binding)], wi_local[sel],
                                 self.wo_local[sel], fp16=self._fp16(binding))
                out[sel] = f
        return out

    def sample(self, rng):
        wi = np.zeros((self.n, 3))
        pdf = np.zeros(self.n)
        for binding, sel in self.groups:
            ns = int(sel.sum())
            u = rng.random((ns, 3))
            if binding.kind == "reference":
                params = binding.tex.fetch(self.hits.uv[sel], 0.0)
                w, p = binding.graph.sample_params(params, self.wo_local[sel], u)
            else:
                pp = self.proxies[id(binding)]
                w = proxy.sample(pp, self.wo_local[sel], u)
                p = proxy.pdf(pp, self.wo_local[sel], w)
                if self.cfg.assert_pdf_consistency:
                    again = proxy.pdf(pp, self.wo_local[sel], w)
                    assert np.allclose(p, again, atol=1e-6)
            wi[sel] = w
            pdf[sel] = p
        return wi, pdf

    def pdf(self, wi_local):
        out = np.zeros(self.n)
        for binding, sel in self.groups:
            if binding.kind == "reference":
                params = binding.tex.fetch(self.hits.uv[sel], 0.0)
                out[sel] = binding.graph.pdf_params(params, self.wo_local[sel],
                                                    wi_local[sel])
            else:
                out[sel] = proxy.pdf(self.proxies[id(binding)],
                                     self.wo_local[sel], wi_local[sel])
        return out


def _surface_frames_and_level(scene, cfg, hits, d, cone_w, cone_s):
    n = hits.pos.shape[0]
    ft = np.zeros((n, 3))
    fb = np.zeros((n, 3))
    fn = np.zeros((n, 3))
    level = np.zeros(n)
    for i in np.unique(hits.obj):
        sel = hits.obj == i
        ob = scene.objects[i]
        fr = ob.surface_frame(hits.pos[sel], d[sel])
        ns = int(sel.sum())
        ft[sel] = np.broadcast_to(fr.t, (ns, 3))
        fb[sel] = np.broadcast_to(fr.b, (ns, 3))
        fn[sel] = np.broadcast_to(fr.n, (ns, 3))
        if ob.material is not None:
            binding = scene.materials[ob.material]
            dens = ob.texel_density(binding.resolution)
            width = cone_w[sel] + cone_s[sel] * hits.t[sel]
            cos_hit = np.abs(np.sum(fn[sel] * d[sel], axis=-1))
            diam = width / np.maximum(cos_hit, 0.05)
            area = (diam * dens) ** 2
            level[sel] = footprint_to_level(area, binding.n_levels)
    return geom.Frame(ft, fb, fn), level


def _trace(scene, cfg, o, d, spread, rng, aux=None, aux_ids=None):
    n = o.shape[0]
    radiance = np.zeros((n, 3))
    throughput = np.ones((n, 3))
    active = np.ones(n, dtype=bool)
    cone_w = np.zeros(n)
    cone_s = np.full(n, spread)
    prev_pdf = np.zeros(n)
    max_surfaces = cfg.max_vertices - 2
    o = o.copy()
    d = d.copy()
    for depth in range(max_surfaces + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        hits = _intersect(scene, o[idx], d[idx])

        if scene.env is not None and np.any(~hits.valid):
            miss = ~hits.valid
            gids = idx[miss]
            w = np.ones(gids.size)
            if cfg.nee and depth > 0:
                pl = _light_pdf_dir(scene, o[gids], d[gids])
                w = _mis_weight(prev_pdf[gids], pl, cfg.mis_power2)
            radiance[gids] += throughput[gids] * scene.env * w[:, None]
        active[idx[~hits.valid]] = False

        emissive = hits.valid & scene.is_emitter[np.maximum(hits.obj, 0)]
        if np.any(emissive):
            gids = idx[emissive]
            le = scene.emission_table[hits.obj[emissive]]
            w = np.ones(gids.size)
            if cfg.nee and depth > 0:
                pl = _light_pdf_dir(scene, o[gids], d[gids])
                w = _mis_weight(prev_pdf[gids], pl, cfg.mis_power2)
            radiance[gids] += throughput[gids] * le * w[:, None]
            active[gids] = False

        shade = hits.valid & ~emissive
        sidx = idx[shade]
        if depth == max_surfaces or sidx.size == 0:
            active[idx] = False
            continue

        sub = hits.take(shade)
        frame, level = _surface_frames_and_level(scene, cfg, sub, d[sidx],
                                                 cone_w[sidx], cone_s[sidx])
        if aux is not None and depth == 0:
            aux["obj"][aux_ids[sidx]] = sub.obj
            aux["level"][aux_ids[sidx]] = level
        wo_local = frame.to_local(-d[sidx])
        ctx = _VertexShading(scene, cfg, sub, wo_local, level, rng)

        if cfg.nee and scene.n_lights > 0:
            ld, ldist, lrad, lpdf = _sample_light(scene, sub.pos, rng)
            li_local = frame.to_local(ld)
            shadow_o = sub.pos + frame.n * RAY_EPS * 10.0
            blocked = _occluded(scene, shadow_o, ld, ldist)
            f = ctx.eval(li_local)
            pb = ctx.pdf(li_local)
            w = _mis_weight(lpdf, pb, cfg.mis_power2)
            scale = np.maximum(li_local[:, 2], 0.0) / np.maximum(lpdf, 1e-12) * w
            contrib = f * lrad * scale[:, None]
            contrib[blocked | (lpdf <= 0.0)] = 0.0
            radiance[sidx] += throughput[sidx] * contrib

        wi_local, pdf = ctx.sample(rng)
        f = ctx.eval(wi_local)
        coz = wi_local[:, 2]
        ok = (pdf > 1e-12) & (coz > 0.0)
        tp = np.where(ok[:, None], f * (coz / np.maximum(pdf, 1e-12))[:, None], 0.0)
        throughput[sidx] *= tp
        dead = ~ok | (np.max(throughput[sidx], axis=-1) <= 0.0)
        active[sidx[dead]] = False

        o[sidx] = sub.pos + frame.n * (RAY_EPS * 10.0)
        d[sidx] = frame.to_world(wi_local)
        cone_w[sidx] += cone_s[sidx] * sub.t
        cone_s[sidx] += BOUNCE_SPREAD
        prev_pdf[sidx] = pdf
    return radiance


def render(scene, cfg, return_aux=False):
    """Render an HDR image (height, width, 3); deterministic per seed."""
    img = np.zeros((cfg.height, cfg.width, 3))
    aux = None
    if return_aux:
        aux = {"obj": np.full(cfg.width * cfg.height, -1, dtype=np.int64),
               "level": np.zeros(cfg.width * cfg.height)}
    tiles = []
    for ty in range(0, cfg.height, cfg.tile):
        for tx in range(0, cfg.width, cfg.tile):
            tiles.append((tx, ty))
    for tile_idx, (tx, ty) in enumerate(tiles):
        w = min(cfg.tile, cfg.width - tx)
        h = min(cfg.tile, cfg.height - ty)
        yy, xx = np.meshgrid(np.arange(ty, ty + h), np.arange(tx, tx + w),
                             indexing="ij")
        px = xx.ravel()
        py = yy.ravel()
        rng = np.random.default_rng([cfg.seed, tile_idx])
        spp_chunk = max(1, min(cfg.spp, cfg.rays_per_pass // px.size))
        acc = np.zeros((px.size, 3))
        done = 0
        first = True
        while done < cfg.spp:
            c = min(spp_chunk, cfg.spp - done)
            rep_px = np.tile(px, c)
            rep_py = np.tile(py, c)
            jitter = rng.random((rep_px.size, 2))
            o, d, spread = scene.camera.rays(rep_px, rep_py, jitter,
                                             cfg.width, cfg.height)
            ids = np.tile(py * cfg.width + px, c) if (aux is not None and first) \
                else None
            vals = _trace(scene, cfg, o, d, spread, rng,
                          aux if first else None, ids)
            acc += vals.reshape(c, px.size, 3).sum(axis=0)
            done += c
            first = False
        img[py, px] = acc / cfg.spp
    if return_aux:
        aux["obj"] = aux["obj"].reshape(cfg.height, cfg.width)
        aux["level"] = aux["level"].reshape(cfg.height, cfg.width)
        return img, aux
    return img


def render_chunks(scene, cfg, n_chunks):
    """Independent renders with derived seeds, stacked for statistics."""
    return np.stack([render(scene, cfg.with_seed(cfg.seed + 1000 * c + 1))
                     for c in range(n_chunks)])


# --- error metrics ----------------------------------------------------------


def compute_metrics(a, b, eps=EPS_METRIC):
    """Image error report on linear HDR values; b is the reference."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("metric images must share dimensions")
    diff = np.abs(a - b)
    return {
        "smape": float(np.mean(diff / (np.abs(a) + np.abs(b) + eps))),
        "mean_abs_error": float(np.mean(diff)),
        "mean_sqr_error": float(np.mean(diff**2)),
        "mean_rel_abs_error": float(np.mean(diff / (np.abs(b) + eps))),
        "mean_rel_sqr_error": float(np.mean(diff**2 / (np.abs(b) + eps) ** 2)),
    }


# --- scene description files -------------------------------------------------


def save_scene(path, scene, material_files):
    """material_files: name -> {"type": "reference"|"neural", "path": ...}."""
    doc = {
        "camera": scene.camera.to_json(),
        "objects": [ob.to_json() for ob in scene.objects],
        "materials": material_files,
        "env_radiance": None if scene.env is None else scene.env.tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def load_scene(path):
    import os

    with open(path) as f:
        doc = json.load(f)
    cam = doc["camera"]
    camera = Camera(cam["position"], cam["look_at"], cam.get("up", (0, 0, 1)),
                    cam.get("vfov_deg", 45.0))
    objects = []
    for od in doc["objects"]:
        od = dict(od)
        kind = od.pop("type")
        if kind == "quad":
            objects.append(Quad(**od))
        elif kind == "sphere":
            objects.append(Sphere(**od))
        else:
            raise ValueError(f"unknown object type {kind!r}")
    materials = {}
    base = os.path.dirname(path)
    for name, md in doc.get("materials", {}).items():
        mpath = os.path.join(base, md["path"])
        if md["type"] == "reference":
            graph, tex = load_material(mpath)
            materials[name] = ReferenceBinding(graph, tex)
        elif md["type"] == "neural":
            materials[name] = NeuralBinding(load_archive(mpath),
                                            fp16=md.get("fp16", False))
        else:
            raise ValueError(f"unknown material type {md['type']!r}")
    return Scene(camera, objects, materials, doc.get("env_radiance"))
