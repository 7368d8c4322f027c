"""Hierarchical 8-channel latent texture.

The pyramid stores a float32 master copy per mip level (resolution halves
per level down to 1x1). Fractional level lookups pick one of the two
bracketing levels by Russian roulette with probability equal to the
fractional part, so the expectation over the roulette variate equals linear
interpolation between the two bilinear fetches. Gradients are scattered back
through the exact adjoint of the bilinear fetch.
"""

import struct

import numpy as np

from .texture import level_sigma

LATENT_CHANNELS = 8
_MAGIC = b"NLATPYR1"


class LatentPyramid:
    def __init__(self, levels):
        for lvl in levels:
            if lvl.ndim != 3 or lvl.shape[2] != levels[0].shape[2]:
                raise ValueError("levels must be (H, W, C) with a shared C")
        self.levels = [np.ascontiguousarray(l, dtype=np.float32) for l in levels]

    @classmethod
    def zeros(cls, width, height, channels=LATENT_CHANNELS):
        levels = []
        w, h = width, height
        while True:
            levels.append(np.zeros((h, w, channels), dtype=np.float32))
            if w == 1 and h == 1:
                break
            w = max(1, w // 2)
            h = max(1, h // 2)
        return cls(levels)

    @property
    def n_levels(self):
        return len(self.levels)

    @property
    def channels(self):
        return self.levels[0].shape[2]

    @property
    def width(self):
        return self.levels[0].shape[1]

    @property
    def height(self):
        return self.levels[0].shape[0]

    def _taps(self, level, uv):
        img = self.levels[level]
        h, w = img.shape[:2]
        x = uv[..., 0] * w - 0.5
        y = uv[..., 1] * h - 0.5
        x0f = np.floor(x)
        y0f = np.floor(y)
        fx = x - x0f
        fy = y - y0f
        x0 = x0f.astype(np.int64) % w
        y0 = y0f.astype(np.int64) % h
        x1 = (x0 + 1) % w
        y1 = (y0 + 1) % h
        wts = np.stack(
            [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1
        )
        xs = np.stack([x0, x1, x0, x1], axis=-1)
        ys = np.stack([y0, y0, y1, y1], axis=-1)
        return xs, ys, wts

    def choose_level(self, level, u_rr):
        """Russian-roulette integer level for fractional `level` values."""
        level = np.clip(np.asarray(level, dtype=np.float64), 0, self.n_levels - 1)
        lo = np.floor(level)
        frac = level - lo
        chosen = lo + (np.asarray(u_rr) < frac)
        return np.clip(chosen, 0, self.n_levels - 1).astype(np.int64)

    def fetch(self, uv, level, u_rr):
        """Bilinear latent lookup at the roulette-chosen level.

        Returns (codes, chosen_level). Expectation over u_rr equals
        (1-frac) * bilinear(floor) + frac * bilinear(ceil).
        """
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        chosen = self.choose_level(np.broadcast_to(level, uv.shape[:-1]), u_rr)
        out = np.empty(uv.shape[:-1] + (self.channels,), dtype=np.float32)
        for l in np.unique(chosen):
            sel = chosen == l
            xs, ys, wts = self._taps(int(l), uv[sel])
            texels = self.levels[int(l)][ys, xs]  # (..., 4, C)
            out[sel] = np.sum(texels * wts[..., None], axis=-2, dtype=np.float64)
        return out, chosen

    def fetch_level(self, uv, level):
        """Deterministic bilinear fetch from one integer level."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        xs, ys, wts = self._taps(int(level), uv)
        texels = self.levels[int(level)][ys, xs]
        return np.sum(texels * wts[..., None], axis=-2, dtype=np.float64).astype(
            np.float32
        )

    def accumulate_texel_grads(self, grad_levels, uv, chosen, z_grad):
        """Exact adjoint of fetch: scatter z_grad onto the four bilinear taps
        of each query. `grad_levels` is a parallel list of gradient images."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        chosen = np.broadcast_to(chosen, uv.shape[:-1])
        z_grad = np.asarray(z_grad)
        for l in np.unique(chosen):
            sel = chosen == l
            xs, ys, wts = self._taps(int(l), uv[sel])
            contrib = wts[..., None] * z_grad[sel][..., None, :]
            np.add.at(grad_levels[int(l)], (ys, xs), contrib)

    def zero_grads(self):
        return [np.zeros_like(l) for l in self.levels]

    def half_copy(self):
        """FP16 render copy (same quantization policy as network weights)."""
        return [np.clip(l, -65504, 65504).astype(np.float16) for l in self.levels]

    def magnitude_histogram(self, bins=32):
        """log2-magnitude histogram across all texels (logged at bake time)."""
        mags = np.concatenate([np.abs(l).ravel() for l in self.levels])
        mags = mags[mags > 0]
        if mags.size == 0:
            return np.zeros(bins, dtype=np.int64), np.linspace(-24, 16, bins + 1)
        logs = np.log2(mags)
        return np.histogram(logs, bins=bins, range=(-24.0, 16.0))


def bake_from_encoder(encoder, tex, channels=LATENT_CHANNELS):
    """Evaluate the encoder at every texel of every level, with the filtering
    footprint matched to the level."""
    if encoder.out_dim != channels:
        raise ValueError("encoder output width must match the latent channels")
    pyr = LatentPyramid.zeros(tex.width, tex.height, channels)
    for lvl in range(pyr.n_levels):
        h, w = pyr.levels[lvl].shape[:2]
        us = (np.arange(w) + 0.5) / w
        vs = (np.arange(h) + 0.5) / h
        uu, vv = np.meshgrid(us, vs)
        uv = np.stack([uu, vv], axis=-1).reshape(-1, 2)
        k = tex.fetch_vector(uv, float(level_sigma(lvl)))
        if encoder.in_dim != k.shape[-1]:
            raise ValueError("encoder input width must match the parameter vector")
        pyr.levels[lvl][:] = encoder.forward(k).reshape(h, w, channels)
    return pyr


def write_pyramid(stream, pyr):
    stream.write(_MAGIC)
    stream.write(
        struct.pack("<IIII", pyr.width, pyr.height, pyr.n_levels, pyr.channels)
    )
    for lvl in pyr.half_copy():
        stream.write(lvl.astype("<f2").tobytes())


def read_pyramid(stream):
    if stream.read(8) != _MAGIC:
        raise ValueError("not a latent pyramid file")
    w, h, n_levels, c = struct.unpack("<IIII", stream.read(16))
    pyr = LatentPyramid.zeros(w, h, c)
    if pyr.n_levels != n_levels:
        raise ValueError("corrupt pyramid header")
    for lvl in range(n_levels):
        hh, ww = pyr.levels[lvl].shape[:2]
        data = np.frombuffer(stream.read(2 * hh * ww * c), dtype="<f2")
        if data.size != hh * ww * c:
            raise ValueError("truncated pyramid file")
        pyr.levels[lvl][:] = data.reshape(hh, ww, c).astype(np.float32)
    return pyr
