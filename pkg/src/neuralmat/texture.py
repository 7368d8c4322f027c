"""Spatially varying material parameters with moment-based prefiltering.

A ParamTextures object holds a fixed set of named 2D channels at a common
resolution plus a pyramid of prefiltered copies. Coarse levels are produced
by Gaussian filtering with wrap addressing; normal-map slopes and roughness
are combined through their first and second moments so that sub-footprint
normal variation reappears as extra roughness (filtered alpha^2 = mean
alpha^2 + 2 * mean per-axis slope variance). All other channels are filtered
plainly. The finest level always equals the source data.
"""

import numpy as np
from scipy.ndimage import gaussian_filter

# Channel registry: (name, width). Their concatenation in this order is the
# parameter vector consumed by the encoder.
CHANNELS = (
    ("albedo", 3),
    ("roughness", 1),
    ("slope", 2),
    ("tangent_rotation", 1),
    ("mix", 1),
    ("specularity", 1),
)
PARAM_DIM = sum(w for _, w in CHANNELS)


def level_sigma(level):
    """Gaussian footprint (in finest-level texels) used to build/address
    pyramid level `level`: 0 at the finest level, 2^level / 2 above it."""
    level = np.asarray(level)
    return np.where(level <= 0, 0.0, 0.5 * 2.0 ** np.asarray(level, dtype=np.float64))


def sigma_to_level(sigma, n_levels):
    """Nearest pyramid level whose footprint matches `sigma`."""
    sigma = np.asarray(sigma, dtype=np.float64)
    lvl = np.rint(np.log2(np.maximum(2.0 * sigma, 1.0)))
    return np.clip(lvl, 0, n_levels - 1).astype(np.int64)


def _filter_wrap(img, sigma):
    if sigma <= 0:
        return img.copy()
    if img.ndim == 2:
        return gaussian_filter(img, sigma, mode="wrap")
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = gaussian_filter(img[:, :, c], sigma, mode="wrap")
    return out


def bilinear_wrap(img, uv):
    """Bilinear lookup with repeat addressing; texel centers sit at
    (i + 0.5) / size. `img` is (H, W) or (H, W, C); `uv` is (..., 2)."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    uv = np.asarray(uv, dtype=np.float64)
    x = uv[..., 0] * w - 0.5
    y = uv[..., 1] * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64) % w
    y0 = y0.astype(np.int64) % h
    x1 = (x0 + 1) % w
    y1 = (y0 + 1) % h
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = img[y0, x0]
    v10 = img[y0, x1]
    v01 = img[y1, x0]
    v11 = img[y1, x1]
    return (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    )


class ParamTextures:
    """Named parameter maps plus their prefiltered pyramid."""

    def __init__(self, channels):
        missing = [n for n, _ in CHANNELS if n not in channels]
        if missing:
            raise ValueError(f"missing channels: {missing}")
        shapes = {np.asarray(channels[n]).shape[:2] for n, _ in CHANNELS}
        if len(shapes) != 1:
            raise ValueError("all channels must share one resolution")
        (self.height, self.width) = shapes.pop()
        self.channels = {}
        for name, width in CHANNELS:
            arr = np.asarray(channels[name], dtype=np.float64)
            if width == 1 and arr.ndim == 3:
                arr = arr[:, :, 0]
            if width > 1 and (arr.ndim != 3 or arr.shape[2] != width):
                raise ValueError(f"channel {name} must have {width} components")
            self.channels[name] = arr
        rough = self.channels["roughness"]
        if np.any(rough <= 0) or np.any(rough > 1):
            raise ValueError("roughness must lie in (0, 1]")
        if np.any(self.channels["mix"] < 0) or np.any(self.channels["mix"] > 1):
            raise ValueError("mix weights must lie in [0, 1]")
        for name, _ in CHANNELS:
            if not np.all(np.isfinite(self.channels[name])):
                raise ValueError(f"channel {name} contains non-finite texels")
        self.n_levels = int(np.log2(min(self.width, self.height))) + 1
        self.pyramid = self._build_pyramid()

    def _build_pyramid(self):
        levels = [dict(self.channels)]
        slope = self.channels["slope"]
        alpha2 = self.channels["roughness"] ** 2
        for lvl in range(1, self.n_levels):
            sig = float(level_sigma(lvl))
            step = 2**lvl
            h, w = self.height // step, self.width // step
            us = (np.arange(w) + 0.5) / w
            vs = (np.arange(h) + 0.5) / h
            uu, vv = np.meshgrid(us, vs)
            grid = np.stack([uu, vv], axis=-1)
            out = {}
            for name, _ in CHANNELS:
                if name in ("slope", "roughness"):
                    continue
                out[name] = bilinear_wrap(_filter_wrap(self.channels[name], sig), grid)
            mean_s = _filter_wrap(slope, sig)
            mean_s2 = _filter_wrap(slope**2, sig)
            var = np.maximum(mean_s2 - mean_s**2, 0.0)
            mean_a2 = _filter_wrap(alpha2, sig)
            # mean per-axis slope variance enters as 2*var in alpha^2
            eff = mean_a2 + var[:, :, 0] + var[:, :, 1]
            out["slope"] = bilinear_wrap(mean_s, grid)
            out["roughness"] = bilinear_wrap(np.sqrt(np.minimum(eff, 1.0)), grid)
            levels.append(out)
        return levels

    def fetch(self, uv, sigma):
        """Filtered parameter dict at footprints `sigma` (finest-level
        texels), bilinearly interpolated within the nearest pyramid level."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), uv.shape[:-1])
        lvl = sigma_to_level(sigma, self.n_levels)
        out = {
            name: np.empty(uv.shape[:-1] + ((width,) if width > 1 else ()))
            for name, width in CHANNELS
        }
        for l in np.unique(lvl):
            sel = lvl == l
            for name, _ in CHANNELS:
                out[name][sel] = bilinear_wrap(self.pyramid[l][name], uv[sel])
        return out

    def fetch_vector(self, uv, sigma):
        """Same as fetch but concatenated into (..., PARAM_DIM) arrays."""
        return params_to_vector(self.fetch(uv, sigma))

    def level_grid_uv(self, level):
        """Texel-center uv coordinates of pyramid level `level`, shape (H,W,2)."""
        h, w = self.pyramid[level]["roughness"].shape
        us = (np.arange(w) + 0.5) / w
        vs = (np.arange(h) + 0.5) / h
        uu, vv = np.meshgrid(us, vs)
        return np.stack([uu, vv], axis=-1)


def params_to_vector(params):
    parts = []
    for name, width in CHANNELS:
        arr = params[name]
        parts.append(arr if width > 1 else arr[..., None])
    return np.concatenate(parts, axis=-1)


def vector_to_params(vec):
    out = {}
    ofs = 0
    for name, width in CHANNELS:
        sl = vec[..., ofs : ofs + width]
        out[name] = sl if width > 1 else sl[..., 0]
        ofs += width
    return out


# ---------------------------------------------------------------------------
# Procedural test textures (the repository ships no binary assets).


def constant_map(res, value):
    value = np.asarray(value, dtype=np.float64)
    if value.ndim == 0:
        return np.full((res, res), float(value))
    return np.tile(value, (res, res, 1))


def checker_map(res, cells, a, b):
    yy, xx = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    mask = ((xx * cells // res) + (yy * cells // res)) % 2 == 1
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 0:
        return np.where(mask, float(b), float(a))
    return np.where(mask[:, :, None], b, a)


def ramp_map(res, lo, hi, axis=0):
    ramp = np.linspace(lo, hi, res)
    grid = np.tile(ramp, (res, 1))
    return grid if axis == 0 else grid.T


def value_noise(res, cells, seed, lo=0.0, hi=1.0):
    """Periodic value noise: random lattice values, smoothstep-interpolated."""
    rng = np.random.default_rng(seed)
    lattice = rng.random((cells, cells))
    ys = np.arange(res) * cells / res
    xs = np.arange(res) * cells / res
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = ys - y0
    fx = xs - x0
    fy = fy * fy * (3 - 2 * fy)
    fx = fx * fx * (3 - 2 * fx)
    y1 = (y0 + 1) % cells
    x1 = (x0 + 1) % cells
    v = (
        lattice[np.ix_(y0, x0)] * (1 - fy)[:, None] * (1 - fx)[None, :]
        + lattice[np.ix_(y0, x1)] * (1 - fy)[:, None] * fx[None, :]
        + lattice[np.ix_(y1, x0)] * fy[:, None] * (1 - fx)[None, :]
        + lattice[np.ix_(y1, x1)] * fy[:, None] * fx[None, :]
    )
    return lo + (hi - lo) * v


def groove_slopes(res, period_texels, amplitude, angle=0.0):
    """Sinusoidal groove normal map stored as surface slopes. Grooves run
    perpendicular to `angle`; slope magnitude peaks at `amplitude`."""
    yy, xx = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    ca, sa = np.cos(angle), np.sin(angle)
    coord = xx * ca + yy * sa
    s = amplitude * np.sin(2.0 * np.pi * coord / period_texels)
    return np.stack([s * ca, s * sa], axis=-1)


def noise_slopes(res, cells, amplitude, seed):
    sx = value_noise(res, cells, seed, -amplitude, amplitude)
    sy = value_noise(res, cells, seed + 1, -amplitude, amplitude)
    return np.stack([sx, sy], axis=-1)
