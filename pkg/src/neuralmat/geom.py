"""Vector math, shading frames, and spherical sampling primitives.

Directions are numpy arrays with a trailing axis of size 3, expressed in a
local shading space where the geometric normal points along +z. Every routine
is vectorized over leading axes and is a pure function, safe to call
concurrently.
"""

import numpy as np

UNIT_TOL = 1e-6
DEGENERATE_TOL = 1e-8


class DegenerateFrameError(ValueError):
    """Raised when a frame is requested for (numerically) parallel vectors."""


def norm(v):
    return np.linalg.norm(v, axis=-1)


def normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def dot(a, b):
    return np.sum(a * b, axis=-1)


def reflect(w, m):
    """Mirror direction w about axis m (both pointing away from the surface)."""
    return 2.0 * dot(w, m)[..., None] * m - w


class Frame:
    """A (tangent, bitangent, normal) basis.

    The bitangent is always unit length and perpendicular to both inputs by
    construction; the tangent is normalized but not re-orthogonalized against
    the normal unless `orthonormal_frame` was used.
    """

    __slots__ = ("t", "b", "n")

    def __init__(self, t, b, n):
        self.t = t
        self.b = b
        self.n = n

    def to_local(self, w):
        return np.stack([dot(w, self.t), dot(w, self.b), dot(w, self.n)], axis=-1)

    def to_world(self, w):
        return (
            w[..., 0:1] * self.t + w[..., 1:2] * self.b + w[..., 2:3] * self.n
        )


def build_frame(n, t):
    """Build (normalize(t), n×t/|n×t|, normalize(n)).

    The tangent keeps its component along the normal; only the bitangent is
    guaranteed orthogonal to both. Raises DegenerateFrameError when n and t
    are parallel within tolerance.
    """
    n = np.asarray(n, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    c = np.cross(n, t)
    cl = norm(c)
    if np.any(cl <= DEGENERATE_TOL):
        raise DegenerateFrameError("normal and tangent are parallel")
    return Frame(normalize(t), c / cl[..., None], normalize(n))


def orthonormal_frame(n, t):
    """Like build_frame but with the tangent re-orthogonalized (t = b×n)."""
    f = build_frame(n, t)
    return Frame(np.cross(f.b, f.n), f.b, f.n)


def fallback_tangent(n):
    """Deterministic tangent for a lone normal: n × e with e the axis least
    aligned with n."""
    n = np.asarray(n, dtype=np.float64)
    idx = np.argmin(np.abs(n), axis=-1)
    e = np.zeros_like(n)
    np.put_along_axis(e, idx[..., None], 1.0, axis=-1)
    return normalize(np.cross(n, e))


def frame_from_normal(n):
    return orthonormal_frame(n, fallback_tangent(n))


def sample_cosine_hemisphere(u):
    """Map u in [0,1)^2 to a cosine-distributed direction (density cos(theta)/pi).

    Polar mapping: theta = acos(sqrt(1-u1)), phi = 2*pi*u2.
    """
    u = np.asarray(u, dtype=np.float64)
    cos_t = np.sqrt(1.0 - u[..., 0])
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * np.pi * u[..., 1]
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def cosine_hemisphere_pdf(w):
    return np.maximum(np.asarray(w)[..., 2], 0.0) / np.pi


def sample_uniform_hemisphere(u):
    """Uniform solid-angle sampling of the upper hemisphere (density 1/2pi)."""
    u = np.asarray(u, dtype=np.float64)
    z = 1.0 - u[..., 0]
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * u[..., 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def sample_uniform_sphere(u):
    u = np.asarray(u, dtype=np.float64)
    z = 1.0 - 2.0 * u[..., 0]
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * u[..., 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def sample_uniform_cone(u, cos_max):
    """Uniform direction within a cone of half-angle acos(cos_max) about +z."""
    u = np.asarray(u, dtype=np.float64)
    z = 1.0 - u[..., 0] * (1.0 - cos_max)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * u[..., 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def half_diff_pair(u):
    """Deterministic core of half/difference direction sampling.

    The half vector is drawn uniformly over the upper hemisphere from
    (u1, u2); the difference vector uniformly over the hemisphere around the
    half vector from (u3, u4). Returns (wi, wo) with wi rotated into the half
    vector's frame and wo its mirror image; either may lie below the horizon.
    """
    u = np.asarray(u, dtype=np.float64)
    h = sample_uniform_hemisphere(u[..., 0:2])
    d = sample_uniform_hemisphere(u[..., 2:4])
    wi = frame_from_normal(h).to_world(d)
    wo = reflect(wi, h)
    return wi, wo


def sample_half_diff(rng, n):
    """Draw n direction pairs via half/difference vectors, rejecting pairs
    where either direction falls below the horizon and redrawing.

    Draws are oversampled (acceptance is around one half) so the rejection
    loop usually completes in one or two rounds."""
    wi = np.empty((n, 3))
    wo = np.empty((n, 3))
    filled = 0
    while filled < n:
        want = n - filled
        m = max(64, int(2.3 * want))
        a, b = half_diff_pair(rng.random((m, 4)))
        ok = (a[:, 2] > 0.0) & (b[:, 2] > 0.0)
        take = min(int(ok.sum()), want)
        sel = np.flatnonzero(ok)[:take]
        wi[filled:filled + take] = a[sel]
        wo[filled:filled + take] = b[sel]
        filled += take
    return wi, wo


def luminance(rgb):
    """Rec. 709 luminance of linear RGB."""
    rgb = np.asarray(rgb)
    return (
        0.2126 * rgb[..., 0] + 0.7152 * rgb[..., 1] + 0.0722 * rgb[..., 2]
    )
