"""Analytic two-lobe importance distribution driven by nine parameters.

The density blends a cosine lobe tilted by a predicted surface slope with a
specular term built from the unit-roughness Trowbridge-Reitz half-vector
density warped by a slope-space matrix M (elliptical anisotropy alpha_x,
alpha_y with correlation rho, mean slope offset mu_s):

    p(wo) = w_d * p_d(wo) + w_s * p_s(wo),  w_d + w_s = 1
    p_s(wo) = D_std(M^-1 wh / |M^-1 wh|) * det(M^-1)/|M^-1 wh|^3
              * 1 / (4 |wo . wh|)

with wh the half vector and D_std(m) = max(m_z, 0)/pi (the unit-roughness
NDF times cosine). The last two factors are the Jacobians of the normalized
matrix warp and of the half-vector-to-outgoing-direction reflection. Because
the warp preserves the sign of m_z, p_s is normalized over the full sphere
of reflected directions; the tilted cosine lobe is normalized over its own
hemisphere and may leak below the geometric horizon (the renderer rejects
those samples instead of renormalizing).

Sampling draws the lobe from (w_d, w_s); the diffuse lobe uses the
sphere-offset form of cosine sampling (normalize(n_d + uniform sphere
point)), the specular lobe reflects about wh = normalize(M W_std(u)) where
W_std is plain NDF sampling of the unit-roughness distribution. Both maps
are smooth in the parameters, and their Jacobians are exposed for
reparameterized gradient training.
"""

import numpy as np

from . import geom

ALPHA_FLOOR = 1e-4
RHO_CLAMP = np.sqrt(1.0 - 1e-4)
_TINY = 1e-30


class ProxyParams:
    """Batched sampler parameters; all fields share the leading batch shape."""

    __slots__ = ("wd", "ws", "mu_d", "alpha", "rho", "mu_s")

    def __init__(self, wd, ws, mu_d, alpha, rho, mu_s):
        self.wd = np.atleast_1d(np.asarray(wd, dtype=np.float64))
        self.ws = np.atleast_1d(np.asarray(ws, dtype=np.float64))
        self.mu_d = np.atleast_2d(np.asarray(mu_d, dtype=np.float64))
        alpha = np.atleast_2d(np.asarray(alpha, dtype=np.float64))
        self.alpha = np.maximum(alpha, ALPHA_FLOOR)
        rho = np.atleast_1d(np.asarray(rho, dtype=np.float64))
        self.rho = np.clip(rho, -RHO_CLAMP, RHO_CLAMP)
        self.mu_s = np.atleast_2d(np.asarray(mu_s, dtype=np.float64))

    def __len__(self):
        return self.wd.shape[0]

    def take(self, idx):
        return ProxyParams(self.wd[idx], self.ws[idx], self.mu_d[idx],
                           self.alpha[idx], self.rho[idx], self.mu_s[idx])

    @property
    def s(self):
        """sqrt(1 - rho^2), floored via the rho clamp."""
        return np.sqrt(1.0 - self.rho**2)

    def matrix(self):
        """The 3x3 slope warp M per batch entry."""
        b = self.wd.shape[0]
        m = np.zeros((b, 3, 3))
        m[:, 0, 0] = self.alpha[:, 0]
        m[:, 0, 2] = -self.mu_s[:, 0]
        m[:, 1, 0] = self.alpha[:, 1] * self.rho
        m[:, 1, 1] = self.alpha[:, 1] * self.s
        m[:, 1, 2] = -self.mu_s[:, 1]
        m[:, 2, 2] = 1.0
        return m

    def det(self):
        """det(M) = alpha_x * alpha_y * sqrt(1 - rho^2)."""
        return self.alpha[:, 0] * self.alpha[:, 1] * self.s

    def diffuse_normal(self):
        v = np.stack(
            [-self.mu_d[:, 0], -self.mu_d[:, 1], np.ones_like(self.wd)], axis=-1
        )
        return geom.normalize(v)


def _half_vectors(wi, wo):
    """Half vector flipped into the upper hemisphere.

    reflect(wi, .) maps the upper half-vector hemisphere bijectively onto the
    full outgoing sphere; recomputing the half vector from (wi, wo) can land
    on the antipode (when h.wi < 0), so it is flipped back. This keeps pdf()
    equal to the exact density of sample() everywhere and normalized over the
    sphere. Returns (h, sign, valid)."""
    h = wi + wo
    hl = np.sqrt(np.einsum("...i,...i->...", h, h))
    ok = hl > 1e-9
    h /= np.maximum(hl, 1e-12)[..., None]
    s = np.where(h[..., 2] < 0.0, -1.0, 1.0)
    h *= s[..., None]
    return h, s, ok


def _q_vector(params, h):
    """q = M^-1 h, using the closed form of the inverse."""
    ax = params.alpha[:, 0]
    ay = params.alpha[:, 1]
    s = params.s
    p = (h[:, 0] + params.mu_s[:, 0] * h[:, 2]) / ax
    q2 = ((h[:, 1] + params.mu_s[:, 1] * h[:, 2]) / ay - params.rho * p) / s
    return np.stack([p, q2, h[:, 2]], axis=-1)


def pdf_diffuse(params, wo):
    nd = params.diffuse_normal()
    return np.maximum(geom.dot(wo, nd), 0.0) / np.pi


def pdf_specular(params, wi, wo):
    h, _, ok = _half_vectors(wi, wo)
    q = _q_vector(params, h)
    qn2 = np.einsum("...i,...i->...", q, q)
    cos_oh = np.abs(np.einsum("...i,...i->...", wo, h))
    det_inv = 1.0 / params.det()
    val = h[:, 2] * det_inv / (4.0 * np.pi * qn2 * qn2 * np.maximum(cos_oh, 1e-12))
    return np.where(ok & (h[:, 2] > 0.0), np.maximum(val, 0.0), 0.0)


def pdf(params, wi, wo):
    """Mixture density; wi conditions the specular term only."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    return params.wd * pdf_diffuse(params, wo) + params.ws * pdf_specular(
        params, wi, wo
    )


def sample_w_std(u):
    """Unit-roughness NDF sampling, density max(m_z,0)/pi (slope-space
    inverse CDF: tan^2 theta = u / (1 - u))."""
    u = np.asarray(u, dtype=np.float64)
    tan2 = u[..., 0] / np.maximum(1.0 - u[..., 0], 1e-12)
    cos_t = 1.0 / np.sqrt(1.0 + tan2)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * np.pi * u[..., 1]
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def sample_diffuse(params, u2):
    """Tilted cosine sample with smooth dependence on the tilt: the offset
    sphere point construction. Returns (wo, aux) for Jacobians."""
    v = geom.sample_uniform_sphere(u2)
    g = params.diffuse_normal() + v
    gl = np.linalg.norm(g, axis=-1, keepdims=True)
    gl = np.maximum(gl, 1e-9)
    return g / gl, {"g_len": gl[..., 0], "v": v}


def sample_specular(params, wi, u2):
    m = sample_w_std(u2)
    g = np.einsum("bij,bj->bi", params.matrix(), m)
    gl = np.linalg.norm(g, axis=-1, keepdims=True)
    h = g / np.maximum(gl, 1e-12)
    wo = geom.reflect(wi, h)
    return wo, {"m": m, "h": h, "g_len": gl[..., 0]}


def sample(params, wi, u):
    """Map u in [0,1)^3 to an outgoing direction: u1 picks the lobe, the
    rest drive it. The result may lie below the horizon (callers reject)."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    pick_d = u[:, 0] < params.wd
    wo = np.empty_like(wi)
    if np.any(pick_d):
        wo[pick_d] = sample_diffuse(params.take(pick_d), u[pick_d, 1:3])[0]
    if np.any(~pick_d):
        sub = ~pick_d
        wo[sub] = sample_specular(params.take(sub), wi[sub], u[sub, 1:3])[0]
    return wo


def normalize_check(params, wi, n_samples, rng, chunk=2_000_000):
    """MC estimate of the full-sphere integral of pdf via uniform-sphere
    sampling; should be 1 up to the tilted-lobe leakage policy."""
    total = 0.0
    done = 0
    if len(params) != 1:
        raise ValueError("normalize_check expects a single parameter set")
    while done < n_samples:
        m = min(chunk, n_samples - done)
        d = geom.sample_uniform_sphere(rng.random((m, 2)))
        # batch-1 parameter fields broadcast against the direction batch
        total += np.sum(pdf(params, np.broadcast_to(wi, (m, 3)), d))
        done += m
    return float(total * 4.0 * np.pi / n_samples)


# ---------------------------------------------------------------------------
# Derivatives used by the reparameterized sampler loss.


def grad_log_pdf_wo(params, wi, wo):
    """(pdf, d log pdf / d wo). The diffuse kink at its horizon and the
    specular half-vector guard use subgradient zero."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    nd = params.diffuse_normal()
    pd = np.maximum(geom.dot(wo, nd), 0.0) / np.pi
    dpd = np.where((geom.dot(wo, nd) > 0.0)[..., None], nd / np.pi, 0.0)

    h, flip, ok = _half_vectors(wi, wo)
    hz_ok = ok & (h[:, 2] > 0.0)
    q = _q_vector(params, h)
    qn2 = np.maximum(np.sum(q * q, axis=-1), _TINY)
    cos_oh = geom.dot(wo, h)  # signed; |cos_oh| enters the value
    ps = np.where(
        hz_ok,
        h[:, 2] / (params.det() * 4.0 * np.pi * qn2 * qn2 * np.maximum(np.abs(cos_oh), 1e-12)),
        0.0,
    )

    # d log ps / dh = e3/h3 - 4 M^-T q / |q|^2 - wo/(wo.h)
    ax = params.alpha[:, 0]
    ay = params.alpha[:, 1]
    s = params.s
    mtq = np.empty_like(h)
    mtq[:, 0] = q[:, 0] / ax - q[:, 1] * params.rho / (ax * s)
    mtq[:, 1] = q[:, 1] / (ay * s)
    mtq[:, 2] = (
        q[:, 0] * params.mu_s[:, 0] / ax
        + q[:, 1] * (params.mu_s[:, 1] / (ay * s) - params.mu_s[:, 0] * params.rho / (ax * s))
        + q[:, 2]
    )
    inv_coh = 1.0 / np.where(np.abs(cos_oh) < 1e-12, np.inf, cos_oh)
    dlog_dh = (
        np.stack([np.zeros_like(ps), np.zeros_like(ps), 1.0 / np.maximum(h[:, 2], 1e-12)], axis=-1)
        - 4.0 * mtq / qn2[:, None]
        - wo * inv_coh[:, None]
    )
    wsum = wi + wo
    wsum_len = np.maximum(np.linalg.norm(wsum, axis=-1), 1e-12)
    # dh/dwo = flip * (I - h h^T) / |wi+wo| (the flip sign is locally constant)
    proj = dlog_dh - h * geom.dot(h, dlog_dh)[:, None]
    dlog_ps_dwo = flip[:, None] * proj / wsum_len[:, None] - h * inv_coh[:, None]
    dps = np.where(hz_ok[:, None], ps[:, None] * dlog_ps_dwo, 0.0)

    p = params.wd * pd + params.ws * ps
    dp = params.wd[:, None] * dpd + params.ws[:, None] * dps
    return p, dp / np.maximum(p, _TINY)[:, None]


def diffuse_sample_jacobian(params, wo, aux):
    """d wo / d mu_d for the offset-sphere diffuse sample map, (B, 3, 2)."""
    nd = params.diffuse_normal()
    vlen = np.sqrt(1.0 + np.sum(params.mu_d**2, axis=-1))
    # d nd / d mu: project (-e_k) onto nd's tangent plane, scale by 1/|v|
    dnd = np.zeros(nd.shape + (2,))
    for k in range(2):
        e = np.zeros_like(nd)
        e[:, k] = -1.0
        dnd[..., k] = (e - nd * geom.dot(nd, e)[:, None]) / vlen[:, None]
    # d wo / d nd = (I - wo wo^T) / |g|
    gl = aux["g_len"][:, None]
    dwo = (dnd - wo[..., None] * np.sum(wo[..., None] * dnd, axis=1)[:, None, :]) / gl[..., None]
    return dwo


def specular_sample_jacobian(params, wi, wo, aux):
    """d wo / d (alpha_x, alpha_y, rho, mu_sx, mu_sy), shape (B, 3, 5)."""
    m = aux["m"]
    h = aux["h"]
    gl = aux["g_len"]
    ay = params.alpha[:, 1]
    s = params.s
    dg = np.zeros(m.shape + (5,))
    dg[:, 0, 0] = m[:, 0]                       # d/d alpha_x
    dg[:, 1, 1] = params.rho * m[:, 0] + s * m[:, 1]  # d/d alpha_y
    dg[:, 1, 2] = ay * (m[:, 0] - params.rho * m[:, 1] / s)  # d/d rho
    dg[:, 0, 3] = -m[:, 2]                      # d/d mu_sx
    dg[:, 1, 4] = -m[:, 2]                      # d/d mu_sy
    # dh = (I - h h^T) dg / |g|
    hdotdg = np.sum(h[..., None] * dg, axis=1)
    dh = (dg - h[..., None] * hdotdg[:, None, :]) / gl[:, None, None]
    # dwo = 2 h (wi . dh) + 2 (wi . h) dh
    widotdh = np.sum(wi[..., None] * dh, axis=1)
    wih = geom.dot(wi, h)
    return 2.0 * h[..., None] * widotdh[:, None, :] + 2.0 * wih[:, None, None] * dh
