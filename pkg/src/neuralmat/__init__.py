"""neuralmat: bake layered analytic SVBRDFs into compact neural materials
(latent mip pyramid + small MLP decoders with learned shading frames and an
analytic microfacet sampling proxy) and render them in a CPU path tracer
with quantized, fused MLP inference."""

from . import chi2, geom, latent, material, mlp, neural, pfm, proxy, render, \
    texture, training

__all__ = [
    "chi2", "geom", "latent", "material", "mlp", "neural", "pfm", "proxy",
    "render", "texture", "training",
]

__version__ = "0.1.0"
