"""Minimal fully-connected network engine.

Master parameters are float32; forward/backward operate on batches (rows are
samples) and backward returns exact reverse-mode gradients. Post-training
quantization produces a QuantizedMlp whose float16 weights are packed
contiguously in forward-pass access order (layer by layer, one output neuron
row plus its bias at a time); its fused forward path walks that buffer in one
call per batch, accumulating in float32.
"""

import io
import struct

import numpy as np

LEAKY_SLOPE = 0.01
FP16_MAX = 65504.0

ACT_LINEAR = "linear"
ACT_LEAKY = "leaky_relu"
_ACT_CODES = {ACT_LINEAR: 0, ACT_LEAKY: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

_MAGIC = b"NMWB0001"


def _apply_act(x, act):
    if act == ACT_LINEAR:
        return x
    return np.where(x >= 0.0, x, LEAKY_SLOPE * x)


def _act_grad(pre, act):
    if act == ACT_LINEAR:
        return 1.0
    return np.where(pre >= 0.0, 1.0, LEAKY_SLOPE)


class Layer:
    __slots__ = ("w", "b", "act")

    def __init__(self, w, b, act):
        self.w = np.ascontiguousarray(w, dtype=np.float32)
        self.b = np.ascontiguousarray(b, dtype=np.float32)
        if act not in _ACT_CODES:
            raise ValueError(f"unknown activation {act!r}")
        self.act = act


class Mlp:
    def __init__(self, layers):
        self.layers = layers
        for a, b in zip(layers, layers[1:]):
            if b.w.shape[1] != a.w.shape[0]:
                raise ValueError("layer dimensions do not chain")

    @classmethod
    def create(cls, sizes, rng, hidden_act=ACT_LEAKY, out_act=ACT_LINEAR,
               weight_scale=1.0):
        """He-style fan-in uniform initialization; `sizes` runs from the
        input width through hidden widths to the output width."""
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            bound = weight_scale * np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = np.zeros(fan_out)
            act = out_act if i == len(sizes) - 2 else hidden_act
            layers.append(Layer(w, b, act))
        return cls(layers)

    @property
    def in_dim(self):
        return self.layers[0].w.shape[1]

    @property
    def out_dim(self):
        return self.layers[-1].w.shape[0]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float32)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got {x.shape[1]}")
        for layer in self.layers:
            x = _apply_act(x @ layer.w.T + layer.b, layer.act)
        return x[0] if squeeze else x

    def forward_cached(self, x):
        """Forward pass that keeps pre-activations for backward()."""
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError("forward_cached expects a (batch, in_dim) array")
        inputs = [x]
        pres = []
        for layer in self.layers:
            pre = inputs[-1] @ layer.w.T + layer.b
            pres.append(pre)
            inputs.append(_apply_act(pre, layer.act))
        return inputs[-1], (inputs, pres)

    def backward(self, cache, out_grad):
        """Gradients of sum(out * out_grad): returns ([(dW, db), ...], dx)."""
        inputs, pres = cache
        out_grad = np.asarray(out_grad, dtype=np.float32)
        if out_grad.shape != pres[-1].shape:
            raise ValueError("output gradient shape mismatch")
        grads = [None] * len(self.layers)
        g = out_grad
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = g * _act_grad(pres[i], layer.act)
            grads[i] = (g.T @ inputs[i], g.sum(axis=0))
            g = g @ layer.w
        return grads, g

    def param_arrays(self):
        out = []
        for layer in self.layers:
            out.append(layer.w)
            out.append(layer.b)
        return out

    def copy(self):
        return Mlp([Layer(l.w.copy(), l.b.copy(), l.act) for l in self.layers])


class AdamState:
    """Standard Adam with bias correction over a list of parameter arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params, grads, lr_scale=1.0):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        lr = self.lr * lr_scale
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = np.asarray(g, dtype=np.float32)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(net, grads, state, lr_scale=1.0):
    """Apply one Adam update to a network given backward()'s gradient list."""
    flat = []
    for dw, db in grads:
        flat.append(dw)
        flat.append(db)
    state.step(net.param_arrays(), flat, lr_scale)


class QuantizedMlp:
    """Float16 network with weights packed in access order.

    The packed buffer holds, per layer, each output neuron's weight row
    followed by its bias. A float32 dequantized copy is cached for the fused
    batched path: float16 -> float32 conversion is exact, so accumulating in
    float32 matches mixed-precision multiply-accumulate semantics.
    """

    def __init__(self, shapes, acts, packed, clamped=0):
        self.shapes = shapes  # list of (out, in)
        self.acts = acts
        self.packed = packed  # float16, access order
        self.clamped = clamped  # number of values clamped to the FP16 range
        self._views = self._unpack()

    def _unpack(self):
        views = []
        ofs = 0
        for out, fan_in in self.shapes:
            rows = self.packed[ofs : ofs + out * (fan_in + 1)]
            rows = rows.reshape(out, fan_in + 1)
            views.append((rows[:, :fan_in].astype(np.float32),
                          rows[:, fan_in].astype(np.float32)))
            ofs += out * (fan_in + 1)
        return views

    @property
    def in_dim(self):
        return self.shapes[0][1]

    def fused_forward(self, x):
        """Single-pass batched evaluation over the packed weights. The input
        is rounded to float16 once; accumulation stays in float32."""
        x = np.asarray(x)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got {x.shape[1]}")
        x = x.astype(np.float16).astype(np.float32)
        for (w, b), act in zip(self._views, self.acts):
            x = _apply_act(x @ w.T + b, act)
        return x[0] if squeeze else x

    def dequantize(self):
        return Mlp([Layer(w, b, a) for (w, b), a in zip(self._views, self.acts)])


def quantize(net):
    """Round-to-nearest-even FP16 conversion with packed access-order layout.

    Values outside the FP16 range are clamped to +-65504 and counted rather
    than raised; the count is exposed on the result.
    """
    pieces = []
    shapes = []
    acts = []
    clamped = 0
    for layer in net.layers:
        out, fan_in = layer.w.shape
        shapes.append((out, fan_in))
        acts.append(layer.act)
        block = np.concatenate([layer.w, layer.b[:, None]], axis=1)
        over = np.abs(block) > FP16_MAX
        clamped += int(np.count_nonzero(over))
        block = np.clip(block, -FP16_MAX, FP16_MAX)
        pieces.append(block.astype(np.float16).reshape(-1))
    return QuantizedMlp(shapes, acts, np.concatenate(pieces), clamped)


# ---------------------------------------------------------------------------
# Weight blob: magic, architecture header, FP32 master section, FP16 packed
# section; everything little-endian.


def write_blob(stream, net):
    q = quantize(net)
    stream.write(_MAGIC)
    stream.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        out, fan_in = layer.w.shape
        stream.write(struct.pack("<IIB", fan_in, out, _ACT_CODES[layer.act]))
    for layer in net.layers:
        stream.write(layer.w.astype("<f4").tobytes())
        stream.write(layer.b.astype("<f4").tobytes())
    stream.write(q.packed.astype("<f2").tobytes())


def read_blob(stream):
    magic = stream.read(8)
    if magic != _MAGIC:
        raise ValueError("not a weight blob")
    (n_layers,) = struct.unpack("<I", stream.read(4))
    specs = []
    for _ in range(n_layers):
        fan_in, out, act = struct.unpack("<IIB", stream.read(9))
        specs.append((fan_in, out, _ACT_NAMES[act]))
    layers = []
    for fan_in, out, act in specs:
        w = np.frombuffer(stream.read(4 * out * fan_in), dtype="<f4").copy()
        b = np.frombuffer(stream.read(4 * out), dtype="<f4").copy()
        layers.append(Layer(w.reshape(out, fan_in), b, act))
    n_packed = sum((fi + 1) * o for fi, o, _ in specs)
    packed = np.frombuffer(stream.read(2 * n_packed), dtype="<f2").astype(np.float16)
    net = Mlp(layers)
    qnet = QuantizedMlp([(o, fi) for fi, o, _ in specs],
                        [a for _, _, a in specs], packed)
    return net, qnet


def blob_bytes(net):
    buf = io.BytesIO()
    write_blob(buf, net)
    return buf.getvalue()


def blob_from_bytes(data):
    return read_blob(io.BytesIO(data))
