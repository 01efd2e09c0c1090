"""Minimal conv net with exact backprop: the six layer types needed by the
fusion-weight heads (conv, transposed conv, relu, sigmoid, LRN, bilinear resize).

Tensors are numpy float32 arrays shaped (C, H, W); reductions accumulate in
float64. A Network owns its layers' parameters, gradients and momentum buffers.
"""
from __future__ import annotations

import struct

import numpy as np


class NetworkError(RuntimeError):
    pass


class ShapeMismatchError(NetworkError):
    pass


def _im2col(x, kh, kw, stride, pad, out_h, out_w):
    c = x.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c * kh * kw, out_h * out_w), dtype=x.dtype)
    idx = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                patch = xp[ci, i : i + out_h * stride : stride, j : j + out_w * stride : stride]
                cols[idx] = patch.reshape(-1)
                idx += 1
    return cols


def _col2im(cols, c, h, w, kh, kw, stride, pad, out_h, out_w):
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    idx = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                xp[ci, i : i + out_h * stride : stride, j : j + out_w * stride : stride] += (
                    cols[idx].reshape(out_h, out_w)
                )
                idx += 1
    return xp[:, pad : pad + h, pad : pad + w]


class Layer:
    kind = "layer"

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, kh, kw, cin, cout, stride=1, pad=0, rng=None):
        self.kh, self.kw, self.cin, self.cout = kh, kw, cin, cout
        self.stride, self.pad = stride, pad
        fan_in = cin * kh * kw
        bound = np.sqrt(6.0 / fan_in)
        rng = rng or np.random.default_rng(0)
        self.w = rng.uniform(-bound, bound, size=(cout, cin, kh, kw)).astype(np.float64)
        self.b = np.zeros(cout, dtype=np.float64)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.cin:
            raise ShapeMismatchError(f"conv2d expects {self.cin} channels, got {c}")
        oh = (h + 2 * self.pad - self.kh) // self.stride + 1
        ow = (w + 2 * self.pad - self.kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatchError(f"conv2d output collapses for input {in_shape}")
        return (self.cout, oh, ow)

    def forward(self, x):
        cout, oh, ow = self.out_shape(x.shape)
        cols = _im2col(x, self.kh, self.kw, self.stride, self.pad, oh, ow)
        wmat = self.w.reshape(self.cout, -1)
        y = (wmat.astype(np.float64) @ cols.astype(np.float64)) + self.b[:, None].astype(np.float64)
        self._cache = (x.shape, cols)
        return y.reshape(cout, oh, ow).astype(np.float64)

    def backward(self, dy):
        (in_shape, cols) = self._cache
        c, h, w = in_shape
        oh, ow = dy.shape[1], dy.shape[2]
        dyf = dy.reshape(self.cout, -1).astype(np.float64)
        self.dw += (dyf @ cols.T.astype(np.float64)).reshape(self.w.shape).astype(np.float64)
        self.db += dyf.sum(axis=1).astype(np.float64)
        dcols = self.w.reshape(self.cout, -1).T.astype(np.float64) @ dyf
        dx = _col2im(dcols, c, h, w, self.kh, self.kw, self.stride, self.pad, oh, ow)
        return dx.astype(np.float64)


class Deconv2D(Layer):
    """Transposed convolution: forward is the gradient of Conv2D wrt its input."""

    kind = "deconv2d"

    def __init__(self, kh, kw, cin, cout, stride=2, pad=1, rng=None):
        self.kh, self.kw, self.cin, self.cout = kh, kw, cin, cout
        self.stride, self.pad = stride, pad
        fan_in = cin * kh * kw
        bound = np.sqrt(6.0 / fan_in)
        rng = rng or np.random.default_rng(0)
        # weight layout matches the conv whose input-gradient this computes
        self.w = rng.uniform(-bound, bound, size=(cin, cout, kh, kw)).astype(np.float64)
        self.b = np.zeros(cout, dtype=np.float64)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.cin:
            raise ShapeMismatchError(f"deconv2d expects {self.cin} channels, got {c}")
        oh = (h - 1) * self.stride - 2 * self.pad + self.kh
        ow = (w - 1) * self.stride - 2 * self.pad + self.kw
        if oh < 1 or ow < 1:
            raise ShapeMismatchError(f"deconv2d output collapses for input {in_shape}")
        return (self.cout, oh, ow)

    def forward(self, x):
        cout, oh, ow = self.out_shape(x.shape)
        xf = x.reshape(self.cin, -1).astype(np.float64)
        dcols = self.w.reshape(self.cin, -1).T.astype(np.float64) @ xf
        y = _col2im(dcols, cout, oh, ow, self.kh, self.kw, self.stride, self.pad,
                    x.shape[1], x.shape[2])
        y += self.b[:, None, None].astype(np.float64)
        self._cache = (x, (oh, ow))
        return y.astype(np.float64)

    def backward(self, dy):
        x, (oh, ow) = self._cache
        ih, iw = x.shape[1], x.shape[2]
        cols = _im2col(dy, self.kh, self.kw, self.stride, self.pad, ih, iw)
        xf = x.reshape(self.cin, -1).astype(np.float64)
        self.dw += (xf @ cols.T.astype(np.float64)).reshape(self.w.shape).astype(np.float64)
        self.db += dy.astype(np.float64).sum(axis=(1, 2)).astype(np.float64)
        wmat = self.w.reshape(self.cin, -1).astype(np.float64)
        dx = wmat @ cols.astype(np.float64)
        return dx.reshape(x.shape).astype(np.float64)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0).astype(np.float64)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0).astype(np.float64)

    def out_shape(self, in_shape):
        return in_shape


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        y = 1.0 / (1.0 + np.exp(-x.astype(np.float64)))
        self._y = y
        return y.astype(np.float64)

    def backward(self, dy):
        return (dy.astype(np.float64) * self._y * (1.0 - self._y)).astype(np.float64)

    def out_shape(self, in_shape):
        return in_shape


class LRN(Layer):
    """Across-channel local response normalization, classical constants."""

    kind = "lrn"

    def __init__(self, n=5, alpha=1e-4, beta=0.75, k=2.0):
        self.n, self.alpha, self.beta, self.k = n, alpha, beta, k

    def _window_sum_sq(self, x):
        c = x.shape[0]
        sq = x.astype(np.float64) ** 2
        s = np.zeros_like(sq)
        half = self.n // 2
        for ci in range(c):
            lo, hi = max(0, ci - half), min(c, ci + half + 1)
            s[ci] = sq[lo:hi].sum(axis=0)
        return s

    def forward(self, x):
        s = self._window_sum_sq(x)
        denom = (self.k + self.alpha / self.n * s) ** self.beta
        self._cache = (x.astype(np.float64), s, denom)
        return (x / denom).astype(np.float64)

    def backward(self, dy):
        x, s, denom = self._cache
        dyf = dy.astype(np.float64)
        base = self.k + self.alpha / self.n * s
        # dy/denom  minus the cross-channel coupling term
        direct = dyf / denom
        coup = dyf * x * base ** (-self.beta - 1.0)
        half = self.n // 2
        c = x.shape[0]
        dx = np.array(direct)
        factor = self.beta * 2.0 * self.alpha / self.n
        for ci in range(c):
            lo, hi = max(0, ci - half), min(c, ci + half + 1)
            dx[ci] -= factor * x[ci] * coup[lo:hi].sum(axis=0)
        return dx.astype(np.float64)

    def out_shape(self, in_shape):
        return in_shape


class BilinearResize(Layer):
    """Bilinear resize to a fixed (h, w); linear map, backward is its transpose."""

    kind = "bilinear_resize"

    def __init__(self, out_h, out_w):
        self.out_h, self.out_w = out_h, out_w
        self._weights = None  # (in_h, in_w) -> cached index/weight arrays

    def out_shape(self, in_shape):
        return (in_shape[0], self.out_h, self.out_w)

    def _coeffs(self, n_in, n_out):
        s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        i0 = np.clip(np.floor(s).astype(int), 0, n_in - 1)
        i1 = np.clip(i0 + 1, 0, n_in - 1)
        f = np.clip(s - i0, 0.0, 1.0)
        return i0, i1, f

    def forward(self, x):
        c, h, w = x.shape
        y0, y1, fy = self._coeffs(h, self.out_h)
        x0, x1, fx = self._coeffs(w, self.out_w)
        self._cache = (x.shape, (y0, y1, fy), (x0, x1, fx))
        xf = x.astype(np.float64)
        top = xf[:, y0][:, :, x0] * (1 - fx) + xf[:, y0][:, :, x1] * fx
        bot = xf[:, y1][:, :, x0] * (1 - fx) + xf[:, y1][:, :, x1] * fx
        out = top * (1 - fy[:, None]) + bot * fy[:, None]
        return out.astype(np.float64)

    def backward(self, dy):
        in_shape, (y0, y1, fy), (x0, x1, fx) = self._cache
        c, h, w = in_shape
        dx = np.zeros((c, h, w), dtype=np.float64)
        dyf = dy.astype(np.float64)
        wy = [(y0, 1 - fy), (y1, fy)]
        wx = [(x0, 1 - fx), (x1, fx)]
        for yi, wyv in wy:
            for xi, wxv in wx:
                contrib = dyf * wyv[None, :, None] * wxv[None, None, :]
                np.add.at(dx, (slice(None), yi[:, None], xi[None, :]), contrib)
        return dx.astype(np.float64)


class Network:
    """Ordered layer list with cached forward activations and SGD state."""

    def __init__(self, layers, frozen: bool = False):
        self.layers = list(layers)
        self.frozen = frozen
        self._velocity = [np.zeros_like(p) for layer in self.layers for p in layer.params()]
        self._last_input = None

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def n_params(self):
        return sum(p.size for p in self.params())

    def out_shape(self, in_shape):
        shape = tuple(in_shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ShapeMismatchError as e:
                raise ShapeMismatchError(f"layer {i} ({layer.kind}): {e}") from e
        return shape

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._last_input = x
        for i, layer in enumerate(self.layers):
            try:
                layer.out_shape(x.shape)
            except ShapeMismatchError as e:
                raise ShapeMismatchError(f"layer {i} ({layer.kind}): {e}") from e
            x = layer.forward(x)
        return x

    def backward(self, loss_grad):
        if self._last_input is None:
            raise NetworkError("backward called before forward")
        dy = np.asarray(loss_grad, dtype=np.float64)
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grads(self):
        for g in self.grads():
            g[...] = 0.0

    def sgd_step(self, lr, momentum=0.0, weight_decay=0.0):
        if self.frozen:
            self.zero_grads()
            return
        for v, p, g in zip(self._velocity, self.params(), self.grads()):
            v *= momentum
            v -= lr * (g + weight_decay * p)
            p += v
        self.zero_grads()


def grad_check(net: Network, x, loss_fn=None, eps: float = 1e-4,
               max_params: int = 10000, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn(out) -> (scalar, dloss/dout)`; defaults to 0.5*sum(out^2).
    """
    if loss_fn is None:
        def loss_fn(out):
            o = out.astype(np.float64)
            return 0.5 * float(np.sum(o * o)), out.astype(np.float64)

    out = net.forward(x)
    _, dout = loss_fn(out)
    net.zero_grads()
    net.backward(dout.astype(np.float64))
    analytic = [g.copy() for g in net.grads()]
    net.zero_grads()

    flat = [(pi, idx) for pi, p in enumerate(net.params()) for idx in range(p.size)]
    if len(flat) > max_params:
        rng = np.random.default_rng(seed)
        sel = rng.choice(len(flat), size=max_params, replace=False)
        flat = [flat[i] for i in sel]

    params = net.params()
    max_rel = 0.0
    for pi, idx in flat:
        p = params[pi].reshape(-1)
        orig = p[idx]
        p[idx] = orig + eps
        lp, _ = loss_fn(net.forward(x))
        p[idx] = orig - eps
        lm, _ = loss_fn(net.forward(x))
        p[idx] = orig
        num = (lp - lm) / (2 * eps)
        ana = float(analytic[pi].reshape(-1)[idx])
        denom = max(abs(num), abs(ana), 1e-4)
        max_rel = max(max_rel, abs(num - ana) / denom)
    net.forward(x)  # restore caches for the unperturbed parameters
    return max_rel


_LAYER_TAGS = {"conv2d": 1, "deconv2d": 2, "relu": 3, "sigmoid": 4, "lrn": 5,
               "bilinear_resize": 6}
_MAGIC = b"MFN1"


def save_checkpoint(path, net: Network) -> None:
    """Versioned binary: magic, layer count, then per layer a kind tag,
    int32 LE shape dims and raw float32 parameters."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<i", len(net.layers)))
        for layer in net.layers:
            f.write(struct.pack("<i", _LAYER_TAGS[layer.kind]))
            ps = layer.params()
            f.write(struct.pack("<i", len(ps)))
            for p in ps:
                f.write(struct.pack("<i", p.ndim))
                f.write(struct.pack(f"<{p.ndim}i", *p.shape))
                f.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path, net: Network) -> None:
    """Load parameters into an architecture-compatible network in place."""
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise NetworkError(f"{path}: bad checkpoint magic")
        (n,) = struct.unpack("<i", f.read(4))
        if n != len(net.layers):
            raise NetworkError(f"{path}: layer count {n} != network {len(net.layers)}")
        for layer in net.layers:
            (tag,) = struct.unpack("<i", f.read(4))
            if tag != _LAYER_TAGS[layer.kind]:
                raise NetworkError(f"{path}: layer kind mismatch at {layer.kind}")
            (np_count,) = struct.unpack("<i", f.read(4))
            ps = layer.params()
            if np_count != len(ps):
                raise NetworkError(f"{path}: parameter count mismatch at {layer.kind}")
            for p in ps:
                (nd,) = struct.unpack("<i", f.read(4))
                shape = struct.unpack(f"<{nd}i", f.read(4 * nd))
                if tuple(shape) != p.shape:
                    raise NetworkError(f"{path}: shape {shape} != {p.shape}")
                data = np.frombuffer(f.read(4 * int(np.prod(shape))), dtype="<f4")
                p[...] = data.reshape(shape)
