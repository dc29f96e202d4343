"""Layer kernels with explicit forward and backward passes.

There is no autodiff here: each layer caches exactly what its backward
needs and accumulates parameter gradients in place. Weights default to
float32 (switchable to float64 for gradient checking); gate parameters
and everything derived from them stay in float64 so penalty sums over
~1e5 gates do not lose precision.
"""

import numpy as np

from .errors import LayerStateError, NumericError, ShapeError
from .hardconcrete import (
    OPEN_GATE_LOG_ALPHA,
    GateHyper,
    GateParams,
    deterministic_gate,
    gate_sample_gradient,
    sample_gate,
)

STOCHASTIC = "stochastic"
DETERMINISTIC = "deterministic"


def he_uniform(rng, shape, fan_in, dtype):
    """He/Kaiming uniform init, the standard choice ahead of ReLU."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _require_finite(what, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite values in {what}")


def _as_2d(x, in_dim, dtype, what):
    x = np.ascontiguousarray(x, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ShapeError(f"{what}: input shape {x.shape} incompatible with ({'batch'}, {in_dim})")
    return x


class DenseLayer:
    """Affine map y = x W^T + b with W of shape [out, in]."""

    kind = "dense"

    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.dtype = np.dtype(dtype)
        if rng is None:
            self.W = np.zeros((self.out_dim, self.in_dim), dtype=self.dtype)
        else:
            self.W = he_uniform(rng, (self.out_dim, self.in_dim), self.in_dim, self.dtype)
        self.b = np.zeros(self.out_dim, dtype=self.dtype)
        self.grad_W = np.zeros_like(self.W)
        self.grad_b = np.zeros_like(self.b)
        self._x = None

    def forward(self, x):
        x = _as_2d(x, self.in_dim, self.dtype, "dense forward")
        self._x = x
        y = x @ self.W.T + self.b
        _require_finite("dense forward output", y)
        return y

    def backward(self, upstream):
        if self._x is None:
            raise LayerStateError("dense backward called before forward")
        upstream = np.ascontiguousarray(upstream, dtype=self.dtype)
        expected = (self._x.shape[0], self.out_dim)
        if upstream.shape != expected:
            raise ShapeError(f"dense backward: upstream shape {upstream.shape} != {expected}")
        self.grad_W += upstream.T @ self._x
        self.grad_b += upstream.sum(axis=0)
        dx = upstream @ self.W
        _require_finite("dense backward", dx, self.grad_W, self.grad_b)
        return dx

    def zero_grad(self):
        self.grad_W[...] = 0
        self.grad_b[...] = 0

    def params(self):
        yield "W", self.W, self.grad_W
        yield "b", self.b, self.grad_b

    def descriptor(self):
        return {"kind": self.kind, "in": self.in_dim, "out": self.out_dim}


class L0DenseLayer:
    """Dense layer with a hard concrete gate on every weight.

    Gates multiply weights elementwise; biases are never gated. Stochastic
    mode needs one uniform draw per gate and keeps the realized mask for
    the backward pass; deterministic mode is the zero-noise estimator and
    is a pure function of (weights, gates, input).
    """

    kind = "l0_dense"

    def __init__(self, in_dim, out_dim, hyper=None, rng=None, dtype=np.float32,
                 gate_init_mean=OPEN_GATE_LOG_ALPHA, gate_init_sd=0.01):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.dtype = np.dtype(dtype)
        hyper = hyper if hyper is not None else GateHyper()
        shape = (self.out_dim, self.in_dim)
        if rng is None:
            self.W = np.zeros(shape, dtype=self.dtype)
            log_alpha = np.full(shape, float(gate_init_mean))
        else:
            self.W = he_uniform(rng, shape, self.in_dim, self.dtype)
            log_alpha = rng.normal(float(gate_init_mean), float(gate_init_sd), size=shape)
        self.b = np.zeros(self.out_dim, dtype=self.dtype)
        self.gates = GateParams(log_alpha, hyper)
        self.grad_W = np.zeros_like(self.W)
        self.grad_b = np.zeros_like(self.b)
        self.grad_log_alpha = np.zeros(shape, dtype=np.float64)
        self.mode = STOCHASTIC
        self._x = None
        self._z = None
        self._u = None
        self._w_eff = None

    @property
    def gate_count(self):
        return self.gates.count

    def forward(self, x, u=None):
        x = _as_2d(x, self.in_dim, self.dtype, "l0_dense forward")
        if self.mode == STOCHASTIC:
            if u is None:
                raise LayerStateError("stochastic forward needs one uniform draw per gate")
            u = np.asarray(u, dtype=np.float64)
            if u.size != self.W.size:
                raise ShapeError(
                    f"l0_dense forward: {u.size} noise draws for {self.W.size} gates"
                )
            u = u.reshape(self.W.shape)
            z = sample_gate(self.gates.log_alpha, self.gates.hyper, u)
        else:
            if u is not None:
                raise LayerStateError("deterministic forward takes no gate noise")
            z = deterministic_gate(self.gates.log_alpha, self.gates.hyper)
        self._x = x
        self._z = z
        self._u = u
        self._w_eff = (self.W * z).astype(self.dtype, copy=False)
        y = x @ self._w_eff.T + self.b
        _require_finite("l0_dense forward output", y)
        return y

    def backward(self, upstream):
        if self._x is None:
            raise LayerStateError("l0_dense backward called before forward")
        upstream = np.ascontiguousarray(upstream, dtype=self.dtype)
        expected = (self._x.shape[0], self.out_dim)
        if upstream.shape != expected:
            raise ShapeError(f"l0_dense backward: upstream shape {upstream.shape} != {expected}")
        d_w_eff = upstream.T @ self._x
        self.grad_W += (d_w_eff * self._z).astype(self.dtype, copy=False)
        if self._u is not None:
            dz = gate_sample_gradient(self.gates.log_alpha, self.gates.hyper, self._u)
            self.grad_log_alpha += d_w_eff.astype(np.float64) * self.W.astype(np.float64) * dz
        self.grad_b += upstream.sum(axis=0)
        dx = upstream @ self._w_eff
        _require_finite("l0_dense backward", dx, self.grad_W, self.grad_b, self.grad_log_alpha)
        return dx

    def zero_grad(self):
        self.grad_W[...] = 0
        self.grad_b[...] = 0
        self.grad_log_alpha[...] = 0

    def params(self):
        yield "W", self.W, self.grad_W
        yield "b", self.b, self.grad_b
        yield "log_alpha", self.gates.log_alpha, self.grad_log_alpha

    def descriptor(self):
        return {"kind": self.kind, "in": self.in_dim, "out": self.out_dim}


def _stride_pair(stride):
    if np.isscalar(stride):
        return int(stride), int(stride)
    sh, sw = stride
    return int(sh), int(sw)


class ConvLayer:
    """2-D cross-correlation with bias, via im2col + one BLAS matmul."""

    kind = "conv"

    def __init__(self, in_channels, filters, kh, kw, stride=1, padding="valid",
                 rng=None, dtype=np.float32):
        if padding not in ("valid", "same"):
            raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.kh = int(kh)
        self.kw = int(kw)
        self.stride = _stride_pair(stride)
        self.padding = padding
        self.dtype = np.dtype(dtype)
        kshape = (self.filters, self.in_channels, self.kh, self.kw)
        fan_in = self.in_channels * self.kh * self.kw
        if rng is None:
            self.kernels = np.zeros(kshape, dtype=self.dtype)
        else:
            self.kernels = he_uniform(rng, kshape, fan_in, self.dtype)
        self.b = np.zeros(self.filters, dtype=self.dtype)
        self.grad_kernels = np.zeros_like(self.kernels)
        self.grad_b = np.zeros_like(self.b)
        self._cache = None

    def _pad_amounts(self, h, w):
        sh, sw = self.stride
        if self.padding == "valid":
            return (0, 0), (0, 0)
        oh = -(-h // sh)
        ow = -(-w // sw)
        ph = max((oh - 1) * sh + self.kh - h, 0)
        pw = max((ow - 1) * sw + self.kw - w, 0)
        return (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)

    def output_shape(self, h, w):
        (pt, pb), (pl, pr) = self._pad_amounts(h, w)
        sh, sw = self.stride
        oh = (h + pt + pb - self.kh) // sh + 1
        ow = (w + pl + pr - self.kw) // sw + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv: kernel {self.kh}x{self.kw} larger than padded input {h}x{w}"
            )
        return oh, ow

    def forward(self, x):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv forward: input shape {x.shape} incompatible with "
                f"(batch, {self.in_channels}, h, w)"
            )
        n, _, h, w = x.shape
        (pt, pb), (pl, pr) = self._pad_amounts(h, w)
        oh, ow = self.output_shape(h, w)
        sh, sw = self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x
        win = np.lib.stride_tricks.sliding_window_view(xp, (self.kh, self.kw), axis=(2, 3))
        win = win[:, :, ::sh, ::sw]  # [n, c, oh, ow, kh, kw]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            n * oh * ow, self.in_channels * self.kh * self.kw
        )
        k2 = self.kernels.reshape(self.filters, -1)
        y = (cols @ k2.T + self.b).reshape(n, oh, ow, self.filters).transpose(0, 3, 1, 2)
        y = np.ascontiguousarray(y)
        self._cache = (cols, xp.shape, (pt, pb, pl, pr), (n, oh, ow))
        _require_finite("conv forward output", y)
        return y

    def backward(self, upstream):
        if self._cache is None:
            raise LayerStateError("conv backward called before forward")
        cols, padded_shape, (pt, pb, pl, pr), (n, oh, ow) = self._cache
        upstream = np.ascontiguousarray(upstream, dtype=self.dtype)
        if upstream.shape != (n, self.filters, oh, ow):
            raise ShapeError(
                f"conv backward: upstream shape {upstream.shape} != {(n, self.filters, oh, ow)}"
            )
        sh, sw = self.stride
        up2 = np.ascontiguousarray(upstream.transpose(0, 2, 3, 1)).reshape(-1, self.filters)
        self.grad_b += up2.sum(axis=0)
        self.grad_kernels += (up2.T @ cols).reshape(self.kernels.shape)
        k2 = self.kernels.reshape(self.filters, -1)
        dcols = (up2 @ k2).reshape(n, oh, ow, self.in_channels, self.kh, self.kw)
        dwin = dcols.transpose(0, 3, 1, 2, 4, 5)  # [n, c, oh, ow, kh, kw]
        dxp = np.zeros(padded_shape, dtype=self.dtype)
        for i in range(self.kh):
            for j in range(self.kw):
                dxp[:, :, i:i + oh * sh:sh, j:j + ow * sw:sw] += dwin[:, :, :, :, i, j]
        h = padded_shape[2] - pt - pb
        w = padded_shape[3] - pl - pr
        dx = dxp[:, :, pt:pt + h, pl:pl + w]
        _require_finite("conv backward", dx, self.grad_kernels, self.grad_b)
        return np.ascontiguousarray(dx)

    def zero_grad(self):
        self.grad_kernels[...] = 0
        self.grad_b[...] = 0

    def params(self):
        yield "kernels", self.kernels, self.grad_kernels
        yield "b", self.b, self.grad_b

    def descriptor(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "filters": self.filters,
            "kh": self.kh,
            "kw": self.kw,
            "stride": list(self.stride),
            "padding": self.padding,
        }


class ReLU:
    kind = "relu"

    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, upstream):
        if self._mask is None:
            raise LayerStateError("relu backward called before forward")
        return np.where(self._mask, upstream, upstream.dtype.type(0))

    def zero_grad(self):
        pass

    def params(self):
        return iter(())

    def descriptor(self):
        return {"kind": self.kind}


class Flatten:
    kind = "flatten"

    def __init__(self):
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        if self._shape is None:
            raise LayerStateError("flatten backward called before forward")
        return upstream.reshape(self._shape)

    def zero_grad(self):
        pass

    def params(self):
        return iter(())

    def descriptor(self):
        return {"kind": self.kind}


class Reshape:
    """Fixed per-example reshape, e.g. [n, 2, 128] -> [n, 1, 2, 128]."""

    kind = "reshape"

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)
        self._in_shape = None

    def forward(self, x):
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ShapeError(f"reshape: input shape {x.shape} incompatible with {self.shape}")
        self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, upstream):
        if self._in_shape is None:
            raise LayerStateError("reshape backward called before forward")
        return upstream.reshape(self._in_shape)

    def zero_grad(self):
        pass

    def params(self):
        return iter(())

    def descriptor(self):
        return {"kind": self.kind, "shape": list(self.shape)}


def softmax_probs(logits):
    """Row-wise softmax with max subtraction; rows sum to 1."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its logits gradient.

    The loss is accumulated in float64 through the log-sum-exp form so
    extreme logits ([1000, 0]) neither overflow nor produce -inf.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_xent: logits shape {logits.shape}, expected 2-d")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"softmax_xent: labels shape {labels.shape} != ({n},)")
    if n == 0:
        raise ValueError("softmax_xent: empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    shifted = (logits - logits.max(axis=1, keepdims=True)).astype(np.float64)
    e = np.exp(shifted)
    denom = e.sum(axis=1)
    idx = np.arange(n)
    loss = float(np.mean(np.log(denom) - shifted[idx, labels]))
    dlogits = e / denom[:, None]
    dlogits[idx, labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype)
