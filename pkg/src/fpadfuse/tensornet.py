"""Minimal dense-array compute core with reverse-mode differentiation.

Functional forward/backward pairs (conv, batch norm, pooling, linear,
concat, sigmoid, BCE) plus thin layer objects that own parameters, and the
dense-block / transition composites built from them.  Convolution follows
the deep-learning convention (cross-correlation, no kernel flip).

A layer instance is mutated only by its owning training loop; forward on a
frozen parameter set is safe from many threads.
"""

from __future__ import annotations

import numpy as np

from .errors import BatchTooSmall, ShapeMismatch

DEFAULT_DTYPE = np.float32


class Param:
    """A learnable array with a paired gradient buffer."""

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape


def kaiming_uniform(shape, fan_in, rng, dtype=DEFAULT_DTYPE):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------

def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"kernel {kh}x{kw} does not fit {h}x{w} input")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols, ho, wo


def _col2im(dcols, xshape, stride, pad):
    n, c, h, w = xshape
    _, _, kh, kw, ho, wo = dcols.shape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def conv2d_forward(x, weight, bias, stride=1, pad=0):
    """x: (N,C,H,W), weight: (OC,C,kh,kw), bias: (OC,)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch("conv2d needs 4-D input and weight")
    oc, c, kh, kw = weight.shape
    if x.shape[1] != c:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, weight expects {c}")
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    n = x.shape[0]
    flat = cols.reshape(n, c * kh * kw, ho * wo)
    wflat = weight.reshape(oc, c * kh * kw)
    out = np.einsum("ok,nkp->nop", wflat, flat, optimize=True)
    out = out.reshape(n, oc, ho, wo) + bias.reshape(1, oc, 1, 1)
    cache = (x.shape, flat, wflat, weight.shape, stride, pad, ho, wo)
    return out, cache


def conv2d_backward(dout, cache):
    xshape, flat, wflat, wshape, stride, pad, ho, wo = cache
    n, c, _, _ = xshape
    oc = wshape[0]
    dflat_out = dout.reshape(n, oc, ho * wo)
    dw = np.einsum("nop,nkp->ok", dflat_out, flat, optimize=True).reshape(wshape)
    db = dout.sum(axis=(0, 2, 3))
    dcols = np.einsum("ok,nop->nkp", wflat, dflat_out, optimize=True)
    dcols = dcols.reshape(n, c, wshape[2], wshape[3], ho, wo)
    dx = _col2im(dcols, xshape, stride, pad)
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, eps=1e-5,
                      momentum=0.1, training=True):
    """Per-channel normalization; channel axis is 1 for 4-D, features for 2-D.

    In training mode the running statistics are updated in place with the
    configured momentum.
    """
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    if training and x.shape[0] < 2:
        raise BatchTooSmall("batch norm training needs batch >= 2")
    bshape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    cache = (xhat, gamma, inv_std, axes, bshape, training)
    return out, cache


def batchnorm_backward(dout, cache):
    xhat, gamma, inv_std, axes, bshape, training = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(bshape)
    if not training:
        return dxhat * inv_std.reshape(bshape), dgamma, dbeta
    dx = (
        dxhat
        - dxhat.mean(axis=axes).reshape(bshape)
        - xhat * (dxhat * xhat).mean(axis=axes).reshape(bshape)
    ) * inv_std.reshape(bshape)
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    # subgradient at exactly 0 is 0
    return dout * mask


def avgpool_forward(x, k, stride):
    cols, ho, wo = _im2col(x, k, k, stride, 0)
    out = cols.mean(axis=(2, 3))
    return out, (x.shape, k, stride, ho, wo)


def avgpool_backward(dout, cache):
    xshape, k, stride, ho, wo = cache
    n, c = xshape[:2]
    dcols = np.broadcast_to(
        dout.reshape(n, c, 1, 1, ho, wo) / (k * k), (n, c, k, k, ho, wo)
    ).astype(dout.dtype)
    return _col2im(dcols, xshape, stride, 0)


def global_avgpool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avgpool_backward(dout, xshape):
    n, c, h, w = xshape
    return np.broadcast_to(dout.reshape(n, c, 1, 1) / (h * w), xshape).astype(dout.dtype)


def linear_forward(x, weight, bias):
    """x: (N, in), weight: (out, in), bias: (out,)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"linear expects (N,{weight.shape[1]}), got {x.shape}")
    return x @ weight.T + bias, (x, weight)


def linear_backward(dout, cache):
    x, weight = cache
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def concat_forward(xs, axis=1):
    return np.concatenate(xs, axis=axis), ([x.shape[axis] for x in xs], axis)


def concat_backward(dout, cache):
    sizes, axis = cache
    return np.split(dout, np.cumsum(sizes)[:-1], axis=axis)


def sigmoid_forward(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(dout, out):
    return dout * out * (1.0 - out)


BCE_EPS = 1e-7


def bce_loss(scores, labels):
    """Mean binary cross-entropy; returns (loss, dscores).

    Scores are clamped to [eps, 1-eps]; the gradient is zero where the
    clamp is active.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if s.shape != y.shape:
        raise ShapeMismatch("scores and labels must align")
    sc = np.clip(s, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(-np.mean(y * np.log(sc) + (1.0 - y) * np.log(1.0 - sc)))
    ds = np.where(
        (s > BCE_EPS) & (s < 1.0 - BCE_EPS),
        (-y / sc + (1.0 - y) / (1.0 - sc)) / s.size,
        0.0,
    )
    return loss, ds.reshape(np.shape(scores)).astype(np.asarray(scores).dtype)


# ---------------------------------------------------------------------------
# layer objects
# ---------------------------------------------------------------------------

class Layer:
    """Base: parameter-owning node with cached forward state."""

    def params(self):
        """Yields (name, Param)."""
        return iter(())

    def buffers(self):
        """Yields (name, ndarray) non-learnable state (BN running stats)."""
        return iter(())

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, k, stride=1, pad=0, rng=None, dtype=DEFAULT_DTYPE):
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * k * k
        self.weight = Param(kaiming_uniform((out_ch, in_ch, k, k), fan_in, rng, dtype))
        self.bias = Param(np.zeros(out_ch, dtype=dtype))
        self.stride, self.pad = stride, pad
        self._cache = None

    def params(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def forward(self, x, training=False):
        out, self._cache = conv2d_forward(x, self.weight.value, self.bias.value,
                                          self.stride, self.pad)
        return out

    def backward(self, dout):
        dx, dw, db = conv2d_backward(dout, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class BatchNorm(Layer):
    def __init__(self, ch, eps=1e-5, momentum=0.1, dtype=DEFAULT_DTYPE):
        self.gamma = Param(np.ones(ch, dtype=dtype))
        self.beta = Param(np.zeros(ch, dtype=dtype))
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)
        self.eps, self.momentum = eps, momentum
        self._cache = None

    def params(self):
        yield "gamma", self.gamma
        yield "beta", self.beta

    def buffers(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var

    def forward(self, x, training=False):
        out, self._cache = batchnorm_forward(
            x, self.gamma.value, self.beta.value,
            self.running_mean, self.running_var,
            self.eps, self.momentum, training,
        )
        return out

    def backward(self, dout):
        dx, dgamma, dbeta = batchnorm_backward(dout, self._cache)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx


class ReLU(Layer):
    def forward(self, x, training=False):
        out, self._mask = relu_forward(x)
        return out

    def backward(self, dout):
        return relu_backward(dout, self._mask)


class AvgPool(Layer):
    def __init__(self, k=2, stride=2):
        self.k, self.stride = k, stride

    def forward(self, x, training=False):
        out, self._cache = avgpool_forward(x, self.k, self.stride)
        return out

    def backward(self, dout):
        return avgpool_backward(dout, self._cache)


class GlobalAvgPool(Layer):
    def forward(self, x, training=False):
        out, self._shape = global_avgpool_forward(x)
        return out

    def backward(self, dout):
        return global_avgpool_backward(dout, self._shape)


class Linear(Layer):
    def __init__(self, in_f, out_f, rng=None, dtype=DEFAULT_DTYPE):
        rng = rng or np.random.default_rng(0)
        self.weight = Param(kaiming_uniform((out_f, in_f), in_f, rng, dtype))
        self.bias = Param(np.zeros(out_f, dtype=dtype))
        self._cache = None

    def params(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def forward(self, x, training=False):
        out, self._cache = linear_forward(x, self.weight.value, self.bias.value)
        return out

    def backward(self, dout):
        dx, dw, db = linear_backward(dout, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class Sigmoid(Layer):
    def forward(self, x, training=False):
        out, self._out = sigmoid_forward(x)
        return out

    def backward(self, dout):
        return sigmoid_backward(dout, self._out)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                yield f"{i}.{name}", p

    def buffers(self):
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers():
                yield f"{i}.{name}", b

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class DenseLayer(Layer):
    """BN -> ReLU -> 3x3 conv producing growth_rate channels."""

    def __init__(self, in_ch, growth, rng, dtype=DEFAULT_DTYPE):
        self.bn = BatchNorm(in_ch, dtype=dtype)
        self.relu = ReLU()
        self.conv = Conv2d(in_ch, growth, 3, stride=1, pad=1, rng=rng, dtype=dtype)

    def params(self):
        for name, p in self.bn.params():
            yield f"bn.{name}", p
        for name, p in self.conv.params():
            yield f"conv.{name}", p

    def buffers(self):
        for name, b in self.bn.buffers():
            yield f"bn.{name}", b

    def forward(self, x, training=False):
        return self.conv.forward(self.relu.forward(self.bn.forward(x, training)), training)

    def backward(self, dout):
        return self.bn.backward(self.relu.backward(self.conv.backward(dout)))


class DenseBlock(Layer):
    """Each layer consumes the concatenation of the block input and every
    previous layer output; the block emits the full concatenation.

    Output channels = in_ch + num_layers * growth.
    """

    def __init__(self, in_ch, num_layers, growth, rng, dtype=DEFAULT_DTYPE):
        if num_layers < 1 or growth < 1:
            raise ValueError("dense block needs num_layers >= 1 and growth >= 1")
        self.in_ch = in_ch
        self.growth = growth
        self.dense_layers = [
            DenseLayer(in_ch + i * growth, growth, rng, dtype) for i in range(num_layers)
        ]

    @property
    def out_ch(self):
        return self.in_ch + len(self.dense_layers) * self.growth

    def params(self):
        for i, layer in enumerate(self.dense_layers):
            for name, p in layer.params():
                yield f"layer{i}.{name}", p

    def buffers(self):
        for i, layer in enumerate(self.dense_layers):
            for name, b in layer.buffers():
                yield f"layer{i}.{name}", b

    def forward(self, x, training=False):
        feats = [x]
        self._concat_caches = []
        for layer in self.dense_layers:
            inp, cache = concat_forward(feats)
            self._concat_caches.append(cache)
            feats.append(layer.forward(inp, training))
        out, self._out_cache = concat_forward(feats)
        return out

    def backward(self, dout):
        grads = concat_backward(dout, self._out_cache)
        grads = [g.copy() for g in grads]
        for i in reversed(range(len(self.dense_layers))):
            dinp = self.dense_layers[i].backward(grads[i + 1])
            for j, piece in enumerate(concat_backward(dinp, self._concat_caches[i])):
                grads[j] += piece
        return grads[0]


class Transition(Layer):
    """BN -> ReLU -> 1x1 conv -> 2x2 average pool (stride 2)."""

    def __init__(self, in_ch, out_ch, rng, dtype=DEFAULT_DTYPE):
        if out_ch < 1:
            raise ValueError("transition needs out_ch >= 1")
        self.seq = Sequential([
            BatchNorm(in_ch, dtype=dtype),
            ReLU(),
            Conv2d(in_ch, out_ch, 1, rng=rng, dtype=dtype),
            AvgPool(2, 2),
        ])
        self.out_ch = out_ch

    def params(self):
        yield from self.seq.params()

    def buffers(self):
        yield from self.seq.buffers()

    def forward(self, x, training=False):
        return self.seq.forward(x, training)

    def backward(self, dout):
        return self.seq.backward(dout)
