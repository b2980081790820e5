"""Layer objects and fixed-topology networks built on the functional ops.

Layers hold their parameters (Kaiming fan-in initialised), cache what the
backward pass needs, and accumulate gradients into per-parameter buffers
consumed by the optimizer. Each layer owns a workspace dict so the large
intermediates (padded frames, column blocks, outputs) are reused across
iterations. The first parametric layer of a network skips its input
gradient.

``ReLUMaxPool`` / ``ELUMaxPool`` fuse an activation with the pooling that
follows it in the reference topologies: max pooling commutes with any
monotone activation, so pooling first and activating the smaller tensor
gives identical values and gradients at a quarter of the element count.
"""

from __future__ import annotations

import numpy as np

from . import functional as F


class Param:
    """A trainable array and its gradient buffer."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = value
        self.grad = np.zeros_like(value)
        self.name = name


def kaiming_normal(rng, shape, fan_in: int, dtype=np.float32):
    return (rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self):
        self.ws = {}

    def params(self) -> list:
        return []

    def state_arrays(self) -> list:
        """Non-trainable state persisted with the weights (e.g. BN stats)."""
        return []

    def config(self) -> tuple:
        return ()

    def forward(self, x, training: bool):
        raise NotImplementedError

    def backward(self, dy, need_input_grad: bool = True):
        raise NotImplementedError


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, kernel: int, in_channels: int, out_channels: int,
                 stride: int = 1, padding: int = 0, rng=None, dtype=np.float32):
        super().__init__()
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.in_channels, self.out_channels = in_channels, out_channels
        fan_in = kernel * kernel * in_channels
        rng = rng if rng is not None else np.random.default_rng()
        self.w = Param(kaiming_normal(rng, (kernel, kernel, in_channels,
                                            out_channels), fan_in, dtype), "conv.w")
        self.b = Param(np.zeros(out_channels, dtype=dtype), "conv.b")
        self._cache = None

    def config(self):
        return (self.kernel, self.in_channels, self.out_channels,
                self.stride, self.padding)

    def params(self):
        return [self.w, self.b]

    def forward(self, x, training):
        y, self._cache = F.conv2d_forward(x, self.w.value, self.b.value,
                                          self.stride, self.padding, ws=self.ws)
        return y

    def backward(self, dy, need_input_grad=True):
        dx, dw, db = F.conv2d_backward(dy, self._cache, need_input_grad)
        self.w.grad[...] = dw
        self.b.grad[...] = db
        self._cache = None
        return dx


class TransposedConv2D(Layer):
    kind = "tconv"

    def __init__(self, kernel: int, in_channels: int, out_channels: int,
                 stride: int = 1, padding: int = 0, rng=None, dtype=np.float32):
        super().__init__()
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.in_channels, self.out_channels = in_channels, out_channels
        fan_in = kernel * kernel * in_channels
        rng = rng if rng is not None else np.random.default_rng()
        self.w = Param(kaiming_normal(rng, (kernel, kernel, in_channels,
                                            out_channels), fan_in, dtype), "tconv.w")
        self.b = Param(np.zeros(out_channels, dtype=dtype), "tconv.b")
        self._cache = None

    def config(self):
        return (self.kernel, self.in_channels, self.out_channels,
                self.stride, self.padding)

    def params(self):
        return [self.w, self.b]

    def forward(self, x, training):
        y, self._cache = F.transposed_conv2d_forward(
            x, self.w.value, self.b.value, self.stride, self.padding, ws=self.ws)
        return y

    def backward(self, dy, need_input_grad=True):
        dx, dw, db = F.transposed_conv2d_backward(dy, self._cache, need_input_grad)
        self.w.grad[...] = dw
        self.b.grad[...] = db
        self._cache = None
        return dx


class MaxPool2D(Layer):
    kind = "maxpool"

    def __init__(self, size: int, stride: int, padding: int = 0):
        super().__init__()
        self.size, self.stride, self.padding = size, stride, padding
        self._cache = None

    def config(self):
        return (self.size, self.stride, self.padding)

    def forward(self, x, training):
        y, self._cache = F.maxpool_forward(x, self.size, self.stride,
                                           self.padding, ws=self.ws)
        return y

    def backward(self, dy, need_input_grad=True):
        dx = F.maxpool_backward(dy, self._cache)
        self._cache = None
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training):
        y, self._y = F.relu_forward(x, ws=self.ws)
        return y

    def backward(self, dy, need_input_grad=True):
        return F.relu_backward(dy, self._y, ws=self.ws)


class ELU(Layer):
    kind = "elu"

    def forward(self, x, training):
        y, self._cache = F.elu_forward(x, ws=self.ws)
        return y

    def backward(self, dy, need_input_grad=True):
        return F.elu_backward(dy, self._cache, ws=self.ws)


class ReLUMaxPool(Layer):
    """ReLU followed by max pooling, evaluated as pool-then-rectify."""

    kind = "relupool"
    _act_forward = staticmethod(F.relu_forward)
    _act_backward = staticmethod(F.relu_backward)

    def __init__(self, size: int, stride: int, padding: int = 0):
        super().__init__()
        self.size, self.stride, self.padding = size, stride, padding
        self._pool_cache = None
        self._act_cache = None

    def config(self):
        return (self.size, self.stride, self.padding)

    def forward(self, x, training):
        pooled, self._pool_cache = F.maxpool_forward(
            x, self.size, self.stride, self.padding, ws=self.ws)
        y, self._act_cache = self._act_forward(pooled, ws=self.ws)
        return y

    def backward(self, dy, need_input_grad=True):
        dpool = self._act_backward(dy, self._act_cache, ws=self.ws)
        dx = F.maxpool_backward(dpool, self._pool_cache)
        self._pool_cache = self._act_cache = None
        return dx


class ELUMaxPool(ReLUMaxPool):
    """ELU followed by max pooling (ELU is strictly monotone)."""

    kind = "elupool"
    _act_forward = staticmethod(F.elu_forward)
    _act_backward = staticmethod(F.elu_backward)


class BatchNorm(Layer):
    """Per-channel normalisation for NHWC or flat (B, F) activations."""

    kind = "batchnorm"

    def __init__(self, channels: int, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.gamma = Param(np.ones(channels, dtype=dtype), "bn.gamma")
        self.beta = Param(np.zeros(channels, dtype=dtype), "bn.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def config(self):
        return (self.channels,)

    def params(self):
        return [self.gamma, self.beta]

    def state_arrays(self):
        return [self.running_mean, self.running_var]

    def forward(self, x, training):
        y, self._cache = F.batchnorm_forward(
            x, self.gamma.value, self.beta.value,
            self.running_mean, self.running_var, training)
        return y

    def backward(self, dy, need_input_grad=True):
        dx, dgamma, dbeta = F.batchnorm_backward(dy, self._cache)
        self.gamma.grad[...] = dgamma
        self.beta.grad[...] = dbeta
        self._cache = None
        return dx


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training):
        self._shape = x.shape
        return x.reshape(len(x), -1)

    def backward(self, dy, need_input_grad=True):
        return dy.reshape(self._shape)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, *shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def config(self):
        return self.shape

    def forward(self, x, training):
        return x.reshape((len(x),) + self.shape)

    def backward(self, dy, need_input_grad=True):
        return dy.reshape(len(dy), -1)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng=None,
                 dtype=np.float32):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng()
        self.w = Param(kaiming_normal(rng, (in_features, out_features),
                                      in_features, dtype), "dense.w")
        self.b = Param(np.zeros(out_features, dtype=dtype), "dense.b")
        self._cache = None

    def config(self):
        return (self.in_features, self.out_features)

    def params(self):
        return [self.w, self.b]

    def forward(self, x, training):
        y, self._cache = F.fully_connected_forward(x, self.w.value, self.b.value,
                                                   ws=self.ws)
        return y

    def backward(self, dy, need_input_grad=True):
        dx, dw, db = F.fully_connected_backward(dy, self._cache, need_input_grad,
                                                ws=self.ws)
        self.w.grad[...] = dw
        self.b.grad[...] = db
        self._cache = None
        return dx


class CenterCropPad(Layer):
    """Crop (or zero-pad) spatial dims to a fixed target, centred."""

    kind = "croppad"

    def __init__(self, target_h: int, target_w: int):
        super().__init__()
        self.target_h, self.target_w = target_h, target_w

    def config(self):
        return (self.target_h, self.target_w)

    @staticmethod
    def _offsets(n, target):
        if n >= target:
            return (n - target) // 2, 0
        return 0, (target - n) // 2

    def forward(self, x, training):
        self._shape = x.shape
        b, h, w, c = x.shape
        oh, ph = self._offsets(h, self.target_h)
        ow, pw = self._offsets(w, self.target_w)
        y = F._buf(self.ws, "y", (b, self.target_h, self.target_w, c), x.dtype)
        y.fill(0)
        ch, cw = min(h, self.target_h), min(w, self.target_w)
        y[:, ph:ph + ch, pw:pw + cw, :] = x[:, oh:oh + ch, ow:ow + cw, :]
        return y

    def backward(self, dy, need_input_grad=True):
        b, h, w, c = self._shape
        oh, ph = self._offsets(h, self.target_h)
        ow, pw = self._offsets(w, self.target_w)
        dx = F._buf(self.ws, "dx", self._shape, dy.dtype)
        dx.fill(0)
        ch, cw = min(h, self.target_h), min(w, self.target_w)
        dx[:, oh:oh + ch, ow:ow + cw, :] = dy[:, ph:ph + ch, pw:pw + cw, :]
        return dx


class Network:
    """A feed-forward layer stack with manual backprop."""

    def __init__(self, layers: list):
        self.layers = list(layers)
        # index of the first layer that owns parameters: everything before
        # it cannot need an input gradient either
        self._first_param = next(
            (i for i, l in enumerate(self.layers) if l.params()), 0)

    def params(self) -> list:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x, training: bool = False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dy):
        for i in range(len(self.layers) - 1, -1, -1):
            dy = self.layers[i].backward(dy, need_input_grad=i > self._first_param)
        return dy
