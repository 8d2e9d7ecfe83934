"""Small convolutional networks with hand-written backward passes.

Inputs are single images laid out (C, H, W); there is no batch axis.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Conv2d:
    def __init__(self, c_in, c_out, k, stride=1, pad=0, rng=None):
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.pad = stride, pad
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = c_in * k * k
        # Kaiming-style fan-in scaling
        self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, k, k))
        self.bias = np.zeros(c_out)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def _windows(self, x):
        p, s = self.pad, self.stride
        xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (self.k, self.k), axis=(1, 2))
        return xp.shape, win[:, ::s, ::s]

    def forward(self, x):
        if x.ndim != 3 or x.shape[0] != self.c_in:
            raise ValueError(f"conv expects ({self.c_in}, H, W), got {x.shape}")
        padded_shape, win = self._windows(x)
        out = np.tensordot(self.weight, win, axes=([1, 2, 3], [0, 3, 4]))
        out += self.bias[:, None, None]
        return out, (padded_shape, win)

    def backward(self, cache, g):
        padded_shape, win = cache
        grads = {
            "weight": np.tensordot(g, win, axes=([1, 2], [1, 2])),
            "bias": g.sum(axis=(1, 2)),
        }
        # (C, k, k, Ho, Wo)
        dwin = np.tensordot(self.weight, g, axes=([0], [0]))
        dxp = np.zeros(padded_shape)
        s = self.stride
        ho, wo = g.shape[1:]
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s] += dwin[:, i, j]
        p = self.pad
        dx = dxp[:, p:padded_shape[1] - p, p:padded_shape[2] - p] if p else dxp
        return dx, grads


class ReLU:
    def params(self):
        return {}

    def forward(self, x):
        pos = x > 0
        return x * pos, pos

    def backward(self, pos, g):
        return g * pos, {}


class LeakyReLU:
    def __init__(self, slope=0.2):
        self.slope = slope

    def params(self):
        return {}

    def forward(self, x):
        scale = np.where(x > 0, 1.0, self.slope)
        return x * scale, scale

    def backward(self, scale, g):
        return g * scale, {}


class Sigmoid:
    def params(self):
        return {}

    def forward(self, x):
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y

    def backward(self, y, g):
        return g * y * (1.0 - y), {}


class ToyNet:
    """Ordered layer stack; parameters are addressed as ``"<i>.<name>"``."""

    def __init__(self, layers, name=""):
        self.layers = list(layers)
        self.name = name
        self._caches = None

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for pname, arr in layer.params().items():
                out[f"{i}.{pname}"] = arr
        return out

    def param_count(self):
        return sum(p.size for p in self.params().values())

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        self._caches = caches
        return x

    def backward(self, upstream):
        """Reverse-mode pass through the last forward.

        Returns (input gradient, {param name: gradient}).
        """
        if self._caches is None:
            raise RuntimeError(f"{self.name or 'net'}: backward called without a cached forward")
        g = np.asarray(upstream, dtype=np.float64)
        grads = {}
        for i in reversed(range(len(self.layers))):
            g, pg = self.layers[i].backward(self._caches[i], g)
            for pname, arr in pg.items():
                grads[f"{i}.{pname}"] = arr
        return g, grads

    def state(self):
        return {k: v.copy() for k, v in self.params().items()}

    def load_state(self, state):
        params = self.params()
        if set(state) != set(params):
            raise ValueError(f"{self.name}: parameter names do not match checkpoint")
        for k, arr in params.items():
            if state[k].shape != arr.shape:
                raise ValueError(f"{self.name}.{k}: shape {state[k].shape} != {arr.shape}")
            arr[...] = state[k]


def backward_all(net, upstream):
    return net.backward(upstream)


# builders


def make_extractor(rng, c_in=3, channels=16):
    return ToyNet([
        Conv2d(c_in, channels, 3, pad=1, rng=rng), ReLU(),
        Conv2d(channels, channels, 3, pad=1, rng=rng), ReLU(),
    ], name="F")


def make_head(rng, channels=16, num_classes=6):
    return ToyNet([Conv2d(channels, num_classes, 1, rng=rng)], name="C")


def make_discriminator(rng, num_classes=6, widths=(16, 32)):
    layers = []
    c = num_classes
    for width in widths:
        layers += [Conv2d(c, width, 4, stride=2, pad=1, rng=rng), LeakyReLU(0.2)]
        c = width
    layers += [Conv2d(c, 1, 4, stride=2, pad=1, rng=rng), Sigmoid()]
    return ToyNet(layers, name="D")


def extractor_forward(net, image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3 or min(image.shape[1:]) < 8:
        raise ValueError(f"extractor expects (3, H, W) with H, W >= 8, got {image.shape}")
    return net.forward(image)


def head_forward(net, features):
    return net.forward(features)


def discriminator_forward(net, softmax_map, atol=1e-6):
    p = np.asarray(softmax_map, dtype=np.float64)
    if p.ndim != 3 or np.any(p < -atol) or not np.allclose(p.sum(axis=0), 1.0, atol=atol):
        raise ValueError("discriminator input must be a per-pixel probability map")
    return net.forward(p)


# optimizers


def poly_lr(base_lr, t, total, power=0.9):
    if not 0 <= t <= total:
        raise ValueError(f"iteration {t} outside [0, {total}]")
    return base_lr * (1.0 - t / total) ** power


class SGDState:
    """Nesterov momentum SGD with weight decay and polynomial lr decay."""

    def __init__(self, base_lr=2.5e-4, momentum=0.9, weight_decay=5e-4, power=0.9):
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.power = power
        self.buffers = {}


class AdamState:
    def __init__(self, base_lr=1e-4, betas=(0.9, 0.99), eps=1e-8, power=0.9):
        self.base_lr = base_lr
        self.betas = betas
        self.eps = eps
        self.power = power
        self.m = {}
        self.v = {}


def sgd_poly_step(state, params, grads, t, total):
    if t >= total:
        raise ValueError(f"iteration {t} >= schedule length {total}")
    lr = poly_lr(state.base_lr, t, total, state.power)
    mu = state.momentum
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = g + state.weight_decay * p
        buf = state.buffers.get(name)
        buf = g.copy() if buf is None else mu * buf + g
        state.buffers[name] = buf
        p -= lr * (g + mu * buf)
    return lr


def adam_step(state, params, grads, t, total=None):
    """Bias-corrected Adam step number ``t`` (1-based).

    With ``total`` given, the lr follows the polynomial schedule evaluated at
    iteration ``t - 1``.
    """
    if t < 1:
        raise ValueError("adam step counter starts at 1")
    lr = state.base_lr if total is None else poly_lr(state.base_lr, t - 1, total, state.power)
    b1, b2 = state.betas
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return lr
