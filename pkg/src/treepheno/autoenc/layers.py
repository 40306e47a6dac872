"""Layers with explicit forward/backward passes.

Activations are channels-last ``(B, H, W, C)``. Each layer caches what its
backward pass needs during ``forward`` and writes parameter gradients into
``self.grads`` (same keys as ``self.params``) during ``backward``.
"""
from __future__ import annotations

import numpy as np


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray | None:
        raise NotImplementedError

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def clear_cache(self) -> None:
        for k in [k for k in vars(self) if k.startswith("_c_")]:
            setattr(self, k, None)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 6.0) -> np.ndarray:
    bound = np.sqrt(gain / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1.

    The padded input is laid out as one flat ``(rows, C)`` matrix covering the
    whole batch, so every kernel tap is a single contiguous GEMM. Output rows
    that fall in the padding columns are computed and discarded.
    """

    def __init__(self, cin: int, cout: int, rng, dtype=np.float32, bias: bool = False,
                 input_grad: bool = True):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.params["w"] = _he_uniform(rng, (3, 3, cin, cout), 9 * cin, dtype)
        if bias:
            self.params["b"] = np.zeros(cout, dtype=dtype)
        self.input_grad = input_grad
        self._c_xp = None
        self._c_shape = None

    def forward(self, x, train):
        b, h, w, c = x.shape
        hp, wp = h + 2, w + 2
        n = b * hp * wp
        xp = np.zeros((n + 2 * wp + 2, c), dtype=x.dtype)
        xp[:n].reshape(b, hp, wp, c)[:, 1:-1, 1:-1, :] = x
        wt = self.params["w"]
        out = np.zeros((n, self.cout), dtype=x.dtype)
        for dy in range(3):
            for dx in range(3):
                off = dy * wp + dx
                out += xp[off:off + n] @ wt[dy, dx]
        y = out.reshape(b, hp, wp, self.cout)[:, :h, :w, :]
        if "b" in self.params:
            y = y + self.params["b"]
        if train:
            self._c_xp, self._c_shape = xp, x.shape
        return np.ascontiguousarray(y)

    def backward(self, g):
        xp, (b, h, w, c) = self._c_xp, self._c_shape
        hp, wp = h + 2, w + 2
        n = b * hp * wp
        gf = np.zeros((b, hp, wp, self.cout), dtype=g.dtype)
        gf[:, :h, :w, :] = g
        gf = gf.reshape(n, self.cout)
        wt = self.params["w"]
        dw = np.empty_like(wt)
        dxp = np.zeros_like(xp) if self.input_grad else None
        for dy in range(3):
            for dx in range(3):
                off = dy * wp + dx
                dw[dy, dx] = xp[off:off + n].T @ gf
                if dxp is not None:
                    dxp[off:off + n] += gf @ wt[dy, dx].T
        self.grads["w"] = dw
        if "b" in self.params:
            self.grads["b"] = g.sum(axis=(0, 1, 2))
        self.clear_cache()
        if dxp is None:
            return None
        return np.ascontiguousarray(dxp[:n].reshape(b, hp, wp, c)[:, 1:-1, 1:-1, :])


class BatchNorm(Layer):
    """Per-channel batch normalization; batch statistics in training mode."""

    def __init__(self, channels: int, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self._c_xhat = None
        self._c_inv = None

    def forward(self, x, train):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            x2 = x.reshape(-1, x.shape[-1])
            m = x2.shape[0]
            ones = np.ones(m, dtype=x.dtype)
            # gemv reductions are several times faster than sum over leading axes
            mean = (ones @ x2) / m
            xc = x2 - mean
            var = (ones @ (xc * xc)) / m
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (xc * inv).reshape(x.shape)
            mom = self.momentum
            unbiased = var * (m / max(m - 1, 1))
            self.buffers["running_mean"] = ((1 - mom) * self.buffers["running_mean"] + mom * mean).astype(x.dtype)
            self.buffers["running_var"] = ((1 - mom) * self.buffers["running_var"] + mom * unbiased).astype(x.dtype)
            self._c_xhat, self._c_inv = xhat, inv
        else:
            inv = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"]) * inv
        return xhat * gamma + beta

    def backward(self, g):
        xhat, inv = self._c_xhat, self._c_inv
        c = g.shape[-1]
        g2, xh2 = g.reshape(-1, c), xhat.reshape(-1, c)
        m = g2.shape[0]
        ones = np.ones(m, dtype=g.dtype)
        gsum = ones @ g2
        gxsum = ones @ (g2 * xh2)
        self.grads["beta"] = gsum
        self.grads["gamma"] = gxsum
        gamma = self.params["gamma"]
        # dxhat = g * gamma, folded into the channel-wise coefficients
        dx = (gamma * inv) * (g2 - (gsum + xh2 * gxsum) / m)
        self.clear_cache()
        return dx.reshape(g.shape)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._c_mask = None

    def forward(self, x, train):
        mask = x > 0
        if train:
            self._c_mask = mask
        return x * mask

    def backward(self, g):
        out = g * self._c_mask
        self.clear_cache()
        return out


class MaxPool2(Layer):
    """2x2 max pooling, stride 2. Gradient goes to the first maximal element."""

    def __init__(self):
        super().__init__()
        self._c_idx = None
        self._c_shape = None

    def forward(self, x, train):
        b, h, w, c = x.shape
        win = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
        idx = win.argmax(axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        if train:
            self._c_idx, self._c_shape = idx.astype(np.uint8), x.shape
        return out

    def backward(self, g):
        b, h, w, c = self._c_shape
        win = np.zeros(g.shape + (4,), dtype=g.dtype)
        np.put_along_axis(win, self._c_idx[..., None].astype(np.intp), g[..., None], axis=-1)
        dx = win.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, h, w, c)
        self.clear_cache()
        return dx


class UpConv2(Layer):
    """2x2 transposed convolution with stride 2 (doubles H and W)."""

    def __init__(self, cin: int, cout: int, rng, dtype=np.float32):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.params["w"] = _he_uniform(rng, (cin, 2, 2, cout), cin, dtype)
        self.params["b"] = np.zeros(cout, dtype=dtype)
        self._c_x = None

    def forward(self, x, train):
        b, h, w, _ = x.shape
        y = x.reshape(-1, self.cin) @ self.params["w"].reshape(self.cin, -1)
        y = y.reshape(b, h, w, 2, 2, self.cout).transpose(0, 1, 3, 2, 4, 5).reshape(b, 2 * h, 2 * w, self.cout)
        if train:
            self._c_x = x
        return y + self.params["b"]

    def backward(self, g):
        x = self._c_x
        b, h, w, _ = x.shape
        g2 = g.reshape(b, h, 2, w, 2, self.cout).transpose(0, 1, 3, 2, 4, 5).reshape(b * h * w, 4 * self.cout)
        x2 = x.reshape(-1, self.cin)
        wt = self.params["w"].reshape(self.cin, -1)
        self.grads["w"] = (x2.T @ g2).reshape(self.params["w"].shape)
        self.grads["b"] = g.sum(axis=(0, 1, 2))
        self.clear_cache()
        return (g2 @ wt.T).reshape(b, h, w, self.cin)


class Conv1x1(Layer):
    def __init__(self, cin: int, cout: int, rng, dtype=np.float32):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.params["w"] = _he_uniform(rng, (cin, cout), cin, dtype, gain=1.0)
        self.params["b"] = np.zeros(cout, dtype=dtype)
        self._c_x = None

    def forward(self, x, train):
        if train:
            self._c_x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, g):
        x = self._c_x
        self.grads["w"] = x.reshape(-1, self.cin).T @ g.reshape(-1, self.cout)
        self.grads["b"] = g.sum(axis=(0, 1, 2))
        self.clear_cache()
        return g @ self.params["w"].T
