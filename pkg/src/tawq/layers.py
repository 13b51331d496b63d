"""Spiking network layers evaluated over a leading time axis.

Every layer consumes and produces arrays shaped (T, B, ...) and caches
whatever its backward pass needs.  Quantized layers draw their integer
weights from the temporal quantizer each forward pass; the LIF neuron
carries membrane state across timesteps and owns the 1/tau input scaling
of the charging equation.

A "relaxed" evaluation mode replaces the hard spike with its surrogate
sigmoid so the whole forward becomes differentiable; it exists solely to
validate analytic gradients against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .quantizer import (
    QuantConfig,
    QuantizerState,
    compute_scaling_all,
    normalize_backward,
    normalize_stimulus,
    tawq_backward,
    tawq_forward,
)


@dataclass(frozen=True)
class LifConfig:
    v_threshold: float = 1.0
    v_reset: float = 0.0
    tau: float = 2.0
    sg_scale_neuron: float = 4.0

    def __post_init__(self) -> None:
        if self.tau <= 1.0:
            raise ConfigError(f"tau must exceed 1, got {self.tau}")
        if self.v_threshold <= self.v_reset:
            raise ConfigError("v_threshold must exceed v_reset")


def lif_step(u_prev: np.ndarray, input_current: np.ndarray,
             cfg: LifConfig) -> tuple[np.ndarray, np.ndarray]:
    """Single hard LIF update; the caller supplies an already-scaled current.

    Charging: U = (1 - 1/tau) * u_prev + input_current.  A spike fires when
    U >= v_threshold and the membrane hard-resets to v_reset.
    """
    u_prev = np.asarray(u_prev, dtype=np.float64)
    input_current = np.asarray(input_current, dtype=np.float64)
    if u_prev.shape != input_current.shape:
        raise ShapeError(
            f"membrane shape {u_prev.shape} != current shape {input_current.shape}")
    u = (1.0 - 1.0 / cfg.tau) * u_prev + input_current
    spikes = (u >= cfg.v_threshold).astype(np.float64)
    u_next = np.where(spikes > 0, cfg.v_reset, u)
    return spikes, u_next


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


class Layer:
    """Base layer: float64 params in `params`, matching grads in `grads`."""

    kind = "layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.cache: dict = {}

    def forward(self, x: np.ndarray, training: bool = False,
                relaxed: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def trace(self) -> dict:
        """Analysis view of the last forward pass."""
        return {"kind": self.kind,
                "input": self.cache.get("x"),
                "output": self.cache.get("y")}


def _kaiming_uniform(shape: tuple[int, ...], fan_in: int,
                     rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Layer):
    """Plain float linear layer, y[t] = x[t] @ W.T + b."""

    kind = "linear"

    def __init__(self, in_features: int, out_features: int, *,
                 bias: bool = True, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.params["weight"] = _kaiming_uniform((out_features, in_features),
                                                 in_features, rng)
        if bias:
            self.params["bias"] = np.zeros(out_features)

    def forward(self, x, training=False, relaxed=False):
        self.cache = {"x": x}
        y = np.einsum("tbi,oi->tbo", x, self.params["weight"])
        if "bias" in self.params:
            y = y + self.params["bias"]
        self.cache["y"] = y
        return y

    def backward(self, gout):
        x = self.cache["x"]
        self.grads["weight"] = np.einsum("tbo,tbi->oi", gout, x)
        if "bias" in self.params:
            self.grads["bias"] = gout.sum(axis=(0, 1))
        return np.einsum("tbo,oi->tbi", gout, self.params["weight"])


class QuantLinear(Layer):
    """Linear layer whose weights come from the temporal quantizer.

    Trainable parameter is the stimulus tensor; each forward emits a
    (T, out, in) integer weight stack plus a per-timestep per-channel
    scale.  The scale is a detached statistic of the emitted weights and
    carries no gradient of its own.
    """

    kind = "qlinear"

    def __init__(self, in_features: int, out_features: int, quant: QuantConfig, *,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.quant = quant
        self.params["stimulus"] = _kaiming_uniform((out_features, in_features),
                                                   in_features, rng)
        self.state: QuantizerState | None = None
        self.alpha: np.ndarray | None = None

    def materialize(self) -> None:
        """Regenerate quantized weights and scales from the stimulus."""
        i_norm = normalize_stimulus(self.params["stimulus"], self.quant.epsilon)
        self.state = tawq_forward(i_norm, self.quant)
        self.alpha = compute_scaling_all(self.state)

    def forward(self, x, training=False, relaxed=False):
        if x.shape[0] != self.quant.timesteps:
            raise ShapeError(f"expected {self.quant.timesteps} timesteps, "
                             f"got input with {x.shape[0]}")
        self.materialize()
        y = np.einsum("tbi,toi->tbo", x, self.state.w_q) * self.alpha[:, None, :]
        self.cache = {"x": x, "y": y}
        return y

    def backward(self, gout):
        if self.state is None:
            raise StateError("backward called before forward")
        x = self.cache["x"]
        ga = gout * self.alpha[:, None, :]
        g_wq = np.einsum("tbo,tbi->toi", ga, x)
        gx = np.einsum("tbo,toi->tbi", ga, self.state.w_q)
        g_inorm = tawq_backward(g_wq, self.state)
        self.grads["stimulus"] = normalize_backward(
            g_inorm, self.state.i_norm, self.params["stimulus"], self.quant.epsilon)
        return gx

    def trace(self):
        t = super().trace()
        t.update(state=self.state, alpha=self.alpha, w_q=self.state.w_q)
        return t


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int,
            padding: int) -> tuple[np.ndarray, tuple[int, int]]:
    """(B, C, H, W) -> (B, C*kh*kw, H_out*W_out) patch matrix."""
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    # row order must match weight.reshape(C_o, -1): channel-major, then (i, j)
    cols = np.empty((b, c, kh * kw, h_out * w_out))
    idx = 0
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
            cols[:, :, idx, :] = patch.reshape(b, c, -1)
            idx += 1
    return cols.reshape(b, c * kh * kw, h_out * w_out), (h_out, w_out)


def _col2im(gcols: np.ndarray, x_shape: tuple[int, ...], kh: int, kw: int,
            stride: int, padding: int, out_hw: tuple[int, int]) -> np.ndarray:
    b, c, h, w = x_shape
    h_out, w_out = out_hw
    gx = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    gcols = gcols.reshape(b, c, kh * kw, h_out * w_out)
    idx = 0
    for i in range(kh):
        for j in range(kw):
            g = gcols[:, :, idx, :].reshape(b, c, h_out, w_out)
            gx[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += g
            idx += 1
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return gx


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, *,
                 stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = _kaiming_uniform(
            (out_channels, in_channels, kernel_size, kernel_size), fan_in, rng)

    def _matmul(self, x, w_flat):
        T, B = x.shape[:2]
        cols, out_hw = _im2col(x.reshape(T * B, *x.shape[2:]),
                               self.kernel_size, self.kernel_size,
                               self.stride, self.padding)
        y = np.matmul(w_flat, cols).reshape(T, B, self.out_channels, *out_hw)
        return y, cols, out_hw

    def forward(self, x, training=False, relaxed=False):
        w_flat = self.params["weight"].reshape(self.out_channels, -1)
        y, cols, out_hw = self._matmul(x, w_flat)
        self.cache = {"x": x, "y": y, "cols": cols, "out_hw": out_hw}
        return y

    def backward(self, gout):
        x, cols, out_hw = self.cache["x"], self.cache["cols"], self.cache["out_hw"]
        T, B = x.shape[:2]
        g_flat = gout.reshape(T * B, self.out_channels, -1)
        gw = np.einsum("nol,nkl->ok", g_flat, cols)
        self.grads["weight"] = gw.reshape(self.params["weight"].shape)
        w_flat = self.params["weight"].reshape(self.out_channels, -1)
        gcols = np.einsum("ok,nol->nkl", w_flat, g_flat)
        gx = _col2im(gcols, (T * B, *x.shape[2:]), self.kernel_size,
                     self.kernel_size, self.stride, self.padding, out_hw)
        return gx.reshape(x.shape)

    def trace(self):
        t = super().trace()
        t["weight_shape"] = self.params["weight"].shape
        return t


class QuantConv2d(Layer):
    kind = "qconv"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 quant: QuantConfig, *, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        self.quant = quant
        fan_in = in_channels * kernel_size * kernel_size
        self.params["stimulus"] = _kaiming_uniform(
            (out_channels, in_channels, kernel_size, kernel_size), fan_in, rng)
        self.state: QuantizerState | None = None
        self.alpha: np.ndarray | None = None

    def materialize(self) -> None:
        i_norm = normalize_stimulus(self.params["stimulus"], self.quant.epsilon)
        self.state = tawq_forward(i_norm, self.quant)
        self.alpha = compute_scaling_all(self.state)

    def forward(self, x, training=False, relaxed=False):
        if x.shape[0] != self.quant.timesteps:
            raise ShapeError(f"expected {self.quant.timesteps} timesteps, "
                             f"got input with {x.shape[0]}")
        self.materialize()
        T, B = x.shape[:2]
        cols_t, ys = [], []
        for t in range(T):
            cols, out_hw = _im2col(x[t], self.kernel_size, self.kernel_size,
                                   self.stride, self.padding)
            w_flat = self.state.w_q[t].reshape(self.out_channels, -1)
            y = np.matmul(w_flat, cols).reshape(B, self.out_channels, *out_hw)
            ys.append(y * self.alpha[t][None, :, None, None])
            cols_t.append(cols)
        y = np.stack(ys)
        self.cache = {"x": x, "y": y, "cols": cols_t, "out_hw": out_hw}
        return y

    def backward(self, gout):
        if self.state is None:
            raise StateError("backward called before forward")
        x, cols_t, out_hw = self.cache["x"], self.cache["cols"], self.cache["out_hw"]
        T, B = x.shape[:2]
        g_wq = np.zeros_like(self.state.w_q)
        gx = np.empty_like(x)
        for t in range(T):
            ga = (gout[t] * self.alpha[t][None, :, None, None]).reshape(
                B, self.out_channels, -1)
            gw = np.einsum("bol,bkl->ok", ga, cols_t[t])
            g_wq[t] = gw.reshape(self.state.w_q.shape[1:])
            w_flat = self.state.w_q[t].reshape(self.out_channels, -1)
            gcols = np.einsum("ok,bol->bkl", w_flat, ga)
            gx[t] = _col2im(gcols, x[t].shape, self.kernel_size, self.kernel_size,
                            self.stride, self.padding, out_hw)
        g_inorm = tawq_backward(g_wq, self.state)
        self.grads["stimulus"] = normalize_backward(
            g_inorm, self.state.i_norm, self.params["stimulus"], self.quant.epsilon)
        return gx

    def trace(self):
        t = super().trace()
        t.update(state=self.state, alpha=self.alpha, w_q=self.state.w_q)
        return t


class BatchNorm(Layer):
    """Channel batch norm over time, batch, and spatial positions.

    Training mode uses batch statistics and updates running averages with
    momentum 0.1; inference mode applies the frozen affine map.
    """

    kind = "bn"
    momentum = 0.1

    def __init__(self, channels: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def _axes(self, x):
        # channel axis is 2 for both (T,B,C) and (T,B,C,H,W)
        return tuple(i for i in range(x.ndim) if i != 2)

    def _cshape(self, x):
        return (1, 1, self.channels) + (1,) * (x.ndim - 3)

    def forward(self, x, training=False, relaxed=False):
        axes, cs = self._axes(x), self._cshape(x)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        std = np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(cs)) / std.reshape(cs)
        y = self.params["gamma"].reshape(cs) * xhat + self.params["beta"].reshape(cs)
        self.cache = {"x": x, "y": y, "xhat": xhat, "std": std, "training": training}
        return y

    def backward(self, gout):
        xhat, std = self.cache["xhat"], self.cache["std"]
        axes, cs = self._axes(gout), self._cshape(gout)
        self.grads["gamma"] = (gout * xhat).sum(axis=axes)
        self.grads["beta"] = gout.sum(axis=axes)
        g_scaled = gout * self.params["gamma"].reshape(cs)
        if self.cache["training"]:
            gx = (g_scaled - g_scaled.mean(axis=axes).reshape(cs)
                  - xhat * (g_scaled * xhat).mean(axis=axes).reshape(cs))
            return gx / std.reshape(cs)
        return g_scaled / std.reshape(cs)


class LIF(Layer):
    """Leaky integrate-and-fire neuron with hard reset.

    The layer scales its input current by 1/tau (charging equation) before
    the membrane update, so folding scale/BN parameters into the charging
    path is exact at inference.
    """

    kind = "lif"

    def __init__(self, cfg: LifConfig | None = None) -> None:
        super().__init__()
        self.cfg = cfg or LifConfig()

    def forward(self, x, training=False, relaxed=False):
        cfg = self.cfg
        T = x.shape[0]
        decay = 1.0 - 1.0 / cfg.tau
        u = np.zeros(x.shape[1:])
        us, ss = np.empty_like(x), np.empty_like(x)
        for t in range(T):
            u = decay * u + x[t] / cfg.tau
            if relaxed:
                s = _sigmoid(cfg.sg_scale_neuron * (u - cfg.v_threshold))
            else:
                s = (u >= cfg.v_threshold).astype(np.float64)
            us[t], ss[t] = u, s
            u = cfg.v_reset * s + u * (1.0 - s)
        self.cache = {"x": x, "y": ss, "u": us, "relaxed": relaxed}
        return ss

    def backward(self, gout):
        cfg = self.cfg
        us, ss = self.cache["u"], self.cache["y"]
        T = gout.shape[0]
        decay = 1.0 - 1.0 / cfg.tau
        k = cfg.sg_scale_neuron
        gx = np.empty_like(gout)
        gu_carry = np.zeros(gout.shape[1:])
        for t in range(T - 1, -1, -1):
            u, s = us[t], ss[t]
            ds = k * _sigmoid_deriv(k * (u - cfg.v_threshold))
            gu = gout[t] * ds + gu_carry * ((1.0 - s) + (cfg.v_reset - u) * ds)
            gx[t] = gu / cfg.tau
            gu_carry = gu * decay
        return gx

    def trace(self):
        t = super().trace()
        t.update(membrane=self.cache.get("u"))
        return t


def _sigmoid_deriv(x: np.ndarray) -> np.ndarray:
    s = _sigmoid(x)
    return s * (1.0 - s)


class AvgPool2d(Layer):
    kind = "pool"

    def __init__(self, kernel_size: int) -> None:
        super().__init__()
        self.kernel_size = kernel_size

    def forward(self, x, training=False, relaxed=False):
        k = self.kernel_size
        T, B, C, H, W = x.shape
        if H % k or W % k:
            raise ShapeError(f"spatial dims {(H, W)} not divisible by pool size {k}")
        y = x.reshape(T, B, C, H // k, k, W // k, k).mean(axis=(4, 6))
        self.cache = {"x": x, "y": y}
        return y

    def backward(self, gout):
        k = self.kernel_size
        g = np.repeat(np.repeat(gout, k, axis=3), k, axis=4)
        return g / (k * k)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False, relaxed=False):
        self.cache = {"x": x, "y": None, "shape": x.shape}
        T, B = x.shape[:2]
        y = x.reshape(T, B, -1)
        self.cache["y"] = y
        return y

    def backward(self, gout):
        return gout.reshape(self.cache["shape"])


class Network:
    """Feed-forward stack evaluated over T timesteps.

    The readout is the mean over time of the last layer's pre-activations;
    `forward` returns those logits and retains per-layer traces.
    """

    def __init__(self, layers: list[Layer]) -> None:
        self.layers = layers

    def forward(self, x: np.ndarray, training: bool = False,
                relaxed: bool = False) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            try:
                h = layer.forward(h, training=training, relaxed=relaxed)
            except (ShapeError, ConfigError) as exc:
                raise type(exc)(f"layer {i} ({layer.kind}): {exc}") from exc
        self._timesteps = h.shape[0]
        return h.mean(axis=0)

    def backward(self, glogits: np.ndarray) -> np.ndarray:
        g = np.broadcast_to(glogits / self._timesteps,
                            (self._timesteps,) + glogits.shape).copy()
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def traces(self) -> list[dict]:
        return [layer.trace() for layer in self.layers]

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{name}", layer, name, value

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.grads = {}
