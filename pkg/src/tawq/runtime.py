"""Deployment-style inference.

Ternary weights are packed 2 bits each (4 per byte, little-endian lanes,
row-major element order) with the code map 00->0, 01->+1, 10->-1; 11 is
invalid.  Inference then needs only integer accumulation; the per-channel
scale and the batch-norm affine are folded into the LIF charging path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .layers import LIF, BatchNorm, LifConfig, Network, QuantLinear

CODE_ZERO, CODE_POS, CODE_NEG, CODE_INVALID = 0b00, 0b01, 0b10, 0b11


@dataclass
class PackedTernaryTensor:
    codes: bytes
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def pack_ternary(w_q: np.ndarray) -> PackedTernaryTensor:
    """Lossless 2-bit encoding of a {-1, 0, +1} tensor."""
    w = np.asarray(w_q)
    flat = w.ravel()
    if flat.size and not np.isin(flat, (-1, 0, 1)).all():
        bad = flat[~np.isin(flat, (-1, 0, 1))][0]
        raise DataError(f"out-of-range ternary entry {bad!r}")
    codes2 = np.where(flat > 0, CODE_POS, np.where(flat < 0, CODE_NEG, CODE_ZERO))
    codes2 = codes2.astype(np.uint8)
    pad = (-flat.size) % 4
    if pad:
        codes2 = np.concatenate([codes2, np.zeros(pad, dtype=np.uint8)])
    lanes = codes2.reshape(-1, 4)
    packed = lanes[:, 0] | (lanes[:, 1] << 2) | (lanes[:, 2] << 4) | (lanes[:, 3] << 6)
    return PackedTernaryTensor(codes=packed.tobytes(), shape=w.shape)


def unpack_ternary(packed: PackedTernaryTensor) -> np.ndarray:
    raw = np.frombuffer(packed.codes, dtype=np.uint8)
    lanes = np.empty((raw.size, 4), dtype=np.uint8)
    for lane in range(4):
        lanes[:, lane] = (raw >> (2 * lane)) & 0b11
    codes2 = lanes.ravel()[:packed.size]
    if np.any(codes2 == CODE_INVALID):
        raise DataError("invalid 0b11 code in packed ternary payload")
    values = np.zeros(packed.size, dtype=np.int64)
    values[codes2 == CODE_POS] = 1
    values[codes2 == CODE_NEG] = -1
    return values.reshape(packed.shape)


@dataclass
class PackedMultibitTensor:
    """4-bit signed packing for the multi-bit variant, |w| <= 7."""

    codes: bytes
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def pack_multibit(w_q: np.ndarray) -> PackedMultibitTensor:
    w = np.asarray(w_q).ravel().astype(np.int64)
    if w.size and (np.abs(w) > 7).any():
        raise DataError("multi-bit packing supports |w| <= 7")
    nibbles = (w & 0xF).astype(np.uint8)
    pad = (-w.size) % 2
    if pad:
        nibbles = np.concatenate([nibbles, np.zeros(1, dtype=np.uint8)])
    pairs = nibbles.reshape(-1, 2)
    packed = pairs[:, 0] | (pairs[:, 1] << 4)
    return PackedMultibitTensor(codes=packed.tobytes(), shape=np.asarray(w_q).shape)


def unpack_multibit(packed: PackedMultibitTensor) -> np.ndarray:
    raw = np.frombuffer(packed.codes, dtype=np.uint8)
    nibbles = np.empty((raw.size, 2), dtype=np.uint8)
    nibbles[:, 0] = raw & 0xF
    nibbles[:, 1] = raw >> 4
    vals = nibbles.ravel()[:packed.size].astype(np.int64)
    vals[vals > 7] -= 16  # sign-extend the 4-bit two's complement codes
    return vals.reshape(packed.shape)


def ac_only_matmul(packed: PackedTernaryTensor, spikes: np.ndarray) -> np.ndarray:
    """Accumulate-only product: out[b, c] = (#matches at +1) - (#matches at -1).

    ``packed`` holds a (C_o, C_i) weight matrix; ``spikes`` is a binary
    (B, C_i) array.  The result is exact integer arithmetic.
    """
    w = unpack_ternary(packed)
    if w.ndim != 2:
        raise ShapeError(f"expected a packed matrix, got shape {packed.shape}")
    s = np.asarray(spikes)
    if not np.isin(s, (0, 1)).all():
        raise DataError("spikes must be binary")
    s = s.astype(np.int64)
    if s.shape[-1] != w.shape[1]:
        raise ShapeError(f"spike width {s.shape[-1]} != weight width {w.shape[1]}")
    pos = s @ (w == 1).astype(np.int64).T
    neg = s @ (w == -1).astype(np.int64).T
    return pos - neg


@dataclass
class FoldedNeuronParams:
    """Scale and shift absorbed into the LIF charging step.

    rho has shape (T, C_o), delta shape (C_o,): the charging becomes
    U[t] = (1 - 1/tau) U[t-1] + rho[t] * X_q[t] + delta, where X_q is the
    raw integer accumulate output.
    """

    rho: np.ndarray
    delta: np.ndarray
    lif: LifConfig


def fold_parameters(alpha: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                    mu: np.ndarray, sigma2: np.ndarray, eps: float,
                    lif: LifConfig) -> FoldedNeuronParams:
    """rho[t] = gamma * alpha[t] / (tau * sqrt(sigma2 + eps)),
    delta = (beta - gamma * mu / sqrt(sigma2 + eps)) / tau."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 + eps <= 0):
        raise ConfigError("sigma2 + eps must be positive")
    std = np.sqrt(sigma2 + eps)
    rho = np.asarray(gamma) * np.asarray(alpha) / (lif.tau * std)
    delta = (np.asarray(beta) - np.asarray(gamma) * np.asarray(mu) / std) / lif.tau
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(delta))):
        raise ConfigError("non-finite folded parameters")
    return FoldedNeuronParams(rho=rho, delta=delta, lif=lif)


@dataclass
class FoldedBlock:
    """One quantized-linear + BN + LIF block prepared for inference."""

    packed: list[PackedTernaryTensor]  # one matrix per timestep
    folded: FoldedNeuronParams


def fold_network(net: Network) -> list:
    """Prepare a trained network for accumulate-only inference.

    Quantized layers must have been run forward at least once (their
    weight stacks are a function of the trained stimulus).  Blocks of
    (QuantLinear, BatchNorm, LIF) collapse into `FoldedBlock`; all other
    layers are passed through unchanged.
    """
    plan = []
    layers = net.layers
    i = 0
    while i < len(layers):
        layer = layers[i]
        if (isinstance(layer, QuantLinear) and i + 2 < len(layers)
                and isinstance(layers[i + 1], BatchNorm)
                and isinstance(layers[i + 2], LIF)):
            if layer.state is None:
                raise DataError(f"layer {i}: quantized weights not materialized; "
                                "run a forward pass first")
            bn, lif = layers[i + 1], layers[i + 2]
            folded = fold_parameters(layer.alpha, bn.params["gamma"],
                                     bn.params["beta"], bn.running_mean,
                                     bn.running_var, bn.eps, lif.cfg)
            packed = [pack_ternary(w) for w in layer.state.w_q]
            plan.append(FoldedBlock(packed=packed, folded=folded))
            i += 3
        else:
            plan.append(layer)
            i += 1
    return plan


def folded_forward(plan: list, x: np.ndarray,
                   record_membranes: bool = False) -> np.ndarray | tuple:
    """Run the folded plan; returns mean-over-time logits.

    With `record_membranes` the per-block membrane traces are returned as
    well, for equivalence checks against the unfolded path.
    """
    h = np.asarray(x, dtype=np.float64)
    membranes = []
    for item in plan:
        if isinstance(item, FoldedBlock):
            f = item.folded
            cfg = f.lif
            T = h.shape[0]
            decay = 1.0 - 1.0 / cfg.tau
            u = np.zeros((h.shape[1], f.rho.shape[1]))
            spikes = np.empty((T,) + u.shape)
            trace = np.empty_like(spikes)
            for t in range(T):
                x_q = ac_only_matmul(item.packed[t], h[t].astype(np.int64))
                u = decay * u + f.rho[t] * x_q + f.delta
                trace[t] = u
                fired = (u >= cfg.v_threshold).astype(np.float64)
                spikes[t] = fired
                u = np.where(fired > 0, cfg.v_reset, u)
            membranes.append(trace)
            h = spikes
        else:
            h = item.forward(h, training=False)
    logits = h.mean(axis=0)
    if record_membranes:
        return logits, membranes
    return logits
