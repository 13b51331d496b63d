"""Post-hoc metrics: quantized-weight entropy, the SOPs/energy model, the
hardware read/write energy model, and firing-rate statistics.

Energy constants follow the 45 nm measurements commonly adopted in the
SNN literature: 4.6 pJ per 32-bit multiply-accumulate, 0.9 pJ per 32-bit
accumulate, 0.03 pJ per 8-bit accumulate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

E_MAC_PJ = 4.6
E_AC_PJ = 0.9
E_AC_8BIT_PJ = 0.03

MAX_TERNARY_ENTROPY = math.log(3.0)


@dataclass
class EntropyRow:
    name: str
    p_p: float
    p_z: float
    p_n: float
    entropy: float


@dataclass
class EntropyReport:
    rows: list[EntropyRow]
    mean_entropy: float = field(init=False)

    def __post_init__(self) -> None:
        self.mean_entropy = (float(np.mean([r.entropy for r in self.rows]))
                             if self.rows else 0.0)


def weight_entropy(w_q: np.ndarray, name: str = "") -> EntropyRow:
    """Empirical {+1, 0, -1} probabilities and entropy in nats (0*ln0 = 0)."""
    w = np.asarray(w_q)
    if w.size == 0:
        raise ShapeError("cannot compute entropy of an empty weight tensor")
    p_p = float((w > 0).mean())
    p_n = float((w < 0).mean())
    p_z = float((w == 0).mean())
    h = -sum(p * math.log(p) for p in (p_p, p_z, p_n) if p > 0.0)
    return EntropyRow(name=name, p_p=p_p, p_z=p_z, p_n=p_n, entropy=h)


def entropy_report(traces: list[dict]) -> EntropyReport:
    rows = [weight_entropy(t["w_q"], name=f"{i}.{t['kind']}")
            for i, t in enumerate(traces) if "w_q" in t]
    if not rows:
        raise DataError("no quantized layers in traces")
    return EntropyReport(rows)


@dataclass
class LayerOps:
    """Per-layer operation counts (per sample, summed over timesteps)."""

    name: str
    quantized: bool
    tops_per_t: float           # MAC-equivalent op count of one timestep
    firing_rate: list[float]    # input activity fraction per timestep
    synapse_ratio: list[float]  # nonzero-weight fraction per timestep (quantized only)
    sops: float = 0.0           # AC pool, BOPs/64 convention
    flops_float: float = 0.0    # MAC pool


@dataclass
class EnergyReport:
    layers: list[LayerOps]
    e_mac_pj: float = field(init=False)
    e_ac_pj: float = field(init=False)
    e_total_pj: float = field(init=False)
    e_total_mj: float = field(init=False)

    def __post_init__(self) -> None:
        self.e_mac_pj = E_MAC_PJ * sum(l.flops_float for l in self.layers)
        self.e_ac_pj = E_AC_PJ * sum(l.sops for l in self.layers)
        self.e_total_pj = self.e_mac_pj + self.e_ac_pj
        self.e_total_mj = self.e_total_pj * 1e-9


def count_sops(traces: list[dict]) -> list[LayerOps]:
    """Operation counts for every weighted layer in a forward trace.

    Firing rate is the fraction of active positions at the layer INPUT:
    synaptic work is gated by incoming spikes.  Quantized layers convert
    ternary ops to binary-op equivalents via the synapse ratio, then to
    MAC-equivalents with the /64 rule; their float op count is zero.
    """
    rows = []
    for i, t in enumerate(traces):
        if t["kind"] not in ("linear", "qlinear", "conv", "qconv"):
            continue
        x = t["input"]
        quantized = "w_q" in t
        if t["kind"] in ("conv", "qconv"):
            fan_in = (int(np.prod(t["w_q"].shape[2:])) if quantized
                      else int(np.prod(t["weight_shape"][1:]))
                      if "weight_shape" in t else None)
            if fan_in is None:
                raise DataError(f"layer {i}: missing weight shape for conv op count")
            c_out, h_out, w_out = t["output"].shape[2:]
            tops = float(fan_in * c_out * h_out * w_out)
        else:
            tops = float(x.shape[2] * t["output"].shape[2])
        timesteps = x.shape[0]
        fr = [float((x[ts] != 0).mean()) for ts in range(timesteps)]
        row = LayerOps(name=f"{i}.{t['kind']}", quantized=quantized,
                       tops_per_t=tops, firing_rate=fr, synapse_ratio=[])
        if quantized:
            w_q = t["w_q"]
            row.synapse_ratio = [float((w_q[ts] != 0).mean()) for ts in range(timesteps)]
            row.sops = sum(fr[ts] * (row.synapse_ratio[ts] * tops) / 64.0
                           for ts in range(timesteps))
        else:
            row.flops_float = sum(fr[ts] * tops for ts in range(timesteps))
        rows.append(row)
    return rows


def energy_total(layers: list[LayerOps]) -> EnergyReport:
    """E = E_MAC * sum(float FLOPs) + E_AC * sum(SOPs), in picojoules."""
    return EnergyReport(layers=layers)


@dataclass
class HardwareLayer:
    """Descriptor for the read/write hardware energy model."""

    name: str
    n_rd: int                 # weight count C_o * C_i * k_h * k_w
    spatial: int = 1          # output feature positions H' * W' (1 for linear)
    weight_bits: int = 2      # 2 for packed ternary, 8 otherwise
    act_bits: int = 1         # 1 for spikes (packed 8/word), 8 for the input layer


@dataclass
class HardwareEnergyReport:
    layers: list[dict]
    weight_read: float = field(init=False)
    activation_read: float = field(init=False)
    write: float = field(init=False)
    total: float = field(init=False)

    def __post_init__(self) -> None:
        self.weight_read = sum(l["weight_read"] for l in self.layers)
        self.activation_read = sum(l["activation_read"] for l in self.layers)
        self.write = sum(l["write"] for l in self.layers)
        self.total = self.weight_read + self.activation_read + self.write


def energy_hardware(layers: list[HardwareLayer], timesteps: int,
                    e_rd: float = 1.0) -> HardwareEnergyReport:
    """Read/write energy with 2-bit weight packing and 8-spikes-per-word
    activation packing.

    Per weight, one read costs e_rd/4 at 2-bit and e_rd at 8-bit; per
    activation, e_rd/8 for packed spikes and e_rd for 8-bit values.
    Weight reads repeat every timestep; activation traffic additionally
    scales with the output feature positions.  Writes mirror reads.
    """
    rows = []
    for l in layers:
        w_cost = e_rd / 4.0 if l.weight_bits == 2 else e_rd
        a_cost = e_rd / 8.0 if l.act_bits == 1 else e_rd
        weight_read = l.n_rd * w_cost * timesteps
        act_read = l.n_rd * a_cost * timesteps * l.spatial
        rows.append({"name": l.name, "weight_read": weight_read,
                     "activation_read": act_read,
                     "write": weight_read + act_read})
    return HardwareEnergyReport(rows)


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson r, or None when either series has zero variance."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"series shapes differ: {x.shape} vs {y.shape}")
    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        return None
    return float((xc * yc).sum() / denom)


@dataclass
class FiringRateStats:
    rates: list[list[float]]          # per LIF layer, per timestep
    mean_rate: float
    correlation: float | None = None  # vs. a second trace set, if given
    degenerate: bool = False


def firing_rate_stats(traces: list[dict],
                      other: list[dict] | None = None) -> FiringRateStats:
    """Mean spike rates of every LIF layer; optionally Pearson r against a
    second trace set with identical topology."""
    rates = [[float(t["output"][ts].mean()) for ts in range(t["output"].shape[0])]
             for t in traces if t["kind"] == "lif"]
    if not rates:
        raise DataError("no spiking layers in traces")
    flat = np.concatenate([np.asarray(r) for r in rates])
    stats = FiringRateStats(rates=rates, mean_rate=float(flat.mean()))
    if other is not None:
        other_rates = [[float(t["output"][ts].mean())
                        for ts in range(t["output"].shape[0])]
                       for t in other if t["kind"] == "lif"]
        if len(other_rates) != len(rates) or any(
                len(a) != len(b) for a, b in zip(rates, other_rates)):
            raise DataError("trace sets have mismatched topology")
        r = pearson(flat, np.concatenate([np.asarray(x) for x in other_rates]))
        stats.correlation = r
        stats.degenerate = r is None
    return stats
