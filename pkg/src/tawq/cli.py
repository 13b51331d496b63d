"""Command-line surface: train, report, infer, fold, gen-data.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error.
TAWQ_THREADS caps internal parallelism (applied to the BLAS thread pools).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .analysis import (
    HardwareLayer,
    count_sops,
    energy_hardware,
    energy_total,
    entropy_report,
    firing_rate_stats,
)
from .checkpoint import (
    checkpoint_from_network,
    load_checkpoint,
    network_from_checkpoint,
    save_checkpoint,
)
from .data import build_dataset, save_raster_grid
from .errors import ConfigError, DataError, NumericError, TawqError
from .runconfig import load_runconfig
from .runtime import fold_network, folded_forward
from .trainer import train


def _apply_thread_cap() -> None:
    cap = os.environ.get("TAWQ_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def cmd_train(args) -> int:
    cfg = load_runconfig(args.config)
    if args.ablate_temporal:
        cfg.quant = dataclasses.replace(cfg.quant, temporal=False)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    from .runconfig import build_network
    ds = build_dataset(cfg.dataset)
    net = build_network(cfg)
    log_lines: list[str] = []
    metrics = train(net, (ds.train_x, ds.train_y), (ds.test_x, ds.test_y),
                    cfg.train, log_lines=log_lines)
    with open(cfg.metrics_path, "w") as fh:
        fh.write("\n".join(log_lines) + "\n")
    summary = {"final_test_loss": metrics["final_test_loss"],
               "final_test_accuracy": metrics["final_test_accuracy"],
               "final_entropy_mean": metrics["final_entropy_mean"],
               "ablate_temporal": not cfg.quant.temporal}
    save_checkpoint(cfg.checkpoint_path, checkpoint_from_network(net, cfg, summary))
    print(json.dumps(summary, sort_keys=True))
    return 0


def _table(title: str, header: list[str], rows: list[list]) -> str:
    cols = [header] + [[f"{v:.6g}" if isinstance(v, float) else str(v) for v in r]
                       for r in rows]
    widths = [max(len(r[i]) for r in cols) for i in range(len(header))]
    lines = [title, "  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cols[1:]]
    return "\n".join(lines)


def cmd_report(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net, cfg = network_from_checkpoint(ckpt)
    ds = build_dataset(cfg.dataset)
    net.forward(ds.test_x, training=False)
    traces = net.traces()

    ent = entropy_report(traces)
    ops = count_sops(traces)
    energy = energy_total(ops)
    hw_layers = []
    for i, t in enumerate(traces):
        if t["kind"] not in ("linear", "qlinear", "conv", "qconv"):
            continue
        if "w_q" in t:
            n_rd = int(np.prod(t["w_q"].shape[1:]))
            bits, act = 2, 1
        else:
            shape = t.get("weight_shape") or (t["output"].shape[2], t["input"].shape[2])
            n_rd = int(np.prod(shape))
            bits = 8
            act = 8 if i == 0 else 1
        spatial = (int(np.prod(t["output"].shape[3:]))
                   if t["output"].ndim == 5 else 1)
        hw_layers.append(HardwareLayer(name=f"{i}.{t['kind']}", n_rd=n_rd,
                                       spatial=spatial, weight_bits=bits,
                                       act_bits=act))
    hw = energy_hardware(hw_layers, cfg.quant.timesteps)
    firing = firing_rate_stats(traces)

    machine = {
        "entropy": {"mean": ent.mean_entropy,
                    "layers": [dataclasses.asdict(r) for r in ent.rows]},
        "energy": {"e_mac_pj": energy.e_mac_pj, "e_ac_pj": energy.e_ac_pj,
                   "e_total_pj": energy.e_total_pj,
                   "layers": [dataclasses.asdict(l) for l in energy.layers]},
        "hardware": {"weight_read": hw.weight_read,
                     "activation_read": hw.activation_read,
                     "write": hw.write, "total": hw.total},
        "firing": {"mean_rate": firing.mean_rate, "rates": firing.rates},
    }
    if args.json:
        with open(args.json, "w") as fh:
            for section, payload in machine.items():
                fh.write(json.dumps({"section": section, **payload},
                                    sort_keys=True) + "\n")
    print(_table("weight entropy (nats)",
                 ["layer", "p_pos", "p_zero", "p_neg", "entropy"],
                 [[r.name, r.p_p, r.p_z, r.p_n, r.entropy] for r in ent.rows]))
    print()
    print(_table("energy model (per sample)",
                 ["layer", "quantized", "sops", "flops_float"],
                 [[l.name, l.quantized, l.sops, l.flops_float]
                  for l in energy.layers]))
    print(f"E_total = {energy.e_total_pj:.6g} pJ "
          f"(MAC {energy.e_mac_pj:.6g} + AC {energy.e_ac_pj:.6g})")
    print()
    print(f"hardware read/write energy (E_rd units): weight {hw.weight_read:.6g}, "
          f"activation {hw.activation_read:.6g}, write {hw.write:.6g}")
    print(f"mean firing rate: {firing.mean_rate:.6g}")
    return 0


def _load_inputs(path: str) -> np.ndarray:
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        raise ConfigError(f"input file {path!r} is missing or empty")
    try:
        with np.load(path) as npz:
            return np.asarray(npz["inputs"], dtype=np.float64)
    except (KeyError, ValueError, OSError) as exc:
        raise DataError(f"{path}: cannot read 'inputs' array: {exc}") from exc


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net, cfg = network_from_checkpoint(ckpt)
    x = _load_inputs(args.input)
    if args.folded:
        logits = folded_forward(fold_network(net), x)
    else:
        logits = net.forward(x, training=False)
    preds = logits.argmax(axis=1)
    out = "\n".join(str(int(p)) for p in preds)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
    else:
        print(out)
    return 0


def cmd_fold(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net, _ = network_from_checkpoint(ckpt)
    plan = fold_network(net)
    blocks = [b for b in plan if hasattr(b, "folded")]
    if not blocks:
        raise DataError("checkpoint has no foldable quantized blocks")
    arrays = {}
    for j, b in enumerate(blocks):
        arrays[f"block{j}.rho"] = b.folded.rho
        arrays[f"block{j}.delta"] = b.folded.delta
    np.savez(args.out, **arrays)
    print(f"folded {len(blocks)} block(s) -> {args.out}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = load_runconfig(args.config)
    ds = build_dataset(cfg.dataset)
    if args.raster:
        n = ds.train_x.shape[1]
        side = int(np.sqrt(ds.train_x.shape[-1]))
        pixels = (ds.train_x.mean(axis=0).reshape(n, side, side) * 255)
        save_raster_grid(args.out, pixels.astype(np.uint8), ds.train_y)
    else:
        np.savez(args.out, train_inputs=ds.train_x, train_labels=ds.train_y,
                 test_inputs=ds.test_x, test_labels=ds.test_y)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tawq",
                                description="Temporal-adaptive weight quantization "
                                            "for spiking networks")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network from a run configuration")
    t.add_argument("config")
    t.add_argument("--ablate-temporal", action="store_true",
                   help="memoryless WQ baseline: re-quantize the stimulus each step")
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("report", help="entropy / energy / firing-rate report")
    r.add_argument("checkpoint")
    r.add_argument("--json", default=None, help="also write line-delimited records")
    r.set_defaults(func=cmd_report)

    i = sub.add_parser("infer", help="run inference on an .npz input file")
    i.add_argument("checkpoint")
    i.add_argument("input")
    mode = i.add_mutually_exclusive_group()
    mode.add_argument("--folded", action="store_true", default=True)
    mode.add_argument("--unfolded", dest="folded", action="store_false")
    i.add_argument("--out", default=None)
    i.set_defaults(func=cmd_infer)

    f = sub.add_parser("fold", help="emit folded neuron parameters as .npz")
    f.add_argument("checkpoint")
    f.add_argument("--out", default="folded.npz")
    f.set_defaults(func=cmd_fold)

    g = sub.add_parser("gen-data", help="generate the configured dataset")
    g.add_argument("config")
    g.add_argument("--out", default="dataset.npz")
    g.add_argument("--raster", action="store_true",
                   help="write the raster-grid binary format instead of .npz")
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except TawqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
