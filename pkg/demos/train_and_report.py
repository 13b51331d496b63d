"""
Train three temporal-XOR networks and compare them: full precision,
temporally quantized, and the memoryless quantization ablation.

Afterwards print the entropy / energy / firing-rate report for the
quantized model, the same numbers the `tawq report` subcommand renders.
"""
import numpy as np

from tawq import build_dataset, build_network, count_sops, energy_total, entropy_report, firing_rate_stats, train
from tawq.runconfig import default_xor_document, parse_runconfig


def run(label, doc):
    cfg = parse_runconfig(doc)
    ds = build_dataset(cfg.dataset)
    net = build_network(cfg)
    metrics = train(net, (ds.train_x, ds.train_y), (ds.test_x, ds.test_y), cfg.train)
    print(f"{label:22s} test accuracy {metrics['final_test_accuracy']:.3f} "
          f"loss {metrics['final_test_loss']:.4f}")
    return net, ds


run("full precision", default_xor_document(quantized=False))

ablated = default_xor_document()
ablated["quant"]["temporal"] = False
run("memoryless ablation", ablated)

net, ds = run("temporal quantization", default_xor_document())

# Reports read the traces retained by the last forward pass.
net.forward(ds.test_x, training=False)
traces = net.traces()

ent = entropy_report(traces)
print("\nweight entropy per quantized layer (nats):")
for row in ent.rows:
    print(f"  {row.name}: {row.entropy:.4f} "
          f"(p+={row.p_p:.3f}, p0={row.p_z:.3f}, p-={row.p_n:.3f})")

energy = energy_total(count_sops(traces))
print("\nenergy model (per sample):")
for layer in energy.layers:
    pool = "AC" if layer.quantized else "MAC"
    print(f"  {layer.name}: {pool} pool, sops={layer.sops:.2f} "
          f"flops={layer.flops_float:.1f}")
print(f"  total {energy.e_total_pj:.2f} pJ "
      f"({energy.e_mac_pj:.2f} MAC + {energy.e_ac_pj:.2f} AC)")

firing = firing_rate_stats(traces)
print(f"\nmean firing rate {firing.mean_rate:.3f}; per layer per timestep:")
for rates in firing.rates:
    print("  ", np.round(rates, 3))
