"""
Walk through the temporal quantizer on small hand-picked stimuli.

Shows the accumulate-fire behavior of the recurrence, the resulting
ternary weight patterns, the per-channel scaling factor, and how weight
entropy relates to the stimulus distribution.
"""
import numpy as np

from tawq import QuantConfig, compute_scaling, tawq_forward, weight_entropy
from tawq.quantizer import compute_scaling_all, normalize_stimulus

cfg = QuantConfig(timesteps=6)

# A strong stimulus fires every step: while the weight is nonzero the
# carried state is wiped, so the state sits at (1 - lam) * i.
strong = tawq_forward(np.array(0.6), cfg)
print("stimulus 0.6:")
print("  c_s:", np.round(strong.c_s[1:], 4))
print("  w_q:", strong.w_q.astype(int))

# A weak stimulus needs several steps to cross the threshold, giving a
# periodic accumulate-fire pattern. Weights are sparse in time.
weak = tawq_forward(np.array(0.3), cfg)
print("stimulus 0.3:")
print("  c_s:", np.round(weak.c_s[1:], 4))
print("  w_q:", weak.w_q.astype(int))

# On a whole layer the stimulus is standardized first; the scaling factor
# is the reciprocal mean absolute weight per output channel, so sparser
# channels get larger scales.
rng = np.random.default_rng(0)
stimulus = rng.uniform(-1, 1, size=(4, 32))
state = tawq_forward(normalize_stimulus(stimulus, cfg.epsilon), cfg)
alpha = compute_scaling_all(state)
print("\nlayer of 4 channels, 32 inputs:")
for t in range(cfg.timesteps):
    nz = np.abs(state.w_q[t]).mean(axis=1)
    print(f"  t={t + 1}: nonzero fraction {np.round(nz, 3)} alpha {np.round(alpha[t], 2)}")

row = weight_entropy(state.w_q)
print(f"\nweight entropy {row.entropy:.4f} nats "
      f"(p+={row.p_p:.3f}, p0={row.p_z:.3f}, p-={row.p_n:.3f}); "
      "maximum for ternary codes is ln 3 = 1.0986")

# Effective bit widths for the multi-bit variant.
for n in (1, 2, 4, 8):
    print(f"n={n}: {QuantConfig(n_level=n).bit_width:.2f} bits")
