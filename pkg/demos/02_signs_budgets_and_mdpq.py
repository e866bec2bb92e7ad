"""Magnitude / cosine / sign decomposition, the feedback budget, and MDPQ.

Run: python demos/02_signs_budgets_and_mdpq.py
"""

import numpy as np

from dualnet_magpha import decomposition as dec
from dualnet_magpha.channels import ChannelModelConfig, generate_channel_pair, sample_rng, to_angle_delay
from dualnet_magpha.model import loss_smdp

# one full-size channel, truncated to 12 + 4 delay rows
pair = generate_channel_pair(ChannelModelConfig(), sample_rng(0, 0))
h = to_angle_delay(pair.downlink, 12, 4).entries
rng = np.random.default_rng(0)

mag, cos, signs = dec.decompose(h)
print("exact rebuild error:", np.max(np.abs(dec.recombine(mag, cos, signs) - h)))

# only the strongest quarter of the signs is fed back; the rest default to +1
for r_s in (1.0, 0.25, 0.125, 0.0625):
    kept = dec.select_signs(signs, mag, r_s)
    approx = dec.recombine(mag, cos, kept)
    err = np.sum(np.abs(approx - h) ** 2) / np.sum(np.abs(h) ** 2)
    print(f"R_s={r_s:<7} sign bits={dec.n_transmitted(r_s, 16, 64):4d}  NMSE {10 * np.log10(max(err, 1e-12)):7.2f} dB")

# the SMDP loss is the complex squared error written in polar pieces
mag_hat = mag * (1 + 0.1 * rng.normal(size=mag.shape))
cos_hat = np.clip(cos + 0.05 * rng.normal(size=cos.shape), -0.999, 0.999)
direct = np.sum(np.abs(h - dec.recombine(mag_hat, cos_hat, signs)) ** 2)
print("loss_smdp:", loss_smdp(h, mag_hat, cos_hat, signs).item(), " direct:", direct)

# phase feedback: codewords x bits plus the sign bits
for cr, r_s in ((1 / 8, 0.25), (1 / 16, 0.125)):
    b = dec.phase_bit_budget(cr, 8, r_s, 16, 64)
    print(f"CR={cr:.4f}: {b.codeword_bits} codeword bits + {b.sign_bits} sign bits = "
          f"{b.total_bits} ({b.total_bits / 1024:.3f} bits/entry)")

# MDPQ spends bits only on the strongest magnitudes
table = dec.MDPQ_TABLES[1 / 8]
bits = dec.mdpq_bin_bits(mag, table)
print("MDPQ bits per entry histogram:", {int(k): int(v) for k, v in zip(*np.unique(bits, return_counts=True))})
print("MDPQ total:", dec.mdpq_total_bits(16, 64, table), "bits")
ph = dec.mdpq_quantize(np.angle(h), mag, table)
est = mag * np.exp(1j * ph)
print("MDPQ NMSE with perfect magnitudes:",
      round(10 * np.log10(np.sum(np.abs(est - h) ** 2) / np.sum(np.abs(h) ** 2)), 2), "dB")
