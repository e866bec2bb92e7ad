"""Channels in the angle-delay domain, and how much the uplink tells us.

Run: python demos/01_angle_delay_and_reciprocity.py
"""

import numpy as np

from dualnet_magpha.channels import (
    ChannelModelConfig,
    generate_channel_pair,
    magnitude_correlation,
    sample_rng,
    split_rows,
    to_angle_delay,
    angle_delay_full,
)

cfg = ChannelModelConfig.desk()  # 64 subcarriers x 32 antennas
pair = generate_channel_pair(cfg, sample_rng(cfg.rng_seed, 0))
print("spatial-frequency downlink:", pair.downlink.shape, pair.downlink.dtype)

# the full transform: energy piles up in the first few delay rows
full = angle_delay_full(pair.downlink)
row_energy = np.sum(np.abs(full) ** 2, axis=1)
share = np.cumsum(row_energy) / row_energy.sum()
print("energy share of the first 4 / 8 / 16 delay rows:", share[[3, 7, 15]].round(4))

# keep 6 leading rows plus 2 trailing rows (leakage wraps around)
q_f, q_l = split_rows(8)
dl = to_angle_delay(pair.downlink, q_f, q_l).entries
ul = to_angle_delay(pair.uplink, q_f, q_l).entries
kept = np.sum(np.abs(dl) ** 2) / (np.sum(np.abs(full) ** 2))
print(f"truncated to {dl.shape}, keeping {kept:.1%} of the energy")

# magnitudes survive the carrier change far better than phases
print("magnitude correlation DL/UL:", round(magnitude_correlation(dl, ul), 4))
phase_gap = np.angle(dl * np.conj(ul))
big = np.abs(dl) > np.quantile(np.abs(dl), 0.9)
print("mean |phase gap| on the strongest 10% of entries (rad):", round(float(np.mean(np.abs(phase_gap[big]))), 3))

corrs = []
for i in range(200):
    p = generate_channel_pair(cfg, sample_rng(cfg.rng_seed, i))
    corrs.append(magnitude_correlation(to_angle_delay(p.downlink, q_f, q_l).entries,
                                       to_angle_delay(p.uplink, q_f, q_l).entries))
print(f"over 200 draws: mean {np.mean(corrs):.3f}, 5th percentile {np.percentile(corrs, 5):.3f}")
