"""One AMP run on a small cell, then detect and score.

Run with ``python3 demos/quickstart.py``.
"""

import numpy as np

from grantfree import (
    LargeScaleFading,
    SystemConfig,
    amp_run,
    detect_state,
    generate_pilots,
    sample_instance,
    synthesize_received,
)

# 400 devices, 5% active, 50 pilot symbols at 10 dBm, 16 receive antennas
noise_var = 10 ** (-109 / 10) / 1000  # -169 dBm/Hz over 1 MHz, in watts
cfg = SystemConfig(
    n_devices=400,
    pilot_len=50,
    n_antennas=16,
    activity_prob=0.05,
    pilot_energy=50 * 10 ** (10 / 10) / 1000,
    noise_var=noise_var,
    seed=1,
)

fading = LargeScaleFading.uniform_distances(cfg.n_devices, seed=0)

a = generate_pilots(cfg)
x = sample_instance(cfg, fading)
y = synthesize_received(a, x, cfg)

run = amp_run(y, a, fading, cfg)
print("tau^2 per iteration:")
print(np.array2string(run.taus, precision=3))

report = detect_state(run.state, a, fading, cfg, truth=x.activity)
c = report.confusion
print(f"active {x.activity.sum()}, detected {report.decisions.sum()}")
print(f"missed {c.false_neg}, false alarms {c.false_pos}")
