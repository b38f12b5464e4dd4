"""State-evolution fixed point and closed-form error rates versus M.

Reproduces the reference scenario (2000 devices, 5% active, 23 dBm,
uniform distances on [0.05, 1] km) without any Monte Carlo trials.
Run with ``python3 demos/analytic_curves.py``.
"""

import numpy as np

from grantfree import SeParams, error_probs_asymptotic, preset_section6, se_fixed_point
from grantfree.analysis import population_error_probs

antennas = np.array([4, 8, 16, 32, 64, 128, 256])

for pilot_len in (90, 110):
    spec = preset_section6(pilot_len)
    fading = spec.build_fading()
    cfg = spec.config_at(antennas[-1])
    p = SeParams.from_config(cfg, fading)
    # the asymptotic map has no Monte Carlo term, so this is deterministic
    traj = se_fixed_point(p, "asymptotic")
    tau = traj.fixed_point
    print(f"L = {pilot_len}: tau^2 = {tau:.4e} after {traj.taus.size - 1} steps")

    print("    M     P_MD exact   P_FA exact")
    for m in antennas:
        md, fa = population_error_probs(int(m), fading.betas, tau)
        print(f"  {m:4d}   {md:10.3e}   {fa:10.3e}")

# leading-order and uniform expansions for one device with beta = tau^2
uni = error_probs_asymptotic(antennas, 1.0, 1.0, "uniform")
lead = error_probs_asymptotic(antennas, 1.0, 1.0, "leading")
print("\nbeta / tau^2 = 1, ratio of leading to uniform expansion (P_MD):")
print(np.array2string(lead.p_md / uni.p_md, precision=3))
