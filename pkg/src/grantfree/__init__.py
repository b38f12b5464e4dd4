"""Grant-free activity detection and channel estimation with vector AMP.

Modules
-------
model            random instances: pilots, activity, fading, received signal
specfun          log-Gamma, regularized incomplete Gamma, erfc
amp              vector AMP with the Bernoulli-Gaussian MMSE denoiser
state_evolution  scalar state evolution and its fixed point
detector         threshold detector and channel estimates
analysis         closed-form error probabilities and channel statistics
harness          seeded Monte Carlo experiments, presets and result files
"""

from .amp import AmpRun, AmpState, amp_run, amp_step, mmse_denoise
from .analysis import (
    channel_stats_asymptotic,
    channel_stats_finite,
    error_probs_asymptotic,
    error_probs_exact,
)
from .detector import DetectionReport, detect, detect_state, detection_threshold
from .harness import ExperimentSpec, preset_desk, preset_section6, run_experiment
from .model import (
    LargeScaleFading,
    SystemConfig,
    generate_pilots,
    pathloss_beta,
    sample_instance,
    synthesize_received,
)
from .state_evolution import SeParams, se_fixed_point

__version__ = "0.1.0"

__all__ = [
    "AmpRun",
    "AmpState",
    "DetectionReport",
    "ExperimentSpec",
    "LargeScaleFading",
    "SeParams",
    "SystemConfig",
    "amp_run",
    "amp_step",
    "channel_stats_asymptotic",
    "channel_stats_finite",
    "detect",
    "detect_state",
    "detection_threshold",
    "error_probs_asymptotic",
    "error_probs_exact",
    "generate_pilots",
    "mmse_denoise",
    "pathloss_beta",
    "preset_desk",
    "preset_section6",
    "run_experiment",
    "sample_instance",
    "se_fixed_point",
    "synthesize_received",
]
