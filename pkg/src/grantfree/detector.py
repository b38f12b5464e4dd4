"""Threshold activity detector and channel estimator on AMP outputs.

A device is declared active when its matched-filter energy exceeds

    theta = M log(1 + beta / tau^2) / (1/tau^2 - 1/(tau^2 + beta)),

which is the point where the activity posterior of the MMSE denoiser
crosses its prior odds. The comparison is evaluated as ``pi > psi`` with
the same expressions the denoiser uses, so ``detect`` and the sign of the
denoiser's log-likelihood ratio never disagree. Exact ties are inactive.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .amp import AmpState, _scalar_parts, matched_filter
from .model import LargeScaleFading, SystemConfig

__all__ = [
    "Confusion",
    "DetectionReport",
    "detection_threshold",
    "detect",
    "estimate_channels",
    "score",
    "detect_state",
]


def _check(beta, tau_sq, m):
    if np.any(~(np.asarray(beta) > 0)) or np.any(~np.isfinite(beta)):
        raise ValueError("beta must be finite and positive")
    if np.any(~(np.asarray(tau_sq) > 0)) or np.any(~np.isfinite(tau_sq)):
        raise ValueError("tau_sq must be finite and positive")
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")


def detection_threshold(beta, tau_sq, m):
    """Energy threshold ``theta`` on ``||x_hat||^2``; broadcasts over arrays."""
    _check(beta, tau_sq, m)
    beta = np.asarray(beta, dtype=float)
    tau_sq = np.asarray(tau_sq, dtype=float)
    # M psi / s with s = beta / (tau^2 (tau^2 + beta)), rearranged to keep
    # precision when beta << tau^2
    out = m * np.log1p(beta / tau_sq) * tau_sq * (tau_sq + beta) / beta
    return out.item() if out.ndim == 0 else out


def _pi_psi(energy, beta, tau_sq, m):
    _, s, psi = _scalar_parts(beta, tau_sq)
    return s * energy / m, psi


def detect(x_stat, beta, tau_sq, m=None):
    """Active iff ``pi > psi`` for the statistic ``x_stat`` (antenna axis last)."""
    x_stat = np.asarray(x_stat)
    m = x_stat.shape[-1] if m is None else int(m)
    _check(beta, tau_sq, m)
    energy = np.sum(np.abs(x_stat) ** 2, axis=-1)
    pi, psi = _pi_psi(energy, np.asarray(beta, float), np.asarray(tau_sq, float), m)
    out = pi > psi
    return bool(out) if np.ndim(out) == 0 else out


def estimate_channels(final_state: AmpState, decisions) -> dict:
    """Map declared-active device index to its row of ``X^t``."""
    decisions = np.asarray(decisions, dtype=bool)
    x = final_state.x_est
    if decisions.shape != x.shape[:-1]:
        raise ValueError("decisions must have one entry per device")
    return {int(k): x[k] for k in np.flatnonzero(decisions)}


@dataclass(frozen=True)
class Confusion:
    true_pos: int
    false_pos: int
    true_neg: int
    false_neg: int

    @property
    def n_active(self) -> int:
        return self.true_pos + self.false_neg

    @property
    def n_inactive(self) -> int:
        return self.true_neg + self.false_pos

    @property
    def p_md(self) -> float | None:
        """Missed detections over actives; ``None`` with no actives."""
        return self.false_neg / self.n_active if self.n_active else None

    @property
    def p_fa(self) -> float | None:
        """False alarms over inactives; ``None`` with no inactives."""
        return self.false_pos / self.n_inactive if self.n_inactive else None


def score(decisions, ground_truth) -> Confusion:
    decisions = np.asarray(decisions, dtype=bool)
    truth = np.asarray(ground_truth, dtype=bool)
    if decisions.shape != truth.shape:
        raise ValueError(
            f"decisions {decisions.shape} and ground truth {truth.shape} differ in shape"
        )
    return Confusion(
        true_pos=int(np.sum(decisions & truth)),
        false_pos=int(np.sum(decisions & ~truth)),
        true_neg=int(np.sum(~decisions & ~truth)),
        false_neg=int(np.sum(~decisions & truth)),
    )


@dataclass(frozen=True)
class DetectionReport:
    decisions: np.ndarray
    statistics: np.ndarray  # ||x_hat_n||^2
    thresholds: np.ndarray
    channel_estimates: dict = field(repr=False)
    confusion: Confusion | None = None
    truth: np.ndarray | None = field(default=None, repr=False)

    def rows(self):
        truth = self.truth
        for n in range(self.decisions.size):
            yield {
                "index": n,
                "statistic": float(self.statistics[n]),
                "threshold": float(self.thresholds[n]),
                "decision": int(self.decisions[n]),
                "truth": "" if truth is None else int(truth[n]),
            }

    def to_csv(self, path) -> None:
        path = Path(path)
        cols = ["index", "statistic", "threshold", "decision", "truth"]
        try:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for r in self.rows():
                    w.writerow([_fmt(r[c]) for c in cols])
        except OSError as exc:
            raise OSError(f"cannot write detection report to {path}: {exc}") from exc

    def to_json(self, path) -> None:
        path = Path(path)
        doc = {"devices": list(self.rows())}
        if self.confusion is not None:
            c = self.confusion
            doc["confusion"] = {
                "true_pos": c.true_pos,
                "false_pos": c.false_pos,
                "true_neg": c.true_neg,
                "false_neg": c.false_neg,
                "p_md": c.p_md,
                "p_fa": c.p_fa,
            }
        try:
            path.write_text(json.dumps(doc, indent=1) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write detection report to {path}: {exc}") from exc


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def detect_state(state: AmpState, a, fading, cfg: SystemConfig, truth=None) -> DetectionReport:
    """Detect from the matched-filter statistic ``A^H R^t + X^t`` of a single
    (unbatched) AMP state, using the state's ``tau_sq``."""
    betas = fading.betas if isinstance(fading, LargeScaleFading) else np.asarray(fading)
    x_stat = matched_filter(state, a)
    if x_stat.ndim != 2:
        raise ValueError("detect_state takes a single instance; loop over batch axes")
    m = x_stat.shape[-1]
    tau = float(state.tau_sq)
    decisions = detect(x_stat, betas, tau, m)
    report = DetectionReport(
        decisions=decisions,
        statistics=np.sum(np.abs(x_stat) ** 2, axis=-1),
        thresholds=np.broadcast_to(detection_threshold(betas, tau, m), decisions.shape),
        channel_estimates=estimate_channels(state, decisions),
        confusion=None if truth is None else score(decisions, truth),
        truth=None if truth is None else np.asarray(truth, dtype=bool),
    )
    return report
