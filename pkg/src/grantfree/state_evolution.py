"""Scalar state evolution for MMSE-denoiser vector AMP.

``tau_{t+1}^2 = s + w e E_b[b tau^2 / (b + tau^2)] + w E_b[vartheta_b(tau^2)]``
with ``s = sigma^2 / xi``, ``w = N / L``, ``e`` the activity probability.
The finite-``M`` correction ``vartheta`` has no closed form and is
estimated by Monte Carlo; the asymptotic variant drops it.

The Monte Carlo draws ``||X_hat||^2`` directly: given the hypothesis, it
is ``v * G`` with ``G ~ Gamma(M, 1)`` and ``v`` equal to ``tau^2`` or
``beta + tau^2``. Both hypotheses are evaluated on every draw and weighted
by ``e`` and ``1 - e``. Draws are fixed per trajectory (common random
numbers), so the full map is a deterministic function of ``tau^2`` and the
fixed-point iteration can converge to a tight tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .model import LargeScaleFading, SystemConfig, stream_rng

__all__ = [
    "SeParams",
    "SeTrajectory",
    "VarthetaSampler",
    "tau0_sq",
    "vartheta",
    "se_step",
    "se_step_asymptotic",
    "se_fixed_point",
    "write_trajectory_csv",
    "format_trajectory",
]

DEFAULT_SAMPLES = 10_000
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True)
class SeParams:
    noise_over_energy: float
    omega: float
    eps: float
    betas: np.ndarray
    m: int | None = None

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.betas, dtype=float))
        if b.size == 0:
            raise ValueError("empty beta population")
        if np.any(~(b > 0)) or np.any(~np.isfinite(b)):
            raise ValueError("betas must be finite and positive")
        object.__setattr__(self, "betas", b)
        if not self.noise_over_energy > 0 or not self.omega > 0:
            raise ValueError("noise_over_energy and omega must be positive")
        if not 0 <= self.eps <= 1:
            raise ValueError("eps must lie in [0, 1]")
        if self.m is not None and int(self.m) < 1:
            raise ValueError("m must be a positive integer")

    @classmethod
    def from_config(cls, cfg: SystemConfig, fading: LargeScaleFading) -> "SeParams":
        return cls(cfg.noise_over_energy, cfg.omega, cfg.activity_prob, fading.betas, cfg.n_antennas)


@dataclass(frozen=True)
class SeTrajectory:
    taus: np.ndarray
    fixed_point: float
    converged: bool
    vartheta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    vartheta_se: np.ndarray = field(default_factory=lambda: np.zeros(0))


def tau0_sq(p: SeParams) -> float:
    """Initial effective noise ``s + w e mean(beta)``."""
    return float(p.noise_over_energy + p.omega * p.eps * np.mean(p.betas))


def _lmmse_term(tau_sq, betas):
    return np.mean(betas * tau_sq / (betas + tau_sq))


def _phi_var_term(r, beta, tau_sq, eps, m):
    # phi (1 - phi) g^2 r / M at ||x_hat||^2 = r
    s = beta / (tau_sq * (tau_sq + beta))
    psi = np.log1p(beta / tau_sq)
    with np.errstate(divide="ignore"):
        prior = np.log(eps) - np.log1p(-eps)
    z = s * r - m * psi + prior
    g = beta / (beta + tau_sq)
    return expit(z) * expit(-z) * g * g * r / m


class VarthetaSampler:
    """Frozen Gamma draws for estimating ``E_b[vartheta_b(tau^2)]``.

    Samples are allocated evenly over the beta population (stratified), so
    the plain sample mean is an unbiased estimate of the population mean.
    """

    def __init__(self, betas, m: int, n_samples: int = DEFAULT_SAMPLES, seed: int = 0):
        betas = np.atleast_1d(np.asarray(betas, dtype=float))
        if n_samples < 1:
            raise ValueError("n_samples must be positive")
        per = max(1, -(-int(n_samples) // betas.size))
        rng = stream_rng(seed, 0x5E, int(m))
        self.m = int(m)
        self.beta = np.repeat(betas, per)
        self.g_active = rng.gamma(self.m, 1.0, size=self.beta.size)
        self.g_inactive = rng.gamma(self.m, 1.0, size=self.beta.size)

    @property
    def n_samples(self) -> int:
        return self.beta.size

    def values(self, tau_sq: float, eps: float) -> np.ndarray:
        b = self.beta
        act = _phi_var_term((b + tau_sq) * self.g_active, b, tau_sq, eps, self.m)
        ina = _phi_var_term(tau_sq * self.g_inactive, b, tau_sq, eps, self.m)
        return eps * act + (1.0 - eps) * ina

    def estimate(self, tau_sq: float, eps: float):
        v = self.values(tau_sq, eps)
        return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0


def vartheta(tau_sq, beta, p: SeParams, n_samples: int = DEFAULT_SAMPLES, seed: int = 0):
    """Monte Carlo ``vartheta_beta(tau^2)`` and its standard error.

    ``(1/M) E[phi (1 - phi) beta^2 / (beta + tau^2)^2 ||X_hat||^2]`` for a
    single ``beta``, with ``X_hat`` drawn from the two-component mixture.
    """
    if p.m is None:
        raise ValueError("vartheta needs a finite antenna count m")
    if not tau_sq > 0 or not beta > 0:
        raise ValueError("tau_sq and beta must be positive")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    if p.eps in (0.0, 1.0):
        return 0.0, 0.0
    sampler = VarthetaSampler([beta], p.m, n_samples, seed)
    return sampler.estimate(tau_sq, p.eps)


def se_step_asymptotic(tau_sq, p: SeParams) -> float:
    """Massive-MIMO map: ``s + w e E_b[b tau^2 / (b + tau^2)]``."""
    if not tau_sq > 0:
        raise ValueError("tau_sq must be positive")
    return float(p.noise_over_energy + p.omega * p.eps * _lmmse_term(tau_sq, p.betas))


def se_step(tau_sq, p: SeParams, n_samples: int = DEFAULT_SAMPLES, seed: int = 0, sampler=None):
    """Full finite-``M`` map. Returns ``(tau_next, vartheta_mean, vartheta_se)``."""
    base = se_step_asymptotic(tau_sq, p)
    if p.m is None:
        raise ValueError("full state evolution needs a finite antenna count m")
    if p.eps in (0.0, 1.0):
        return base, 0.0, 0.0
    if sampler is None:
        sampler = VarthetaSampler(p.betas, p.m, n_samples, seed)
    est, se = sampler.estimate(tau_sq, p.eps)
    return base + p.omega * est, est, se


def se_fixed_point(
    p: SeParams,
    variant: str = "full",
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> SeTrajectory:
    """Successive substitution from ``tau_0^2`` until the relative change
    drops below ``tol``. Non-convergence is flagged, not raised."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if variant not in ("full", "asymptotic"):
        raise ValueError(f"unknown variant {variant!r}")
    sampler = None
    if variant == "full" and 0.0 < p.eps < 1.0:
        if p.m is None:
            raise ValueError("full state evolution needs a finite antenna count m")
        sampler = VarthetaSampler(p.betas, p.m, n_samples, seed)
    taus = [tau0_sq(p)]
    vt, vt_se = [], []
    converged = False
    for _ in range(max_iter):
        tau = taus[-1]
        if variant == "full" and sampler is not None:
            est, se = sampler.estimate(tau, p.eps)
            nxt = se_step_asymptotic(tau, p) + p.omega * est
        else:
            est, se = 0.0, 0.0
            nxt = se_step_asymptotic(tau, p)
        vt.append(est)
        vt_se.append(se)
        taus.append(nxt)
        if abs(nxt - tau) <= tol * tau:
            converged = True
            break
    return SeTrajectory(np.array(taus), taus[-1], converged, np.array(vt), np.array(vt_se))


def format_trajectory(traj: SeTrajectory, fmt: str = "csv") -> str:
    """CSV columns t, tau_sq, vartheta, vartheta_se (blank on the last row),
    or a JSON object; floats with 17 significant digits."""
    g = lambda v: format(float(v), ".17g")  # noqa: E731
    if fmt == "json":
        rows = []
        for t, tau in enumerate(traj.taus):
            vt = g(traj.vartheta[t]) if t < traj.vartheta.size else "null"
            se = g(traj.vartheta_se[t]) if t < traj.vartheta_se.size else "null"
            rows.append(f'{{"t": {t}, "tau_sq": {g(tau)}, "vartheta": {vt}, "vartheta_se": {se}}}')
        return (
            '{"fixed_point": ' + g(traj.fixed_point)
            + ', "converged": ' + ("true" if traj.converged else "false")
            + ', "trajectory": [' + ", ".join(rows) + "]}\n"
        )
    if fmt != "csv":
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    lines = ["t,tau_sq,vartheta,vartheta_se"]
    for t, tau in enumerate(traj.taus):
        if t < traj.vartheta.size:
            lines.append(f"{t},{g(tau)},{g(traj.vartheta[t])},{g(traj.vartheta_se[t])}")
        else:
            lines.append(f"{t},{g(tau)},,")
    return "\n".join(lines) + "\n"


def write_trajectory_csv(path, traj: SeTrajectory) -> None:
    """Write ``format_trajectory(traj, "csv")`` to ``path``."""
    path = Path(path)
    try:
        with path.open("w", newline="\n") as fh:
            fh.write(format_trajectory(traj, "csv"))
    except OSError as exc:
        raise OSError(f"cannot write SE trajectory to {path}: {exc}") from exc
