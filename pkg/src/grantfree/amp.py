"""Vector AMP with the Bernoulli-Gaussian MMSE denoiser.

The received matrix is normalized by ``sqrt(xi)`` on entry, so the
iteration runs on ``Y' = A X + Z'`` with effective noise ``sigma^2 / xi``
and ``X`` keeps its physical (channel) scale.

Every array may carry leading batch axes: pilots ``(..., L, N)``, received
``(..., L, M)``, iterates ``(..., N, M)``. Independent trials stacked along
a leading axis are processed with batched matmuls and never interact.

The Onsager correction defaults to the full ``M x M`` mean Jacobian of the
denoiser (holomorphic Wirtinger derivative). Its trace over ``M`` is the
scalar divergence; the scalar form (``onsager="scalar"``) drops the
rank-one part ``g phi (1 - phi) s x_hat x_hat^H``, which at a thousand
devices is not yet isotropic and makes the iteration drift away from state
evolution (and diverge on wide-dynamic-range fading).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .model import LargeScaleFading, PilotMatrix, ReceivedMatrix, SystemConfig

__all__ = [
    "AmpState",
    "AmpRun",
    "DenoiserOutput",
    "mmse_denoise",
    "denoiser_divergence",
    "matched_filter",
    "initial_state",
    "amp_step",
    "amp_run",
    "write_trace_csv",
]

DEFAULT_ITERS = 25
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class AmpState:
    """Iterate ``X^t``, residual ``R^t``, iteration index and the
    effective-noise variance used by the denoiser at this iteration."""

    x_est: np.ndarray
    residual: np.ndarray
    iter: int
    tau_sq: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau_sq, dtype=float)
        if np.any(~np.isfinite(tau)) or np.any(tau <= 0):
            raise ValueError("tau_sq must be finite and positive")
        object.__setattr__(self, "tau_sq", tau)


@dataclass(frozen=True)
class DenoiserOutput:
    value: np.ndarray
    phi: np.ndarray
    pi_stat: np.ndarray
    psi_stat: np.ndarray
    divergence: np.ndarray


@dataclass(frozen=True)
class AmpRun:
    state: AmpState
    taus: np.ndarray  # (T + 1, ...) tau^2 per iteration, taus[0] for X^0
    phi: np.ndarray  # (..., N) activity posterior at the final denoising step
    phi_trace: list = field(default_factory=list, repr=False)
    states: list = field(default_factory=list, repr=False)  # only with keep_states

    @property
    def n_iters(self) -> int:
        return self.state.iter


def _check_positive(beta, tau_sq):
    if np.any(~(np.asarray(beta) > 0)):
        raise ValueError("beta must be positive")
    if np.any(~(np.asarray(tau_sq) > 0)) or np.any(~np.isfinite(tau_sq)):
        raise ValueError("tau_sq must be finite and positive")


def _log_prior_odds(eps):
    eps = np.asarray(eps, dtype=float)
    if np.any((eps < 0) | (eps > 1)):
        raise ValueError("eps must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        return np.log(eps) - np.log1p(-eps)


def _scalar_parts(beta, tau_sq):
    # gain g, precision gap s = 1/tau^2 - 1/(tau^2 + beta), and psi
    g = beta / (beta + tau_sq)
    s = beta / (tau_sq * (tau_sq + beta))
    psi = np.log1p(beta / tau_sq)
    return g, s, psi


def _logit_phi(r, beta, tau_sq, eps, m):
    g, s, psi = _scalar_parts(beta, tau_sq)
    pi = s * r / m
    return m * (pi - psi) + _log_prior_odds(eps), g, s, pi, psi


def mmse_denoise(x_hat, beta, tau_sq, eps, m=None) -> DenoiserOutput:
    """Posterior mean of a Bernoulli-Gaussian row given ``x_hat = x + tau v``.

    ``x_hat`` has the antenna axis last; ``beta`` and ``tau_sq`` broadcast
    against ``x_hat.shape[:-1]``. The activity weight is
    ``phi = expit(M (pi - psi) + log(eps / (1 - eps)))``, evaluated without
    forming ``exp(M (pi - psi))``.
    """
    x_hat = np.asarray(x_hat)
    beta = np.asarray(beta, dtype=float)
    tau_sq = np.asarray(tau_sq, dtype=float)
    _check_positive(beta, tau_sq)
    m = x_hat.shape[-1] if m is None else int(m)
    r = np.sum(np.abs(x_hat) ** 2, axis=-1)
    z, g, s, pi, psi = _logit_phi(r, beta, tau_sq, eps, m)
    phi = expit(z)
    phi_c = expit(-z)
    value = (phi * g)[..., None] * x_hat
    div = g * phi + g * phi * phi_c * s * r / m
    return DenoiserOutput(value, phi, pi, np.broadcast_to(psi, pi.shape), div)


def denoiser_divergence(x_hat, beta, tau_sq, eps, m=None, part="holomorphic"):
    """Mean diagonal of the denoiser Jacobian, ``(1/M) tr(d eta / d x_hat)``.

    ``part="holomorphic"`` is the Wirtinger derivative with respect to
    ``x_hat`` (used in the Onsager term); it is real for this denoiser and
    equals ``g phi + g phi (1 - phi) s ||x_hat||^2 / M``.
    ``part="conjugate"`` returns ``(1/M) sum_m d eta_m / d conj(x_hat_m)``,
    which is complex in general.
    """
    x_hat = np.asarray(x_hat)
    beta = np.asarray(beta, dtype=float)
    tau_sq = np.asarray(tau_sq, dtype=float)
    _check_positive(beta, tau_sq)
    m = x_hat.shape[-1] if m is None else int(m)
    r = np.sum(np.abs(x_hat) ** 2, axis=-1)
    z, g, s, _, _ = _logit_phi(r, beta, tau_sq, eps, m)
    phi, phi_c = expit(z), expit(-z)
    if part == "holomorphic":
        return g * phi + g * phi * phi_c * s * r / m
    if part == "conjugate":
        return g * phi * phi_c * s * np.sum(x_hat**2, axis=-1) / m
    raise ValueError(f"unknown derivative part {part!r}")


def matched_filter(state: AmpState, a) -> np.ndarray:
    """Per-device statistic ``a_n^H R^t + x_n^t`` stacked as ``(..., N, M)``."""
    a = _pilots(a)
    return np.swapaxes(a.conj(), -1, -2) @ state.residual + state.x_est


def _pilots(a):
    return a.a if isinstance(a, PilotMatrix) else np.asarray(a)


def _received(y):
    return y.y if isinstance(y, ReceivedMatrix) else np.asarray(y)


def _betas(fading):
    return fading.betas if isinstance(fading, LargeScaleFading) else np.asarray(fading)


def _normalize(y, cfg: SystemConfig):
    if cfg.pilot_energy <= 0:
        raise ValueError("AMP needs pilot_energy > 0")
    return _received(y) / np.sqrt(cfg.pilot_energy)


def _residual_energy(residual):
    L, M = residual.shape[-2:]
    return np.sum(np.abs(residual) ** 2, axis=(-2, -1)) / (L * M)


def _next_tau(policy, t, residual):
    if isinstance(policy, str):
        if policy != "empirical":
            raise ValueError(f"unknown tau policy {policy!r}")
        return _residual_energy(residual)
    taus = np.asarray(policy, dtype=float)
    tau = taus[min(t, taus.shape[0] - 1)]
    return np.broadcast_to(tau, residual.shape[:-2]).copy()


def initial_state(y, cfg: SystemConfig, n_devices=None, tau_policy="empirical") -> AmpState:
    """``X^0 = 0`` and ``R^0 = Y / sqrt(xi)``."""
    yn = _normalize(y, cfg)
    n = cfg.n_devices if n_devices is None else n_devices
    x0 = np.zeros(yn.shape[:-2] + (n, yn.shape[-1]), dtype=complex)
    return AmpState(x0, yn, 0, _next_tau(tau_policy, 0, yn))


def _onsager_term(residual, x_hat, out, betas, tau, onsager):
    L = residual.shape[-2]
    N = x_hat.shape[-2]
    if onsager == "scalar":
        coef = (N / L) * np.mean(out.divergence, axis=-1)
        return coef[..., None, None] * residual
    if onsager == "matrix":
        # (1/L) R sum_n J_n^T with J_n = g phi I + g phi (1 - phi) s x_hat x_hat^H
        g, s, _ = _scalar_parts(betas, tau)
        c = g * out.phi * (1.0 - out.phi) * s
        jac = np.swapaxes(x_hat.conj(), -1, -2) @ (c[..., None] * x_hat)
        diag = np.sum(g * out.phi, axis=-1)
        jac = jac + diag[..., None, None] * np.eye(x_hat.shape[-1])
        return residual @ jac / L
    raise ValueError(f"unknown onsager convention {onsager!r}")


def _step(state, yn, a, betas, eps, tau_policy, onsager="matrix"):
    m = yn.shape[-1]
    tau = state.tau_sq[..., None]
    x_hat = np.swapaxes(a.conj(), -1, -2) @ state.residual + state.x_est
    out = mmse_denoise(x_hat, betas, tau, eps, m)
    x_new = out.value
    r_new = yn - a @ x_new + _onsager_term(state.residual, x_hat, out, betas, tau, onsager)
    tau_new = _next_tau(tau_policy, state.iter + 1, r_new)
    return AmpState(x_new, r_new, state.iter + 1, tau_new), out


def amp_step(
    state: AmpState,
    y,
    a,
    fading,
    cfg: SystemConfig,
    tau_policy="empirical",
    onsager: str = "matrix",
) -> AmpState:
    """One AMP iteration.

    ``x_n^{t+1} = eta(a_n^H R^t + x_n^t)`` and
    ``R^{t+1} = Y' - A X^{t+1} + (N/L) R^t mean_n div_n``.

    ``tau_policy`` is ``"empirical"`` (``||R||_F^2 / (L M)``) or a sequence
    of state-evolution variances indexed by iteration. ``onsager="scalar"``
    multiplies ``R^t`` by the mean Jacobian trace over ``M``; ``"matrix"``
    uses the full ``M x M`` mean Jacobian instead.
    """
    a = _pilots(a)
    yn = _normalize(y, cfg)
    if state.residual.shape != yn.shape or state.x_est.shape[-2] != a.shape[-1]:
        raise ValueError("state dimensions disagree with pilots / received signal")
    new, _ = _step(state, yn, a, _betas(fading), cfg.activity_prob, tau_policy, onsager)
    return new


def amp_run(
    y,
    a,
    fading,
    cfg: SystemConfig,
    n_iters: int = DEFAULT_ITERS,
    tau_policy="empirical",
    tol: float = DEFAULT_TOL,
    keep_phi_trace: bool = False,
    onsager: str = "matrix",
    keep_states: bool = False,
) -> AmpRun:
    """Iterate from ``X^0 = 0, R^0 = Y'`` for up to ``n_iters`` steps.

    Stops early once ``|tau_{t+1}^2 - tau_t^2| / tau_t^2 < tol`` for every
    batch element; pass ``tol=0`` to always run ``n_iters`` steps.
    ``keep_states`` stores every intermediate ``AmpState`` (including the
    initial one) for per-iteration detection.
    """
    if n_iters < 0:
        raise ValueError("n_iters must be non-negative")
    a = _pilots(a)
    betas = _betas(fading)
    yn = _normalize(y, cfg)
    if a.shape[-2] != yn.shape[-2] or betas.shape[-1] != a.shape[-1]:
        raise ValueError("dimension mismatch between pilots, received and fading")
    state = initial_state(y, cfg, a.shape[-1], tau_policy)
    taus = [state.tau_sq]
    phi = np.zeros(state.x_est.shape[:-1])
    phi_trace = []
    states = [state] if keep_states else []
    for _ in range(n_iters):
        new, out = _step(state, yn, a, betas, cfg.activity_prob, tau_policy, onsager)
        phi = out.phi
        if keep_phi_trace:
            phi_trace.append(phi)
        taus.append(new.tau_sq)
        if keep_states:
            states.append(new)
        converged = np.all(np.abs(new.tau_sq - state.tau_sq) < tol * state.tau_sq)
        state = new
        if converged:
            break
    return AmpRun(state, np.stack(taus), phi, phi_trace, states)


def write_trace_csv(path, run: AmpRun, activity) -> None:
    """Per-iteration CSV: iteration, tau_sq, mean phi over actives / inactives.

    Needs ``run`` produced with ``keep_phi_trace=True`` on a single instance.
    """
    activity = np.asarray(activity, dtype=bool)
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "tau_sq", "mean_phi_active", "mean_phi_inactive"])
            for t, phi in enumerate(run.phi_trace):
                act = phi[activity].mean() if activity.any() else float("nan")
                ina = phi[~activity].mean() if (~activity).any() else float("nan")
                w.writerow([t, repr(float(run.taus[t])), repr(float(act)), repr(float(ina))])
    except OSError as exc:
        raise OSError(f"cannot write AMP trace to {path}: {exc}") from exc
