"""Closed-form detection and estimation performance.

Detection: with ``a = beta / tau^2``, the energy test ``||x_hat||^2 > theta``
misses with probability ``P(M, bM)`` and false-alarms with ``Q(M, cM)``,

    b = log(1 + a) / a,    c = (1 + a) log(1 + a) / a,

and ``b < 1 < c`` for every ``a > 0``. For large ``M`` both decay like
``exp(-M x^2 / 2) / sqrt(M)`` with ``nu = -sqrt(2 (b - 1 - log b))`` and
``varsigma = sqrt(2 (c - 1 - log c))``.

Estimation: the per-antenna variance of the estimated channel and of the
estimation error of an active device, exact at finite ``M`` by Monte Carlo
over the decoupled model ``h + tau v``, and their ``M -> inf`` limits
``beta^2 / (beta + tau^2)`` and ``beta tau^2 / (beta + tau^2)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import specfun
from .model import LargeScaleFading, SystemConfig, complex_normal, stream_rng
from .state_evolution import SeParams, se_fixed_point

__all__ = [
    "ErrorProbPair",
    "ChannelErrorStats",
    "bc_coeffs",
    "nu_varsigma",
    "error_probs_exact",
    "error_probs_asymptotic",
    "population_error_probs",
    "channel_stats_finite",
    "channel_stats_asymptotic",
    "CURVE_COLUMNS",
    "curve_rows",
    "write_curve_csv",
]

ASYMPTOTIC_FORMS = ("leading", "uniform", "printed")


@dataclass(frozen=True)
class ErrorProbPair:
    p_md: np.ndarray | float
    p_fa: np.ndarray | float
    b_coeff: np.ndarray | float
    c_coeff: np.ndarray | float
    nu: np.ndarray | float
    varsigma: np.ndarray | float


@dataclass(frozen=True)
class ChannelErrorStats:
    upsilon: float
    delta_upsilon: float
    upsilon_se: float = 0.0
    delta_upsilon_se: float = 0.0


def _ratio(beta, tau_sq):
    beta = np.asarray(beta, dtype=float)
    tau_sq = np.asarray(tau_sq, dtype=float)
    if np.any(~(beta > 0)) or np.any(~np.isfinite(beta)):
        raise ValueError("beta must be finite and positive")
    if np.any(~(tau_sq > 0)) or np.any(~np.isfinite(tau_sq)):
        raise ValueError("tau_sq must be finite and positive")
    return beta / tau_sq


def _out(x):
    x = np.asarray(x)
    return x.item() if x.ndim == 0 else x


def _log1p_minus_x_over_x(a):
    # (log(1 + a) - a) / a = b - 1, with a series where the subtraction cancels
    a = np.asarray(a, dtype=float)
    small = a < 1e-3
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (np.log1p(a) - a) / a
    s = np.where(small, a, 0.0)
    series = -s / 2 + s**2 / 3 - s**3 / 4 + s**4 / 5 - s**5 / 6
    return np.where(small, series, direct)


def _d_minus_log1p(d):
    # d - log(1 + d) >= 0, series near d = 0
    d = np.asarray(d, dtype=float)
    small = np.abs(d) < 1e-3
    s = np.where(small, d, 0.0)
    series = s**2 / 2 - s**3 / 3 + s**4 / 4 - s**5 / 5 + s**6 / 6
    with np.errstate(invalid="ignore"):
        direct = d - np.log1p(np.where(small, 0.0, d))
    return np.where(small, series, direct)


def _bc_parts(beta, tau_sq):
    a = _ratio(beta, tau_sq)
    bm1 = _log1p_minus_x_over_x(a)  # b - 1 < 0
    cm1 = bm1 + np.log1p(a)  # c - 1 = (b - 1) + log(1 + a) > 0
    if np.any(~(bm1 < 0)) or np.any(~(cm1 > 0)):
        raise ValueError(
            "b < 1 < c fails in double precision (beta / tau_sq too small to resolve)"
        )
    return 1.0 + bm1, 1.0 + cm1, bm1, cm1


def bc_coeffs(beta, tau_sq):
    """``(b, c)`` for the energy detector; raises unless ``b < 1 < c``."""
    b, c, _, _ = _bc_parts(beta, tau_sq)
    return _out(b), _out(c)


def nu_varsigma(beta, tau_sq):
    """``(nu, varsigma)`` with ``nu < 0 < varsigma``."""
    _, _, bm1, cm1 = _bc_parts(beta, tau_sq)
    nu = -np.sqrt(2.0 * _d_minus_log1p(bm1))
    vs = np.sqrt(2.0 * _d_minus_log1p(cm1))
    return _out(nu), _out(vs)


def _check_m(m):
    m = np.asarray(m)
    if np.any(m < 1) or np.any(np.round(m) != m):
        raise ValueError("m must be a positive integer")
    return m.astype(float)


def error_probs_exact(m, beta, tau_sq) -> ErrorProbPair:
    """Missed-detection ``P(M, bM)`` and false-alarm ``Q(M, cM)``."""
    mf = _check_m(m)
    b, c, bm1, cm1 = _bc_parts(beta, tau_sq)
    nu = -np.sqrt(2.0 * _d_minus_log1p(bm1))
    vs = np.sqrt(2.0 * _d_minus_log1p(cm1))
    p_md = specfun.reg_gamma_lower(mf, b * mf)
    p_fa = specfun.reg_gamma_upper(mf, c * mf)
    return ErrorProbPair(_out(p_md), _out(p_fa), _out(b), _out(c), _out(nu), _out(vs))


def error_probs_asymptotic(m, beta, tau_sq, form: str = "leading") -> ErrorProbPair:
    """Large-``M`` approximations of the exact error probabilities.

    Parameters
    ----------
    form : {"leading", "uniform", "printed"}
        ``"leading"`` is the first term of the large-``M`` expansion,
        ``exp(-M nu^2/2) / (sqrt(2 pi M) (1 - b))`` for missed detection and
        ``exp(-M varsigma^2/2) / (sqrt(2 pi M) (c - 1))`` for false alarm; its
        ratio to the exact value tends to 1.
        ``"uniform"`` keeps the complementary-error-function part of the
        uniform expansion, ``erfc(|x| sqrt(M/2)) / 2`` plus the same
        correction, and is accurate down to small ``M``.
        ``"printed"`` is
        ``-exp(-M nu^2/2) / (2 sqrt(2 pi M)) (1/(b-1) + 1/nu)`` and its
        false-alarm twin; it does not converge to the exact value (its ratio
        tends to ``(1 + (1-b)/|nu|)/2``) and is kept for comparison only.

    Results are clamped to ``[0, 1]``.
    """
    if form not in ASYMPTOTIC_FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {ASYMPTOTIC_FORMS}")
    mf = _check_m(m)
    b, c, bm1, cm1 = _bc_parts(beta, tau_sq)
    nu = -np.sqrt(2.0 * _d_minus_log1p(bm1))
    vs = np.sqrt(2.0 * _d_minus_log1p(cm1))
    root = np.sqrt(2.0 * np.pi * mf)
    e_md = np.exp(-mf * nu * nu / 2.0)
    e_fa = np.exp(-mf * vs * vs / 2.0)
    if form == "leading":
        p_md = e_md / (root * -bm1)
        p_fa = e_fa / (root * cm1)
    elif form == "uniform":
        p_md = 0.5 * specfun.erfc(-nu * np.sqrt(mf / 2.0)) - e_md / root * (1.0 / bm1 - 1.0 / nu)
        p_fa = 0.5 * specfun.erfc(vs * np.sqrt(mf / 2.0)) + e_fa / root * (1.0 / cm1 - 1.0 / vs)
    else:
        p_md = -e_md / (2.0 * root) * (1.0 / bm1 + 1.0 / nu)
        p_fa = e_fa / (2.0 * root) * (1.0 / cm1 + 1.0 / vs)
    p_md = np.clip(p_md, 0.0, 1.0)
    p_fa = np.clip(p_fa, 0.0, 1.0)
    return ErrorProbPair(_out(p_md), _out(p_fa), _out(b), _out(c), _out(nu), _out(vs))


def population_error_probs(m, betas, tau_sq, form: str = "exact"):
    """Device-averaged ``(p_md, p_fa)`` over a beta population at one ``tau_sq``."""
    betas = np.asarray(betas, dtype=float)
    if form == "exact":
        pair = error_probs_exact(m, betas, tau_sq)
    else:
        pair = error_probs_asymptotic(m, betas, tau_sq, form)
    return float(np.mean(pair.p_md)), float(np.mean(pair.p_fa))


def channel_stats_asymptotic(beta, tau_sq) -> ChannelErrorStats:
    """``(beta^2, beta tau^2) / (beta + tau^2)``; they sum to ``beta``."""
    _ratio(beta, tau_sq)
    beta = float(beta)
    tau_sq = float(tau_sq)
    return ChannelErrorStats(beta * beta / (beta + tau_sq), beta * tau_sq / (beta + tau_sq))


def channel_stats_finite(
    m: int, beta, tau_sq, eps, n_samples: int = 10_000, seed: int = 0
) -> ChannelErrorStats:
    """Monte Carlo per-antenna variances of ``eta(h + tau v)`` and of its error.

    ``h ~ CN(0, beta I_M)`` (an active device), ``v ~ CN(0, I_M)``, and
    ``eta`` is the MMSE denoiser with activity prior ``eps``.
    """
    _ratio(beta, tau_sq)
    m = int(_check_m(m))
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    beta, tau_sq = float(beta), float(tau_sq)
    rng = stream_rng(seed, 0xC5, m)
    g = beta / (beta + tau_sq)
    s = beta / (tau_sq * (tau_sq + beta))
    prior = np.log(eps) - np.log1p(-eps) if eps < 1.0 else np.inf
    up = np.empty(n_samples)
    dup = np.empty(n_samples)
    chunk = max(1, 2**20 // m)
    for lo in range(0, n_samples, chunk):
        hi = min(n_samples, lo + chunk)
        h = complex_normal(rng, (hi - lo, m), beta)
        y = h + complex_normal(rng, (hi - lo, m), tau_sq)
        r = np.sum(np.abs(y) ** 2, axis=1)
        phi = expit(s * r - m * np.log1p(beta / tau_sq) + prior)
        est = (phi * g)[:, None] * y
        up[lo:hi] = np.sum(np.abs(est) ** 2, axis=1) / m
        dup[lo:hi] = np.sum(np.abs(est - h) ** 2, axis=1) / m
    root = np.sqrt(n_samples)
    return ChannelErrorStats(
        float(up.mean()),
        float(dup.mean()),
        float(up.std(ddof=1) / root),
        float(dup.std(ddof=1) / root),
    )


CURVE_COLUMNS = (
    "parameter",
    "value",
    "tau_sq",
    "p_md_exact",
    "p_fa_exact",
    "p_md_asym",
    "p_fa_asym",
    "upsilon",
    "delta_upsilon",
)


def curve_rows(
    cfg: SystemConfig,
    fading: LargeScaleFading,
    parameter: str,
    values,
    probe_beta: float | None = None,
    se_variant: str = "full",
    asym_form: str = "leading",
    n_samples: int = 10_000,
    seed: int = 0,
):
    """Analytic curves over a grid of antenna counts or pilot lengths.

    For each value the state-evolution fixed point is recomputed on the
    config's beta population; error probabilities are device averages.
    ``upsilon`` and ``delta_upsilon`` are the large-``M`` channel statistics
    of ``probe_beta`` when given, otherwise population means normalized by
    each device's ``beta``.
    """
    if parameter not in ("n_antennas", "pilot_len"):
        raise ValueError("parameter must be 'n_antennas' or 'pilot_len'")
    rows = []
    for v in values:
        if parameter == "n_antennas":
            c = SystemConfig(cfg.n_devices, cfg.pilot_len, int(v), cfg.activity_prob,
                             cfg.pilot_energy, cfg.noise_var, cfg.seed)
        else:
            # pilot energy is L times the per-symbol power
            rho = cfg.pilot_energy / cfg.pilot_len
            c = SystemConfig(cfg.n_devices, int(v), cfg.n_antennas, cfg.activity_prob,
                             rho * int(v), cfg.noise_var, cfg.seed)
        traj = se_fixed_point(SeParams.from_config(c, fading), se_variant,
                              n_samples=n_samples, seed=seed)
        tau = traj.fixed_point
        md, fa = population_error_probs(c.n_antennas, fading.betas, tau)
        amd, afa = population_error_probs(c.n_antennas, fading.betas, tau, asym_form)
        if probe_beta is not None:
            st = channel_stats_asymptotic(probe_beta, tau)
            up, dup = st.upsilon, st.delta_upsilon
        else:
            b = fading.betas
            up = float(np.mean(b / (b + tau)))
            dup = float(np.mean(tau / (b + tau)))
        rows.append(dict(zip(CURVE_COLUMNS, (parameter, int(v), tau, md, fa, amd, afa, up, dup))))
    return rows


def write_curve_csv(path, rows) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            for r in rows:
                w.writerow([_fmt17(r[c]) for c in CURVE_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write curve CSV to {path}: {exc}") from exc


def _fmt17(v):
    return format(v, ".17g") if isinstance(v, float) else v
