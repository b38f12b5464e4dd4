import csv
import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from grantfree.analysis import (
    CURVE_COLUMNS,
    bc_coeffs,
    channel_stats_asymptotic,
    channel_stats_finite,
    curve_rows,
    error_probs_asymptotic,
    error_probs_exact,
    nu_varsigma,
    population_error_probs,
    write_curve_csv,
)
from grantfree.model import LargeScaleFading, SystemConfig
from oracles import chi2_error_rates


def test_bc_hand_values():
    b, c = bc_coeffs(1.0, 1.0)
    assert b == pytest.approx(math.log(2), rel=1e-15)
    assert c == pytest.approx(2 * math.log(2), rel=1e-15)


def test_bc_limits():
    b, c = bc_coeffs(1e-9, 1.0)
    assert b < 1 < c and 1 - b < 1e-9 and c - 1 < 1e-9
    b, c = bc_coeffs(1e8, 1.0)
    assert b < 1e-6 and c == pytest.approx(math.log1p(1e8), rel=1e-6)
    with pytest.raises(ValueError):
        bc_coeffs(0.0, 1.0)


def test_nu_varsigma_against_definition():
    for a in (0.01, 0.3, 1.0, 7.0, 150.0):
        b, c = bc_coeffs(a, 1.0)
        nu, vs = nu_varsigma(a, 1.0)
        assert nu == pytest.approx(-math.sqrt(2 * (b - 1 - math.log(b))), rel=1e-9)
        assert vs == pytest.approx(math.sqrt(2 * (c - 1 - math.log(c))), rel=1e-9)
        # c = (1 + a) b makes the two exponents coincide
        assert nu == pytest.approx(-vs, rel=1e-12)


def test_exact_spot_values():
    pair = error_probs_exact(1, 1.0, 1.0)
    assert pair.p_md == pytest.approx(0.5, abs=1e-10)
    assert pair.p_fa == pytest.approx(0.25, abs=1e-10)


def test_exact_against_mpmath():
    for m in (1, 3, 17, 100, 400):
        for a in (0.2, 1.0, 5.0):
            b, c = bc_coeffs(a, 1.0)
            pair = error_probs_exact(m, a, 1.0)
            ref_md = float(mpmath.gammainc(m, 0, b * m, regularized=True))
            ref_fa = float(mpmath.gammainc(m, c * m, mpmath.inf, regularized=True))
            assert pair.p_md == pytest.approx(ref_md, rel=1e-9)
            assert pair.p_fa == pytest.approx(ref_fa, rel=1e-9)


def test_exact_decreasing_in_antennas():
    ms = 2 ** np.arange(8)
    pair = error_probs_exact(ms, 1.0, 1.0)
    assert np.all(np.diff(pair.p_md) < 0) and np.all(np.diff(pair.p_fa) < 0)
    grid = np.arange(1, 300)
    for a in (0.75, 1.0, 4.0):
        p = error_probs_exact(grid, a, 1.0)
        assert np.all(np.diff(p.p_md) < 0) and np.all(np.diff(p.p_fa) < 0)
    # missed detection always decreases; false alarm only once M is large
    # enough for weak devices
    p = error_probs_exact(grid, 0.25, 1.0)
    assert np.all(np.diff(p.p_md) < 0) and np.all(np.diff(p.p_fa[2:]) < 0)


def test_false_alarm_rises_at_small_m_for_weak_devices():
    # Q(1, c) = exp(-c) < Q(2, 2c) = exp(-2c) (1 + 2c) when c is close to 1
    b, c = bc_coeffs(0.25, 1.0)
    p = error_probs_exact(np.array([1, 2]), 0.25, 1.0)
    assert p.p_fa[0] == pytest.approx(math.exp(-c), rel=1e-14)
    assert p.p_fa[1] == pytest.approx(math.exp(-2 * c) * (1 + 2 * c), rel=1e-14)
    assert p.p_fa[1] > p.p_fa[0]


@pytest.mark.parametrize("m,a", [(1, 1.0), (4, 0.25), (16, 1.0), (8, 4.0)])
def test_exact_against_chi_square_sampling(m, a):
    rng = np.random.default_rng(m * 100 + int(a * 4))
    n = 100_000
    md, fa = chi2_error_rates(m, a, 1.0, n, rng)
    pair = error_probs_exact(m, a, 1.0)
    assert abs(md - pair.p_md) <= 3 * math.sqrt(pair.p_md * (1 - pair.p_md) / n)
    assert abs(fa - pair.p_fa) <= 3 * math.sqrt(pair.p_fa * (1 - pair.p_fa) / n)


def test_statistic_is_chi_square():
    rng = np.random.default_rng(5)
    m, beta, tau = 6, 2.0, 0.5
    n = 100_000
    for var in (tau, beta + tau):
        z = (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) * math.sqrt(var / 2)
        e = 2 * np.sum(np.abs(z) ** 2, axis=1) / var
        assert stats.kstest(e, stats.chi2(2 * m).cdf).pvalue > 0.01


def test_asymptotic_forms():
    exact = error_probs_exact(64, 1.0, 1.0)
    lead = error_probs_asymptotic(64, 1.0, 1.0)
    uni = error_probs_asymptotic(64, 1.0, 1.0, "uniform")
    printed = error_probs_asymptotic(64, 1.0, 1.0, "printed")
    assert lead.p_md / exact.p_md == pytest.approx(1.096, abs=2e-3)
    assert uni.p_md / exact.p_md == pytest.approx(1.0, abs=2e-3)
    assert uni.p_fa / exact.p_fa == pytest.approx(1.0, abs=2e-3)
    assert 0 < printed.p_md < 1
    with pytest.raises(ValueError):
        error_probs_asymptotic(64, 1.0, 1.0, "saddle")


def test_asymptotic_clamped():
    for form in ("leading", "uniform", "printed"):
        p = error_probs_asymptotic(np.arange(1, 20), 0.05, 1.0, form)
        assert np.all((p.p_md >= 0) & (p.p_md <= 1) & (p.p_fa >= 0) & (p.p_fa <= 1))


def test_leading_ratio_tends_to_one():
    ms = np.array([256, 1024, 4096])
    r = error_probs_asymptotic(ms, 1.0, 1.0).p_md / error_probs_exact(ms, 1.0, 1.0).p_md
    assert np.all(np.diff(np.abs(r - 1)) < 0) and abs(r[-1] - 1) < 0.01


def test_population_average():
    b = np.array([0.5, 2.0])
    md, fa = population_error_probs(8, b, 1.0)
    p = [error_probs_exact(8, x, 1.0) for x in b]
    assert md == pytest.approx((p[0].p_md + p[1].p_md) / 2, rel=1e-15)
    assert fa == pytest.approx((p[0].p_fa + p[1].p_fa) / 2, rel=1e-15)


def test_channel_stats_asymptotic():
    st = channel_stats_asymptotic(1.0, 1.0)
    assert (st.upsilon, st.delta_upsilon) == (0.5, 0.5)
    rng = np.random.default_rng(0)
    for beta, tau in 10 ** rng.uniform(-5, 5, (200, 2)):
        st = channel_stats_asymptotic(beta, tau)
        assert st.upsilon + st.delta_upsilon == pytest.approx(beta, rel=1e-14)
    far = channel_stats_asymptotic(2.0, 1e12)
    assert far.upsilon < 1e-11 and far.delta_upsilon == pytest.approx(2.0)


def test_channel_stats_finite_linear_case():
    st = channel_stats_finite(8, 2.0, 0.5, 1.0, n_samples=50_000)
    assert abs(st.upsilon - 4.0 / 2.5) <= 3 * st.upsilon_se
    assert abs(st.delta_upsilon - 1.0 / 2.5) <= 3 * st.delta_upsilon_se
    tiny = channel_stats_finite(8, 2.0, 1e-9, 1.0)
    assert tiny.delta_upsilon < 1e-8


def test_channel_stats_finite_rao_blackwell():
    # conditional on x_hat, E[|h|^2 | x_hat] is known, so the error variance
    # is beta tau^2 / (beta + tau^2) + E[g^2 (1 - phi)^2 r] / M, a smoother
    # estimator of the same quantity
    m, beta, tau, eps = 16, 1.0, 1.0, 0.05
    rng = np.random.default_rng(9)
    n = 200_000
    z = (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) * math.sqrt((beta + tau) / 2)
    r = np.sum(np.abs(z) ** 2, axis=1)
    g = beta / (beta + tau)
    logit = (1 / tau - 1 / (beta + tau)) * r - m * math.log1p(beta / tau) + math.log(eps / (1 - eps))
    phi = 1 / (1 + np.exp(-logit))
    ref = beta * tau / (beta + tau) + np.mean(g * g * (1 - phi) ** 2 * r) / m
    st = channel_stats_finite(m, beta, tau, eps, n_samples=100_000)
    assert abs(st.delta_upsilon - ref) <= 4 * st.delta_upsilon_se


def test_channel_stats_finite_near_limit():
    st = channel_stats_finite(64, 1.0, 1.0, 0.05)
    assert st.upsilon == pytest.approx(0.5, rel=0.05)
    assert st.delta_upsilon == pytest.approx(0.5, rel=0.05)


def test_channel_stats_gap_shrinks():
    tau = 1.0
    lim = channel_stats_asymptotic(1.0, tau)
    g16 = channel_stats_finite(16, 1.0, tau, 0.05, n_samples=100_000)
    g256 = channel_stats_finite(256, 1.0, tau, 0.05, n_samples=100_000)
    gap16 = g16.delta_upsilon - lim.delta_upsilon
    gap256 = g256.delta_upsilon - lim.delta_upsilon
    assert gap256 + 3 * g256.delta_upsilon_se < gap16 - 3 * g16.delta_upsilon_se


def test_channel_stats_validation():
    with pytest.raises(ValueError):
        channel_stats_finite(4, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        channel_stats_finite(0, 1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        channel_stats_asymptotic(-1.0, 1.0)


def test_curve_rows_and_csv(tmp_path):
    cfg = SystemConfig(200, 20, 4, 0.05, 20.0, 0.5, seed=0)
    f = LargeScaleFading.grid_distances(200)
    f = LargeScaleFading(f.betas / f.betas.mean())
    rows = curve_rows(cfg, f, "n_antennas", [4, 8, 16], n_samples=2000)
    assert [r["value"] for r in rows] == [4, 8, 16]
    assert rows[0]["p_md_exact"] > rows[-1]["p_md_exact"]
    rows_l = curve_rows(cfg, f, "pilot_len", [20, 40], probe_beta=1.0, n_samples=2000)
    assert rows_l[1]["tau_sq"] < rows_l[0]["tau_sq"]
    assert rows_l[0]["upsilon"] + rows_l[0]["delta_upsilon"] == pytest.approx(1.0)
    p = tmp_path / "c.csv"
    write_curve_csv(p, rows)
    back = list(csv.DictReader(p.open()))
    assert tuple(back[0]) == CURVE_COLUMNS
    assert float(back[1]["tau_sq"]) == rows[1]["tau_sq"]
    with pytest.raises(ValueError):
        curve_rows(cfg, f, "power", [1])
