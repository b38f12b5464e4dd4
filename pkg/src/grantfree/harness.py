"""Seeded Monte Carlo experiments with analytic overlays.

An experiment fixes a scenario in physical units, sweeps one axis
(antenna count, pilot length or transmit power), runs the full
AMP-plus-detector pipeline on independent trials and compares the
empirical error rates with the closed forms evaluated at the
state-evolution fixed point of the same beta population.

Reproducibility: trial ``j`` of sweep point ``i`` draws everything from
``derive_seed(seed, i, j)``. Trials are grouped into chunks of fixed size
(independent of the worker count), each chunk returns per-trial values, and
the reduction runs in chunk order, so outputs are byte-identical for any
number of workers.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from statsmodels.stats.proportion import proportion_confint

from .amp import amp_run
from .analysis import population_error_probs
from .detector import detect, score
from .model import (
    LargeScaleFading,
    Stream,
    SystemConfig,
    derive_seed,
    generate_pilots,
    sample_instance,
    synthesize_received,
)
from .state_evolution import SeParams, se_fixed_point

__all__ = [
    "ConfigError",
    "FadingSpec",
    "ExperimentSpec",
    "ResultRecord",
    "RECORD_FIELDS",
    "run_experiment",
    "preset_section6",
    "preset_desk",
    "load_spec",
    "spec_to_dict",
    "dump_spec",
    "emit",
    "format_records",
    "load_records",
    "schema_path",
    "dbm_to_watts",
]

log = logging.getLogger(__name__)

SWEEP_AXES = ("n_antennas", "pilot_len", "power_dbm")
OUTPUTS = ("empirical", "analytic_exact", "analytic_asymptotic", "channel_stats")
FADING_LAWS = ("uniform", "grid", "constant")
PILOT_STREAM = 0xF1


class ConfigError(ValueError):
    """Invalid experiment specification."""


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class FadingSpec:
    """How the beta population is drawn; fixed for the whole experiment."""

    law: str = "uniform"
    d_min_km: float = 0.05
    d_max_km: float = 1.0
    beta_db: float | None = None  # only for law="constant"

    def __post_init__(self):
        if self.law not in FADING_LAWS:
            raise ConfigError(f"fading law must be one of {FADING_LAWS}, got {self.law!r}")
        if self.law == "constant":
            if self.beta_db is None:
                raise ConfigError("constant fading needs beta_db")
        elif not 0 < self.d_min_km < self.d_max_km:
            raise ConfigError("need 0 < d_min_km < d_max_km")

    def build(self, n: int, seed: int) -> LargeScaleFading:
        if self.law == "uniform":
            return LargeScaleFading.uniform_distances(n, seed, self.d_min_km, self.d_max_km)
        if self.law == "grid":
            return LargeScaleFading.grid_distances(n, self.d_min_km, self.d_max_km)
        return LargeScaleFading.constant(n, 10.0 ** (self.beta_db / 10.0))


@dataclass(frozen=True)
class ExperimentSpec:
    n_devices: int
    pilot_len: int
    n_antennas: int
    activity_prob: float
    power_dbm: float
    noise_psd_dbm_hz: float
    bandwidth_hz: float
    sweep_axis: str
    sweep_values: tuple
    trials: int
    fading: FadingSpec = field(default_factory=FadingSpec)
    outputs: tuple = OUTPUTS
    seed: int = 0
    coherence_symbols: int | None = None
    n_iters: int = 25
    tol: float = 1e-6
    onsager: str = "matrix"
    fixed_pilots: bool = False
    se_samples: int = 10_000
    asym_form: str = "leading"
    confidence: float = 0.99
    chunk_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        vals = self.sweep_values
        if not vals:
            raise ConfigError("sweep values must be non-empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep values must be sorted ascending without repeats")
        if self.sweep_axis != "power_dbm":
            if any(int(v) != v or v < 1 for v in vals):
                raise ConfigError(f"{self.sweep_axis} values must be positive integers")
            object.__setattr__(self, "sweep_values", tuple(int(v) for v in vals))
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        bad = set(self.outputs) - set(OUTPUTS)
        if bad or not self.outputs:
            raise ConfigError(f"outputs must be a non-empty subset of {OUTPUTS}")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence must lie in (0, 1)")
        if self.chunk_size < 1 or self.n_iters < 0 or self.se_samples < 2:
            raise ConfigError("chunk_size, n_iters and se_samples out of range")
        if self.coherence_symbols is not None:
            for L in self.pilot_lengths():
                if L >= self.coherence_symbols:
                    raise ConfigError(
                        f"pilot length {L} leaves no data symbols in a "
                        f"{self.coherence_symbols}-symbol coherence block"
                    )
        try:
            for v in vals:
                self.config_at(v)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_fading(self) -> LargeScaleFading:
        return self.fading.build(self.n_devices, derive_seed(self.seed, Stream.PLACEMENT))

    def pilot_lengths(self):
        if self.sweep_axis == "pilot_len":
            return list(self.sweep_values)
        return [self.pilot_len]

    @property
    def noise_var(self) -> float:
        """Noise power over the band, watts."""
        return float(dbm_to_watts(self.noise_psd_dbm_hz + 10.0 * np.log10(self.bandwidth_hz)))

    def config_at(self, value) -> SystemConfig:
        L, M, p = self.pilot_len, self.n_antennas, self.power_dbm
        if self.sweep_axis == "pilot_len":
            L = int(value)
        elif self.sweep_axis == "n_antennas":
            M = int(value)
        else:
            p = float(value)
        rho = float(dbm_to_watts(p))
        return SystemConfig(
            self.n_devices, L, M, self.activity_prob, L * rho, self.noise_var, self.seed
        )


RECORD_FIELDS = (
    ("sweep_axis", str),
    ("sweep_value", float),
    ("n_devices", int),
    ("pilot_len", int),
    ("n_antennas", int),
    ("power_dbm", float),
    ("trials", int),
    ("n_active", int),
    ("n_inactive", int),
    ("missed", int),
    ("false_alarms", int),
    ("p_md", float),
    ("p_md_lo", float),
    ("p_md_hi", float),
    ("p_fa", float),
    ("p_fa_lo", float),
    ("p_fa_hi", float),
    ("tau_sq_se", float),
    ("tau_sq_amp", float),
    ("p_md_exact", float),
    ("p_fa_exact", float),
    ("p_md_asym", float),
    ("p_fa_asym", float),
    ("upsilon_emp", float),
    ("delta_upsilon_emp", float),
    ("upsilon_asym", float),
    ("delta_upsilon_asym", float),
    ("consistent", bool),
)


@dataclass(frozen=True)
class ResultRecord:
    """One sweep point. Absent quantities are ``None``.

    Channel statistics are per-antenna variances divided by each device's
    beta and averaged over (true) active devices, so devices of very
    different strength contribute on the same scale. ``consistent`` is
    false when an analytic exact rate falls outside the empirical Wilson
    interval. ``wall_clock_s`` is informational and never emitted unless
    asked for, to keep output files reproducible.
    """

    sweep_axis: str
    sweep_value: float
    n_devices: int
    pilot_len: int
    n_antennas: int
    power_dbm: float
    trials: int
    n_active: int | None = None
    n_inactive: int | None = None
    missed: int | None = None
    false_alarms: int | None = None
    p_md: float | None = None
    p_md_lo: float | None = None
    p_md_hi: float | None = None
    p_fa: float | None = None
    p_fa_lo: float | None = None
    p_fa_hi: float | None = None
    tau_sq_se: float | None = None
    tau_sq_amp: float | None = None
    p_md_exact: float | None = None
    p_fa_exact: float | None = None
    p_md_asym: float | None = None
    p_fa_asym: float | None = None
    upsilon_emp: float | None = None
    delta_upsilon_emp: float | None = None
    upsilon_asym: float | None = None
    delta_upsilon_asym: float | None = None
    consistent: bool | None = None
    wall_clock_s: float | None = field(default=None, compare=False)


# ---------------------------------------------------------------- trials


def _trial(spec: ExperimentSpec, cfg: SystemConfig, fading, i: int, j: int):
    tcfg = dataclasses.replace(cfg, seed=derive_seed(spec.seed, i, j))
    if spec.fixed_pilots:
        pcfg = dataclasses.replace(cfg, seed=derive_seed(spec.seed, i, PILOT_STREAM))
        a = generate_pilots(pcfg)
    else:
        a = generate_pilots(tcfg)
    x = sample_instance(tcfg, fading)
    y = synthesize_received(a, x, tcfg)
    run = amp_run(y, a, fading, tcfg, spec.n_iters, tol=spec.tol, onsager=spec.onsager)
    st = run.state
    x_stat = np.swapaxes(a.a.conj(), -1, -2) @ st.residual + st.x_est
    dec = detect(x_stat, fading.betas, float(st.tau_sq), tcfg.n_antennas)
    conf = score(dec, x.activity)
    act = x.activity
    m = tcfg.n_antennas
    b = fading.betas[act]
    est = st.x_est[act]
    up = np.sum(np.abs(est) ** 2, axis=1) / (m * b)
    dup = np.sum(np.abs(est - x.x[act]) ** 2, axis=1) / (m * b)
    return (
        conf.n_active,
        conf.n_inactive,
        conf.false_neg,
        conf.false_pos,
        float(st.tau_sq),
        up.tolist(),
        dup.tolist(),
    )


def _run_chunk(args):
    spec, i, lo, hi, betas, dists = args
    fading = LargeScaleFading(betas, dists)
    cfg = spec.config_at(spec.sweep_values[i])
    return [_trial(spec, cfg, fading, i, j) for j in range(lo, hi)]


def _wilson(k, n, conf):
    if n == 0:
        return None, None, None
    lo, hi = proportion_confint(k, n, alpha=1.0 - conf, method="wilson")
    return k / n, float(max(0.0, lo)), float(min(1.0, hi))


def _inside(x, lo, hi):
    return x is None or lo is None or lo <= x <= hi


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> list:
    """Run every sweep point; deterministic in ``spec`` for any ``workers``."""
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    fading = spec.build_fading()
    betas = fading.betas
    dists = fading.distances_km
    records = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for i, value in enumerate(spec.sweep_values):
            t0 = time.perf_counter()
            cfg = spec.config_at(value)
            rec = dict(
                sweep_axis=spec.sweep_axis,
                sweep_value=float(value),
                n_devices=cfg.n_devices,
                pilot_len=cfg.pilot_len,
                n_antennas=cfg.n_antennas,
                power_dbm=float(value) if spec.sweep_axis == "power_dbm" else float(spec.power_dbm),
                trials=spec.trials,
            )
            wants_analytic = {"analytic_exact", "analytic_asymptotic", "channel_stats"} & set(spec.outputs)
            tau = None
            if wants_analytic or "empirical" in spec.outputs:
                p = SeParams.from_config(cfg, fading)
                variant = "full" if 0.0 < cfg.activity_prob < 1.0 else "asymptotic"
                tau = se_fixed_point(p, variant, n_samples=spec.se_samples, seed=spec.seed).fixed_point
                rec["tau_sq_se"] = tau
            if "analytic_exact" in spec.outputs:
                rec["p_md_exact"], rec["p_fa_exact"] = population_error_probs(cfg.n_antennas, betas, tau)
            if "analytic_asymptotic" in spec.outputs:
                rec["p_md_asym"], rec["p_fa_asym"] = population_error_probs(
                    cfg.n_antennas, betas, tau, spec.asym_form
                )
            if "channel_stats" in spec.outputs:
                rec["upsilon_asym"] = float(np.mean(betas / (betas + tau)))
                rec["delta_upsilon_asym"] = float(np.mean(tau / (betas + tau)))
            if "empirical" in spec.outputs:
                rec.update(_empirical(spec, i, betas, dists, pool))
                if "analytic_exact" in spec.outputs:
                    rec["consistent"] = bool(
                        _inside(rec["p_md_exact"] if rec["p_md"] is not None else None,
                                rec["p_md_lo"], rec["p_md_hi"])
                        and _inside(rec["p_fa_exact"] if rec["p_fa"] is not None else None,
                                    rec["p_fa_lo"], rec["p_fa_hi"])
                    )
                    if not rec["consistent"]:
                        log.warning("sweep point %s=%s: analytic rate outside the Wilson interval",
                                    spec.sweep_axis, value)
                if "channel_stats" not in spec.outputs:
                    rec.pop("upsilon_emp")
                    rec.pop("delta_upsilon_emp")
            rec["wall_clock_s"] = time.perf_counter() - t0
            records.append(ResultRecord(**rec))
            log.info("sweep point %s=%s done in %.1fs", spec.sweep_axis, value, rec["wall_clock_s"])
    finally:
        if pool is not None:
            pool.shutdown()
    return records


def _empirical(spec, i, betas, dists, pool):
    bounds = [(lo, min(spec.trials, lo + spec.chunk_size)) for lo in range(0, spec.trials, spec.chunk_size)]
    tasks = [(spec, i, lo, hi, betas, dists) for lo, hi in bounds]
    chunks = list(pool.map(_run_chunk, tasks)) if pool is not None else [_run_chunk(t) for t in tasks]
    trials = [t for chunk in chunks for t in chunk]  # chunk order, then trial order
    n_act = sum(t[0] for t in trials)
    n_ina = sum(t[1] for t in trials)
    missed = sum(t[2] for t in trials)
    fas = sum(t[3] for t in trials)
    up = [v for t in trials for v in t[5]]
    dup = [v for t in trials for v in t[6]]
    p_md, md_lo, md_hi = _wilson(missed, n_act, spec.confidence)
    p_fa, fa_lo, fa_hi = _wilson(fas, n_ina, spec.confidence)
    return dict(
        n_active=n_act,
        n_inactive=n_ina,
        missed=missed,
        false_alarms=fas,
        p_md=p_md,
        p_md_lo=md_lo,
        p_md_hi=md_hi,
        p_fa=p_fa,
        p_fa_lo=fa_lo,
        p_fa_hi=fa_hi,
        tau_sq_amp=math.fsum(t[4] for t in trials) / len(trials),
        upsilon_emp=math.fsum(up) / len(up) if up else None,
        delta_upsilon_emp=math.fsum(dup) / len(dup) if dup else None,
    )


# ---------------------------------------------------------------- presets


def preset_section6(pilot_len: int = 90, antennas=(4, 8, 16, 32, 64), trials: int = 10_000) -> ExperimentSpec:
    """Reference scenario: 2000 devices, activity 0.05, 23 dBm, -169 dBm/Hz.

    Conversions: noise power -169 dBm/Hz + 60 dB (1 MHz) = -109 dBm;
    per-symbol pilot power 23 dBm = 0.1995 W; pilot energy ``L`` times it.
    Coherence block 1 MHz x 1 ms = 1000 symbols.
    """
    return ExperimentSpec(
        n_devices=2000,
        pilot_len=pilot_len,
        n_antennas=antennas[0],
        activity_prob=0.05,
        power_dbm=23.0,
        noise_psd_dbm_hz=-169.0,
        bandwidth_hz=1e6,
        sweep_axis="n_antennas",
        sweep_values=tuple(antennas),
        trials=trials,
        coherence_symbols=1000,
    )


DESK_POWER_DBM = 10.0


def preset_desk(pilot_len: int = 50, antennas=(8, 16, 32), trials: int = 20_000) -> ExperimentSpec:
    """Down-scaled reference scenario for desk-top Monte Carlo.

    400 devices instead of 2000 with the same activity, path loss, noise
    and bandwidth. At 400 devices and 40-60 pilot symbols the reference
    23 dBm drives every error rate below 1e-7, out of reach of 1e4 trials,
    so the transmit power is lowered to 10 dBm, where the analytic rates
    span 1e-2 .. 1e-8 across the grid.
    """
    return dataclasses.replace(
        preset_section6(pilot_len, antennas, trials),
        n_devices=400,
        power_dbm=DESK_POWER_DBM,
    )


# ---------------------------------------------------------------- config I/O


_SPEC_KEYS = {
    "n_devices", "pilot_len", "n_antennas", "activity_prob", "power_dbm",
    "noise_psd_dbm_hz", "bandwidth_hz", "coherence_symbols", "fading", "sweep",
    "trials", "outputs", "seed", "amp", "analysis",
}
_AMP_KEYS = {"n_iters", "tol", "onsager", "fixed_pilots", "chunk_size"}
_ANALYSIS_KEYS = {"se_samples", "asym_form", "confidence"}
_FADING_KEYS = {"law", "d_min_km", "d_max_km", "beta_db"}


def _only(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def spec_from_dict(doc: dict) -> ExperimentSpec:
    _only(doc, _SPEC_KEYS, "experiment")
    try:
        fading = doc.get("fading", {})
        _only(fading, _FADING_KEYS, "fading")
        sweep = doc["sweep"]
        _only(sweep, {"axis", "values"}, "sweep")
        amp = doc.get("amp", {})
        _only(amp, _AMP_KEYS, "amp")
        ana = doc.get("analysis", {})
        _only(ana, _ANALYSIS_KEYS, "analysis")
        return ExperimentSpec(
            n_devices=int(doc["n_devices"]),
            pilot_len=int(doc["pilot_len"]),
            n_antennas=int(doc["n_antennas"]),
            activity_prob=float(doc["activity_prob"]),
            power_dbm=float(doc["power_dbm"]),
            noise_psd_dbm_hz=float(doc["noise_psd_dbm_hz"]),
            bandwidth_hz=float(doc["bandwidth_hz"]),
            coherence_symbols=doc.get("coherence_symbols"),
            fading=FadingSpec(**fading),
            sweep_axis=sweep["axis"],
            sweep_values=tuple(sweep["values"]),
            trials=int(doc["trials"]),
            outputs=tuple(doc.get("outputs", OUTPUTS)),
            seed=int(doc.get("seed", 0)),
            **amp,
            **ana,
        )
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def spec_to_dict(spec: ExperimentSpec) -> dict:
    fad = {"law": spec.fading.law}
    if spec.fading.law == "constant":
        fad["beta_db"] = spec.fading.beta_db
    else:
        fad.update(d_min_km=spec.fading.d_min_km, d_max_km=spec.fading.d_max_km)
    doc = {
        "n_devices": spec.n_devices,
        "pilot_len": spec.pilot_len,
        "n_antennas": spec.n_antennas,
        "activity_prob": spec.activity_prob,
        "power_dbm": spec.power_dbm,
        "noise_psd_dbm_hz": spec.noise_psd_dbm_hz,
        "bandwidth_hz": spec.bandwidth_hz,
        "fading": fad,
        "sweep": {"axis": spec.sweep_axis, "values": list(spec.sweep_values)},
        "trials": spec.trials,
        "outputs": list(spec.outputs),
        "seed": spec.seed,
        "amp": {
            "n_iters": spec.n_iters,
            "tol": spec.tol,
            "onsager": spec.onsager,
            "fixed_pilots": spec.fixed_pilots,
            "chunk_size": spec.chunk_size,
        },
        "analysis": {
            "se_samples": spec.se_samples,
            "asym_form": spec.asym_form,
            "confidence": spec.confidence,
        },
    }
    if spec.coherence_symbols is not None:
        doc["coherence_symbols"] = spec.coherence_symbols
    return doc


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read experiment spec {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return spec_from_dict(doc or {})


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False)


# ---------------------------------------------------------------- output


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _json_value(v):
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if not math.isfinite(v):
            return "null"
        return format(v, ".17g")
    if isinstance(v, int):
        return str(v)
    return json.dumps(v)


def _columns(include_timing):
    cols = [name for name, _ in RECORD_FIELDS]
    return cols + ["wall_clock_s"] if include_timing else cols


def format_records(records, fmt: str = "csv", include_timing: bool = False) -> str:
    """Serialize records: fixed column order, 17 significant digits, LF."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    cols = _columns(include_timing)
    if fmt == "csv":
        lines = [",".join(cols)]
        lines += [",".join(_fmt(getattr(r, c)) for c in cols) for r in records]
    else:
        body = []
        for r in records:
            items = ", ".join(f"{json.dumps(c)}: {_json_value(getattr(r, c))}" for c in cols)
            body.append("  {" + items + "}")
        lines = ['{"format": "grantfree-results", "version": 1, "records": [']
        if body:
            lines.append(",\n".join(body))
        lines.append("]}")
    return "\n".join(lines) + "\n"


def emit(records, path, fmt: str = "csv", include_timing: bool = False) -> None:
    """Write ``format_records`` output to ``path``."""
    text = format_records(records, fmt, include_timing)
    path = Path(path)
    try:
        with path.open("w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def _parse(value, typ):
    if value is None or value == "":
        return None
    if typ is bool:
        return value if isinstance(value, bool) else value == "true"
    return typ(value)


def load_records(path, fmt: str | None = None) -> list:
    """Inverse of ``emit``."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    types = dict(RECORD_FIELDS, wall_clock_s=float)
    if fmt == "json":
        rows = json.loads(path.read_text())["records"]
    else:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    return [ResultRecord(**{k: _parse(v, types[k]) for k, v in row.items()}) for row in rows]


def schema_path():
    """Location of the JSON schema for ``emit(..., fmt="json")`` output."""
    return resources.files("grantfree") / "schema" / "results.schema.json"
