"""Random problem instances for the pilot phase of grant-free access.

All generators are pure functions of ``(cfg, seed)``. Each random quantity
(pilots, activity, channels, noise, device placement) is drawn from its own
counter-based Philox sub-stream so any one of them can be regenerated
without touching the others.

Complex Gaussian convention: ``CN(0, v)`` has independent real and
imaginary parts with variance ``v / 2`` each.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Stream",
    "SystemConfig",
    "LargeScaleFading",
    "PilotMatrix",
    "SparseChannelMatrix",
    "ReceivedMatrix",
    "stream_rng",
    "derive_seed",
    "pathloss_beta",
    "pathloss_db",
    "generate_pilots",
    "sample_instance",
    "synthesize_received",
    "complex_normal",
    "write_fading_csv",
]

PATHLOSS_INTERCEPT_DB = -128.1
PATHLOSS_SLOPE_DB = 36.7


class Stream(enum.IntEnum):
    PILOTS = 0
    ACTIVITY = 1
    CHANNELS = 2
    NOISE = 3
    PLACEMENT = 4


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for the sub-stream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit child seed, a deterministic hash of ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def complex_normal(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    """Draw ``CN(0, var)`` samples; ``var`` broadcasts against ``shape``."""
    z = rng.standard_normal(shape + (2,) if isinstance(shape, tuple) else (shape, 2))
    out = z[..., 0] + 1j * z[..., 1]
    return out * np.sqrt(np.asarray(var, dtype=float) / 2.0)


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions, powers and seed of one pilot-phase scenario.

    ``pilot_energy`` is the total energy per pilot sequence (``L`` times
    the per-symbol pilot power); ``noise_var`` is the per-dimension noise
    variance, in the same power unit.
    """

    n_devices: int
    pilot_len: int
    n_antennas: int
    activity_prob: float
    pilot_energy: float
    noise_var: float
    seed: int = 0

    def __post_init__(self):
        for name in ("n_devices", "pilot_len", "n_antennas"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not (0.0 <= self.activity_prob <= 1.0):
            raise ValueError("activity_prob must lie in [0, 1]")
        if not np.isfinite(self.pilot_energy) or self.pilot_energy < 0:
            raise ValueError("pilot_energy must be finite and non-negative")
        if not np.isfinite(self.noise_var) or self.noise_var <= 0:
            raise ValueError("noise_var must be finite and positive")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def omega(self) -> float:
        return self.n_devices / self.pilot_len

    @property
    def noise_over_energy(self) -> float:
        """Effective noise variance of the energy-normalized model."""
        if self.pilot_energy <= 0:
            raise ValueError("normalization needs pilot_energy > 0")
        return self.noise_var / self.pilot_energy


def pathloss_db(d_km):
    """Path loss in dB at distance ``d_km`` (km)."""
    d = np.asarray(d_km, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be positive")
    out = PATHLOSS_INTERCEPT_DB - PATHLOSS_SLOPE_DB * np.log10(d)
    return out.item() if out.ndim == 0 else out


def pathloss_beta(d_km):
    """Linear large-scale fading ``10**(pathloss_db(d) / 10)``."""
    out = 10.0 ** (np.asarray(pathloss_db(d_km)) / 10.0)
    return out.item() if out.ndim == 0 else out


@dataclass(frozen=True)
class LargeScaleFading:
    """Per-device large-scale fading, linear scale, with optional distances."""

    betas: np.ndarray
    distances_km: np.ndarray | None = None

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("betas must be a non-empty vector")
        if np.any(~np.isfinite(b)) or np.any(b <= 0):
            raise ValueError("every beta must be finite and positive")
        object.__setattr__(self, "betas", b)
        if self.distances_km is not None:
            d = np.asarray(self.distances_km, dtype=float)
            if d.shape != b.shape:
                raise ValueError("distances and betas differ in length")
            if not np.allclose(pathloss_beta(d), b, rtol=1e-12, atol=0):
                raise ValueError("betas do not match the path-loss map of distances")
            object.__setattr__(self, "distances_km", d)

    def __len__(self):
        return self.betas.size

    @classmethod
    def from_distances(cls, d_km) -> "LargeScaleFading":
        d = np.asarray(d_km, dtype=float)
        return cls(np.asarray(pathloss_beta(d), dtype=float).reshape(d.shape), d)

    @classmethod
    def uniform_distances(
        cls, n: int, seed: int, d_min_km: float = 0.05, d_max_km: float = 1.0
    ) -> "LargeScaleFading":
        """Distances i.i.d. uniform on ``[d_min_km, d_max_km]``."""
        rng = stream_rng(seed, Stream.PLACEMENT)
        return cls.from_distances(rng.uniform(d_min_km, d_max_km, size=n))

    @classmethod
    def grid_distances(
        cls, n: int, d_min_km: float = 0.05, d_max_km: float = 1.0
    ) -> "LargeScaleFading":
        """Distances at the midpoint quantiles of the uniform law (no randomness)."""
        u = (np.arange(n) + 0.5) / n
        return cls.from_distances(d_min_km + (d_max_km - d_min_km) * u)

    @classmethod
    def constant(cls, n: int, beta: float) -> "LargeScaleFading":
        return cls(np.full(n, float(beta)))


@dataclass(frozen=True)
class PilotMatrix:
    a: np.ndarray  # (L, N)

    @property
    def shape(self):
        return self.a.shape


@dataclass(frozen=True)
class SparseChannelMatrix:
    x: np.ndarray  # (N, M); zero rows for inactive devices
    activity: np.ndarray  # (N,) bool

    @property
    def channels(self) -> np.ndarray:
        """The nonzero rows, in device order."""
        return self.x[self.activity]

    @property
    def n_active(self) -> int:
        return int(self.activity.sum())


@dataclass(frozen=True)
class ReceivedMatrix:
    y: np.ndarray  # (L, M)
    noise: np.ndarray | None = field(default=None, repr=False)


def generate_pilots(cfg: SystemConfig) -> PilotMatrix:
    """i.i.d. ``CN(0, 1/L)`` pilots, one column per device."""
    rng = stream_rng(cfg.seed, Stream.PILOTS)
    a = complex_normal(rng, (cfg.pilot_len, cfg.n_devices), 1.0 / cfg.pilot_len)
    return PilotMatrix(a)


def sample_instance(cfg: SystemConfig, fading: LargeScaleFading) -> SparseChannelMatrix:
    """Bernoulli activity times Rayleigh channels ``CN(0, beta_n I_M)``."""
    if len(fading) != cfg.n_devices:
        raise ValueError(
            f"fading has {len(fading)} devices, config has {cfg.n_devices}"
        )
    act_rng = stream_rng(cfg.seed, Stream.ACTIVITY)
    activity = act_rng.random(cfg.n_devices) < cfg.activity_prob
    ch_rng = stream_rng(cfg.seed, Stream.CHANNELS)
    h = complex_normal(ch_rng, (cfg.n_devices, cfg.n_antennas), fading.betas[:, None])
    x = np.where(activity[:, None], h, 0.0 + 0.0j)
    return SparseChannelMatrix(x, activity)


def synthesize_received(
    a: PilotMatrix, x: SparseChannelMatrix, cfg: SystemConfig, noiseless: bool = False
) -> ReceivedMatrix:
    """``Y = sqrt(xi) A X + Z`` with ``Z`` entries i.i.d. ``CN(0, sigma^2)``."""
    L, N = a.a.shape
    if (L, N) != (cfg.pilot_len, cfg.n_devices) or x.x.shape != (
        cfg.n_devices,
        cfg.n_antennas,
    ):
        raise ValueError("pilot / channel dimensions disagree with config")
    if noiseless:
        z = np.zeros((L, cfg.n_antennas), dtype=complex)
    else:
        rng = stream_rng(cfg.seed, Stream.NOISE)
        z = complex_normal(rng, (L, cfg.n_antennas), cfg.noise_var)
    if cfg.pilot_energy == 0:
        return ReceivedMatrix(z.copy(), z)
    y = np.sqrt(cfg.pilot_energy) * (a.a @ x.x) + z
    return ReceivedMatrix(y, z)


def write_fading_csv(path, fading: LargeScaleFading, activity=None) -> None:
    """One row per device: index, distance_km, beta_db, active."""
    path = Path(path)
    n = len(fading)
    d = fading.distances_km
    act = np.zeros(n, dtype=bool) if activity is None else np.asarray(activity, bool)
    beta_db = 10.0 * np.log10(fading.betas)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "distance_km", "beta_db", "active"])
            for i in range(n):
                w.writerow(
                    [
                        i,
                        "" if d is None else repr(float(d[i])),
                        repr(float(beta_db[i])),
                        int(act[i]),
                    ]
                )
    except OSError as exc:
        raise OSError(f"cannot write fading CSV to {path}: {exc}") from exc
