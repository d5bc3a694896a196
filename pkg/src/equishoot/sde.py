"""Monte Carlo simulation of the consumption-share diffusion.

Every path owns an RNG stream seeded from ``(seed, path_index)``, so results
do not depend on how paths are split across workers.  Occupation is counted
in time (each post-burn-in step adds ``dt`` to the bin of the new state).

Two schemes are offered.  ``EulerMaruyama`` steps ``y`` directly.
``LogitTransform`` steps ``z = log(y/(1-y))``, whose coefficients follow
from Ito's formula:

    dz = sigma_d^2 / (2 h^2 y^2) * (N/gamma + 2y - 1) dt + sigma_d / (h y) dB,

with ``N`` the drift numerator shared with the survival module.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit, logit

from .survival import ScaleData, scale_data, speed_cdf

H_TABLE_SIZE = 1 << 16
CHUNK_STEPS = 2048
REFINE_FRACTION = 0.2
MAX_DEPTH = 50
INNER_BAND = (0.01, 0.99)
# occupation is also tallied per tenth of the horizon, burn-in included, so
# one run can report how the result depends on the burn-in fraction
N_SEGMENTS = 10


class ConfigError(ValueError):
    code = "ConfigError"


class NotNormalizable(ArithmeticError):
    code = "NotNormalizable"


class BinMismatch(ValueError):
    code = "BinMismatch"


class Scheme(str, Enum):
    EULER_MARUYAMA = "EulerMaruyama"
    LOGIT_TRANSFORM = "LogitTransform"


@dataclass(frozen=True)
class SimConfig:
    y0: float = 0.5
    dt: float = 1e-3
    horizon: float = 500.0
    n_paths: int = 1000
    seed: int = 0
    clamp_eps: float = 1e-12
    scheme: Scheme = Scheme.EULER_MARUYAMA
    burn_in: float = 0.2
    n_bins: int = 50
    # each step consumes this many normals; k=2 at step dt reproduces the
    # Brownian path of a k=1 run at dt/2, which couples dt-refinement runs
    noise_substeps: int = 1
    # "point" starts every path at y0; "stationary" draws each start from
    # the stationary law (y0 is then ignored)
    start: str = "point"

    def __post_init__(self):
        if not (0.0 < self.y0 < 1.0):
            raise ConfigError(f"y0 must lie in (0, 1); got {self.y0!r}")
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be > 0; got {self.dt!r}")
        if not self.horizon >= self.dt:
            raise ConfigError("horizon must be at least dt")
        if not (0.0 < self.clamp_eps < 0.5):
            raise ConfigError(f"clamp_eps must lie in (0, 0.5); got {self.clamp_eps!r}")
        if self.n_paths < 1 or self.n_bins < 1 or self.noise_substeps < 1:
            raise ConfigError("n_paths, n_bins and noise_substeps must be positive")
        if not (0.0 <= self.burn_in < 1.0):
            raise ConfigError("burn_in must lie in [0, 1)")
        if self.start not in ("point", "stationary"):
            raise ConfigError(f"start must be 'point' or 'stationary'; got {self.start!r}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def burn_steps(self) -> int:
        return int(round(self.burn_in * self.n_steps))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        return d


@dataclass
class OccupationStats:
    bin_edges: np.ndarray
    occupation_frequency: np.ndarray
    terminal_values: np.ndarray
    path_counts: np.ndarray = field(repr=False)
    clamp_events: np.ndarray = field(repr=False)
    inner_fraction: np.ndarray = field(repr=False)
    aborted: np.ndarray = field(repr=False)
    refined_steps: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))
    dt: float = 0.0
    n_counted_steps: int = 0
    segment_counts: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((N_SEGMENTS, 0), dtype=np.int64))

    def frequency_after(self, fraction: float) -> np.ndarray:
        """Occupation frequency discarding the first ``fraction`` of the horizon (a multiple of 1/10)."""
        k = int(round(fraction * N_SEGMENTS))
        if not (0 <= k < N_SEGMENTS) or abs(k - fraction * N_SEGMENTS) > 1e-9:
            raise ConfigError(f"burn-in fraction must be a multiple of 1/{N_SEGMENTS} in [0, 1)")
        c = self.segment_counts[k:].sum(axis=0)
        return c / c.sum()

    def error_bars(self) -> np.ndarray:
        """Standard error of each bin frequency, from the spread across paths."""
        per_path = self.path_counts / np.maximum(self.path_counts.sum(axis=1, keepdims=True), 1)
        n = per_path.shape[0]
        if n < 2:
            return np.full(per_path.shape[1], np.inf)
        return per_path.std(axis=0, ddof=1) / math.sqrt(n)

    def clamp_rate(self) -> float:
        """Clamp events per path per unit time."""
        t = self.dt * self.n_counted_steps
        return float(self.clamp_events.sum()) / (len(self.clamp_events) * max(t, self.dt))

    def __eq__(self, other):
        if not isinstance(other, OccupationStats):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("bin_edges", "occupation_frequency", "terminal_values", "path_counts", "clamp_events", "aborted",
                      "segment_counts")
        )


@dataclass(frozen=True)
class _Coefficients:
    gamma: float
    delta: float
    sigma_d: float
    h_grid: np.ndarray
    h_vals: np.ndarray
    h_diff: np.ndarray
    h_list: list = field(repr=False, default_factory=list)

    def h(self, y):
        # uniform table, so the cell index is direct (np.interp would bisect)
        n = len(self.h_vals) - 1
        t = np.asarray(y) * n
        i = np.minimum(t.astype(np.int64), n - 1)
        return self.h_vals[i] + self.h_diff[i] * (t - i)

    def coeffs_scalar(self, x: float, logit_scheme: bool):
        """Scalar drift and volatility of the stepping variable (fast path for refinement)."""
        if logit_scheme:
            y = 1.0 / (1.0 + math.exp(-x)) if x >= 0.0 else math.exp(x) / (1.0 + math.exp(x))
        else:
            y = x
        vals = self.h_list
        n = len(vals) - 1
        t = y * n
        i = min(int(t), n - 1)
        h = vals[i] + (vals[i + 1] - vals[i]) * (t - i)
        g, d, s2 = self.gamma, self.delta, self.sigma_d * self.sigma_d
        num = y * h * (2.0 * g * g + d * y * h) - g * (g + 1.0) * (2.0 * y - 1.0)
        if logit_scheme:
            return s2 / (2.0 * h * h * y * y) * (num / g + 2.0 * y - 1.0), self.sigma_d / (h * y)
        return s2 * (1.0 - y) * num / (2.0 * g * y * h * h), self.sigma_d * (1.0 - y) / h

    def numerator(self, y, h):
        g, d = self.gamma, self.delta
        return y * h * (2.0 * g * g + d * y * h) - g * (g + 1.0) * (2.0 * y - 1.0)


def _coefficients(eq) -> _Coefficients:
    grid = np.linspace(0.0, 1.0, H_TABLE_SIZE + 1)
    p = eq.params
    vals = np.asarray(eq.h(grid), dtype=float)
    return _Coefficients(p.gamma, p.delta, p.sigma_d, grid, vals, np.diff(vals), vals.tolist())


def _path_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index, stream]))


def _em_coeffs(co: _Coefficients, y):
    h = co.h(y)
    mu = co.sigma_d**2 * (1.0 - y) * co.numerator(y, h) / (2.0 * co.gamma * y * h * h)
    return mu, co.sigma_d * (1.0 - y) / h


def _logit_coeffs(co: _Coefficients, y):
    h = co.h(y)
    drift = co.sigma_d**2 / (2.0 * h * h * y * y) * (co.numerator(y, h) / co.gamma + 2.0 * y - 1.0)
    return drift, co.sigma_d / (h * y)


def _scale(x, logit_scheme):
    # room to the nearest boundary in the stepping variable
    return np.ones_like(x) if logit_scheme else np.minimum(x, 1.0 - x)


def _too_big(drift, vol, dt, scale):
    # decided from the state only: a test on the realised increment would
    # select which Brownian pieces get refined and bias the path
    r = REFINE_FRACTION * scale
    return (np.abs(drift) * dt > r) | (vol * vol * dt > r * r)


def _coeffs(co, x, logit_scheme):
    return _logit_coeffs(co, expit(x)) if logit_scheme else _em_coeffs(co, x)


def _refined_step(co, x, dw, dt, aux, logit_scheme, lo, hi):
    """Advance one path over a step by recursive Brownian-bridge bisection.

    A (sub-)step is split in two, with the midpoint of the Brownian path
    drawn from the path's auxiliary stream, until the drift move and the
    noise standard deviation are small compared to the distance to the
    boundary.  The main stream
    (and any coupling built on it) is untouched.
    """
    stack = [(dt, dw, 0)]
    clamps = 0
    while stack:
        h, w, depth = stack.pop()
        a, b = co.coeffs_scalar(x, logit_scheme)
        r = REFINE_FRACTION * (1.0 if logit_scheme else min(x, 1.0 - x))
        if depth < MAX_DEPTH and (abs(a) * h > r or b * b * h > r * r):
            w_mid = 0.5 * w + math.sqrt(0.25 * h) * aux.standard_normal()
            # second half first on the stack so the first half runs next
            stack.append((0.5 * h, w - w_mid, depth + 1))
            stack.append((0.5 * h, w_mid, depth + 1))
            continue
        x = x + a * h + b * w
        if not math.isfinite(x):
            return x, clamps
        if x < lo or x > hi:
            clamps += 1
            x = min(max(x, lo), hi)
    return x, clamps


def _simulate_block(co: _Coefficients, cfg: SimConfig, first: int, count: int, starts=None):
    rngs = [_path_rng(cfg.seed, first + j) for j in range(count)]
    aux = [_path_rng(cfg.seed, first + j, 1) for j in range(count)]
    nb = cfg.n_bins
    counts = np.zeros(count * nb, dtype=np.int64)
    seg_counts = np.zeros(N_SEGMENTS * nb, dtype=np.int64)
    inner = np.zeros(count, dtype=np.int64)
    clamps = np.zeros(count, dtype=np.int64)
    refined = np.zeros(count, dtype=np.int64)
    alive = np.ones(count, dtype=bool)
    path_offset = np.arange(count) * nb
    dt = cfg.dt
    sqdt = math.sqrt(dt)
    k = cfg.noise_substeps
    lo, hi = cfg.clamp_eps, 1.0 - cfg.clamp_eps
    logit_scheme = cfg.scheme is Scheme.LOGIT_TRANSFORM
    y_init = np.full(count, cfg.y0) if starts is None else np.clip(np.asarray(starts, dtype=float), lo, hi)
    if logit_scheme:
        lo, hi = float(logit(lo)), float(logit(hi))
        x = logit(y_init)
    else:
        x = y_init.copy()
    x_start = x.copy()

    n_steps, burn = cfg.n_steps, cfg.burn_steps
    step = 0
    while step < n_steps:
        m = min(CHUNK_STEPS, n_steps - step)
        noise = np.empty((m, count))
        for j, rng in enumerate(rngs):
            draw = rng.standard_normal(m * k)
            noise[:, j] = draw.reshape(m, k).sum(axis=1) / math.sqrt(k) if k > 1 else draw
        bins = np.empty((m, count), dtype=np.int64)
        for t in range(m):
            dw = sqdt * noise[t]
            drift, vol = _coeffs(co, x, logit_scheme)
            x_new = x + drift * dt + vol * dw
            out = (x_new < lo) | (x_new > hi)
            split = _too_big(drift, vol, dt, _scale(x, logit_scheme)) & alive
            for j in np.flatnonzero(split):
                x_new[j], c = _refined_step(co, x[j], dw[j], dt, aux[j], logit_scheme, lo, hi)
                out[j] = False
                clamps[j] += c
                refined[j] += 1
            bad = ~np.isfinite(x_new)
            out &= alive & ~bad
            clamps += out
            x = np.clip(x_new, lo, hi)
            if bad.any():
                alive &= ~bad
                x = np.where(bad, x_start, x)
            y = expit(x) if logit_scheme else x
            b = np.minimum((y * nb).astype(np.int64), nb - 1)
            # dead paths are parked in an out-of-range slot and discarded below
            bins[t] = np.where(alive, b, -1)
            if step + t >= burn:
                inner += alive & (y >= INNER_BAND[0]) & (y <= INNER_BAND[1])
        seg = ((step + np.arange(m)) * N_SEGMENTS) // n_steps
        flat_seg = (bins + seg[:, None] * nb)[bins >= 0]
        seg_counts += np.bincount(flat_seg, minlength=N_SEGMENTS * nb)
        first_counted = max(0, burn - step)
        if first_counted < m:
            sel = bins[first_counted:]
            flat = (sel + path_offset[None, :])[sel >= 0]
            counts += np.bincount(flat, minlength=count * nb)
        step += m
    y_end = expit(x) if logit_scheme else x.copy()
    return counts.reshape(count, nb), y_end, clamps, inner, ~alive, refined, seg_counts.reshape(N_SEGMENTS, nb)


def _worker_count(requested: int | None) -> int:
    env = os.environ.get("EQUISHOOT_THREADS")
    cap = int(env) if env and env.strip().isdigit() and int(env) > 0 else 1
    return max(1, min(cap, requested) if requested else cap)


def simulate(eq, cfg: SimConfig, workers: int | None = None) -> OccupationStats:
    """Simulate ``cfg.n_paths`` paths; ``workers`` is capped by ``EQUISHOOT_THREADS``."""
    co = _coefficients(eq)
    n_workers = min(_worker_count(workers), cfg.n_paths)
    cuts = np.linspace(0, cfg.n_paths, n_workers + 1).round().astype(int)
    blocks = [(int(a), int(b - a)) for a, b in zip(cuts[:-1], cuts[1:])]
    starts = None
    if cfg.start == "stationary":
        law = stationary_law(eq)
        starts = np.array([law.sample(1, _path_rng(cfg.seed, i, 2))[0] for i in range(cfg.n_paths)])
    start_parts = [None if starts is None else starts[a:a + c] for a, c in blocks]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(_simulate_block, [co] * len(blocks), [cfg] * len(blocks),
                                  [b[0] for b in blocks], [b[1] for b in blocks], start_parts))
    else:
        parts = [_simulate_block(co, cfg, a, c, st) for (a, c), st in zip(blocks, start_parts)]
    counts = np.concatenate([pt[0] for pt in parts])
    terminal = np.concatenate([pt[1] for pt in parts])
    clamps = np.concatenate([pt[2] for pt in parts])
    inner = np.concatenate([pt[3] for pt in parts])
    aborted = np.concatenate([pt[4] for pt in parts])
    refined = np.concatenate([pt[5] for pt in parts])
    segments = sum(pt[6] for pt in parts)
    total = counts.sum()
    freq = counts.sum(axis=0) / total if total else np.zeros(cfg.n_bins)
    counted = cfg.n_steps - cfg.burn_steps
    return OccupationStats(
        bin_edges=np.linspace(0.0, 1.0, cfg.n_bins + 1),
        occupation_frequency=freq,
        terminal_values=terminal,
        path_counts=counts,
        clamp_events=clamps,
        inner_fraction=inner / max(counted, 1),
        aborted=aborted,
        refined_steps=refined,
        dt=cfg.dt,
        n_counted_steps=counted,
        segment_counts=segments,
    )


# --- stationary law ----------------------------------------------------------------


@dataclass
class StationaryLaw:
    """Normalised speed measure, with density, bin masses and sampling."""

    data: ScaleData
    mass: float

    def __post_init__(self):
        self._cdf, total = speed_cdf(self.data)
        if not math.isfinite(total):
            raise NotNormalizable("speed measure has infinite mass")

    def density(self, y):
        y = np.asarray(y, dtype=float)
        ld = self.data
        log_rho = ld.log_rho_at(y)
        h = ld.eq.h(y)
        sig2 = ld.eq.params.sigma2 * (1.0 - y) ** 2 / (h * h)
        return np.exp(-log_rho) / sig2 / self.mass

    def cdf(self, y):
        return self._cdf(y) / self.mass

    def bin_masses(self, edges) -> np.ndarray:
        c = self.cdf(np.asarray(edges, dtype=float))
        c[0] = 0.0 if edges[0] == 0.0 else c[0]
        c[-1] = 1.0 if edges[-1] == 1.0 else c[-1]
        return np.diff(c)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF sampling on the logit grid of the scale data."""
        z = self.data.z
        cz = self.cdf(self.data.y)
        u = rng.random(n)
        return expit(np.interp(u, cz, z))


def stationary_law(eq, anchor: float = 0.5) -> StationaryLaw:
    data = scale_data(eq, anchor)
    _, total = speed_cdf(data)
    if not math.isfinite(total):
        raise NotNormalizable("speed measure has infinite mass; no stationary density")
    return StationaryLaw(data, total)


def stationary_density(eq, grid, anchor: float = 0.5) -> np.ndarray:
    return stationary_law(eq, anchor).density(grid)


def ergodic_distance(occupation, masses) -> float:
    occupation = np.asarray(occupation, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if occupation.shape != masses.shape:
        raise BinMismatch(f"bin layouts differ: {occupation.shape} vs {masses.shape}")
    return 0.5 * float(np.abs(occupation - masses).sum())


def histogram_frequency(samples, n_bins: int) -> np.ndarray:
    counts, _ = np.histogram(samples, bins=np.linspace(0.0, 1.0, n_bins + 1))
    return counts / counts.sum()


# --- files ---------------------------------------------------------------------------


def write_occupation_csv(path, stats: OccupationStats, stationary_masses=None, comment: str | None = None):
    masses = stationary_masses if stationary_masses is not None else np.full(len(stats.occupation_frequency), np.nan)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "occupation", "stationary_mass"])
        e = stats.bin_edges
        for i, occ in enumerate(stats.occupation_frequency):
            w.writerow([repr(float(e[i])), repr(float(e[i + 1])), repr(float(occ)), repr(float(masses[i]))])


def write_terminal_csv(path, stats: OccupationStats, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "terminal_y"])
        for i, v in enumerate(stats.terminal_values):
            w.writerow([i, repr(float(v))])


def run_metadata(cfg: SimConfig, stats: OccupationStats, certificate_hash: str, extra: dict | None = None) -> str:
    meta = {
        "sim_config": cfg.to_dict(),
        "certificate_hash": certificate_hash,
        "clamp_events": int(stats.clamp_events.sum()),
        "clamp_rate_per_path_time": stats.clamp_rate(),
        "aborted_paths": [int(i) for i in np.flatnonzero(stats.aborted)],
        "refined_steps": int(stats.refined_steps.sum()),
        "counted_steps": stats.n_counted_steps,
    }
    if extra:
        meta.update(extra)
    return json.dumps(meta, indent=2, sort_keys=True)
