"""Streaming detection statistics and stopping rules.

All four procedures share one Markov recursion: the statistic is multiplied by
the one-observation likelihood ratio after first passing through a map xi, with
xi(x) = max(1, x) for CUSUM and xi(x) = 1 + x for the SR family.  They differ
only in the head start: CUSUM starts at 1, SR at 0, SR-r at a fixed r in
[0, A), and SRP at a random draw from the quasi-stationary distribution.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import model as _model
from ._rng import as_generator

XiMap = Callable[[np.ndarray], np.ndarray]


class DetectorKind(str, enum.Enum):
    CUSUM = "cusum"
    SR = "sr"
    SRP = "srp"
    SR_R = "sr_r"

    @property
    def is_sr_type(self) -> bool:
        return self is not DetectorKind.CUSUM


def xi_map(kind: DetectorKind) -> XiMap:
    """Statistic map: max(1, x) for CUSUM, 1 + x for the SR family."""
    if DetectorKind(kind) is DetectorKind.CUSUM:
        return lambda x: np.maximum(1.0, x)
    return lambda x: 1.0 + np.asarray(x, dtype=float)


class QuasiStationaryDistribution:
    """Piecewise-constant density on [0, upper], as produced by the OC solver.

    Supports inverse-CDF sampling and is the head-start source for SRP.
    """

    def __init__(self, nodes: np.ndarray, density: np.ndarray, panel_width: float,
                 upper: float, eigenvalue: float | None = None):
        nodes = np.asarray(nodes, dtype=float)
        density = np.asarray(density, dtype=float)
        if nodes.shape != density.shape or nodes.ndim != 1:
            raise ValueError("nodes and density must be equal-length 1-d arrays")
        if np.any(density < 0.0):
            raise ValueError("density must be nonnegative")
        total = float(np.sum(density) * panel_width)
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"density must integrate to 1 within 1e-8, got {total!r}")
        self.nodes = nodes
        self.density = density
        self.panel_width = float(panel_width)
        self.upper = float(upper)
        self.eigenvalue = eigenvalue
        self._edges = np.concatenate([nodes - panel_width / 2.0, [nodes[-1] + panel_width / 2.0]])
        self._cum = np.concatenate([[0.0], np.cumsum(density) * panel_width])
        self._cum[-1] = 1.0

    def mean(self) -> float:
        return float(np.sum(self.nodes * self.density) * self.panel_width)

    def sample(self, rng, size: int | None = None) -> np.ndarray | float:
        """Inverse-CDF draw(s); deterministic given the generator state."""
        gen = as_generator(rng)
        u = gen.random(size=1 if size is None else size)
        idx = np.searchsorted(self._cum, u, side="right") - 1
        idx = np.clip(idx, 0, len(self.nodes) - 1)
        mass = self._cum[idx + 1] - self._cum[idx]
        frac = np.where(mass > 0.0, (u - self._cum[idx]) / np.where(mass > 0, mass, 1.0), 0.0)
        out = self._edges[idx] + frac * self.panel_width
        return float(out[0]) if size is None else out


def draw_head_start(quasi_stationary: QuasiStationaryDistribution, rng) -> float:
    """One head-start draw for the SRP procedure."""
    return quasi_stationary.sample(rng)


@dataclass(frozen=True)
class DetectorSpec:
    """Which procedure to run, with its threshold and head start."""

    kind: DetectorKind
    threshold_a: float
    head_start: Optional[float] = None
    quasi_stationary: Optional[QuasiStationaryDistribution] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DetectorKind(self.kind))
        if not (math.isfinite(self.threshold_a) and self.threshold_a > 0):
            raise ValueError("threshold_a must be positive and finite")
        if self.kind is DetectorKind.SR_R:
            if self.head_start is None:
                raise ValueError("SR-r requires an explicit head start")
            if not 0.0 <= self.head_start < self.threshold_a:
                raise ValueError("SR-r head start must satisfy 0 <= r < A")
        if self.kind is DetectorKind.SRP:
            if self.quasi_stationary is None:
                raise ValueError("SRP requires a quasi-stationary distribution")
            if abs(self.quasi_stationary.upper - self.threshold_a) > 1e-6 * self.threshold_a:
                raise ValueError("quasi-stationary support must be [0, threshold_a]")
        if self.head_start is not None and not 0.0 <= self.head_start < self.threshold_a:
            raise ValueError("head start must satisfy 0 <= head_start < A")

    @property
    def xi(self) -> XiMap:
        return xi_map(self.kind)

    def initial_statistic(self, rng=None) -> float:
        if self.kind is DetectorKind.SRP:
            if rng is None:
                raise ValueError("SRP needs an rng to draw its head start")
            return draw_head_start(self.quasi_stationary, rng)
        if self.head_start is not None:
            return float(self.head_start)
        return 1.0 if self.kind is DetectorKind.CUSUM else 0.0


@dataclass(frozen=True)
class DetectorState:
    statistic: float
    time_index: int = 0
    alarmed: bool = False


def initial_state(spec: DetectorSpec, rng=None) -> DetectorState:
    return DetectorState(statistic=spec.initial_statistic(rng))


def update(state: DetectorState, spec: DetectorSpec, lr_value: float) -> DetectorState:
    """One step of the recursion; sets the alarm at the first crossing."""
    if state.alarmed:
        raise ValueError("detector already alarmed; reset before updating")
    if not lr_value > 0.0:
        raise ValueError("lr_value must be positive")
    scale = spec.xi(np.asarray(state.statistic, dtype=float))
    statistic = float(scale) * float(lr_value)
    return DetectorState(
        statistic=statistic,
        time_index=state.time_index + 1,
        alarmed=statistic >= spec.threshold_a,
    )


def run_single(spec: DetectorSpec, model: _model.GaussianChangeModel,
               observations: Sequence[float], rng=None) -> Optional[int]:
    """First crossing time over one pass of the observations, or None."""
    observations = np.asarray(observations, dtype=float)
    if observations.size == 0:
        raise ValueError("observations must be nonempty")
    state = initial_state(spec, rng)
    lr = _model.likelihood_ratio(model, observations)
    for value in np.atleast_1d(lr):
        state = update(state, spec, float(value))
        if state.alarmed:
            return state.time_index
    return None


@dataclass(frozen=True)
class AlarmLog:
    """Alarm times of a repeated (multi-cyclic) run over one series."""

    alarm_times: tuple[int, ...]
    cycle_lengths: tuple[int, ...]
    statistic_trajectory: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        times = self.alarm_times
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("alarm times must be strictly increasing")
        expected = tuple(
            t - prev for t, prev in zip(times, (0,) + times[:-1])
        )
        if tuple(self.cycle_lengths) != expected:
            raise ValueError("cycle lengths must be first differences of alarm times")

    def false_alarms(self, change_point: int) -> int:
        return sum(1 for t in self.alarm_times if t <= change_point)


@dataclass(frozen=True)
class MulticyclicResult:
    alarm_log: AlarmLog
    detection_time: Optional[int]
    delay: Optional[int]


def run_multicyclic(spec: DetectorSpec, model: _model.GaussianChangeModel,
                    observations: Sequence[float], change_point: int,
                    rng=None, record_trajectory: bool = False) -> MulticyclicResult:
    """Repeated application over one series, restarting after every alarm.

    Alarms at times <= change_point are false; the detection time is the first
    alarm strictly after it and the delay is their difference.  SRP redraws its
    head start at the beginning of every cycle.
    """
    if change_point < 0:
        raise ValueError("change_point must be >= 0")
    observations = np.asarray(observations, dtype=float)
    lr = np.atleast_1d(_model.likelihood_ratio(model, observations))
    gen = as_generator(rng) if (rng is not None or spec.kind is DetectorKind.SRP) else None
    state = initial_state(spec, gen)
    trajectory = [state.statistic] if record_trajectory else None
    alarm_times: list[int] = []
    detection_time: Optional[int] = None
    n = 0
    for value in lr:
        state = update(state, spec, float(value))
        n += 1
        if record_trajectory:
            trajectory.append(state.statistic)
        if state.alarmed:
            alarm_times.append(n)
            if detection_time is None and n > change_point:
                detection_time = n
            state = initial_state(spec, gen)
            # time index continues across cycles; only the statistic restarts
            state = replace(state, time_index=n)
    cycle_lengths = tuple(
        t - prev for t, prev in zip(alarm_times, [0] + alarm_times[:-1])
    )
    log = AlarmLog(
        alarm_times=tuple(alarm_times),
        cycle_lengths=cycle_lengths,
        statistic_trajectory=np.asarray(trajectory) if record_trajectory else None,
    )
    delay = None if detection_time is None else detection_time - change_point
    return MulticyclicResult(alarm_log=log, detection_time=detection_time, delay=delay)


# ---------------------------------------------------------------------------
# Vectorized Monte-Carlo harnesses (many independent runs of one procedure).


def _draw_lr_block(model: _model.GaussianChangeModel, hypothesis: str,
                   rng: np.random.Generator, shape) -> np.ndarray:
    m, sd = model.mean_sd(hypothesis)
    x = rng.normal(m, sd, size=shape)
    return np.exp(model.log_support_bound + model.quad_coef * np.square(x))


def simulate_run_lengths(spec: DetectorSpec, model: _model.GaussianChangeModel,
                         hypothesis: str, n_runs: int, rng,
                         max_steps: int = 10_000_000, block: int = 512) -> np.ndarray:
    """Stopping times of ``n_runs`` independent single runs under one regime."""
    gen = as_generator(rng)
    xi = spec.xi
    if spec.kind is DetectorKind.SRP:
        stat = spec.quasi_stationary.sample(gen, n_runs).astype(float)
    else:
        stat = np.full(n_runs, spec.initial_statistic(), dtype=float)
    times = np.zeros(n_runs, dtype=np.int64)
    active = np.arange(n_runs)
    step = 0
    while active.size and step < max_steps:
        width = min(block, max_steps - step)
        lr = _draw_lr_block(model, hypothesis, gen, (active.size, width))
        local = stat[active]
        remaining = np.ones(active.size, dtype=bool)
        for j in range(width):
            local[remaining] = xi(local[remaining]) * lr[remaining, j]
            crossed = remaining & (local >= spec.threshold_a)
            if crossed.any():
                times[active[crossed]] = step + j + 1
                remaining &= ~crossed
            if not remaining.any():
                break
        stat[active] = local
        active = active[remaining]
        step += width
    if active.size:
        raise RuntimeError(f"{active.size} runs did not stop within max_steps={max_steps}")
    return times


def simulate_detection_delays(spec: DetectorSpec, model: _model.GaussianChangeModel,
                              change_point: int, n_runs: int, rng,
                              max_steps: int = 10_000_000, block: int = 512) -> np.ndarray:
    """Single-run delays T - nu over paths conditioned on surviving to nu.

    Runs the pre-change phase for ``change_point`` steps, drops the paths that
    alarmed early, then measures the first post-change crossing.
    """
    gen = as_generator(rng)
    xi = spec.xi
    if spec.kind is DetectorKind.SRP:
        stat = spec.quasi_stationary.sample(gen, n_runs).astype(float)
    else:
        stat = np.full(n_runs, spec.initial_statistic(), dtype=float)
    alive = np.ones(n_runs, dtype=bool)
    done = 0
    while done < change_point:
        width = min(block, change_point - done)
        lr = _draw_lr_block(model, "pre", gen, (n_runs, width))
        for j in range(width):
            stat[alive] = xi(stat[alive]) * lr[alive, j]
            alive &= stat < spec.threshold_a
        done += width
    survivors = np.flatnonzero(alive)
    if survivors.size == 0:
        return np.empty(0, dtype=np.int64)
    delays = np.zeros(survivors.size, dtype=np.int64)
    local = stat[survivors]
    active = np.arange(survivors.size)
    step = 0
    while active.size and step < max_steps:
        lr = _draw_lr_block(model, "post", gen, (active.size, block))
        cur = local[active]
        remaining = np.ones(active.size, dtype=bool)
        for j in range(block):
            cur[remaining] = xi(cur[remaining]) * lr[remaining, j]
            crossed = remaining & (cur >= spec.threshold_a)
            if crossed.any():
                delays[active[crossed]] = step + j + 1
                remaining &= ~crossed
            if not remaining.any():
                break
        local[active] = cur
        active = active[remaining]
        step += block
    if active.size:
        raise RuntimeError("post-change phase did not stop within max_steps")
    return delays


def simulate_stationary_delays(spec: DetectorSpec, model: _model.GaussianChangeModel,
                               change_point: int, n_reps: int, rng,
                               max_steps: int = 10_000_000, block: int = 512) -> np.ndarray:
    """Multi-cyclic delays at a distant change point, vectorized across reps.

    Every rep runs the procedure repeatedly (restarting at its head start after
    each false alarm) through ``change_point`` pre-change steps, then measures
    the first crossing after the change.
    """
    gen = as_generator(rng)
    xi = spec.xi

    def restart(count: int) -> np.ndarray:
        if spec.kind is DetectorKind.SRP:
            return np.atleast_1d(spec.quasi_stationary.sample(gen, count)).astype(float)
        return np.full(count, spec.initial_statistic(), dtype=float)

    stat = restart(n_reps)
    done = 0
    while done < change_point:
        width = min(block, change_point - done)
        lr = _draw_lr_block(model, "pre", gen, (n_reps, width))
        for j in range(width):
            stat = xi(stat) * lr[:, j]
            crossed = stat >= spec.threshold_a
            if crossed.any():
                stat[crossed] = restart(int(crossed.sum()))
        done += width
    # after the change the first crossing is the detection; no restarts happen
    delays = np.zeros(n_reps, dtype=np.int64)
    active = np.arange(n_reps)
    step = 0
    while active.size and step < max_steps:
        lr = _draw_lr_block(model, "post", gen, (active.size, block))
        cur = stat[active]
        remaining = np.ones(active.size, dtype=bool)
        for j in range(block):
            cur[remaining] = xi(cur[remaining]) * lr[remaining, j]
            crossed = remaining & (cur >= spec.threshold_a)
            if crossed.any():
                delays[active[crossed]] = step + j + 1
                remaining &= ~crossed
            if not remaining.any():
                break
        stat[active] = cur
        active = active[remaining]
        step += block
    if active.size:
        raise RuntimeError("some replications never detected the change")
    return delays
