"""Time grids, time-change intensities and the noise measures on a grid.

The random measure ``Lambda`` gives cell ``j`` the masses

    w[j, 0] = lamB[j] * dt[j]               (Brownian mark)
    w[j, k] = lamH[j] * nu[k] * dt[j]       (jump mark k >= 1)

and the noise ``mu`` realises, given the intensity path, a Gaussian increment
with variance ``w[j, 0]`` and compensated Poisson counts ``N - w[j, k]``.
Intensities are read at the left end of each cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np

from . import rng
from .errors import InvalidArgument


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidArgument("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise InvalidArgument("grid must start at 0")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidArgument("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def left(self) -> np.ndarray:
        return self.nodes[:-1]


def build_grid(T: float, N: int) -> TimeGrid:
    """Uniform grid with ``N`` cells on ``[0, T]``."""
    if not np.isfinite(T) or T <= 0:
        raise InvalidArgument(f"horizon T must be positive, got {T}")
    if int(N) != N or N < 1:
        raise InvalidArgument(f"cell count N must be a positive integer, got {N}")
    nodes = T * np.arange(int(N) + 1) / int(N)
    nodes[-1] = T
    return TimeGrid(nodes)


@dataclass(frozen=True)
class MarkSet:
    """Jump marks ``z_1..z_M`` with masses ``nu_k``; mark 0 is the Brownian part."""

    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nu: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if z.shape != nu.shape or z.ndim != 1:
            raise InvalidArgument("marks and masses must be 1-d arrays of equal length")
        if np.any(z == 0):
            raise InvalidArgument("jump marks must be nonzero")
        if np.any(nu < 0) or not np.all(np.isfinite(nu)) or not np.all(np.isfinite(z)):
            raise InvalidArgument("mark masses must be finite and nonnegative")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "nu", nu)

    @property
    def M(self) -> int:
        return self.z.size

    @property
    def values(self) -> np.ndarray:
        """All mark values including the zero mark, shape ``(1 + M,)``."""
        return np.concatenate([[0.0], self.z])

    def second_moment(self) -> float:
        return float(np.sum(self.z**2 * self.nu))


# -- intensity models -------------------------------------------------------

class IntensityModel:
    """One component (Brownian or jump) of the time-change process."""

    kind = "abstract"
    random = True

    def sample(self, grid: TimeGrid, gen: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def mean(self, t) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class DeterministicIntensity(IntensityModel):
    value: Union[float, Callable] = 1.0
    kind = "deterministic-function"
    random = False

    def __post_init__(self):
        if not callable(self.value) and (not np.isfinite(self.value) or self.value < 0):
            raise InvalidArgument(f"intensity must be nonnegative, got {self.value}")

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if callable(self.value):
            out = np.broadcast_to(np.asarray(self.value(t), dtype=float), t.shape).copy()
        else:
            out = np.full(t.shape, float(self.value))
        if np.any(out < 0) or not np.all(np.isfinite(out)):
            raise InvalidArgument("deterministic intensity takes negative or non-finite values")
        return out

    def sample(self, grid, gen, n):
        return np.broadcast_to(self.evaluate(grid.left), (n, grid.N)).copy()

    def mean(self, t):
        return self.evaluate(t)


@dataclass(frozen=True)
class PiecewiseLognormalIntensity(IntensityModel):
    """Levels ``exp(m + s Z)`` held constant on ``pieces`` equal sub-intervals."""

    pieces: int = 4
    m: float = 0.0
    s: float = 0.25
    kind = "piecewise-constant-random"

    def __post_init__(self):
        if self.pieces < 1 or self.s < 0:
            raise InvalidArgument("piecewise model needs pieces >= 1 and s >= 0")

    def sample(self, grid, gen, n):
        levels = np.exp(self.m + self.s * gen.standard_normal((n, self.pieces)))
        idx = np.minimum((grid.left / grid.T * self.pieces).astype(int), self.pieces - 1)
        return levels[:, idx]

    def mean(self, t):
        return np.full(np.shape(t), np.exp(self.m + 0.5 * self.s**2))


@dataclass(frozen=True)
class CIRIntensity(IntensityModel):
    """Square-root mean-reverting intensity, full-truncation Euler.

    ``dl = kappa (theta - l) dt + sigma sqrt(l) dW``. With
    ``stationary_start`` the initial value is drawn from the stationary
    Gamma law, so every cell has mean ``theta``.
    """

    kappa: float = 2.0
    theta: float = 1.0
    sigma: float = 0.5
    lam0: float = 1.0
    stationary_start: bool = False
    substeps: int = 4
    kind = "mean-reverting-positive"

    def __post_init__(self):
        if self.kappa <= 0 or self.theta < 0 or self.sigma < 0 or self.lam0 < 0:
            raise InvalidArgument("CIR parameters imply a negative or non-reverting intensity")
        if self.substeps < 1:
            raise InvalidArgument("substeps must be >= 1")

    def sample(self, grid, gen, n):
        if self.stationary_start and self.sigma > 0:
            shape = 2 * self.kappa * self.theta / self.sigma**2
            scale = self.sigma**2 / (2 * self.kappa)
            lam = gen.gamma(shape, scale, size=n)
        else:
            lam = np.full(n, float(self.lam0))
        out = np.empty((n, grid.N))
        for j, dt in enumerate(grid.dt):
            out[:, j] = np.maximum(lam, 0.0)
            h = dt / self.substeps
            for _ in range(self.substeps):
                lp = np.maximum(lam, 0.0)
                lam = lam + self.kappa * (self.theta - lp) * h \
                    + self.sigma * np.sqrt(lp * h) * gen.standard_normal(n)
        return out

    def mean(self, t):
        t = np.asarray(t, dtype=float)
        if self.stationary_start:
            return np.full(t.shape, float(self.theta))
        return self.theta + (self.lam0 - self.theta) * np.exp(-self.kappa * t)

    def stationary_variance(self) -> float:
        return self.sigma**2 * self.theta / (2 * self.kappa)


@dataclass(frozen=True)
class TimeChangeModel:
    brownian: IntensityModel = field(default_factory=DeterministicIntensity)
    jump: IntensityModel = field(default_factory=lambda: DeterministicIntensity(0.0))

    @property
    def kind(self) -> tuple:
        return (self.brownian.kind, self.jump.kind)

    @property
    def deterministic(self) -> bool:
        return not (self.brownian.random or self.jump.random)


@dataclass(frozen=True)
class TimeChangePath:
    """Per-cell intensities, arrays of shape ``(paths, N)``."""

    lam_B: np.ndarray
    lam_H: np.ndarray

    def __post_init__(self):
        if self.lam_B.shape != self.lam_H.shape:
            raise InvalidArgument("intensity components must share a shape")
        if np.any(self.lam_B < 0) or np.any(self.lam_H < 0):
            raise InvalidArgument("sampled intensities must be nonnegative")

    @property
    def n_paths(self) -> int:
        return self.lam_B.shape[0]


def _tc_block(model, grid, seed, start, stop, block):
    # full-block draws keep path i's numbers independent of the ensemble size
    gen_b = rng.stream(seed, "lambda-B", block)
    gen_h = rng.stream(seed, "lambda-H", block)
    n = stop - start
    lb = model.brownian.sample(grid, gen_b, rng.BLOCK_SIZE)[:n]
    lh = model.jump.sample(grid, gen_h, rng.BLOCK_SIZE)[:n]
    return lb, lh


def sample_time_change(model: TimeChangeModel, grid: TimeGrid, seed: int,
                       n_paths: int = 1, workers: int = 1) -> TimeChangePath:
    parts = rng.fill_blocks(
        n_paths, lambda b, s, e: _tc_block(model, grid, seed, s, e, b), workers)
    lam_B = np.concatenate([p[0] for p in parts], axis=0)
    lam_H = np.concatenate([p[1] for p in parts], axis=0)
    return TimeChangePath(lam_B, lam_H)


def lambda_weights(path: TimeChangePath, grid: TimeGrid, marks: MarkSet) -> np.ndarray:
    """Masses of ``Lambda`` per (path, cell, mark); shape ``(P, N, 1 + M)``."""
    if path.lam_B.shape[1] != grid.N:
        raise InvalidArgument(
            f"intensity path has {path.lam_B.shape[1]} cells, grid has {grid.N}")
    dt = grid.dt
    w0 = path.lam_B * dt
    wj = path.lam_H[:, :, None] * marks.nu[None, None, :] * dt[None, :, None]
    return np.concatenate([w0[:, :, None], wj], axis=2)


@dataclass(frozen=True)
class NoisePath:
    dB: np.ndarray          # (P, N)
    counts: np.ndarray      # (P, N, M) integer
    dH: np.ndarray          # (P, N, M) compensated

    @property
    def dmu(self) -> np.ndarray:
        """Increments of ``mu`` per mark, shape ``(P, N, 1 + M)``."""
        return np.concatenate([self.dB[:, :, None], self.dH], axis=2)


def _noise_block(weights, seed, start, stop, block):
    n = stop - start
    w = np.zeros((rng.BLOCK_SIZE,) + weights.shape[1:])
    w[:n] = weights[start:stop]
    gen_g = rng.stream(seed, "gauss", block)
    gen_p = rng.stream(seed, "poisson", block)
    dB = np.sqrt(w[:, :, 0]) * gen_g.standard_normal(w.shape[:2])
    counts = gen_p.poisson(w[:, :, 1:])
    return dB[:n], counts[:n]


def sample_noise(path: TimeChangePath, grid: TimeGrid, marks: MarkSet, seed: int,
                 workers: int = 1) -> NoisePath:
    w = lambda_weights(path, grid, marks)
    if not np.all(np.isfinite(w)):
        raise InvalidArgument("Lambda weights must be finite")
    parts = rng.fill_blocks(
        path.n_paths, lambda b, s, e: _noise_block(w, seed, s, e, b), workers)
    dB = np.concatenate([p[0] for p in parts], axis=0)
    counts = np.concatenate([p[1] for p in parts], axis=0).astype(np.int64)
    return NoisePath(dB, counts, counts - w[:, :, 1:])


class PathEnsemble:
    """Seeded Monte Carlo collection of intensity and noise paths.

    ``weights`` are optional probability weights per path (they sum to one);
    by default every path carries ``1 / P``. ``states`` holds named per-node
    arrays (e.g. ``"x"``) that information levels may expose as features.
    """

    def __init__(self, grid: TimeGrid, marks: MarkSet, time_change: TimeChangePath,
                 noise: NoisePath, seed=None, model=None, weights=None):
        self.grid = grid
        self.marks = marks
        self.time_change = time_change
        self.noise = noise
        self.seed = seed
        self.model = model
        P = time_change.n_paths
        if weights is None:
            self.weights = np.full(P, 1.0 / P)
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (P,) or np.any(weights < 0):
                raise InvalidArgument("path weights must be nonnegative, one per path")
            self.weights = weights / weights.sum()
        self.uniform = weights is None
        self.w = lambda_weights(time_change, grid, marks)
        self.dmu = noise.dmu
        self.states: dict = {}

    @property
    def n_paths(self) -> int:
        return self.time_change.n_paths

    @property
    def lam_B(self):
        return self.time_change.lam_B

    @property
    def lam_H(self):
        return self.time_change.lam_H

    def intensity_per_mark(self) -> np.ndarray:
        """``w / dt``: Brownian intensity and jump intensity times ``nu``, ``(P, N, 1+M)``."""
        return self.w / self.grid.dt[None, :, None]

    @cached_property
    def cum_noise(self) -> np.ndarray:
        """``mu([0, t_i] x {mark})`` per node, shape ``(P, N + 1, 1 + M)``."""
        out = np.zeros((self.n_paths, self.grid.N + 1, 1 + self.marks.M))
        np.cumsum(self.dmu, axis=1, out=out[:, 1:])
        return out

    @cached_property
    def cum_lambda(self) -> np.ndarray:
        """``(Lambda^B(t_i), Lambda^H(t_i))`` per node, shape ``(P, N + 1, 2)``."""
        dt = self.grid.dt
        out = np.zeros((self.n_paths, self.grid.N + 1, 2))
        out[:, 1:, 0] = np.cumsum(self.lam_B * dt, axis=1)
        out[:, 1:, 1] = np.cumsum(self.lam_H * dt, axis=1)
        return out

    def mean(self, values, axis=0):
        return np.tensordot(self.weights, values, axes=([0], [axis]))

    def stderr(self, values) -> float:
        values = np.asarray(values, dtype=float)
        m = self.mean(values)
        var = self.mean((values - m) ** 2)
        n_eff = 1.0 / np.sum(self.weights**2)
        return float(np.sqrt(var / max(n_eff - 1.0, 1.0)))

    def with_states(self, **states):
        """Shallow copy sharing the noise, with extra named state arrays."""
        other = object.__new__(PathEnsemble)
        other.__dict__.update(self.__dict__)
        other.states = dict(self.states)
        other.states.update(states)
        return other


def simulate_ensemble(model: TimeChangeModel, grid: TimeGrid, marks: MarkSet,
                      n_paths: int, seed: int, workers: int = 1) -> PathEnsemble:
    if n_paths < 1:
        raise InvalidArgument("ensemble needs at least one path")
    tc = sample_time_change(model, grid, seed, n_paths, workers)
    noise = sample_noise(tc, grid, marks, seed, workers)
    return PathEnsemble(grid, marks, tc, noise, seed=seed, model=model)


def enumerated_ensemble(grid: TimeGrid, marks: MarkSet, lam_scenarios, probabilities=None):
    """Exhaustive ensemble for tiny grids with two-point noise.

    Each cell and mark carries an independent symmetric increment
    ``+-sqrt(w)``, so conditional means are zero and conditional variances
    equal the ``Lambda`` masses. ``lam_scenarios`` is a list of
    ``(lamB, lamH)`` per-cell arrays; ``probabilities`` weights them. Every
    outcome becomes one weighted path.
    """
    K = len(lam_scenarios)
    probabilities = np.full(K, 1.0 / K) if probabilities is None else np.asarray(probabilities, float)
    n_dirs = grid.N * (1 + marks.M)
    if n_dirs > 16:
        raise InvalidArgument("enumeration is limited to 16 noise coordinates")
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * n_dirs, indexing="ij")).reshape(n_dirs, -1).T
    lamB, lamH, dmu_all, wts = [], [], [], []
    for (lb, lh), prob in zip(lam_scenarios, probabilities):
        lb = np.broadcast_to(np.asarray(lb, float), (grid.N,))
        lh = np.broadcast_to(np.asarray(lh, float), (grid.N,))
        tc = TimeChangePath(lb[None, :], lh[None, :])
        w = lambda_weights(tc, grid, marks)[0]
        for s in signs:
            dmu_all.append(s.reshape(grid.N, 1 + marks.M) * np.sqrt(w))
            lamB.append(lb)
            lamH.append(lh)
            wts.append(prob / len(signs))
    dmu = np.array(dmu_all)
    tc = TimeChangePath(np.array(lamB), np.array(lamH))
    w = lambda_weights(tc, grid, marks)
    noise = NoisePath(dmu[:, :, 0], np.zeros(dmu[:, :, 1:].shape, dtype=np.int64), dmu[:, :, 1:])
    ens = PathEnsemble(grid, marks, tc, noise, weights=np.array(wts))
    ens.w = w
    return ens
