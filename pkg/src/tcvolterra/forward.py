"""Controlled forward Volterra equation on the grid.

The scheme is left-point Volterra-Euler:

    X_i = X_0 + sum_{j<i} b(t_i, t_j, lam_j, u_j, X_j) dt_j
              + sum_{j<i} sum_k kappa(t_i, t_j, z_k, lam_j, u_j, X_j) dmu_{j,k}

Callbacks are vectorised over paths. ``lam`` is ``(P, 2)`` holding
``(lam_B, lam_H)`` on the cell, ``u`` is ``(P, 2)`` with one column per
player, ``x`` is ``(P,)`` and ``z`` is the array of mark values with the
Brownian mark ``0`` first. ``kappa`` returns something broadcastable to
``(P, 1 + M)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _fd
from .calculus import BasisTransform, InformationLevel, LeastSquares, RegressionBasis
from .errors import ContractViolation, InvalidArgument, NumericalBlowup
from .noise import PathEnsemble


class PastPath:
    """Read access to the already-computed nodes of ``X`` while node ``i`` is built."""

    def __init__(self, X: np.ndarray, i: int):
        self._X = X
        self.i = i

    def at(self, node: int) -> np.ndarray:
        if node < 0 or node >= self.i:
            raise ContractViolation(f"node {node} is not in the past of node {self.i}")
        return self._X[:, node]


@dataclass
class ForwardCoefficients:
    """Drift ``b(t, s, lam, u, x)`` and per-mark diffusion ``kappa(t, s, z, lam, u, x)``.

    Optional derivative callbacks share the signature of the function they
    differentiate; ``*_du`` callbacks return one column per player (last
    axis). Missing derivatives fall back to central differences.

    ``drift_depends_on_t=False`` and ``diffusion_depends_on_t=False`` declare
    the kernels free of their first argument; when both hold the solver runs
    in O(N) and the memory terms of the Hamiltonian vanish. ``path_dependent=True`` passes a
    :class:`PastPath` as keyword ``past`` to ``drift`` and ``diffusion`` (delay
    kernels reading ``X(t - s)``).

    ``memory`` selects how the Hamiltonian integrates the first-argument
    dependence: ``"difference"`` (kernel increments across grid cells, exact
    for the discrete scheme) or ``"derivative"`` (the ``*_dt`` callbacks with
    a left-point rule).
    """

    drift: Optional[Callable] = None
    diffusion: Optional[Callable] = None
    drift_dt: Optional[Callable] = None
    diffusion_dt: Optional[Callable] = None
    drift_dx: Optional[Callable] = None
    diffusion_dx: Optional[Callable] = None
    drift_du: Optional[Callable] = None
    diffusion_du: Optional[Callable] = None
    drift_depends_on_t: bool = True
    diffusion_depends_on_t: bool = True
    path_dependent: bool = False
    memory: str = "difference"  # Hamiltonian memory rule: "difference" or "derivative"
    horizon: float = 1.0        # time scale for difference steps in t

    @property
    def depends_on_t(self) -> bool:
        return self.drift_depends_on_t or self.diffusion_depends_on_t

    def b(self, t, s, lam, u, x, past=None):
        if self.drift is None:
            return np.zeros_like(x)
        kw = {"past": past} if self.path_dependent else {}
        return np.broadcast_to(np.asarray(self.drift(t, s, lam, u, x, **kw), float), x.shape)

    def kappa(self, t, s, z, lam, u, x, past=None):
        shape = (x.shape[0], len(z))
        if self.diffusion is None:
            return np.zeros(shape)
        kw = {"past": past} if self.path_dependent else {}
        return np.broadcast_to(np.asarray(self.diffusion(t, s, z, lam, u, x, **kw), float), shape)

    # -- first-argument and state/control derivatives --------------------

    def b_t(self, t, s, lam, u, x):
        if self.drift_dt is not None:
            return np.broadcast_to(np.asarray(self.drift_dt(t, s, lam, u, x), float), x.shape)
        if not self.drift_depends_on_t or self.drift is None:
            return np.zeros_like(x)
        h = _fd.step_for(self.horizon)
        return (self.b(t + h, s, lam, u, x) - self.b(t - h, s, lam, u, x)) / (2 * h)

    def kappa_t(self, t, s, z, lam, u, x):
        shape = (x.shape[0], len(z))
        if self.diffusion_dt is not None:
            return np.broadcast_to(np.asarray(self.diffusion_dt(t, s, z, lam, u, x), float), shape)
        if not self.diffusion_depends_on_t or self.diffusion is None:
            return np.zeros(shape)
        h = _fd.step_for(self.horizon)
        return (self.kappa(t + h, s, z, lam, u, x) - self.kappa(t - h, s, z, lam, u, x)) / (2 * h)

    def b_x(self, t, s, lam, u, x):
        if self.drift_dx is not None:
            return np.broadcast_to(np.asarray(self.drift_dx(t, s, lam, u, x), float), x.shape)
        return _fd.central(lambda v: self.b(t, s, lam, u, v), x)

    def kappa_x(self, t, s, z, lam, u, x):
        if self.diffusion_dx is not None:
            return np.broadcast_to(np.asarray(self.diffusion_dx(t, s, z, lam, u, x), float),
                                   (x.shape[0], len(z)))
        h = _fd.step_for(x)
        return (self.kappa(t, s, z, lam, u, x + h) - self.kappa(t, s, z, lam, u, x - h)) / (2 * h)

    def b_u(self, t, s, lam, u, x, player):
        if self.drift_du is not None:
            return np.asarray(self.drift_du(t, s, lam, u, x), float)[..., player] * np.ones_like(x)
        return _fd.central(lambda v: self.b(t, s, lam, _with_column(u, player, v), x), u[:, player])

    def kappa_u(self, t, s, z, lam, u, x, player):
        shape = (x.shape[0], len(z))
        if self.diffusion_du is not None:
            return np.broadcast_to(np.asarray(self.diffusion_du(t, s, z, lam, u, x), float)[..., player], shape)
        h = _fd.step_for(u[:, player])
        up = self.kappa(t, s, z, lam, _with_column(u, player, u[:, player] + h), x)
        dn = self.kappa(t, s, z, lam, _with_column(u, player, u[:, player] - h), x)
        return (up - dn) / (2 * h)


def _with_column(u, col, values):
    out = np.array(u, dtype=float, copy=True)
    out[:, col] = values
    return out


@dataclass
class ForwardPath:
    X: np.ndarray               # (P, N + 1)
    x0: float
    u: np.ndarray               # (P, N, 2) realised controls per cell

    @property
    def terminal(self) -> np.ndarray:
        return self.X[:, -1]


# -- controls ---------------------------------------------------------------

def _full_transform(basis: RegressionBasis, features, weights) -> BasisTransform:
    """Standardisation that keeps every feature, so the term list is fixed."""
    features = np.asarray(features, dtype=float)
    d = features.shape[1]
    if d:
        center = weights @ features
        scale = np.sqrt(weights @ (features - center) ** 2)
        scale = np.where(scale > 1e-12 * np.maximum(1.0, np.abs(center)), scale, 1.0)
    else:
        center = scale = np.zeros(0)
    terms = [()]
    for deg in range(1, basis.degree + 1):
        terms += list(itertools.combinations_with_replacement(range(d), deg))
    return BasisTransform(basis, center, scale, np.ones(d, dtype=bool), terms)


class ControlProcess:
    """Feature-parameterised control of one player, clipped to a box.

    The value on cell ``j`` is ``clip(sum_l coef[j, l] * psi_l(features_j))``
    where the features are the ones ``level`` exposes at node ``j``.
    ``value`` (scalar or one entry per cell) seeds the intercepts. The
    standardisation of each cell's features is frozen on first use so that
    the same coefficients mean the same function across re-solves.
    """

    def __init__(self, player: int, level: InformationLevel, n_cells: int,
                 value=0.0, box=(-np.inf, np.inf), degree: int = 1,
                 coef: Optional[np.ndarray] = None, maps: Optional[list] = None):
        if player not in (0, 1):
            raise InvalidArgument("player index must be 0 or 1")
        lo, hi = float(box[0]), float(box[1])
        if not lo <= hi:
            raise InvalidArgument(f"empty admissible box {box}")
        self.player = player
        self.level = level
        self.N = n_cells
        self.box = (lo, hi)
        self.basis = RegressionBasis(degree=degree, min_paths_per_function=1)
        self.init_value = np.broadcast_to(np.asarray(value, dtype=float), (n_cells,)).copy()
        self.coef = None if coef is None else np.array(coef, dtype=float)
        self.maps = [None] * n_cells if maps is None else maps

    @classmethod
    def deterministic(cls, player, values, box=(-np.inf, np.inf)):
        """A control that sees no features: one value per cell."""
        values = np.asarray(values, dtype=float)
        level = InformationLevel(flow="F", noise=False, clock=False)
        ctl = cls(player, level, values.size, box=box, degree=0, coef=values[:, None])
        return ctl

    def copy(self) -> "ControlProcess":
        return ControlProcess(self.player, self.level, self.N, self.init_value, self.box,
                              self.basis.degree, None if self.coef is None else self.coef.copy(),
                              self.maps)

    def design(self, ensemble: PathEnsemble, j: int) -> np.ndarray:
        _, feats = self.level.features(ensemble, j)
        if self.maps[j] is None:
            self.maps[j] = _full_transform(self.basis, feats, ensemble.weights)
        tr = self.maps[j]
        if self.coef is None:
            self.coef = np.zeros((self.N, len(tr.terms)))
            self.coef[:, 0] = self.init_value
        return tr.design(feats)

    def raw(self, ensemble: PathEnsemble, j: int) -> np.ndarray:
        return self.design(ensemble, j) @ self.coef[j]

    def values(self, ensemble: PathEnsemble, j: int) -> np.ndarray:
        return np.clip(self.raw(ensemble, j), *self.box)

    def refit(self, ensemble: PathEnsemble, targets: np.ndarray) -> "ControlProcess":
        """New control whose cell values are the projection of ``targets`` (P, N)."""
        out = self.copy()
        for j in range(self.N):
            A = out.design(ensemble, j)
            solver = LeastSquares(A, ensemble.weights, out.basis)
            out.coef[j] = solver.coefficients(A, targets[:, j])
        return out

    def perturbed(self, cells: Sequence[int], alpha, eps: float) -> "PerturbedControl":
        return PerturbedControl(self, list(cells), np.asarray(alpha, dtype=float), eps)

    def table(self, ensemble: PathEnsemble) -> np.ndarray:
        """Clipped values on every cell, ``(P, N)``; needs ``x`` states if features use them."""
        return np.column_stack([self.values(ensemble, j) for j in range(self.N)])


class PerturbedControl:
    """``u + eps * alpha`` on a window of cells.

    ``alpha`` holds coefficients over the player's basis at the window's
    first cell, so the perturbation is measurable at the window start.
    """

    def __init__(self, base: ControlProcess, cells, alpha, eps):
        if not cells:
            raise InvalidArgument("perturbation window is empty")
        self.base = base
        self.player = base.player
        self.cells = set(cells)
        self.start = min(cells)
        self.alpha = alpha
        self.eps = eps
        self.box = base.box
        self._alpha_values = None

    def values(self, ensemble, j):
        u = self.base.raw(ensemble, j)
        if j in self.cells:
            if j == self.start or self._alpha_values is None:
                self._alpha_values = self.base.design(ensemble, self.start) @ self.alpha
            u = u + self.eps * self._alpha_values
        return np.clip(u, *self.box)


# -- solver -----------------------------------------------------------------

def _controls_on_cell(controls, ensemble, j, P):
    u = np.zeros((P, 2))
    for ctl in controls:
        if ctl is not None:
            u[:, ctl.player] = ctl.values(ensemble, j)
    return u


def _lam(ensemble, j):
    return np.column_stack([ensemble.lam_B[:, j], ensemble.lam_H[:, j]])


def solve_fsvie(coeffs: ForwardCoefficients, controls, ensemble: PathEnsemble,
                x0: float) -> ForwardPath:
    """Left-point Volterra-Euler solve of the forward equation on every path."""
    controls = tuple(controls) if controls is not None else ()
    grid = ensemble.grid
    P, N = ensemble.n_paths, grid.N
    t, dt = grid.nodes, grid.dt
    z = ensemble.marks.values
    X = np.full((P, N + 1), np.nan)
    X[:, 0] = x0
    live = ensemble.with_states(x=X)
    U = np.zeros((P, N, 2))
    lam = [_lam(ensemble, j) for j in range(N)]
    running = np.zeros(P)
    for i in range(1, N + 1):
        j_new = i - 1
        U[:, j_new] = _controls_on_cell(controls, live, j_new, P)
        if not np.all(np.isfinite(U[:, j_new])):
            raise NumericalBlowup("non-finite control value", cell=j_new)
        past = PastPath(X, i) if coeffs.path_dependent else None
        if coeffs.depends_on_t:
            total = np.zeros(P)
            for j in range(i):
                total += _cell_term(coeffs, t[i], t[j], z, lam[j], U[:, j], X[:, j],
                                    dt[j], ensemble.dmu[:, j], past, j)
        else:
            running = running + _cell_term(coeffs, t[j_new], t[j_new], z, lam[j_new],
                                           U[:, j_new], X[:, j_new], dt[j_new],
                                           ensemble.dmu[:, j_new], past, j_new)
            total = running
        X[:, i] = x0 + total
        if not np.all(np.isfinite(X[:, i])):
            raise NumericalBlowup("forward state is not finite", cell=j_new)
    return ForwardPath(X, float(x0), U)


def _cell_term(coeffs, ti, tj, z, lam, u, x, dtj, dmu, past, j):
    b = coeffs.b(ti, tj, lam, u, x, past)
    k = coeffs.kappa(ti, tj, z, lam, u, x, past)
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(k))):
        raise NumericalBlowup("non-finite coefficient value", cell=j)
    return b * dtj + np.einsum("pk,pk->p", k, dmu)


@dataclass
class MeanTestResult:
    mc_mean: np.ndarray
    oracle_mean: np.ndarray
    stderr: np.ndarray
    max_z: float = field(default=0.0)


def forward_mean_test(coeffs: ForwardCoefficients, controls, ensemble: PathEnsemble,
                      x0: float, path: Optional[ForwardPath] = None) -> MeanTestResult:
    """Monte Carlo ``E[X(t_i)]`` against the deterministic Volterra equation for the mean.

    The drift must be affine in ``x`` with a deterministic slope; the noise
    terms have zero mean and drop out. Slopes and intercepts are averaged
    over paths cell by cell.
    """
    if path is None:
        path = solve_fsvie(coeffs, controls, ensemble, x0)
    grid = ensemble.grid
    N, t, dt = grid.N, grid.nodes, grid.dt
    P = ensemble.n_paths
    one, zero = np.ones(P), np.zeros(P)
    m = np.empty(N + 1)
    m[0] = x0
    for i in range(1, N + 1):
        acc = x0
        for j in range(i):
            lam, u = _lam(ensemble, j), path.u[:, j]
            b0 = ensemble.mean(coeffs.b(t[i], t[j], lam, u, zero))
            slope = ensemble.mean(coeffs.b(t[i], t[j], lam, u, one)) - b0
            acc += (b0 + slope * m[j]) * dt[j]
        m[i] = acc
    mc = ensemble.mean(path.X)
    se = np.array([ensemble.stderr(path.X[:, i]) for i in range(N + 1)])
    # deviations at rounding level count as exact agreement
    dev = np.abs(mc - m)
    dev = np.where(dev <= 1e-12 * np.maximum(1.0, np.abs(m)), 0.0, dev)
    zs = np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev > 0, np.inf, 0.0))
    return MeanTestResult(mc, m, se, float(zs.max()))
