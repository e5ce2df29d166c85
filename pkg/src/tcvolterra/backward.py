"""Backward Volterra equation, the adjoint pair (p, q) and the forward multiplier z.

The backward equation is solved slice by slice. For node ``i`` the slice
target is

    xi_i = h(X_T) + sgn * sum_{j>i} g(t_i, t_j, ...) dt_j,

``Y_i = E_i[xi_i] + sgn * g(t_i, t_i, ..., Y_i) dt_i`` by Picard iteration
and ``theta(t_i, .)`` is the NA derivative of ``xi_i`` on cells ``>= i``.
``sgn`` is ``-1`` for the ``"volterra"`` orientation
``Y = h - int g + int theta dmu`` and ``+1`` for the ``"standard"``
orientation ``Y = h + int g - int theta dmu`` used by the game engine.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .calculus import (NA_BASIS, InformationLevel, Projector, RegressionBasis,
                       na_derivative)
from .errors import InvalidArgument, NoConvergence, NumericalBlowup
from .forward import ForwardPath
from .noise import PathEnsemble

logger = logging.getLogger(__name__)

ORIENTATIONS = {"volterra": -1.0, "standard": 1.0}


@dataclass
class BackwardCoefficients:
    """Driver ``g(t, s, lam, u, x, y, theta)`` and terminal map ``h(x)``.

    ``theta`` reaches the driver as a ``(P, 1 + M)`` array (Brownian mark
    first). Derivative callbacks share the driver's signature;
    ``driver_dtheta`` returns ``(P, 1 + M)`` and ``driver_du`` one column per
    player. ``uses_theta`` tells the solver whether the driver reads
    ``theta`` at all; when it does not, ``theta`` is only estimated on request.
    """

    driver: Optional[Callable] = None
    terminal: Optional[Callable] = None
    driver_dt: Optional[Callable] = None
    driver_dx: Optional[Callable] = None
    driver_dy: Optional[Callable] = None
    driver_dtheta: Optional[Callable] = None
    driver_du: Optional[Callable] = None
    terminal_dx: Optional[Callable] = None
    orientation: str = "volterra"
    uses_theta: bool = False
    depends_on_t: bool = True
    horizon: float = 1.0

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise InvalidArgument(f"orientation must be one of {sorted(ORIENTATIONS)}")

    @property
    def sign(self) -> float:
        return ORIENTATIONS[self.orientation]

    def g(self, t, s, lam, u, x, y, theta):
        if self.driver is None:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(self.driver(t, s, lam, u, x, y, theta), float), x.shape)

    def h(self, x):
        if self.terminal is None:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(self.terminal(x), float), x.shape)


@dataclass
class BsvieSolution:
    Y: np.ndarray                          # (P, N + 1)
    theta: Optional[list] = None           # theta[i] has shape (P, N - i, 1 + M): cells j >= i
    dtheta_dt: Optional[list] = None       # same layout, first-argument differences
    iterations: list = field(default_factory=list)
    defects: list = field(default_factory=list)

    def theta_at(self, i: int, j: int) -> np.ndarray:
        """``theta(t_i, t_j, .)`` for ``j >= i``."""
        if self.theta is None:
            raise InvalidArgument("theta was not estimated for this solution")
        if j < i:
            raise InvalidArgument("theta is stored for s >= t only")
        return self.theta[i][:, j - i]


def _default_level():
    return InformationLevel(flow="G", states=("x",))


def _lam(ensemble, j):
    return np.column_stack([ensemble.lam_B[:, j], ensemble.lam_H[:, j]])


def solve_bsvie(coeffs: BackwardCoefficients, forward: ForwardPath, ensemble: PathEnsemble,
                basis: RegressionBasis = RegressionBasis(), level: Optional[InformationLevel] = None,
                theta: Optional[bool] = None, theta_basis: RegressionBasis = NA_BASIS,
                max_iter: int = 50, tol: float = 1e-8) -> BsvieSolution:
    """Backward induction over time slices with Picard on each slice.

    ``theta=None`` estimates theta only when the driver reads it.
    """
    grid = ensemble.grid
    P, N, K = ensemble.n_paths, grid.N, 1 + ensemble.marks.M
    t, dt = grid.nodes, grid.dt
    level = level or _default_level()
    ens = ensemble.with_states(x=forward.X)
    sgn = coeffs.sign
    want_theta = coeffs.uses_theta if theta is None else theta
    X, U = forward.X, forward.u
    lam = [_lam(ensemble, j) for j in range(N)]
    hT = coeffs.h(X[:, -1])
    if not np.all(np.isfinite(hT)):
        raise NumericalBlowup("terminal value is not finite", cell=N - 1)

    Y = np.empty((P, N + 1))
    Y[:, N] = hT
    thetas = [None] * N
    zero_theta = np.zeros((P, K))
    iterations, defects = [], []
    for i in range(N - 1, -1, -1):
        theta_i = thetas[i + 1] if i + 1 < N and thetas[i + 1] is not None else None

        def slice_target(th):
            acc = hT.copy()
            for j in range(i + 1, N):
                tj = zero_theta if th is None else th[:, j - i]
                acc += sgn * coeffs.g(t[i], t[j], lam[j], U[:, j], X[:, j], Y[:, j], tj) * dt[j]
            return acc

        def fit_theta(xi):
            D = na_derivative(xi, ens, theta_basis, level, cells=range(i, N))
            return sgn * D.values[:, i:, :]

        if theta_i is not None and coeffs.uses_theta:
            # align the previous slice's table (cells > i) with this one (cells >= i)
            theta_i = np.concatenate([theta_i[:, :1], theta_i], axis=1)
        elif coeffs.uses_theta:
            theta_i = np.zeros((P, N - i, K))
        proj = Projector(ens, level, i, basis)
        xi = slice_target(None)
        base = proj(xi)
        y = base.copy()
        history, it = [], 0
        for it in range(1, max_iter + 1):
            th_change = 0.0
            if coeffs.uses_theta:
                xi = slice_target(theta_i)
                base = proj(xi)
                theta_new = fit_theta(xi)
                th_change = float(np.max(np.abs(theta_new - theta_i)))
                theta_i = theta_new
            th_diag = theta_i[:, 0] if coeffs.uses_theta else zero_theta
            y_new = base + sgn * coeffs.g(t[i], t[i], lam[i], U[:, i], X[:, i], y, th_diag) * dt[i]
            if not np.all(np.isfinite(y_new)):
                raise NumericalBlowup("backward value is not finite", cell=i)
            scale = max(1.0, float(np.max(np.abs(y_new))))
            defect = max(float(np.max(np.abs(y_new - y))), th_change) / scale
            y = y_new
            history.append(defect)
            if defect <= tol:
                break
            if len(history) >= 4 and all(history[-k] > history[-k - 1] for k in range(1, 4)):
                raise NoConvergence("backward Picard iteration is not contracting",
                                    {"slice": i, "defects": history})
        else:
            raise NoConvergence("backward Picard iteration hit its cap",
                                {"slice": i, "defects": history})
        Y[:, i] = y
        iterations.append(it)
        defects.append(history[-1] if history else 0.0)
        if want_theta:
            thetas[i] = theta_i if coeffs.uses_theta else fit_theta(xi)
    iterations.reverse()
    defects.reverse()
    sol = BsvieSolution(Y, iterations=iterations, defects=defects)
    if want_theta:
        sol.theta = thetas
        sol.dtheta_dt = _theta_time_derivative(thetas, dt)
    return sol


def _theta_time_derivative(thetas, dt):
    """Differences of ``theta(t_i, s_j)`` in ``t_i``; one-sided at the diagonal."""
    N = len(thetas)
    out = []
    for i in range(N):
        d = np.zeros_like(thetas[i])
        for j in range(i, N):
            if j > i and i + 1 < N:
                d[:, j - i] = (thetas[i + 1][:, j - i - 1] - thetas[i][:, j - i]) / dt[i]
            elif i > 0:
                d[:, 0] = (thetas[i][:, 0] - thetas[i - 1][:, 1]) / dt[i - 1]
        out.append(d)
    return out


# -- adjoint pair (p, q) ----------------------------------------------------

@dataclass
class AdjointTables:
    """Tables the Hamiltonian reads while ``p`` is being built backwards.

    ``p[:, i + 1]`` is the adjoint value paired with cell ``i``. ``Dp[l]`` is
    the NA derivative of ``p(t_l)`` on cells ``< l`` with shape
    ``(P, l, 1 + M)`` (``None`` when not needed).
    """

    p: np.ndarray
    q: np.ndarray
    Dp: Optional[list] = None


@dataclass
class AdjointSolution:
    p: np.ndarray                  # (P, N + 1)
    q: np.ndarray                  # (P, N, 1 + M)
    Dp: Optional[list]
    iterations: int
    defect: float
    defects: list = field(default_factory=list)


def extract_q(next_values, ensemble, proj, j):
    """``q_{j,k} = E_j[(p_{j+1} - E_j p_{j+1}) dmu_{j,k}] / w_{j,k}`` (zero where ``w = 0``)."""
    centered = next_values - proj(next_values)
    dmu, w = ensemble.dmu[:, j, :], ensemble.w[:, j, :]
    qw = proj.design @ proj.coefficients(centered[:, None] * dmu)
    return np.where(w > 0, qw / np.where(w > 0, w, 1.0), 0.0)


def solve_adjoint_p(dH_dx: Callable, terminal, ensemble: PathEnsemble, *,
                    states: Optional[dict] = None, basis: RegressionBasis = RegressionBasis(),
                    level: Optional[InformationLevel] = None, needs_Dp: bool = False,
                    Dp_basis: RegressionBasis = NA_BASIS, max_iter: int = 50,
                    tol: float = 1e-6) -> AdjointSolution:
    """Backward recursion ``p_i = E_i[p_{i+1} + dt_i * dH/dx(i)]``.

    ``dH_dx(i, tables)`` returns the per-path partial on cell ``i``; it may
    read ``tables.p[:, l]`` for ``l > i``, ``tables.q[:, i]`` and, when
    ``needs_Dp``, ``tables.Dp`` from the previous outer iteration.
    ``terminal`` is the per-path value of ``p(T)``. ``states`` are attached to
    the ensemble for the regression features (``x`` by default in the level).
    """
    grid = ensemble.grid
    P, N, K = ensemble.n_paths, grid.N, 1 + ensemble.marks.M
    terminal = np.broadcast_to(np.asarray(terminal, dtype=float), (P,))
    if not np.all(np.isfinite(terminal)):
        raise InvalidArgument("terminal condition of the adjoint is not finite")
    level = level or _default_level()
    ens = ensemble.with_states(**(states or {}))
    projectors = [Projector(ens, level, i, basis) for i in range(N)]
    dt = grid.dt

    tables = AdjointTables(np.zeros((P, N + 1)), np.zeros((P, N, K)),
                           [np.zeros((P, l, K)) for l in range(N + 1)] if needs_Dp else None)
    defects = []
    prev = None
    n_iter = max_iter if needs_Dp else 1
    for it in range(1, n_iter + 1):
        p = tables.p
        p[:, N] = terminal
        for i in range(N - 1, -1, -1):
            proj = projectors[i]
            tables.q[:, i] = extract_q(p[:, i + 1], ens, proj, i)
            drv = np.asarray(dH_dx(i, tables), dtype=float)
            if not np.all(np.isfinite(drv)):
                raise NumericalBlowup("adjoint driver is not finite", cell=i)
            p[:, i] = proj(p[:, i + 1] + dt[i] * drv)
        if not needs_Dp:
            return AdjointSolution(p.copy(), tables.q.copy(), None, 1, 0.0, [0.0])
        if prev is not None:
            scale = max(1.0, float(np.max(np.abs(p))))
            defect = float(np.max(np.abs(p - prev))) / scale
            defects.append(defect)
            if defect <= tol:
                return AdjointSolution(p.copy(), tables.q.copy(), tables.Dp, it, defect, defects)
        prev = p.copy()
        tables.Dp = [np.zeros((P, 0, K))] + [
            na_derivative(p[:, l], ens, Dp_basis, level, cells=range(l)).values[:, :l, :]
            for l in range(1, N + 1)]
    raise NoConvergence("adjoint Picard iteration hit its cap",
                        {"defects": defects, "iterations": n_iter})


# -- forward multiplier z ---------------------------------------------------

@dataclass
class ZProcess:
    z: np.ndarray                  # (P, N + 1)
    nonnegative: bool
    min_value: float


def solve_z(partials: Callable, z0, ensemble: PathEnsemble, tol: float = 0.0) -> ZProcess:
    """Forward Euler for ``dz = dH/dy dt + dH/dtheta_0 dB + sum_k (grad_k H / nu_k) dH~_k``.

    ``partials(i, z_i)`` returns ``(dH_dy, dH_dtheta0, grad_theta)`` per path,
    the last with shape ``(P, M)``. Marks with ``nu_k = 0`` must carry a zero
    gradient, since the density is undefined there.
    """
    grid = ensemble.grid
    P, N, M = ensemble.n_paths, grid.N, ensemble.marks.M
    nu = ensemble.marks.nu
    z = np.empty((P, N + 1))
    z[:, 0] = np.broadcast_to(np.asarray(z0, dtype=float), (P,))
    dB = ensemble.dmu[:, :, 0]
    dH = ensemble.dmu[:, :, 1:]
    for i in range(N):
        dy, d0, grad = partials(i, z[:, i])
        grad = np.broadcast_to(np.asarray(grad, dtype=float), (P, M))
        dens = np.zeros((P, M))
        for k in range(M):
            if nu[k] > 0:
                dens[:, k] = grad[:, k] / nu[k]
            elif np.any(np.abs(grad[:, k]) > tol):
                raise InvalidArgument(f"mark {k + 1} has zero mass but a nonzero gradient")
        z[:, i + 1] = (z[:, i] + np.asarray(dy) * grid.dt[i] + np.asarray(d0) * dB[:, i]
                       + np.einsum("pk,pk->p", dens, dH[:, i]))
        if not np.all(np.isfinite(z[:, i + 1])):
            raise NumericalBlowup("multiplier z is not finite", cell=i)
    zmin = float(z.min())
    if zmin < 0:
        logger.warning("z took negative values (min %.3g)", zmin)
    return ZProcess(z, zmin >= 0, zmin)
