"""Stochastic integrals on the grid, regression-based conditional expectations
and the non-anticipating (NA) derivative.

Conditional expectations are least-squares projections of per-path values on
basis functions of the features an :class:`InformationLevel` exposes at a
cell. The NA derivative of ``xi`` is the predictable integrand in

    xi = E[xi | F^Lambda] + sum_{j,k} D[j, k] * dmu[j, k],

fitted jointly over all cells by block Gauss-Seidel sweeps.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.lapack import dpstrf

from .errors import ContractViolation, IllConditionedRegression, InvalidArgument
from .noise import NoisePath, PathEnsemble

logger = logging.getLogger(__name__)


# -- information levels -----------------------------------------------------

@dataclass(frozen=True)
class InformationLevel:
    """Which observations are available at cell ``j``.

    ``flow="F"`` exposes past noise (cumulative ``mu`` per mark), the elapsed
    clock ``Lambda([0, t_j])`` and the named states at node ``j``. ``flow="G"``
    adds the total clock ``Lambda([0, T])``, i.e. knowledge of the future
    time change. ``extra`` holds ``(name, fn)`` pairs with
    ``fn(ensemble, j) -> (P,)``. ``projection`` keeps only the listed feature
    names (a player's sub-filtration).
    """

    flow: str = "F"
    states: tuple = ()
    noise: bool = True
    clock: bool = True
    extra: tuple = ()
    projection: Optional[tuple] = None

    def __post_init__(self):
        if self.flow not in ("F", "G"):
            raise InvalidArgument(f"flow must be 'F' or 'G', got {self.flow!r}")

    def sub(self, names: Sequence[str]) -> "InformationLevel":
        """Sub-filtration seeing only ``names`` (checked against this level on use)."""
        names = tuple(names)
        if self.projection is not None and not set(names) <= set(self.projection):
            raise ContractViolation(
                f"sub-filtration features {sorted(set(names) - set(self.projection))} "
                "are not visible to the parent level")
        return replace(self, projection=names)

    def enlarged(self) -> "InformationLevel":
        """The same observations plus the whole time-change path."""
        proj = self.projection
        if proj is not None:
            proj = tuple(proj) + ("LB_total", "LH_total")
        return replace(self, flow="G", projection=proj)

    def all_names(self, ensemble: PathEnsemble) -> list:
        names = []
        if self.noise:
            names.append("B")
            names += [f"H{k}" for k in range(1, ensemble.marks.M + 1)]
        if self.clock:
            names += ["LB", "LH"]
        if self.flow == "G":
            names += ["LB_total", "LH_total"]
        names += list(self.states)
        names += [name for name, _ in self.extra]
        return names

    def features(self, ensemble: PathEnsemble, j: int):
        """``(names, array of shape (P, d))`` observable at node ``j``."""
        cols, names = [], []
        if self.noise:
            cum = ensemble.cum_noise[:, j, :]
            names.append("B")
            cols.append(cum[:, 0])
            for k in range(1, ensemble.marks.M + 1):
                names.append(f"H{k}")
                cols.append(cum[:, k])
        if self.clock:
            lam = ensemble.cum_lambda
            names += ["LB", "LH"]
            cols += [lam[:, j, 0], lam[:, j, 1]]
        if self.flow == "G":
            lam = ensemble.cum_lambda
            names += ["LB_total", "LH_total"]
            cols += [lam[:, -1, 0], lam[:, -1, 1]]
        for name in self.states:
            if name not in ensemble.states:
                raise ContractViolation(f"state {name!r} is not attached to the ensemble")
            names.append(name)
            cols.append(ensemble.states[name][:, j])
        for name, fn in self.extra:
            names.append(name)
            cols.append(np.asarray(fn(ensemble, j), dtype=float))
        if self.projection is not None:
            missing = set(self.projection) - set(names)
            if missing:
                raise ContractViolation(
                    f"projected features {sorted(missing)} are not in the parent level")
            keep = [names.index(n) for n in self.projection]
            names = [names[i] for i in keep]
            cols = [cols[i] for i in keep]
        P = ensemble.n_paths
        if not cols:
            return [], np.zeros((P, 0))
        out = np.empty((P, len(cols)))
        for n, c in enumerate(cols):
            out[:, n] = c
        return names, out


LAMBDA_LEVEL = InformationLevel(flow="G", noise=False, clock=False)


# -- regression -------------------------------------------------------------

@dataclass(frozen=True)
class RegressionBasis:
    family: str = "polynomial"
    degree: int = 3
    knots: int = 4
    ridge: float = 1e-8
    min_paths_per_function: int = 10
    drop_collinear: bool = True

    def __post_init__(self):
        if self.family not in ("polynomial", "piecewise-linear"):
            raise InvalidArgument(f"unknown basis family {self.family!r}")
        if self.degree < 0 or self.ridge < 0 or self.knots < 0:
            raise InvalidArgument("basis degree, knots and ridge must be nonnegative")

    def transform(self, features: np.ndarray, weights: np.ndarray) -> "BasisTransform":
        return BasisTransform.fit(self, features, weights)


@dataclass
class BasisTransform:
    """Frozen standardisation plus the list of basis terms."""

    basis: RegressionBasis
    center: np.ndarray
    scale: np.ndarray
    active: np.ndarray
    terms: list
    knots: list = field(default_factory=list)

    @classmethod
    def fit(cls, basis, features, weights):
        features = np.asarray(features, dtype=float)
        if not np.all(np.isfinite(features)):
            raise IllConditionedRegression("non-finite feature values")
        d = features.shape[1]
        if d:
            center = weights @ features
            scale = np.sqrt(weights @ (features - center) ** 2)
            active = scale > 1e-12 * np.maximum(1.0, np.abs(center))
        else:
            center = scale = np.zeros(0)
            active = np.zeros(0, dtype=bool)
        idx = np.flatnonzero(active)
        terms, knots = [()], []
        if basis.family == "polynomial":
            for deg in range(1, basis.degree + 1):
                terms += list(itertools.combinations_with_replacement(idx, deg))
        else:
            z = (features[:, idx] - center[idx]) / np.where(scale[idx] > 0, scale[idx], 1.0) \
                if idx.size else np.zeros((features.shape[0], 0))
            qs = np.linspace(0, 1, basis.knots + 2)[1:-1]
            for pos, i in enumerate(idx):
                terms.append((i,))
                kn = np.quantile(z[:, pos], qs) if basis.knots else np.zeros(0)
                knots.append((i, kn))
        return cls(basis, center, np.where(active, scale, 1.0), active, terms, knots)

    @property
    def dimension(self) -> int:
        return len(self.terms) + sum(len(k) for _, k in self.knots)

    def design(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        P = features.shape[0]
        z = (features - self.center) / self.scale if features.shape[1] else features
        out = np.empty((P, self.dimension), order="F")
        col = 0
        for term in self.terms:
            if not term:
                out[:, col] = 1.0
            elif len(term) == 1:
                out[:, col] = z[:, term[0]]
            else:
                # extend the product of the term's prefix, which precedes it
                np.multiply(out[:, self._prefix[term]], z[:, term[-1]], out=out[:, col])
            col += 1
        for i, kn in self.knots:
            for q in kn:
                np.maximum(z[:, i] - q, 0.0, out=out[:, col])
                col += 1
        return out

    @property
    def _prefix(self) -> dict:
        cache = self.__dict__.get("_prefix_cache")
        if cache is None:
            pos = {term: n for n, term in enumerate(self.terms)}
            cache = {term: pos[term[:-1]] for term in self.terms if len(term) > 1}
            self.__dict__["_prefix_cache"] = cache
        return cache


class LeastSquares:
    """Weighted ridge least squares on a fixed design, reusable across targets."""

    def __init__(self, design: np.ndarray, weights: np.ndarray, basis: RegressionBasis):
        if not np.all(np.isfinite(design)):
            raise IllConditionedRegression("non-finite entries in the design matrix")
        P, L = design.shape
        n_eff = 1.0 / np.sum(weights**2)
        if L * basis.min_paths_per_function > n_eff + 1e-9:
            raise IllConditionedRegression(
                f"basis dimension {L} too large for {P} paths "
                f"(needs {basis.min_paths_per_function} paths per function)")
        self.weights = weights
        gram = design.T @ (design * weights[:, None])
        keep = np.arange(L)
        if L > 1:
            diag = np.diag(gram).max()
            if diag <= 0:
                raise IllConditionedRegression("design matrix is identically zero")
            work = np.array(gram, order="F", copy=True)
            _, piv, rank, info = dpstrf(work, lower=0, tol=1e-11 * diag)
            if rank < L:
                if not basis.drop_collinear and basis.ridge == 0:
                    raise IllConditionedRegression(
                        f"rank-deficient design ({rank} of {L} columns independent)")
                if basis.drop_collinear:
                    keep = np.sort(piv[:rank] - 1)
        self.keep = keep
        self.L = L
        # the intercept (column 0) is not penalised, so constants are reproduced exactly
        pen = np.ones(keep.size)
        pen[keep == 0] = 0.0
        g = gram[np.ix_(keep, keep)] + basis.ridge * np.diag(pen)
        try:
            self._cho = cho_factor(g)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedRegression(f"regression normal matrix not positive definite: {exc}")

    def coefficients(self, design: np.ndarray, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise IllConditionedRegression("non-finite regression target")
        A = design[:, self.keep]
        wy = self.weights[:, None] * y if y.ndim == 2 else self.weights * y
        c = cho_solve(self._cho, A.T @ wy)
        r = y - A @ c
        wr = self.weights[:, None] * r if y.ndim == 2 else self.weights * r
        c = c + cho_solve(self._cho, A.T @ wr)
        full = np.zeros((self.L,) + c.shape[1:])
        full[self.keep] = c
        return full


class Projector:
    """Conditional expectation onto one level at one cell."""

    def __init__(self, ensemble: PathEnsemble, level: InformationLevel, j: int,
                 basis: RegressionBasis):
        self.names, feats = level.features(ensemble, j)
        self.transform = basis.transform(feats, ensemble.weights)
        self.design = self.transform.design(feats)
        self.solver = LeastSquares(self.design, ensemble.weights, basis)

    def coefficients(self, y):
        return self.solver.coefficients(self.design, y)

    def __call__(self, y):
        return self.design @ self.coefficients(y)


def conditional_expectation(xi, level: InformationLevel, j: int, basis: RegressionBasis,
                            ensemble: PathEnsemble) -> np.ndarray:
    """Least-squares estimate of ``E[xi | level at t_j]`` per path."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[0] != ensemble.n_paths:
        raise InvalidArgument("xi must have one value per path")
    return Projector(ensemble, level, j, basis)(xi)


# -- integrands and integrals ---------------------------------------------

class _PredictableView:
    """What an integrand may read when producing its value on cell ``j``."""

    def __init__(self, ensemble: PathEnsemble, j: int, tag: str):
        self._ens = ensemble
        self.j = j
        self.tag = tag
        self.t = ensemble.grid.nodes[j]

    def noise(self, cell: int) -> np.ndarray:
        if cell >= self.j:
            raise ContractViolation(
                f"integrand on cell {self.j} reads noise of cell {cell}")
        return self._ens.dmu[:, cell, :]

    def cumulative_noise(self) -> np.ndarray:
        return self._ens.cum_noise[:, self.j, :]

    def intensity(self, cell: int) -> np.ndarray:
        if self.tag == "F" and cell > self.j:
            raise ContractViolation(
                f"F-predictable integrand on cell {self.j} reads intensity of cell {cell}")
        return np.stack([self._ens.lam_B[:, cell], self._ens.lam_H[:, cell]], axis=1)

    def state(self, name: str, node: int) -> np.ndarray:
        if node > self.j:
            raise ContractViolation(f"integrand on cell {self.j} reads {name} at node {node}")
        return self._ens.states[name][:, node]


@dataclass
class IntegrandField:
    """Values per (path, cell, mark) with mark 0 the Brownian component.

    ``values`` may be ``(N, 1+M)`` for deterministic fields; it is broadcast
    against the ensemble on use.
    """

    values: np.ndarray
    tag: str = "G"

    def __post_init__(self):
        if self.tag not in ("F", "G"):
            raise InvalidArgument("adaptedness tag must be 'F' or 'G'")
        self.values = np.asarray(self.values, dtype=float)

    @classmethod
    def from_callable(cls, fn: Callable, ensemble: PathEnsemble, tag: str = "F"):
        """Build a field cell by cell; ``fn(view)`` may only read predictable data."""
        N, K = ensemble.grid.N, 1 + ensemble.marks.M
        out = np.empty((ensemble.n_paths, N, K))
        for j in range(N):
            out[:, j, :] = np.broadcast_to(fn(_PredictableView(ensemble, j, tag)), (ensemble.n_paths, K))
        return cls(out, tag)

    def broadcast(self, shape) -> np.ndarray:
        try:
            return np.broadcast_to(self.values, shape)
        except ValueError:
            raise InvalidArgument(
                f"integrand of shape {self.values.shape} does not match {shape}") from None


def ito_integral(phi: IntegrandField, noise) -> np.ndarray:
    """``sum_j phi[j,0] dB_j + sum_{j,k} phi[j,k] dH_jk`` per path."""
    dmu = noise.dmu if isinstance(noise, (NoisePath, PathEnsemble)) else np.asarray(noise)
    vals = phi.broadcast(dmu.shape)
    return np.einsum("pjk,pjk->p", vals, dmu)


def lambda_integral(psi: IntegrandField, weights) -> np.ndarray:
    """``sum_{j,k} psi[j,k] w[j,k]`` per path."""
    w = weights.w if isinstance(weights, PathEnsemble) else np.asarray(weights)
    vals = psi.broadcast(w.shape)
    return np.einsum("pjk,pjk->p", vals, w)


# -- NA derivative ----------------------------------------------------------

@dataclass
class NaDerivativeField:
    values: np.ndarray          # (P, N, 1+M)
    xi0: np.ndarray             # E[xi | F^Lambda] per path
    residual: np.ndarray        # xi - xi0 - reconstructed integral
    r2: float
    unexplained: float
    sweeps: int
    mean_stderr: Optional[np.ndarray] = None   # (N, 1+M) standard error of the path mean

    def integral(self, ensemble: PathEnsemble) -> np.ndarray:
        return np.einsum("pjk,pjk->p", self.values, ensemble.dmu)


def _cell_design(ensemble, level, transform, j, active):
    _, feats = level.features(ensemble, j)
    A = transform.design(feats)
    return A, np.concatenate([A * ensemble.dmu[:, j, k][:, None] for k in active], axis=1)


NA_BASIS = RegressionBasis(degree=1)


def na_derivative(xi, ensemble: PathEnsemble, basis: RegressionBasis = NA_BASIS,
                  level: Optional[InformationLevel] = None, cells=None,
                  max_sweeps: int = 12, tol: float = 1e-10,
                  lambda_basis: RegressionBasis = RegressionBasis()) -> NaDerivativeField:
    """Estimate the NA derivative of ``xi`` by martingale-representation regression.

    ``level`` sets the predictable features per cell (default: the G flow
    with no states). ``cells`` restricts the representation to a subset of
    cells, e.g. ``range(i)`` for an ``F_{t_i}``-measurable ``xi``.

    The per-cell basis is affine by default: one copy per cell and mark
    adds up quickly, and higher degrees overfit at desk-scale ensembles.
    ``lambda_basis`` is used for the clock-measurable part ``E[xi | F^Lambda]``,
    which only sees the two clock totals and can afford a richer basis.
    """
    xi = np.asarray(xi, dtype=float)
    P, N, K = ensemble.dmu.shape
    if xi.shape != (P,):
        raise InvalidArgument("xi must have one value per path")
    if not np.all(np.isfinite(xi)):
        raise IllConditionedRegression("xi has non-finite values")
    level = level or InformationLevel(flow="G")
    cells = list(range(N)) if cells is None else list(cells)

    xi0 = Projector(ensemble, LAMBDA_LEVEL, 0, lambda_basis)(xi)
    r = xi - xi0
    values = np.zeros((P, N, K))

    blocks = {}
    for j in cells:
        active = [k for k in range(K) if np.any(ensemble.w[:, j, k] > 0)]
        if not active:
            continue
        _, feats = level.features(ensemble, j)
        tr = basis.transform(feats, ensemble.weights)
        # the per-cell block has one copy of the basis per active mark
        block_basis = replace(basis, min_paths_per_function=max(
            1, -(-basis.min_paths_per_function // len(active))))
        _, D = _cell_design(ensemble, level, tr, j, active)
        blocks[j] = (active, tr, LeastSquares(D, ensemble.weights, block_basis))

    fits = {j: np.zeros(P) for j in blocks}
    total = r.copy()
    scale = np.sqrt(ensemble.mean(r**2)) + 1e-300
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for j, (active, tr, solver) in blocks.items():
            A, D = _cell_design(ensemble, level, tr, j, active)
            target = total + fits[j]
            c = solver.coefficients(D, target)
            new_fit = D @ c
            change = max(change, float(np.sqrt(ensemble.mean((new_fit - fits[j]) ** 2))))
            total = target - new_fit
            fits[j] = new_fit
            L = A.shape[1]
            for pos, k in enumerate(active):
                values[:, j, k] = A @ c[pos * L:(pos + 1) * L]
        if change <= tol * scale:
            break
    var_r = ensemble.mean((r - ensemble.mean(r)) ** 2)
    unexplained = float(ensemble.mean(total**2) / var_r) if var_r > 0 else 0.0
    se = np.zeros((N, K))
    for j, (active, tr, solver) in blocks.items():
        A, D = _cell_design(ensemble, level, tr, j, active)
        se[j, active] = _mean_stderr(A, D, total, ensemble.weights, solver)
    return NaDerivativeField(values, xi0, total, 1.0 - unexplained, unexplained, sweep, se)


def _mean_stderr(A, D, resid, weights, solver):
    # sandwich covariance of the block coefficients, pushed through the path mean
    keep = solver.keep
    Dk = D[:, keep] * (weights * resid)[:, None]
    meat = Dk.T @ Dk
    bread = cho_solve(solver._cho, np.eye(keep.size))
    cov = np.zeros((solver.L, solver.L))
    cov[np.ix_(keep, keep)] = bread @ meat @ bread
    L = A.shape[1]
    abar = weights @ A
    out = []
    for pos in range(D.shape[1] // L):
        c = cov[pos * L:(pos + 1) * L, pos * L:(pos + 1) * L]
        out.append(np.sqrt(max(float(abar @ c @ abar), 0.0)))
    return out


@dataclass
class DualityResult:
    lhs: float
    rhs: float
    gap: float
    stderr: float

    @property
    def within(self) -> float:
        """Gap in units of its standard error (0 when both are zero)."""
        if self.stderr == 0:
            return 0.0 if self.gap == 0 else np.inf
        return abs(self.gap) / self.stderr


def duality_check(xi, phi: IntegrandField, ensemble: PathEnsemble,
                  basis: RegressionBasis = NA_BASIS,
                  level: Optional[InformationLevel] = None,
                  lambda_basis: RegressionBasis = RegressionBasis()) -> DualityResult:
    """Compare ``E[xi * int phi dmu]`` with ``E[int phi * D xi dLambda]``."""
    if phi.tag != "G" and phi.tag != "F":
        raise ContractViolation("duality needs a predictable integrand")
    xi = np.asarray(xi, dtype=float)
    D = na_derivative(xi, ensemble, basis, level, lambda_basis=lambda_basis)
    left = xi * ito_integral(phi, ensemble)
    right = np.einsum("pjk,pjk->p", phi.broadcast(ensemble.w.shape) * D.values, ensemble.w)
    lhs = float(ensemble.mean(left))
    rhs = float(ensemble.mean(right))
    return DualityResult(lhs, rhs, lhs - rhs, ensemble.stderr(left - right))
