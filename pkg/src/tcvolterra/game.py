"""Two-player games: performance estimates, maximum-principle residuals,
perturbation derivatives, Nash search and sufficient-condition probes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .backward import (AdjointSolution, BackwardCoefficients, BsvieSolution, ZProcess,
                       solve_adjoint_p, solve_bsvie, solve_z)
from .calculus import InformationLevel, LeastSquares, RegressionBasis
from .errors import InvalidArgument, NoConvergence, NumericalBlowup
from .forward import ControlProcess, ForwardCoefficients, ForwardPath, solve_fsvie
from .hamiltonian import (PlayerSpec, build_context, density, eval_H, partial)
from .noise import MarkSet, PathEnsemble, TimeChangeModel, TimeGrid, simulate_ensemble

logger = logging.getLogger(__name__)


@dataclass
class GameScenario:
    """Forward dynamics, one :class:`PlayerSpec` per player and solver settings.

    ``solver_level`` and ``basis`` drive the regressions inside the backward
    and adjoint solvers; each player's own information is ``PlayerSpec.level``.
    ``active`` marks which players control something.
    """

    name: str
    grid: TimeGrid
    marks: MarkSet
    model: TimeChangeModel
    x0: float
    forward: ForwardCoefficients
    players: tuple
    solver_level: InformationLevel = field(
        default_factory=lambda: InformationLevel(flow="G", states=("x",)))
    basis: RegressionBasis = field(default_factory=lambda: RegressionBasis(degree=2))
    control_degree: int = 1
    initial: tuple = (0.0, 0.0)
    active: tuple = (True, True)
    zero_sum: bool = False
    scheme: str = "callback"
    notes: dict = field(default_factory=dict)

    def ensemble(self, n_paths: int, seed: int, workers: int = 1) -> PathEnsemble:
        return simulate_ensemble(self.model, self.grid, self.marks, n_paths, seed, workers)

    def initial_controls(self, values=None) -> tuple:
        values = self.initial if values is None else values
        out = []
        for k, spec in enumerate(self.players):
            if not self.active[k]:
                out.append(None)
                continue
            out.append(ControlProcess(k, spec.level, self.grid.N, value=values[k],
                                      box=spec.box, degree=self.control_degree))
        return tuple(out)

    def check(self, y0_samples=None):
        """Monitor the nonnegativity assumption on ``psi`` over sampled values."""
        if y0_samples is None:
            return True
        return all(np.all(sp.initial_risk(np.asarray(y0_samples)) >= 0) or sp.psi is None
                   for sp in self.players)


@dataclass
class PlayerState:
    bsvie: BsvieSolution
    z: ZProcess
    adjoint: Optional[AdjointSolution] = None


@dataclass
class GameState:
    """Solved forward path plus per-player backward, multiplier and adjoint tables."""

    forward: ForwardPath
    players: list
    ensemble: PathEnsemble

    def context(self, scenario, k, i):
        ps = self.players[k]
        adj = ps.adjoint
        P, N, K = self.ensemble.n_paths, scenario.grid.N, 1 + scenario.marks.M
        p_table = adj.p if adj is not None else np.zeros((P, N + 1))
        q = adj.q if adj is not None else np.zeros((P, N, K))
        return build_context(i, self.ensemble, self.forward, k, y=ps.bsvie.Y, z_table=ps.z.z,
                             p_table=p_table, q=q, Dp=adj.Dp if adj is not None else None,
                             theta=ps.bsvie.theta, dtheta=ps.bsvie.dtheta_dt)


def _needs_Dp(fc: ForwardCoefficients) -> bool:
    return fc.diffusion_depends_on_t and fc.diffusion is not None


def _solve_player(scenario, k, forward, ensemble, adjoints):
    spec: PlayerSpec = scenario.players[k]
    bw = spec.backward
    grid = scenario.grid
    P, N, K = ensemble.n_paths, grid.N, 1 + scenario.marks.M
    ens = ensemble.with_states(x=forward.X)
    if bw.driver is None and bw.terminal is None:
        bs = BsvieSolution(np.zeros((P, N + 1)))
    else:
        bs = solve_bsvie(bw, forward, ens, scenario.basis, scenario.solver_level)
    z0 = spec.dpsi(bs.Y[:, 0])
    if bw.driver is None:
        zp = ZProcess(np.repeat(np.broadcast_to(z0, (P,))[:, None], N + 1, axis=1),
                      bool(np.all(z0 >= 0)), float(np.min(z0)))
    else:
        z_table = np.zeros((P, N + 1))
        # forward coefficients do not read y, so the adjoint tables only
        # need the right shapes here
        zero_p, zero_q = np.zeros((P, N + 1)), np.zeros((P, N, K))
        zero_Dp = [np.zeros((P, l, K)) for l in range(N + 1)] \
            if _needs_Dp(scenario.forward) else None

        def z_partials(i, z_i):
            z_table[:, i] = z_i
            ctx = build_context(i, ens, forward, k, y=bs.Y, z_table=z_table, p_table=zero_p,
                                q=zero_q, Dp=zero_Dp, theta=bs.theta, dtheta=bs.dtheta_dt)
            dy = partial(ctx, spec, scenario.forward, "y", scheme=scenario.scheme)
            grads = [partial(ctx, spec, scenario.forward, "theta", m, scenario.scheme)
                     for m in range(K)] if bw.uses_theta else [np.zeros(P)] * K
            return dy, grads[0], np.column_stack(grads[1:]) if K > 1 else np.zeros((P, 0))

        zp = solve_z(z_partials, z0, ens)
    state = PlayerState(bs, zp)
    if adjoints:
        terminal = spec.adjoint_terminal(forward.X[:, -1], zp.z[:, -1])

        def dH_dx(i, tables):
            ctx = build_context(i, ens, forward, k, y=bs.Y, z_table=zp.z, p_table=tables.p,
                                q=tables.q, Dp=tables.Dp, theta=bs.theta, dtheta=bs.dtheta_dt)
            return partial(ctx, spec, scenario.forward, "x", scheme=scenario.scheme)

        state.adjoint = solve_adjoint_p(dH_dx, terminal, ens, states={"x": forward.X},
                                        basis=scenario.basis, level=scenario.solver_level,
                                        needs_Dp=_needs_Dp(scenario.forward))
    return state


def _negated(state: PlayerState) -> PlayerState:
    adj = state.adjoint
    neg_adj = None
    if adj is not None:
        neg_adj = replace(adj, p=-adj.p, q=-adj.q,
                          Dp=None if adj.Dp is None else [-d for d in adj.Dp])
    z = state.z
    return PlayerState(state.bsvie, ZProcess(-z.z, bool(np.all(-z.z >= 0)), float((-z.z).min())),
                       neg_adj)


def solve_game(scenario: GameScenario, controls, ensemble: PathEnsemble,
               adjoints: bool = True) -> GameState:
    """Forward solve, then backward value, multiplier and adjoint for each player."""
    fwd = solve_fsvie(scenario.forward, controls, ensemble, scenario.x0)
    if scenario.zero_sum:
        first = _solve_player(scenario, 0, fwd, ensemble, adjoints)
        players = [first, _negated(first)]
    else:
        # an inactive player's adjoint never enters a residual
        players = [_solve_player(scenario, k, fwd, ensemble, adjoints and scenario.active[k])
                   for k in range(2)]
    return GameState(fwd, players, ensemble)


# -- performance ------------------------------------------------------------

@dataclass
class Performance:
    J: np.ndarray          # (2,)
    stderr: np.ndarray     # (2,)
    per_path: np.ndarray   # (P, 2)


def _performance_paths(scenario, state: GameState) -> np.ndarray:
    grid = scenario.grid
    X, U = state.forward.X, state.forward.u
    out = []
    for k, spec in enumerate(scenario.players):
        if scenario.zero_sum and k == 1:
            out.append(-out[0])
            continue
        Y = state.players[k].bsvie.Y
        acc = np.zeros(X.shape[0])
        for j in range(grid.N):
            acc = acc + spec.f(grid.nodes[j], U[:, j], X[:, j], Y[:, j]) * grid.dt[j]
        acc = acc + spec.terminal_reward(X[:, -1]) + spec.initial_risk(Y[:, 0])
        out.append(acc)
    vals = np.column_stack(out)
    if not np.all(np.isfinite(vals)):
        raise NumericalBlowup("performance functional is not finite")
    return vals


def estimate_performance(scenario: GameScenario, controls, ensemble: PathEnsemble,
                         state: Optional[GameState] = None) -> Performance:
    """Monte Carlo ``E[sum F dt + phi(X_T) + psi(Y(0))]`` for both players."""
    if state is None:
        state = solve_game(scenario, controls, ensemble, adjoints=False)
    vals = _performance_paths(scenario, state)
    J = np.array([ensemble.mean(vals[:, k]) for k in range(2)])
    se = np.array([ensemble.stderr(vals[:, k]) for k in range(2)])
    return Performance(J, se, vals)


# -- residuals --------------------------------------------------------------

@dataclass
class Residual:
    gradient: np.ndarray   # (P, N) raw dH/du
    values: np.ndarray     # (P, N) projection on the player's features
    profile: np.ndarray    # (N,) |path mean of R| per cell
    norm: float
    projected_profile: Optional[np.ndarray] = None
    projected_norm: float = 0.0


def hamiltonian_gradient(scenario, state: GameState, player: int) -> np.ndarray:
    """``dH_k/du_k`` per path and cell."""
    N = scenario.grid.N
    spec = scenario.players[player]
    cols = []
    for i in range(N):
        ctx = state.context(scenario, player, i)
        cols.append(partial(ctx, spec, scenario.forward, "u", player, scenario.scheme))
    return np.column_stack(cols)


def _project_on_control(control: ControlProcess, ens, values):
    out = np.empty_like(values)
    for j in range(values.shape[1]):
        A = control.design(ens, j)
        solver = LeastSquares(A, ens.weights, control.basis)
        out[:, j] = A @ solver.coefficients(A, values[:, j])
    return out


def necessary_residual(scenario: GameScenario, controls, player: int, ensemble: PathEnsemble,
                       state: Optional[GameState] = None) -> Residual:
    """``R_k(t) = E[dH_k/du_k | player k's features]`` per cell."""
    if state is None:
        state = solve_game(scenario, controls, ensemble)
    grad = hamiltonian_gradient(scenario, state, player)
    ctl = controls[player]
    ens = ensemble.with_states(x=state.forward.X)
    if ctl is None:
        ctl = ControlProcess(player, scenario.players[player].level, scenario.grid.N,
                             degree=scenario.control_degree)
    R = _project_on_control(ctl, ens, grad)
    profile = np.abs(ensemble.mean(R))
    # at the box boundary only the inward part of R counts (projected gradient)
    u = state.forward.u[:, :, player]
    lo, hi = ctl.box
    # refits reproduce a clipped bound only up to rounding
    slack = [1e-9 * max(1.0, abs(b)) if math.isfinite(b) else 0.0 for b in (lo, hi)]
    lo_in, hi_in = lo + slack[0], hi - slack[1]
    R_in = np.where((u >= hi_in) & (R > 0) | (u <= lo_in) & (R < 0), 0.0, R)
    proj = np.abs(ensemble.mean(R_in))
    return Residual(grad, R, profile, float(profile.max()), proj, float(proj.max()))


# -- perturbations ----------------------------------------------------------

@dataclass
class PerturbationSpec:
    """``beta = alpha * 1_window`` for one player.

    ``alpha`` holds coefficients over the player's control basis at the
    window's first cell (measurable at the window start). ``eps`` defaults to
    ``1e-4`` times the box width (``1e-4`` for unbounded boxes).
    """

    player: int
    start: int
    length: int
    alpha: np.ndarray
    eps: Optional[float] = None
    bound: float = 10.0

    def cells(self, N):
        if self.start < 0 or self.length < 1 or self.start + self.length > N:
            raise InvalidArgument("perturbation window must lie inside the grid")
        return range(self.start, self.start + self.length)


def _eps_for(spec: PerturbationSpec, box):
    if spec.eps is not None:
        return spec.eps
    width = box[1] - box[0]
    return 1e-4 * (width if np.isfinite(width) else 1.0)


def perturbation_derivative(scenario: GameScenario, controls, spec: PerturbationSpec,
                            ensemble: PathEnsemble) -> float:
    """Central difference of ``J_k(u + eps beta)`` with common random numbers."""
    k = spec.player
    ctl = controls[k]
    if ctl is None:
        return 0.0
    alpha = np.asarray(spec.alpha, dtype=float)
    if not np.any(alpha):
        return 0.0
    cells = spec.cells(scenario.grid.N)
    eps = _eps_for(spec, ctl.box)
    # bind the control's feature maps on the unperturbed path first
    solve_fsvie(scenario.forward, controls, ensemble, scenario.x0)
    Js = []
    for sgn in (1.0, -1.0):
        pert = list(controls)
        pert[k] = ctl.perturbed(cells, alpha, sgn * eps)
        perf = estimate_performance(scenario, tuple(pert), ensemble)
        Js.append(perf.J[k])
    return float((Js[0] - Js[1]) / (2 * eps))


def residual_prediction(scenario: GameScenario, controls, spec: PerturbationSpec,
                        ensemble: PathEnsemble, state: Optional[GameState] = None) -> float:
    """``sum_window E[dH_k/du_k * alpha] dt``, the first-order change the
    maximum principle predicts for the perturbation."""
    if state is None:
        state = solve_game(scenario, controls, ensemble)
    k = spec.player
    ctl = controls[k]
    if ctl is None:
        return 0.0
    ens = ensemble.with_states(x=state.forward.X)
    alpha_vals = ctl.design(ens, spec.start) @ np.asarray(spec.alpha, dtype=float)
    grad = hamiltonian_gradient(scenario, state, k)
    return float(sum(ensemble.mean(grad[:, j] * alpha_vals) * scenario.grid.dt[j]
                     for j in spec.cells(scenario.grid.N)))


# -- Nash search ------------------------------------------------------------

@dataclass
class NashCandidate:
    controls: tuple
    residual_profiles: list
    residual_norms: list
    performance: Performance
    trace: list
    converged: bool
    iterations: int
    sufficient: Optional[dict] = None


def _curvature(scenario, state, player):
    """Diagonal second derivative of ``H`` in the player's control (central difference)."""
    N = scenario.grid.N
    spec = scenario.players[player]
    cols = []
    for i in range(N):
        ctx = state.context(scenario, player, i)
        u = ctx.u[:, player]
        h = max(1e-4 * float(np.max(np.abs(u))), 1e-4)
        up, dn = ctx.u.copy(), ctx.u.copy()
        up[:, player] += h
        dn[:, player] -= h
        gp = partial(ctx.with_values(u=up), spec, scenario.forward, "u", player, scenario.scheme)
        gm = partial(ctx.with_values(u=dn), spec, scenario.forward, "u", player, scenario.scheme)
        cols.append((gp - gm) / (2 * h))
    return np.column_stack(cols)


def find_nash(scenario: GameScenario, controls, ensemble: PathEnsemble, step: float = 0.5,
              max_iter: int = 100, tol: float = 1e-6, newton: bool = False,
              raise_on_failure: bool = False) -> NashCandidate:
    """Alternating projected residual ascent ``u_k <- clip(u_k + step R_k)``.

    Convergence is judged on the projected residual: on cells where the
    control sits at a bound and ``R`` points out of the box, ``R`` counts as 0.

    ``newton=True`` divides each residual by the magnitude of the diagonal
    curvature of ``H`` in the control (a Newton-like preconditioner for
    strongly curved Hamiltonians). A player's step is halved whenever its
    residual norm grows, which damps the oscillation left when the
    preconditioner misses part of the curvature.
    """
    controls = list(controls)
    steps = [step, step]
    previous = [np.inf, np.inf]
    trace = []
    norms = [0.0, 0.0]
    profiles = [np.zeros(scenario.grid.N)] * 2
    converged = False
    it = 0
    state = solve_game(scenario, tuple(controls), ensemble)
    for it in range(0, max_iter + 1):
        fresh = {}
        for k in range(2):
            if controls[k] is None:
                norms[k] = 0.0
                continue
            res = fresh[k] = necessary_residual(scenario, tuple(controls), k, ensemble, state)
            norms[k], profiles[k] = res.projected_norm, res.projected_profile
            if norms[k] > previous[k]:
                steps[k] *= 0.5
            previous[k] = norms[k]
        perf = estimate_performance(scenario, tuple(controls), ensemble, state)
        trace.append({"iteration": it, "residual_norms": list(map(float, norms)),
                      "J": perf.J.tolist()})
        if max(norms) <= tol:
            converged = True
            break
        if it == max_iter:
            break
        for k in range(2):
            if controls[k] is None:
                continue
            # residuals computed before this sweep are stale once a player moved
            res = fresh.pop(k) if k in fresh else \
                necessary_residual(scenario, tuple(controls), k, ensemble, state)
            direction = res.values
            if newton:
                curv = _curvature(scenario, state, k)
                ens = ensemble.with_states(x=state.forward.X)
                curv = _project_on_control(controls[k], ens, np.abs(curv))
                direction = direction / np.maximum(curv, 1e-12)
            ens = ensemble.with_states(x=state.forward.X)
            target = np.clip(state.forward.u[:, :, k] + steps[k] * direction, *controls[k].box)
            controls[k] = controls[k].refit(ens, target)
            state = solve_game(scenario, tuple(controls), ensemble)
            fresh.clear()
    perf = estimate_performance(scenario, tuple(controls), ensemble, state)
    cand = NashCandidate(tuple(controls), [p.tolist() for p in profiles], list(norms), perf,
                         trace, converged, it)
    if not converged:
        logger.warning("find_nash stopped after %d iterations with residual %.3g", it, max(norms))
        if raise_on_failure:
            raise NoConvergence("Nash search did not reach its tolerance",
                                {"trace": trace, "candidate": cand})
    return cand


# -- sufficient conditions --------------------------------------------------

def _random_deviation(ctl: ControlProcess, rng, scale):
    """A random admissible control with the same feature basis."""
    out = ctl.copy()
    lo, hi = ctl.box
    if np.isfinite(lo) and np.isfinite(hi):
        vals = rng.uniform(lo, hi, size=ctl.N)
        out.coef = np.zeros_like(ctl.coef)
        out.coef[:, 0] = vals
    else:
        out.coef = ctl.coef + rng.normal(0.0, scale, size=ctl.coef.shape) * \
            (np.arange(ctl.coef.shape[1]) == 0)
    return out


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _maximise(fn, grid_u, iters: int = 60):
    """Per-path maximum of ``fn(v)`` over ``[grid_u[0], grid_u[-1]]``.

    The best grid point is refined by golden-section search between its
    neighbours. A plain grid maximum of functions concave in the state is
    not concave itself, which would make the arrow probe fire spuriously.
    """
    vals = np.stack([fn(v) for v in grid_u])
    best = vals.max(axis=0)
    if grid_u.size < 2:
        return best
    idx = vals.argmax(axis=0)
    a = grid_u[np.maximum(idx - 1, 0)]
    b = grid_u[np.minimum(idx + 1, grid_u.size - 1)]
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
        fc, fd = fn(c), fn(d)
    return np.maximum(best, np.maximum(fc, fd))


def _midpoint_violations(fn, a, b, tol):
    mid = fn(0.5 * (a + b))
    gap = 0.5 * (fn(a) + fn(b)) - mid
    return int(np.sum(gap > tol)), float(np.max(gap)) if gap.size else 0.0


def sufficient_check(scenario: GameScenario, candidate: NashCandidate, ensemble: PathEnsemble,
                     probes: int = 8, seed: int = 0, tol: float = 1e-8) -> dict:
    """Falsification probes for the sufficient maximum principle.

    (a) the conditional Hamiltonian at the candidate beats random admissible
    alternatives up to two standard errors, cell by cell; (b) midpoint
    concavity of the maximised Hamiltonian in ``(x, y)``; (c) midpoint
    concavity of ``h``, ``phi`` and ``psi`` on the sampled range.
    """
    rng = np.random.default_rng(seed)
    controls = candidate.controls
    state = solve_game(scenario, controls, ensemble)
    N = scenario.grid.N
    report = {"conditional_max": [], "arrow": [], "concavity": {}}
    X = state.forward.X
    for k in range(2):
        ctl = controls[k]
        if ctl is None:
            continue
        spec = scenario.players[k]
        viol, worst, checked = 0, -np.inf, 0
        u_hat = state.forward.u[:, :, k]
        scale = max(1.0, float(np.std(u_hat)))
        for _ in range(probes):
            alt = rng.uniform(*spec.box, size=N) if np.all(np.isfinite(spec.box)) \
                else u_hat.mean(axis=0) + rng.normal(0, scale, size=N)
            for i in range(N):
                ctx = state.context(scenario, k, i)
                u_alt = ctx.u.copy()
                u_alt[:, k] = alt[i]
                diff = eval_H(ctx.with_values(u=u_alt), spec, scenario.forward) - \
                    eval_H(ctx, spec, scenario.forward)
                m, se = ensemble.mean(diff), ensemble.stderr(diff)
                margin = float(m - 2 * se)
                checked += 1
                worst = max(worst, margin)
                if margin > tol * max(1.0, float(np.max(np.abs(diff)))):
                    viol += 1
        report["conditional_max"].append({"player": k, "violations": viol, "checked": checked,
                                          "worst_margin": worst})
        # arrow condition: h^(x, y) = max over a control grid, probed along random segments
        grid_u = np.unique(np.concatenate([u_hat.ravel()[:: max(1, u_hat.size // 16)],
                                           rng.uniform(*(spec.box if np.all(np.isfinite(spec.box))
                                                         else (u_hat.min() - scale, u_hat.max() + scale)),
                                                       size=16)]))
        a_viol, a_worst = 0, -np.inf
        for _ in range(probes):
            i = int(rng.integers(0, N))
            ctx = state.context(scenario, k, i)
            perm = rng.permutation(X.shape[0])

            def h_hat(xy):
                def H_at(v):
                    u = ctx.u.copy()
                    u[:, k] = v
                    return eval_H(ctx.with_values(x=xy[0], y=xy[1], u=u), spec, scenario.forward)
                return _maximise(H_at, grid_u)

            a = np.stack([ctx.x, ctx.y])
            b = np.stack([ctx.x[perm], ctx.y[perm]])
            mid = h_hat(0.5 * (a + b))
            gap = 0.5 * (h_hat(a) + h_hat(b)) - mid
            thr = tol * max(1.0, float(np.max(np.abs(mid))))
            a_viol += int(np.sum(gap > thr))
            a_worst = max(a_worst, float(gap.max()))
        report["arrow"].append({"player": k, "violations": a_viol, "worst_gap": a_worst})
    # concavity of h, phi, psi on the sampled range
    xs = X[:, -1]
    perm = rng.permutation(xs.size)
    for k, spec in enumerate(scenario.players):
        y0 = state.players[k].bsvie.Y[:, 0]
        entries = {}
        for name, fn, sample in (("phi", spec.terminal_reward, xs), ("h", spec.backward.h, xs),
                                 ("psi", spec.initial_risk, y0)):
            lo, hi = float(sample.min()), float(sample.max())
            if hi - lo < 1e-12:
                lo, hi = lo - 1.0, hi + 1.0
            pts = rng.uniform(lo, hi, size=(2, 4 * probes))
            thr = tol * max(1.0, float(np.max(np.abs(fn(pts[0])))))
            v, worst = _midpoint_violations(fn, pts[0], pts[1], thr)
            entries[name] = {"violations": v, "worst_gap": worst}
        report["concavity"][f"player{k + 1}"] = entries
    report["violations"] = (sum(r["violations"] for r in report["conditional_max"])
                            + sum(r["violations"] for r in report["arrow"])
                            + sum(e["violations"] for p in report["concavity"].values()
                                  for e in p.values()))
    return report


# -- zero-sum games ---------------------------------------------------------

def _neg(fn):
    if fn is None:
        return None
    return lambda *a, **kw: -np.asarray(fn(*a, **kw), dtype=float)


def zero_sum_build(name: str, grid: TimeGrid, marks: MarkSet, model: TimeChangeModel, x0: float,
                   forward: ForwardCoefficients, F=None, phi=None, psi=None,
                   backward: Optional[BackwardCoefficients] = None,
                   levels=(InformationLevel(), InformationLevel()),
                   boxes=((-np.inf, np.inf), (-np.inf, np.inf)), terminal_preset="gradient",
                   partials1: Optional[dict] = None, phi_dx=None, psi_dy=None,
                   **kw) -> GameScenario:
    """Two-player scenario with ``F_2 = -F``, ``phi_2 = -phi``, ``psi_2 = -psi`` and
    shared ``g``, ``h``. The solver keeps one adjoint triple and negates it for
    player 2, so the zero-sum identities hold exactly."""
    backward = backward or BackwardCoefficients(orientation="standard")
    partials1 = dict(partials1 or {})
    p1 = PlayerSpec(F=F, phi=phi, psi=psi, phi_dx=phi_dx, psi_dy=psi_dy, backward=backward,
                    level=levels[0], box=boxes[0], terminal_preset=terminal_preset,
                    partials=partials1)
    p2 = PlayerSpec(F=_neg(F), phi=_neg(phi), psi=_neg(psi), phi_dx=_neg(phi_dx),
                    psi_dy=_neg(psi_dy), backward=backward, level=levels[1], box=boxes[1],
                    terminal_preset=(_neg(terminal_preset) if callable(terminal_preset)
                                     else terminal_preset),
                    partials={k: _neg(v) for k, v in partials1.items()})
    return GameScenario(name, grid, marks, model, x0, forward, (p1, p2), zero_sum=True, **kw)


def saddle_check(scenario: GameScenario, candidate: NashCandidate, ensemble: PathEnsemble,
                 probes: int = 4, seed: int = 0, scale: float = 0.5) -> dict:
    """Random deviations must satisfy ``J(u1, u2^) <= J(u^) <= J(u1^, u2)`` within
    two standard errors of the paired differences; also compares sup-inf with
    inf-sup over the probe set."""
    if not scenario.zero_sum:
        raise InvalidArgument("saddle_check needs a zero-sum scenario")
    rng = np.random.default_rng(seed)
    c1, c2 = candidate.controls
    base = estimate_performance(scenario, (c1, c2), ensemble)
    J0 = base.per_path[:, 0]
    dev1 = [_random_deviation(c1, rng, scale) for _ in range(probes)] if c1 is not None else []
    dev2 = [_random_deviation(c2, rng, scale) for _ in range(probes)] if c2 is not None else []
    out = {"player1": [], "player2": [], "violations": 0}
    for d in dev1:
        J = estimate_performance(scenario, (d, c2), ensemble).per_path[:, 0]
        diff = J - J0
        m, se = ensemble.mean(diff), ensemble.stderr(diff)
        margin = float(m - 2 * se)
        out["player1"].append(margin)
        out["violations"] += int(margin > 1e-12 * max(1.0, abs(ensemble.mean(J0))))
    for d in dev2:
        J = estimate_performance(scenario, (c1, d), ensemble).per_path[:, 0]
        diff = J0 - J
        m, se = ensemble.mean(diff), ensemble.stderr(diff)
        margin = float(m - 2 * se)
        out["player2"].append(margin)
        out["violations"] += int(margin > 1e-12 * max(1.0, abs(ensemble.mean(J0))))
    # minimax over the probe set (candidate included)
    A = [c1] + dev1
    B = [c2] + dev2
    table = np.empty((len(A), len(B)))
    paths = {}
    for a, ua in enumerate(A):
        for b, ub in enumerate(B):
            pp = estimate_performance(scenario, (ua, ub), ensemble).per_path[:, 0]
            paths[a, b] = pp
            table[a, b] = ensemble.mean(pp)
    a_star = int(np.argmax(table.min(axis=1)))
    b_star = int(np.argmin(table.max(axis=0)))
    sup_inf = table[a_star].min()
    inf_sup = table[:, b_star].max()
    b_of = int(np.argmin(table[a_star]))
    a_of = int(np.argmax(table[:, b_star]))
    diff = paths[a_of, b_star] - paths[a_star, b_of]
    se = ensemble.stderr(diff)
    out["sup_inf"] = float(sup_inf)
    out["inf_sup"] = float(inf_sup)
    out["minimax_gap"] = float(inf_sup - sup_inf)
    out["minimax_stderr"] = float(se)
    out["minimax_ok"] = bool(abs(inf_sup - sup_inf) <= 3 * se + 1e-12 * max(1.0, abs(sup_inf)))
    out["worst_margin"] = float(max(out["player1"] + out["player2"], default=0.0))
    return out
