"""Hamiltonians ``H = H0 + H1``, their conditional versions and partial derivatives.

Per cell ``i`` and path,

    H0 = F(t, u, x, y) + b(t, t) p + sum_k kappa(t, t, z_k) q_k omega_k + g(t, t) z

with ``omega = (lam_B, lam_H nu_k)`` the per-unit-time ``Lambda`` rates, and
``H1`` collects the memory terms: future ``db/ds p(s)`` and
``dkappa/ds D_{t,z} p(s)`` sums, and past ``dg/ds z(s)`` and
``dg/dtheta dvartheta/ds z(s)`` sums, all as left-point sums over cells.

The ``p`` paired with cell ``i`` is the adjoint at node ``i + 1`` (the value
multiplying the cell's increment), which keeps the discrete first-order
identities exact for explicit Euler dynamics.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import _fd
from .backward import BackwardCoefficients
from .calculus import InformationLevel, Projector, RegressionBasis
from .errors import ContractViolation, InvalidArgument
from .forward import ForwardCoefficients


@dataclass
class PlayerSpec:
    """Per-player callbacks: profit rate, terminal reward, initial risk map.

    ``F(t, u, x, y)`` gets ``u`` as ``(P, 2)``. ``phi(x)`` and ``psi(y)`` are
    the terminal reward and the map applied to ``Y(0)``. ``partials`` maps
    partial names (``"x"``, ``"y"``, ``"theta0"``, ``"theta"``, ``"u"``) to
    analytic callbacks ``fn(ctx)``; missing ones are differenced.
    ``terminal_preset`` selects ``p(T)``: ``"gradient"`` is
    ``phi'(X_T) + h'(X_T) z_T`` and ``"as-printed"`` is ``-phi'(X_T) + h(X_T) z_T``.
    """

    F: Optional[Callable] = None
    phi: Optional[Callable] = None
    psi: Optional[Callable] = None
    phi_dx: Optional[Callable] = None
    psi_dy: Optional[Callable] = None
    backward: BackwardCoefficients = field(
        default_factory=lambda: BackwardCoefficients(orientation="standard"))
    level: InformationLevel = field(default_factory=InformationLevel)
    box: tuple = (-np.inf, np.inf)
    terminal_preset: str = "gradient"
    partials: dict = field(default_factory=dict)

    def f(self, t, u, x, y):
        if self.F is None:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(self.F(t, u, x, y), float), x.shape)

    def terminal_reward(self, x):
        return np.zeros_like(x) if self.phi is None else np.broadcast_to(
            np.asarray(self.phi(x), float), x.shape)

    def initial_risk(self, y):
        return np.zeros_like(y) if self.psi is None else np.broadcast_to(
            np.asarray(self.psi(y), float), np.shape(y))

    def dphi(self, x):
        if self.phi_dx is not None:
            return np.broadcast_to(np.asarray(self.phi_dx(x), float), x.shape)
        if self.phi is None:
            return np.zeros_like(x)
        return _fd.central(self.terminal_reward, x)

    def dpsi(self, y):
        y = np.asarray(y, dtype=float)
        if self.psi_dy is not None:
            return np.broadcast_to(np.asarray(self.psi_dy(y), float), y.shape)
        if self.psi is None:
            return np.zeros_like(y)
        return _fd.central(self.initial_risk, y)

    def adjoint_terminal(self, x, zT):
        bw = self.backward
        if callable(self.terminal_preset):
            return np.asarray(self.terminal_preset(x, zT), float)
        if self.terminal_preset == "gradient":
            if bw.terminal_dx is not None:
                hx = np.asarray(bw.terminal_dx(x), float)
            elif bw.terminal is None:
                hx = np.zeros_like(x)
            else:
                hx = _fd.central(bw.h, x)
            return self.dphi(x) + hx * zT
        if self.terminal_preset == "as-printed":
            return -self.dphi(x) + bw.h(x) * zT
        raise InvalidArgument(f"unknown terminal preset {self.terminal_preset!r}")


@dataclass
class HamiltonianContext:
    """Everything ``H`` reads on cell ``i``.

    ``p_table`` is ``(P, N + 1)`` and only nodes ``> i`` are read; ``z_table``
    only nodes ``< i``. ``Dp[l]`` is ``(P, l, 1 + M)``; ``dtheta[s]`` is the
    first-argument derivative of ``theta(t_s, .)`` on cells ``>= s``.
    """

    i: int
    t: float
    nodes: np.ndarray
    dt: np.ndarray
    marks: np.ndarray            # mark values, Brownian 0 first
    lam: np.ndarray              # (P, 2)
    omega: np.ndarray            # (P, 1 + M) Lambda rates on cell i
    w_future: np.ndarray         # (P, N, 1 + M) Lambda weights (read for cells > i)
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray                # (P, 2)
    vartheta: np.ndarray         # (P, 1 + M)
    z: np.ndarray
    p: np.ndarray                # adjoint paired with the cell (node i + 1)
    q: np.ndarray                # (P, 1 + M)
    p_table: Optional[np.ndarray] = None
    z_table: Optional[np.ndarray] = None
    Dp: Optional[list] = None
    dtheta: Optional[list] = None
    nu: Optional[np.ndarray] = None   # mark masses, for the gradient density
    player: int = 0

    def with_values(self, **kw) -> "HamiltonianContext":
        return replace(self, **kw)


def build_context(i, ensemble, forward, player, *, y, z_table, p_table, q, Dp=None,
                  theta=None, dtheta=None, z_value=None) -> HamiltonianContext:
    """Context on cell ``i`` from solver tables (``theta`` is a BSVIE theta list)."""
    grid = ensemble.grid
    P, K = ensemble.n_paths, 1 + ensemble.marks.M
    vartheta = np.zeros((P, K)) if theta is None else theta[i][:, 0]
    z_i = z_table[:, i] if z_value is None else z_value
    return HamiltonianContext(
        i=i, t=float(grid.nodes[i]), nodes=grid.nodes, dt=grid.dt, marks=ensemble.marks.values,
        lam=np.column_stack([ensemble.lam_B[:, i], ensemble.lam_H[:, i]]),
        omega=ensemble.w[:, i, :] / grid.dt[i], w_future=ensemble.w,
        x=forward.X[:, i], y=y[:, i] if y.ndim == 2 else y, u=forward.u[:, i],
        vartheta=vartheta, z=z_i, p=p_table[:, i + 1], q=q[:, i] if q.ndim == 3 else q,
        p_table=p_table, z_table=z_table, Dp=Dp, dtheta=dtheta, nu=ensemble.marks.nu,
        player=player)


def eval_H0(ctx: HamiltonianContext, spec: PlayerSpec, fc: ForwardCoefficients) -> np.ndarray:
    t = ctx.t
    bw = spec.backward
    out = spec.f(t, ctx.u, ctx.x, ctx.y)
    out = out + fc.b(t, t, ctx.lam, ctx.u, ctx.x) * ctx.p
    kap = fc.kappa(t, t, ctx.marks, ctx.lam, ctx.u, ctx.x)
    out = out + np.einsum("pk,pk,pk->p", kap, ctx.q, ctx.omega)
    out = out + bw.g(t, t, ctx.lam, ctx.u, ctx.x, ctx.y, ctx.vartheta) * ctx.z
    return out


def _g_theta(bw, s, t, lam, u, x, y, vartheta):
    if bw.driver_dtheta is not None:
        return np.broadcast_to(np.asarray(bw.driver_dtheta(s, t, lam, u, x, y, vartheta), float),
                               vartheta.shape)
    out = np.zeros_like(vartheta)
    for k in range(vartheta.shape[1]):
        h = _fd.step_for(vartheta[:, k])
        up, dn = vartheta.copy(), vartheta.copy()
        up[:, k] += h
        dn[:, k] -= h
        out[:, k] = (bw.g(s, t, lam, u, x, y, up) - bw.g(s, t, lam, u, x, y, dn)) / (2 * h)
    return out


def _g_t(bw, s, t, lam, u, x, y, vartheta):
    if bw.driver_dt is not None:
        return np.broadcast_to(np.asarray(bw.driver_dt(s, t, lam, u, x, y, vartheta), float), x.shape)
    if not bw.depends_on_t or bw.driver is None:
        return np.zeros_like(x)
    h = _fd.step_for(bw.horizon)
    return (bw.g(s + h, t, lam, u, x, y, vartheta) - bw.g(s - h, t, lam, u, x, y, vartheta)) / (2 * h)


def eval_H1(ctx: HamiltonianContext, spec: PlayerSpec, fc: ForwardCoefficients) -> np.ndarray:
    i, t, nodes, dt = ctx.i, ctx.t, ctx.nodes, ctx.dt
    N = dt.size
    out = np.zeros_like(ctx.x)
    lam, u, x = ctx.lam, ctx.u, ctx.x
    # future terms over cells l >= i, adjoint at node l + 1. The "difference"
    # rule uses the kernel increment across each cell, which makes the
    # discrete adjoint identities exact for the Euler scheme; "derivative"
    # uses the first-argument derivative callbacks at the left point.
    if fc.depends_on_t:
        if ctx.p_table is None:
            raise ContractViolation("H1 needs the future adjoint table")
        diff = fc.memory == "difference"
        if fc.drift_depends_on_t:
            for l in range(i, N):
                if diff:
                    db = fc.b(nodes[l + 1], t, lam, u, x) - fc.b(nodes[l], t, lam, u, x)
                else:
                    db = fc.b_t(nodes[l], t, lam, u, x) * dt[l]
                out = out + db * ctx.p_table[:, l + 1]
        if fc.diffusion is not None and fc.diffusion_depends_on_t:
            if ctx.Dp is None:
                raise ContractViolation("H1 needs the NA derivative of the future adjoint")
            for l in range(i, N):
                D = ctx.Dp[l + 1][:, i, :]
                if diff:
                    dk = (fc.kappa(nodes[l + 1], t, ctx.marks, lam, u, x)
                          - fc.kappa(nodes[l], t, ctx.marks, lam, u, x))
                    out = out + np.einsum("pk,pk,pk->p", dk, D, ctx.omega)
                else:
                    kt = fc.kappa_t(nodes[l], t, ctx.marks, lam, u, x)
                    out = out + np.einsum("pk,pk,pk->p", kt, D, ctx.w_future[:, l, :])
    # past terms: cells s < i, multiplier at node s
    bw = spec.backward
    if bw.driver is not None and i > 0:
        if ctx.z_table is None:
            raise ContractViolation("H1 needs the past multiplier table")
        for s in range(i):
            zs = ctx.z_table[:, s]
            if bw.depends_on_t:
                out = out + _g_t(bw, nodes[s], t, lam, u, x, ctx.y, ctx.vartheta) * zs * dt[s]
            if bw.uses_theta:
                if ctx.dtheta is None:
                    raise ContractViolation("H1 needs the theta time-derivative table")
                gth = _g_theta(bw, nodes[s], t, lam, u, x, ctx.y, ctx.vartheta)
                dth = ctx.dtheta[s][:, i - s, :]
                out = out + np.einsum("pk,pk->p", gth, dth) * zs * dt[s]
    return out


def eval_H(ctx, spec, fc) -> np.ndarray:
    """``H0 + H1`` (one code path, so the decomposition holds bit for bit)."""
    return eval_H0(ctx, spec, fc) + eval_H1(ctx, spec, fc)


def eval_HF(ctx: HamiltonianContext, spec: PlayerSpec, fc: ForwardCoefficients, ensemble,
            level: InformationLevel, basis: RegressionBasis = RegressionBasis(),
            states: Optional[dict] = None) -> np.ndarray:
    """``H`` with ``p``, ``q``, ``z`` and the future/past tables replaced by
    their conditional expectations given ``level`` at their own times."""
    ens = ensemble.with_states(**(states or {}))
    projectors = {}

    def project(values, node):
        if node not in projectors:
            projectors[node] = Projector(ens, level, node, basis)
        return projectors[node](values)

    i, N = ctx.i, ctx.dt.size
    p_tab = z_tab = None
    if ctx.p_table is not None:
        # the adjoint at node l is paired with cell l - 1 and conditioned there
        p_tab = ctx.p_table.copy()
        for l in range(i + 2, N + 1):
            p_tab[:, l] = project(ctx.p_table[:, l], l - 1)
    if ctx.z_table is not None:
        z_tab = ctx.z_table.copy()
        for s in range(i):
            z_tab[:, s] = project(ctx.z_table[:, s], s)
    q = np.column_stack([project(ctx.q[:, k], i) for k in range(ctx.q.shape[1])])
    fctx = ctx.with_values(p=project(ctx.p, i), q=q, z=project(ctx.z, i),
                           p_table=p_tab, z_table=z_tab)
    return eval_H(fctx, spec, fc)


# -- partial derivatives ----------------------------------------------------

@dataclass
class PartialSet:
    dx: np.ndarray
    dy: np.ndarray
    dtheta0: np.ndarray
    dtheta: np.ndarray             # (P, M) gradient in the jump marks
    dtheta_density: np.ndarray     # (P, M) gradient divided by nu_k
    du: np.ndarray                 # (P, 2)
    cross_check: dict = field(default_factory=dict)


def _diff(ctx, spec, fc, name, k=None):
    H = lambda c: eval_H(c, spec, fc)  # noqa: E731
    if name in ("x", "y", "z"):
        base = getattr(ctx, name)
        h = _fd.step_for(base)
        return (H(ctx.with_values(**{name: base + h})) - H(ctx.with_values(**{name: base - h}))) / (2 * h)
    if name == "u":
        col = ctx.u[:, k]
        h = _fd.step_for(col)
        up, dn = ctx.u.copy(), ctx.u.copy()
        up[:, k] += h
        dn[:, k] -= h
        return (H(ctx.with_values(u=up)) - H(ctx.with_values(u=dn))) / (2 * h)
    if name == "theta":
        col = ctx.vartheta[:, k]
        h = _fd.step_for(col)
        up, dn = ctx.vartheta.copy(), ctx.vartheta.copy()
        up[:, k] += h
        dn[:, k] -= h
        return (H(ctx.with_values(vartheta=up)) - H(ctx.with_values(vartheta=dn))) / (2 * h)
    raise InvalidArgument(f"unknown partial {name!r}")


def partial(ctx, spec, fc, name, k=None, scheme="callback"):
    """One partial of ``H``: ``"x"``, ``"y"``, ``"u"`` (player ``k``) or ``"theta"`` (mark ``k``)."""
    if scheme not in ("callback", "central"):
        raise InvalidArgument(f"unknown partial scheme {scheme!r}")
    fn = spec.partials.get(name) if scheme == "callback" else None
    if fn is not None:
        val = np.asarray(fn(ctx), dtype=float)
        if name in ("u", "theta"):
            val = val[..., k]
        return np.broadcast_to(val, ctx.x.shape).copy()
    return _diff(ctx, spec, fc, name, k)


def partials(ctx, spec, fc, scheme="callback", cross_check=False) -> PartialSet:
    """All partials on the cell; ``cross_check`` also differences and reports the gaps."""
    K = ctx.vartheta.shape[1]
    nu = np.ones(K - 1) if ctx.nu is None else ctx.nu
    dx = partial(ctx, spec, fc, "x", scheme=scheme)
    dy = partial(ctx, spec, fc, "y", scheme=scheme)
    th = np.column_stack([partial(ctx, spec, fc, "theta", k, scheme) for k in range(K)])
    du = np.column_stack([partial(ctx, spec, fc, "u", k, scheme) for k in range(2)])
    out = PartialSet(dx, dy, th[:, 0], th[:, 1:], np.zeros_like(th[:, 1:]), du)
    out.dtheta_density = density(out.dtheta, nu)
    if cross_check:
        ref = partials(ctx, spec, fc, scheme="central")
        for name in ("dx", "dy", "dtheta0", "dtheta", "du"):
            a, b = getattr(out, name), getattr(ref, name)
            scale = np.maximum(np.abs(b), 1.0)
            out.cross_check[name] = float(np.max(np.abs(a - b) / scale)) if a.size else 0.0
    return out


def density(grad, nu, tol: float = 0.0):
    """Radon-Nikodym density of a per-mark gradient: componentwise division by ``nu``."""
    grad = np.asarray(grad, dtype=float)
    nu = np.asarray(nu, dtype=float)
    out = np.zeros_like(grad)
    for k in range(nu.size):
        if nu[k] > 0:
            out[..., k] = grad[..., k] / nu[k]
        elif np.any(np.abs(grad[..., k]) > tol):
            raise InvalidArgument(f"mark {k + 1} has zero mass but a nonzero gradient")
    return out
