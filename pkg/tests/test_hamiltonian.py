import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcvolterra.backward import BackwardCoefficients
from tcvolterra.calculus import InformationLevel, RegressionBasis
from tcvolterra.errors import ContractViolation, InvalidArgument
from tcvolterra.forward import ForwardCoefficients, ForwardPath
from tcvolterra.hamiltonian import (HamiltonianContext, PlayerSpec, build_context, density,
                                    eval_H, eval_H0, eval_H1, eval_HF, partial, partials)
from tcvolterra.noise import MarkSet

from conftest import ensemble

P, N, M = 7, 6, 2
T = 1.0


def context(i=2, seed=0, **kw):
    rng = np.random.default_rng(seed)
    nodes = np.linspace(0.0, T, N + 1)
    dt = np.diff(nodes)
    base = dict(
        i=i, t=float(nodes[i]), nodes=nodes, dt=dt, marks=np.array([0.0, 0.4, 0.9]),
        lam=rng.uniform(0.5, 1.5, (P, 2)), omega=rng.uniform(0.2, 1.0, (P, 1 + M)),
        w_future=rng.uniform(0.0, 0.2, (P, N, 1 + M)),
        x=rng.normal(size=P), y=rng.normal(size=P), u=rng.normal(size=(P, 2)),
        vartheta=rng.normal(size=(P, 1 + M)), z=rng.normal(size=P), p=rng.normal(size=P),
        q=rng.normal(size=(P, 1 + M)), p_table=rng.normal(size=(P, N + 1)),
        z_table=rng.normal(size=(P, N + 1)),
        Dp=[rng.normal(size=(P, l, 1 + M)) for l in range(N + 1)], nu=np.array([0.5, 1.5]))
    base.update(kw)
    return HamiltonianContext(**base)


def full_coefficients():
    fc = ForwardCoefficients(
        drift=lambda t, s, lam, u, x: np.sin(t - s) * x + u[:, 0] * lam[:, 0],
        diffusion=lambda t, s, z, lam, u, x: (0.3 + 0.1 * t * x[:, None] + z[None, :] * u[:, 1:2]))
    bw = BackwardCoefficients(
        driver=lambda t, s, lam, u, x, y, th: np.cos(t) * y + x * th[:, 0] + th[:, 2] * u[:, 1],
        uses_theta=True)
    spec = PlayerSpec(F=lambda t, u, x, y: x ** 2 * u[:, 0] + y ** 3, backward=bw)
    return fc, spec


def test_zero_coefficients_give_zero():
    ctx = context()
    assert np.all(eval_H(ctx, PlayerSpec(), ForwardCoefficients()) == 0.0)


def test_no_multipliers_reduces_to_profit_plus_drift():
    fc, spec = full_coefficients()
    ctx = context(q=np.zeros((P, 1 + M)), z=np.zeros(P))
    ref = spec.f(ctx.t, ctx.u, ctx.x, ctx.y) + fc.b(ctx.t, ctx.t, ctx.lam, ctx.u, ctx.x) * ctx.p
    assert np.allclose(eval_H0(ctx, spec, fc), ref, rtol=1e-14, atol=0)


def test_decomposition_is_bit_exact():
    fc, spec = full_coefficients()
    dth = [np.random.default_rng(s).normal(size=(P, N - s, 1 + M)) for s in range(N)]
    for i in range(N):
        ctx = context(i=i, dtheta=dth)
        assert np.array_equal(eval_H(ctx, spec, fc), eval_H0(ctx, spec, fc) + eval_H1(ctx, spec, fc))


@pytest.mark.parametrize("memory", ["difference", "derivative"])
@pytest.mark.parametrize("i", [0, 3, N - 1])
def test_future_drift_memory_linear_in_t(memory, i):
    a, p0 = 0.8, 1.3
    fc = ForwardCoefficients(drift=lambda t, s, lam, u, x: a * t + 0 * x, memory=memory)
    ctx = context(i=i, p_table=np.full((P, N + 1), p0))
    assert np.allclose(eval_H1(ctx, PlayerSpec(), fc), a * p0 * (T - ctx.t), rtol=1e-9)


def test_future_diffusion_memory_linear_in_t():
    a = 0.6
    fc = ForwardCoefficients(diffusion=lambda t, s, z, lam, u, x: a * t + 0 * x[:, None] + 0 * z,
                             drift_depends_on_t=False)
    D = np.array([0.5, -1.0, 2.0])
    i = 1
    Dp = [np.broadcast_to(D, (P, l, 1 + M)) for l in range(N + 1)]
    ctx = context(i=i, Dp=Dp)
    ref = a * (T - ctx.t) * ctx.omega @ D
    assert np.allclose(eval_H1(ctx, PlayerSpec(), fc), ref, rtol=1e-12)


def test_past_driver_memory():
    c, z0 = 0.9, -0.4
    spec = PlayerSpec(backward=BackwardCoefficients(driver=lambda t, s, lam, u, x, y, th: c * t + 0 * x))
    for i in (0, 2, 5):
        ctx = context(i=i, z_table=np.full((P, N + 1), z0))
        assert np.allclose(eval_H1(ctx, spec, ForwardCoefficients()), c * z0 * ctx.t, atol=1e-9)


def test_memory_requires_tables():
    fc = ForwardCoefficients(drift=lambda t, s, lam, u, x: t * x)
    with pytest.raises(ContractViolation):
        eval_H1(context(p_table=None), PlayerSpec(), fc)
    fc = ForwardCoefficients(diffusion=lambda t, s, z, lam, u, x: t + 0 * z, drift_depends_on_t=False)
    with pytest.raises(ContractViolation):
        eval_H1(context(Dp=None), PlayerSpec(), fc)


def test_memoryless_coefficients_have_no_H1():
    fc = ForwardCoefficients(drift=lambda t, s, lam, u, x: x, drift_depends_on_t=False,
                             diffusion_depends_on_t=False)
    spec = PlayerSpec(backward=BackwardCoefficients(driver=lambda t, s, lam, u, x, y, th: y,
                                                    depends_on_t=False))
    assert np.all(eval_H1(context(i=4), spec, fc) == 0.0)


def test_partials_match_analytic():
    _, spec = full_coefficients()
    fc = ForwardCoefficients(
        drift=lambda t, s, lam, u, x: np.sin(s) * x + u[:, 0] * lam[:, 0],
        diffusion=lambda t, s, z, lam, u, x: (0.3 + 0.1 * s * x[:, None] + z[None, :] * u[:, 1:2]),
        drift_depends_on_t=False, diffusion_depends_on_t=False)
    ctx = context(i=3, dtheta=[np.zeros((P, N - s, 1 + M)) for s in range(N)])
    t = ctx.t
    past = -np.sum(np.sin(ctx.nodes[:3]) * ctx.z_table[:, :3] * ctx.dt[:3], axis=1)
    kap_x = 0.1 * t * np.ones(1 + M)
    dx = (2 * ctx.x * ctx.u[:, 0] + np.sin(t) * ctx.p + ctx.q * ctx.omega @ kap_x
          + ctx.vartheta[:, 0] * ctx.z)
    dy = 3 * ctx.y ** 2 + np.cos(t) * ctx.z + past
    du0 = ctx.x ** 2 + ctx.lam[:, 0] * ctx.p
    du1 = np.einsum("pk,pk->p", ctx.q * ctx.omega, np.broadcast_to(ctx.marks, (P, 1 + M))) \
        + ctx.vartheta[:, 2] * ctx.z
    dtheta = np.column_stack([ctx.x * ctx.z, 0 * ctx.z, ctx.u[:, 1] * ctx.z])
    ps = partials(ctx, spec, fc)
    assert np.allclose(ps.dx, dx, atol=1e-6)
    assert np.allclose(ps.dy, dy, atol=1e-6)
    assert np.allclose(ps.du, np.column_stack([du0, du1]), atol=1e-6)
    assert np.allclose(np.column_stack([ps.dtheta0, ps.dtheta]), dtheta, atol=1e-6)
    assert np.allclose(ps.dtheta_density, dtheta[:, 1:] / ctx.nu, atol=1e-6)


def test_callback_partials_cross_check():
    fc, spec = full_coefficients()
    spec.partials = {"y": lambda c: 3 * c.y ** 2 + np.cos(c.t) * c.z}
    ps = partials(context(i=0), spec, fc, cross_check=True)
    assert max(ps.cross_check.values()) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-4, 4), b=st.floats(-4, 4))
def test_linear_slope(a, b):
    spec = PlayerSpec(F=lambda t, u, x, y: a * x + b * u[:, 1])
    ctx = context()
    assert np.allclose(partial(ctx, spec, ForwardCoefficients(), "x"), a, rtol=1e-10, atol=1e-10)
    assert np.allclose(partial(ctx, spec, ForwardCoefficients(), "u", 1), b, rtol=1e-10, atol=1e-10)


def test_unknown_partial_and_scheme():
    with pytest.raises(InvalidArgument):
        partial(context(), PlayerSpec(), ForwardCoefficients(), "w")
    with pytest.raises(InvalidArgument):
        partial(context(), PlayerSpec(), ForwardCoefficients(), "x", scheme="forward")


def test_density():
    g = np.array([[1.0, 2.0]])
    assert np.allclose(density(g, [0.5, 2.0]), [[2.0, 1.0]])
    assert np.all(density(np.array([[1.0, 0.0]]), [1.0, 0.0]) == [[1.0, 0.0]])
    with pytest.raises(InvalidArgument):
        density(g, [1.0, 0.0])


def test_adjoint_terminal_presets():
    bw = BackwardCoefficients(terminal=lambda x: x ** 2)
    spec = PlayerSpec(phi=lambda x: 3 * x, backward=bw)
    x, z = np.array([0.5, -1.0]), np.array([2.0, 1.0])
    assert np.allclose(spec.adjoint_terminal(x, z), 3 + 2 * x * z, atol=1e-8)
    spec.terminal_preset = "as-printed"
    assert np.allclose(spec.adjoint_terminal(x, z), -3 + x ** 2 * z, atol=1e-8)
    spec.terminal_preset = "other"
    with pytest.raises(InvalidArgument):
        spec.adjoint_terminal(x, z)


def test_conditional_hamiltonian_on_deterministic_tables(random_model, marks):
    ens = ensemble(random_model, marks, N=N, paths=500)
    X = np.ones((500, N + 1))
    fwd = ForwardPath(X=X, x0=1.0, u=np.zeros((500, N, 2)))
    fc, spec = full_coefficients()
    spec.backward = BackwardCoefficients(driver=lambda t, s, lam, u, x, y, th: np.cos(t) * y)
    K = 1 + marks.M
    tables = dict(y=np.full((500, N + 1), 0.3), z_table=np.full((500, N + 1), 0.7),
                  p_table=np.tile(np.linspace(1, 2, N + 1), (500, 1)), q=np.full((500, N, K), 0.2),
                  Dp=[np.full((500, l, K), -0.1) for l in range(N + 1)])
    level = InformationLevel("G", states=("x",))
    for i in (0, 3):
        ctx = build_context(i, ens, fwd, 0, **tables)
        H = eval_H(ctx, spec, fc)
        HF = eval_HF(ctx, spec, fc, ens, level, RegressionBasis(degree=1), states={"x": X})
        assert np.allclose(HF, H, rtol=1e-10, atol=1e-10)
