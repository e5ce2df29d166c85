from dataclasses import replace

import numpy as np
import pytest

from tcvolterra.backward import BackwardCoefficients
from tcvolterra.calculus import InformationLevel
from tcvolterra.errors import InvalidArgument, NoConvergence
from tcvolterra.forward import ControlProcess, ForwardCoefficients
from tcvolterra.game import (GameScenario, PerturbationSpec, estimate_performance, find_nash,
                             necessary_residual, perturbation_derivative, residual_prediction,
                             saddle_check, solve_game, sufficient_check, zero_sum_build)
from tcvolterra.hamiltonian import PlayerSpec, eval_H
from tcvolterra.noise import MarkSet, build_grid
from tcvolterra.scenarios import (decoupled_quadratic, default_model, martingale_backward,
                                  quadratic_saddle, toy_corpus, u_free)

N = 8


def bare_scenario(**spec_kw):
    fc = ForwardCoefficients(drift=lambda t, s, lam, u, x: u[:, 0],
                             diffusion=lambda t, s, z, lam, u, x: 0.2 + 0 * x[:, None] * z,
                             drift_depends_on_t=False, diffusion_depends_on_t=False)
    players = (PlayerSpec(**spec_kw), PlayerSpec(**spec_kw))
    return GameScenario("bare", build_grid(1.0, N), MarkSet([0.3], [1.0]), default_model(),
                        1.0, fc, players)


@pytest.mark.parametrize("kw,expected", [
    (dict(psi=lambda y: 2.5 + 0 * y), 2.5),
    (dict(F=lambda t, u, x, y: 1.0 + 0 * x), 1.0),
])
def test_performance_trivial(kw, expected):
    sc = bare_scenario(**kw)
    ens = sc.ensemble(300, 1)
    perf = estimate_performance(sc, sc.initial_controls(), ens)
    assert np.allclose(perf.J, expected, rtol=0, atol=1e-14)


def test_performance_deterministic_quadrature():
    sc = decoupled_quadratic(N=N, sigma=(0.0, 0.0, 0.0))
    u = (0.7, -0.4)
    ctl = tuple(ControlProcess.deterministic(k, np.full(N, u[k])) for k in range(2))
    perf = estimate_performance(sc, ctl, sc.ensemble(50, 1))
    XT = 1.0 + sum(u)
    ref = [-0.5 * (u[k] - (0.5, -0.2)[k]) ** 2 + (0.3, 0.6)[k] * XT for k in range(2)]
    assert np.allclose(perf.J, ref, rtol=0, atol=1e-10)
    assert np.all(perf.stderr <= 1e-12)


def test_residual_of_quadratic_profit():
    # F = -(u - u*)^2 with u-free dynamics: R = -2 (u - u*)
    u_star = 0.35
    sc = bare_scenario(F=lambda t, u, x, y: -(u[:, 0] - u_star) ** 2)
    sc.forward = ForwardCoefficients(diffusion=lambda t, s, z, lam, u, x: 0.2 + 0 * z,
                                     drift_depends_on_t=False, diffusion_depends_on_t=False)
    ens = sc.ensemble(400, 2)
    values = np.linspace(-1, 1, N)
    ctl = (ControlProcess.deterministic(0, values), None)
    res = necessary_residual(sc, ctl, 0, ens)
    assert np.allclose(ens.mean(res.values), -2 * (values - u_star), atol=1e-8)
    at_root = necessary_residual(sc, (ControlProcess.deterministic(0, np.full(N, u_star)), None), 0, ens)
    assert at_root.norm <= 1e-8


def test_u_free_residual_is_zero():
    sc = u_free(N=N)
    ens = sc.ensemble(500, 1)
    ctl = sc.initial_controls((0.3, -0.3))
    for k in range(2):
        assert necessary_residual(sc, ctl, k, ens).norm == 0.0


def test_projected_residual_at_bound():
    u_star = 2.0
    sc = bare_scenario(F=lambda t, u, x, y: -(u[:, 0] - u_star) ** 2)
    sc.forward = ForwardCoefficients()
    ens = sc.ensemble(400, 2)
    ctl = (ControlProcess.deterministic(0, np.ones(N), box=(-1.0, 1.0)), None)
    res = necessary_residual(sc, ctl, 0, ens)
    assert res.norm == pytest.approx(2.0)
    assert res.projected_norm == 0.0


def test_zero_alpha_perturbation():
    sc = decoupled_quadratic(N=N)
    ens = sc.ensemble(500, 1)
    ctl = sc.initial_controls()
    spec = PerturbationSpec(0, 2, 2, np.zeros(4))
    assert perturbation_derivative(sc, ctl, spec, ens) == 0.0


def test_perturbation_window_validation():
    with pytest.raises(InvalidArgument):
        list(PerturbationSpec(0, 6, 4, np.ones(1)).cells(N))


def test_derivative_vanishes_at_interior_optimum():
    sc = decoupled_quadratic(N=N)
    ens = sc.ensemble(2000, 4)
    opt = sc.notes["optimum"]
    ctl = tuple(ControlProcess.deterministic(k, np.full(N, opt[k])) for k in range(2))
    for k in range(2):
        d = perturbation_derivative(sc, ctl, PerturbationSpec(k, 1, 4, np.ones(1)), ens)
        assert abs(d) <= 1e-6


def equivalence_errors(scenarios, paths, seed=5):
    """Relative gap between the perturbation derivative and the residual
    prediction for each active player of each scenario."""
    out = []
    for sc in scenarios:
        ens = sc.ensemble(paths, seed)
        ctl = sc.initial_controls((0.2, -0.1))
        state = solve_game(sc, ctl, ens)
        for k in range(2):
            if ctl[k] is None:
                continue
            ctl[k].design(ens.with_states(x=state.forward.X), 2)
            alpha = np.zeros(ctl[k].coef.shape[1])
            alpha[0] = 1.0
            alpha[1:] = 0.5
            spec = PerturbationSpec(k, 2, 3, alpha)
            d = perturbation_derivative(sc, ctl, spec, ens)
            pred = residual_prediction(sc, ctl, spec, ens, state)
            scale = max(abs(pred), 1e-12)
            out.append((sc.name, k, d, pred, 0.0 if d == pred else abs(d - pred) / scale))
    return out


def test_necessary_equivalence_on_corpus():
    rows = equivalence_errors(toy_corpus(N=N), 2000)
    assert len(rows) == 10
    for name, k, d, pred, rel in rows:
        assert rel <= 0.05, (name, k, d, pred)


def test_find_nash_decoupled_quadratic():
    sc = decoupled_quadratic(N=N)
    ens = sc.ensemble(1000, 3)
    cand = find_nash(sc, sc.initial_controls(), ens, step=0.5, max_iter=100, tol=1e-8)
    assert cand.converged
    assert cand.trace[-1]["residual_norms"] == cand.residual_norms
    assert max(cand.residual_norms) <= 1e-8
    assert all(len(p) == N for p in cand.residual_profiles)
    state = solve_game(sc, cand.controls, ens, adjoints=False)
    for k in range(2):
        err = np.max(np.abs(state.forward.u[:, :, k] - sc.notes["optimum"][k]))
        assert err <= 1e-3


def test_find_nash_u_free_stops_immediately():
    sc = u_free(N=N)
    ens = sc.ensemble(500, 1)
    ctl = sc.initial_controls((0.3, -0.2))
    cand = find_nash(sc, ctl, ens)
    assert cand.iterations == 0 and len(cand.trace) == 1 and cand.converged
    for a, b in zip(ctl, cand.controls):
        assert np.array_equal(a.coef, b.coef)


def test_find_nash_reports_failure():
    sc = decoupled_quadratic(N=N)
    ens = sc.ensemble(600, 3)
    cand = find_nash(sc, sc.initial_controls(), ens, step=0.1, max_iter=2)
    assert not cand.converged and len(cand.trace) == 3
    with pytest.raises(NoConvergence):
        find_nash(sc, sc.initial_controls(), ens, step=0.1, max_iter=2, raise_on_failure=True)


def test_sufficient_check_concave_case_is_clean():
    sc = decoupled_quadratic(N=N)
    ens = sc.ensemble(1000, 2)
    cand = find_nash(sc, sc.initial_controls(), ens, tol=1e-8)
    report = sufficient_check(sc, cand, ens, probes=4)
    assert report["violations"] == 0


def test_sufficient_check_flags_convex_terminal_reward():
    sc = decoupled_quadratic(N=N)
    sc.players = (replace(sc.players[0], phi=lambda x: x ** 2, phi_dx=lambda x: 2 * x),
                  sc.players[1])
    ens = sc.ensemble(1000, 2)
    cand = find_nash(sc, sc.initial_controls(), ens, max_iter=5)
    report = sufficient_check(sc, cand, ens, probes=4)
    assert report["concavity"]["player1"]["phi"]["violations"] > 0
    assert report["violations"] > 0


# -- zero-sum -----------------------------------------------------------------

def test_zero_sum_identities():
    bw = BackwardCoefficients(driver=lambda t, s, lam, u, x, y, th: -0.3 * y + 0.1 * x * np.exp(s - t),
                              orientation="standard")
    fc = ForwardCoefficients(drift=lambda t, s, lam, u, x: np.exp(-(t - s)) * (u[:, 0] - u[:, 1]),
                             diffusion=lambda t, s, z, lam, u, x: 0.2 * x[:, None] + 0 * z)
    sc = zero_sum_build("zs", build_grid(1.0, 6), MarkSet([0.3], [1.0]), default_model(), 1.0, fc,
                        F=lambda t, u, x, y: -u[:, 0] ** 2 + 0.5 * u[:, 1] ** 2 + x * y,
                        phi=lambda x: -0.5 * x ** 2, psi=lambda y: 0.2 * y, backward=bw)
    ens = sc.ensemble(400, 7)
    ctl = sc.initial_controls((0.2, -0.1))
    state = solve_game(sc, ctl, ens)
    p1, p2 = state.players
    assert np.array_equal(p2.z.z, -p1.z.z)
    assert np.array_equal(p2.adjoint.p, -p1.adjoint.p)
    assert np.array_equal(p2.adjoint.q, -p1.adjoint.q)
    perf = estimate_performance(sc, ctl, ens, state)
    assert np.all(perf.per_path[:, 0] + perf.per_path[:, 1] == 0.0)
    for i in (0, 3, 5):
        H1 = eval_H(state.context(sc, 0, i), sc.players[0], fc)
        H2 = eval_H(state.context(sc, 1, i), sc.players[1], fc)
        assert np.allclose(H2, -H1, rtol=1e-14, atol=1e-14)


def test_saddle_check_quadratic_saddle():
    sc = quadratic_saddle(N=N)
    ens = sc.ensemble(1000, 2)
    cand = find_nash(sc, sc.initial_controls(), ens, tol=1e-8)
    assert cand.converged
    state = solve_game(sc, cand.controls, ens, adjoints=False)
    for k in range(2):
        assert np.max(np.abs(state.forward.u[:, :, k] - sc.notes["optimum"][k])) <= 1e-3
    report = saddle_check(sc, cand, ens, probes=4)
    assert report["violations"] == 0
    assert report["minimax_ok"]


def test_saddle_check_flags_bad_candidate():
    sc = quadratic_saddle(N=N)
    ens = sc.ensemble(1000, 2)
    cand = find_nash(sc, sc.initial_controls((-1.0, 1.0)), ens, max_iter=0)
    assert saddle_check(sc, cand, ens, probes=6, scale=1.0)["violations"] > 0


def test_saddle_check_u_free_margins_zero():
    sc = u_free(N=N)
    ens = sc.ensemble(500, 1)
    cand = find_nash(sc, sc.initial_controls(), ens)
    report = saddle_check(sc, cand, ens, probes=3)
    assert report["violations"] == 0
    assert all(m == 0.0 for m in report["player1"] + report["player2"])


def test_saddle_check_needs_zero_sum():
    sc = decoupled_quadratic(N=N)
    ens = sc.ensemble(500, 1)
    cand = find_nash(sc, sc.initial_controls(), ens, max_iter=0)
    with pytest.raises(InvalidArgument):
        saddle_check(sc, cand, ens)


def test_information_monotonicity():
    # tracking x pays only when the player can see x
    small = InformationLevel(flow="F", noise=False, clock=False)
    results = []
    for level in (small, small.__class__(flow="F", states=("x",))):
        sc = martingale_backward(N=N)
        sc.players = tuple(replace(p, level=level) for p in sc.players)
        ens = sc.ensemble(2000, 6)
        cand = find_nash(sc, sc.initial_controls(), ens, tol=1e-6)
        results.append(cand.performance)
    for k in range(2):
        gap = results[1].J[k] - results[0].J[k]
        se = np.hypot(results[0].stderr[k], results[1].stderr[k])
        assert gap >= -2 * se
    assert results[1].J[0] > results[0].J[0]


def test_control_maximum_is_refined_between_grid_points():
    from tcvolterra.game import _maximise
    target = np.array([0.37, 1.5, 2.91, 0.0])
    best = _maximise(lambda v: -(v - target) ** 2 + target, np.array([0.0, 1.0, 2.0, 3.0]))
    assert np.allclose(best, target, atol=1e-12)
