from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import disco as d
from disco import Cone, ConeKind, SolveSettings, SolveStatus, UnsupportedConeError, project
from disco.conic import lower_problem
from disco.serialize import load_problem
from disco.solver import dual_cone, solve_compiled

CORPUS = Path(__file__).parent / "corpus"


def test_soc_projection_example():
    # (t, x) = (0, (3, 4)): halfway between the point and the cone's axis
    np.testing.assert_allclose(project(Cone(ConeKind.SOC, 3), [0.0, 3.0, 4.0]),
                               [2.5, 1.5, 2.0])


def test_soc_projection_inside_and_polar():
    cone = Cone(ConeKind.SOC, 3)
    np.testing.assert_array_equal(project(cone, [5.0, 3.0, 4.0]), [5.0, 3.0, 4.0])
    np.testing.assert_array_equal(project(cone, [-5.0, 3.0, 4.0]), [0.0, 0.0, 0.0])


def test_simple_projections():
    v = np.array([1.0, -2.0, 0.0])
    np.testing.assert_array_equal(project(Cone(ConeKind.NONNEG, 3), v), [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(project(Cone(ConeKind.ZERO, 3), v), [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(project(Cone(ConeKind.FREE, 3), v), v)
    assert dual_cone(Cone(ConeKind.ZERO, 2)).kind is ConeKind.FREE


def test_projection_refuses_unsupported_cones():
    with pytest.raises(UnsupportedConeError):
        project(Cone(ConeKind.EXP, 3), np.zeros(3))
    with pytest.raises(UnsupportedConeError):
        project(Cone(ConeKind.PSD, 4), np.zeros(4))
    with pytest.raises(ValueError):
        project(Cone(ConeKind.SOC, 3), np.zeros(2))


@settings(max_examples=200, deadline=None)
@given(arrays(float, 4, elements=st.floats(-1e6, 1e6)))
def test_soc_projection_lands_in_cone(v):
    cone = Cone(ConeKind.SOC, 4)
    p = project(cone, v)
    assert cone.contains(p, tol=1e-9 * (1 + np.abs(v).max()))


def _kkt(cp, sol, tol):
    A, b, c = cp.A, cp.b, cp.c
    scale = 1 + max(np.abs(b).max(initial=0), np.abs(c).max())
    assert np.max(np.abs(A.T @ sol.y + c)) <= tol * scale
    start = 0
    for cone in cp.cones:
        s = sol.s[start:start + cone.dim]
        y = sol.y[start:start + cone.dim]
        assert cone.contains(s, tol * scale)
        assert dual_cone(cone).contains(y, tol * scale)
        start += cone.dim
    np.testing.assert_allclose(b - A @ sol.x, sol.s, atol=tol * scale)
    assert abs(sol.s @ sol.y) <= tol * scale * (1 + abs(c @ sol.x))


@pytest.mark.parametrize("path", sorted(CORPUS.glob("tight_*.json"))[:12],
                         ids=lambda p: p.stem)
def test_kkt_conditions_at_optimum(path):
    p = load_problem(path)
    cp = lower_problem(p)
    sol = solve_compiled(p, cp)
    assert sol.status is SolveStatus.OPTIMAL
    _kkt(cp, sol, 1e-5)


def test_square_shift():
    x = d.Variable()
    p = d.minimize(d.square(x - 3))
    d.solve(p)
    assert p.status == "Optimal"
    assert p.optval == pytest.approx(0.0, abs=1e-6)
    assert x.value[0, 0] == pytest.approx(3.0, abs=1e-3)


def test_maximize_negative_abs():
    x = d.Variable()
    p = d.maximize(-d.abs(x - 1) + 2)
    d.solve(p)
    assert p.status == "Optimal"
    assert p.optval == pytest.approx(2.0, abs=1e-6)
    assert x.value[0, 0] == pytest.approx(1.0, abs=1e-5)


def test_infeasible():
    x = d.Variable()
    p = d.satisfy([x >= 0, x <= -1])
    sol = d.solve(p)
    assert sol.status is SolveStatus.INFEASIBLE
    assert p.status == "Infeasible"
    assert p.optval == np.inf


def test_infeasible_maximize_reports_minus_infinity():
    x = d.Variable()
    p = d.maximize(x, [x >= 0, x <= -1])
    d.solve(p)
    assert p.status == "Infeasible"
    assert p.optval == -np.inf


def test_unbounded():
    x = d.Variable()
    p = d.minimize(x, [x <= 1])
    sol = d.solve(p)
    assert sol.status is SolveStatus.UNBOUNDED
    assert p.optval == -np.inf
    p = d.maximize(x + d.sqrt(x))
    d.solve(p)
    assert p.status == "Unbounded"
    assert p.optval == np.inf


def test_unsupported_cone_is_a_status():
    x = d.Variable()
    p = d.minimize(d.exp(x))
    sol = d.solve(p)
    assert sol.status is SolveStatus.UNSUPPORTED_CONE
    assert "Exponential" in sol.message
    assert x.value is None


def test_iteration_limit():
    x = d.Variable(3)
    p = d.minimize(d.norm_2(x - np.array([1.0, 2.0, 3.0])) + d.norm_1(x))
    sol = d.solve(p, max_iters=10, check_every=5)
    assert sol.status is SolveStatus.ITER_LIMIT
    assert sol.iterations == 10


def test_settings_validated():
    with pytest.raises(ValueError):
        SolveSettings(abstol=-1)
    with pytest.raises(ValueError):
        SolveSettings(max_iters=0)


def test_deterministic():
    def run():
        x = d.Variable(3, name="x")
        p = d.minimize(d.norm_2(x - np.array([3.0, 1.0, 2.0])), [d.sum(x) == 1, x >= 0])
        sol = d.solve(p)
        return sol.x, sol.iterations

    (x1, i1), (x2, i2) = run(), run()
    assert i1 == i2
    np.testing.assert_array_equal(x1, x2)


def test_duals_written_back():
    x = d.Variable(name="x")
    con = x >= 2
    p = d.minimize(d.square(x), [con])
    d.solve(p)
    # stationarity 2x - y = 0 at x = 2 for the '>=' multiplier
    assert con.dual_value[0, 0] == pytest.approx(4.0, abs=1e-4)
