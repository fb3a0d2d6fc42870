"""Sampled checks that each atom's declared curvature and monotonicity hold numerically."""

import numpy as np
import pytest

import disco as d
from disco import DomainError, Monotonicity, Sign, UnknownAtomError, Vexity, atoms
from disco.expr import evaluate

ND, NI = Monotonicity.NONDECREASING, Monotonicity.NONINCREASING
RNG = np.random.default_rng(3)

# tag -> argument shapes; a scalar last argument for quad_over_lin
NONLINEAR = {
    "abs": [(3, 1)], "max": [(3, 1)], "min": [(3, 1)], "maximum": [(3, 1), (3, 1)],
    "minimum": [(3, 1), (3, 1)], "norm_inf": [(3, 1)], "norm_2": [(3, 1)],
    "square": [(3, 1)], "sqrt": [(3, 1)], "geo_mean": [(3, 1), (3, 1)],
    "quad_over_lin": [(3, 1), (1, 1)], "inv_pos": [(3, 1)], "exp": [(3, 1)],
    "log": [(3, 1)], "logsumexp": [(3, 1)], "pos": [(3, 1)], "neg": [(3, 1)],
    "norm_1": [(3, 1)], "norm_fro": [(2, 2)], "sum_squares": [(3, 1)],
    "operatornorm": [(2, 3)], "nuclearnorm": [(2, 3)],
}
# atoms only defined for positive arguments (log and inv_pos strictly)
POSITIVE_ONLY = {"sqrt": [0], "geo_mean": [0, 1], "log": [0], "inv_pos": [0],
                 "quad_over_lin": [1]}


def _sample(shape, sign, n):
    raw = RNG.normal(size=(n, *shape)) * 3
    if sign is Sign.POSITIVE:
        return np.abs(raw) + 1e-3
    if sign is Sign.NEGATIVE:
        return -np.abs(raw) - 1e-3
    return raw


def _regimes(tag):
    shapes = NONLINEAR[tag]
    forced = POSITIVE_ONLY.get(tag, [])
    out = []
    for s in (Sign.POSITIVE, Sign.NEGATIVE, Sign.NOSIGN):
        regime = [Sign.POSITIVE if i in forced else s for i in range(len(shapes))]
        if regime not in out:
            out.append(regime)
    return out


def _f(tag, args):
    return float(np.asarray(atoms.lookup(tag).evaluate(list(args), ())).ravel()[0])


@pytest.mark.parametrize("tag", sorted(NONLINEAR))
def test_curvature_by_sampling(tag):
    shapes = NONLINEAR[tag]
    for regime in _regimes(tag):
        vex = atoms.curvature(tag, regime)
        if not (vex.is_convex or vex.is_concave):
            continue
        side = 1.0 if vex is Vexity.CONVEX else -1.0
        a = [_sample(sh, s, 1000) for sh, s in zip(shapes, regime)]
        b = [_sample(sh, s, 1000) for sh, s in zip(shapes, regime)]
        theta = RNG.uniform(size=1000)
        for k in range(1000):
            t = theta[k]
            mid = [t * u[k] + (1 - t) * v[k] for u, v in zip(a, b)]
            chord = t * _f(tag, [u[k] for u in a]) + (1 - t) * _f(tag, [v[k] for v in b])
            assert side * (_f(tag, mid) - chord) <= 1e-9 * (1 + abs(chord)), (tag, regime)


@pytest.mark.parametrize("tag", sorted(NONLINEAR))
def test_monotonicity_by_sampling(tag):
    shapes = NONLINEAR[tag]
    for regime in _regimes(tag):
        monos = atoms.monotonicity(tag, regime)
        for i, m in enumerate(monos):
            if m not in (ND, NI):
                continue
            for _ in range(100):
                args = [_sample(sh, s, 1)[0] for sh, s in zip(shapes, regime)]
                other = _sample(shapes[i], regime[i], 1)[0]
                lo, hi = list(args), list(args)
                lo[i], hi[i] = np.minimum(args[i], other), np.maximum(args[i], other)
                diff = _f(tag, hi) - _f(tag, lo)
                if m is NI:
                    diff = -diff
                assert diff >= -1e-9, (tag, regime, i)


def test_sign_rules_by_sampling():
    for tag, shapes in NONLINEAR.items():
        for regime in _regimes(tag):
            s = atoms.sign(tag, regime)
            for _ in range(50):
                val = _f(tag, [_sample(sh, r, 1)[0] for sh, r in zip(shapes, regime)])
                if s is Sign.POSITIVE:
                    assert val >= 0, tag
                if s is Sign.NEGATIVE:
                    assert val <= 0, tag


def test_evaluate_known_values():
    x = d.Variable(2)
    x.value = [0.0, 0.0]
    assert d.logsumexp(x).value[0, 0] == pytest.approx(np.log(2))
    x.value = [3.0, -4.0]
    assert d.norm_inf(x).value[0, 0] == 4.0
    assert d.max(x).value[0, 0] == 3.0
    assert d.min(x).value[0, 0] == -4.0
    assert d.pos(x).value.ravel().tolist() == [3.0, 0.0]
    assert d.neg(x).value.ravel().tolist() == [0.0, 4.0]
    assert d.sum_squares(x).value[0, 0] == 25.0
    assert d.quad_over_lin(x, 5.0).value[0, 0] == 5.0
    M = d.Variable(2, 2)
    M.value = [[2.0, 0.0], [0.0, -3.0]]
    assert d.operatornorm(M).value[0, 0] == pytest.approx(3.0)
    assert d.nuclearnorm(M).value[0, 0] == pytest.approx(5.0)
    assert d.diag(M).value.ravel().tolist() == [2.0, -3.0]


def test_composites_match_their_expansions():
    v = d.Variable(4)
    M = d.Variable(2, 3)
    for _ in range(20):
        v.value = RNG.normal(size=4)
        M.value = RNG.normal(size=(2, 3))
        vals = v.value.ravel()
        assert d.norm_1(v).value[0, 0] == pytest.approx(d.sum(d.abs(v)).value[0, 0], rel=1e-12)
        assert d.sum_squares(v).value[0, 0] == pytest.approx(np.sum(vals ** 2), rel=1e-12)
        assert d.norm_fro(M).value[0, 0] == pytest.approx(
            d.norm_2(d.vec(M)).value[0, 0], rel=1e-12)
        np.testing.assert_array_equal(d.neg(v).value, d.pos(-v).value)


@pytest.mark.parametrize("build", [
    lambda x: d.sqrt(x), lambda x: d.log(x), lambda x: d.inv_pos(x),
    lambda x: d.geo_mean(x, x), lambda x: d.quad_over_lin(x, x)])
def test_domain_errors(build):
    x = d.Variable()
    x.value = -1.0
    with pytest.raises(DomainError):
        evaluate(build(x))
    assert build(x).value is None


def test_unknown_atom():
    with pytest.raises(UnknownAtomError) as info:
        atoms.lookup("foo")
    assert "norm_2" in str(info.value)


def test_registry_is_frozen_after_a_problem_exists():
    d.minimize(d.square(d.Variable()))
    desc = atoms.lookup("square")
    with pytest.raises(RuntimeError):
        d.register_atom(desc, replace=True)


def test_arity_checked():
    with pytest.raises(d.DisciplineError):
        d.expr.apply_atom("square", [d.Variable(), d.Variable()])


def test_every_atom_has_a_template():
    import disco.conic  # noqa: F401  (attaches the templates)

    for desc in atoms.catalog():
        assert desc.is_composite or desc.template is not None, desc.tag
