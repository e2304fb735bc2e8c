import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tfponet.errors import AmbiguousSideError, ConfigError, DomainError
from tfponet.problem import (
    REGISTRY,
    Piece,
    PiecewiseField,
    Transform1d,
    Transform2d,
    jump_operators,
    load_problem,
    make_problem,
    problem_from_dict,
    problem_to_dict,
    transform_y_1d,
    transformed_coefficients,
)


def const_field(*values, breakpoints=None, dimension=1):
    if breakpoints is None:
        breakpoints = tuple(np.linspace(0, 1, len(values) + 1)[1:-1])
    return PiecewiseField(tuple(breakpoints), tuple(Piece.constant(v) for v in values), dimension)


def unit_problem(a, b=None, f=None):
    zero = const_field(*[0.0] * a.n_pieces, breakpoints=a.breakpoints)
    k = len(a.breakpoints)
    return problem_from_dict({
        "domain": [0.0, 1.0],
        "interfaces": list(a.breakpoints),
        "a": [p.to_config() for p in a.pieces],
        "b": [p.to_config() for p in (b or zero).pieces],
        "f": [p.to_config() for p in (f or zero).pieces],
        "g_d": [0.0] * k,
        "g_n": [0.0] * k,
    })


# ---------------------------------------------------------------- transform


def test_transform_identity():
    assert transform_y_1d(const_field(1.0), 0.7) == pytest.approx(0.7, abs=1e-15)


def test_transform_constant_small_coefficient():
    assert transform_y_1d(const_field(1e-4), 0.5) == pytest.approx(5000.0, rel=1e-14)


def test_transform_step_coefficient():
    a = const_field(1.0, 1e-4)
    assert transform_y_1d(a, 0.75) == pytest.approx(2500.5, rel=1e-14)


def test_transform_affine_piece_matches_log():
    a = PiecewiseField((), (Piece.affine(2.0, 1.0),))
    # int_0^x ds / (2s + 1) = log(2x + 1) / 2
    assert transform_y_1d(a, 0.3) == pytest.approx(np.log(1.6) / 2, rel=1e-13)


def test_transform_quadrature_piece_matches_closed_form():
    a = PiecewiseField((), (Piece.from_callable(lambda x: 1.0 + x * x),))
    assert transform_y_1d(a, 0.8) == pytest.approx(np.arctan(0.8), rel=1e-11)


def test_transform_outside_domain():
    with pytest.raises(DomainError):
        transform_y_1d(const_field(1.0), 1.5)
    with pytest.raises(DomainError):
        Transform1d(const_field(1.0), (0.0, 1.0)).x_of_y(-0.2)


@st.composite
def random_constant_a(draw):
    n = draw(st.integers(1, 4))
    cuts = sorted(draw(st.lists(st.floats(0.05, 0.95), min_size=n - 1, max_size=n - 1, unique=True)))
    if any(b - a < 1e-3 for a, b in zip(cuts, cuts[1:])):
        cuts = list(np.linspace(0, 1, n + 1)[1:-1])
    vals = draw(st.lists(st.floats(1e-4, 10.0), min_size=n, max_size=n))
    return PiecewiseField(tuple(cuts), tuple(Piece.constant(v) for v in vals))


@given(random_constant_a(), st.floats(0, 1), st.floats(0, 1))
def test_transform_strictly_monotone(a, x1, x2):
    if x1 == x2:
        return
    lo, hi = sorted((x1, x2))
    t = Transform1d(a, (0.0, 1.0))
    assert t.y_of_x(hi) > t.y_of_x(lo)


@given(random_constant_a(), st.floats(0, 1))
def test_transform_round_trip(a, x):
    t = Transform1d(a, (0.0, 1.0))
    assert abs(t.x_of_y(t.y_of_x(x)) - x) <= 1e-10


@given(st.floats(0.01, 0.99))
def test_transform_round_trip_affine(x):
    a = PiecewiseField((0.5,), (Piece.affine(2.0, 1.0), Piece.affine(-2.0, 3.0)))
    t = Transform1d(a, (0.0, 1.0))
    assert t.x_of_y(t.y_of_x(x)) == pytest.approx(x, abs=1e-12)


def test_transform_derivative_is_reciprocal():
    a = const_field(2.0, 4.0)
    t = Transform1d(a, (0.0, 1.0))
    assert t.dy_dx(0.25) == pytest.approx(0.5)
    assert t.dy_dx(0.5, side="right") == pytest.approx(0.25)


def test_transform_2d_rejects_variable_coefficient():
    a = PiecewiseField((0.0,), (Piece.affine(1.0, 2.0), Piece.constant(1.0)), 2)
    with pytest.raises(ConfigError):
        Transform2d(a, ((-1, 1), (-1, 1)))


def test_transform_2d_round_trip():
    a = PiecewiseField((0.0,), (Piece.constant(1e-3), Piece.constant(2e-3)), 2)
    t = Transform2d(a, ((-1, 1), (-1, 1)))
    x = np.array([[-0.3, 0.4], [0.6, -0.9]])
    y = t.y_of_x(x)
    assert y[0, 1] == pytest.approx(1.4 / 1e-3)
    np.testing.assert_allclose(t.x_of_y(y), x, atol=1e-12)


# ---------------------------------------------------------------- coefficients


def test_transformed_coefficients_identity_map():
    a = const_field(1.0)
    b = PiecewiseField((), (Piece.affine(2.0, 1.0),))
    f = PiecewiseField((), (Piece.expr("sin_pi"),))
    p = unit_problem(a, b, f)
    c, F = transformed_coefficients(p, 0.25)
    assert c == pytest.approx(1.5)
    _, F = transformed_coefficients(p, 0.5)
    assert F == pytest.approx(1.0)


def test_transformed_coefficient_scaled():
    p = unit_problem(const_field(1e-4), const_field(1.0))
    for y in (0.0, 1234.5, 10000.0):
        c, _ = transformed_coefficients(p, y)
        assert c == pytest.approx(1e-4)


# ---------------------------------------------------------------- jumps


@pytest.mark.parametrize(
    "left, right, a_left, a_right, expected",
    [
        ((1.0, 2.0), (2.0, 2.0), 1.0, 1.0, (1.0, 0.0)),
        ((0.3, -1.0), (0.3, -1.0), 1.0, 1.0, (0.0, 0.0)),
        ((0.0, 1.0), (0.0, 1.0), 1.0, 1e-4, (0.0, -0.9999)),
    ],
)
def test_jump_operators_examples(left, right, a_left, a_right, expected):
    assert jump_operators(left, right, a_left, a_right) == pytest.approx(expected, abs=1e-15)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(1e-6, 1e3))
def test_jump_operators_continuity(value, slope, a):
    assert jump_operators((value, slope), (value, slope), a, a) == (0.0, 0.0)


# ---------------------------------------------------------------- fields


def test_interface_needs_side():
    a = const_field(1.0, 2.0)
    with pytest.raises(AmbiguousSideError):
        a(0.5)
    assert a(0.5, side="left") == 1.0
    assert a(0.5, side="right") == 2.0
    assert a(0.5, side=1) == 2.0


def test_array_sides():
    a = const_field(1.0, 2.0)
    np.testing.assert_array_equal(a(np.array([0.5, 0.5, 0.2]), side=np.array([-1, 1, 1])), [1.0, 2.0, 1.0])


def test_grid_piece_interpolates_linearly():
    p = Piece.grid([0.0, 1.0, 2.0], [0.0, 2.0, 0.0])
    assert p(0.25) == pytest.approx(0.5)
    assert p(1.5) == pytest.approx(1.0)


def test_field_evaluates_on_first_coordinate_in_2d():
    a = PiecewiseField((0.0,), (Piece.constant(-1.0), Piece.affine(1.0, 0.0)), 2)
    np.testing.assert_allclose(a(np.array([[-0.5, 0.9], [0.25, -0.7]])), [-1.0, 0.25])


def test_bad_fields_rejected():
    with pytest.raises(ConfigError):
        PiecewiseField((0.5,), (Piece.constant(1.0),))
    with pytest.raises(ConfigError):
        PiecewiseField((0.6, 0.4), (Piece.constant(1.0),) * 3)
    with pytest.raises(ConfigError):
        Piece.grid([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ConfigError):
        Piece.expr("no_such_expression")


# ---------------------------------------------------------------- problems


def test_nonpositive_coefficient_rejected():
    with pytest.raises(ConfigError):
        unit_problem(const_field(1.0, -1.0))


def test_discontinuous_solution_needs_two_subdomains():
    with pytest.raises(ConfigError):
        problem_from_dict({"domain": [0, 1], "a": {"constant": 1.0}, "g_d": [1.0], "interfaces": []})


@pytest.mark.parametrize("name", REGISTRY)
def test_registry_problems(name):
    p = make_problem(name)
    assert p.n_subdomains == 2
    lo, hi = p.x1_range
    x = np.linspace(lo, hi, 101)
    x = x[~np.isin(x, p.interfaces)]
    pts = x if p.dimension == 1 else np.column_stack([x, np.zeros_like(x)])
    assert np.all(p.a(pts) > 0)
    assert np.all(p.b(pts) >= 0)


def test_registry_coefficients():
    p = make_problem("example2")
    assert p.b(0.25) == 5000.0
    assert p.b(0.75) == pytest.approx(100 * (4 + 32 * 0.75))
    assert p.jump_values(0) == (1.0, 1.0)
    q = make_problem("example1_contrast")
    assert q.a(0.5, side="left") == 1.0 and q.a(0.5, side="right") == 1e-4
    assert q.b(0.2) == pytest.approx(1.4) and q.b(0.8) == pytest.approx(1.4)


def test_example3_boundary_data():
    f = PiecewiseField((0.0,), (Piece.affine(1.0, 0.0), Piece.affine(1.0, 0.0)))
    p = make_problem("example3", f)
    h = p.bc
    assert h(0.5, 1.0) == pytest.approx(0.5)
    assert h(-0.25, -1.0) == pytest.approx(-0.25)
    assert h(1.0, 0.3) == 0.0
    assert h(-1.0, 1.0) == 0.0
    assert p.jump_values(0, np.array([0.1, 0.2]))[0].tolist() == [1.0, 1.0]


def test_config_round_trip(tmp_path):
    p = make_problem("example1_contrast")
    cfg = problem_to_dict(p)
    path = tmp_path / "p.json"
    path.write_text(json.dumps(cfg))
    q = load_problem(path)
    assert q == p


def test_toml_config(tmp_path):
    path = tmp_path / "p.toml"
    path.write_text(
        'domain = [0.0, 1.0]\ninterfaces = [0.5]\n'
        'a = [{constant = 1.0}, {constant = 0.0001}]\n'
        'b = ["expr:ex1_b_left", "expr:ex1_b_right"]\n'
        'f = {grid = {x = [0.0, 1.0], values = [1.0, 3.0]}}\n'
        'g_d = 0.0\ng_n = 0.0\nbc = [0.0, 0.0]\n'
    )
    p = load_problem(path)
    assert p.a(0.9) == 1e-4
    assert p.b(0.25) == pytest.approx(1.5)
    assert p.f(0.25) == pytest.approx(1.5)


def test_registry_config_with_source():
    p = problem_from_dict({"example": "example2", "f": {"constant": 2.0}})
    assert p.f(0.3) == 2.0
    assert p.jump_values(0) == (1.0, 1.0)


def test_bad_config(tmp_path):
    with pytest.raises(ConfigError):
        problem_from_dict({"domain": [0, 1]})
    with pytest.raises(ConfigError):
        problem_from_dict({"domain": [0, 1], "interfaces": [0.5], "a": [{"constant": 1.0}]})
    bad = tmp_path / "bad.toml"
    bad.write_text("domain = [")
    with pytest.raises(ConfigError):
        load_problem(bad)
    with pytest.raises(ConfigError):
        load_problem(tmp_path / "missing.toml")
