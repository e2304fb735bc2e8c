import math
import warnings

import numpy as np
import pytest
from scipy import special

from tfponet.errors import AmbiguousSideError, DomainError
from tfponet.problem import InterfaceProblem, Piece, PiecewiseField, make_problem
from tfponet.tfpm2d import (
    CellGrid,
    Tfpm2dSolver,
    assemble_and_solve_2d,
    basis_labels,
    cell_basis_eval,
    evaluate_2d,
    make_grid,
    particular_term_2d,
)


def field2(*pieces, breakpoints=()):
    return PiecewiseField(tuple(breakpoints), tuple(pieces), 2)


def reaction_problem(c, bc, source=0.0):
    """-Lap u + c u = source on the square, no interface, a = 1."""
    return InterfaceProblem(
        "manufactured", 2, ((-1.0, 1.0), (-1.0, 1.0)), (),
        field2(Piece.constant(1.0)), field2(Piece.constant(c)), field2(Piece.constant(source)), (), (), bc,
    )


def exp_problem():
    return reaction_problem(4.0, lambda x1, x2: np.exp(2.0 * np.asarray(x1)) + 0.0 * np.asarray(x2))


def one_cell(mu, radius_scale=1.0, source=0.0, a=1.0):
    # a single square cell centred at the origin with circumradius sqrt(2) * radius_scale / a
    e = np.array([-radius_scale, radius_scale]) / math.sqrt(2.0)
    return CellGrid(e, e.copy(), np.array([a]), np.array([mu]), np.array([source]), np.array([0]))


def example3(f_piece=None):
    f_piece = f_piece or Piece.expr("sin_pi")
    return make_problem("example3", PiecewiseField((0.0,), (f_piece, f_piece)))


# ---------------------------------------------------------------- cell bases


def test_basis_labels():
    assert basis_labels(3) == [(0, "cos"), (1, "cos"), (1, "sin"), (2, "cos"), (2, "sin")]


def test_order0_at_center():
    g = one_cell(1.5)
    value, grad = cell_basis_eval(g, 0, 0, [0.0, 0.0])
    assert value == pytest.approx(1.0 / special.iv(0, 1.5), rel=1e-14)
    np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_sin_component_vanishes_on_axis():
    g = one_cell(2.0)
    value, _ = cell_basis_eval(g, 0, 2, [0.4, 0.0])
    assert value == pytest.approx(0.0, abs=1e-15)


def test_normalized_at_circumradius():
    g = one_cell(1.0)
    value, _ = cell_basis_eval(g, 0, 0, [1.0, 0.0])
    assert value == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("k", range(5))
def test_basis_matches_bessel_closed_form(k):
    mu, a = 3.0, 0.5
    g = one_cell(mu, a=a)
    pt = np.array([0.2, -0.15])
    y = pt / a
    r, th = np.hypot(*y), np.arctan2(y[1], y[0])
    n, kind = basis_labels(3)[k]
    radius = 1.0 / a
    trig = math.cos(n * th) if kind == "cos" else math.sin(n * th)
    expected = special.iv(n, mu * r) * trig / special.iv(n, mu * radius)
    value, grad = cell_basis_eval(g, 0, k, pt)
    assert value == pytest.approx(expected, rel=1e-12)
    h = 1e-6
    fd = [(cell_basis_eval(g, 0, k, pt + h * e)[0] - cell_basis_eval(g, 0, k, pt - h * e)[0]) / (2 * h)
          for e in np.eye(2)]
    np.testing.assert_allclose(grad, fd, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("k", range(5))
def test_basis_solves_modified_helmholtz(k):
    mu = 2.5
    g = one_cell(mu)
    pt = np.array([0.3, 0.2])
    h = 1e-4
    lap = sum(cell_basis_eval(g, 0, k, pt + h * e)[0] + cell_basis_eval(g, 0, k, pt - h * e)[0] for e in np.eye(2))
    u = cell_basis_eval(g, 0, k, pt)[0]
    lap = (lap - 4 * u) / h**2
    assert abs(-lap + mu**2 * u) < 1e-6


def test_harmonic_fallback_basis():
    g = one_cell(0.0)
    for k in range(5):
        pt = np.array([0.3, 0.2])
        h = 1e-4
        lap = sum(cell_basis_eval(g, 0, k, pt + h * e)[0] + cell_basis_eval(g, 0, k, pt - h * e)[0]
                  for e in np.eye(2)) - 4 * cell_basis_eval(g, 0, k, pt)[0]
        assert abs(lap / h**2) < 1e-6
    value, _ = cell_basis_eval(g, 0, 1, [1.0, 0.0])
    assert value == pytest.approx(1.0)


def test_large_arguments_stay_finite():
    g = one_cell(1e4)
    for k in range(5):
        for pt in ([0.0, 0.0], [0.5, 0.5], [0.7, -0.1]):
            value, grad = cell_basis_eval(g, 0, k, pt)
            assert np.isfinite(value) and np.all(np.isfinite(grad))
            assert abs(value) <= 1.0 + 1e-12


def test_basis_index_checked():
    with pytest.raises(DomainError):
        cell_basis_eval(one_cell(1.0), 0, 5, [0.0, 0.0])


# ---------------------------------------------------------------- particular term


def test_particular_examples():
    assert particular_term_2d(one_cell(1.0, source=0.0), 0, [0.1, 0.2]) == 0.0
    assert particular_term_2d(one_cell(1.0, source=2.0), 0, [0.1, 0.2]) == pytest.approx(2.0)
    with pytest.warns(RuntimeWarning):
        v = particular_term_2d(one_cell(0.0, source=1.0), 0, [0.3, 0.4])
    assert v == pytest.approx(-0.25 * 0.25)


# ---------------------------------------------------------------- solver


def test_zero_data_gives_zero_solution():
    p = reaction_problem(2.0, lambda x1, x2: np.zeros(np.broadcast(x1, x2).shape))
    sol = assemble_and_solve_2d(p, make_grid(p, 6, 6))
    np.testing.assert_array_equal(sol.coefficients, 0.0)
    assert evaluate_2d(sol, [0.3, -0.2]) == 0.0


@pytest.mark.filterwarnings("ignore:2D collocation residual")
def test_manufactured_convergence():
    p = exp_problem()
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.9, 0.9, (400, 2))
    errors = []
    for n in (8, 16, 32):
        sol = assemble_and_solve_2d(p, make_grid(p, n, n))
        errors.append(np.max(np.abs(sol.evaluate(pts) - np.exp(2 * pts[:, 0]))))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-3


def test_manufactured_center_value():
    p = exp_problem()
    sol = assemble_and_solve_2d(p, make_grid(p, 16, 16))
    assert evaluate_2d(sol, [0.0, 0.0]) == pytest.approx(1.0, abs=5e-3)


@pytest.mark.filterwarnings("ignore:2D collocation residual")
def test_cell_center_value_is_leading_coefficient():
    p = exp_problem()
    g = make_grid(p, 8, 8)
    sol = assemble_and_solve_2d(p, g)
    c = 27
    expected = sol.coefficients[c, 0] / special.iv(0, g.mu[c] * g.radius[c])
    assert evaluate_2d(sol, g.centers[c]) == pytest.approx(expected, rel=1e-12)


def test_example3_interface_jumps():
    p = example3()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = assemble_and_solve_2d(p, make_grid(p, 16, 16))
    # Gauss points on the interface edges
    edges = np.linspace(-1, 1, 17)
    mid, half = 0.5 * (edges[:-1] + edges[1:]), 0.5 * (edges[1] - edges[0])
    t = np.concatenate([mid - half / math.sqrt(3), mid + half / math.sqrt(3)])
    jump_u, jump_flux = sol.interface_jumps(t)
    assert np.max(np.abs(jump_u - 1.0)) <= sol.residual
    radius = np.mean(sol.grid.radius)
    assert np.max(np.abs(jump_flux)) * radius <= sol.residual


def test_example3_residual_decreases_with_order():
    p = example3()
    g = make_grid(p, 16, 16)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = [Tfpm2dSolver(p, g, k).solve().residual for k in (2, 3, 4)]
    assert res[0] >= res[1] >= res[2]


def test_example3_symmetry():
    p = example3(Piece.affine(0.7, 0.2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = assemble_and_solve_2d(p, make_grid(p, 16, 16))
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, (200, 2))
    mirrored = pts * np.array([1.0, -1.0])
    assert np.max(np.abs(sol.evaluate(pts) - sol.evaluate(mirrored))) < 10 * sol.residual


def test_example3_warns_about_corner_incompatibility():
    p = example3()
    with pytest.warns(RuntimeWarning, match="residual"):
        assemble_and_solve_2d(p, make_grid(p, 8, 8))


@pytest.mark.filterwarnings("ignore:2D collocation residual")
def test_solver_reuse_with_new_boundary_data():
    p = exp_problem()
    solver = Tfpm2dSolver(p, make_grid(p, 8, 8))
    doubled = p.with_boundary(lambda x1, x2: 2.0 * np.exp(2.0 * np.asarray(x1)) + 0.0 * np.asarray(x2))
    pts = np.array([[0.1, 0.2], [-0.5, 0.6]])
    np.testing.assert_allclose(solver.solve(doubled).evaluate(pts), 2 * solver.solve().evaluate(pts), rtol=1e-10)


def test_grid_and_evaluation_errors():
    p = example3()
    with pytest.raises(DomainError):
        make_grid(p, 7, 8)
    with pytest.raises(DomainError):
        Tfpm2dSolver(p, make_grid(p, 4, 4), order=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = assemble_and_solve_2d(p, make_grid(p, 4, 4))
    with pytest.raises(AmbiguousSideError):
        sol.evaluate([[0.0, 0.3]])
    with pytest.raises(DomainError):
        sol.evaluate([[1.5, 0.0]])
    left, right = sol.evaluate([[0.0, 0.3]], "left"), sol.evaluate([[0.0, 0.3]], "right")
    assert right[0] - left[0] == pytest.approx(1.0, abs=sol.residual)


def test_cells_do_not_straddle_interface():
    g = make_grid(example3(), 8, 4)
    assert 0.0 in g.x1_edges
    left = g.centers[:, 0] < 0
    assert np.all(g.subdomain[left] == 0) and np.all(g.subdomain[~left] == 1)
    assert np.all(g.mu >= 0)
