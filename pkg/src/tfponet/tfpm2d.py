"""Tailored finite point solver for 2D interface problems on rectangular cells.

Inside each cell the coefficients are frozen to constants, so with local
coordinates ``y = (x - center) / a`` the equation becomes
``-Lap u + mu^2 u = F`` with ``mu^2`` and ``F`` the cell averages of ``a b``
and ``a f``.  The local expansion is a truncated Fourier-Bessel series

    u = F / mu^2 + sum_n I_n(mu r) (a_n cos n theta + b_n sin n theta) / I_n(mu R)

with ``R`` the cell circumradius.  Values and normal fluxes are matched in
least squares at two Gauss points on every edge, together with the Dirichlet
data and the interface jump targets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import AmbiguousSideError, DomainError, NumericalError
from .problem import InterfaceProblem, Transform2d, _side_sign
from .specialfn import bessel_i_array

HARMONIC_MU = 1e-8
_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_TIKHONOV = 1e-12


def basis_labels(order):
    """``[(n, 'cos' | 'sin'), ...]`` for truncation order ``order`` (2K-1 entries)."""
    out = [(0, "cos")]
    for n in range(1, order):
        out += [(n, "cos"), (n, "sin")]
    return out


@dataclass(frozen=True)
class CellGrid:
    """Uniform rectangular cells; the interface line is a column of edges.

    Cell ``c = i * ny + k`` has column ``i`` (along x1) and row ``k``.
    ``mu`` and ``radius`` are in the cell's local (stretched) units.
    """

    x1_edges: np.ndarray
    x2_edges: np.ndarray
    a: np.ndarray
    mu: np.ndarray
    source: np.ndarray
    subdomain: np.ndarray

    @property
    def nx(self):
        return len(self.x1_edges) - 1

    @property
    def ny(self):
        return len(self.x2_edges) - 1

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def half_widths(self):
        return 0.5 * (self.x1_edges[1] - self.x1_edges[0]), 0.5 * (self.x2_edges[1] - self.x2_edges[0])

    @property
    def centers(self):
        c1 = 0.5 * (self.x1_edges[:-1] + self.x1_edges[1:])
        c2 = 0.5 * (self.x2_edges[:-1] + self.x2_edges[1:])
        g1, g2 = np.meshgrid(c1, c2, indexing="ij")
        return np.column_stack([g1.ravel(), g2.ravel()])

    @property
    def radius(self):
        hx, hy = self.half_widths
        return np.hypot(hx, hy) / self.a

    def cell_index(self, i, k):
        return np.asarray(i) * self.ny + np.asarray(k)

    def locate(self, points, side=None, interface=None):
        """Containing cell of each point (``side`` resolves points on the interface)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x1, x2 = pts[:, 0], pts[:, 1]
        e1, e2 = self.x1_edges, self.x2_edges
        tol = 1e-12 * (e1[-1] - e1[0])
        if np.any((x1 < e1[0] - tol) | (x1 > e1[-1] + tol) | (x2 < e2[0] - tol) | (x2 > e2[-1] + tol)):
            raise DomainError("point outside the domain")
        i = np.clip(np.searchsorted(e1, x1, side="right") - 1, 0, self.nx - 1)
        k = np.clip(np.searchsorted(e2, x2, side="right") - 1, 0, self.ny - 1)
        if interface is not None:
            on = x1 == interface
            if np.any(on):
                if side is None:
                    raise AmbiguousSideError("point on the interface needs side='left' or 'right'")
                if np.ndim(side) == 0:
                    signs = np.full(len(x1), _side_sign(side))
                else:
                    signs = np.array([_side_sign(s) for s in side])
                col = np.searchsorted(e1, interface)
                i = np.where(on, np.where(signs < 0, col - 1, col), i)
        return self.cell_index(i, k)


def make_grid(problem: InterfaceProblem, nx, ny) -> CellGrid:
    """``nx`` by ``ny`` uniform cells; averages of ``a b`` and ``a f`` by 2x2 Gauss."""
    if problem.dimension != 2:
        raise DomainError("make_grid needs a 2D problem")
    (lo1, hi1), (lo2, hi2) = problem.domain
    e1 = np.linspace(lo1, hi1, nx + 1)
    e2 = np.linspace(lo2, hi2, ny + 1)
    for s in problem.interfaces:
        hit = np.isclose(e1, s, rtol=0, atol=1e-12 * (hi1 - lo1))
        if not hit.any():
            raise DomainError("the interface must fall on a cell edge (choose nx accordingly)")
        e1[hit] = s
    Transform2d(problem.a, problem.domain)  # rejects non-constant a
    c1 = 0.5 * (e1[:-1] + e1[1:])
    half = 0.5 * (e1[1] - e1[0])
    sub_col = problem.a.subdomain_index(c1)
    a_col = np.array([problem.a.piece_values(s, np.array([c]))[0] for s, c in zip(sub_col, c1)])
    c_col = np.zeros(nx)
    f_col = np.zeros(nx)
    for g in _GAUSS2:
        xs = c1 + half * g
        for idx, s in enumerate(sub_col):
            x = np.array([xs[idx]])
            c_col[idx] += 0.5 * a_col[idx] * problem.b.piece_values(s, x)[0]
            f_col[idx] += 0.5 * a_col[idx] * problem.f.piece_values(s, x)[0]
    if np.any(c_col < -1e-12):
        raise DomainError("a b must be nonnegative")
    rep = lambda v: np.repeat(v, ny)
    return CellGrid(e1, e2, rep(a_col), rep(np.sqrt(np.maximum(c_col, 0.0))), rep(f_col), rep(sub_col))


def _local(grid: CellGrid, cells, points):
    centers = grid.centers[cells]
    y = (np.asarray(points, dtype=float) - centers) / grid.a[cells][:, None]
    return y


def _basis_block(grid: CellGrid, cells, y, order):
    """Basis values ``(n, 2K-1)`` and local gradients ``(n, 2K-1, 2)``."""
    cells = np.asarray(cells)
    n_pts = len(cells)
    labels = basis_labels(order)
    vals = np.zeros((n_pts, len(labels)))
    grads = np.zeros((n_pts, len(labels), 2))
    r = np.hypot(y[:, 0], y[:, 1])
    theta = np.arctan2(y[:, 1], y[:, 0])
    ct, st = np.cos(theta), np.sin(theta)
    mu = grid.mu[cells]
    big_r = grid.radius[cells]
    harmonic = mu < HARMONIC_MU
    mr, mR = mu * r, mu * big_r
    for col, (n, kind) in enumerate(labels):
        trig = np.cos(n * theta) if kind == "cos" else np.sin(n * theta)
        dtrig = -n * np.sin(n * theta) if kind == "cos" else n * np.cos(n * theta)
        # radial profile, its r-derivative, and profile / r (for the angular part)
        prof = np.empty(n_pts)
        dprof = np.empty(n_pts)
        over_r = np.empty(n_pts)
        h = harmonic
        if h.any():
            rr, RR = r[h], big_r[h]
            prof[h] = (rr / RR) ** n
            dprof[h] = n * rr ** max(n - 1, 0) / RR**n if n > 0 else 0.0
            over_r[h] = rr ** max(n - 1, 0) / RR**n if n > 0 else 0.0
        b = ~h
        if b.any():
            m, z, zR = mu[b], mr[b], mR[b]
            scale = np.exp(z - zR)
            den = bessel_i_array(n, zR, scaled=True)
            prof[b] = bessel_i_array(n, z, scaled=True) / den * scale
            lo = bessel_i_array(abs(n - 1), z, scaled=True)
            hi = bessel_i_array(n + 1, z, scaled=True)
            dprof[b] = m * (0.5 * (lo + hi) if n > 0 else hi) / den * scale
            over_r[b] = m * (lo - hi) / (2 * n) / den * scale if n > 0 else 0.0
        vals[:, col] = prof * trig
        gr = dprof * trig
        gt = over_r * dtrig
        grads[:, col, 0] = gr * ct - gt * st
        grads[:, col, 1] = gr * st + gt * ct
    return vals, grads


def _particular_block(grid: CellGrid, cells, y):
    """Particular solution ``F/mu^2`` (``-F r^2/4`` when mu vanishes) and its local gradient."""
    mu = grid.mu[cells]
    src = grid.source[cells]
    harmonic = mu < HARMONIC_MU
    safe = np.where(harmonic, 1.0, mu)
    val = np.where(harmonic, -src * (y[:, 0] ** 2 + y[:, 1] ** 2) / 4.0, src / safe**2)
    grad = np.where(harmonic[:, None], -src[:, None] * y / 2.0, 0.0)
    return val, grad


def cell_basis_eval(grid: CellGrid, cell, k, point, order=3):
    """Value and x-gradient of basis function ``k`` (see :func:`basis_labels`) of ``cell``."""
    if not 0 <= k < 2 * order - 1:
        raise DomainError("basis index out of range")
    cells = np.array([cell])
    y = _local(grid, cells, np.atleast_2d(point))
    vals, grads = _basis_block(grid, cells, y, order)
    return float(vals[0, k]), grads[0, k] / grid.a[cell]


def particular_term_2d(grid: CellGrid, cell, point):
    cells = np.array([cell])
    if grid.mu[cell] < HARMONIC_MU and grid.source[cell] != 0:
        warnings.warn("vanishing mu with a nonzero source: using -F r^2/4", RuntimeWarning, stacklevel=2)
    val, _ = _particular_block(grid, cells, _local(grid, cells, np.atleast_2d(point)))
    return float(val[0])


class Tfpm2dSolver:
    """Collocation system for a fixed grid and coefficients; boundary data and
    jump targets can change between :meth:`solve` calls."""

    def __init__(self, problem: InterfaceProblem, grid: CellGrid, order=3):
        if order < 2:
            raise DomainError("truncation order must be at least 2")
        self.problem = problem
        self.grid = grid
        self.order = order
        self.nb = 2 * order - 1
        self._build()

    def _build(self):
        g = self.grid
        hx, hy = g.half_widths
        e1, e2 = g.x1_edges, g.x2_edges
        nx, ny = g.nx, g.ny
        interface = self.problem.interfaces[0] if self.problem.interfaces else None

        kk, ii = np.meshgrid(np.arange(ny), np.arange(nx - 1), indexing="ij")
        ii, kk = ii.ravel(), kk.ravel()
        xc = e1[ii + 1]
        t = 0.5 * (e2[kk] + e2[kk + 1])
        vert = {
            "left": g.cell_index(ii, kk), "right": g.cell_index(ii + 1, kk),
            "x1": np.concatenate([xc, xc]), "x2": np.concatenate([t + hy * _GAUSS2[0], t + hy * _GAUSS2[1]]),
        }
        vert["left"] = np.concatenate([vert["left"]] * 2)
        vert["right"] = np.concatenate([vert["right"]] * 2)
        vert["iface"] = vert["x1"] == interface if interface is not None else np.zeros(len(vert["x1"]), bool)

        kk, ii = np.meshgrid(np.arange(ny - 1), np.arange(nx), indexing="ij")
        ii, kk = ii.ravel(), kk.ravel()
        yc = e2[kk + 1]
        s = 0.5 * (e1[ii] + e1[ii + 1])
        horiz = {
            "left": np.concatenate([g.cell_index(ii, kk)] * 2),
            "right": np.concatenate([g.cell_index(ii, kk + 1)] * 2),
            "x1": np.concatenate([s + hx * _GAUSS2[0], s + hx * _GAUSS2[1]]),
            "x2": np.concatenate([yc, yc]),
        }

        # boundary points
        bc_cells, bc_pts = [], []
        for k in range(ny):
            for gp in _GAUSS2:
                x2 = 0.5 * (e2[k] + e2[k + 1]) + hy * gp
                bc_cells += [g.cell_index(0, k), g.cell_index(nx - 1, k)]
                bc_pts += [(e1[0], x2), (e1[-1], x2)]
        for i in range(nx):
            for gp in _GAUSS2:
                x1 = 0.5 * (e1[i] + e1[i + 1]) + hx * gp
                bc_cells += [g.cell_index(i, 0), g.cell_index(i, ny - 1)]
                bc_pts += [(x1, e2[0]), (x1, e2[-1])]
        self.bc_cells = np.array(bc_cells)
        self.bc_points = np.array(bc_pts)
        self.vert, self.horiz = vert, horiz

        nb = self.nb
        blocks_r, blocks_c, blocks_v = [], [], []
        row0 = 0
        self._pieces = []  # (row offset, kind, data) for assembling rhs

        def add(cells, coeffs):
            n = len(cells)
            r = np.repeat(np.arange(row0, row0 + n), nb)
            c = (cells[:, None] * nb + np.arange(nb)[None, :]).ravel()
            blocks_r.append(r)
            blocks_c.append(c)
            blocks_v.append(coeffs.ravel())

        for name, edges, axis in (("vert", vert, 0), ("horiz", horiz, 1)):
            pts = np.column_stack([edges["x1"], edges["x2"]])
            L, R = edges["left"], edges["right"]
            vl, gl = _basis_block(g, L, _local(g, L, pts), self.order)
            vr, gr = _basis_block(g, R, _local(g, R, pts), self.order)
            scale = 0.5 * (g.radius[L] + g.radius[R])
            add(R, vr)
            add(L, -vl)
            self._pieces.append((row0, name, "value", pts, L, R, scale))
            row0 += len(L)
            add(R, gr[:, :, axis] * scale[:, None])
            add(L, -gl[:, :, axis] * scale[:, None])
            self._pieces.append((row0, name, "flux", pts, L, R, scale))
            row0 += len(L)
        bv, _ = _basis_block(g, self.bc_cells, _local(g, self.bc_cells, self.bc_points), self.order)
        add(self.bc_cells, bv)
        self._bc_row0 = row0
        row0 += len(self.bc_cells)
        self.n_rows = row0

        A = sparse.csr_matrix(
            (np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
            shape=(row0, g.n_cells * nb),
        )
        A.sum_duplicates()
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=0))).ravel()
        if np.any(norms == 0):
            raise NumericalError("collocation system has an empty column")
        self.col_scale = 1.0 / norms
        self.A = A
        As = A @ sparse.diags(self.col_scale)
        self.As = As.tocsr()
        normal = (self.As.T @ self.As + _TIKHONOV * sparse.identity(As.shape[1])).tocsc()
        self._lu = splinalg.splu(normal)

    def rhs(self, problem: InterfaceProblem | None = None):
        p = self.problem if problem is None else problem
        g = self.grid
        b = np.zeros(self.n_rows)
        for row0, name, kind, pts, L, R, scale in self._pieces:
            pl, gpl = _particular_block(g, L, _local(g, L, pts))
            pr, gpr = _particular_block(g, R, _local(g, R, pts))
            axis = 0 if name == "vert" else 1
            jd = np.zeros(len(L))
            jn = np.zeros(len(L))
            if name == "vert" and p.interfaces:
                on = pts[:, 0] == p.interfaces[0]
                if on.any():
                    gd, gn = p.jump_values(0, pts[on, 1])
                    jd[on], jn[on] = gd, gn
            if kind == "value":
                b[row0:row0 + len(L)] = jd - (pr - pl)
            else:
                b[row0:row0 + len(L)] = (jn - (gpr[:, axis] - gpl[:, axis])) * scale
        pb, _ = _particular_block(g, self.bc_cells, _local(g, self.bc_cells, self.bc_points))
        h = np.asarray(p.bc(self.bc_points[:, 0], self.bc_points[:, 1]), dtype=float)
        b[self._bc_row0:] = h - pb
        return b

    def solve(self, problem: InterfaceProblem | None = None) -> "TfpmSolution2d":
        """Least-squares solve; ``problem`` may replace boundary data or jumps
        (coefficients must match the ones the solver was built with)."""
        p = self.problem if problem is None else problem
        b = self.rhs(p)
        z = self._lu.solve(self.As.T @ b)
        for _ in range(2):
            z += self._lu.solve(self.As.T @ (b - self.As @ z))
        coef = z * self.col_scale
        res = np.abs(self.A @ coef - b)
        residual = float(res.max()) if len(res) else 0.0
        scale = max(1.0, float(np.max(np.abs(b))))
        if not np.all(np.isfinite(coef)):
            raise NumericalError("2D collocation solve produced non-finite coefficients")
        if residual > 1e-3 * scale:
            warnings.warn(
                f"2D collocation residual {residual:.3e} exceeds 1e-3 of the data scale {scale:.3e}",
                RuntimeWarning, stacklevel=2,
            )
        return TfpmSolution2d(self, p, coef.reshape(self.grid.n_cells, self.nb), residual,
                              float(np.sqrt(np.mean(res**2))) if len(res) else 0.0)


@dataclass
class TfpmSolution2d:
    solver: Tfpm2dSolver
    problem: InterfaceProblem
    coefficients: np.ndarray
    residual: float
    rms_residual: float

    @property
    def grid(self):
        return self.solver.grid

    def _cells(self, points, side):
        iface = self.problem.interfaces[0] if self.problem.interfaces else None
        return self.grid.locate(points, side, iface)

    def evaluate(self, points, side=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cells = self._cells(pts, side)
        y = _local(self.grid, cells, pts)
        vals, _ = _basis_block(self.grid, cells, y, self.solver.order)
        part, _ = _particular_block(self.grid, cells, y)
        return np.einsum("ij,ij->i", vals, self.coefficients[cells]) + part

    def gradient(self, points, side=None):
        """Gradient in physical coordinates."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cells = self._cells(pts, side)
        y = _local(self.grid, cells, pts)
        _, grads = _basis_block(self.grid, cells, y, self.solver.order)
        _, gpart = _particular_block(self.grid, cells, y)
        gy = np.einsum("ijk,ij->ik", grads, self.coefficients[cells]) + gpart
        return gy / self.grid.a[cells][:, None]

    def interface_jumps(self, t):
        """``([u], [a du/dx1])`` across the interface at heights ``t``."""
        x = self.problem.interfaces[0]
        pts = np.column_stack([np.full(len(t), x), t])
        ul, ur = self.evaluate(pts, "left"), self.evaluate(pts, "right")
        cl = self._cells(pts, "left")
        cr = self._cells(pts, "right")
        fl = self.gradient(pts, "left")[:, 0] * self.grid.a[cl]
        fr = self.gradient(pts, "right")[:, 0] * self.grid.a[cr]
        return ur - ul, fr - fl


def assemble_and_solve_2d(p: InterfaceProblem, grid: CellGrid, order=3) -> TfpmSolution2d:
    return Tfpm2dSolver(p, grid, order).solve()


def evaluate_2d(sol: TfpmSolution2d, point, side=None):
    out = sol.evaluate(point, side)
    return float(out[0]) if np.ndim(point) == 1 else out
