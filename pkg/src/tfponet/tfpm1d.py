"""Tailored finite point solver for 1D interface problems.

After the transform ``y = int 1/a`` the equation on each mesh subinterval
``[y0, y1]`` is ``-u'' + c_h u = F`` with ``c_h`` the affine interpolant of
``c``.  The local solution is

    u(y) = alpha * A1(y) + beta * A2(y) + v(y)

where ``(A1, A2)`` are exact homogeneous solutions (``1, y`` / ``exp(+-k y)``
/ ``Ai, Bi``) normalised to unit maximum on the subinterval, and ``v`` is the
particular solution vanishing at both ends, written with the subinterval's
Dirichlet Green's function.  Continuity (or the prescribed jumps) of ``u`` and
``u_y = a u_x`` at the nodes closes a banded system for all ``(alpha, beta)``.

All basis quantities are carried as ``mantissa * exp(G)`` with ``G`` measured
from the left end of the subinterval, so nothing overflows when ``c`` is large
compared with the mesh width (singular perturbation regime).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import AmbiguousSideError, DomainError, SingularSystemError
from .problem import InterfaceProblem, PiecewiseField, Transform1d, _side_sign
from .specialfn import airy_arrays

POLYNOMIAL, EXPONENTIAL, AIRY = 0, 1, 2
CASE_NAMES = {POLYNOMIAL: "polynomial", EXPONENTIAL: "exponential", AIRY: "airy"}

GAUSS_POINTS = 8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GAUSS_POINTS)
# kernel decay (in e-folds) beyond which the rest of an integral is one panel
_NEGLIGIBLE_DECAY = 36.0
_MAX_PANELS = 400


def _zeta_diff(z, z0):
    """(2/3) (z^1.5 - z0^1.5) without cancellation (both clamped at 0)."""
    z = np.maximum(z, 0.0)
    z0 = np.maximum(z0, 0.0)
    sz, sz0 = np.sqrt(z), np.sqrt(z0)
    den = sz + sz0
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, (2.0 / 3.0) * (z - z0) * (z + sz * sz0 + z0) / safe, 0.0)


class LocalBases:
    """Local bases for a batch of subintervals ``[y0[j], y1[j]]``.

    ``c0``/``c1`` are the values of ``c`` at the subinterval ends; ``c_h`` is
    their affine interpolant.  The case split follows the slope/intercept
    rule: polynomial when ``c_h`` vanishes (or ``max c * length**2`` is
    below roundoff, where the reaction term is invisible), exponential when
    ``|slope| * length < 1e-8 * |c_h(mid)|``, Airy otherwise.
    """

    def __init__(self, y0, y1, c0, c1):
        self.y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        self.y1 = np.atleast_1d(np.asarray(y1, dtype=float))
        c0 = np.atleast_1d(np.asarray(c0, dtype=float))
        c1 = np.atleast_1d(np.asarray(c1, dtype=float))
        self.length = self.y1 - self.y0
        if np.any(self.length < 1e-14):
            raise DomainError("degenerate subinterval (length < 1e-14)")
        if np.any(np.minimum(c0, c1) < -1e-12):
            raise DomainError("transformed coefficient c = a b must be nonnegative")
        c0 = np.maximum(c0, 0.0)
        c1 = np.maximum(c1, 0.0)
        negligible = np.maximum(c0, c1) * self.length**2 < 1e-17
        c0 = np.where(negligible, 0.0, c0)
        c1 = np.where(negligible, 0.0, c1)
        self.c0, self.c1 = c0, c1
        self.slope = (c1 - c0) / self.length
        self.b_mid = 0.5 * (c0 + c1)

        case = np.full(self.y0.shape, AIRY)
        case[np.abs(self.slope) * self.length < 1e-8 * np.abs(self.b_mid)] = EXPONENTIAL
        case[(self.slope == 0.0) & (self.b_mid == 0.0)] = POLYNOMIAL
        self.case = case

        self.k = np.where(case == EXPONENTIAL, np.sqrt(self.b_mid), 0.0)
        mag = np.where(case == AIRY, np.abs(self.slope) ** (1.0 / 3.0), 1.0)
        self.sign = np.where(self.slope < 0, -1.0, 1.0)
        self.dz = np.where(case == AIRY, self.sign * mag, 0.0)
        self.z0 = np.where(case == AIRY, c0 / (mag * mag), 0.0)
        self.z1 = np.where(case == AIRY, c1 / (mag * mag), 0.0)
        # A1 is the basis function growing to the right for exp(+ky) and for Ai with a
        # decreasing coefficient; otherwise it is the one decaying to the right
        self.a1_grows = (case == EXPONENTIAL) | ((case == AIRY) & (self.slope < 0))

        # Wronskian P Q' - P' Q of the unnormalised (growing P, decaying Q) pair
        w = np.where(case == EXPONENTIAL, -2.0 * self.k, -1.0)
        w = np.where(case == AIRY, -np.abs(self.dz) / np.pi, w)
        self.wronskian = w
        # maximum local exponential rate |g'| (drives quadrature grading)
        self.rate = np.where(case == EXPONENTIAL, self.k, 0.0)
        self.rate = np.where(
            case == AIRY,
            np.abs(self.dz) * np.sqrt(np.maximum(np.maximum(self.z0, self.z1), 0.0)),
            self.rate,
        )

        j = np.arange(len(self.y0))
        self.p0, self.pt0, self.q0, self.qt0, _ = self.pq(j, self.y0)
        self.p1, self.pt1, self.q1, self.qt1, self.delta_g = self.pq(j, self.y1)
        e2 = np.exp(-2.0 * self.delta_g)
        delta = self.q0 * self.p1 - self.p0 * self.q1 * e2
        delta = np.where(case == EXPONENTIAL, -np.expm1(-2.0 * self.delta_g), delta)
        self.w_delta = self.wronskian * delta

    def __len__(self):
        return len(self.y0)

    @property
    def intercept(self):
        """``b_j`` such that ``c_h(y) = slope * y + b_j`` in global ``y``."""
        return self.c0 - self.slope * self.y0

    def c_h(self, j, y):
        return self.c0[j] + self.slope[j] * (np.asarray(y, dtype=float) - self.y0[j])

    def airy_argument(self, j, y):
        return self.z0[j] + self.dz[j] * (np.asarray(y, dtype=float) - self.y0[j])

    def log_scale(self, j, y):
        """``G(y) = g(y) - g(y0)``: the exponent split off the growing solution."""
        j = np.asarray(j)
        y = np.asarray(y, dtype=float)
        t = y - self.y0[j]
        case = self.case[j]
        out = np.where(case == EXPONENTIAL, self.k[j] * t, 0.0)
        air = case == AIRY
        if np.any(air):
            z = self.z0[j] + self.dz[j] * t
            out = np.where(air, self.sign[j] * _zeta_diff(z, self.z0[j]), out)
        return out

    def pq(self, j, y):
        """Mantissas of the growing pair: ``P = p e^G``, ``P' = pt e^G``,
        ``Q = q e^-G``, ``Q' = qt e^-G``; returns ``(p, pt, q, qt, G)``."""
        j = np.asarray(j)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(j, y).shape
        j = np.broadcast_to(j, shape)
        y = np.broadcast_to(y, shape)
        t = y - self.y0[j]
        case = self.case[j]
        p = np.ones(shape)
        pt = np.zeros(shape)
        q = np.ones(shape)
        qt = np.zeros(shape)
        poly = case == POLYNOMIAL
        p = np.where(poly, t, p)
        pt = np.where(poly, 1.0, pt)
        ex = case == EXPONENTIAL
        pt = np.where(ex, self.k[j], pt)
        qt = np.where(ex, -self.k[j], qt)
        g = self.log_scale(j, y)
        air = case == AIRY
        if np.any(air):
            ja = j[air]
            z = self.z0[ja] + self.dz[ja] * t[air]
            ai, aip, bi, bip = airy_arrays(z, scaled=True)
            dz = self.dz[ja]
            inc = self.slope[ja] >= 0
            p[air] = np.where(inc, bi, ai)
            pt[air] = dz * np.where(inc, bip, aip)
            q[air] = np.where(inc, ai, bi)
            qt[air] = dz * np.where(inc, aip, bip)
        return p, pt, q, qt, g

    def normalized(self, j, y):
        """``(A1, A2, A1', A2')`` at ``y`` (derivatives in ``y``)."""
        j = np.asarray(j)
        p, pt, q, qt, g = self.pq(j, y)
        up = np.exp(g - self.delta_g[j])
        down = np.exp(-g)
        grow, dgrow = p / self.p1[j] * up, pt / self.p1[j] * up
        decay, ddecay = q / self.q0[j] * down, qt / self.q0[j] * down
        first = self.a1_grows[j]
        return (
            np.where(first, grow, decay),
            np.where(first, decay, grow),
            np.where(first, dgrow, ddecay),
            np.where(first, ddecay, dgrow),
        )

    def green_factors(self, j, y):
        """``(l, l', r, r', G)``: Green's-function mantissas vanishing at y0 / y1."""
        j = np.asarray(j)
        p, pt, q, qt, g = self.pq(j, y)
        dg = self.delta_g[j]
        eL = np.exp(-2.0 * g)
        eR = np.exp(-2.0 * (dg - g))
        ell = p * self.q0[j] - q * self.p0[j] * eL
        ellp = pt * self.q0[j] - qt * self.p0[j] * eL
        rho = p * self.q1[j] * eR - q * self.p1[j]
        rhop = pt * self.q1[j] * eR - qt * self.p1[j]
        ex = self.case[j] == EXPONENTIAL
        if np.any(ex):
            ell = np.where(ex, -np.expm1(-2.0 * g), ell)
            rho = np.where(ex, np.expm1(-2.0 * (dg - g)), rho)
        return ell, ellp, rho, rhop, g

    def graded_rule(self, owner, start, stop):
        """Composite Gauss-Legendre rule on ``[start, stop]`` (per owner subinterval),
        with panels graded away from ``start`` where the kernel peaks.

        Returns ``(which, s, w)``: index into the input batch, nodes, weights.
        """
        owner = np.asarray(owner)
        start = np.asarray(start, dtype=float)
        stop = np.asarray(stop, dtype=float)
        n = len(owner)
        direction = np.sign(stop - start)
        length = np.abs(stop - start)
        rate = self.rate[owner]
        g_start = self.log_scale(owner, start)
        pos = np.zeros(n)
        done = length <= 0
        which, lo_all, hi_all = [], [], []
        single = ~done & (rate * length <= 2.0)
        if np.any(single):
            idx = np.nonzero(single)[0]
            which.append(idx)
            lo_all.append(np.zeros(len(idx)))
            hi_all.append(length[idx])
        done |= single
        for _ in range(_MAX_PANELS):
            if done.all():
                break
            idx = np.nonzero(~done)[0]
            d = pos[idx]
            decay = np.abs(self.log_scale(owner[idx], start[idx] + direction[idx] * d) - g_start[idx])
            width = np.maximum(1.0, 0.5 * decay) / rate[idx]
            d_new = np.minimum(d + width, length[idx])
            d_new = np.where(decay >= _NEGLIGIBLE_DECAY, length[idx], d_new)
            which.append(idx)
            lo_all.append(d)
            hi_all.append(d_new)
            pos[idx] = d_new
            done[idx] = d_new >= length[idx]
        else:
            idx = np.nonzero(~done)[0]
            if len(idx):
                which.append(idx)
                lo_all.append(pos[idx])
                hi_all.append(length[idx])
        if not which:
            return np.zeros(0, dtype=int), np.zeros(0), np.zeros(0)
        which = np.concatenate(which)
        lo = np.concatenate(lo_all)
        hi = np.concatenate(hi_all)
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        d = mid[:, None] + half[:, None] * _GL_X[None, :]
        s = start[which][:, None] + direction[which][:, None] * d
        w = half[:, None] * _GL_W[None, :] * np.ones_like(d)
        return np.repeat(which, GAUSS_POINTS), s.ravel(), w.ravel()


@dataclass(frozen=True)
class LocalBasis:
    """Local basis of one subinterval (a view on :class:`LocalBases`)."""

    bases: LocalBases

    @property
    def case(self):
        return CASE_NAMES[int(self.bases.case[0])]

    @property
    def slope(self):
        return float(self.bases.slope[0])

    @property
    def intercept(self):
        return float(self.bases.intercept[0])

    @property
    def interval(self):
        return float(self.bases.y0[0]), float(self.bases.y1[0])

    def values(self, y):
        a1, a2, _, _ = self.bases.normalized(np.zeros(np.shape(y), dtype=int), y)
        return a1, a2

    def derivatives(self, y):
        _, _, d1, d2 = self.bases.normalized(np.zeros(np.shape(y), dtype=int), y)
        return d1, d2

    def airy_argument(self, y):
        return self.bases.airy_argument(0, y)


def build_local_basis(y0, y1, c0, c1) -> LocalBasis:
    """Local basis for ``[y0, y1]`` from the endpoint values of ``c``."""
    return LocalBasis(LocalBases([y0], [y1], [c0], [c1]))


def _particular(bases: LocalBases, j, y, source):
    """Particular solution and its derivative at points ``y`` of subintervals ``j``.

    ``source(which, s)`` evaluates ``F`` at nodes ``s`` of subinterval ``j[which]``.
    """
    j = np.asarray(j)
    y = np.asarray(y, dtype=float)
    n = len(j)
    ell, ellp, rho, rhop, g = bases.green_factors(j, y)
    # left part: int_{y0}^{y} e^{G(s)-G(y)} l(s) F(s) ds, graded toward y
    wl, sl, ql = bases.graded_rule(j, y, bases.y0[j])
    el, _, _, _, gl = bases.green_factors(j[wl], sl)
    left = np.bincount(wl, weights=ql * np.exp(gl - g[wl]) * el * source(wl, sl), minlength=n)
    wr, sr, qr = bases.graded_rule(j, y, bases.y1[j])
    _, _, er, _, gr = bases.green_factors(j[wr], sr)
    right = np.bincount(wr, weights=qr * np.exp(g[wr] - gr) * er * source(wr, sr), minlength=n)
    wd = bases.w_delta[j]
    value = (rho * left + ell * right) / wd
    deriv = (rhop * left + ellp * right) / wd
    return value, deriv


def particular_term(basis: LocalBasis, source, y):
    """Particular solution ``v`` of ``-v'' + c_h v = F`` with ``v(y0) = v(y1) = 0``.

    ``source`` is a callable of ``y`` or a constant.  Returns ``(v, v')``.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if callable(source):
        fn = lambda which, s: np.asarray(source(s), dtype=float) + np.zeros_like(s)
    else:
        val = float(source)
        fn = lambda which, s: np.full_like(s, val)
    v, d = _particular(basis.bases, np.zeros(len(y), dtype=int), y, fn)
    return v, d


# ------------------------------------------------------------------ mesh


@dataclass(frozen=True)
class Mesh1d:
    """Nodes in ``y`` (with their ``x`` preimages); interface images are nodes."""

    nodes: np.ndarray
    x_nodes: np.ndarray
    interface_flags: np.ndarray
    subdomain: np.ndarray  # per subinterval
    interface_index: np.ndarray  # per node, -1 if not an interface

    @property
    def n_intervals(self):
        return len(self.nodes) - 1


def mesh_from_x_nodes(problem: InterfaceProblem, x_nodes_per_subdomain) -> Mesh1d:
    """Mesh from per-subdomain x-node arrays (each including its subdomain ends)."""
    tr = Transform1d(problem.a, problem.domain)
    xs, flags, sub, iface = [], [], [], []
    for i, arr in enumerate(x_nodes_per_subdomain):
        arr = np.asarray(arr, dtype=float)
        lo, hi = problem.subdomain_bounds(i)
        if len(arr) < 3:
            raise DomainError("need at least 2 subintervals per subdomain")
        if arr[0] != lo or arr[-1] != hi or np.any(np.diff(arr) <= 0):
            raise DomainError("subdomain nodes must increase from one end to the other")
        start = 0 if i == 0 else 1
        for k, x in enumerate(arr[start:], start=start):
            xs.append(x)
            is_iface = (k == len(arr) - 1) and i < problem.n_subdomains - 1
            flags.append(is_iface)
            iface.append(i if is_iface else -1)
        sub.extend([i] * (len(arr) - 1))
    x_nodes = np.array(xs)
    y = tr.y_of_x(x_nodes)
    # interface images must be exact nodes
    for k, x in enumerate(problem.interfaces):
        y[np.nonzero(x_nodes == x)[0]] = tr.y_edges[k + 1]
    return Mesh1d(y, x_nodes, np.array(flags), np.array(sub), np.array(iface))


def uniform_mesh(problem: InterfaceProblem, nodes_per_subdomain: int) -> Mesh1d:
    """Images of equispaced x-nodes, ``nodes_per_subdomain`` per subdomain."""
    return mesh_from_x_nodes(
        problem,
        [np.linspace(*problem.subdomain_bounds(i), nodes_per_subdomain)
         for i in range(problem.n_subdomains)],
    )


# ------------------------------------------------------------------ solver


class Tfpm1dSolver:
    """Everything about a solve that does not depend on the source ``f``.

    The banded matrix, the local bases and the Green's-function quadrature
    are set up once; :meth:`solve` then costs one pass over the source.
    """

    def __init__(self, problem: InterfaceProblem, mesh: Mesh1d):
        if problem.dimension != 1:
            raise DomainError("Tfpm1dSolver handles 1D problems")
        self.problem = problem
        self.mesh = mesh
        self.transform = Transform1d(problem.a, problem.domain)
        y = mesh.nodes
        sub = mesh.subdomain
        xl, xr = mesh.x_nodes[:-1], mesh.x_nodes[1:]
        c0 = np.empty(len(sub))
        c1 = np.empty(len(sub))
        for i in range(problem.n_subdomains):
            m = sub == i
            for xe, out in ((xl, c0), (xr, c1)):
                out[m] = problem.a.piece_values(i, xe[m]) * problem.b.piece_values(i, xe[m])
        self.bases = LocalBases(y[:-1], y[1:], c0, c1)
        nj = len(self.bases)
        j = np.arange(nj)
        self._end_vals = [self.bases.normalized(j, y[:-1]), self.bases.normalized(j, y[1:])]

        # endpoint moments of the Green's function: v'(y0) and v'(y1)
        b = self.bases
        wr, sr, qr = b.graded_rule(j, b.y0, b.y1)
        _, _, rho, _, g = b.green_factors(wr, sr)
        self._mom_r = (wr, sr, qr * np.exp(-g) * rho)
        wl, sl, ql = b.graded_rule(j, b.y1, b.y0)
        ell, _, _, _, g = b.green_factors(wl, sl)
        self._mom_l = (wl, sl, ql * np.exp(g - b.delta_g[wl]) * ell)
        ell0 = b.pt0 * b.q0 - b.qt0 * b.p0
        rho1 = b.pt1 * b.q1 - b.qt1 * b.p1
        self._dv0 = ell0 / b.w_delta
        self._dv1 = rho1 / b.w_delta
        self._x_mom_r = self._x_at(wr, sr)
        self._x_mom_l = self._x_at(wl, sl)
        self._assemble()

    # -- helpers
    def _x_at(self, j, s):
        return self.transform.x_of_y(s) if len(s) else np.zeros(0)

    def _source(self, f: PiecewiseField, j, x):
        """``F = a f`` at physical points ``x`` lying in subintervals ``j``."""
        sub = self.mesh.subdomain[j]
        out = np.empty_like(x)
        for i in range(self.problem.n_subdomains):
            m = sub == i
            if np.any(m):
                out[m] = self.problem.a.piece_values(i, x[m]) * f.piece_values(i, x[m])
        return out

    def _assemble(self):
        nj = len(self.bases)
        n = 2 * nj
        ab = np.zeros((5, n))  # (l, u) = (2, 2)

        def put(r, c, v):
            ab[2 + r - c, c] = v

        (l1, l2, _, _), (r1, r2, _, _) = self._end_vals
        _, _, dl1, dl2 = self._end_vals[0]
        _, _, dr1, dr2 = self._end_vals[1]
        put(0, 0, l1[0])
        put(0, 1, l2[0])
        for i in range(1, nj):
            rv, rf = 2 * i - 1, 2 * i
            put(rv, 2 * i - 2, -r1[i - 1])
            put(rv, 2 * i - 1, -r2[i - 1])
            put(rv, 2 * i, l1[i])
            put(rv, 2 * i + 1, l2[i])
            put(rf, 2 * i - 2, -dr1[i - 1])
            put(rf, 2 * i - 1, -dr2[i - 1])
            put(rf, 2 * i, dl1[i])
            put(rf, 2 * i + 1, dl2[i])
        put(n - 1, n - 2, r1[-1])
        put(n - 1, n - 1, r2[-1])
        # row equilibration
        rowmax = np.zeros(n)
        for d in range(5):
            cols = np.arange(n)
            rows = cols + d - 2
            ok = (rows >= 0) & (rows < n)
            np.maximum.at(rowmax, rows[ok], np.abs(ab[d, cols[ok]]))
        rowmax[rowmax == 0] = 1.0
        for d in range(5):
            cols = np.arange(n)
            rows = cols + d - 2
            ok = (rows >= 0) & (rows < n)
            ab[d, cols[ok]] /= rowmax[rows[ok]]
        self._ab = ab
        self._rowscale = rowmax

    def _matvec(self, x):
        n = len(x)
        out = np.zeros(n)
        for d in range(5):
            cols = np.arange(n)
            rows = cols + d - 2
            ok = (rows >= 0) & (rows < n)
            np.add.at(out, rows[ok], self._ab[d, cols[ok]] * x[cols[ok]])
        return out

    def _dense(self):
        n = self._ab.shape[1]
        a = np.zeros((n, n))
        for d in range(5):
            for c in range(n):
                r = c + d - 2
                if 0 <= r < n:
                    a[r, c] = self._ab[d, c]
        return a

    def rhs(self, f: PiecewiseField):
        b = self.bases
        nj = len(b)
        wr, _, kr = self._mom_r
        wl, _, kl = self._mom_l
        mom_r = np.bincount(wr, weights=kr * self._source(f, wr, self._x_mom_r), minlength=nj)
        mom_l = np.bincount(wl, weights=kl * self._source(f, wl, self._x_mom_l), minlength=nj)
        dv0 = self._dv0 * mom_r
        dv1 = self._dv1 * mom_l
        n = 2 * nj
        rhs = np.zeros(n)
        h_left, h_right = self.problem.bc
        rhs[0] = h_left
        rhs[-1] = h_right
        for i in range(1, nj):
            k = self.mesh.interface_index[i]
            gd, gn = self.problem.jump_values(k) if k >= 0 else (0.0, 0.0)
            rhs[2 * i - 1] = gd
            rhs[2 * i] = gn - dv0[i] + dv1[i - 1]
        return rhs / self._rowscale, dv0, dv1

    def solve(self, f: PiecewiseField | None = None) -> "TfpmSolution1d":
        f = self.problem.f if f is None else f
        rhs, dv0, dv1 = self.rhs(f)
        try:
            sol = linalg.solve_banded((2, 2), self._ab, rhs, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise SingularSystemError(f"TFPM system is singular: {exc}", self.condition_estimate()) from exc
        res = np.max(np.abs(self._matvec(sol) - rhs))
        scale = np.max(np.abs(self._ab)) * np.max(np.abs(sol)) + np.max(np.abs(rhs))
        rel = res / scale if scale > 0 else res
        if not np.isfinite(rel) or rel > 1e-10:
            raise SingularSystemError(
                f"TFPM linear solve residual {rel:.3e} exceeds 1e-10", self.condition_estimate()
            )
        return TfpmSolution1d(self, sol.reshape(-1, 2), f, float(rel), dv0, dv1)

    def condition_estimate(self):
        n = self._ab.shape[1]
        if n > 4000:
            return None
        with np.errstate(all="ignore"):
            return float(np.linalg.cond(self._dense()))

    # -- evaluation plans
    def locate(self, x, side=None):
        """Subinterval index of each physical point."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        m = self.mesh
        lo, hi = m.x_nodes[0], m.x_nodes[-1]
        tol = 1e-12 * (hi - lo)
        if np.any((x < lo - tol) | (x > hi + tol)):
            raise DomainError(f"x outside [{lo}, {hi}]")
        x = np.clip(x, lo, hi)
        j = np.searchsorted(m.x_nodes, x, side="right") - 1
        node = np.searchsorted(m.x_nodes, x)
        node = np.clip(node, 0, len(m.x_nodes) - 1)
        on_iface = (m.x_nodes[node] == x) & m.interface_flags[node]
        if np.any(on_iface):
            if side is None:
                raise AmbiguousSideError("evaluation on an interface needs side='left' or 'right'")
            if np.ndim(side) == 0:
                signs = np.full(x.shape, _side_sign(side))
            else:
                signs = np.array([_side_sign(s) for s in np.ravel(side)]).reshape(x.shape)
            j = np.where(on_iface & (signs < 0), node - 1, np.where(on_iface, node, j))
        return np.clip(j, 0, len(self.bases) - 1), x

    def plan(self, x, side=None):
        return _EvalPlan(self, x, side)


class _EvalPlan:
    """Source-independent data for evaluating solutions at fixed points."""

    def __init__(self, solver: Tfpm1dSolver, x, side=None):
        self.solver = solver
        j, x = solver.locate(x, side)
        self.j = j
        self.x = x
        y = solver.transform.y_of_x(x)
        y = np.clip(y, solver.bases.y0[j], solver.bases.y1[j])
        self.y = y
        b = solver.bases
        self.a1, self.a2, self.d1, self.d2 = b.normalized(j, y)
        ell, ellp, rho, rhop, g = b.green_factors(j, y)
        wl, sl, ql = b.graded_rule(j, y, b.y0[j])
        el, _, _, _, gl = b.green_factors(j[wl], sl)
        self._left = (wl, solver._x_at(j[wl], sl), ql * np.exp(gl - g[wl]) * el)
        wr, sr, qr = b.graded_rule(j, y, b.y1[j])
        _, _, er, _, gr = b.green_factors(j[wr], sr)
        self._right = (wr, solver._x_at(j[wr], sr), qr * np.exp(g[wr] - gr) * er)
        wd = b.w_delta[j]
        self._coef = (rho / wd, ell / wd, rhop / wd, ellp / wd)
        # a at the points, for u_x = u_y / a
        sub = solver.mesh.subdomain[j]
        a = np.empty_like(x)
        for i in range(solver.problem.n_subdomains):
            m = sub == i
            a[m] = solver.problem.a.piece_values(i, x[m])
        self.a = a

    def particular(self, f):
        s = self.solver
        n = len(self.j)
        wl, xl, kl = self._left
        wr, xr, kr = self._right
        left = np.bincount(wl, weights=kl * s._source(f, self.j[wl], xl), minlength=n)
        right = np.bincount(wr, weights=kr * s._source(f, self.j[wr], xr), minlength=n)
        cr, cl, crp, clp = self._coef
        return cr * left + cl * right, crp * left + clp * right

    def values(self, sol: "TfpmSolution1d"):
        v, _ = self.particular(sol.f)
        c = sol.coefficients[self.j]
        return c[:, 0] * self.a1 + c[:, 1] * self.a2 + v

    def y_derivatives(self, sol: "TfpmSolution1d"):
        _, dv = self.particular(sol.f)
        c = sol.coefficients[self.j]
        return c[:, 0] * self.d1 + c[:, 1] * self.d2 + dv


@dataclass
class TfpmSolution1d:
    """Solved expansion: one ``(alpha_j, beta_j)`` pair per subinterval."""

    solver: Tfpm1dSolver
    coefficients: np.ndarray
    f: PiecewiseField
    solve_residual: float
    dv_left: np.ndarray  # v'(y0) per subinterval
    dv_right: np.ndarray  # v'(y1) per subinterval

    @property
    def bases(self):
        return self.solver.bases

    @property
    def mesh(self):
        return self.solver.mesh

    def evaluate(self, x, side=None):
        scalar = np.ndim(x) == 0
        out = self.solver.plan(x, side).values(self)
        return float(out[0]) if scalar else out

    def derivative(self, x, side=None):
        """``du/dx`` (one-sided at interfaces)."""
        plan = self.solver.plan(x, side)
        out = plan.y_derivatives(self) / plan.a
        return float(out[0]) if np.ndim(x) == 0 else out

    def flux(self, x, side=None):
        """``a du/dx = du/dy``."""
        out = self.solver.plan(x, side).y_derivatives(self)
        return float(out[0]) if np.ndim(x) == 0 else out

    def node_traces(self):
        """Left/right limits of ``u`` and ``u_y`` at every interior node."""
        (l1, l2, dl1, dl2), (r1, r2, dr1, dr2) = self.solver._end_vals
        c = self.coefficients
        u_left_end = c[:, 0] * r1 + c[:, 1] * r2  # each subinterval at its right end
        u_right_start = c[:, 0] * l1 + c[:, 1] * l2
        du_left_end = c[:, 0] * dr1 + c[:, 1] * dr2 + self.dv_right
        du_right_start = c[:, 0] * dl1 + c[:, 1] * dl2 + self.dv_left
        return (u_left_end[:-1], u_right_start[1:], du_left_end[:-1], du_right_start[1:])

    def nodal_values(self):
        """``u`` at the mesh nodes (right-side limits at interfaces, plus the last node)."""
        (l1, l2, _, _), (r1, r2, _, _) = self.solver._end_vals
        c = self.coefficients
        start = c[:, 0] * l1 + c[:, 1] * l2
        end = c[-1, 0] * r1[-1] + c[-1, 1] * r2[-1]
        return np.append(start, end)


def assemble_and_solve(p: InterfaceProblem, mesh: Mesh1d) -> TfpmSolution1d:
    return Tfpm1dSolver(p, mesh).solve()


def evaluate(sol: TfpmSolution1d, x, side=None):
    return sol.evaluate(x, side)
