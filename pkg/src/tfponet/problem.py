"""Elliptic interface problems, piecewise fields and the coordinate transform.

A problem is ``-div(a grad u) + b u = f`` on a box split by interfaces, with
jumps ``[u] = g_D`` and ``[a du/dn] = g_N`` (normal pointing from the left
subdomain to the right one) and Dirichlet data on the outer boundary.  In 1D
the interfaces are points; in 2D the only supported interface is a vertical
line ``x1 = const``.

The transform ``y = int 1/a`` turns the operator into ``-y'' + c u = F`` with
``c = a b`` and ``F = a f``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import AmbiguousSideError, ConfigError, DomainError

LEFT = "left"
RIGHT = "right"

# closed forms addressable from config files as "expr:<id>"; each takes the
# first coordinate (x in 1D, x1 in 2D)
EXPRESSIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zero": lambda x: np.zeros_like(x),
    "one": lambda x: np.ones_like(x),
    "ex1_b_left": lambda x: 2.0 * x + 1.0,
    "ex1_b_right": lambda x: 2.0 * (1.0 - x) + 1.0,
    "ex2_b_right": lambda x: 100.0 * (4.0 + 32.0 * x),
    "ex3_b_left": lambda x: (1.0 - x * x) ** 2,
    "sin_pi": lambda x: np.sin(np.pi * x),
}


def _side_sign(side):
    if side is None:
        return None
    if isinstance(side, str):
        s = side.lower()
        if s in (LEFT, "l", "-"):
            return -1
        if s in (RIGHT, "r", "+"):
            return 1
        raise ValueError(f"unknown side {side!r}")
    return -1 if side < 0 else 1


@dataclass(frozen=True)
class Piece:
    """One smooth piece of a field.

    ``kind`` is ``constant``, ``affine`` (``slope * x + intercept``),
    ``expr`` (named closed form), ``grid`` (linear interpolation of samples)
    or ``callable``.  Pieces depend on the first coordinate only; that covers
    every problem in the registry, including the 2D one.
    """

    kind: str
    value: float = 0.0
    slope: float = 0.0
    name: str = ""
    xs: tuple = ()
    values: tuple = ()
    fn: Callable | None = field(default=None, compare=False)

    @classmethod
    def constant(cls, v):
        return cls("constant", value=float(v))

    @classmethod
    def affine(cls, slope, intercept):
        return cls("affine", value=float(intercept), slope=float(slope))

    @classmethod
    def expr(cls, name):
        if name not in EXPRESSIONS:
            raise ConfigError(f"unknown expression id {name!r}")
        return cls("expr", name=name)

    @classmethod
    def grid(cls, xs, values):
        xs = np.asarray(xs, dtype=float)
        values = np.asarray(values, dtype=float)
        if xs.ndim != 1 or xs.shape != values.shape or len(xs) < 2:
            raise ConfigError("grid piece needs matching 1D arrays of length >= 2")
        if np.any(np.diff(xs) <= 0):
            raise ConfigError("grid abscissae must be strictly increasing")
        return cls("grid", xs=tuple(xs.tolist()), values=tuple(values.tolist()))

    @classmethod
    def from_callable(cls, fn, name="callable"):
        return cls("callable", name=name, fn=fn)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.value)
        if self.kind == "affine":
            return self.slope * x + self.value
        if self.kind == "expr":
            return np.asarray(EXPRESSIONS[self.name](x), dtype=float)
        if self.kind == "grid":
            return np.interp(x, self.xs, self.values)
        return np.asarray(self.fn(x), dtype=float) + np.zeros_like(x)

    @property
    def is_constant(self):
        return self.kind == "constant" or (self.kind == "affine" and self.slope == 0.0)

    def to_config(self):
        if self.kind == "constant":
            return {"constant": self.value}
        if self.kind == "affine":
            return {"affine": [self.slope, self.value]}
        if self.kind == "expr":
            return f"expr:{self.name}"
        if self.kind == "grid":
            return {"grid": {"x": list(self.xs), "values": list(self.values)}}
        raise ConfigError("callable pieces cannot be serialized")


@dataclass(frozen=True)
class PiecewiseField:
    """Scalar field with one :class:`Piece` per subdomain.

    ``breakpoints`` are the interior interface coordinates along the first
    axis.  Evaluating exactly on a breakpoint needs an explicit side.
    """

    breakpoints: tuple
    pieces: tuple
    dimension: int = 1

    def __post_init__(self):
        if len(self.pieces) != len(self.breakpoints) + 1:
            raise ConfigError("need exactly one piece per subdomain")
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ConfigError("breakpoints must be strictly increasing")

    @classmethod
    def uniform(cls, piece, breakpoints=(), dimension=1):
        return cls(tuple(breakpoints), (piece,) * (len(breakpoints) + 1), dimension)

    @property
    def n_pieces(self):
        return len(self.pieces)

    def subdomain_index(self, x1, side=None):
        """Index of the subdomain containing ``x1``; sides resolve interface points."""
        x1 = np.asarray(x1, dtype=float)
        bp = np.asarray(self.breakpoints, dtype=float)
        idx = np.searchsorted(bp, x1, side="right")
        on = np.isin(x1, bp)
        if on.any():
            if side is None:
                raise AmbiguousSideError("point on an interface needs a side (left/right)")
            if np.ndim(side) == 0:
                signs = np.full(x1.shape, _side_sign(side))
            else:
                signs = np.array([_side_sign(v) for v in np.ravel(side)]).reshape(np.shape(side))
                signs = np.broadcast_to(signs, x1.shape)
            idx = np.where(on & (signs < 0), idx - 1, idx)
        return idx

    def piece_values(self, i, x):
        """Evaluate piece ``i`` (no subdomain check) at first coordinates ``x``."""
        return self.pieces[i](x)

    def __call__(self, x, side=None):
        x = np.asarray(x, dtype=float)
        x1 = x if self.dimension == 1 else x[..., 0]
        idx = self.subdomain_index(x1, side)
        out = np.empty(np.shape(x1), dtype=float)
        for i, p in enumerate(self.pieces):
            m = idx == i
            if np.any(m):
                out[m] = p(np.asarray(x1)[m])
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class InterfaceProblem:
    """Interface problem data.

    ``domain`` is ``(alpha, beta)`` in 1D and ``((alpha0, beta0), (alpha1,
    beta1))`` in 2D.  ``g_d``/``g_n`` hold one value (or callable of the
    coordinate along the interface) per interface.  ``bc`` is
    ``(h_left, h_right)`` in 1D and a callable ``h(x1, x2)`` in 2D.
    """

    name: str
    dimension: int
    domain: tuple
    interfaces: tuple
    a: PiecewiseField
    b: PiecewiseField
    f: PiecewiseField
    g_d: tuple
    g_n: tuple
    bc: object = (0.0, 0.0)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigError("dimension must be 1 or 2")
        lo, hi = self.x1_range
        if not all(lo < s < hi for s in self.interfaces):
            raise ConfigError("interfaces must lie strictly inside the domain")
        for fld in (self.a, self.b, self.f):
            if tuple(fld.breakpoints) != tuple(self.interfaces):
                raise ConfigError("field breakpoints must coincide with the interfaces")
        if len(self.g_d) != len(self.interfaces) or len(self.g_n) != len(self.interfaces):
            raise ConfigError("one g_D and one g_N value per interface")
        if self.dimension == 2 and len(self.interfaces) > 1:
            raise ConfigError("2D problems support a single vertical interface")
        for i, p in enumerate(self.a.pieces):
            if p.kind in ("constant", "affine", "grid"):
                edges = self.subdomain_bounds(i)
                vals = p(np.linspace(edges[0], edges[1], 65))
                if np.any(vals <= 0):
                    raise ConfigError(f"coefficient a must be positive (subdomain {i})")
        if self.n_subdomains < 2 and any(_nonzero(g) for g in self.g_d):
            raise ConfigError("a nonzero solution jump needs at least two subdomains")

    @property
    def x1_range(self):
        return tuple(self.domain) if self.dimension == 1 else tuple(self.domain[0])

    @property
    def n_subdomains(self):
        return len(self.interfaces) + 1

    def subdomain_bounds(self, i):
        lo, hi = self.x1_range
        edges = (lo, *self.interfaces, hi)
        return edges[i], edges[i + 1]

    def subdomain_of(self, x1, side=None):
        return self.a.subdomain_index(x1, side)

    def jump_values(self, k, t=None):
        """(g_D, g_N) on interface ``k``; ``t`` is the coordinate along it (2D)."""
        return _eval_jump(self.g_d[k], t), _eval_jump(self.g_n[k], t)

    def with_source(self, f):
        if not isinstance(f, PiecewiseField):
            f = PiecewiseField.uniform(Piece.from_callable(f), self.interfaces, self.dimension)
        return replace(self, f=f)

    def with_boundary(self, bc):
        return replace(self, bc=bc)

    def with_jumps(self, g_d, g_n):
        return replace(self, g_d=tuple(g_d), g_n=tuple(g_n))


def _nonzero(g):
    return callable(g) or float(g) != 0.0


def _eval_jump(g, t):
    if callable(g):
        return np.asarray(g(t), dtype=float)
    if t is None:
        return float(g)
    return np.full(np.shape(t), float(g))


# ------------------------------------------------------------------ transform


def _reciprocal_integral(piece, lo, hi):
    """int_lo^hi 1/a(s) ds for a single piece."""
    if piece.is_constant:
        return (hi - lo) / piece(np.array(lo)).item()
    if piece.kind == "affine":
        s, t = piece.slope, piece.value
        return (math.log(s * hi + t) - math.log(s * lo + t)) / s
    val, _ = integrate.quad(lambda u: 1.0 / piece(np.array(u)).item(), lo, hi,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return val


class Transform1d:
    """Monotone map ``y(x) = int_alpha^x 1/a`` and its inverse."""

    def __init__(self, a: PiecewiseField, domain):
        self.a = a
        self.alpha, self.beta = float(domain[0]), float(domain[1])
        self.edges = np.array([self.alpha, *a.breakpoints, self.beta], dtype=float)
        y_edges = [0.0]
        for i, p in enumerate(a.pieces):
            y_edges.append(y_edges[-1] + _reciprocal_integral(p, self.edges[i], self.edges[i + 1]))
        self.y_edges = np.array(y_edges)

    @property
    def y_range(self):
        return float(self.y_edges[0]), float(self.y_edges[-1])

    def _check_x(self, x):
        tol = 1e-12 * max(1.0, abs(self.beta - self.alpha))
        if np.any((x < self.alpha - tol) | (x > self.beta + tol)):
            raise DomainError(f"x outside [{self.alpha}, {self.beta}]")

    def y_of_x(self, x):
        x = np.asarray(x, dtype=float)
        self._check_x(x)
        xc = np.clip(x, self.alpha, self.beta)
        # pieces are continuous in y, so the side at a breakpoint is irrelevant
        idx = np.clip(np.searchsorted(self.edges, xc, side="right") - 1, 0, len(self.a.pieces) - 1)
        out = np.empty_like(xc)
        for i, p in enumerate(self.a.pieces):
            m = idx == i
            if not np.any(m):
                continue
            lo = self.edges[i]
            if p.is_constant:
                out[m] = self.y_edges[i] + (xc[m] - lo) / p(np.array(lo)).item()
            elif p.kind == "affine":
                out[m] = self.y_edges[i] + (np.log(p.slope * xc[m] + p.value)
                                            - math.log(p.slope * lo + p.value)) / p.slope
            else:
                out[m] = [self.y_edges[i] + _reciprocal_integral(p, lo, xi) for xi in xc[m]]
        return out if out.ndim else float(out)

    def x_of_y(self, y):
        y = np.asarray(y, dtype=float)
        y0, y1 = self.y_range
        tol = 1e-12 * max(1.0, abs(y1 - y0))
        if np.any((y < y0 - tol) | (y > y1 + tol)):
            raise DomainError("y outside the transformed range")
        yc = np.clip(y, y0, y1)
        idx = np.clip(np.searchsorted(self.y_edges, yc, side="right") - 1, 0, len(self.a.pieces) - 1)
        out = np.empty_like(yc)
        for i, p in enumerate(self.a.pieces):
            m = idx == i
            if not np.any(m):
                continue
            lo = self.edges[i]
            if p.is_constant:
                out[m] = lo + (yc[m] - self.y_edges[i]) * p(np.array(lo)).item()
            elif p.kind == "affine":
                s, t = p.slope, p.value
                out[m] = ((s * lo + t) * np.exp(s * (yc[m] - self.y_edges[i])) - t) / s
            else:
                hi = self.edges[i + 1]
                out[m] = [
                    optimize.brentq(
                        lambda u, yt=yt: self.y_edges[i] + _reciprocal_integral(p, lo, u) - yt,
                        lo, hi, xtol=1e-14, rtol=1e-14,
                    )
                    for yt in yc[m]
                ]
        return out if out.ndim else float(out)

    def dy_dx(self, x, side=None):
        """Derivative ``1/a(x)``."""
        return 1.0 / np.asarray(self.a(x, side), dtype=float)


def transform_y_1d(a: PiecewiseField, x, domain=(0.0, 1.0)):
    """``y(x) = int_alpha^x 1/a``; ``domain`` defaults to the unit interval."""
    return Transform1d(a, domain).y_of_x(x)


class Transform2d:
    """Per-axis transform for a coefficient that is constant on each subdomain.

    Within subdomain ``i`` the map is the isotropic scaling ``y = x / a_i``
    (up to a shift), so the local-basis solver can work in cell-local
    ``y`` coordinates: ``grad_y = a_i grad_x`` and ``dy = dx / a_i``.
    """

    def __init__(self, a: PiecewiseField, domain):
        for p in a.pieces:
            if not p.is_constant:
                raise ConfigError("2D transform supports piecewise-constant a only")
        self.a = a
        self.domain = (tuple(map(float, domain[0])), tuple(map(float, domain[1])))
        self.t1 = Transform1d(a, self.domain[0])
        self.a_values = np.array([p(np.array(0.0)).item() for p in a.pieces])

    def a_of(self, i):
        return float(self.a_values[i])

    def y_of_x(self, x, side=None):
        x = np.asarray(x, dtype=float)
        idx = self.a.subdomain_index(x[..., 0], side)
        y1 = self.t1.y_of_x(x[..., 0])
        y2 = (x[..., 1] - self.domain[1][0]) / self.a_values[idx]
        return np.stack([y1, y2], axis=-1)

    def x_of_y(self, y, side=None):
        y = np.asarray(y, dtype=float)
        x1 = self.t1.x_of_y(y[..., 0])
        idx = self.a.subdomain_index(x1, side)
        x2 = self.domain[1][0] + y[..., 1] * self.a_values[idx]
        return np.stack([x1, x2], axis=-1)


def transformed_coefficients(p: InterfaceProblem, y, side=None):
    """Transformed coefficient ``c = a b`` and source ``F = a f`` at ``y``."""
    if p.dimension == 1:
        x = Transform1d(p.a, p.domain).x_of_y(y)
    else:
        x = Transform2d(p.a, p.domain).x_of_y(y, side)
    a = p.a(x, side)
    return a * p.b(x, side), a * p.f(x, side)


def jump_operators(u_left, u_right, a_left, a_right=None):
    """Jumps ``([u], [a u_n])`` from one-sided ``(value, normal derivative)`` pairs."""
    a_right = a_left if a_right is None else a_right
    (vl, dl), (vr, dr) = u_left, u_right
    return vr - vl, a_right * dr - a_left * dl


# ------------------------------------------------------------------ registry


def _pw(left, right, interfaces=(0.5,), dimension=1):
    return PiecewiseField(tuple(interfaces), (left, right), dimension)


def example3_boundary(f_x1: PiecewiseField | None):
    """Boundary data of the 2D example: 0 on x1 = +-1, ``f(x1)`` on x2 = +-1."""

    def h(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        out = np.zeros(np.broadcast(x1, x2).shape)
        if f_x1 is None:
            return out
        x1b = np.broadcast_to(x1, out.shape)
        on_side = np.abs(np.abs(x1b) - 1.0) > 1e-14
        top = on_side & (np.abs(np.abs(np.broadcast_to(x2, out.shape)) - 1.0) <= 1e-14)
        if np.any(top):
            xs = x1b[top]
            side = np.where(xs < 0, -1, 1)
            out[top] = f_x1(xs, side=side)
        return out

    h.source_field = f_x1
    return h


def make_problem(name: str, f=None) -> InterfaceProblem:
    """Registry problem ``name`` with input function ``f`` (zero if omitted)."""
    zero = Piece.constant(0.0)
    if name in ("example1_singular", "example1_contrast", "example2"):
        if name == "example1_singular":
            a = _pw(Piece.constant(1e-4), Piece.constant(1e-4))
        elif name == "example1_contrast":
            a = _pw(Piece.constant(1.0), Piece.constant(1e-4))
        else:
            a = _pw(Piece.constant(1.0), Piece.constant(1.0))
        if name == "example2":
            b = _pw(Piece.constant(5000.0), Piece.affine(3200.0, 400.0))
            g = (1.0,)
        else:
            b = _pw(Piece.affine(2.0, 1.0), Piece.affine(-2.0, 3.0))
            g = (0.0,)
        fld = f if f is not None else _pw(zero, zero)
        p = InterfaceProblem(name, 1, (0.0, 1.0), (0.5,), a, b, _pw(zero, zero), g, g, (0.0, 0.0))
        return p.with_source(fld) if f is not None else p
    if name == "example3":
        a = _pw(Piece.constant(1e-3), Piece.constant(1e-3), (0.0,), 2)
        b = _pw(Piece.expr("ex3_b_left"), Piece.constant(1e-3), (0.0,), 2)
        src = _pw(zero, zero, (0.0,), 2)
        return InterfaceProblem(
            name, 2, ((-1.0, 1.0), (-1.0, 1.0)), (0.0,), a, b, src, (1.0,), (0.0,),
            example3_boundary(f),
        )
    raise ConfigError(f"unknown registry problem {name!r}")


REGISTRY = ("example1_singular", "example1_contrast", "example2", "example3")


# ------------------------------------------------------------------ config


def _parse_piece(spec):
    if isinstance(spec, (int, float)):
        return Piece.constant(spec)
    if isinstance(spec, str):
        if spec.startswith("expr:"):
            return Piece.expr(spec[5:])
        raise ConfigError(f"cannot parse field spec {spec!r}")
    if isinstance(spec, dict):
        if "constant" in spec:
            return Piece.constant(spec["constant"])
        if "affine" in spec:
            slope, intercept = spec["affine"]
            return Piece.affine(slope, intercept)
        if "expr" in spec:
            return Piece.expr(spec["expr"])
        if "grid" in spec:
            g = spec["grid"]
            return Piece.grid(g["x"], g["values"])
    raise ConfigError(f"cannot parse field spec {spec!r}")


def _parse_field(spec, interfaces, dimension):
    n = len(interfaces) + 1
    if isinstance(spec, list):
        if len(spec) != n:
            raise ConfigError(f"expected {n} pieces, got {len(spec)}")
        pieces = tuple(_parse_piece(s) for s in spec)
    else:
        pieces = (_parse_piece(spec),) * n
    return PiecewiseField(tuple(interfaces), pieces, dimension)


def problem_from_dict(cfg: dict) -> InterfaceProblem:
    """Build a problem from a parsed TOML/JSON mapping.

    ``example = "<registry id>"`` loads a registry problem; otherwise keys
    ``domain``, ``interfaces``, ``a``, ``b``, ``g_d``, ``g_n``, ``bc`` and an
    optional ``f`` describe a 1D problem.
    """
    if "example" in cfg:
        f = cfg.get("f")
        p = make_problem(cfg["example"])
        if f is not None:
            p = p.with_source(_parse_field(f, p.interfaces, p.dimension))
        return p
    try:
        dimension = int(cfg.get("dimension", 1))
        if dimension != 1:
            raise ConfigError("config files describe 1D problems; use example = 'example3' for 2D")
        domain = tuple(float(v) for v in cfg["domain"])
        interfaces = tuple(float(v) for v in cfg.get("interfaces", ()))
        a = _parse_field(cfg["a"], interfaces, 1)
        b = _parse_field(cfg.get("b", 0.0), interfaces, 1)
        f = _parse_field(cfg.get("f", 0.0), interfaces, 1)
        k = len(interfaces)

        def _per_interface(v):
            vals = v if isinstance(v, list) else [v] * k
            if len(vals) != k:
                raise ConfigError("need one jump value per interface")
            return tuple(float(x) for x in vals)

        g_d = _per_interface(cfg.get("g_d", 0.0))
        g_n = _per_interface(cfg.get("g_n", 0.0))
        bc = cfg.get("bc", [0.0, 0.0])
        bc = (float(bc[0]), float(bc[1])) if isinstance(bc, list) else (float(bc), float(bc))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid problem config: {exc}") from exc
    return InterfaceProblem(cfg.get("name", "custom"), 1, domain, interfaces, a, b, f, g_d, g_n, bc)


def load_problem(path) -> InterfaceProblem:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        cfg = json.loads(text)
    else:
        import tomli

        try:
            cfg = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return problem_from_dict(cfg)


def problem_to_dict(p: InterfaceProblem) -> dict:
    if p.dimension != 1:
        raise ConfigError("only 1D problems serialize to config form")
    return {
        "name": p.name,
        "domain": list(p.domain),
        "interfaces": list(p.interfaces),
        "a": [q.to_config() for q in p.a.pieces],
        "b": [q.to_config() for q in p.b.pieces],
        "f": [q.to_config() for q in p.f.pieces],
        "g_d": [float(g) for g in p.g_d],
        "g_n": [float(g) for g in p.g_n],
        "bc": list(p.bc),
    }
