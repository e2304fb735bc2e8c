"""DeepONet, TFPONet and the per-subdomain composite model.

Shapes follow one convention throughout: sensor matrices are ``(M, S)``,
location arrays ``(J, d)``, and model outputs ``(M, J)``.  The DeepONet
output factorizes as ``branch(f) @ trunk(x).T + bias``, so a full batch of
``M * J`` triplets costs one branch pass and one trunk pass.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DomainError
from .neuralcore import Mlp, mlp_blocks, mlp_from_blocks, read_blocks, write_blocks
from .problem import (
    REGISTRY,
    InterfaceProblem,
    Transform1d,
    make_problem,
    problem_from_dict,
    problem_to_dict,
)
from .specialfn import bessel_i_array
from .tfpm1d import Tfpm1dSolver, mesh_from_x_nodes
from .tfpm2d import HARMONIC_MU, make_grid

FD_RELATIVE_STEP = 1e-5
N_BASIS = 2


# ------------------------------------------------------------------ basis features


class BasisFeatures1d:
    """Normalized local bases ``(A1, A2)`` of a coarse feature mesh, min-max scaled.

    The feature mesh has ``per_subdomain`` subintervals per subdomain, uniform
    in the transformed coordinate.
    """

    def __init__(self, problem: InterfaceProblem, per_subdomain=16, lo=None, hi=None):
        self.problem = problem
        self.per_subdomain = int(per_subdomain)
        tr = Transform1d(problem.a, problem.domain)
        nodes = []
        for i in range(problem.n_subdomains):
            ys = np.linspace(tr.y_edges[i], tr.y_edges[i + 1], self.per_subdomain + 1)
            xs = tr.x_of_y(ys)
            xs[0], xs[-1] = problem.subdomain_bounds(i)
            nodes.append(xs)
        self._solver = Tfpm1dSolver(problem.with_source(lambda x: np.zeros_like(x)), mesh_from_x_nodes(problem, nodes))
        self.lo = None if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)

    def raw(self, x, side=None, derivative=False):
        x = np.asarray(x, dtype=float).reshape(-1)
        s = self._solver
        j, x = s.locate(x, side)
        y = s.transform.y_of_x(x)
        y = np.clip(y, s.bases.y0[j], s.bases.y1[j])
        a1, a2, d1, d2 = s.bases.normalized(j, y)
        vals = np.column_stack([a1, a2])
        if not derivative:
            return vals
        dy = s.transform.dy_dx(x, side)
        return vals, np.column_stack([d1 * dy, d2 * dy])

    def to_config(self):
        return {"kind": "tfpm1d", "per_subdomain": self.per_subdomain}


class BasisFeatures2d:
    """``I_0(mu r)/I_0(mu R)`` and ``I_1(mu r)/I_1(mu R)`` from the containing
    cell of a coarse feature grid (``r`` measured from the cell center)."""

    def __init__(self, problem: InterfaceProblem, cells=(8, 8), lo=None, hi=None):
        self.problem = problem
        self.cells = tuple(int(c) for c in cells)
        self.grid = make_grid(problem.with_source(lambda x: np.zeros_like(x)), *self.cells)
        self.lo = None if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)

    def raw(self, x, side=None, derivative=False):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        g = self.grid
        iface = self.problem.interfaces[0] if self.problem.interfaces else None
        cells = g.locate(pts, side, iface)
        y = (pts - g.centers[cells]) / g.a[cells][:, None]
        r = np.hypot(y[:, 0], y[:, 1])
        mu, big_r = g.mu[cells], g.radius[cells]
        vals = np.empty((len(pts), N_BASIS))
        dr = np.empty((len(pts), N_BASIS))  # d feature / d r
        harm = mu < HARMONIC_MU
        for n in range(N_BASIS):
            if harm.any():
                vals[harm, n] = (r[harm] / big_r[harm]) ** n
                dr[harm, n] = 0.0 if n == 0 else 1.0 / big_r[harm]
            b = ~harm
            if b.any():
                z, zr, m = mu[b] * r[b], mu[b] * big_r[b], mu[b]
                den = bessel_i_array(n, zr, scaled=True)
                e = np.exp(z - zr)
                vals[b, n] = bessel_i_array(n, z, scaled=True) / den * e
                if n == 0:
                    d = bessel_i_array(1, z, scaled=True)
                else:
                    d = 0.5 * (bessel_i_array(n - 1, z, scaled=True) + bessel_i_array(n + 1, z, scaled=True))
                dr[b, n] = m * d / den * e
        if not derivative:
            return vals
        safe = np.where(r > 0, r, 1.0)
        dr_dx1 = np.where(r > 0, y[:, 0] / safe, 0.0) / g.a[cells]
        return vals, dr * dr_dx1[:, None]

    def to_config(self):
        return {"kind": "tfpm2d", "cells": list(self.cells)}


def _fit(features, x, side):
    v = features.raw(x, side)
    features.lo = v.min(axis=0)
    features.hi = v.max(axis=0)
    return features


def _scale(features):
    if features.lo is None:
        raise ConfigError("basis features are not fitted to training locations")
    span = features.hi - features.lo
    ok = span > 0
    inv = np.where(ok, 1.0 / np.where(ok, span, 1.0), 0.0)
    return inv


def basis_features(features, x, side=None, derivative=False):
    """Features mapped to [0, 1] with the training min/max (degenerate range -> 0)."""
    inv = _scale(features)
    if derivative:
        v, d = features.raw(x, side, derivative=True)
        return (v - features.lo) * inv, d * inv
    return (features.raw(x, side) - features.lo) * inv


def make_features(problem: InterfaceProblem, **kw):
    if problem.dimension == 1:
        return BasisFeatures1d(problem, kw.get("per_subdomain", 16))
    return BasisFeatures2d(problem, kw.get("cells", (8, 8)))


def fit_features(features, x, side=None):
    return _fit(features, x, side)


# ------------------------------------------------------------------ models


class DeepOnet:
    """``out[m, j] = branch(f_m) . trunk(x_j) + bias``."""

    def __init__(self, branch: Mlp, trunk: Mlp, bias=0.0):
        if branch.d_out != trunk.d_out:
            raise ConfigError("branch and trunk latent sizes differ")
        self.branch = branch
        self.trunk = trunk
        self.bias = np.array([float(bias)])

    @classmethod
    def initialized(cls, n_sensors, dim, width, depth, latent, rng):
        hidden = [width] * depth
        branch = Mlp.initialized([n_sensors, *hidden, latent], rng)
        # keep the initial dot product O(1) instead of O(sqrt(latent))
        branch.weights[-1] /= np.sqrt(latent)
        return cls(branch, Mlp.initialized([dim, *hidden, latent], rng))

    def params(self):
        return self.branch.params() + self.trunk.params() + [self.bias]

    def forward(self, fs, x, feats=None, keep=False):
        bo, bc = self.branch.forward(fs, keep=True)
        to, tc = self.trunk.forward(np.asarray(x, dtype=float).reshape(len(x), -1), keep=True)
        out = bo @ to.T + self.bias[0]
        return (out, (bo, bc, to, tc)) if keep else out

    def backward(self, cache, g):
        bo, bc, to, tc = cache
        gb, _ = self.branch.backward(bc, g @ to)
        gt, gx = self.trunk.backward(tc, g.T @ bo)
        return gb + gt + [np.array([g.sum()])]

    def location_gradient(self, fs, x, feats=None, dfeats=None):
        """``d out[m, j] / d x_j`` (first coordinate) through the trunk, ``(M, J)``."""
        bo = self.branch.forward(fs)
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        _, tc = self.trunk.forward(x, keep=True)
        out = np.empty((len(bo), len(x)))
        for m in range(len(bo)):
            _, gx = self.trunk.backward(tc, np.broadcast_to(bo[m], (len(x), bo.shape[1])).copy())
            out[m] = gx[:, 0]
        return out

    def blocks(self, prefix):
        return mlp_blocks(self.branch, f"{prefix}.branch") + mlp_blocks(self.trunk, f"{prefix}.trunk") + [
            (f"{prefix}.bias", self.bias)
        ]

    def arch(self):
        return {"kind": "deeponet", "branch": list(self.branch.sizes), "trunk": list(self.trunk.sizes)}

    @classmethod
    def from_blocks(cls, arch, blocks, prefix):
        return cls(
            mlp_from_blocks(arch["branch"], blocks, f"{prefix}.branch"),
            mlp_from_blocks(arch["trunk"], blocks, f"{prefix}.trunk"),
            blocks[f"{prefix}.bias"][0],
        )


def deeponet_forward(model: DeepOnet, f_sensors, x):
    return model.forward(np.atleast_2d(f_sensors), np.atleast_1d(x))


class Tfponet:
    """DeepONet plus one scalar network per basis feature:
    ``out = DeepONet(f)(x) + sum_i net_i(B_i(x))``."""

    def __init__(self, deeponet: DeepOnet, basis_nets):
        self.deeponet = deeponet
        self.basis_nets = list(basis_nets)
        for net in self.basis_nets:
            if net.d_in != 1 or net.d_out != 1:
                raise ConfigError("basis networks map a scalar to a scalar")

    @classmethod
    def initialized(cls, n_sensors, dim, width, depth, latent, basis_width, rng, n_basis=N_BASIS):
        don = DeepOnet.initialized(n_sensors, dim, width, depth, latent, rng)
        nets = [Mlp.initialized([1, *[basis_width] * depth, 1], rng) for _ in range(n_basis)]
        # basis blocks start silent, so training begins from the plain DeepONet
        for net in nets:
            net.weights[-1][...] = 0.0
            net.biases[-1][...] = 0.0
        return cls(don, nets)

    @property
    def n_basis(self):
        return len(self.basis_nets)

    def params(self):
        out = self.deeponet.params()
        for net in self.basis_nets:
            out += net.params()
        return out

    def basis_sum(self, feats, keep=False):
        feats = np.asarray(feats, dtype=float)
        if feats.ndim != 2 or feats.shape[1] != self.n_basis:
            raise ValueError(f"expected features of shape (J, {self.n_basis})")
        total = np.zeros(len(feats))
        caches = []
        for i, net in enumerate(self.basis_nets):
            o, c = net.forward(feats[:, i:i + 1], keep=True)
            total = total + o[:, 0]
            caches.append(c)
        return (total, caches) if keep else total

    def forward(self, fs, x, feats=None, keep=False):
        if feats is None:
            raise ValueError("TFPONet evaluation needs basis features")
        d, dc = self.deeponet.forward(fs, x, keep=True)
        s, sc = self.basis_sum(feats, keep=True)
        out = d + s[None, :]
        return (out, (dc, sc)) if keep else out

    def backward(self, cache, g):
        dc, sc = cache
        grads = self.deeponet.backward(dc, g)
        col = g.sum(axis=0)[:, None]
        for net, c in zip(self.basis_nets, sc):
            gp, _ = net.backward(c, col)
            grads += gp
        return grads

    def location_gradient(self, fs, x, feats=None, dfeats=None):
        out = self.deeponet.location_gradient(fs, x)
        extra = np.zeros(len(feats))
        for i, net in enumerate(self.basis_nets):
            _, c = net.forward(feats[:, i:i + 1], keep=True)
            _, gx = net.backward(c, np.ones((len(feats), 1)))
            extra += gx[:, 0] * dfeats[:, i]
        return out + extra[None, :]

    def blocks(self, prefix):
        out = self.deeponet.blocks(f"{prefix}.deeponet")
        for i, net in enumerate(self.basis_nets):
            out += mlp_blocks(net, f"{prefix}.basis{i}")
        return out

    def arch(self):
        return {"kind": "tfponet", "deeponet": self.deeponet.arch(),
                "basis": [list(n.sizes) for n in self.basis_nets]}

    @classmethod
    def from_blocks(cls, arch, blocks, prefix):
        don = DeepOnet.from_blocks(arch["deeponet"], blocks, f"{prefix}.deeponet")
        nets = [mlp_from_blocks(s, blocks, f"{prefix}.basis{i}") for i, s in enumerate(arch["basis"])]
        return cls(don, nets)


def tfponet_forward(model: Tfponet, f_sensors, x, feats):
    return model.forward(np.atleast_2d(f_sensors), np.atleast_1d(x), np.atleast_2d(feats))


# ------------------------------------------------------------------ composite


class CompositeModel:
    """One sub-model per subdomain, dispatched on the location's subdomain.

    ``features`` (TFPONet only) is shared by all sub-models.
    """

    def __init__(self, problem: InterfaceProblem, models, features=None, family="tfponet"):
        if len(models) != problem.n_subdomains:
            raise ConfigError("one sub-model per subdomain is required")
        self.problem = problem
        self.models = list(models)
        self.features = features
        self.family = family
        if any(isinstance(m, Tfponet) for m in self.models) and features is None:
            raise ConfigError("TFPONet sub-models need basis features")

    def groups(self):
        """``[(model, subdomain indices), ...]`` over distinct sub-model objects."""
        out = []
        for i, m in enumerate(self.models):
            for model, subs in out:
                if model is m:
                    subs.append(i)
                    break
            else:
                out.append((m, [i]))
        return out

    def params(self):
        out = []
        for m, _ in self.groups():
            out += m.params()
        return out

    def subdomains(self, x, side=None):
        x = np.asarray(x, dtype=float)
        x1 = x if x.ndim == 1 else x[:, 0]
        return np.asarray(self.problem.subdomain_of(x1, side)).reshape(-1)

    def _feats(self, x, side):
        if self.features is None:
            return None
        return basis_features(self.features, x, side)

    def forward(self, fs, x, side=None):
        """Outputs ``(M, J)``; ``side`` (scalar or per-location) is needed on interfaces."""
        fs = np.atleast_2d(np.asarray(fs, dtype=float))
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        sub = self.subdomains(x, side)
        feats = self._feats(x, side)
        out = np.empty((len(fs), len(sub)))
        for i, model in enumerate(self.models):
            m = sub == i
            if m.any():
                out[:, m] = model.forward(fs, x[m], None if feats is None else feats[m])
        return out

    def location_gradient(self, fs, x, side=None):
        """Analytic ``d out / d x1`` (cross-check path for the finite-difference flux)."""
        fs = np.atleast_2d(np.asarray(fs, dtype=float))
        x = np.asarray(x, dtype=float)
        sub = self.subdomains(x, side)
        feats = dfeats = None
        if self.features is not None:
            feats, dfeats = basis_features(self.features, x, side, derivative=True)
        out = np.empty((len(fs), len(sub)))
        for i, model in enumerate(self.models):
            m = sub == i
            if m.any():
                out[:, m] = model.location_gradient(
                    fs, x[m], None if feats is None else feats[m], None if dfeats is None else dfeats[m]
                )
        return out

    # -- checkpoint
    def save(self, path, meta=None):
        blocks = []
        groups = self.groups()
        assignment = [0] * len(self.models)
        for g, (m, subs) in enumerate(groups):
            blocks += m.blocks(f"net{g}")
            for i in subs:
                assignment[i] = g
        if self.features is not None:
            blocks += [("features.lo", self.features.lo), ("features.hi", self.features.hi)]
        header = {
            "format": "tfponet-checkpoint",
            "version": 1,
            "family": self.family,
            "problem": _problem_ref(self.problem),
            "models": [m.arch() for m, _ in groups],
            "assignment": assignment,
            "features": None if self.features is None else self.features.to_config(),
            "meta": meta or {},
        }
        write_blocks(path, header, blocks)

    @classmethod
    def load(cls, path):
        header, blocks = read_blocks(path)
        if header.get("format") != "tfponet-checkpoint":
            raise ConfigError(f"{path} is not a model checkpoint")
        problem = _problem_from_ref(header["problem"])
        nets = []
        for g, arch in enumerate(header["models"]):
            kind = DeepOnet if arch["kind"] == "deeponet" else Tfponet
            nets.append(kind.from_blocks(arch, blocks, f"net{g}"))
        models = [nets[g] for g in header["assignment"]]
        feats = None
        if header["features"] is not None:
            cfg = header["features"]
            if cfg["kind"] == "tfpm1d":
                feats = BasisFeatures1d(problem, cfg["per_subdomain"])
            else:
                feats = BasisFeatures2d(problem, cfg["cells"])
            feats.lo, feats.hi = blocks["features.lo"], blocks["features.hi"]
        model = cls(problem, models, feats, header["family"])
        model.meta = header.get("meta", {})
        return model


def _problem_ref(p: InterfaceProblem):
    if p.name in REGISTRY:
        return {"example": p.name}
    return problem_to_dict(p)


def _problem_from_ref(ref):
    if "example" in ref:
        return make_problem(ref["example"])
    return problem_from_dict(ref)


def composite_forward(model: CompositeModel, f_sensors, x, side=None):
    return model.forward(f_sensors, x, side)


def interface_points(problem: InterfaceProblem, count=None):
    """Interface collocation points: the interface itself in 1D, ``count``
    equispaced heights (default 16) on the interface line in 2D."""
    if problem.dimension == 1:
        return np.array(problem.interfaces, dtype=float)
    (lo2, hi2) = problem.domain[1]
    n = 16 if count is None else count
    t = lo2 + (hi2 - lo2) * (np.arange(n) + 0.5) / n
    return np.column_stack([np.full(n, problem.interfaces[0]), t])


def jump_stencil(problem: InterfaceProblem, points):
    """Evaluation points for the one-sided central differences at interface points.

    Returns ``(left_points, right_points, h, k)``: each side gets ``[far, on]``
    pairs (``far`` at distance ``2h`` inside the subdomain), stacked as
    ``(2P, d)`` with the far points first; ``k`` is the interface index per point.
    """
    pts = np.asarray(points, dtype=float)
    one_d = pts.ndim == 1
    x1 = pts if one_d else pts[:, 0]
    k = np.searchsorted(np.asarray(problem.interfaces), x1)
    width_l = np.array([np.subtract(*problem.subdomain_bounds(i)[::-1]) for i in k])
    width_r = np.array([np.subtract(*problem.subdomain_bounds(i + 1)[::-1]) for i in k])
    h = FD_RELATIVE_STEP * np.minimum(width_l, width_r)
    if np.any(h < 1e-12 * np.minimum(width_l, width_r)):
        raise DomainError("finite-difference step collapsed")
    if one_d:
        left = np.concatenate([x1 - 2 * h, x1])
        right = np.concatenate([x1 + 2 * h, x1])
    else:
        shift = np.column_stack([2 * h, np.zeros(len(h))])
        left = np.vstack([pts - shift, pts])
        right = np.vstack([pts + shift, pts])
    return left, right, h, k


def interface_jump_prediction(model: CompositeModel, f_sensors, points=None):
    """Predicted ``([N], [a dN/dn])`` at interface points, each ``(M, P)``."""
    p = model.problem
    if p.n_subdomains < 2:
        raise DomainError("jump prediction needs at least two subdomains")
    pts = interface_points(p) if points is None else np.asarray(points, dtype=float)
    left, right, h, k = jump_stencil(p, pts)
    n = len(h)
    ul = model.forward(f_sensors, left, "left")
    ur = model.forward(f_sensors, right, "right")
    a_l = np.array([p.a.piece_values(i, np.atleast_1d(x))[0] for i, x in zip(k, np.atleast_1d(pts if pts.ndim == 1 else pts[:, 0]))])
    a_r = np.array([p.a.piece_values(i + 1, np.atleast_1d(x))[0] for i, x in zip(k, np.atleast_1d(pts if pts.ndim == 1 else pts[:, 0]))])
    value = ur[:, n:] - ul[:, n:]
    flux = a_r * (ur[:, :n] - ur[:, n:]) / (2 * h) - a_l * (ul[:, n:] - ul[:, :n]) / (2 * h)
    return value, flux


def continuous_across_interfaces(problem: InterfaceProblem):
    """True when every jump target is identically zero."""
    return all(not callable(g) and float(g) == 0.0 for g in (*problem.g_d, *problem.g_n))


def build_model(problem: InterfaceProblem, family, n_sensors, rng, width=None, depth=None,
                latent=None, basis_width=None, feature_options=None, shared=None):
    """Fresh composite model.

    ``family`` is ``deeponet`` (one network on the whole domain), ``ionet``
    (one DeepONet per subdomain) or ``tfponet``.  A TFPONet is shared across
    subdomains when ``shared`` is true; by default that happens for problems
    without prescribed jumps.
    """
    dim = problem.dimension
    if width is None:
        width = 100 if dim == 1 else 128
    if depth is None:
        depth = 1 if dim == 1 else 2
    if latent is None:
        latent = width
    if basis_width is None:
        basis_width = 20 if dim == 1 else 128
    if family == "deeponet":
        shared = DeepOnet.initialized(n_sensors, dim, width, depth, latent, rng)
        return CompositeModel(problem, [shared] * problem.n_subdomains, None, family)
    if family == "ionet":
        models = [DeepOnet.initialized(n_sensors, dim, width, depth, latent, rng)
                  for _ in range(problem.n_subdomains)]
        return CompositeModel(problem, models, None, family)
    if family == "tfponet":
        feats = make_features(problem, **(feature_options or {}))
        if shared is None:
            shared = continuous_across_interfaces(problem)
        if shared:
            net = Tfponet.initialized(n_sensors, dim, width, depth, latent, basis_width, rng)
            models = [net] * problem.n_subdomains
        else:
            models = [Tfponet.initialized(n_sensors, dim, width, depth, latent, basis_width, rng)
                      for _ in range(problem.n_subdomains)]
        return CompositeModel(problem, models, feats, family)
    raise ConfigError(f"unknown model family {family!r}")
