"""Input-function sampling and TFPM-labelled datasets of (f, x, u) triplets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericalError
from ..neuralcore import read_blocks, write_blocks
from ..operatornets import interface_points
from ..problem import REGISTRY, Piece, PiecewiseField, example3_boundary, make_problem
from ..tfpm1d import Tfpm1dSolver, uniform_mesh
from ..tfpm2d import Tfpm2dSolver, make_grid
from .grf import GrfSpec, covariance_factor, sample_grf

SCHEMA_VERSION = 1
TRAIN_STREAM, TEST_STREAM, PROFILE_STREAM = 0, 1, 2
GRID_POINTS = 513


@dataclass(frozen=True)
class InputDistribution:
    """Independent GRFs on ``segments``; ``assignment[i]`` is the segment
    feeding subdomain ``i``.  Samples are linear interpolants on the grid."""

    segments: tuple
    assignment: tuple
    length_scale: float
    variance: float = 1.0
    grid_points: int = GRID_POINTS

    def grids(self):
        return [np.linspace(lo, hi, self.grid_points) for lo, hi in self.segments]

    def factors(self):
        return [covariance_factor(GrfSpec(self.length_scale, self.variance, tuple(g))) for g in self.grids()]

    def sample(self, rng, breakpoints, factors=None):
        """One input function of the first coordinate (boundary data in 2D)."""
        factors = self.factors() if factors is None else factors
        grids = self.grids()
        values = [sample_grf(GrfSpec(self.length_scale, self.variance, tuple(g)), 1, rng, L)[0]
                  for g, L in zip(grids, factors)]
        pieces = tuple(Piece.grid(grids[s], values[s]) for s in self.assignment)
        return PiecewiseField(tuple(breakpoints), pieces, 1)


def input_distribution(problem_id) -> InputDistribution:
    if problem_id in ("example1_singular", "example1_contrast"):
        return InputDistribution(((0.0, 0.5), (0.5, 1.0)), (0, 1), 0.1)
    if problem_id == "example2":
        return InputDistribution(((0.0, 1.0),), (0, 0), 0.2, grid_points=2 * GRID_POINTS - 1)
    if problem_id == "example3":
        return InputDistribution(((-1.0, 0.0), (0.0, 1.0)), (0, 1), 0.2)
    raise ConfigError(f"no input distribution for {problem_id!r}")


def sensor_layout(problem):
    """Sensor abscissae along x1 and their sides (-1/+1): equispaced per
    subdomain, both ends included, so interfaces appear once from each side."""
    per = 50 if problem.dimension == 1 else 32
    xs, sides = [], []
    for i in range(problem.n_subdomains):
        lo, hi = problem.subdomain_bounds(i)
        pts = np.linspace(lo, hi, per)
        xs.append(pts)
        s = np.zeros(per, dtype=int)
        if i > 0:
            s[0] = 1
        if i < problem.n_subdomains - 1:
            s[-1] = -1
        sides.append(s)
    return np.concatenate(xs), np.concatenate(sides)


def train_locations(problem_id, resolution):
    """Training locations and sides.

    Example 1: ``resolution`` equispaced points on [0, 1] (the interface point
    taken from the left).  Example 2: ``resolution / 2`` equispaced points per
    subdomain, ends included.  Example 3: a ``resolution`` x ``resolution``
    grid without the interface column.
    """
    if problem_id in ("example1_singular", "example1_contrast"):
        x = np.linspace(0.0, 1.0, resolution)
        return x, np.where(x == 0.5, -1, 0)
    if problem_id == "example2":
        if resolution % 2:
            raise ConfigError("Example 2 resolutions must be even")
        half = resolution // 2
        x = np.concatenate([np.linspace(0.0, 0.5, half), np.linspace(0.5, 1.0, half)])
        side = np.zeros(resolution, dtype=int)
        side[half - 1], side[half] = -1, 1
        return x, side
    if problem_id == "example3":
        t = np.linspace(-1.0, 1.0, resolution)
        g1, g2 = np.meshgrid(t[t != 0.0], t, indexing="ij")
        pts = np.column_stack([g1.ravel(), g2.ravel()])
        return pts, np.zeros(len(pts), dtype=int)
    raise ConfigError(f"unknown problem {problem_id!r}")


def heldout_locations(problem_id, resolution=None):
    """Held-out locations: 1001 points in 1D, the training grid layout in 2D."""
    if problem_id == "example3":
        return train_locations(problem_id, resolution or 33)
    x = np.linspace(0.0, 1.0, resolution or 1001)
    return x, np.where(x == 0.5, -1, 0)


@dataclass
class Dataset:
    problem_id: str
    sensors: np.ndarray  # (M, S)
    locations: np.ndarray  # (J,) or (J, 2)
    sides: np.ndarray  # (J,) -1 left, +1 right, 0 off-interface
    targets: np.ndarray  # (M, J)
    interface_points: np.ndarray  # (J0,) or (J0, 2)
    g_d: np.ndarray  # (J0,)
    g_n: np.ndarray  # (J0,)
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.sensors.shape[0]

    @property
    def n_locations(self):
        return len(self.locations)

    @property
    def n_triplets(self):
        return self.n_samples * self.n_locations

    def side_labels(self):
        return np.where(self.sides < 0, -1, 1)

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.problem_id, self.sensors[rows], self.locations, self.sides, self.targets[rows],
                       self.interface_points, self.g_d, self.g_n, dict(self.meta))


class GroundTruth:
    """TFPM label oracle for one registry problem; the operator is set up once.

    ``problem`` overrides the registry coefficients or jump data (same layout).
    """

    def __init__(self, problem_id, nodes_per_subdomain=2049, cells=(64, 64), order=3, problem=None):
        self.problem_id = problem_id
        self.base = make_problem(problem_id) if problem is None else problem
        self.dimension = self.base.dimension
        if self.dimension == 1:
            self.solver = Tfpm1dSolver(self.base, uniform_mesh(self.base, nodes_per_subdomain))
            self.resolution = {"nodes_per_subdomain": nodes_per_subdomain}
        else:
            self.solver = Tfpm2dSolver(self.base, make_grid(self.base, *cells), order)
            self.resolution = {"cells": list(cells), "order": order}
        self._plans = {}

    def solve(self, f: PiecewiseField):
        if self.dimension == 1:
            return self.solver.solve(f)
        return self.solver.solve(self.base.with_boundary(example3_boundary(f)))

    def values(self, sol, locations, sides):
        if self.dimension == 1:
            key = (locations.tobytes(), np.asarray(sides).tobytes())
            if key not in self._plans:
                self._plans = {key: self.solver.plan(locations, np.where(sides < 0, -1, 1))}
            return self._plans[key].values(sol)
        return sol.evaluate(locations, np.where(sides < 0, -1, 1))


def sample_inputs(problem_id, count, seed, stream):
    """``count`` input functions with one seed stream per sample."""
    dist = input_distribution(problem_id)
    base = make_problem(problem_id)
    factors = dist.factors()
    out = []
    for m in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), m]))
        out.append(dist.sample(rng, base.interfaces, factors))
    return out


def build_dataset(problem_id, count, locations, seed, stream=TRAIN_STREAM, truth: GroundTruth | None = None,
                  sides=None, inputs=None):
    """Sample ``count`` inputs, label them with TFPM at ``locations``."""
    if problem_id not in REGISTRY:
        raise ConfigError(f"unknown problem {problem_id!r}")
    truth = GroundTruth(problem_id) if truth is None else truth
    base = truth.base
    locations = np.asarray(locations, dtype=float)
    sides = np.zeros(len(locations), dtype=int) if sides is None else np.asarray(sides, dtype=int)
    sx, ss = sensor_layout(base)
    fs = sample_inputs(problem_id, count, seed, stream) if inputs is None else inputs
    sensors = np.empty((count, len(sx)))
    targets = np.empty((count, len(locations)))
    for m, f in enumerate(fs):
        sensors[m] = f(sx, side=np.where(ss < 0, -1, 1))
        try:
            sol = truth.solve(f)
        except NumericalError as exc:
            raise NumericalError(f"ground-truth solve failed for sample {m}: {exc}") from exc
        targets[m] = truth.values(sol, locations, sides)
    if not np.all(np.isfinite(targets)):
        raise NumericalError("non-finite ground-truth targets")
    ip = interface_points(base)
    t = None if base.dimension == 1 else ip[:, 1]
    gd = np.broadcast_to(np.asarray(base.jump_values(0, t)[0], dtype=float), (len(ip),)).copy()
    gn = np.broadcast_to(np.asarray(base.jump_values(0, t)[1], dtype=float), (len(ip),)).copy()
    meta = {
        "schema": SCHEMA_VERSION,
        "problem": problem_id,
        "seed": int(seed),
        "stream": int(stream),
        "samples": int(count),
        "locations": int(len(locations)),
        "triplets": int(count * len(locations)),
        "tfpm": truth.resolution,
        "grf": {"length_scale": input_distribution(problem_id).length_scale, "variance": 1.0},
    }
    return Dataset(problem_id, sensors, locations, sides, targets, ip, gd, gn, meta)


def save_dataset(path, ds: Dataset):
    header = {"format": "tfponet-dataset", "problem": ds.problem_id, "meta": ds.meta,
              "dimension": int(ds.locations.ndim)}
    write_blocks(path, header, [
        ("sensors", ds.sensors), ("locations", ds.locations), ("sides", ds.sides.astype(float)),
        ("targets", ds.targets), ("interface_points", ds.interface_points),
        ("g_d", ds.g_d), ("g_n", ds.g_n),
    ])


def load_dataset(path) -> Dataset:
    header, b = read_blocks(path)
    if header.get("format") != "tfponet-dataset":
        raise ConfigError(f"{path} is not a dataset file")
    return Dataset(header["problem"], b["sensors"], b["locations"], b["sides"].astype(int), b["targets"],
                   b["interface_points"], b["g_d"], b["g_n"], header["meta"])


def export_dataset_csv(path, ds: Dataset):
    """One row per triplet: sample, location coordinates, side, target."""
    loc = ds.locations.reshape(len(ds.locations), -1)
    cols = ["x"] if loc.shape[1] == 1 else ["x1", "x2"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", *cols, "side", "u"])
        for m in range(ds.n_samples):
            for j in range(ds.n_locations):
                w.writerow([m, *(repr(float(v)) for v in loc[j]), int(ds.sides[j]), repr(float(ds.targets[m, j]))])
