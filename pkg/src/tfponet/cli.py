"""Command line entry point (``tfponet``).

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 an ordering check requested with ``--check`` did not hold.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .experiments import ExperimentConfig, export_plotdata, ordering_holds, resolve_example, run_experiment
from .operatornets import CompositeModel, build_model, fit_features
from .problem import _parse_field, example3_boundary, load_problem, make_problem
from .specialfn import airy_arrays, bessel_i_array
from .tfpm1d import Tfpm1dSolver, uniform_mesh
from .tfpm2d import Tfpm2dSolver, make_grid
from .training import (
    GroundTruth,
    TrainConfig,
    build_dataset,
    export_dataset_csv,
    heldout_locations,
    jump_error,
    load_dataset,
    save_dataset,
    train,
    train_locations,
)
from .training.dataset import TEST_STREAM, TRAIN_STREAM

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_THRESHOLD = 2, 3, 4


class ThresholdFailure(Exception):
    pass


def _load_toml(path):
    import tomli

    try:
        return tomli.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _write_rows(path, header, rows):
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def _csv_ints(text, name):
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{name}: expected comma-separated integers, got {text!r}") from exc


def _csv_floats(text, name):
    try:
        return np.array([float(v) for v in str(text).split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from exc


class _Group(click.Group):
    """Maps library exceptions onto exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (ConfigError, DomainError) as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_CONFIG)
        except (NumericalError, OverflowError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            ctx.exit(EXIT_NUMERICAL)
        except ThresholdFailure as exc:
            click.echo(f"check failed: {exc}", err=True)
            ctx.exit(EXIT_THRESHOLD)


@click.group(cls=_Group)
@click.version_option(package_name="artifact")
def main():
    """Tailored finite point solvers and operator networks for interface problems."""


# ------------------------------------------------------------------ data / models


@main.command()
@click.option("--example", required=True, help="1, 1c, 2, 3 or a registry id")
@click.option("--samples", type=int, default=200, show_default=True)
@click.option("--resolution", type=int, default=None, help="training grid size (default: held-out grid)")
@click.option("--split", type=click.Choice(["train", "test"]), default="train", show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="also write a CSV copy")
def gen(example, samples, resolution, split, seed, out, csv_path):
    """Sample input functions and label them with the TFPM solver."""
    pid = resolve_example(example)
    if resolution is None:
        x, s = heldout_locations(pid)
    else:
        x, s = train_locations(pid, resolution)
    stream = TRAIN_STREAM if split == "train" else TEST_STREAM
    ds = build_dataset(pid, samples, x, seed, stream, GroundTruth(pid), s)
    save_dataset(out, ds)
    if csv_path:
        export_dataset_csv(csv_path, ds)
    click.echo(f"{out}: {ds.n_samples} inputs x {ds.n_locations} locations")


@main.command("train")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", "family", type=click.Choice(["deeponet", "ionet", "tfponet"]), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--steps", type=int, default=20000, show_default=True)
@click.option("--lr", type=float, default=3e-4, show_default=True)
@click.option("--gamma", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--history", type=click.Path(dir_okay=False), default=None, help="loss history CSV")
def train_cmd(data, family, seed, steps, lr, gamma, out, history):
    """Train one model family on a dataset file."""
    ds = load_dataset(data)
    problem = make_problem(ds.problem_id)
    model = build_model(problem, family, ds.sensors.shape[1], np.random.default_rng(seed))
    if model.features is not None:
        fit_features(model.features, ds.locations, ds.side_labels())
    result = train(model, ds, gamma, TrainConfig(steps=steps, lr=lr, log_every=max(1, steps // 100)), seed=seed)
    model.save(out, {"train_data": Path(data).name, "seed": seed, "steps": steps, "lr": lr, "gamma": gamma})
    if history:
        _write_rows(history, ["step", "data", "jump", "total"],
                    [[s, repr(d), repr(j), repr(t)] for s, d, j, t in result.history])
    r = result.final
    click.echo(f"{out}: data {r.data:.6e} jump {r.jump:.6e} total {r.total:.6e}")


@main.command("eval")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="per-triplet predictions CSV")
def eval_cmd(model_path, data, out):
    """Test MSE and interface jump error of a trained model."""
    model = CompositeModel.load(model_path)
    ds = load_dataset(data)
    pred = model.forward(ds.sensors, ds.locations, ds.side_labels())
    report = {"test_mse": float(np.mean((pred - ds.targets) ** 2))}
    if model.problem.interfaces:
        report["jump_error"] = jump_error(model, ds)
    if out:
        loc = ds.locations.reshape(ds.n_locations, -1)
        cols = ["x"] if loc.shape[1] == 1 else ["x1", "x2"]
        _write_rows(out, ["sample", *cols, "side", "truth", "prediction"],
                    [[m, *(repr(float(v)) for v in loc[j]), int(ds.sides[j]), repr(float(ds.targets[m, j])),
                      repr(float(pred[m, j]))] for m in range(ds.n_samples) for j in range(ds.n_locations)])
    click.echo(json.dumps(report, sort_keys=True))


# ------------------------------------------------------------------ solvers


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--nodes", type=int, default=129, show_default=True, help="mesh nodes per subdomain")
@click.option("--eval-grid", type=int, default=1001, show_default=True, help="equispaced output points")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path (stdout if omitted)")
def solve1d(config_path, nodes, eval_grid, out):
    """Solve a 1D interface problem described by a TOML/JSON file."""
    problem = load_problem(config_path)
    if problem.dimension != 1:
        raise ConfigError("solve1d needs a 1D problem")
    sol = Tfpm1dSolver(problem, uniform_mesh(problem, nodes)).solve()
    lo, hi = problem.domain
    x = np.linspace(lo, hi, eval_grid)
    rows = []
    for xi in x:
        sides = ("left", "right") if xi in problem.interfaces else (None,)
        for s in sides:
            rows.append([repr(float(xi)), repr(float(sol.evaluate(xi, s))), s or ""])
    _write_rows(out, ["x", "u", "side"], rows)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--cells", default="32,32", show_default=True, help="NX,NY")
@click.option("--order", type=int, default=3, show_default=True, help="Bessel truncation order")
@click.option("--eval-grid", type=int, default=33, show_default=True, help="output points per direction")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path (stdout if omitted)")
def solve2d(config_path, cells, order, eval_grid, out):
    """Solve the 2D interface problem; ``boundary`` in the config sets the top/bottom data."""
    cfg = _load_toml(config_path) if not config_path.endswith(".json") else json.loads(Path(config_path).read_text())
    pid = resolve_example(cfg.get("example", "3"))
    problem = make_problem(pid)
    if problem.dimension != 2:
        raise ConfigError("solve2d needs a 2D problem")
    if "boundary" in cfg:
        problem = problem.with_boundary(example3_boundary(_parse_field(cfg["boundary"], problem.interfaces, 1)))
    nx, ny = _csv_ints(cells, "--cells")
    sol = Tfpm2dSolver(problem, make_grid(problem, nx, ny), order).solve()
    (a1, b1), (a2, b2) = problem.domain
    g1, g2 = np.meshgrid(np.linspace(a1, b1, eval_grid), np.linspace(a2, b2, eval_grid), indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    rows = []
    iface = problem.interfaces[0]
    for p in pts:
        sides = ("left", "right") if p[0] == iface else (None,)
        for s in sides:
            rows.append([repr(float(p[0])), repr(float(p[1])), repr(float(sol.evaluate(p, s)[0])), s or ""])
    _write_rows(out, ["x1", "x2", "u", "side"], rows)
    click.echo(f"collocation residual max {sol.residual:.3e} rms {sol.rms_residual:.3e}", err=True)


@main.command()
@click.argument("function", type=click.Choice(["airy", "bessel"]))
@click.option("--x", "xs", required=True, help="comma-separated arguments")
@click.option("--order", type=int, default=0, show_default=True, help="Bessel order")
@click.option("--scaled", is_flag=True, help="exponentially scaled values")
def specialfn(function, xs, order, scaled):
    """Print Airy (Ai, Ai', Bi, Bi') or modified Bessel I_n values as CSV."""
    x = _csv_floats(xs, "--x")
    if function == "airy":
        ai, aip, bi, bip = airy_arrays(x, scaled=scaled)
        _write_rows(None, ["x", "ai", "aip", "bi", "bip"],
                    [[repr(float(v)) for v in row] for row in zip(x, ai, aip, bi, bip)])
    else:
        vals = bessel_i_array(order, x, scaled=scaled)
        _write_rows(None, ["x", "n", "i_n"], [[repr(float(v)), order, repr(float(i))] for v, i in zip(x, vals)])


# ------------------------------------------------------------------ experiments


@main.command()
@click.option("--example", default=None, help="1, 1c, 2, 3 or a registry id")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="TOML experiment config; command-line flags override it")
@click.option("--models", default=None, help="comma-separated families")
@click.option("--resolutions", default=None, help="comma-separated, strictly increasing")
@click.option("--m-train", type=int, default=None)
@click.option("--m-test", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--data-seed", type=int, default=None)
@click.option("--model-seed", type=int, default=None)
@click.option("--desk", "scale", flag_value="desk", default=True, help="desk-scale sizes (default)")
@click.option("--paper-scale", "scale", flag_value="full", help="full-scale sizes")
@click.option("--out", "output", type=click.Path(file_okay=False), default=None)
@click.option("--check", is_flag=True, help="exit 4 unless the first model beats the others everywhere")
@click.option("--quiet", is_flag=True)
def run(example, config_path, models, resolutions, m_train, m_test, steps, lr, gamma, data_seed, model_seed,
        scale, output, check, quiet):
    """Generate data, train every model at every resolution, write results."""
    cfg = _load_toml(config_path) if config_path else {}
    cfg = dict(cfg.get("experiment", cfg))
    flags = {
        "example": example, "models": models and tuple(m.strip() for m in models.split(",")),
        "resolutions": resolutions and _csv_ints(resolutions, "--resolutions"), "m_train": m_train,
        "m_test": m_test, "steps": steps, "lr": lr, "gamma": gamma, "data_seed": data_seed,
        "model_seed": model_seed, "output": output,
    }
    cfg.update({k: v for k, v in flags.items() if v is not None})
    if "example" not in cfg:
        raise ConfigError("--example (or example in the config) is required")
    scale = cfg.pop("scale", scale)
    pid = cfg.pop("example")
    cfg.setdefault("output", f"results/{resolve_example(pid)}")
    for key in ("models", "resolutions"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    try:
        config = ExperimentConfig.preset(pid, scale, **cfg)
    except TypeError as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc
    log = (lambda m: None) if quiet else (lambda m: click.echo(m, err=True))
    rows = run_experiment(config, log)
    click.echo(Path(config.output) / "mse.csv")
    if check:
        winner, others = config.models[0], config.models[1:]
        if not ordering_holds(rows, winner, others):
            raise ThresholdFailure(f"{winner} does not have the lowest test MSE at every resolution")


@main.command()
@click.argument("result_dir", type=click.Path(file_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None)
def export(result_dir, out):
    """Plot-ready CSVs from a run directory."""
    for p in export_plotdata(result_dir, out):
        click.echo(p)


if __name__ == "__main__":
    main()
