"""End-to-end experiment runs and plot-ready exports.

A run writes into one directory::

    data/train_<res>.bin, data/test.bin     datasets
    models/<family>_<res>.bin               trained checkpoints
    mse.csv                                 resolution, model, test metrics
    profile.csv                             one held-out input, truth vs predictions
    meta.json                               configuration, declared choices, file index
    timing.json                             wall-clock seconds per stage

Everything except ``timing.json`` is a deterministic function of the configuration.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .operatornets import build_model, fit_features
from .problem import REGISTRY, make_problem
from .training import (
    GroundTruth,
    TrainConfig,
    build_dataset,
    heldout_locations,
    input_distribution,
    jump_error,
    sample_inputs,
    save_dataset,
    sensor_layout,
    train,
    train_locations,
)
from .training.dataset import TEST_STREAM, TRAIN_STREAM

FAMILIES = ("deeponet", "ionet", "tfponet")
ALIASES = {"1": "example1_singular", "1s": "example1_singular", "1c": "example1_contrast",
           "2": "example2", "3": "example3"}
STRIP_HALF_WIDTH = 0.1
LAYER_WINDOWS = {
    "example1_singular": (0.0, 0.05),
    "example1_contrast": (0.0, 0.05),
    "example2": (0.45, 0.55),
}

_SCALES = {
    "desk": {
        "example1_singular": dict(resolutions=(129, 257), m_train=200, m_test=50, steps=20000),
        "example1_contrast": dict(resolutions=(129, 257), m_train=200, m_test=50, steps=20000),
        "example2": dict(resolutions=(128, 256), m_train=200, m_test=50, steps=20000),
        "example3": dict(resolutions=(33,), m_train=100, m_test=50, steps=30000),
    },
    "full": {
        "example1_singular": dict(resolutions=(129, 257, 385, 513, 641), m_train=1000, m_test=200, steps=50000),
        "example1_contrast": dict(resolutions=(129, 257, 385, 513, 641), m_train=1000, m_test=200, steps=50000),
        "example2": dict(resolutions=(128, 256, 384, 512, 640), m_train=1000, m_test=200, steps=50000),
        "example3": dict(resolutions=(65,), m_train=500, m_test=100, steps=50000),
    },
}
_DEFAULT_MODELS = {
    "example1_singular": ("tfponet", "deeponet"),
    "example1_contrast": ("tfponet", "deeponet"),
    "example2": ("tfponet", "ionet"),
    "example3": ("tfponet", "ionet"),
}


def resolve_example(name) -> str:
    key = str(name).strip().lower()
    key = ALIASES.get(key, key)
    if key not in REGISTRY:
        raise ConfigError(f"unknown example {name!r}; choose from {sorted(ALIASES)} or {list(REGISTRY)}")
    return key


@dataclass
class ExperimentConfig:
    example: str
    models: tuple = ()
    resolutions: tuple = ()
    m_train: int = 200
    m_test: int = 50
    data_seed: int = 0
    model_seed: int = 0
    steps: int = 20000
    lr: float = 3e-4
    halve_at: float | None = 0.75
    gamma: float = 1.0
    scale: str = "desk"
    output: str = "results"

    def __post_init__(self):
        self.example = resolve_example(self.example)
        self.models = tuple(self.models) or _DEFAULT_MODELS[self.example]
        for m in self.models:
            if m not in FAMILIES:
                raise ConfigError(f"unknown model family {m!r}")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("model families must be distinct")
        self.resolutions = tuple(int(r) for r in self.resolutions)
        if not self.resolutions:
            raise ConfigError("at least one resolution is required")
        if any(b <= a for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise ConfigError("resolutions must be strictly increasing")
        if self.m_train < 1 or self.m_test < 1 or self.steps < 0:
            raise ConfigError("sample counts must be positive and steps nonnegative")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        for s in (self.data_seed, self.model_seed):
            if not isinstance(s, (int, np.integer)) or s < 0:
                raise ConfigError("seeds must be explicit nonnegative integers")

    @classmethod
    def preset(cls, example, scale="desk", **overrides):
        """Desk or full-scale defaults; the two differ only in sizes and step counts."""
        example = resolve_example(example)
        if scale not in _SCALES:
            raise ConfigError(f"unknown scale {scale!r}")
        values = dict(_SCALES[scale][example])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(example=example, scale=scale, **values)

    def to_dict(self):
        d = asdict(self)
        d["models"] = list(self.models)
        d["resolutions"] = list(self.resolutions)
        return d


def _seed_rng(*keys):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return "" if v is None else repr(float(v))


def strip_mae(pred, truth, locations, half_width=STRIP_HALF_WIDTH):
    """Mean absolute error over locations with ``|x1| <= half_width``."""
    mask = np.abs(locations[:, 0]) <= half_width
    if not mask.any():
        raise ConfigError("no evaluation locations inside the interface strip")
    return float(np.mean(np.abs(pred[:, mask] - truth[:, mask])))


def _declared(cfg: ExperimentConfig, problem, truth):
    dist = input_distribution(cfg.example)
    sx, _ = sensor_layout(problem)
    return {
        "input_grf": {"length_scale": dist.length_scale, "variance": dist.variance,
                      "segments": [list(s) for s in dist.segments], "grid_points": dist.grid_points},
        "sensors": int(len(sx)),
        "ground_truth": truth.resolution,
        "loss": "data + gamma * jump (mean squares, value and flux at interface points)",
        "optimizer": {"name": "adam", "lr": cfg.lr, "halve_at": cfg.halve_at, "batch": "full"},
        "strip_half_width": STRIP_HALF_WIDTH if problem.dimension == 2 else None,
    }


def run_experiment(config: ExperimentConfig, log=None):
    """Train every model family at every resolution and write the result files.

    Returns the list of result rows.  On failure ``meta.json`` records the
    stage and message before the exception propagates.
    """
    log = log or (lambda msg: None)
    out = Path(config.output)
    (out / "data").mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)
    meta = {"config": config.to_dict(), "status": "running", "files": {}, "results": []}
    timing = {}
    stage = "setup"

    def mark(name, t0):
        timing[name] = round(time.perf_counter() - t0, 3)

    try:
        problem = make_problem(config.example)
        truth = GroundTruth(config.example)
        meta["declared"] = _declared(config, problem, truth)

        stage = "test data"
        t0 = time.perf_counter()
        test_res = config.resolutions[-1] if problem.dimension == 2 else None
        xt, st = heldout_locations(config.example, test_res)
        test = build_dataset(config.example, config.m_test, xt, config.data_seed, TEST_STREAM, truth, st)
        save_dataset(out / "data" / "test.bin", test)
        meta["files"]["test"] = "data/test.bin"
        mark(stage, t0)
        log(f"test set: {test.n_samples} inputs x {test.n_locations} locations")

        train_inputs = sample_inputs(config.example, config.m_train, config.data_seed, TRAIN_STREAM)
        rows, profiles = [], []
        for res in config.resolutions:
            stage = f"train data {res}"
            t0 = time.perf_counter()
            x, s = train_locations(config.example, res)
            ds = build_dataset(config.example, config.m_train, x, config.data_seed, TRAIN_STREAM, truth, s,
                               inputs=train_inputs)
            dname = f"data/train_{res}.bin"
            save_dataset(out / dname, ds)
            mark(stage, t0)
            for family in config.models:
                stage = f"train {family} {res}"
                t0 = time.perf_counter()
                model = build_model(problem, family, ds.sensors.shape[1], _seed_rng(config.model_seed))
                if model.features is not None:
                    fit_features(model.features, ds.locations, ds.side_labels())
                tcfg = TrainConfig(steps=config.steps, lr=config.lr, halve_at=config.halve_at,
                                   log_every=max(1, config.steps // 10))
                result = train(model, ds, config.gamma, tcfg, seed=config.model_seed)
                mname = f"models/{family}_{res}.bin"
                model.save(out / mname, {"train_data": dname, "history": result.history})
                mark(stage, t0)

                stage = f"evaluate {family} {res}"
                pred = model.forward(test.sensors, test.locations, test.side_labels())
                mse = float(np.mean((pred - test.targets) ** 2))
                jerr = jump_error(model, test) if problem.interfaces else None
                smae = strip_mae(pred, test.targets, test.locations) if problem.dimension == 2 else None
                row = {"resolution": res, "model": family, "test_mse": mse, "jump_error": jerr,
                       "strip_mae": smae, "train_loss": result.final.total}
                rows.append(row)
                meta["results"].append({**row, "train_data": dname, "test_data": "data/test.bin", "model_file": mname})
                profiles.append((res, family, pred[0]))
                log(f"{family:9s} res {res:4d}  test mse {mse:.4e}  train loss {result.final.total:.4e}")

        stage = "write"
        _write_csv(out / "mse.csv", ["resolution", "model", "test_mse", "jump_error", "strip_mae"],
                   [[r["resolution"], r["model"], _fmt(r["test_mse"]), _fmt(r["jump_error"]), _fmt(r["strip_mae"])]
                    for r in rows])
        loc = test.locations.reshape(test.n_locations, -1)
        coords = ["x"] if loc.shape[1] == 1 else ["x1", "x2"]
        prow = []
        for res, family, p in profiles:
            for j in range(test.n_locations):
                prow.append([res, family, *(_fmt(v) for v in loc[j]), int(test.sides[j]),
                             _fmt(test.targets[0, j]), _fmt(p[j])])
        _write_csv(out / "profile.csv", ["resolution", "model", *coords, "side", "truth", "prediction"], prow)
        meta["files"].update({"mse": "mse.csv", "profile": "profile.csv", "timing": "timing.json"})
        meta["profile_sample"] = {"data": "data/test.bin", "index": 0}
        meta["status"] = "ok"
        return rows
    except Exception as exc:
        meta["status"] = "failed"
        meta["failure"] = {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
        raise
    finally:
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_mse(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["resolution"] = int(r["resolution"])
        for k in ("test_mse", "jump_error", "strip_mae"):
            r[k] = float(r[k]) if r.get(k) else None
    return rows


def export_plotdata(result_dir, out_dir=None):
    """Plot-ready CSVs from a run directory; returns the written paths.

    All inputs are read and checked before anything is written.
    """
    src = Path(result_dir)
    needed = [src / "meta.json", src / "mse.csv", src / "profile.csv"]
    missing = [p.name for p in needed if not p.is_file()]
    if missing:
        raise ConfigError(f"{src}: missing {', '.join(missing)}")
    meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
    if meta.get("status") != "ok":
        raise ConfigError(f"{src}: run did not finish ({meta.get('status')})")
    example = meta["config"]["example"]
    mse = read_mse(src / "mse.csv")
    with open(src / "profile.csv", newline="", encoding="utf-8") as fh:
        profile = list(csv.DictReader(fh))
    if not mse or not profile:
        raise ConfigError(f"{src}: empty result tables")

    dest = Path(out_dir) if out_dir is not None else src / "plot"
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    models = list(dict.fromkeys(r["model"] for r in mse))
    resolutions = sorted({r["resolution"] for r in mse})
    table = {(r["resolution"], r["model"]): r["test_mse"] for r in mse}
    path = dest / "mse_vs_resolution.csv"
    _write_csv(path, ["resolution", *models],
               [[res, *(_fmt(table.get((res, m))) for m in models)] for res in resolutions])
    written.append(path)

    finest = str(resolutions[-1])
    rows = [r for r in profile if r["resolution"] == finest]
    if "x" in profile[0]:
        lo, hi = LAYER_WINDOWS.get(example, (0.0, 0.05))
        keys = list(dict.fromkeys((r["x"], r["side"]) for r in rows))
        truth = {(r["x"], r["side"]): r["truth"] for r in rows}
        pred = {(r["x"], r["side"], r["model"]): r["prediction"] for r in rows}
        out_rows = []
        for x, side in keys:
            flag = int(lo <= float(x) <= hi)
            out_rows.append([x, side, truth[(x, side)], *(pred.get((x, side, m), "") for m in models), flag])
        path = dest / "profile.csv"
        _write_csv(path, ["x", "side", "truth", *models, "in_layer_window"], out_rows)
        written.append(path)
        side_path = dest / "profile_window.json"
        side_path.write_text(json.dumps({"resolution": int(finest), "layer_window": [lo, hi]}, indent=2) + "\n",
                             encoding="utf-8")
        written.append(side_path)
    else:
        for m in models:
            sel = [r for r in rows if r["model"] == m]
            path = dest / f"field_{m}.csv"
            _write_csv(path, ["x1", "x2", "truth", "pred", "abs_err"],
                       [[r["x1"], r["x2"], r["truth"], r["prediction"],
                         _fmt(abs(float(r["prediction"]) - float(r["truth"])))] for r in sel])
            written.append(path)
    return written


def ordering_holds(rows, winner, others, metric="test_mse"):
    """True when ``winner`` beats every family in ``others`` at every resolution."""
    by = {(r["resolution"], r["model"]): r[metric] for r in rows}
    for res in sorted({r["resolution"] for r in rows}):
        for o in others:
            if (res, o) in by and (res, winner) in by and not by[(res, winner)] < by[(res, o)]:
                return False
    return True


__all__ = ["ExperimentConfig", "run_experiment", "export_plotdata", "ordering_holds", "read_mse",
           "resolve_example", "strip_mae"]
