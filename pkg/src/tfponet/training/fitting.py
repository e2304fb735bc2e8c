"""Losses, gradients and the training loop.

The total loss is ``data + gamma * jump``.  The jump term compares the
model's interface jumps with ``(g_D, g_N)``; one-sided fluxes come from
finite differences inside each subdomain, so the whole loss is a quadratic
function of model outputs at a fixed set of points and one reverse pass per
sub-model gives the exact gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, TrainingError
from ..neuralcore import AdamState, adam_step
from ..operatornets import CompositeModel, basis_features, jump_stencil
from .dataset import Dataset


@dataclass(frozen=True)
class LossReport:
    total: float
    data: float
    jump: float
    gamma: float


class _Plan:
    """Every point the loss touches, grouped by distinct sub-model."""

    def __init__(self, model: CompositeModel, ds: Dataset):
        p = model.problem
        loc = ds.locations
        self.n_data = len(loc)
        self.has_jump = p.n_subdomains > 1 and len(ds.interface_points) > 0
        xs = [loc]
        sides = [np.where(ds.sides < 0, -1, 1)]
        if self.has_jump:
            left, right, h, k = jump_stencil(p, ds.interface_points)
            self.n_iface = len(h)
            self.h = h
            x1 = ds.interface_points if ds.interface_points.ndim == 1 else ds.interface_points[:, 0]
            self.a_left = np.array([p.a.piece_values(i, np.atleast_1d(x))[0] for i, x in zip(k, x1)])
            self.a_right = np.array([p.a.piece_values(i + 1, np.atleast_1d(x))[0] for i, x in zip(k, x1)])
            xs += [left, right]
            sides += [np.full(len(left), -1), np.full(len(right), 1)]
            self.g_d = ds.g_d
            self.g_n = ds.g_n
        self.x = np.concatenate(xs) if loc.ndim == 1 else np.vstack(xs)
        self.side = np.concatenate(sides)
        sub = model.subdomains(self.x, self.side)
        feats = None if model.features is None else basis_features(model.features, self.x, self.side)
        self.groups = []
        for net, subs in model.groups():
            idx = np.nonzero(np.isin(sub, subs))[0]
            self.groups.append((net, idx, self.x[idx], None if feats is None else feats[idx]))
        self.n_points = len(self.x)

    def forward(self, fs, keep=False):
        out = np.empty((len(fs), self.n_points))
        caches = []
        for net, idx, x, f in self.groups:
            if keep:
                o, c = net.forward(fs, x, f, keep=True)
                caches.append(c)
            else:
                o = net.forward(fs, x, f)
            out[:, idx] = o
        return (out, caches) if keep else out

    def backward(self, caches, g):
        grads = []
        for (net, idx, _, _), c in zip(self.groups, caches):
            grads += net.backward(c, g[:, idx])
        return grads

    def jumps(self, out):
        n, J = self.n_iface, self.n_data
        ul = out[:, J:J + 2 * n]
        ur = out[:, J + 2 * n:]
        value = ur[:, n:] - ul[:, n:]
        flux = (self.a_right * (ur[:, :n] - ur[:, n:]) - self.a_left * (ul[:, n:] - ul[:, :n])) / (2 * self.h)
        return value, flux


def _losses(plan: _Plan, out, targets, gamma, want_grad):
    M, J = targets.shape
    r = out[:, :J] - targets
    data = float(np.sum(r * r) / (M * J))
    grad = np.zeros_like(out) if want_grad else None
    if want_grad:
        grad[:, :J] = 2.0 * r / (M * J)
    jump = 0.0
    if plan.has_jump:
        value, flux = plan.jumps(out)
        ev = value - plan.g_d
        ef = flux - plan.g_n
        n = plan.n_iface
        jump = float((np.sum(ev * ev) + np.sum(ef * ef)) / (M * n))
        if want_grad and gamma != 0:
            c = 2.0 * gamma / (M * n)
            sl = plan.a_left / (2 * plan.h)
            sr = plan.a_right / (2 * plan.h)
            base = J
            grad[:, base:base + n] += c * ef * sl  # left, far
            grad[:, base + n:base + 2 * n] += c * (-ev - ef * sl)  # left, on
            base = J + 2 * n
            grad[:, base:base + n] += c * ef * sr  # right, far
            grad[:, base + n:base + 2 * n] += c * (ev - ef * sr)  # right, on
    total = data + gamma * jump
    return LossReport(total, data, jump, gamma), grad


def loss_data(model: CompositeModel, ds: Dataset):
    """Mean squared error over all ``M * J`` triplets."""
    pred = model.forward(ds.sensors, ds.locations, ds.side_labels())
    if pred.shape != ds.targets.shape:
        raise ValueError("prediction and target shapes differ")
    return float(np.mean((pred - ds.targets) ** 2))


def loss_jump(model: CompositeModel, ds: Dataset):
    """Mean over samples and interface points of the squared jump mismatches."""
    if model.problem.n_subdomains < 2 or len(ds.interface_points) == 0:
        raise ConfigError("the jump term needs an interface and interface points")
    plan = _Plan(model, ds)
    out = plan.forward(ds.sensors)
    value, flux = plan.jumps(out)
    return float(np.mean((value - ds.g_d) ** 2 + (flux - ds.g_n) ** 2))


def loss_report(model: CompositeModel, ds: Dataset, gamma=1.0):
    plan = _Plan(model, ds)
    report, _ = _losses(plan, plan.forward(ds.sensors), ds.targets, gamma, False)
    return report


def loss_and_gradient(model: CompositeModel, ds: Dataset, gamma=1.0, plan=None):
    plan = _Plan(model, ds) if plan is None else plan
    out, caches = plan.forward(ds.sensors, keep=True)
    report, g = _losses(plan, out, ds.targets, gamma, True)
    return report, plan.backward(caches, g)


evaluate_mse = loss_data


@dataclass
class TrainConfig:
    steps: int = 20000
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    halve_at: float | None = 0.75
    batch_samples: int | None = None
    log_every: int = 100


@dataclass
class TrainResult:
    model: CompositeModel
    history: list = field(default_factory=list)  # (step, data, jump, total)
    final: LossReport | None = None


def train(model: CompositeModel, ds: Dataset, gamma=1.0, config: TrainConfig | None = None, seed=0):
    """Adam on ``data + gamma * jump``; full batch unless ``batch_samples`` is set.

    With ``gamma = 0`` the jump term is still reported but not differentiated.
    The learning rate is halved once, after ``halve_at`` of the steps.
    """
    if gamma < 0:
        raise ConfigError("gamma must be nonnegative")
    cfg = config or TrainConfig()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    plan = _Plan(model, ds)
    params = model.params()
    state = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history = []
    halve_step = None if cfg.halve_at is None else int(cfg.halve_at * cfg.steps)
    M = ds.n_samples
    for step in range(cfg.steps + 1):
        full = step % cfg.log_every == 0 or step == cfg.steps
        if full:
            out = plan.forward(ds.sensors)
            report, _ = _losses(plan, out, ds.targets, gamma, False)
            if not np.isfinite(report.total):
                raise TrainingError(f"non-finite loss at step {step}", step)
            history.append((step, report.data, report.jump, report.total))
        if step == cfg.steps:
            break
        if halve_step is not None and step == halve_step:
            state.lr *= 0.5
        if cfg.batch_samples and cfg.batch_samples < M:
            rows = np.sort(rng.choice(M, cfg.batch_samples, replace=False))
            fs, tg = ds.sensors[rows], ds.targets[rows]
        else:
            fs, tg = ds.sensors, ds.targets
        out, caches = plan.forward(fs, keep=True)
        rep, g = _losses(plan, out, tg, gamma, True)
        if not np.isfinite(rep.total):
            raise TrainingError(f"non-finite loss at step {step}", step)
        grads = plan.backward(caches, g)
        adam_step(params, grads, state)
    return TrainResult(model, history, loss_report(model, ds, gamma))


def jump_error(model: CompositeModel, ds: Dataset):
    """Mean |[N] - g_D| over samples and interface points."""
    plan = _Plan(model, ds)
    value, _ = plan.jumps(plan.forward(ds.sensors))
    return float(np.mean(np.abs(value - ds.g_d)))
