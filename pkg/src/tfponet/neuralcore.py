"""Small dense ReLU networks with manual reverse mode and an Adam optimizer.

Everything is float64 and batch-first: inputs are ``(n, d_in)`` arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError


class Mlp:
    """Fully connected network, ReLU on hidden layers, identity output."""

    def __init__(self, sizes, weights=None, biases=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ConfigError(f"invalid layer sizes {sizes}")
        shapes = list(zip(self.sizes[:-1], self.sizes[1:]))
        if weights is None:
            weights = [np.zeros((i, o)) for i, o in shapes]
        if biases is None:
            biases = [np.zeros(o) for _, o in shapes]
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for (i, o), w, b in zip(shapes, self.weights, self.biases):
            if w.shape != (i, o) or b.shape != (o,):
                raise ConfigError("weight/bias shapes do not match layer sizes")

    @classmethod
    def initialized(cls, sizes, rng: np.random.Generator):
        """He-uniform weights on ReLU-fed layers, LeCun-uniform on the output;
        biases uniform in +-1/sqrt(fan_in) so first-layer kinks spread over the inputs."""
        net = cls(sizes)
        n_layers = len(net.weights)
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            fan_in = w.shape[0]
            gain = 3.0 if l == n_layers - 1 else 6.0
            w[...] = rng.uniform(-1.0, 1.0, w.shape) * np.sqrt(gain / fan_in)
            b[...] = rng.uniform(-1.0, 1.0, b.shape) / np.sqrt(fan_in)
        return net

    @property
    def d_in(self):
        return self.sizes[0]

    @property
    def d_out(self):
        return self.sizes[-1]

    def params(self):
        """Parameter arrays in declared order ``W0, b0, W1, b1, ...`` (live views)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return Mlp(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x, keep=False):
        """Evaluate on a batch; with ``keep`` also return the cache for :meth:`backward`."""
        h = np.asarray(x, dtype=float)
        if h.ndim != 2 or h.shape[1] != self.d_in:
            raise ValueError(f"expected input of shape (n, {self.d_in}), got {h.shape}")
        cache = [h]
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if l == last else np.maximum(z, 0.0)
            cache.append(z)
        return (h, cache) if keep else h

    def backward(self, cache, upstream):
        """Parameter gradients (same order as :meth:`params`) and input gradient
        of ``sum(upstream * output)``."""
        g = np.asarray(upstream, dtype=float)
        n_layers = len(self.weights)
        if g.shape != (cache[0].shape[0], self.d_out):
            raise ValueError("upstream gradient shape does not match the output")
        grads = [None] * (2 * n_layers)
        for l in range(n_layers - 1, -1, -1):
            z_in = cache[l]
            h_in = z_in if l == 0 else np.maximum(z_in, 0.0)
            grads[2 * l] = h_in.T @ g
            grads[2 * l + 1] = g.sum(axis=0)
            g = g @ self.weights[l].T
            if l > 0:
                g = g * (z_in > 0.0)
        return grads, g

    def __call__(self, x):
        return self.forward(x)


def forward(net: Mlp, x):
    """Single input vector or batch."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return net.forward(x[None, :])[0]
    return net.forward(x)


def backward(net: Mlp, x, upstream):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    up = np.asarray(upstream, dtype=float)
    up = up[None, :] if single else up
    _, cache = net.forward(xb, keep=True)
    grads, gx = net.backward(cache, up)
    return grads, (gx[0] if single else gx)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError("gradient shape does not match parameter")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient at step {state.step + 1}", state.step + 1)
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ------------------------------------------------------------------ file format


def write_blocks(path, header: dict, blocks):
    """JSON header line, then little-endian float64 blocks in ``header['blocks']`` order."""
    header = dict(header)
    header["blocks"] = [{"name": name, "shape": list(np.shape(arr))} for name, arr in blocks]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_blocks(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blocks = {}
        for spec in header["blocks"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise ConfigError(f"truncated block {spec['name']!r} in {path}")
            blocks[spec["name"]] = data.reshape(shape).astype(float)
    return header, blocks


def mlp_blocks(net: Mlp, prefix):
    out = []
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        out += [(f"{prefix}.W{l}", w), (f"{prefix}.b{l}", b)]
    return out


def mlp_from_blocks(sizes, blocks, prefix):
    n = len(sizes) - 1
    return Mlp(sizes, [blocks[f"{prefix}.W{l}"] for l in range(n)], [blocks[f"{prefix}.b{l}"] for l in range(n)])


def save_mlp(path, net: Mlp, meta=None):
    write_blocks(path, {"kind": "mlp", "sizes": list(net.sizes), "meta": meta or {}}, mlp_blocks(net, "net"))


def load_mlp(path):
    header, blocks = read_blocks(path)
    return mlp_from_blocks(header["sizes"], blocks, "net"), header.get("meta", {})
