"""Small dense-network engine: affine + ReLU layers, running-statistics batch
normalization after the first hidden layer, squared-error loss and Adam.

All parameters live in one flat float64 vector; per-layer arrays are views
into it, so the Adam update is a handful of vectorized operations.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class DenseNetConfig:
    """Topology and optimizer settings for :class:`DenseNet`.

    ``hidden_layers`` counts ReLU layers; the output layer is extra, so a net
    has ``hidden_layers + 1`` affine layers in total.
    """

    input_dim: int
    hidden_layers: int = 8
    hidden_width: int = 64
    use_batchnorm: bool = True
    zeta: float = 1e-5
    bn_momentum: float = 0.9
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init: str = "glorot_uniform"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be >= 0")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.zeta <= 0:
            raise ValueError("zeta must be > 0")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise ValueError("bn_momentum must lie in [0, 1)")
        if self.init not in ("glorot_uniform", "uniform"):
            raise ValueError(f"unknown init scheme {self.init!r}")

    @property
    def has_batchnorm(self) -> bool:
        return self.use_batchnorm and self.hidden_layers >= 1

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [1]


class DenseNet:
    """Fully connected regressor with a single linear output unit.

    Inputs may be a vector (one sample) or a 2-D array (rows are samples).
    Batch normalization always uses the running mean and variance; in
    training mode the running statistics are refreshed after the gradient
    has been computed, so within one step they are constants.
    """

    def __init__(self, config: DenseNetConfig, seed: int | None = 0, init_range: float | None = None):
        self.config = config
        dims = config.layer_dims
        self._shapes: list[tuple[str, tuple[int, ...]]] = []
        for i in range(len(dims) - 1):
            self._shapes.append((f"W{i}", (dims[i + 1], dims[i])))
            self._shapes.append((f"b{i}", (dims[i + 1],)))
        if config.has_batchnorm:
            self._shapes.append(("bn_scale", (config.hidden_width,)))
            self._shapes.append(("bn_shift", (config.hidden_width,)))
        size = sum(int(np.prod(s)) for _, s in self._shapes)
        self.params = np.zeros(size)
        self.grads = np.zeros(size)
        self.p = self._views(self.params)
        self.g = self._views(self.grads)
        self.n_layers = len(dims) - 1

        width = config.hidden_width
        self.running_mean = np.zeros(width) if config.has_batchnorm else None
        self.running_var = np.ones(width) if config.has_batchnorm else None

        self.adam_m = np.zeros(size)
        self.adam_v = np.zeros(size)
        self.adam_t = 0
        self._adam_buf = np.zeros(size)

        rng = np.random.default_rng(seed)
        for i in range(self.n_layers):
            w = self.p[f"W{i}"]
            if init_range is not None:
                r = init_range
            elif config.init == "glorot_uniform":
                r = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            else:
                r = 0.1
            w[...] = rng.uniform(-r, r, size=w.shape)
        if config.has_batchnorm:
            self.p["bn_scale"][...] = 1.0

    def _views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        offset = 0
        for name, shape in self._shapes:
            n = int(np.prod(shape))
            out[name] = flat[offset:offset + n].reshape(shape)
            offset += n
        return out

    def param_names(self) -> list[str]:
        return [name for name, _ in self._shapes]

    # -- forward / backward -------------------------------------------------

    def _bn_denominator(self) -> np.ndarray:
        return np.sqrt(self.running_var + self.config.zeta)

    def _forward(self, x: np.ndarray):
        cfg = self.config
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.shape[1] != cfg.input_dim:
            raise ValueError(f"expected input of width {cfg.input_dim}, got {a.shape[1]}")
        cache = {"inputs": [], "pre": [], "h1": None, "norm": None}
        for i in range(self.n_layers):
            cache["inputs"].append(a)
            z = a @ self.p[f"W{i}"].T + self.p[f"b{i}"]
            if i == self.n_layers - 1:
                out = z[:, 0]
                break
            cache["pre"].append(z)
            a = np.maximum(z, 0.0)
            if i == 0 and cfg.has_batchnorm:
                cache["h1"] = a
                norm = (a - self.running_mean) / self._bn_denominator()
                cache["norm"] = norm
                a = self.p["bn_scale"] * norm + self.p["bn_shift"]
        return (out[0] if single else out), cache

    def forward(self, x, mode: str = "infer"):
        """Network output for one sample (scalar) or a batch (1-D array).

        ``mode`` is accepted for symmetry with training; normalization uses
        running statistics in both modes.
        """
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        out, _ = self._forward(x)
        return out

    __call__ = forward

    def loss_and_grad(self, x, target) -> float:
        """Mean squared error and its parameter gradient (stored in ``self.grads``)."""
        out, cache = self._forward(x)
        out = np.atleast_1d(out)
        target = np.atleast_1d(np.asarray(target, dtype=float))
        if not np.all(np.isfinite(target)):
            raise ValueError("target must be finite")
        n = out.shape[0]
        diff = out - target
        loss = float(np.mean(diff ** 2))

        self.grads[...] = 0.0
        delta = (2.0 / n) * diff[:, None]
        for i in range(self.n_layers - 1, -1, -1):
            inp = cache["inputs"][i]
            self.g[f"W{i}"][...] = delta.T @ inp
            self.g[f"b{i}"][...] = delta.sum(axis=0)
            if i == 0:
                break
            delta = delta @ self.p[f"W{i}"]
            # delta is now dL/d(input of layer i) = dL/d(output of hidden layer i-1)
            if i - 1 == 0 and self.config.has_batchnorm:
                norm = cache["norm"]
                self.g["bn_scale"][...] = (delta * norm).sum(axis=0)
                self.g["bn_shift"][...] = delta.sum(axis=0)
                delta = delta * (self.p["bn_scale"] / self._bn_denominator())
            delta = delta * (cache["pre"][i - 1] > 0.0)
        self._last_h1 = cache["h1"]
        return loss

    def update_running_stats(self, h1: np.ndarray) -> None:
        """Exponentially weighted mean/variance update from first-layer activations."""
        m = self.config.bn_momentum
        for row in np.atleast_2d(h1):
            delta = row - self.running_mean
            self.running_mean += (1.0 - m) * delta
            self.running_var[...] = m * (self.running_var + (1.0 - m) * delta ** 2)

    def adam_step(self) -> None:
        """Bias-corrected Adam update; non-finite gradient entries count as zero."""
        cfg = self.config
        g = self.grads
        if not np.isfinite(g).all():
            g[~np.isfinite(g)] = 0.0
        self.adam_t += 1
        m, v, buf = self.adam_m, self.adam_v, self._adam_buf
        m *= cfg.beta1
        np.multiply(g, 1.0 - cfg.beta1, out=buf)
        m += buf
        v *= cfg.beta2
        np.multiply(g, g, out=buf)
        buf *= 1.0 - cfg.beta2
        v += buf
        # m_hat / (sqrt(v_hat) + eps) with both corrections folded into scalars
        c1 = 1.0 - cfg.beta1 ** self.adam_t
        c2 = np.sqrt(1.0 - cfg.beta2 ** self.adam_t)
        np.sqrt(v, out=buf)
        buf += cfg.adam_eps * c2
        np.divide(m, buf, out=buf)
        buf *= cfg.lr * c2 / c1
        self.params -= buf

    def train_step(self, x, target) -> float:
        """One Adam update on squared error; returns the pre-update loss."""
        loss = self.loss_and_grad(x, target)
        self.adam_step()
        if self.config.has_batchnorm:
            self.update_running_stats(self._last_h1)
        return loss

    # -- checkpointing --------------------------------------------------------

    def state_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.param_names():
            yield name, self.p[name]
        if self.config.has_batchnorm:
            yield "bn_running_mean", self.running_mean
            yield "bn_running_var", self.running_var
        yield "adam_m", self.adam_m
        yield "adam_v", self.adam_v
        yield "adam_t", np.array([float(self.adam_t)])

    def to_csv(self) -> str:
        """Dump every parameter and optimizer slot as ``layer,index,value`` rows."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "index", "value"])
        for name, arr in self.state_arrays():
            for idx, v in enumerate(np.ravel(arr)):
                w.writerow([name, idx, repr(float(v))])
        return buf.getvalue()

    def load_csv(self, text: str) -> None:
        slots = {name: arr for name, arr in self.state_arrays()}
        seen = set()
        rows = csv.DictReader(io.StringIO(text))
        for row in rows:
            name = row["layer"]
            if name not in slots:
                raise ValueError(f"unknown checkpoint slot {name!r}")
            flat = slots[name].reshape(-1)
            flat[int(row["index"])] = float(row["value"])
            seen.add(name)
        missing = set(slots) - seen
        if missing:
            raise ValueError(f"checkpoint missing slots: {sorted(missing)}")
        self.adam_t = int(slots["adam_t"][0])

    def copy(self) -> "DenseNet":
        clone = DenseNet.__new__(DenseNet)
        clone.__dict__.update(self.__dict__)
        clone.params = self.params.copy()
        clone.grads = self.grads.copy()
        clone.p = clone._views(clone.params)
        clone.g = clone._views(clone.grads)
        clone.adam_m = self.adam_m.copy()
        clone.adam_v = self.adam_v.copy()
        clone._adam_buf = np.zeros_like(self._adam_buf)
        if self.running_mean is not None:
            clone.running_mean = self.running_mean.copy()
            clone.running_var = self.running_var.copy()
        return clone


def finite_diff_gradcheck(net: DenseNet, x, target, h: float = 1e-5, indices=None, atol: float = 1e-8) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    The gap for each parameter is ``|a - n| / max(|a|, |n|, atol)``; the floor
    keeps gradients below the resolution of a central difference from
    dominating. Running batch-norm statistics stay frozen throughout.
    ``indices`` limits the check to a subset of the flat parameter vector.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    net.loss_and_grad(x, target)
    analytic = net.grads.copy()
    if indices is None:
        indices = range(net.params.size)
    worst = 0.0
    for k in indices:
        orig = net.params[k]
        net.params[k] = orig + h
        up = _loss(net, x, target)
        net.params[k] = orig - h
        down = _loss(net, x, target)
        net.params[k] = orig
        numeric = (up - down) / (2.0 * h)
        a = analytic[k]
        scale = max(abs(a), abs(numeric), atol)
        worst = max(worst, abs(a - numeric) / scale)
    return worst


def _loss(net: DenseNet, x, target) -> float:
    out = np.atleast_1d(net.forward(x))
    return float(np.mean((out - np.atleast_1d(target)) ** 2))
