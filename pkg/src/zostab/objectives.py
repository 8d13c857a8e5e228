"""Objectives with value, gradient and Hessian-vector products.

Two concrete objectives are provided: the exact quadratic model around a
minimizer, and a small fully connected network trained with the squared loss
on synthetic data.  Both expose ``value``, ``gradient`` and ``hvp``; the MLP
also exposes batched variants so curvature probes can push many vectors
through one call.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .linalg import as_symmetric, sym_eigendecompose
from .rng import RngStream

FULL = "full"


class ObjectiveError(ValueError):
    pass


def _vec(x, d, name="x"):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != d:
        raise ObjectiveError(f"{name} has length {x.shape[0]}, expected {d}")
    return x


# --------------------------------------------------------------------------
# quadratic model


@dataclass(frozen=True)
class QuadraticModel:
    """f(x) = offset + 0.5 (x - x*)^T H (x - x*).

    ``hessian`` may be a 1-D spectrum (diagonal canonical form) or a dense
    symmetric matrix.
    """

    minimizer: np.ndarray
    hessian: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.hessian, dtype=float)
        if h.ndim == 1:
            if np.any(h < -1e-12):
                raise ObjectiveError("Hessian spectrum must be PSD")
            h = np.clip(h, 0.0, None)
            zero = not np.any(h > 0)
        else:
            h = as_symmetric(h)
            vals, _ = sym_eigendecompose(h)
            if vals[-1] < -1e-12 * max(1.0, abs(vals[0])):
                raise ObjectiveError("Hessian must be PSD")
            zero = not np.any(np.abs(h) > 0)
        if zero:
            raise ObjectiveError("Hessian must not be identically zero")
        xs = np.asarray(self.minimizer, dtype=float).reshape(-1)
        if xs.shape[0] != h.shape[0]:
            raise ObjectiveError("minimizer and Hessian dimensions differ")
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "minimizer", xs)

    @classmethod
    def from_spectrum(cls, spectrum, minimizer=None, offset=0.0):
        spectrum = np.asarray(spectrum, dtype=float)
        xs = np.zeros_like(spectrum) if minimizer is None else minimizer
        return cls(xs, spectrum, offset)

    @property
    def dim(self) -> int:
        return self.minimizer.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.hessian.ndim == 1

    def dense_hessian(self) -> np.ndarray:
        return np.diag(self.hessian) if self.is_diagonal else self.hessian.copy()

    def spectrum(self) -> np.ndarray:
        if self.is_diagonal:
            return np.sort(self.hessian)[::-1]
        return np.clip(sym_eigendecompose(self.hessian)[0], 0.0, None)

    def _apply(self, v):
        if self.is_diagonal:
            return self.hessian.reshape((-1,) + (1,) * (v.ndim - 1)) * v
        return self.hessian @ v

    def value(self, x) -> float:
        r = _vec(x, self.dim) - self.minimizer
        return float(self.offset + 0.5 * r @ self._apply(r))

    def values(self, xs) -> np.ndarray:
        """Batched value over rows of ``xs`` (k, d)."""
        r = np.asarray(xs, dtype=float) - self.minimizer
        return self.offset + 0.5 * np.einsum("kd,dk->k", r, self._apply(r.T))

    def gradient(self, x) -> np.ndarray:
        return self._apply(_vec(x, self.dim) - self.minimizer)

    def hvp(self, x, v) -> np.ndarray:
        return self._apply(_vec(v, self.dim, "v"))


quad_value = QuadraticModel.value
quad_gradient = QuadraticModel.gradient


def quad_hvp(model: QuadraticModel, v) -> np.ndarray:
    return model.hvp(None, v)


# --------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    batch_size: int | str = FULL
    classification: bool = False

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        n = self.inputs.shape[0]
        if n < 1 or self.targets.shape[0] != n:
            raise ObjectiveError("inputs and targets must have the same n >= 1 rows")
        if self.classification and not np.allclose(self.targets.sum(axis=1), 1.0):
            raise ObjectiveError("one-hot target rows must sum to 1")
        if self.batch_size != FULL and int(self.batch_size) < 1:
            raise ObjectiveError("batch_size must be positive or 'full'")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], FULL, self.classification)

    def to_csv(self, path) -> None:
        p, c = self.inputs.shape[1], self.targets.shape[1]
        header = [f"x{i}" for i in range(p)] + [f"y{j}" for j in range(c)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in np.hstack([self.inputs, self.targets]):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, classification=False) -> "Dataset":
        with open(Path(path), newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        ycols = [i for i, h in enumerate(header) if h.startswith("y")]
        if len(xcols) + len(ycols) != len(header):
            raise ObjectiveError(f"unexpected CSV header {header}")
        return cls(body[:, xcols], body[:, ycols], FULL, classification)


def _standardize(x):
    x = x - x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    x = x / sd
    return x - x.mean(axis=0)


def make_synthetic_dataset(n, p, c, kind="clusters", stream=None, teacher_width=16,
                           separation=2.0) -> Dataset:
    """Gaussian-cluster classification (one-hot) or teacher-MLP regression."""
    if min(n, p, c) < 1:
        raise ObjectiveError("n, p, c must be >= 1")
    stream = stream or RngStream(0)
    if kind == "clusters":
        centers = separation * stream.gaussian(c, p)
        labels = np.arange(n) % c
        stream.generator.shuffle(labels)
        x = centers[labels] + stream.gaussian(n, p)
        y = np.eye(c)[labels]
        return Dataset(_standardize(x), y, FULL, classification=True)
    if kind == "teacher":
        x = _standardize(stream.gaussian(n, p))
        teacher = MlpModel.init([p, teacher_width, c], stream=stream, scale=1.5)
        y = teacher.predict(x)
        return Dataset(x, y, FULL)
    raise ObjectiveError(f"unknown dataset kind {kind!r}")


# --------------------------------------------------------------------------
# MLP


_GELU_C = np.sqrt(2.0 / np.pi)


def _act(z, kind):
    if kind == "tanh":
        h = np.tanh(z)
        return h, 1.0 - h * h
    if kind == "gelu":
        inner = _GELU_C * (z + 0.044715 * z**3)
        t = np.tanh(inner)
        h = 0.5 * z * (1.0 + t)
        dh = 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)
        return h, dh
    raise ObjectiveError(f"unknown activation {kind!r}")


def n_params(widths: Sequence[int]) -> int:
    return int(sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:])))


@dataclass
class MlpModel:
    """Fully connected network; hidden layers use ``activation``, output is linear.

    Parameters are one flat vector laid out layer by layer as (W, b) with W of
    shape (out, in).  The training loss is sum ||f(x_i) - y_i||^2 / (2 n).
    """

    widths: tuple
    activation: str = "tanh"
    params: np.ndarray | None = None
    dataset: Dataset | None = None
    _slices: list = field(init=False, repr=False)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ObjectiveError("need at least input and output widths >= 1")
        _act(np.zeros(1), self.activation)
        self._slices = []
        off = 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            self._slices.append(((off, off + a * b, (b, a)), (off + a * b, off + a * b + b)))
            off += (a + 1) * b
        if self.params is None:
            self.params = np.zeros(off)
        self.params = _vec(self.params, off, "params").copy()

    @classmethod
    def init(cls, widths, activation="tanh", stream=None, scale=1.0, dataset=None):
        """LeCun-style init: W ~ N(0, scale^2 / fan_in), b = 0."""
        stream = stream or RngStream(0)
        m = cls(widths, activation, None, dataset)
        x = np.zeros(m.dim)
        for (w0, w1, shape), _ in m._slices:
            x[w0:w1] = stream.gaussian(w1 - w0) * scale / np.sqrt(shape[1])
        m.params = x
        return m

    @property
    def dim(self) -> int:
        return n_params(self.widths)

    def unpack(self, xs):
        """Split a (k, d) batch of parameter vectors into per-layer (W, b)."""
        out = []
        for (w0, w1, shape), (b0, b1) in self._slices:
            out.append((xs[:, w0:w1].reshape((xs.shape[0],) + shape), xs[:, b0:b1]))
        return out

    def _forward(self, xs, inputs):
        layers = self.unpack(xs)
        h = inputs
        cache = []
        for li, (w, b) in enumerate(layers):
            z = np.matmul(h, w.transpose(0, 2, 1)) + b[:, None, :]
            cache.append(h)
            if li < len(layers) - 1:
                h, dh = _act(z, self.activation)
                cache.append(dh)
            else:
                h = z
        return h, cache, layers

    def predict(self, inputs, params=None) -> np.ndarray:
        x = self.params if params is None else np.asarray(params, dtype=float)
        out, _, _ = self._forward(x[None, :], np.asarray(inputs, dtype=float))
        return out[0]

    def _data(self, batch):
        data = batch if batch is not None else self.dataset
        if data is None:
            raise ObjectiveError("no dataset attached")
        return data

    def values(self, xs, batch=None) -> np.ndarray:
        data = self._data(batch)
        out, _, _ = self._forward(np.atleast_2d(xs), data.inputs)
        r = out - data.targets
        return np.sum((r * r).reshape(r.shape[0], -1), axis=1) / (2.0 * data.n)

    def value(self, x, batch=None) -> float:
        return float(self.values(_vec(x, self.dim)[None, :], batch)[0])

    def values_grads(self, xs, batch=None):
        """Loss and exact reverse-mode gradients for a (k, d) batch of parameters."""
        data = self._data(batch)
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        out, cache, layers = self._forward(xs, data.inputs)
        if not np.all(np.isfinite(out)):
            raise ObjectiveError("non-finite network output")
        n = data.n
        r = out - data.targets
        loss = np.sum((r * r).reshape(r.shape[0], -1), axis=1) / (2.0 * n)
        grads = np.zeros_like(xs)
        delta = r / n
        nl = len(layers)
        for li in range(nl - 1, -1, -1):
            h_in = cache[2 * li]
            (w0, w1, shape), (b0, b1) = self._slices[li]
            grads[:, w0:w1] = np.matmul(delta.transpose(0, 2, 1), h_in).reshape(xs.shape[0], -1)
            grads[:, b0:b1] = delta.sum(axis=1)
            if li > 0:
                delta = np.matmul(delta, layers[li][0]) * cache[2 * li - 1]
        return loss, grads

    def value_grad(self, x, batch=None):
        loss, g = self.values_grads(_vec(x, self.dim)[None, :], batch)
        return float(loss[0]), g[0]

    def gradient(self, x, batch=None) -> np.ndarray:
        return self.value_grad(x, batch)[1]

    def hvp(self, x, v, batch=None) -> np.ndarray:
        """Central difference of exact gradients along v (or each column of v)."""
        x = _vec(x, self.dim)
        v = np.asarray(v, dtype=float)
        vb = v[:, None] if v.ndim == 1 else v
        norms = np.linalg.norm(vb, axis=0)
        if np.any(norms == 0):
            raise ObjectiveError("hvp direction must be nonzero")
        eps = 1e-4 * (1.0 + np.linalg.norm(x)) / norms
        steps = (vb * eps).T
        _, g = self.values_grads(np.vstack([x + steps, x - steps]), batch)
        k = vb.shape[1]
        hv = ((g[:k] - g[k:]) / (2.0 * eps[:, None])).T
        return hv[:, 0] if v.ndim == 1 else hv


def mlp_value_grad(model: MlpModel, batch=None):
    return model.value_grad(model.params, batch)


def mlp_hvp(model: MlpModel, batch, v):
    return model.hvp(model.params, v, batch)


class FiniteDifferenceHvp:
    """Wrap any objective so ``hvp`` uses central differences of its gradient."""

    def __init__(self, objective):
        self.objective = objective
        self.dim = objective.dim

    def value(self, x):
        return self.objective.value(x)

    def gradient(self, x):
        return self.objective.gradient(x)

    def hvp(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        eps = 1e-4 * (1.0 + np.linalg.norm(x)) / np.linalg.norm(v)
        return (self.gradient(x + eps * v) - self.gradient(x - eps * v)) / (2.0 * eps)


class BatchView:
    """Restrict an MLP objective to a fixed data batch (mini-batch training)."""

    def __init__(self, model: MlpModel, batch: Dataset):
        self.model = model
        self.batch = batch
        self.dim = model.dim

    def value(self, x):
        return self.model.value(x, self.batch)

    def values(self, xs):
        return self.model.values(xs, self.batch)

    def gradient(self, x):
        return self.model.gradient(x, self.batch)

    def hvp(self, x, v):
        return self.model.hvp(x, v, self.batch)
