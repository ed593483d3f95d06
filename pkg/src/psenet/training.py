"""Grids, losses (MSE and H1/Sobolev), optimizers and the training loop."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape

__all__ = [
    "Dataset",
    "Quadrature",
    "OptimizerConfig",
    "Adam",
    "SGDMomentum",
    "RunResult",
    "LossSpec",
    "h1_parts",
    "uniform_grid",
    "grid_2d",
    "make_dataset",
    "midpoint_quadrature",
    "graded_quadrature",
    "mse_loss",
    "h1_loss",
    "h1_error",
    "make_optimizer",
    "train",
]


def uniform_grid(a: float, b: float, h: float) -> np.ndarray:
    """Points ``a, a+h, ...`` up to ``b``; ``b`` included when ``(b-a)/h`` is integral."""
    if not a < b or not h > 0:
        raise ValueError(f"uniform_grid: need a < b and h > 0, got a={a}, b={b}, h={h}")
    steps = (b - a) / h
    n = round(steps)
    if abs(steps - n) <= 1e-12 * max(1.0, steps):
        return np.linspace(a, b, n + 1)
    return a + h * np.arange(math.floor(steps) + 1)


def grid_2d(g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """Tensor-product grid as an ``(n1 * n2, 2)`` array (``x1`` varies slowest)."""
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    return np.column_stack([X1.ravel(), X2.ravel()])


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, d)
    targets: np.ndarray  # (N, 1)
    target_derivatives: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(len(self.inputs), -1)
        if self.target_derivatives is not None:
            self.target_derivatives = np.asarray(self.target_derivatives, dtype=np.float64).reshape(
                self.targets.shape
            )


def make_dataset(f: Callable[[np.ndarray], np.ndarray], inputs: np.ndarray, f_prime=None) -> Dataset:
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = f(X[:, 0] if X.shape[1] == 1 else X)
    dy = None if f_prime is None else f_prime(X[:, 0])
    return Dataset(X, y, dy)


@dataclass
class Quadrature:
    nodes: np.ndarray  # (N,)
    weights: np.ndarray  # (N,)


def midpoint_quadrature(n: int = 1000, a: float = 0.0, b: float = 1.0) -> Quadrature:
    """Composite midpoint rule; never touches the endpoints."""
    h = (b - a) / n
    return Quadrature(a + h * (np.arange(n) + 0.5), np.full(n, h))


def graded_quadrature(breakpoints: Sequence[float], order: int = 30, levels: int = 40) -> Quadrature:
    """Composite Gauss-Legendre on ``breakpoints``.

    The first interval ``[x0, x1]`` is further split geometrically towards
    ``x0`` (``levels`` halvings), which resolves integrable endpoint
    singularities like ``x**(2*alpha - 2)`` at 0.
    """
    t, w = np.polynomial.legendre.leggauss(order)
    pts = list(breakpoints)
    x0, x1 = pts[0], pts[1]
    sub = [x0 + (x1 - x0) * 2.0**-k for k in range(levels, 0, -1)]
    edges = [x0] + sub + pts[1:]
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (t + 1.0))
        weights.append(half * w)
    return Quadrature(np.concatenate(nodes), np.concatenate(weights))


# ------------------------------------------------------------------- losses


def _mse_tensor(y, targets) -> ad.Tensor:
    return ad.mean(ad.square(ad.sub(y, targets)))


def _h1_tensor(y, dy, f_vals, fp_vals, weights) -> ad.Tensor:
    w = np.asarray(weights)[:, None]
    value = ad.weighted_sum(ad.square(ad.sub(y, f_vals)), w)
    slope = ad.weighted_sum(ad.square(ad.sub(dy, fp_vals)), w)
    return ad.add(value, slope)


def mse_loss(net, data: Dataset) -> float:
    """Mean squared residual over the dataset (NaN when the forward overflows)."""
    with np.errstate(over="ignore", invalid="ignore"):
        y = net.forward(data.inputs)
        return float(np.mean((y - data.targets) ** 2))


def h1_parts(net, f, f_prime, quad: Quadrature) -> tuple[float, float]:
    """Quadrature of ``(N-f)^2`` and ``(N'-f')^2`` separately.

    ``N'`` comes from reverse mode through :func:`autodiff.input_derivative`.
    """
    x = quad.nodes[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        y = net.forward(x)[:, 0]
        dy = ad.input_derivative(lambda t: net._run(t, net._const_params()), x)[:, 0]
        fx, fpx = f(quad.nodes), f_prime(quad.nodes)
        return float(quad.weights @ (y - fx) ** 2), float(quad.weights @ (dy - fpx) ** 2)


def h1_loss(net, f, f_prime, quad: Quadrature | None = None) -> float:
    """``int (N - f)^2 + (N' - f')^2`` by quadrature (midpoint, 1000 cells by default)."""
    quad = quad or midpoint_quadrature()
    value, slope = h1_parts(net, f, f_prime, quad)
    return value + slope


def h1_error(net, f, f_prime, quad: Quadrature | None = None) -> float:
    """The H1 norm of ``N - f``: square root of :func:`h1_loss`."""
    return math.sqrt(h1_loss(net, f, f_prime, quad))


# --------------------------------------------------------------- optimizers


@dataclass
class OptimizerConfig:
    name: str = "adam"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9


class Adam:
    def __init__(self, params: Sequence[np.ndarray], cfg: OptimizerConfig):
        self.params = list(params)
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


class SGDMomentum:
    def __init__(self, params: Sequence[np.ndarray], cfg: OptimizerConfig):
        self.params = list(params)
        self.cfg = cfg
        self.velocity = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        for p, g, vel in zip(self.params, grads, self.velocity):
            vel *= self.cfg.momentum
            vel += g
            p -= self.cfg.lr * vel


def make_optimizer(params, cfg: OptimizerConfig):
    if cfg.name == "adam":
        return Adam(params, cfg)
    if cfg.name in ("sgd", "momentum"):
        return SGDMomentum(params, cfg)
    raise ValueError(f"unknown optimizer {cfg.name!r}")


# ----------------------------------------------------------------- training


@dataclass
class LossSpec:
    """``kind='mse'`` on a Dataset, or ``kind='h1'`` on quadrature nodes of ``f``."""

    kind: str = "mse"
    f: Callable | None = None
    f_prime: Callable | None = None
    quad: Quadrature | None = None


@dataclass
class RunResult:
    config: dict
    seed: int
    loss_trace: list  # [(epoch, loss), ...] every ``trace_every`` epochs
    initial_loss: float
    final_loss: float
    nan: bool = False
    nan_epoch: int | None = None
    epochs_run: int = 0
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self, *, timing: bool = False) -> dict:
        d = asdict(self)
        d["loss_trace"] = [[e, _finite_or_none(v)] for e, v in self.loss_trace]
        d["initial_loss"] = _finite_or_none(self.initial_loss)
        d["final_loss"] = _finite_or_none(self.final_loss)
        if not timing:
            d.pop("wall_time")
        return d


def _finite_or_none(v: float):
    return float(v) if v is not None and math.isfinite(v) else None


class _Objective:
    """Taped loss evaluation bound to one network and one loss spec."""

    def __init__(self, net, data: Dataset | None, loss: LossSpec):
        self.net = net
        self.loss = loss
        if loss.kind == "mse":
            if data is None:
                raise ValueError("mse loss needs a dataset")
            self.X, self.Y = data.inputs, data.targets
        elif loss.kind == "h1":
            q = loss.quad or midpoint_quadrature()
            self.X = q.nodes[:, None]
            self.w = q.weights
            self.fv = np.asarray(loss.f(q.nodes), dtype=np.float64)[:, None]
            self.fpv = np.asarray(loss.f_prime(q.nodes), dtype=np.float64)[:, None]
        else:
            raise ValueError(f"unknown loss kind {loss.kind!r}")

    def __call__(self, tape: Tape):
        with np.errstate(over="ignore", invalid="ignore"):
            if self.loss.kind == "mse":
                y, leaves, _ = self.net.trace(tape, self.X)
                return _mse_tensor(y, self.Y), leaves
            y, leaves, dy = self.net.trace(tape, self.X, tangent=True)
            return _h1_tensor(y, dy, self.fv, self.fpv, self.w), leaves

    def value(self) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            if self.loss.kind == "mse":
                y = self.net.forward(self.X)
                return float(np.mean((y - self.Y) ** 2))
            y = self.net.forward(self.X)
            dy = self.net.derivative(self.X)
            w = self.w[:, None]
            return float(np.sum(w * (y - self.fv) ** 2) + np.sum(w * (dy - self.fpv) ** 2))


def train(
    net,
    data: Dataset | None,
    loss: LossSpec | str = "mse",
    opt: OptimizerConfig | None = None,
    epochs: int = 20_000,
    seed: int = 0,
    *,
    trace_every: int = 100,
    config: dict | None = None,
) -> RunResult:
    """Full-batch training; mutates ``net`` in place.

    A non-finite loss or gradient stops the run and is reported through
    ``RunResult.nan`` rather than raised.
    """
    loss = LossSpec(loss) if isinstance(loss, str) else loss
    opt = opt or OptimizerConfig()
    objective = _Objective(net, data, loss)
    names, arrays = zip(*net.named_params())
    optimizer = make_optimizer(arrays, opt)
    trace: list = []
    nan_epoch = None
    start = time.perf_counter()
    initial = objective.value()
    epoch = 0
    for epoch in range(epochs):
        tape = Tape()
        L, leaves = objective(tape)
        lv = L.item()
        if epoch % trace_every == 0:
            trace.append((epoch, lv))
        if not math.isfinite(lv):
            nan_epoch = epoch
            break
        grads = tape.backward(L)
        g = [grads[leaves[name]] for name in names]
        if not all(np.all(np.isfinite(gi)) for gi in g):
            nan_epoch = epoch
            break
        optimizer.step(g)
    else:
        epoch = epochs
    final = objective.value()
    if nan_epoch is None and not math.isfinite(final):
        nan_epoch = epochs
    return RunResult(
        config=dict(config or {}),
        seed=seed,
        loss_trace=trace,
        initial_loss=initial,
        final_loss=final if nan_epoch is None else math.nan,
        nan=nan_epoch is not None,
        nan_epoch=nan_epoch,
        epochs_run=epoch,
        wall_time=time.perf_counter() - start,
    )
