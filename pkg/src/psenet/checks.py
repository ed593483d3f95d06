"""Invariant checks shared by the test-suite and ``psenet check``.

Each group returns a :class:`CheckResult`; the finite-difference helpers
never touch the tape, so they serve as an independent oracle for it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .models import (
    Network,
    OneHiddenPse,
    PseGeneralizedLayer,
    build_network,
    dumps_model,
    loads_model,
)

FD_STEP = 1e-5
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    group: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    detail: str = ""

    def to_dict(self) -> dict:
        return {"group": self.group, "passed": self.passed, "metrics": self.metrics, "detail": self.detail}


# ------------------------------------------------------------ finite differences


def preactivations(net, X) -> list[np.ndarray]:
    """Every ReLU pre-activation of ``net`` on batch ``X`` (numpy only)."""
    X = np.asarray(X, dtype=np.float64)
    out = []
    if isinstance(net, OneHiddenPse):
        for j in range(1, net.n + 1):
            out.append(X @ net.W[j].T + net.b[j])
        return out
    h = X
    for layer in net.layers:
        if isinstance(layer, PseGeneralizedLayer):
            out.extend(h @ layer.W[j].T + layer.b[j] for j in range(1, layer.n + 1))
        else:
            out.append(h @ layer.W.T + layer.b)
        h = layer.apply(h, layer.params()).data
    return out


def away_from_kinks(net, X, margin: float = KINK_MARGIN) -> bool:
    return all(np.all(np.abs(z) > margin) for z in preactivations(net, X) if z.size)


def fd_param_gradient(net, loss_fn: Callable[[], float], step: float = FD_STEP) -> dict[str, np.ndarray]:
    """Central differences of ``loss_fn()`` with respect to every parameter entry."""
    grads = {}
    for name, arr in net.named_params():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def tape_param_gradient(net, X, *, tangent: bool = False) -> tuple[float, dict[str, np.ndarray]]:
    """Gradient of ``sum(N(X)**2)`` (or of ``sum(N'(X)**2)`` when ``tangent``)."""
    tape = Tape()
    y, leaves, dy = net.trace(tape, X, tangent=True if tangent else None)
    target = dy if tangent else y
    L = ad.sum(ad.square(target))
    grads = tape.backward(L)
    return L.item(), {k: grads[v] for k, v in leaves.items()}


def _stack(d: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([v.reshape(-1) for _, v in sorted(d.items())])


def gradient_rel_error(net, X, *, tangent: bool = False, step: float = FD_STEP) -> float:
    """Norm-wise relative error between tape and finite-difference gradients."""
    _, g = tape_param_gradient(net, X, tangent=tangent)
    if tangent:
        fd = fd_param_gradient(net, lambda: float(np.sum(net.derivative(X) ** 2)), step)
    else:
        fd = fd_param_gradient(net, lambda: float(np.sum(net.forward(X) ** 2)), step)
    a, b = _stack(g), _stack(fd)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def directional_rel_error(
    net, X, rng: np.random.Generator, *, tangent: bool = False, n_dirs: int = 4, step: float = FD_STEP
) -> float:
    """Tape gradient against central differences along random parameter directions.

    Each directional difference is Richardson-extrapolated from steps ``h``
    and ``h/2``, which removes the ``h**2`` term that otherwise dominates for
    high ReLU powers. Cost is ``4 * n_dirs`` forward passes, independent of
    the parameter count.
    """
    _, g = tape_param_gradient(net, X, tangent=tangent)
    params = dict(net.named_params())
    if tangent:
        loss = lambda: float(np.sum(net.derivative(X) ** 2))  # noqa: E731
    else:
        loss = lambda: float(np.sum(net.forward(X) ** 2))  # noqa: E731
    saved = {k: v.copy() for k, v in params.items()}

    def central(v, h):
        vals = []
        for sign in (1.0, -1.0):
            for k, arr in params.items():
                arr[...] = saved[k] + sign * h * v[k]
            vals.append(loss())
        return (vals[0] - vals[1]) / (2 * h)

    tape_dd, fd_dd = [], []
    try:
        for _ in range(n_dirs):
            v = {k: rng.standard_normal(a.shape) for k, a in saved.items()}
            tape_dd.append(sum(float(np.sum(g[k] * v[k])) for k in v))
            fd_dd.append((4 * central(v, step / 2) - central(v, step)) / 3)
    finally:
        for k, arr in params.items():
            arr[...] = saved[k]
    a, b = np.array(tape_dd), np.array(fd_dd)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def input_gradient_rel_error(net, X, step: float = FD_STEP) -> float:
    """Reverse-mode ``dN/dx`` (1D input) against central differences."""
    d = ad.input_derivative(lambda t: net._run(t, net._const_params()), X)
    fd = (net.forward(X + step) - net.forward(X - step)) / (2 * step)
    return float(np.linalg.norm(d - fd) / max(np.linalg.norm(fd), 1e-300))


# ------------------------------------------------------------------ groups

ARCHS = ("fc", "resnet", "pse0", "pse1", "pse2", "pse3", "pse4", "pse5", "gpse3", "reluk3")


def _random_config(arch: str, rng: np.random.Generator, d_in: int = 2):
    """Small random network plus an input batch away from all kinks."""
    depth = 1 if arch.startswith("reluk") else 2
    seed = int(rng.integers(2**31))
    for _ in range(200):
        net = build_network(arch, d_in, 3, depth, seed=seed, scheme="he-uniform", bias="uniform")
        X = rng.uniform(-1.0, 1.0, size=(4, d_in))
        if away_from_kinks(net, X):
            return net, X
        seed = int(rng.integers(2**31))
    raise RuntimeError(f"could not sample a kink-free configuration for {arch}")


def check_autodiff(n_configs: int = 20, seed: int = 0, tol: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = {}
    for arch in ARCHS:
        errs = []
        for _ in range(n_configs):
            net, X = _random_config(arch, rng)
            errs.append(gradient_rel_error(net, X))
            net1, X1 = _random_config(arch, rng, d_in=1)
            errs.append(gradient_rel_error(net1, X1, tangent=True))
            errs.append(input_gradient_rel_error(net1, X1))
        worst[arch] = max(errs)
    ok = all(v <= tol for v in worst.values())
    return CheckResult("autodiff", ok, {"max_rel_err": worst, "tol": tol})


def check_bspline(tol: float = 1e-9) -> CheckResult:
    from .constructors import BsplineSeries, bspline_eval, bspline_series_to_pse

    rng = np.random.default_rng(1)
    t = np.linspace(0.0, 5.0, 1001)
    pou = 0.0
    for n in range(1, 6):
        total = sum(bspline_eval(n, t - j) for j in range(-n - 1, 6))
        pou = max(pou, float(np.max(np.abs(total - 1.0))))
    series = 0.0
    x = np.linspace(0.0, 1.0, 1000)
    for n in (1, 2, 3):
        for k in (0, 3, 7, 15):
            s = BsplineSeries(n, k, rng.uniform(-1, 1, k + n + 1))
            net = bspline_series_to_pse(s)
            series = max(series, float(np.max(np.abs(net.forward(x[:, None])[:, 0] - s(x)))))
    ok = pou <= tol and series <= tol
    return CheckResult("bspline", ok, {"partition_of_unity": pou, "series_vs_pse": series, "tol": tol})


def check_equivalence(tol: float = 1e-8) -> CheckResult:
    from .constructors import lower_generalized

    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(5):
        net = random_generalized(rng, depth=3, n=4, width=5, d_in=5)
        X = rng.uniform(-1.0, 1.0, size=(100, 5))
        ref = net.forward(X)
        low = lower_generalized(net).forward(X)
        worst = max(worst, float(np.max(np.abs(low - ref) / np.maximum(np.abs(ref), 1e-300))))
    resnet_exact = _resnet_reduction_exact(rng)
    ok = worst <= tol and resnet_exact
    return CheckResult(
        "equivalence", ok, {"lowering_max_rel_dev": worst, "resnet_reduction_bitexact": resnet_exact, "tol": tol}
    )


def check_polynomial(tol: float = 1e-8) -> CheckResult:
    from .constructors import Polynomial, neuron_bound, polynomial_to_pse
    from .models import neuron_count

    rng = np.random.default_rng(3)
    worst, count_ok = 0.0, True
    for d in (1, 2, 3):
        for k in range(0, 5):
            p = Polynomial.random(d, k, rng)
            net = polynomial_to_pse(p)
            X = rng.uniform(-1.0, 1.0, size=(1000, d))
            ref = p(X)
            worst = max(worst, float(np.max(np.abs(net.forward(X)[:, 0] - ref)) / max(np.max(np.abs(ref)), 1e-300)))
            count_ok &= neuron_count(net) <= neuron_bound(d, k)
    ok = worst <= tol and count_ok
    return CheckResult("polynomial", ok, {"max_rel_dev": worst, "neuron_bound_ok": bool(count_ok), "tol": tol})


def check_piecewise(tol: float = 1e-10) -> CheckResult:
    from .constructors import PiecewisePoly, piecewise_poly_to_pse

    rng = np.random.default_rng(4)
    worst = 0.0
    x = np.linspace(0.0, 1.0, 2000)
    for _ in range(10):
        n = int(rng.integers(1, 9))
        mesh = np.concatenate([[0.0], np.sort(rng.uniform(0.0, 1.0, n - 1)), [1.0]])
        degrees = tuple(np.sort(rng.integers(1, 6, size=n)))
        p = PiecewisePoly.random(mesh, degrees, rng)
        net = piecewise_poly_to_pse(p)
        worst = max(worst, float(np.max(np.abs(net.forward(x[:, None])[:, 0] - p(x)))))
    return CheckResult("piecewise", worst <= tol, {"max_abs_dev": worst, "tol": tol})


GOLDEN = "golden_model.json"


def golden_model():
    """The deterministic reference model stored as package data."""
    from .constructors import Polynomial, polynomial_to_pse

    p = Polynomial(2, {(0, 0): 0.25, (1, 0): -1.0, (1, 1): 1.0, (3, 0): 0.5, (0, 3): -1.0 / 3.0})
    return polynomial_to_pse(p)


def check_serialization(golden_path: str | Path | None = None) -> CheckResult:
    """Round-trip the reference model and compare with the stored golden file."""
    ref = golden_model()
    text = dumps_model(ref)
    roundtrip = dumps_model(loads_model(text)) == text
    if golden_path is None:
        stored = resources.files("psenet").joinpath("data", GOLDEN).read_text()
    else:
        stored = Path(golden_path).read_text()
    try:
        golden_ok = dumps_model(loads_model(stored)) == text
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        return CheckResult("serialization", False, {"roundtrip": roundtrip}, f"unreadable golden file: {exc}")
    detail = "" if golden_ok else "golden weight file does not match the reference model"
    return CheckResult(
        "serialization", roundtrip and golden_ok, {"roundtrip": roundtrip, "golden_match": golden_ok}, detail
    )


def run_all(golden_path=None) -> list[CheckResult]:
    return [
        check_autodiff(),
        check_bspline(),
        check_equivalence(),
        check_polynomial(),
        check_piecewise(),
        check_serialization(golden_path),
    ]


# ----------------------------------------------------------------- helpers


def random_generalized(rng: np.random.Generator, *, depth: int, n: int, width: int, d_in: int) -> Network:
    """Generalized PSENet with every parameter drawn from U[-1, 1]."""
    net = build_network(f"gpse{n}", d_in, width, depth, seed=0, scheme="he-uniform")
    for layer in net.layers:
        for arr in (layer.W, layer.b, layer.alpha):
            arr[...] = rng.uniform(-1.0, 1.0, size=arr.shape)
    net.W_out[...] = rng.uniform(-1.0, 1.0, size=net.W_out.shape)
    net.b_out[...] = rng.uniform(-1.0, 1.0, size=net.b_out.shape)
    return net


def _resnet_reduction_exact(rng: np.random.Generator, trials: int = 1000) -> bool:
    from .models import PseSharedLayer, ResNetBlock

    W = rng.uniform(-1, 1, (10, 3))
    b = rng.uniform(-1, 1, 10)
    pse = PseSharedLayer(1, W, b, np.ones((2, 10)))
    res = ResNetBlock(W, b)
    X = rng.uniform(-2, 2, (trials, 3))
    return bool(np.array_equal(pse.apply(X, pse.params()).data, res.apply(X, res.params()).data))


def summarize(results: list[CheckResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=1, sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    raise TypeError(f"not JSON serializable: {type(v)}")
