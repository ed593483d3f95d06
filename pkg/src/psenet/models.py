"""Layer variants, networks and the one-hidden-layer PSENet family.

All layers evaluate on row batches: an input ``h`` of shape ``(N, d_in)``
maps to ``(N, d_out)``. Parameters live as plain numpy arrays on the layer
objects; :meth:`Network.trace` lifts them onto a tape for training.

Every layer also supports tangent propagation (``apply_tangent``), which
carries ``dh/dx`` for a fixed input direction through the graph using taped
ops. This is how the Sobolev loss obtains a differentiable ``N'(x)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

__all__ = [
    "FcLayer",
    "ResNetBlock",
    "PseSharedLayer",
    "PseGeneralizedLayer",
    "Network",
    "OneHiddenPse",
    "forward",
    "param_count",
    "neuron_count",
    "init",
    "build_network",
    "build_relu_k",
    "model_to_dict",
    "model_from_dict",
    "dumps_model",
    "loads_model",
    "save_model",
    "load_model",
]

INIT_SCHEMES = ("he-uniform", "pse-resnet-start")


def _affine(h, W, b) -> Tensor:
    return ad.add(ad.matmul(h, ad.transpose(W)), b)


def _lin(dh, W) -> Tensor:
    return ad.matmul(dh, ad.transpose(W))


@dataclass
class FcLayer:
    """``h -> relu(W h + b)``."""

    W: np.ndarray
    b: np.ndarray
    kind = "fc"

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def apply(self, h, p: Mapping) -> Tensor:
        return ad.relu_pow(_affine(h, p["W"], p["b"]), 1)

    def apply_tangent(self, h, dh, p: Mapping) -> tuple[Tensor, Tensor]:
        z = _affine(h, p["W"], p["b"])
        return ad.relu_pow(z, 1), ad.hadamard(ad.relu_pow_grad(z, 1), _lin(dh, p["W"]))


@dataclass
class ResNetBlock(FcLayer):
    """``h -> relu(W h + b) + (W h + b)``."""

    kind = "resnet"

    def apply(self, h, p: Mapping) -> Tensor:
        z = _affine(h, p["W"], p["b"])
        return ad.add(ad.relu_pow(z, 1), z)

    def apply_tangent(self, h, dh, p: Mapping) -> tuple[Tensor, Tensor]:
        z = _affine(h, p["W"], p["b"])
        dz = _lin(dh, p["W"])
        return ad.add(ad.relu_pow(z, 1), z), ad.add(ad.hadamard(ad.relu_pow_grad(z, 1), dz), dz)


@dataclass
class PseSharedLayer:
    """``h -> sum_j alpha[j] * relu^j(W h + b)`` with one shared pre-activation."""

    n: int
    W: np.ndarray
    b: np.ndarray
    alpha: np.ndarray  # (n + 1, d_out)
    kind = "pse"

    def __post_init__(self):
        if self.alpha.shape != (self.n + 1, self.W.shape[0]):
            raise ValueError(
                f"PseSharedLayer: alpha must have shape {(self.n + 1, self.W.shape[0])}, "
                f"got {self.alpha.shape}"
            )

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "alpha": self.alpha}

    def apply(self, h, p: Mapping) -> Tensor:
        return ad.relu_poly(_affine(h, p["W"], p["b"]), p["alpha"])

    def apply_tangent(self, h, dh, p: Mapping) -> tuple[Tensor, Tensor]:
        z = _affine(h, p["W"], p["b"])
        slope = ad.relu_poly(z, p["alpha"], order=1)
        return ad.relu_poly(z, p["alpha"]), ad.hadamard(slope, _lin(dh, p["W"]))


@dataclass
class PseGeneralizedLayer:
    """``h -> sum_j alpha[j] * relu^j(W[j] h + b[j])`` with per-power weights."""

    n: int
    W: np.ndarray  # (n + 1, d_out, d_in)
    b: np.ndarray  # (n + 1, d_out)
    alpha: np.ndarray  # (n + 1, d_out)
    kind = "gpse"

    def __post_init__(self):
        k, d_out, _ = self.W.shape
        if k != self.n + 1 or self.b.shape != (k, d_out) or self.alpha.shape != (k, d_out):
            raise ValueError(
                f"PseGeneralizedLayer: need n+1={self.n + 1} triples, got W{self.W.shape}, "
                f"b{self.b.shape}, alpha{self.alpha.shape}"
            )

    @property
    def d_in(self) -> int:
        return self.W.shape[2]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for j in range(self.n + 1):
            p[f"W.{j}"] = self.W[j]
            p[f"b.{j}"] = self.b[j]
            p[f"alpha.{j}"] = self.alpha[j]
        return p

    def apply(self, h, p: Mapping) -> Tensor:
        out = None
        for j in range(self.n + 1):
            term = ad.hadamard(p[f"alpha.{j}"], ad.relu_pow(_affine(h, p[f"W.{j}"], p[f"b.{j}"]), j))
            out = term if out is None else ad.add(out, term)
        return out

    def apply_tangent(self, h, dh, p: Mapping) -> tuple[Tensor, Tensor]:
        out = dout = None
        for j in range(self.n + 1):
            W, a = p[f"W.{j}"], p[f"alpha.{j}"]
            z = _affine(h, W, p[f"b.{j}"])
            term = ad.hadamard(a, ad.relu_pow(z, j))
            dterm = ad.hadamard(a, ad.hadamard(ad.relu_pow_grad(z, j), _lin(dh, W)))
            out = term if out is None else ad.add(out, term)
            dout = dterm if dout is None else ad.add(dout, dterm)
        return out, dout


def _as_batch(x) -> tuple[np.ndarray | Tensor, bool]:
    if isinstance(x, Tensor):
        return (x, False) if x.data.ndim == 2 else (ad.reshape(x, (1, -1)), True)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


class _Model:
    """Shared evaluation/tracing plumbing for Network and OneHiddenPse."""

    def named_params(self) -> Iterator[tuple[str, np.ndarray]]:
        raise NotImplementedError

    def _run(self, x, p, tangent=None):
        raise NotImplementedError

    def _const_params(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)

    def forward(self, x) -> np.ndarray:
        """Evaluate on a single point ``(d,)`` or a batch ``(N, d)``."""
        xb, single = _as_batch(x)
        self._check_input(xb)
        y = self._run(xb, self._const_params()).data
        return y[0] if single else y

    def derivative(self, x, direction=None) -> np.ndarray:
        """Directional input derivative via tangent propagation (no tape)."""
        xb, single = _as_batch(x)
        self._check_input(xb)
        dx = _direction(xb.shape, direction)
        _, dy = self._run(xb, self._const_params(), tangent=dx)
        return dy.data[0] if single else dy.data

    def trace(self, tape: Tape, x, *, tangent=None, x_leaf: bool = False):
        """Record a forward pass on ``tape``.

        Returns ``(output, leaves, dout)`` where ``leaves`` maps parameter names
        to leaf tensors and ``dout`` is the tangent output (or None).
        """
        xb, _ = _as_batch(x)
        self._check_input(xb)
        leaves = {name: tape.leaf(arr) for name, arr in self.named_params()}
        xin = tape.leaf(xb) if x_leaf else xb
        if tangent is None:
            return self._run(xin, leaves), leaves, None
        dx = _direction(np.shape(xb), tangent)
        y, dy = self._run(xin, leaves, tangent=dx)
        return y, leaves, dy

    def _check_input(self, xb):
        d = self.d_in
        if np.shape(xb)[1] != d:
            raise ad.ShapeError(f"forward: input has {np.shape(xb)[1]} features, network expects {d}")


def _direction(shape, direction) -> np.ndarray:
    if direction is None or direction is True:
        if shape[1] != 1:
            raise ValueError("derivative: a direction is required for multi-dimensional input")
        return np.ones(shape)
    return np.broadcast_to(np.asarray(direction, dtype=np.float64), shape)


@dataclass
class Network(_Model):
    """Hidden layers followed by an affine read-out (no activation)."""

    layers: list
    W_out: np.ndarray  # (kappa, d_L)
    b_out: np.ndarray  # (kappa,)

    def __post_init__(self):
        d = self.layers[0].d_in if self.layers else self.W_out.shape[1]
        for i, layer in enumerate(self.layers):
            if layer.d_in != d:
                raise ad.ShapeError(f"layer {i}: expects input width {layer.d_in}, previous width is {d}")
            d = layer.d_out
        if self.W_out.shape[1] != d or self.b_out.shape != (self.W_out.shape[0],):
            raise ad.ShapeError(f"readout: W{self.W_out.shape}, b{self.b_out.shape} vs width {d}")

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in if self.layers else self.W_out.shape[1]

    @property
    def d_out(self) -> int:
        return self.W_out.shape[0]

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                yield f"layers.{i}.{k}", v
        yield "readout.W", self.W_out
        yield "readout.b", self.b_out

    def _run(self, x, p, tangent=None):
        h, dh = x, tangent
        for i, layer in enumerate(self.layers):
            prefix = f"layers.{i}."
            lp = {k[len(prefix):]: v for k, v in p.items() if k.startswith(prefix)}
            if dh is None:
                h = layer.apply(h, lp)
            else:
                h, dh = layer.apply_tangent(h, dh, lp)
        y = _affine(h, p["readout.W"], p["readout.b"])
        if tangent is None:
            return y
        return y, _lin(dh, p["readout.W"])


@dataclass
class OneHiddenPse(_Model):
    """``f(x) = c0 + sum_j alpha[j] . relu^j(W[j] x + b[j])``.

    ``W[j]`` has shape ``(m_j, d)``; branches may be empty (``m_j == 0``).
    The ``j == 0`` branch is a single affine unit (``m_0 <= 1``).
    """

    n: int
    W: list  # W[j]: (m_j, d)
    b: list  # b[j]: (m_j,)
    alpha: list  # alpha[j]: (m_j,)
    c0: np.ndarray = field(default_factory=lambda: np.zeros(()))

    def __post_init__(self):
        self.c0 = np.asarray(self.c0, dtype=np.float64).reshape(())
        if not (len(self.W) == len(self.b) == len(self.alpha) == self.n + 1):
            raise ValueError(f"OneHiddenPse: need n+1={self.n + 1} branches")
        d = self.W[0].shape[1]
        for j in range(self.n + 1):
            m = self.W[j].shape[0]
            if self.W[j].shape != (m, d) or self.b[j].shape != (m,) or self.alpha[j].shape != (m,):
                raise ad.ShapeError(
                    f"OneHiddenPse branch {j}: W{self.W[j].shape}, b{self.b[j].shape}, "
                    f"alpha{self.alpha[j].shape} are inconsistent"
                )
        if self.W[0].shape[0] > 1:
            raise ValueError("OneHiddenPse: the j=0 branch holds at most one affine unit")

    @property
    def d_in(self) -> int:
        return self.W[0].shape[1]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.W)

    def named_params(self):
        for j in range(self.n + 1):
            if self.W[j].shape[0]:
                yield f"W.{j}", self.W[j]
                yield f"b.{j}", self.b[j]
                yield f"alpha.{j}", self.alpha[j]
        yield "c0", self.c0

    def _run(self, x, p, tangent=None):
        N = np.shape(x.data if isinstance(x, Tensor) else x)[0]
        y = ad.add(np.zeros((N, 1)), p["c0"])
        dy = ad.Tensor(np.zeros((N, 1))) if tangent is not None else None
        for j in range(self.n + 1):
            if not self.W[j].shape[0]:
                continue
            W, a = p[f"W.{j}"], p[f"alpha.{j}"]
            z = _affine(x, W, p[f"b.{j}"])
            col = ad.matmul(ad.relu_pow(z, j), a)
            y = ad.add(y, _column(col))
            if tangent is not None:
                dz = _lin(tangent, W)
                dy = ad.add(dy, _column(ad.matmul(ad.hadamard(ad.relu_pow_grad(z, j), dz), a)))
        return y if tangent is None else (y, dy)


def _column(v: Tensor) -> Tensor:
    return ad.reshape(v, (-1, 1))


def forward(net, x) -> np.ndarray:
    return net.forward(x)


def param_count(net) -> int:
    return int(sum(a.size for _, a in net.named_params()))


def neuron_count(net: OneHiddenPse) -> int:
    """|m| = sum of per-power widths."""
    return int(sum(net.widths))


# ---------------------------------------------------------------- construction


def _he_uniform(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / d_in)  # variance 2 / fan_in
    return rng.uniform(-bound, bound, size=(d_out, d_in))


def _bias(rng: np.random.Generator, d: int, bias: str) -> np.ndarray:
    if bias == "zero":
        return np.zeros(d)
    if bias == "uniform":
        return rng.uniform(-1.0, 1.0, size=d)
    raise ValueError(f"unknown bias init {bias!r}")


def _resnet_start_alpha(n: int, d: int) -> np.ndarray:
    alpha = np.zeros((n + 1, d))
    alpha[: min(n, 1) + 1] = 1.0
    return alpha


def init(net, scheme: str = "pse-resnet-start", rng_seed: int = 0, bias: str = "zero"):
    """Re-initialise ``net`` in place and return it.

    Weights are He-uniform. ``pse-resnet-start`` additionally sets
    ``alpha_0 = alpha_1 = 1`` and all higher alphas to 0, so a fresh PSENet
    layer behaves like a ResNet block. Deterministic for a given seed.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    rng = np.random.default_rng(rng_seed)
    resnet_alpha = scheme == "pse-resnet-start"
    if isinstance(net, OneHiddenPse):
        for j in range(net.n + 1):
            m, d = net.W[j].shape
            net.W[j][...] = _he_uniform(rng, m, d)
            net.b[j][...] = _bias(rng, m, bias)
            net.alpha[j][...] = rng.uniform(-1.0, 1.0, size=m) * math.sqrt(6.0 / max(m, 1))
        net.c0[...] = 0.0
        return net
    for layer in net.layers:
        if isinstance(layer, PseGeneralizedLayer):
            for j in range(layer.n + 1):
                layer.W[j] = _he_uniform(rng, layer.d_out, layer.d_in)
                layer.b[j] = _bias(rng, layer.d_out, bias)
        else:
            layer.W[...] = _he_uniform(rng, layer.d_out, layer.d_in)
            layer.b[...] = _bias(rng, layer.d_out, bias)
        if isinstance(layer, (PseSharedLayer, PseGeneralizedLayer)):
            if resnet_alpha:
                layer.alpha[...] = _resnet_start_alpha(layer.n, layer.d_out)
            else:
                layer.alpha[...] = rng.uniform(-1.0, 1.0, size=layer.alpha.shape)
    net.W_out[...] = _he_uniform(rng, net.d_out, net.W_out.shape[1])
    net.b_out[...] = 0.0
    return net


def parse_arch(arch: str) -> tuple[str, int]:
    """Split an architecture id (``fc``, ``resnet``, ``pse3``, ``gpse2``, ``reluk4``)."""
    for prefix in ("gpse", "pse", "reluk"):
        if arch.startswith(prefix) and arch[len(prefix):].isdigit():
            return prefix, int(arch[len(prefix):])
    if arch in ("fc", "resnet"):
        return arch, 1
    raise ValueError(f"unknown architecture {arch!r}")


def build_network(
    arch: str,
    d_in: int,
    width: int,
    depth: int,
    *,
    d_out: int = 1,
    seed: int = 0,
    scheme: str = "pse-resnet-start",
    bias: str = "zero",
):
    """Allocate and initialise a network of ``depth`` hidden layers.

    ``reluk<k>`` yields a :class:`OneHiddenPse` with only the power-k branch.
    """
    kind, n = parse_arch(arch)
    if kind == "reluk":
        if depth != 1:
            raise ValueError("ReLU^k networks have exactly one hidden layer")
        return build_relu_k(n, d_in, width, seed=seed, bias=bias)
    layers = []
    d = d_in
    for _ in range(depth):
        if kind == "fc":
            layer = FcLayer(np.zeros((width, d)), np.zeros(width))
        elif kind == "resnet":
            layer = ResNetBlock(np.zeros((width, d)), np.zeros(width))
        elif kind == "pse":
            layer = PseSharedLayer(n, np.zeros((width, d)), np.zeros(width), np.zeros((n + 1, width)))
        else:
            layer = PseGeneralizedLayer(
                n, np.zeros((n + 1, width, d)), np.zeros((n + 1, width)), np.zeros((n + 1, width))
            )
        layers.append(layer)
        d = width
    net = Network(layers, np.zeros((d_out, d)), np.zeros(d_out))
    return init(net, scheme, seed, bias)


def build_relu_k(k: int, d_in: int, width: int, *, seed: int = 0, bias: str = "zero") -> OneHiddenPse:
    """One hidden layer using only relu^k, plus an output bias."""
    W = [np.zeros((0, d_in)) for _ in range(k + 1)]
    b = [np.zeros(0) for _ in range(k + 1)]
    alpha = [np.zeros(0) for _ in range(k + 1)]
    W[k], b[k], alpha[k] = np.zeros((width, d_in)), np.zeros(width), np.zeros(width)
    return init(OneHiddenPse(k, W, b, alpha), "he-uniform", seed, bias)


# --------------------------------------------------------------- serialization

_LAYER_TYPES = {cls.kind: cls for cls in (FcLayer, ResNetBlock, PseSharedLayer, PseGeneralizedLayer)}


def _arr(a: np.ndarray) -> dict:
    # Python floats serialize via repr, the shortest round-trip decimal.
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _unarr(d: Mapping) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def model_to_dict(net) -> dict:
    if isinstance(net, OneHiddenPse):
        return {
            "model": "one_hidden_pse",
            "n": net.n,
            "widths": list(net.widths),
            "W": [_arr(w) for w in net.W],
            "b": [_arr(v) for v in net.b],
            "alpha": [_arr(v) for v in net.alpha],
            "c0": float(net.c0),
        }
    layers = []
    for layer in net.layers:
        entry = {"layer_kind": layer.kind, "n": getattr(layer, "n", 1)}
        entry.update({k: _arr(getattr(layer, k)) for k in ("W", "b")})
        if hasattr(layer, "alpha"):
            entry["alpha"] = _arr(layer.alpha)
        layers.append(entry)
    return {
        "model": "network",
        "layers": layers,
        "readout": {"W": _arr(net.W_out), "b": _arr(net.b_out)},
    }


def model_from_dict(d: Mapping):
    kind = d.get("model")
    if kind == "one_hidden_pse":
        return OneHiddenPse(
            int(d["n"]),
            [_unarr(w) for w in d["W"]],
            [_unarr(v) for v in d["b"]],
            [_unarr(v) for v in d["alpha"]],
            np.float64(d["c0"]),
        )
    if kind != "network":
        raise ValueError(f"unknown model type {kind!r}")
    layers = []
    for i, entry in enumerate(d["layers"]):
        lk = entry["layer_kind"]
        if lk not in _LAYER_TYPES:
            raise ValueError(f"layer {i}: unknown layer_kind {lk!r}")
        W, b = _unarr(entry["W"]), _unarr(entry["b"])
        if lk in ("fc", "resnet"):
            layers.append(_LAYER_TYPES[lk](W, b))
        else:
            layers.append(_LAYER_TYPES[lk](int(entry["n"]), W, b, _unarr(entry["alpha"])))
    return Network(layers, _unarr(d["readout"]["W"]), _unarr(d["readout"]["b"]))


def dumps_model(net) -> str:
    return json.dumps(model_to_dict(net), indent=1, sort_keys=True, allow_nan=False) + "\n"


def loads_model(text: str):
    return model_from_dict(json.loads(text))


def save_model(net, path) -> None:
    Path(path).write_text(dumps_model(net))


def load_model(path):
    return loads_model(Path(path).read_text())
