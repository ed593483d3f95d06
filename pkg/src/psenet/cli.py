"""Command-line front end: ``psenet construct|fit|eval|check|bench``.

Exit codes: 0 success, 1 verification failure, 2 usage or parse error.
Every command is a pure function of its flags, input files and seed, so
repeated invocations write byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import checks, experiments
from .constructors import (
    BsplineSeries,
    PiecewisePoly,
    Polynomial,
    bspline_series_to_pse,
    hp_geometric_mesh,
    lower_generalized,
    neuron_bound,
    piecewise_poly_to_pse,
    polynomial_to_pse,
    singular_to_pse,
)
from .models import dumps_model, load_model, neuron_count, param_count
from .training import graded_quadrature, h1_parts, midpoint_quadrature

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    """A flag value failed validation; the message names the flag."""


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _finite(v: float):
    return float(v) if math.isfinite(v) else None


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _ints(text: str, flag: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from None


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise UsageError(msg)


# ---------------------------------------------------------------- construct


def _construct_lower(a, rng):
    _require(a.depth >= 1 and a.n >= 0 and a.width >= 1 and a.d_in >= 1, "--depth/--n/--width/--d-in: out of range")
    net = checks.random_generalized(rng, depth=a.depth, n=a.n, width=a.width, d_in=a.d_in)
    low = lower_generalized(net)
    X = rng.uniform(-1.0, 1.0, size=(a.points, a.d_in))
    ref = net.forward(X)
    dev = float(np.max(np.abs(low.forward(X) - ref) / np.maximum(np.abs(ref), 1e-300)))
    widths = [layer.d_out for layer in low.layers]
    return low, {"max_dev": dev, "metric": "max relative deviation", "widths": widths}


def _construct_bspline(a, rng):
    _require(a.n >= 1, "--n: B-spline degree must be >= 1")
    _require(a.k >= 0, "--k: must be >= 0")
    size = a.k + a.n + 1
    c = _floats(a.coeffs, "--coeffs") if a.coeffs else rng.uniform(-1.0, 1.0, size).tolist()
    _require(len(c) == size, f"--coeffs: expected k+n+1={size} values, got {len(c)}")
    s = BsplineSeries(a.n, a.k, np.array(c))
    net = bspline_series_to_pse(s)
    x = np.linspace(0.0, 1.0, a.points)
    dev = float(np.max(np.abs(net.forward(x[:, None])[:, 0] - s(x))))
    return net, {"max_dev": dev, "metric": "max absolute deviation on [0, 1]", "neurons": neuron_count(net)}


def _parse_terms(text: str, d: int) -> dict:
    """``"1,1:2.0;0,0:-1"`` -> ``{(1, 1): 2.0, (0, 0): -1.0}``."""
    out = {}
    for term in filter(None, (t.strip() for t in text.split(";"))):
        exps, sep, coef = term.partition(":")
        _require(bool(sep), f"--coeffs: term {term!r} must look like 'e1,...,ed:coef'")
        a = tuple(_ints(exps, "--coeffs"))
        _require(len(a) == d and min(a) >= 0, f"--coeffs: term {term!r} needs {d} non-negative exponents")
        out[a] = out.get(a, 0.0) + _floats(coef, "--coeffs")[0]
    return out


def _construct_polynomial(a, rng):
    _require(a.d >= 1, "--d: must be >= 1")
    if a.coeffs:
        p = Polynomial(a.d, _parse_terms(a.coeffs, a.d))
    else:
        _require(a.degree >= 0, "--degree: must be >= 0")
        p = Polynomial.random(a.d, a.degree, rng)
    _require(a.degree is None or p.degree <= a.degree, f"--degree: coefficients have degree {p.degree} > {a.degree}")
    net = polynomial_to_pse(p, seed=a.seed)
    X = rng.uniform(-1.0, 1.0, size=(a.points, a.d))
    ref = p(X)
    dev = float(np.max(np.abs(net.forward(X)[:, 0] - ref)) / max(float(np.max(np.abs(ref))), 1e-300))
    k = p.degree
    bound = neuron_bound(a.d, k)
    m = neuron_count(net)
    return net, {
        "max_dev": dev,
        "metric": "max deviation relative to max |p|",
        "neurons": m,
        "neuron_bound": bound,
        "neurons_within_bound": m <= bound,
        "degree": k,
    }


def _construct_piecewise(a, rng):
    degrees = _ints(a.degrees, "--degrees")
    _require(len(degrees) >= 1 and min(degrees) >= 1, "--degrees: need at least one degree, all >= 1")
    mesh = np.linspace(0.0, 1.0, len(degrees) + 1)
    p = PiecewisePoly.random(mesh, tuple(degrees), rng)
    try:
        net = piecewise_poly_to_pse(p)
    except ValueError as exc:
        raise UsageError(f"--degrees: {exc}") from None
    x = np.linspace(0.0, 1.0, a.points)
    dev = float(np.max(np.abs(net.forward(x[:, None])[:, 0] - p(x))))
    return net, {"max_dev": dev, "metric": "max absolute deviation on [0, 1]", "neurons": neuron_count(net)}


def _construct_singular(a, rng):
    _require(a.alpha > 0.5, "--alpha: must exceed 1/2 for a finite H1 error")
    _require(a.n >= 1, "--n: number of elements must be >= 1")
    alpha = a.alpha

    def f(x):
        return np.power(x, alpha)

    def fp(x):
        return alpha * np.power(x, alpha - 1.0)

    net = singular_to_pse(f, a.n, a.mu, a.delta)
    mesh, degrees = hp_geometric_mesh(a.n, a.mu, a.delta)
    value, slope = h1_parts(net, f, fp, graded_quadrature(mesh))
    mid_v, mid_s = h1_parts(net, f, fp, midpoint_quadrature(1000))
    # The hp interpolant matches f at every knot.
    knot_dev = float(np.max(np.abs(net.forward(mesh[:, None])[:, 0] - f(mesh))))
    return net, {
        "max_dev": knot_dev,
        "metric": "max deviation at mesh knots",
        "h1_error": math.sqrt(value + slope),
        "h1_error_midpoint": math.sqrt(mid_v + mid_s),
        "neurons": neuron_count(net),
        "degrees": list(degrees),
    }


CONSTRUCTORS = {
    "lower": _construct_lower,
    "bspline": _construct_bspline,
    "polynomial": _construct_polynomial,
    "piecewise": _construct_piecewise,
    "singular": _construct_singular,
}


def cmd_construct(a) -> int:
    rng = np.random.default_rng(a.seed)
    net, report = CONSTRUCTORS[a.kind](a, rng)
    report["passed"] = bool(report["max_dev"] <= a.tol and report.get("neurons_within_bound", True))
    report.update(kind=a.kind, tol=a.tol, seed=a.seed, params=param_count(net))
    report = {k: (_finite(v) if isinstance(v, float) else v) for k, v in report.items()}
    text = _dump(report)
    if a.out:
        out = Path(a.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "model.json").write_text(dumps_model(net))
        (out / "report.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if report["passed"] else EXIT_FAIL


# ---------------------------------------------------------------- fit / bench


def _run_spec(spec, a) -> int:
    kind, payload, runs = experiments.run_experiment(spec, a.workers)
    if a.out:
        experiments.write_outputs(a.out, kind, payload, runs)
    if kind == "table":
        sys.stdout.write(payload.to_csv())
        crashed = sum(c.failed_count for c in payload.cells)
        if crashed:
            print(f"{crashed} cell(s) crashed; see extra.error in the run files", file=sys.stderr)
        return EXIT_FAIL if crashed else EXIT_OK
    if kind == "hp":
        sys.stdout.write(payload.to_json())
        return EXIT_OK
    sys.stdout.write(checks.summarize(payload) + "\n")
    return EXIT_OK if all(r.passed for r in payload) else EXIT_FAIL


def _override(spec_dict: dict, a) -> dict:
    if a.seed is not None and spec_dict.get("family") not in ("hp-sweep", "construct-check"):
        spec_dict["seeds"] = [a.seed]
    if getattr(a, "epochs", None) is not None:
        spec_dict["epochs"] = a.epochs
    return spec_dict


def cmd_fit(a) -> int:
    try:
        text = Path(a.spec).read_text()
    except OSError as exc:
        raise UsageError(f"spec: cannot read {a.spec}: {exc.strerror}") from None
    spec = experiments.parse_spec(text)
    if a.seed is not None or a.epochs is not None:
        spec = experiments.ExperimentSpec(**_override(spec.to_dict(), a))
    return _run_spec(spec, a)


def cmd_bench(a) -> int:
    spec = experiments.ExperimentSpec(**_override(dict(experiments.PRESETS[a.preset]), a))
    return _run_spec(spec, a)


# --------------------------------------------------------------- eval / check


def cmd_eval(a) -> int:
    try:
        net = load_model(a.model)
    except OSError as exc:
        raise UsageError(f"model: cannot read {a.model}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise experiments.SpecError(f"model: {exc}") from None
    if a.x:
        X = np.array(_floats(a.x, "--x"))[:, None]
    else:
        _require(a.grid >= 2, "--grid: need at least 2 points")
        X = np.linspace(0.0, 1.0, a.grid)[:, None]
    _require(net.d_in == 1, f"eval: model has {net.d_in} inputs; only 1-D models are supported")
    y = net.forward(X)[:, 0]
    report = {"x": X[:, 0].tolist(), "y": [_finite(v) for v in y.tolist()]}
    if a.derivative:
        report["dy"] = [_finite(v) for v in net.derivative(X)[:, 0].tolist()]
    if a.h1_alpha is not None:
        alpha = a.h1_alpha
        value, slope = h1_parts(net, lambda x: x**alpha, lambda x: alpha * x ** (alpha - 1.0), midpoint_quadrature())
        report["h1_loss"] = _finite(value + slope)
    sys.stdout.write(_dump(report))
    if a.out:
        Path(a.out).mkdir(parents=True, exist_ok=True)
        (Path(a.out) / "eval.json").write_text(_dump(report))
    return EXIT_OK


def cmd_check(a) -> int:
    results = checks.run_all(a.golden)
    text = checks.summarize(results) + "\n"
    sys.stdout.write(text)
    if a.out:
        Path(a.out).mkdir(parents=True, exist_ok=True)
        (Path(a.out) / "checks.json").write_text(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    p = argparse.ArgumentParser(prog="psenet", description="Power-series expansion networks.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("construct", parents=[common], help="build an exact network and verify it")
    c.add_argument("kind", choices=sorted(CONSTRUCTORS))
    c.add_argument("--tol", type=float, default=1e-8, help="pass/fail tolerance on max_dev")
    c.add_argument("--points", type=int, default=1000, help="verification points")
    c.add_argument("--n", type=int, default=None, help="power / degree / number of elements")
    c.add_argument("--k", type=int, default=None, help="B-spline series index (h = 1/(k+1))")
    c.add_argument("--d", type=int, default=None, help="input dimension (polynomial)")
    c.add_argument("--degree", type=int, default=None, help="polynomial degree")
    c.add_argument("--coeffs", default=None, help="coefficients (B-spline list or polynomial terms)")
    c.add_argument("--degrees", default=None, help="piecewise degree vector, e.g. 1,2,2,3")
    c.add_argument("--alpha", type=float, default=None, help="exponent of x^alpha (singular)")
    c.add_argument("--mu", type=float, default=1.0)
    c.add_argument("--delta", type=float, default=1.0)
    c.add_argument("--depth", type=int, default=3)
    c.add_argument("--width", type=int, default=5)
    c.add_argument("--d-in", type=int, default=5)
    c.set_defaults(func=cmd_construct)

    f = sub.add_parser("fit", parents=[common], help="run an experiment spec")
    f.add_argument("spec", help="JSON experiment spec")
    f.add_argument("--epochs", type=int, default=None, help="override the spec's epoch budget")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", parents=[common], help="evaluate a saved model")
    e.add_argument("model")
    e.add_argument("--x", default=None, help="comma-separated inputs")
    e.add_argument("--grid", type=int, default=11, help="uniform points on [0, 1] when --x is absent")
    e.add_argument("--derivative", action="store_true", help="also report dN/dx")
    e.add_argument("--h1-alpha", type=float, default=None, help="report the H1 loss against x^alpha")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("check", parents=[common], help="run the invariant self-tests")
    k.add_argument("--golden", default=None, help="golden model file (default: packaged copy)")
    k.set_defaults(func=cmd_check)

    b = sub.add_parser("bench", parents=[common], help="run a desk-scale benchmark preset")
    b.add_argument("preset", choices=sorted(experiments.PRESETS))
    b.add_argument("--epochs", type=int, default=None, help="override the preset's epoch budget")
    b.set_defaults(func=cmd_bench)
    return p


_CONSTRUCT_DEFAULTS = {
    "lower": {"n": 4},
    "bspline": {"n": 1, "k": 1},
    "polynomial": {"d": 2},
    "piecewise": {"degrees": "1,2,3"},
    "singular": {"alpha": 2.0 / 3.0, "n": 6},
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "construct":
        for key, val in _CONSTRUCT_DEFAULTS[args.kind].items():
            if getattr(args, key) is None:
                setattr(args, key, val)
        if args.kind == "polynomial" and args.degree is None and not args.coeffs:
            args.degree = 2
        if args.seed is None:
            args.seed = 0
    if args.workers < 1:
        print("error: --workers: must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, experiments.SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
