"""Benchmark sweeps: sine fits, singular power fits, and the hp decay study.

A sweep is described by an :class:`ExperimentSpec` (a JSON file on disk).
Every (target, depth, width, architecture, seed) combination is one cell,
trained independently; cells may run on a bounded process pool and are
always aggregated in a fixed order, so results do not depend on scheduling.

Aggregation works on the persisted per-run dictionaries, which keeps every
median recomputable from the files written next to the table.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import checks
from .constructors import hp_geometric_mesh, singular_to_pse
from .models import build_network, neuron_count, parse_arch
from .training import (
    LossSpec,
    OptimizerConfig,
    Quadrature,
    RunResult,
    graded_quadrature,
    grid_2d,
    h1_parts,
    make_dataset,
    midpoint_quadrature,
    train,
    uniform_grid,
)

__all__ = [
    "FAMILIES",
    "SpecError",
    "ExperimentSpec",
    "ComparisonTable",
    "HpSweepReport",
    "load_spec",
    "parse_spec",
    "expand_cells",
    "run_cell",
    "run_cells",
    "aggregate",
    "run_table1",
    "run_table2",
    "run_hp_sweep",
    "run_experiment",
    "write_outputs",
    "PRESETS",
]

FAMILIES = ("table1-1d", "table1-2d", "table2-singular", "hp-sweep", "construct-check")
TABLE_COLUMNS = ("target", "depth", "architecture", "median_loss", "nan_count", "best_flag")


class SpecError(ValueError):
    """Malformed experiment spec; the message names the line or field."""


# --------------------------------------------------------------------- specs


@dataclass
class ExperimentSpec:
    family: str
    targets: list = field(default_factory=list)  # sine frequencies or exponents alpha
    architectures: list = field(default_factory=list)
    widths: list = field(default_factory=lambda: [10])
    depths: list = field(default_factory=lambda: [1])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    optimizer: dict = field(default_factory=dict)
    epochs: int = 20_000
    trace_every: int = 100
    bias: str = "zero"
    init: str = "pse-resnet-start"
    mesh: float = 0.01
    quad_points: int = 1000
    n_range: list = field(default_factory=lambda: [2, 10])
    mu: float = 1.0
    delta: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise SpecError(f"field 'family': {self.family!r} is not one of {', '.join(FAMILIES)}")
        if self.family in ("hp-sweep", "construct-check"):
            if self.family == "hp-sweep":
                if len(self.targets) != 1:
                    raise SpecError("field 'targets': hp-sweep takes exactly one exponent alpha")
                lo, hi = _int_pair(self.n_range, "n_range")
                if lo < 1 or hi < lo:
                    raise SpecError(f"field 'n_range': need 1 <= lo <= hi, got {self.n_range}")
            return
        if not self.targets:
            raise SpecError("field 'targets': must be non-empty")
        if not self.seeds:
            raise SpecError("field 'seeds': must be non-empty")
        if not self.architectures:
            raise SpecError("field 'architectures': must be non-empty")
        for a in self.architectures:
            try:
                _resolve_arch(a, self.family)
            except ValueError as exc:
                raise SpecError(f"field 'architectures': {exc}") from None
        for name in ("widths", "depths", "seeds"):
            vals = getattr(self, name)
            if not vals or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in vals):
                raise SpecError(f"field '{name}': expected a non-empty list of non-negative integers")
        if any(w < 1 for w in self.widths) or any(d < 1 for d in self.depths):
            raise SpecError("fields 'widths'/'depths': entries must be >= 1")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise SpecError(f"field 'epochs': expected a non-negative integer, got {self.epochs!r}")
        try:
            OptimizerConfig(**self.optimizer)
        except TypeError as exc:
            raise SpecError(f"field 'optimizer': {exc}") from None
        if self.family == "table2-singular" and any(not 0 < a for a in self.targets):
            raise SpecError("field 'targets': exponents alpha must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _int_pair(v, name):
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, int) for x in v)):
        raise SpecError(f"field '{name}': expected [lo, hi]")
    return v


def _resolve_arch(arch: str, family: str) -> tuple[str, int]:
    m = re.fullmatch(r"hp(\d+)", arch)
    if m:
        if family != "table2-singular":
            raise ValueError(f"architecture {arch!r} is only valid for table2-singular")
        return "hp", int(m.group(1))
    return parse_arch(arch)


def parse_spec(text: str) -> ExperimentSpec:
    """Parse a JSON spec; errors carry the line/column or the field name."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise SpecError("line 1: top level must be a JSON object")
    known = set(ExperimentSpec.__dataclass_fields__)
    for key in raw:
        if key not in known:
            raise SpecError(f"field {key!r}: unknown field")
    if "family" not in raw:
        raise SpecError("field 'family': missing")
    try:
        return ExperimentSpec(**raw)
    except SpecError:
        raise
    except (TypeError, ValueError) as exc:
        raise SpecError(str(exc)) from None


def load_spec(path) -> ExperimentSpec:
    return parse_spec(Path(path).read_text())


# ------------------------------------------------------------------- targets


def target_id(family: str, param: float) -> str:
    if family == "table1-1d":
        return f"sin({param:g}pi*x)"
    if family == "table1-2d":
        return f"sin({param:g}pi*(x1+x2))"
    return f"x^{param:.6g}"


def _power(alpha):
    def f(x):
        return np.power(x, alpha)

    def fp(x):
        with np.errstate(divide="ignore"):
            return alpha * np.power(x, alpha - 1.0)

    return f, fp


def _sine_data(family: str, k: float, mesh: float):
    g = uniform_grid(0.0, 1.0, mesh)
    if family == "table1-1d":
        return make_dataset(lambda x: np.sin(k * np.pi * x), g)
    return make_dataset(lambda X: np.sin(k * np.pi * (X[:, 0] + X[:, 1])), grid_2d(g, g))


# --------------------------------------------------------------------- cells


def expand_cells(spec: ExperimentSpec) -> list[dict]:
    """One config dict per (target, depth, width, architecture, seed), in a fixed order."""
    cells = []
    for t in spec.targets:
        for depth in spec.depths:
            for width in spec.widths:
                for arch in spec.architectures:
                    for seed in spec.seeds:
                        cells.append(
                            {
                                "family": spec.family,
                                "target": target_id(spec.family, t),
                                "param": t,
                                "depth": depth,
                                "width": width,
                                "architecture": arch,
                                "seed": seed,
                                "epochs": spec.epochs,
                                "trace_every": spec.trace_every,
                                "optimizer": asdict(OptimizerConfig(**spec.optimizer)),
                                "bias": spec.bias,
                                "init": spec.init,
                                "mesh": spec.mesh,
                                "quad_points": spec.quad_points,
                            }
                        )
    return cells


def _build(cell: dict, d_in: int):
    kind, n = _resolve_arch(cell["architecture"], cell["family"])
    depth = 1 if kind == "reluk" else cell["depth"]
    return build_network(
        cell["architecture"], d_in, cell["width"], depth, seed=cell["seed"], scheme=cell["init"], bias=cell["bias"]
    )


def _fine_quadrature() -> Quadrature:
    return graded_quadrature(np.linspace(0.0, 1.0, 65), order=20, levels=40)


def run_cell(cell: dict) -> dict:
    """Train (or construct) one cell and return its persisted dictionary.

    Exceptions are caught and recorded under ``extra.error`` so one broken
    cell never aborts a sweep.
    """
    try:
        return _run_cell(cell).to_dict()
    except Exception as exc:  # noqa: BLE001 - recorded, never swallowed silently
        failed = RunResult(cell, cell["seed"], [], math.nan, math.nan, extra={"error": f"{type(exc).__name__}: {exc}"})
        return failed.to_dict()


def _run_cell(cell: dict) -> RunResult:
    opt = OptimizerConfig(**cell["optimizer"])
    family = cell["family"]
    if family in ("table1-1d", "table1-2d"):
        data = _sine_data(family, cell["param"], cell["mesh"])
        net = _build(cell, data.inputs.shape[1])
        return train(net, data, "mse", opt, cell["epochs"], cell["seed"], trace_every=cell["trace_every"], config=cell)

    f, fp = _power(cell["param"])
    kind, n = _resolve_arch(cell["architecture"], family)
    if kind == "hp":
        # Constructed, not trained: a sanity anchor for the loss pipeline.
        net = singular_to_pse(f, n)
        result = RunResult(cell, cell["seed"], [], math.nan, math.nan, epochs_run=0)
        value, slope = h1_parts(net, f, fp, midpoint_quadrature(cell["quad_points"]))
        result.initial_loss = result.final_loss = value + slope
        result.extra["neurons"] = neuron_count(net)
    else:
        net = _build(cell, 1)
        loss = LossSpec("h1", f, fp, midpoint_quadrature(cell["quad_points"]))
        result = train(net, None, loss, opt, cell["epochs"], cell["seed"], trace_every=cell["trace_every"], config=cell)
    if not result.nan:
        value, slope = h1_parts(net, f, fp, _fine_quadrature())
        result.extra["h1_loss_fine"] = value + slope
        result.extra["h1_value_part"], result.extra["h1_slope_part"] = value, slope
    return result


def run_cells(cells: list[dict], workers: int = 1) -> list[dict]:
    """Run cells, in parallel when ``workers > 1``; output order matches input order."""
    if workers <= 1 or len(cells) <= 1:
        return [run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_cell, cells))


# ----------------------------------------------------------------- tables


@dataclass
class TableCell:
    target: str
    depth: int
    architecture: str
    median_loss: float
    nan_count: int
    failed_count: int
    best_flag: bool
    losses: list
    runs: list  # run file names, for provenance


@dataclass
class ComparisonTable:
    family: str
    cells: list  # of TableCell, row-major in spec order
    metadata: dict = field(default_factory=dict)

    def cell(self, target: str, depth: int, architecture: str) -> TableCell:
        for c in self.cells:
            if (c.target, c.depth, c.architecture) == (target, depth, architecture):
                return c
        raise KeyError((target, depth, architecture))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for c in self.cells:
            w.writerow(
                [c.target, c.depth, c.architecture, _fmt(c.median_loss), c.nan_count, "true" if c.best_flag else "false"]
            )
        return buf.getvalue()

    def to_dict(self) -> dict:
        cells = []
        for c in self.cells:
            d = asdict(c)
            d["median_loss"] = _json_float(c.median_loss)
            d["losses"] = [_json_float(v) for v in c.losses]
            cells.append(d)
        return {"family": self.family, "cells": cells, "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _fmt(v: float) -> str:
    return "NaN" if v is None or not math.isfinite(v) else repr(float(v))


def _json_float(v):
    return None if v is None or not math.isfinite(v) else float(v)


def run_filename(cell: dict) -> str:
    slug = re.sub(r"[^A-Za-z0-9.]+", "_", cell["target"]).strip("_")
    return f"{slug}_d{cell['depth']}_w{cell['width']}_{cell['architecture']}_s{cell['seed']}.json"


def robust_median(values: Iterable[float | None]) -> float:
    """Median with NaN ranked above every number; NaN when at least half diverged."""
    vals = [math.inf if v is None or math.isnan(v) else v for v in values]
    if not vals:
        return math.nan
    m = float(np.median(vals))
    return m if math.isfinite(m) else math.nan


def _is_pse(arch: str) -> bool:
    return arch.startswith("pse") or arch.startswith("gpse")


def aggregate(runs: list[dict], family: str, metadata: dict | None = None) -> ComparisonTable:
    """Group persisted run dictionaries into a :class:`ComparisonTable`.

    Crashed cells (``extra.error``) are counted in ``failed_count`` and left
    out of the median; diverged runs count as NaN outcomes.
    """
    groups: dict[tuple, list[dict]] = {}
    widths = {r["config"]["width"] for r in runs}
    for r in runs:
        cfg = r["config"]
        arch = cfg["architecture"] if len(widths) == 1 else f"{cfg['architecture']}/w{cfg['width']}"
        groups.setdefault((cfg["target"], cfg["depth"], arch), []).append(r)

    cells = []
    for (target, depth, arch), rs in groups.items():
        ok = [r for r in rs if "error" not in r["extra"]]
        losses = [r["final_loss"] for r in ok]
        cells.append(
            TableCell(
                target=target,
                depth=depth,
                architecture=arch,
                median_loss=robust_median(losses),
                nan_count=sum(1 for r in ok if r["nan"] or r["final_loss"] is None),
                failed_count=len(rs) - len(ok),
                best_flag=False,
                losses=[math.nan if v is None else v for v in losses],
                runs=[run_filename(r["config"]) for r in rs],
            )
        )
    _flag_best(cells)
    return ComparisonTable(family, cells, dict(metadata or {}))


def _flag_best(cells: list[TableCell]) -> None:
    rows: dict[tuple, list[TableCell]] = {}
    for c in cells:
        rows.setdefault((c.target, c.depth), []).append(c)
    for row in rows.values():
        pool = [c for c in row if _is_pse(c.architecture)] or row
        finite = [c for c in pool if math.isfinite(c.median_loss)]
        if finite:
            min(finite, key=lambda c: c.median_loss).best_flag = True


def _sweep(spec: ExperimentSpec, workers: int, expected: tuple[str, ...]) -> tuple[ComparisonTable, list[dict]]:
    if spec.family not in expected:
        raise SpecError(f"field 'family': expected one of {expected}, got {spec.family!r}")
    cells = expand_cells(spec)
    runs = run_cells(cells, workers)
    meta = {"spec": spec.to_dict(), "cells_expected": len(cells), "cells_returned": len(runs)}
    if spec.family == "table2-singular":
        meta["loss"] = "H1 by midpoint rule on quad_points cells (training objective)"
        meta["fine_loss"] = "extra.h1_loss_fine: graded Gauss-Legendre quadrature"
        meta["reluk_architecture"] = "one hidden layer, only the power-k branch"
    return aggregate(runs, spec.family, meta), runs


def run_table1(spec: ExperimentSpec, workers: int = 1) -> tuple[ComparisonTable, list[dict]]:
    """Sine fits with MSE loss; returns the table and the per-run dictionaries."""
    return _sweep(spec, workers, ("table1-1d", "table1-2d"))


def run_table2(spec: ExperimentSpec, workers: int = 1) -> tuple[ComparisonTable, list[dict]]:
    """``x**alpha`` fits with the H1 loss; returns the table and the per-run dictionaries."""
    return _sweep(spec, workers, ("table2-singular",))


# ------------------------------------------------------------------ hp sweep


@dataclass
class HpSweepReport:
    alpha: float
    mu: float
    delta: float
    ns: list
    neurons: list
    h1_errors: list
    strictly_decreasing: bool
    slope_vs_n: float
    r2_vs_n: float
    slope_vs_m_root: float
    r2_vs_m_root: float
    m_over_n2: list
    m_over_n2_bound: float
    m_bounded: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _linfit(x, y) -> tuple[float, float]:
    slope, _ = np.polyfit(x, y, 1)
    r = np.corrcoef(x, y)[0, 1]
    return float(slope), float(r * r)


def run_hp_sweep(alpha: float, n_range=(2, 10), mu: float = 1.0, delta: float = 1.0) -> HpSweepReport:
    """H1 error of the constructed hp network for each element count in ``n_range``.

    The error integral uses Gauss-Legendre on the hp mesh itself (each piece
    is smooth there) with extra geometric grading inside the first element.
    """
    if not 0.5 < alpha:
        raise ValueError(f"run_hp_sweep: alpha must exceed 1/2 for a finite H1 error, got {alpha}")
    f, fp = _power(alpha)
    ns = list(range(n_range[0], n_range[1] + 1))
    errors, neurons = [], []
    for n in ns:
        net = singular_to_pse(f, n, mu, delta)
        mesh, _ = hp_geometric_mesh(n, mu, delta)
        value, slope = h1_parts(net, f, fp, graded_quadrature(mesh, order=30, levels=40))
        errors.append(math.sqrt(value + slope))
        neurons.append(neuron_count(net))
    log_e = np.log(errors)
    s_n, r2_n = _linfit(np.array(ns, float), log_e)
    s_m, r2_m = _linfit(np.array(neurons, float) ** (1.0 / (delta + 1.0)), log_e)
    ratios = [m / n**2 for m, n in zip(neurons, ns)]
    # Reference scale: three times the n = 2 neuron count spread over n^2 = 4.
    m2 = neuron_count(singular_to_pse(f, 2, mu, delta))
    bound = 3.0 * m2 / 4.0
    return HpSweepReport(
        alpha=alpha,
        mu=mu,
        delta=delta,
        ns=ns,
        neurons=neurons,
        h1_errors=errors,
        strictly_decreasing=all(b < a for a, b in zip(errors, errors[1:])),
        slope_vs_n=s_n,
        r2_vs_n=r2_n,
        slope_vs_m_root=s_m,
        r2_vs_m_root=r2_m,
        m_over_n2=ratios,
        m_over_n2_bound=bound,
        m_bounded=all(r <= bound for r in ratios),
    )


# ----------------------------------------------------------------- dispatch


def run_experiment(spec: ExperimentSpec, workers: int = 1):
    """Run any family. Returns ``(kind, payload, runs)`` for :func:`write_outputs`."""
    if spec.family in ("table1-1d", "table1-2d"):
        return ("table",) + run_table1(spec, workers)
    if spec.family == "table2-singular":
        return ("table",) + run_table2(spec, workers)
    if spec.family == "hp-sweep":
        return "hp", run_hp_sweep(spec.targets[0], tuple(spec.n_range), spec.mu, spec.delta), []
    return "check", checks.run_all(), []


def write_outputs(out_dir, kind: str, payload, runs: list[dict]) -> list[Path]:
    """Write the table (CSV + JSON) and one file per run; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if kind == "table":
        run_dir = out / "runs"
        run_dir.mkdir(exist_ok=True)
        for r in runs:
            p = run_dir / run_filename(r["config"])
            p.write_text(json.dumps(r, indent=1, sort_keys=True, allow_nan=False) + "\n")
            written.append(p)
        for name, text in (("table.csv", payload.to_csv()), ("table.json", payload.to_json())):
            (out / name).write_text(text)
            written.append(out / name)
    elif kind == "hp":
        (out / "hp_sweep.json").write_text(payload.to_json())
        written.append(out / "hp_sweep.json")
    else:
        (out / "checks.json").write_text(checks.summarize(payload) + "\n")
        written.append(out / "checks.json")
    return written


def load_runs(run_dir) -> list[dict]:
    """Persisted run dictionaries, sorted by file name."""
    return [json.loads(p.read_text()) for p in sorted(Path(run_dir).glob("*.json"))]


# Desk-scale presets used by ``psenet bench``.
PRESETS = {
    "table1": {
        "family": "table1-1d",
        "targets": [3],
        "architectures": ["fc", "pse5"],
        "widths": [10],
        "depths": [1],
        "seeds": [0, 1, 2, 3, 4],
        "epochs": 20000,
    },
    "table2": {
        "family": "table2-singular",
        "targets": [2 / 3],
        "architectures": ["reluk1", "reluk5", "pse2"],
        "widths": [20],
        "depths": [1],
        "seeds": [0, 1, 2, 3, 4],
        "epochs": 20000,
    },
    "hp": {"family": "hp-sweep", "targets": [2 / 3], "n_range": [2, 10], "mu": 1.0, "delta": 1.0},
    "check": {"family": "construct-check"},
}
