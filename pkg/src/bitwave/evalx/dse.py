"""(weight bits, neuron bits) design-space exploration and its selection score."""

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..nn.model import ModelError
from .speedup import ideal_speedup

log = logging.getLogger(__name__)

ERROR_FLOOR = 1e-3
FULL_GRID = tuple((w, n) for w in (1, 2, 4, 8) for n in (1, 2, 4, 8))


class DseError(RuntimeError):
    """A grid cell failed; ``report`` holds the cells finished so far."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class DseCell:
    weight_bits: int
    neuron_bits: int
    task_metric: float  # frame error (vad) or mean SNR improvement in dB (enhance)
    error: float  # lower is better: frame error, or minus the SNR improvement
    ideal_speedup: float
    measured_speedup: float | None = None
    normalized_speedup: float = 0.0
    normalized_error: float = 0.0
    dse_score: float = 0.0


@dataclass
class DseReport:
    task: str
    cells: list
    selected: tuple | None = None
    speed_source: str = "ideal"
    partial: bool = False
    failure: str | None = None
    meta: dict = field(default_factory=dict)

    def cell(self, weight_bits, neuron_bits):
        for c in self.cells:
            if (c.weight_bits, c.neuron_bits) == (weight_bits, neuron_bits):
                return c
        raise KeyError((weight_bits, neuron_bits))

    def to_dict(self):
        d = asdict(self)
        d["selected"] = list(self.selected) if self.selected is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["cells"] = [DseCell(**c) for c in d["cells"]]
        d["selected"] = tuple(d["selected"]) if d.get("selected") is not None else None
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_csv(self):
        names = [f.name for f in fields(DseCell)]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names + ["selected"])
        for c in self.cells:
            row = [getattr(c, k) for k in names]
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row]
                            + [int((c.weight_bits, c.neuron_bits) == self.selected)])
        return buf.getvalue()


def min_max(values):
    """Map to [0, 1] over the given values; a constant column maps to 1."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi == lo:
        return np.ones_like(v)
    return (v - lo) / (hi - lo)


def dse_score(normalized_speedup, normalized_error, floor=ERROR_FLOOR):
    return normalized_speedup / max(normalized_error, floor)


def select(cells):
    """Index of the highest-scoring cell; ties go to the earliest in grid order."""
    best = None
    for i, c in enumerate(cells):
        if best is None or c.dse_score > cells[best].dse_score:
            best = i
    return best


def score_cells(cells, speed_source="ideal"):
    """Fill the normalization and score columns in place and return the selected pair."""
    if not cells:
        return None
    if speed_source not in ("ideal", "measured"):
        raise ValueError("speed_source must be 'ideal' or 'measured'")
    speeds = [c.ideal_speedup if speed_source == "ideal" else c.measured_speedup for c in cells]
    if any(s is None for s in speeds):
        raise ValueError("measured speedup missing for some cells")
    ns, ne = min_max(speeds), min_max([c.error for c in cells])
    for c, s, e in zip(cells, ns, ne):
        c.normalized_speedup = float(s)
        c.normalized_error = float(e)
        c.dse_score = float(dse_score(s, e))
    best = cells[select(cells)]
    return (best.weight_bits, best.neuron_bits)


def make_report(task, cells, speed_source="ideal", **meta):
    selected = score_cells(cells, speed_source)
    return DseReport(task, cells, selected, speed_source, meta=meta)


def parse_grid(text):
    """``"1x2,4x8"`` -> ((1, 2), (4, 8))."""
    pairs = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        try:
            w, n = item.split("x")
            pairs.append((int(w), int(n)))
        except ValueError as exc:
            raise ValueError(f"bad grid cell {item!r}; expected WxN") from exc
    if not pairs:
        raise ValueError("empty grid")
    if len(set(pairs)) != len(pairs):
        raise ValueError("grid cells must be distinct")
    return tuple(pairs)


def dse_grid(spec, train_arrays, valid_arrays, evaluate, grid=FULL_GRID, hyper=None,
             task="vad", bench=None, speed_source="ideal"):
    """Train one QAT model per (W, N) cell, score it, and assemble the report.

    ``evaluate(model)`` returns ``(task_metric, error)``. ``bench(W, N)``, when
    given, returns a measured speedup for the cell. A training failure stops
    the sweep and raises :class:`DseError` carrying the partial report.
    """
    from ..nn.task import fit_task
    from ..nn.train import Hyper

    grid = tuple(grid)
    if not grid:
        raise ValueError("empty grid")
    hyper = hyper or Hyper()
    cells = []
    for w, n in grid:
        log.info("cell W%d/N%d", w, n)
        try:
            model = fit_task(spec.with_bits(w, n), train_arrays, valid_arrays, hyper, qat=True)
        except ModelError as exc:
            report = DseReport(task, cells, None, speed_source, partial=True, failure=f"W{w}/N{n}: {exc}")
            if cells and speed_source == "ideal":
                report.selected = score_cells(cells, speed_source)
            raise DseError(f"cell W{w}/N{n} failed: {exc}", report) from exc
        metric, error = evaluate(model)
        measured = float(bench(w, n)) if bench is not None else None
        cells.append(DseCell(w, n, float(metric), float(error), ideal_speedup(w, n), measured))
    return make_report(task, cells, speed_source, hyper=asdict(hyper), layer_dims=list(spec.layer_dims))
