"""Run artifacts: report JSON, curve and sweep CSVs, checkpoints, run dirs.

Reports serialize with sorted keys and no timestamps, so a re-run with the
same seed and config produces byte-identical JSON. Checkpoints are npz
containers holding every array (values, masks, running stats, optimizer
state) plus a JSON metadata entry; arrays round-trip bit-exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, TropicalParam
from .heads import HeadSpec, ModelParams

__all__ = [
    "RunReport",
    "write_run_report",
    "read_run_report",
    "write_curves_csv",
    "read_curves_csv",
    "write_sweep_csv",
    "read_sweep_csv",
    "save_checkpoint",
    "load_checkpoint",
    "prepare_run_dir",
]

CURVE_LEAD_COLUMNS = ("epoch", "phase", "train_loss", "val_loss")
SWEEP_LEAD_COLUMNS = ("variant", "r1", "r2", "remaining_params", "expected_remaining",
                      "degenerate", "seed")


@dataclass
class RunReport:
    """Everything a run reports: identity, metrics, parameter accounting."""

    name: str
    variant: str
    seed: int
    task: str
    metrics: dict
    param_census: int
    expected_census: int | None = None
    r1: float | None = None
    r2: float | None = None
    degenerate: bool = False
    best_epoch: int | None = None
    best_val_loss: float | None = None
    diverged: bool = False
    eval_split: str | None = None
    config: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)


def write_run_report(path, report: RunReport) -> None:
    Path(path).write_text(report.to_json(), encoding="utf-8")


def read_run_report(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _csv_columns(rows, lead) -> list:
    cols = [c for c in lead if any(c in r for r in rows)]
    extra = sorted({k for r in rows for k in r} - set(cols))
    return cols + extra


def _format_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    return "" if v is None else str(v)


def _write_rows(path, rows, lead) -> None:
    if not rows:
        raise ValueError("no rows to write")
    cols = _csv_columns(rows, lead)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_format_cell(r.get(c)) for c in cols])


def _parse_cell(c: str):
    if c == "":
        return None
    if c in ("True", "False"):
        return c == "True"
    try:
        f = float(c)
    except ValueError:
        return c
    return int(f) if f.is_integer() and "." not in c and "e" not in c.lower() else f


def _read_rows(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return [{h: _parse_cell(c) for h, c in zip(header, row)} for row in reader]


def write_curves_csv(path, rows) -> None:
    """Per-epoch training log: epoch, phase, train_loss, val_loss, val metrics."""
    _write_rows(path, rows, CURVE_LEAD_COLUMNS)


def read_curves_csv(path) -> list:
    return _read_rows(path)


def write_sweep_csv(path, rows) -> None:
    """Pruning-sweep table: one row per (r1, r2) with counts and metrics."""
    _write_rows(path, rows, SWEEP_LEAD_COLUMNS)


def read_sweep_csv(path) -> list:
    return _read_rows(path)


def save_checkpoint(path, model: ModelParams, optimizer_state: dict | None = None,
                    extra_meta: dict | None = None) -> None:
    """Serialize a model (and optional optimizer state) to an npz container."""
    arrays = {}
    for name, t in model.tensors.items():
        arrays[f"tensor/{name}"] = t.data
    for name, m in model.linear_masks.items():
        arrays[f"mask/{name}"] = m
    for name, p in model.tropical.items():
        arrays[f"trop.values/{name}"] = p.values
        arrays[f"trop.active/{name}"] = p.active
    for name, a in model.running.items():
        arrays[f"running/{name}"] = a
    meta = {
        "format": "maxplusnn-checkpoint-1",
        "spec": asdict(model.spec),
        "tensors": sorted(model.tensors),
        "tropical": sorted(model.tropical),
        "masks": sorted(model.linear_masks),
        "running": sorted(model.running),
        "optimizer": None,
    }
    if optimizer_state is not None:
        slot_arrays = {}
        scalars = {}
        for slot, st in optimizer_state.items():
            if slot == "kind":
                continue
            for key, val in st.items():
                if isinstance(val, np.ndarray):
                    arrays[f"opt/{slot}/{key}"] = val
                    slot_arrays.setdefault(slot, []).append(key)
                else:
                    scalars.setdefault(slot, {})[key] = val
        meta["optimizer"] = {"kind": optimizer_state.get("kind"),
                             "arrays": slot_arrays, "scalars": scalars}
    if extra_meta:
        meta["extra"] = extra_meta
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                                   dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of save_checkpoint: (model, optimizer_state | None, meta)."""
    with np.load(path) as z:
        data = {k: z[k] for k in z.files}
    meta = json.loads(bytes(data.pop("meta")).decode("utf-8"))
    if meta.get("format") != "maxplusnn-checkpoint-1":
        raise ValueError(f"{path}: not a recognized checkpoint (format "
                         f"{meta.get('format')!r})")
    spec = HeadSpec(**meta["spec"])
    tensors = {n: Tensor(data[f"tensor/{n}"], requires_grad=True) for n in meta["tensors"]}
    masks = {n: data[f"mask/{n}"].astype(bool) for n in meta["masks"]}
    tropical = {n: TropicalParam(data[f"trop.values/{n}"], data[f"trop.active/{n}"])
                for n in meta["tropical"]}
    running = {n: data[f"running/{n}"].copy() for n in meta["running"]}
    model = ModelParams(spec, tensors, tropical, masks, running)
    opt_state = None
    if meta["optimizer"] is not None:
        opt_state = {"kind": meta["optimizer"]["kind"]}
        for slot, keys in meta["optimizer"]["arrays"].items():
            opt_state[slot] = {k: data[f"opt/{slot}/{k}"].copy() for k in keys}
        for slot, scalars in meta["optimizer"]["scalars"].items():
            opt_state.setdefault(slot, {}).update(scalars)
    return model, opt_state, meta


def prepare_run_dir(path, force: bool = False) -> Path:
    """Create a run directory; an existing nonempty one is refused unless
    ``force`` (runs are append-only by default)."""
    p = Path(path)
    if p.exists():
        if not p.is_dir():
            raise FileExistsError(f"{p} exists and is not a directory")
        if any(p.iterdir()) and not force:
            raise FileExistsError(f"run directory {p} is not empty (use force to overwrite)")
    p.mkdir(parents=True, exist_ok=True)
    return p
