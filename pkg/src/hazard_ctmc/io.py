"""File formats: JSON (canonical) and CSV (plot data).

Item indices are 1-based in every file and 0-based in memory.  Floats are
written with ``repr`` so a read after a write reproduces them bitwise; NaN
is written as ``null``.  Each output may get a ``<path>.manifest.json``
sidecar describing the run that produced it; wall-clock time is recorded
only there so the primary outputs stay byte-identical across runs.
"""

import csv
import io as _io
import json
import math
import os
import platform
from dataclasses import fields, is_dataclass

import numpy as np

from . import __version__
from ._jit import backend_name
from .model import Dataset, ItemSet, ParamMatrix, PreconditionError
from .trainer import FitConfig, FitReport


class DataError(ValueError):
    """A file could not be read or does not have the expected format."""


def _clean(x):
    """Convert numpy containers and NaN into plain JSON values."""
    if isinstance(x, ParamMatrix):
        return model_to_dict(x)
    if isinstance(x, ItemSet):
        return [i + 1 for i in x.items]
    if is_dataclass(x) and not isinstance(x, type):
        return {f.name: _clean(getattr(x, f.name)) for f in fields(x)}
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if math.isnan(x) else x
    return x


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_json(path, obj):
    write_text(path, dumps(obj))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"no such file: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc


def _floats(values):
    return [math.nan if v is None else float(v) for v in values]


# -- models ----------------------------------------------------------------------

def model_to_dict(model):
    out = {"n": model.n, "theta": model.theta.tolist()}
    if model.item_names is not None:
        out["item_names"] = list(model.item_names)
    if model.blocks is not None:
        # 1-based inclusive ranges
        out["blocks"] = [[a + 1, b] for a, b in model.blocks]
    return out


def model_from_dict(d):
    if "theta_hat" in d:
        d = d["theta_hat"]
    try:
        theta = np.array(d["theta"], dtype=np.float64)
        blocks = d.get("blocks")
        if blocks is not None:
            blocks = [(int(a) - 1, int(b)) for a, b in blocks]
        model = ParamMatrix(theta, d.get("item_names"), blocks)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid model: {exc}") from exc
    if "n" in d and int(d["n"]) != model.n:
        raise DataError(f"model declares n={d['n']} but theta is {model.n} x {model.n}")
    return model


def write_model(path, model):
    write_json(path, model_to_dict(model))


def read_model(path):
    """Read a model file, or the model inside a fit report."""
    return model_from_dict(read_json(path))


# -- datasets --------------------------------------------------------------------

def dataset_to_dict(data):
    out = {"n": data.n, "samples": [[i + 1 for i in s.items] for s in data.samples]}
    if data.times is not None:
        out["times"] = data.times.tolist()
    if data.item_names is not None:
        out["item_names"] = list(data.item_names)
    return out


def dataset_from_dict(d):
    try:
        n = int(d["n"])
        samples = []
        for row in d["samples"]:
            items = [int(i) - 1 for i in row]
            if any(not 0 <= i < n for i in items):
                raise ValueError(f"item index out of range 1..{n} in sample {row}")
            samples.append(items)
        times = d.get("times")
        return Dataset(n, samples, None if times is None else _floats(times), d.get("item_names"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid dataset: {exc}") from exc


def dataset_to_csv(data):
    """One row per sample with a 0/1 column per item and an optional ``time``."""
    names = data.item_names or tuple(f"item{i + 1}" for i in range(data.n))
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(names) + (["time"] if data.times is not None else []))
    for r, s in enumerate(data.samples):
        row = [1 if i in s else 0 for i in range(data.n)]
        if data.times is not None:
            row.append(repr(float(data.times[r])))
        writer.writerow(row)
    return buf.getvalue()


def dataset_from_csv(text):
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise DataError("empty CSV")
    header = rows[0]
    has_time = bool(header) and header[-1] == "time"
    names = header[:-1] if has_time else header
    n = len(names)
    samples, times = [], []
    try:
        for line, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"line {line} has {len(row)} fields, expected {len(header)}")
            flags = [int(x) for x in row[:n]]
            if any(f not in (0, 1) for f in flags):
                raise ValueError(f"line {line}: item columns must be 0 or 1")
            samples.append([i for i, f in enumerate(flags) if f])
            if has_time:
                times.append(float(row[-1]))
        generic = all(name == f"item{i + 1}" for i, name in enumerate(names))
        return Dataset(n, samples, times if has_time else None, None if generic else names)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid dataset CSV: {exc}") from exc


def write_dataset(path, data, fmt=None):
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "json")
    if fmt == "csv":
        write_text(path, dataset_to_csv(data))
    else:
        write_json(path, dataset_to_dict(data))


def read_dataset(path):
    if str(path).endswith(".csv"):
        try:
            with open(path, encoding="utf-8") as fh:
                return dataset_from_csv(fh.read())
        except FileNotFoundError as exc:
            raise DataError(f"no such file: {path}") from exc
    return dataset_from_dict(read_json(path))


# -- fit reports -----------------------------------------------------------------

def fit_report_to_dict(report):
    return {
        "theta_hat": model_to_dict(report.theta_hat),
        "objective_trace": report.objective_trace.tolist(),
        "trace_kind": report.trace_kind,
        "pretrain_trace": report.pretrain_trace.tolist(),
        "acceptance_rate": report.acceptance_rate.tolist(),
        "config": report.config.to_dict(),
        "warnings": list(report.warnings),
    }


def fit_report_from_dict(d):
    try:
        return FitReport(
            theta_hat=model_from_dict(d["theta_hat"]),
            objective_trace=np.array(_floats(d["objective_trace"])),
            trace_kind=d["trace_kind"],
            pretrain_trace=np.array(_floats(d["pretrain_trace"])),
            acceptance_rate=np.array(_floats(d["acceptance_rate"])),
            config=FitConfig.from_dict(d["config"]),
            warnings=list(d.get("warnings", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid fit report: {exc}") from exc


def write_fit_report(path, report):
    write_json(path, fit_report_to_dict(report))


def read_fit_report(path):
    return fit_report_from_dict(read_json(path))


# -- plot data and manifests -----------------------------------------------------

def rows_to_csv(rows, columns):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row[c]) for c in columns])
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, rows, columns):
    write_text(path, rows_to_csv(rows, columns))


def manifest_path(path):
    return f"{path}.manifest.json"


def write_manifest(path, command, config, seed, inputs, outputs, wall_time):
    """Write the sidecar manifest for the output file ``path``."""
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": [os.fspath(p) for p in inputs],
        "outputs": [os.fspath(p) for p in outputs],
        "version": __version__,
        "backend": backend_name(),
        "python": platform.python_version(),
        "wall_time": wall_time,
    }
    write_json(manifest_path(path), manifest)
    return manifest


def as_plain(obj):
    """Dataclass or nested container as JSON-compatible values."""
    return _clean(obj)


__all__ = [
    "DataError",
    "PreconditionError",
    "as_plain",
    "dataset_from_csv",
    "dataset_from_dict",
    "dataset_to_csv",
    "dataset_to_dict",
    "dumps",
    "fit_report_from_dict",
    "fit_report_to_dict",
    "manifest_path",
    "model_from_dict",
    "model_to_dict",
    "read_dataset",
    "read_fit_report",
    "read_json",
    "read_model",
    "rows_to_csv",
    "write_csv",
    "write_dataset",
    "write_fit_report",
    "write_json",
    "write_manifest",
    "write_model",
]
