"""Bit-stable CSV/JSON serialisation of points, plans, potentials and records.

All files are UTF-8 with LF endings and '.' decimals regardless of locale;
floats are written with 17 significant digits so a write/read/write cycle
is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CsvFormatError
from .types import ExperimentRecord, LabeledCloud, SolveDiagnostics, SparsePlan


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_points_csv(cloud: LabeledCloud, path, sidecar: bool = True) -> None:
    """One row per point; labels and generator params go to a JSON sidecar."""
    p = Path(path)
    lines = [",".join(fmt(v) for v in row) for row in cloud.points]
    p.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    if sidecar and (cloud.labels is not None or cloud.params):
        meta = {"params": _jsonable(cloud.params)}
        if cloud.labels is not None:
            meta["labels"] = [int(v) for v in cloud.labels]
        _sidecar_path(p).write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
            newline="\n",
        )


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def read_points_csv(path) -> LabeledCloud:
    """Read a points CSV; a single non-numeric first row is treated as a header.

    Labels and params are restored from the JSON sidecar when present.
    """
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    rows = []
    width = None
    header_skipped = False
    lineno = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            if lineno == 1 and not header_skipped:
                header_skipped = True
                continue
            raise CsvFormatError(f"non-numeric field in {p.name!r}", line=lineno)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise CsvFormatError(
                f"expected {width} fields, got {len(values)}", line=lineno
            )
        rows.append(values)
    if not rows:
        raise CsvFormatError(f"no data rows in {p.name!r}", line=lineno or 1)
    labels = None
    params = {}
    sidecar = _sidecar_path(p)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        params = meta.get("params", {})
        if meta.get("labels") is not None:
            labels = np.asarray(meta["labels"], dtype=np.int64)
    return LabeledCloud(np.asarray(rows, dtype=np.float64), labels=labels, params=params)


def write_plan_coo(plan: SparsePlan, path, epsilon: float | None = None) -> None:
    """COO triplets `i,j,value` (0-based, i < j, sorted) under a `#` header."""
    p = Path(path)
    eps_part = "" if epsilon is None else f" eps={fmt(epsilon)}"
    lines = [f"# n={plan.n}{eps_part} symmetric hollow"]
    for i, j, v in zip(plan.rows, plan.cols, plan.vals):
        lines.append(f"{i},{j},{fmt(v)}")
    p.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_plan_coo(path) -> SparsePlan:
    """Parse a COO plan file; malformed rows report their line number."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise CsvFormatError(f"empty plan file {p.name!r}", line=1)
    header = lines[0]
    if not header.startswith("#"):
        raise CsvFormatError("missing `# n=...` header", line=1)
    n = None
    for token in header[1:].split():
        if token.startswith("n="):
            try:
                n = int(token[2:])
            except ValueError:
                raise CsvFormatError(f"bad n in header: {token!r}", line=1)
    if n is None:
        raise CsvFormatError("header does not declare n", line=1)
    rows, cols, vals = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise CsvFormatError(f"expected `i,j,value`, got {line!r}", line=lineno)
        try:
            i, j, v = int(fields[0]), int(fields[1]), float(fields[2])
        except ValueError:
            raise CsvFormatError(f"unparsable triplet {line!r}", line=lineno)
        if j <= i:
            raise CsvFormatError(f"need i < j, got ({i}, {j})", line=lineno)
        if i < 0 or j >= n:
            raise CsvFormatError(f"index out of range for n={n}", line=lineno)
        if v <= 0:
            raise CsvFormatError(f"stored values must be positive, got {v!r}", line=lineno)
        rows.append(i)
        cols.append(j)
        vals.append(v)
    return SparsePlan(
        n,
        np.asarray(rows, dtype=np.int64),
        np.asarray(cols, dtype=np.int64),
        np.asarray(vals, dtype=np.float64),
    )


def write_potential_csv(u, path) -> None:
    from .types import potential_values

    vals = potential_values(u)
    Path(path).write_text(
        "\n".join(fmt(v) for v in vals) + "\n", encoding="utf-8", newline="\n"
    )


def read_potential_csv(path) -> np.ndarray:
    p = Path(path)
    values = []
    lineno = 0
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise CsvFormatError(f"unparsable potential value {line!r}", line=lineno)
    if not values:
        raise CsvFormatError(f"no values in {p.name!r}", line=lineno or 1)
    return np.asarray(values, dtype=np.float64)


def write_record_json(record: ExperimentRecord, path) -> None:
    """One JSON object per file, sorted keys."""
    Path(path).write_text(
        json.dumps(_jsonable(record.to_dict()), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
        newline="\n",
    )


def write_diagnostics_json(diag: SolveDiagnostics, path) -> None:
    Path(path).write_text(
        json.dumps(diag.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
        newline="\n",
    )


def write_table_csv(path, header: list[str], rows) -> None:
    """Small numeric-table writer: floats at 17 significant digits."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, str):
                cells.append(v)
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(fmt(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
