"""MPS export/import and external solution round-trip."""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from .problem import MilpProblem

_SENSE_CODE = {"<=": "L", ">=": "G", "==": "E"}
_CODE_SENSE = {v: k for k, v in _SENSE_CODE.items()}
OBJ_ROW = "OBJ"


def sanitize_name(name: str) -> str:
    s = re.sub(r"\s+", "_", str(name))
    if not s:
        raise ValueError("empty name")
    if len(s) > 255:
        raise ValueError(f"name longer than 255 chars: {s[:40]}...")
    return s


def _num(v: float) -> str:
    return repr(float(v))


def _fixed_line(fields):
    # field starts (1-based): 2, 5, 15, 25, 40, 50
    starts = (1, 4, 14, 24, 39, 49)
    line = ""
    for pos, text in zip(starts, fields):
        if text is None:
            continue
        line = line.ljust(pos) + text
    return line


def export_mps(p: MilpProblem, destination, free: bool = True) -> Path:
    """Write ``p`` as MPS. ``free=False`` uses column-positioned fixed format,
    which requires names of at most 8 characters."""
    cols = [sanitize_name(n) for n in p.var_names]
    rows = [sanitize_name(n) for n in p.row_names]
    if len(set(cols)) != len(cols) or len(set(rows)) != len(rows):
        raise ValueError("names collide after sanitising")
    if OBJ_ROW in rows:
        raise ValueError(f"row name {OBJ_ROW!r} is reserved for the objective")
    if not free:
        long = [n for n in cols + rows + [p.name] if len(n) > 8]
        if long:
            raise ValueError(f"fixed MPS needs names <= 8 chars, got {long[0]!r}")

    def emit(*fields):
        if free:
            return " " + " ".join(f for f in fields if f is not None)
        return _fixed_line(fields)

    col_entries: list[list[tuple[str, float]]] = [[] for _ in cols]
    for j, c in enumerate(p.obj):
        if c != 0.0:
            col_entries[j].append((OBJ_ROW, c))
    for i, (idx, val, _, _) in enumerate(p.rows):
        for j, a in zip(idx, val):
            if a != 0.0:
                col_entries[j].append((rows[i], a))

    out = [f"NAME {sanitize_name(p.name)}" if free else f"NAME          {p.name}", "ROWS"]
    out.append(emit("N", OBJ_ROW))
    for i, (_, _, sense, _) in enumerate(p.rows):
        out.append(emit(_SENSE_CODE[sense], rows[i]))
    out.append("COLUMNS")
    in_int = False
    marker = 0
    for j, name in enumerate(cols):
        if p.integer[j] != in_int:
            tag = "'INTORG'" if p.integer[j] else "'INTEND'"
            out.append(emit(None, f"MARKER{marker}", "'MARKER'", None, tag))
            marker += 1
            in_int = p.integer[j]
        entries = col_entries[j] or [(OBJ_ROW, 0.0)]
        for r, a in entries:
            out.append(emit(None, name, r, _num(a)))
    if in_int:
        out.append(emit(None, f"MARKER{marker}", "'MARKER'", None, "'INTEND'"))
    out.append("RHS")
    if p.obj_const != 0.0:
        out.append(emit(None, "RHS", OBJ_ROW, _num(-p.obj_const)))
    for i, (_, _, _, rhs) in enumerate(p.rows):
        if rhs != 0.0:
            out.append(emit(None, "RHS", rows[i], _num(rhs)))
    out.append("BOUNDS")
    for j, name in enumerate(cols):
        lo, hi = p.lb[j], p.ub[j]
        if lo == hi:
            out.append(emit("FX", "BND", name, _num(lo)))
            continue
        if not math.isfinite(lo) and not math.isfinite(hi):
            out.append(emit("FR", "BND", name))
            continue
        if not math.isfinite(lo):
            out.append(emit("MI", "BND", name))
        elif lo != 0.0 or p.integer[j]:
            out.append(emit("LO", "BND", name, _num(lo)))
        if math.isfinite(hi):
            out.append(emit("UP", "BND", name, _num(hi)))
    out.append("ENDATA")
    path = Path(destination)
    path.write_text("\n".join(out) + "\n")
    return path


def read_mps(source) -> MilpProblem:
    """Parse a free-format MPS file (the subset written by :func:`export_mps`)."""
    text = Path(source).read_text()
    p = MilpProblem()
    section = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    obj_name = None
    coeffs: dict[str, dict[str, float]] = {}
    rhs: dict[str, float] = {}
    col_order: list[str] = []
    col_int: dict[str, bool] = {}
    bounds: dict[str, list] = {}
    in_int = False
    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        tok = raw.split()
        if not raw[0].isspace():
            section = tok[0].upper()
            if section == "NAME":
                p.name = tok[1] if len(tok) > 1 else ""
            elif section not in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA", "RANGES"):
                raise ValueError(f"unknown MPS section {section!r}")
            if section == "RANGES":
                raise ValueError("RANGES section not supported")
            continue
        if section == "ROWS":
            code, name = tok[0].upper(), tok[1]
            if code == "N":
                obj_name = obj_name or name
            else:
                row_sense[name] = _CODE_SENSE[code]
                row_order.append(name)
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1].strip("'") == "MARKER":
                in_int = tok[2].strip("'") == "INTORG"
                continue
            col = tok[0]
            if col not in coeffs:
                coeffs[col] = {}
                col_order.append(col)
                col_int[col] = in_int
            for r, v in zip(tok[1::2], tok[2::2]):
                coeffs[col][r] = coeffs[col].get(r, 0.0) + float(v)
        elif section == "RHS":
            for r, v in zip(tok[1::2], tok[2::2]):
                rhs[r] = float(v)
        elif section == "BOUNDS":
            kind, col = tok[0].upper(), tok[2]
            val = float(tok[3]) if len(tok) > 3 else None
            lo, hi = bounds.setdefault(col, [0.0, math.inf])
            if kind == "UP":
                hi = val
                if val < 0 and lo == 0.0:
                    lo = -math.inf
            elif kind == "LO":
                lo = val
            elif kind == "FX":
                lo = hi = val
            elif kind == "FR":
                lo, hi = -math.inf, math.inf
            elif kind == "MI":
                lo = -math.inf
            elif kind == "PL":
                hi = math.inf
            elif kind == "BV":
                lo, hi = 0.0, 1.0
            else:
                raise ValueError(f"unsupported bound type {kind!r}")
            bounds[col] = [lo, hi]
    for col in col_order:
        lo, hi = bounds.get(col, [0.0, 1.0 if col_int[col] else math.inf])
        p.add_var(col, lo, hi, obj=coeffs[col].get(obj_name, 0.0), integer=col_int[col])
    by_row: dict[str, list] = {r: [] for r in row_order}
    for col in col_order:
        j = p.index[col]
        for r, v in coeffs[col].items():
            if r != obj_name:
                by_row[r].append((j, v))
    for r in row_order:
        p.add_constraint(by_row[r], row_sense[r], rhs.get(r, 0.0), name=r)
    p.obj_const = -rhs.get(obj_name, 0.0) if obj_name else 0.0
    return p


def import_solution(source) -> dict[str, float]:
    """Read ``name value`` lines; ``#`` starts a comment."""
    values = {}
    for k, raw in enumerate(Path(source).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace("=", " ").split()
        if len(parts) != 2:
            raise ValueError(f"line {k}: expected 'name value', got {raw!r}")
        values[parts[0]] = float(parts[1])
    return values


def write_solution(p: MilpProblem, x, destination, header: str | None = None) -> Path:
    lines = [f"# {header}"] if header else []
    lines += [f"{sanitize_name(n)} {float(v)!r}" for n, v in zip(p.var_names, x)]
    path = Path(destination)
    path.write_text("\n".join(lines) + "\n")
    return path


def check_solution(p: MilpProblem, values: dict[str, float], tol: float = 1e-6) -> dict:
    """Map an imported solution onto ``p`` and re-check feasibility."""
    names = {sanitize_name(n): j for j, n in enumerate(p.var_names)}
    missing = [n for n in names if n not in values]
    if missing:
        raise ValueError(f"solution lacks {len(missing)} variables, e.g. {missing[0]!r}")
    x = np.zeros(p.n_vars)
    for n, j in names.items():
        x[j] = values[n]
    res = p.residuals(x)
    worst = max(res["bound"], res["row"], res["integrality"])
    return {"x": x, "objective": p.objective_value(x), "feasible": worst <= tol, **res}
