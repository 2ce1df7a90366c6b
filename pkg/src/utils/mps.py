"""
Free-format MPS writer and parser.

Supports the subset needed for mixed-integer quadratic models: OBJSENSE,
ROWS (N/E/L/G), COLUMNS with INTORG/INTEND markers, RHS, BOUNDS
(LO/UP/FX/FR/MI/PL/BV) and QUADOBJ (upper triangle of Q in 1/2 v'Qv).
Coefficients are written with repr() so that parsing restores them exactly.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np
import scipy.sparse as sp

from src.exceptions import ExportError

OBJ_ROW = "OBJ"
RHS_SET = "RHS"
BOUND_SET = "BND"


@dataclass
class MpsModel:
    """In-memory mixed-integer quadratic model."""

    name: str
    sense: str
    row_names: List[str]
    row_types: List[str]
    col_names: List[str]
    objective: np.ndarray
    A: sp.csr_matrix
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    Q: sp.csr_matrix

    @property
    def shape(self):
        return len(self.row_names), len(self.col_names)


def _num(value: float) -> str:
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def write_mps(model: MpsModel, path: Path) -> None:
    """Write a model in free MPS format."""
    m, nv = model.shape
    A = sp.csc_matrix(model.A)
    lines = [f"NAME {model.name}", "OBJSENSE", f"    {model.sense}", "ROWS", f" N  {OBJ_ROW}"]
    lines.extend(f" {kind}  {name}" for kind, name in zip(model.row_types, model.row_names))

    lines.append("COLUMNS")
    in_integer = False
    marker = 0
    for j, col in enumerate(model.col_names):
        if model.integer[j] != in_integer:
            tag = "'INTORG'" if model.integer[j] else "'INTEND'"
            lines.append(f"    MARKER{marker:04d} 'MARKER' {tag}")
            marker += 1
            in_integer = bool(model.integer[j])
        entries = []
        if model.objective[j] != 0:
            entries.append((OBJ_ROW, model.objective[j]))
        start, end = A.indptr[j], A.indptr[j + 1]
        for row, val in zip(A.indices[start:end], A.data[start:end]):
            if val != 0:
                entries.append((model.row_names[row], val))
        if not entries:
            # Keep the column declared even without coefficients
            entries.append((OBJ_ROW, 0.0))
        lines.extend(f"    {col} {row} {_num(val)}" for row, val in entries)
    if in_integer:
        lines.append(f"    MARKER{marker:04d} 'MARKER' 'INTEND'")

    lines.append("RHS")
    for name, val in zip(model.row_names, model.rhs):
        if val != 0:
            lines.append(f"    {RHS_SET} {name} {_num(val)}")

    lines.append("BOUNDS")
    for j, col in enumerate(model.col_names):
        lo, hi = model.lb[j], model.ub[j]
        if np.isneginf(lo) and np.isposinf(hi):
            lines.append(f" FR {BOUND_SET} {col}")
            continue
        if lo == hi:
            lines.append(f" FX {BOUND_SET} {col} {_num(lo)}")
            continue
        if np.isneginf(lo):
            lines.append(f" MI {BOUND_SET} {col}")
        elif lo != 0:
            lines.append(f" LO {BOUND_SET} {col} {_num(lo)}")
        if not np.isposinf(hi):
            lines.append(f" UP {BOUND_SET} {col} {_num(hi)}")

    Q = sp.triu(sp.coo_matrix(model.Q)).tocsr()
    Q.sort_indices()
    if Q.nnz:
        lines.append("QUADOBJ")
        for i in range(Q.shape[0]):
            span = slice(Q.indptr[i], Q.indptr[i + 1])
            for j, val in zip(Q.indices[span], Q.data[span]):
                if val != 0:
                    lines.append(f"    {model.col_names[i]} {model.col_names[j]} {_num(val)}")
    lines.append("ENDATA")

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mps(path: Path) -> MpsModel:
    """Parse a free MPS file written by write_mps (or any file in the same subset)."""
    name = ""
    sense = "MIN"
    row_names: List[str] = []
    row_types: List[str] = []
    row_index: Dict[str, int] = {}
    col_names: List[str] = []
    col_index: Dict[str, int] = {}
    integer: List[bool] = []
    objective: Dict[int, float] = {}
    triplets: List[tuple] = []
    rhs: Dict[int, float] = {}
    bounds: List[tuple] = []
    quad: List[tuple] = []
    section = None
    in_integer = False

    def fail(lineno: int, message: str) -> ExportError:
        return ExportError(f"{path}:{lineno}: {message}")

    def column(col: str) -> int:
        if col not in col_index:
            col_index[col] = len(col_names)
            col_names.append(col)
            integer.append(in_integer)
        return col_index[col]

    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip() or raw.startswith("*"):
            continue
        tokens = raw.split()
        if not raw[0].isspace():
            section = tokens[0]
            if section == "NAME":
                name = tokens[1] if len(tokens) > 1 else ""
            elif section == "OBJSENSE" and len(tokens) > 1:
                sense = tokens[1]
            elif section == "ENDATA":
                break
            elif section not in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "QUADOBJ", "OBJSENSE"):
                raise fail(lineno, f"unsupported section {section}")
            continue

        if section == "OBJSENSE":
            sense = tokens[0]
        elif section == "ROWS":
            kind, row = tokens[0], tokens[1]
            if kind == "N":
                continue
            if kind not in ("E", "L", "G"):
                raise fail(lineno, f"unknown row type {kind}")
            row_index[row] = len(row_names)
            row_names.append(row)
            row_types.append(kind)
        elif section == "COLUMNS":
            if len(tokens) >= 3 and tokens[1] == "'MARKER'":
                in_integer = tokens[2] == "'INTORG'"
                continue
            if len(tokens) not in (3, 5):
                raise fail(lineno, "expected column, row, value [row, value]")
            j = column(tokens[0])
            for row, val in zip(tokens[1::2], tokens[2::2]):
                try:
                    value = float(val)
                except ValueError:
                    raise fail(lineno, f"bad number {val}") from None
                if row == OBJ_ROW:
                    objective[j] = value
                elif row in row_index:
                    triplets.append((row_index[row], j, value))
                else:
                    raise fail(lineno, f"unknown row {row}")
        elif section == "RHS":
            for row, val in zip(tokens[1::2], tokens[2::2]):
                if row not in row_index:
                    raise fail(lineno, f"unknown row {row}")
                rhs[row_index[row]] = float(val)
        elif section == "BOUNDS":
            kind, col = tokens[0], tokens[2]
            if col not in col_index:
                raise fail(lineno, f"unknown column {col}")
            value = float(tokens[3]) if len(tokens) > 3 else None
            bounds.append((kind, col_index[col], value, lineno))
        elif section == "QUADOBJ":
            if tokens[0] not in col_index or tokens[1] not in col_index:
                raise fail(lineno, "unknown column in QUADOBJ")
            quad.append((col_index[tokens[0]], col_index[tokens[1]], float(tokens[2])))
        else:
            raise fail(lineno, "data line outside a section")

    m, nv = len(row_names), len(col_names)
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    for kind, j, value, lineno in bounds:
        if kind == "LO":
            lb[j] = value
        elif kind == "UP":
            ub[j] = value
        elif kind == "FX":
            lb[j] = ub[j] = value
        elif kind == "FR":
            lb[j], ub[j] = -np.inf, np.inf
        elif kind == "MI":
            lb[j] = -np.inf
        elif kind == "PL":
            ub[j] = np.inf
        elif kind == "BV":
            lb[j], ub[j] = 0.0, 1.0
            integer[j] = True
        else:
            raise fail(lineno, f"unknown bound type {kind}")

    rows, cols, vals = zip(*triplets) if triplets else ((), (), ())
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, nv))
    q_rows, q_cols, q_vals = [], [], []
    for i, j, val in quad:
        q_rows.append(i)
        q_cols.append(j)
        q_vals.append(val)
        if i != j:
            q_rows.append(j)
            q_cols.append(i)
            q_vals.append(val)
    Q = sp.csr_matrix((q_vals, (q_rows, q_cols)), shape=(nv, nv))

    obj = np.zeros(nv)
    for j, val in objective.items():
        obj[j] = val
    b = np.zeros(m)
    for i, val in rhs.items():
        b[i] = val

    return MpsModel(
        name=name,
        sense=sense,
        row_names=row_names,
        row_types=row_types,
        col_names=col_names,
        objective=obj,
        A=A,
        rhs=b,
        lb=lb,
        ub=ub,
        integer=np.asarray(integer, dtype=bool),
        Q=Q,
    )
