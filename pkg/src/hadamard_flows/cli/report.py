"""Plain-text reports with a human part and a machine-readable part.

The machine part is a sequence of ``[name]`` headed CSV blocks
(``[summary]``, ``[table]``, ``[residuals]``, ...). Floats are written with
``repr`` so equal runs give byte-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

MACHINE_MARKER = "=== machine-readable ==="


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def _csv_cell(v) -> str:
    s = fmt(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


@dataclass
class Report:
    title: str
    summary: list = field(default_factory=list)        # (key, value)
    tables: dict = field(default_factory=dict)         # name -> (columns, rows)
    residuals: list = field(default_factory=list)      # Residual-like or dict rows
    notes: list = field(default_factory=list)

    def add(self, key, value):
        self.summary.append((key, value))

    def table(self, name, columns, rows):
        self.tables[name] = (list(columns), [list(r) for r in rows])

    def human(self) -> str:
        out = [f"# {self.title}", ""]
        width = max((len(k) for k, _ in self.summary), default=0)
        for k, v in self.summary:
            out.append(f"{k.ljust(width)} : {fmt(v)}")
        for note in self.notes:
            out.append(note)
        for name, (cols, rows) in self.tables.items():
            out += ["", f"{name}:"]
            cells = [[_short(c) for c in cols]] + [[_short(v) for v in r] for r in rows]
            widths = [max(len(r[i]) for r in cells) for i in range(len(cols))]
            for r in cells:
                out.append("  " + "  ".join(c.rjust(w) for c, w in zip(r, widths)))
        if self.residuals:
            out += ["", "certification:"]
            for r in self.residuals:
                status = "PASS" if r["passed"] else "FAIL"
                out.append(f"  {status}  {r['name']:<16} {r['value']: .3e}  (tol {r['tol']:.1e})  {r.get('where', '')}")
        return "\n".join(out) + "\n"

    def machine(self) -> str:
        out = ["[summary]", "key,value"]
        out += [f"{_csv_cell(k)},{_csv_cell(v)}" for k, v in self.summary]
        for name, (cols, rows) in self.tables.items():
            out += ["", f"[{name}]", ",".join(cols)]
            out += [",".join(_csv_cell(v) for v in r) for r in rows]
        out += ["", "[residuals]", "name,where,value,tol,passed"]
        for r in self.residuals:
            out.append(",".join(_csv_cell(r[k]) for k in ("name", "where", "value", "tol", "passed")))
        return "\n".join(out) + "\n"

    def render(self) -> str:
        return self.human() + "\n" + MACHINE_MARKER + "\n" + self.machine()


def _short(v) -> str:
    if isinstance(v, float) and not isinstance(v, bool):
        return f"{v:.6g}"
    return fmt(v)


def residual_row(r, where: str = "") -> dict:
    return {"name": r.name, "where": where, "value": float(r.value), "tol": float(r.tol),
            "passed": bool(r.passed)}


def machine_section(text: str) -> str:
    """The machine-readable part of a rendered report."""
    i = text.find(MACHINE_MARKER)
    if i < 0:
        raise ValueError("not a rendered report")
    return text[i + len(MACHINE_MARKER) + 1:]
