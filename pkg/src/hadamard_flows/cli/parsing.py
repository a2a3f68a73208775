"""Readers for point clouds and objective files.

Point clouds
    Euclidean, spider and hyperbolic clouds are CSV: one point per line,
    coordinates (``x1,...,xn``; ``ray,radius``; ``x,y``) followed by an
    optional weight. SPD clouds start with a line holding the dimension,
    followed by blocks of ``n`` comma-separated rows separated by blank
    lines; a block may be preceded by ``weight=<real>``. ``#`` starts a
    comment everywhere.

Objective files
    One functional per line plus one ``start <point>`` line::

        distpow anchor=<point> w=<real> p=<1|2>
        indicator ball c=<point> r=<real>
        indicator segment p=<point> q=<point>
        indicator subspider rays=<i;j;...>
        indicator whole
        busemann [u=<point>]
        displacement Q=<row;row;...> b=<point>
        start <point>

    Inline SPD points write rows separated by ``;``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..flows import SplitObjective
from ..functionals import Busemann, Displacement, DistancePower, Indicator
from ..spaces import (
    SPD, ClosedBall, Euclidean, GeodesicSegment, Hyperbolic, Space, Spider,
    SubSpider, WholeSpace,
)


class ParseError(ValueError):
    """Malformed input, located by path, line and column (1-based)."""

    def __init__(self, path: str, line: int, col: int, message: str):
        super().__init__(f"{path}:{line}:{col}: {message}")
        self.path, self.line, self.col = path, line, col


@dataclass(frozen=True)
class PointCloud:
    space: Space
    points: tuple
    weights: tuple

    def __post_init__(self):
        if not self.points:
            raise ValueError("a point cloud must not be empty")
        if len(self.points) != len(self.weights):
            raise ValueError("one weight per point is required")
        w = np.asarray(self.weights, dtype=float)
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "weights", normalize_weights(w))


def normalize_weights(w) -> tuple:
    w = np.asarray(w, dtype=float)
    return tuple(float(v) for v in w / math.fsum(w))


def _strip(raw: str) -> str:
    i = raw.find("#")
    return (raw if i < 0 else raw[:i]).rstrip()


def _floats(text: str, path, lineno, col, sep=","):
    out = []
    pos = col
    for tok in text.split(sep):
        s = tok.strip()
        try:
            v = float(s)
        except ValueError:
            raise ParseError(path, lineno, pos + len(tok) - len(tok.lstrip()), f"not a number: {s!r}") from None
        if not math.isfinite(v):
            raise ParseError(path, lineno, pos, f"non-finite value {s!r}")
        out.append(v)
        pos += len(tok) + len(sep)
    return out


def parse_point(space: Space, text: str, path="<arg>", lineno=1, col=1):
    """Parse an inline point for ``space``."""
    try:
        if isinstance(space, SPD):
            rows = text.split(";")
            vals = []
            pos = col
            for r in rows:
                row = _floats(r, path, lineno, pos)
                if len(row) != space.n:
                    raise ParseError(path, lineno, pos, f"SPD row needs {space.n} entries, got {len(row)}")
                vals.append(row)
                pos += len(r) + 1
            if len(vals) != space.n:
                raise ParseError(path, lineno, col, f"SPD point needs {space.n} rows, got {len(vals)}")
            return space.point(vals)
        vals = _floats(text, path, lineno, col)
        if isinstance(space, Spider):
            if len(vals) != 2 or vals[0] != int(vals[0]):
                raise ParseError(path, lineno, col, "spider point must be 'ray,radius'")
            return space.point((int(vals[0]), vals[1]))
        return space.point(vals)
    except ParseError:
        raise
    except ValueError as exc:
        raise ParseError(path, lineno, col, str(exc)) from None


def _coords_per_point(space) -> int:
    if isinstance(space, Euclidean):
        return space.n
    return 2


def read_cloud(path: str, space: Space, text: str | None = None) -> PointCloud:
    """Read a weighted point cloud; weights default to 1 and are normalized."""
    if text is None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    if isinstance(space, SPD):
        return _read_spd_cloud(path, space, text)
    m = _coords_per_point(space)
    pts, ws = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line.strip():
            continue
        col = len(line) - len(line.lstrip()) + 1
        fields = line.strip().split(",")
        if len(fields) not in (m, m + 1):
            raise ParseError(path, lineno, col, f"expected {m} coordinates and an optional weight, got {len(fields)} fields")
        coord_text = ",".join(fields[:m])
        p = parse_point(space, coord_text, path, lineno, col)
        w = 1.0
        if len(fields) == m + 1:
            wcol = col + len(coord_text) + 1
            w = _floats(fields[m], path, lineno, wcol)[0]
            if not w > 0:
                raise ParseError(path, lineno, wcol, "weight must be > 0")
        pts.append(p)
        ws.append(w)
    if not pts:
        raise ParseError(path, 1, 1, "no points found")
    return PointCloud(space, tuple(pts), tuple(ws))


def _read_spd_cloud(path, space, text):
    lines = [(i, _strip(raw)) for i, raw in enumerate(text.splitlines(), 1)]
    it = iter(lines)
    header = None
    for lineno, line in it:
        if line.strip():
            header = (lineno, line.strip())
            break
    if header is None:
        raise ParseError(path, 1, 1, "missing dimension header")
    try:
        n = int(header[1])
    except ValueError:
        raise ParseError(path, header[0], 1, f"dimension header must be an integer, got {header[1]!r}") from None
    if n != space.n:
        raise ParseError(path, header[0], 1, f"file dimension {n} does not match --dim {space.n}")
    pts, ws = [], []
    rows, weight, start = [], None, None

    def flush():
        nonlocal rows, weight, start
        if rows or weight is not None:
            if len(rows) != n:
                raise ParseError(path, start, 1, f"matrix block needs {n} rows, got {len(rows)}")
            try:
                pts.append(space.point(rows))
            except ValueError as exc:
                raise ParseError(path, start, 1, str(exc)) from None
            ws.append(1.0 if weight is None else weight)
        rows, weight, start = [], None, None

    for lineno, line in it:
        s = line.strip()
        if not s:
            flush()
            continue
        col = len(line) - len(line.lstrip()) + 1
        if s.startswith("weight="):
            if rows or weight is not None:
                raise ParseError(path, lineno, col, "weight line must precede its matrix block")
            weight = _floats(s[len("weight="):], path, lineno, col + 7)[0]
            if not weight > 0:
                raise ParseError(path, lineno, col + 7, "weight must be > 0")
            start = lineno
            continue
        if start is None:
            start = lineno
        row = _floats(s, path, lineno, col)
        if len(row) != n:
            raise ParseError(path, lineno, col, f"matrix row needs {n} entries, got {len(row)}")
        if len(rows) == n:
            raise ParseError(path, lineno, col, "too many rows in matrix block (separate blocks by a blank line)")
        rows.append(row)
    flush()
    if not pts:
        raise ParseError(path, header[0], 1, "no matrices found")
    return PointCloud(space, tuple(pts), tuple(ws))


def _kv(tokens, path, lineno, line):
    out = {}
    for tok in tokens:
        col = line.find(tok) + 1
        if "=" not in tok:
            raise ParseError(path, lineno, col, f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k in out:
            raise ParseError(path, lineno, col, f"duplicate key {k!r}")
        out[k] = (v, col + len(k) + 1)
    return out


def _need(kv, keys, optional, path, lineno, col):
    missing = [k for k in keys if k not in kv]
    if missing:
        raise ParseError(path, lineno, col, f"missing {', '.join(missing)}")
    extra = [k for k in kv if k not in keys and k not in optional]
    if extra:
        raise ParseError(path, lineno, kv[extra[0]][1], f"unknown key {extra[0]!r}")


def _real(kv, key, path, lineno):
    text, col = kv[key]
    return _floats(text, path, lineno, col)[0]


def parse_objective(path: str, space: Space, text: str | None = None):
    """Read an objective file. Returns ``(SplitObjective, start point or None)``."""
    if text is None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    terms, start = [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line.strip():
            continue
        tokens = line.split()
        col = line.find(tokens[0]) + 1
        head = tokens[0]

        def pt(key, kv):
            t, c = kv[key]
            return parse_point(space, t, path, lineno, c)

        try:
            if head == "start":
                if len(tokens) != 2:
                    raise ParseError(path, lineno, col, "usage: start <point>")
                if start is not None:
                    raise ParseError(path, lineno, col, "duplicate start line")
                start = parse_point(space, tokens[1], path, lineno, line.find(tokens[1]) + 1)
            elif head == "distpow":
                kv = _kv(tokens[1:], path, lineno, line)
                _need(kv, ("anchor",), ("w", "p"), path, lineno, col)
                w = _real(kv, "w", path, lineno) if "w" in kv else 1.0
                p = int(_real(kv, "p", path, lineno)) if "p" in kv else 1
                if "p" in kv and _real(kv, "p", path, lineno) not in (1.0, 2.0):
                    raise ParseError(path, lineno, kv["p"][1], "p must be 1 or 2")
                terms.append(DistancePower(space, pt("anchor", kv), weight=w, power=p))
            elif head == "indicator":
                if len(tokens) < 2:
                    raise ParseError(path, lineno, col, "indicator needs a set kind")
                kind = tokens[1]
                kv = _kv(tokens[2:], path, lineno, line)
                kcol = line.find(kind, col) + 1
                if kind == "ball":
                    _need(kv, ("c", "r"), (), path, lineno, kcol)
                    cset = ClosedBall(pt("c", kv), _real(kv, "r", path, lineno))
                elif kind == "segment":
                    _need(kv, ("p", "q"), (), path, lineno, kcol)
                    cset = GeodesicSegment(pt("p", kv), pt("q", kv))
                elif kind == "subspider":
                    if not isinstance(space, Spider):
                        raise ParseError(path, lineno, kcol, "subspider sets need --space spider")
                    _need(kv, ("rays",), (), path, lineno, kcol)
                    t, c = kv["rays"]
                    rays = _floats(t, path, lineno, c, sep=";")
                    if any(r != int(r) or not 0 <= r < space.k for r in rays):
                        raise ParseError(path, lineno, c, f"rays must be integers in [0, {space.k})")
                    cset = SubSpider(frozenset(int(r) for r in rays))
                elif kind == "whole":
                    _need(kv, (), (), path, lineno, kcol)
                    cset = WholeSpace()
                else:
                    raise ParseError(path, lineno, kcol, f"unknown set kind {kind!r}")
                terms.append(Indicator(space, cset))
            elif head == "busemann":
                kv = _kv(tokens[1:], path, lineno, line)
                _need(kv, (), ("u",), path, lineno, col)
                u = pt("u", kv) if "u" in kv else None
                terms.append(Busemann(space, u))
            elif head == "displacement":
                if not isinstance(space, Euclidean):
                    raise ParseError(path, lineno, col, "displacement functions need --space euclidean")
                kv = _kv(tokens[1:], path, lineno, line)
                _need(kv, ("Q", "b"), (), path, lineno, col)
                t, c = kv["Q"]
                rows = [_floats(r, path, lineno, c) for r in t.split(";")]
                if len(rows) != space.n or any(len(r) != space.n for r in rows):
                    raise ParseError(path, lineno, c, f"Q must be {space.n}x{space.n}")
                terms.append(Displacement(space, np.array(rows), pt("b", kv)))
            else:
                raise ParseError(path, lineno, col, f"unknown functional {head!r}")
        except ParseError:
            raise
        except (ValueError, TypeError) as exc:
            raise ParseError(path, lineno, col, str(exc)) from None
    if not terms:
        raise ParseError(path, 1, 1, "objective has no functionals")
    return SplitObjective(tuple(terms)), start
