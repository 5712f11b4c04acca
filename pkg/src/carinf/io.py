"""Config files, CSV ingestion and emission, and rendered report tables."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import AllocationSpec, TrialDataset
from .errors import ConfigError, DataError, IncompleteRecord
from .estimators import Contrast

MISSING = "NA"
_MISSING_IN = {"", "na", "nan", "null", "none"}


# ---------------------------------------------------------------------------
# flat key = value configuration


@dataclass
class Config:
    """Flat ``key = value`` settings remembering where each key was defined."""

    values: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    source: str = "<flags>"

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "Config":
        cfg = cls(source=source)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.\-]*", key):
                raise ConfigError(f"{source}:{lineno}: invalid key {key!r}")
            if key in cfg.values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {cfg.lines[key]})")
            cfg.values[key] = value
            cfg.lines[key] = lineno
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "Config":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text, str(path))

    def set(self, key: str, value) -> None:
        """Override from a command-line flag (flags win over the file)."""
        if value is not None:
            self.values[key] = str(value)
            self.lines[key] = None

    def where(self, key: str) -> str:
        line = self.lines.get(key)
        return f"{self.source}:{line}" if line else f"--{key.replace('_', '-')}"

    def fail(self, key: str, msg: str):
        raise ConfigError(f"{self.where(key)}: {key}: {msg}")

    def has(self, key: str) -> bool:
        return key in self.values

    def str(self, key: str, default=None, required: bool = False):
        if key not in self.values:
            if required:
                raise ConfigError(f"{self.source}: missing required key {key!r}")
            return default
        return self.values[key]

    def int(self, key: str, default=None, minimum=None):
        raw = self.str(key)
        if raw is None:
            return default
        try:
            value = int(raw)
        except ValueError:
            self.fail(key, f"expected an integer, got {raw!r}")
        if minimum is not None and value < minimum:
            self.fail(key, f"must be at least {minimum}, got {value}")
        return value

    def float(self, key: str, default=None):
        raw = self.str(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            self.fail(key, f"expected a number, got {raw!r}")

    def bool(self, key: str, default: bool = False) -> bool:
        raw = self.str(key)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        self.fail(key, f"expected true or false, got {raw!r}")

    def list(self, key: str, default=None, sep: str = ",") -> list | None:
        raw = self.str(key)
        if raw is None:
            return None if default is None else list(default)
        items = [v.strip() for v in raw.split(sep)]
        if any(not v for v in items):
            self.fail(key, f"empty item in list {raw!r}")
        return items

    def unknown(self, known: Iterable[str], prefixes: Sequence[str] = ()) -> None:
        known = set(known)
        for key in self.values:
            if key in known or any(key.startswith(p) for p in prefixes):
                continue
            self.fail(key, "unknown key")


# ---------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvTable:
    header: tuple
    rows: tuple  # tuples of strings
    line_numbers: tuple  # physical line of each row, header is line 1
    source: str = "<csv>"

    def column(self, name: str) -> int:
        try:
            return self.header.index(name)
        except ValueError:
            raise ConfigError(f"{self.source}: no column named {name!r} (have {', '.join(self.header)})") from None


def read_csv(path: str | Path, source: str | None = None) -> CsvTable:
    source = source or str(path)
    try:
        text = Path(path).read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{source}: not valid UTF-8 ({exc.reason})") from None
    return parse_csv(text, source)


def parse_csv(text: str, source: str = "<csv>") -> CsvTable:
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    rows, lines = [], []
    header = None
    try:
        for rec in reader:
            if header is None:
                header = tuple(h.strip() for h in rec)
                if len(set(header)) != len(header):
                    raise DataError(f"{source} row 1: duplicate column names")
                continue
            if not rec or all(not v.strip() for v in rec):
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{source} row {reader.line_num}: expected {len(header)} fields, got {len(rec)}"
                )
            rows.append(tuple(v.strip() for v in rec))
            lines.append(reader.line_num)
    except csv.Error as exc:
        raise DataError(f"{source} row {reader.line_num}: malformed CSV ({exc})") from None
    if header is None:
        raise DataError(f"{source}: empty file")
    return CsvTable(header, tuple(rows), tuple(lines), source)


def format_value(v) -> str:
    """Full-precision text for CSV cells; missing values become ``NA``."""
    if v is None:
        return MISSING
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return MISSING if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path: str | Path | None, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Write (or just return) an RFC-4180 style CSV with LF line endings."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def is_missing(text: str) -> bool:
    return text.strip().lower() in _MISSING_IN


def _sort_labels(labels) -> list:
    labels = list(labels)
    try:
        return sorted(labels, key=lambda s: (float(s), s))
    except ValueError:
        return sorted(labels)


# ---------------------------------------------------------------------------
# analysis input


@dataclass(frozen=True)
class AnalysisInput:
    data: TrialDataset
    arm_labels: tuple  # index t-1 -> label
    strata_levels: dict  # column -> tuple of labels in code order
    covariates: tuple


def resolve_contrast(text: str, arm_labels: Sequence[str]) -> Contrast:
    """``"2-1"`` by arm index or ``"soccer vs placebo"`` by label."""
    if " vs " in text:
        t_lab, s_lab = (v.strip() for v in text.split(" vs ", 1))
        missing = [v for v in (t_lab, s_lab) if v not in arm_labels]
        if missing:
            raise ConfigError(f"contrast {text!r}: unknown arm label(s) {', '.join(missing)}")
        return Contrast(arm_labels.index(t_lab) + 1, arm_labels.index(s_lab) + 1)
    return Contrast.parse(text).check(len(arm_labels))


def load_analysis_input(table: CsvTable, outcome: str, arm: str, strata: Sequence[str],
                        covariates: Sequence[str] = (), arm_order: Sequence[str] | None = None,
                        alloc: AllocationSpec | None = None, id_column: str | None = None) -> AnalysisInput:
    """Map CSV columns to a :class:`TrialDataset`.

    Arm labels are sorted (numerically when every label is a number) unless
    ``arm_order`` is given; stratum labels are coded the same way per column.
    """
    roles = [outcome, arm, *strata, *covariates] + ([id_column] if id_column else [])
    dup = {c for c in roles if roles.count(c) > 1}
    if dup:
        raise ConfigError(f"column(s) {', '.join(sorted(dup))} assigned to more than one role")
    if not strata:
        raise ConfigError("at least one strata column is required")
    i_y, i_arm = table.column(outcome), table.column(arm)
    i_z = [table.column(c) for c in strata]
    i_x = [table.column(c) for c in covariates]
    i_id = table.column(id_column) if id_column else None

    for row, line in zip(table.rows, table.line_numbers):
        for name, j in [(outcome, i_y), (arm, i_arm), *zip(strata, i_z), *zip(covariates, i_x)]:
            if is_missing(row[j]):
                raise IncompleteRecord(f"{table.source} row {line}: missing value in column {name!r}")

    seen = sorted({row[i_arm] for row in table.rows})
    if arm_order is not None:
        labels = list(arm_order)
        if len(set(labels)) != len(labels):
            raise ConfigError("arm_order lists a label twice")
        extra = [a for a in seen if a not in labels]
        if extra:
            raise DataError(f"{table.source}: arm label(s) {', '.join(extra)} not listed in arm_order")
    else:
        labels = _sort_labels(seen)
    if alloc is None:
        alloc = AllocationSpec.equal(max(len(labels), 2))
    if alloc.k != len(labels):
        raise ConfigError(f"allocation {alloc.ratio} has {alloc.k} arms but the data define {len(labels)}")
    arm_index = {lab: t for t, lab in enumerate(labels, start=1)}

    levels = {}
    codes = []
    for name, j in zip(strata, i_z):
        labs = _sort_labels({row[j] for row in table.rows})
        levels[name] = tuple(labs)
        lookup = {lab: c for c, lab in enumerate(labs)}
        codes.append([lookup[row[j]] for row in table.rows])

    n = len(table.rows)
    y = np.empty(n)
    x = np.empty((n, len(covariates)))
    for r, (row, line) in enumerate(zip(table.rows, table.line_numbers)):
        for name, j, dest, col in [(outcome, i_y, y, None)] + [
            (c, jj, x, q) for q, (c, jj) in enumerate(zip(covariates, i_x))
        ]:
            try:
                value = float(row[j])
            except ValueError:
                raise DataError(f"{table.source} row {line}: column {name!r} is not numeric ({row[j]!r})") from None
            if not math.isfinite(value):
                raise DataError(f"{table.source} row {line}: column {name!r} is not finite")
            if col is None:
                dest[r] = value
            else:
                dest[r, col] = value
    data = TrialDataset(
        z=tuple(zip(*codes)),
        x=x,
        arm=[arm_index[row[i_arm]] for row in table.rows],
        y=y,
        alloc=alloc,
        ids=tuple(row[i_id] for row in table.rows) if i_id is not None else tuple(table.line_numbers),
    )
    return AnalysisInput(data, tuple(labels), levels, tuple(covariates))


# ---------------------------------------------------------------------------
# rendered tables


def _fmt(v, digits: int = 4) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return MISSING
    return f"{v:.{digits}f}"


def render_grid(header: Sequence[str], rows: Sequence[Sequence[str]], groups=None) -> str:
    """Plain-text table with right-aligned columns and optional group labels above."""
    widths = [max(len(str(h)), *(len(str(r[j])) for r in rows)) if rows else len(str(h))
              for j, h in enumerate(header)]
    lines = []
    if groups:
        offsets = np.cumsum([0] + [w + 2 for w in widths]).tolist()
        line = [" "] * (offsets[-1])
        for label, start, stop in groups:
            lo, hi = offsets[start], offsets[stop] - 2
            text = label.center(hi - lo, "-") if len(label) + 2 <= hi - lo else label
            line[lo:lo + len(text)] = text
        lines.append("".join(line).rstrip())
    lines.append("  ".join(str(h).rjust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(str(v).rjust(w) for v, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


ESTIMATOR_TEX = {"U": "theta_hat", "B": "theta_hat_B", "A": "theta_hat_A"}


def render_analysis(reports: dict, contrast_labels: dict, digits: int = 4) -> str:
    """Estimator rows against (estimate, SE, p-value) column groups per contrast.

    ``reports`` maps a contrast to ``{tag: InferenceReport}``.
    """
    contrasts = list(reports)
    tags = []
    for c in contrasts:
        for tag in reports[c]:
            if tag not in tags:
                tags.append(tag)
    header = ["estimator"]
    groups = []
    for c in contrasts:
        start = len(header)
        header += ["estimate", "SE", "p-value"]
        groups.append((contrast_labels.get(c, str(c)), start, len(header)))
    rows = []
    for tag in tags:
        row = [ESTIMATOR_TEX.get(tag, tag)]
        for c in contrasts:
            rep = reports[c].get(tag)
            row += [MISSING] * 3 if rep is None else [
                _fmt(rep.estimate, digits), _fmt(rep.se, digits), _fmt(rep.p_value, digits)
            ]
        rows.append(row)
    return render_grid(header, rows, groups)


def render_simulation(summaries: Sequence, digits: int = 4) -> str:
    """Wide layout: one row per (n, case, Z, contrast, estimator), one column group per allocation.

    Separate blocks are emitted for each randomization scheme.
    """
    out = []
    schemes = []
    for s in summaries:
        if s.scenario.scheme.scheme not in schemes:
            schemes.append(s.scenario.scheme.scheme)
    for scheme in schemes:
        block = [s for s in summaries if s.scenario.scheme.scheme == scheme]
        allocs = []
        for s in block:
            if s.scenario.alloc.ratio not in allocs:
                allocs.append(s.scenario.alloc.ratio)
        keys = []
        cells = {}
        for s in block:
            sc = s.scenario
            for r in s.rows:
                key = (sc.n, getattr(sc.dgp, "case", "-"), sc.zspec.label, str(r.contrast), r.estimator)
                if key not in cells:
                    keys.append(key)
                    cells[key] = {}
                cells[key][sc.alloc.ratio] = r
        header = ["n", "case", "Z", "t-s", "estimator"]
        groups = []
        for a in allocs:
            start = len(header)
            header += ["bias", "SD", "SE", "CP", "fail"]
            groups.append((f"allocation {a}", start, len(header)))
        rows = []
        prev = None
        for key in keys:
            n, case, z, con, est = key
            lead = [str(n), case, z, con] if (n, case, z, con) != prev else ["", "", "", ""]
            prev = (n, case, z, con)
            row = lead + [ESTIMATOR_TEX.get(est, est)]
            for a in allocs:
                r = cells[key].get(a)
                if r is None:
                    row += [""] * 5
                else:
                    row += [_fmt(r.bias, digits), _fmt(r.sd, digits), _fmt(r.se_avg, digits),
                            _fmt(r.cp, digits), str(r.fail_count)]
            rows.append(row)
        out.append(f"scheme: {scheme}\n" + render_grid(header, rows, groups))
    return "\n".join(out)
