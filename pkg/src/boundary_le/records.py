"""Density fields, CSV output and structured check reports."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CSV_VERSION = "boundary-le-csv/1"


@dataclass
class DensityField:
    """Values indexed by the sites of a domain (same order as ``domain.sites``)."""

    domain: object
    values: np.ndarray
    time: float = np.inf

    @property
    def L(self) -> float:
        return self.domain.L

    def at(self, site) -> float:
        return float(self.values[self.domain.site_index(site)])

    def rows(self):
        for (lx, ly), v in zip(self.domain.sites.tolist(), self.values.tolist()):
            yield lx, ly, v


def _fmt(v) -> str:
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows, meta: dict | None = None) -> Path:
    """CSV with ``#``-prefixed metadata lines, a header row and data rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {CSV_VERSION}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}={v}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path):
    """Returns ``(meta, header, rows)`` with rows as lists of strings."""
    meta, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k] = v
            continue
        if header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    return meta, header, rows


def config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return _plain(v.item())
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


@dataclass
class CheckResult:
    """One pass/fail line of a report."""

    check: str
    statistic: object
    reference: object
    tolerance: object
    passed: bool
    note: str = ""

    def as_dict(self) -> dict:
        d = {
            "check": self.check,
            "statistic": _plain(self.statistic),
            "reference": _plain(self.reference),
            "tolerance": _plain(self.tolerance),
            "pass": bool(self.passed),
        }
        if self.note:
            d["note"] = self.note
        return d


def format_report(results, cfg_hash: str | None = None) -> str:
    lines = []
    for r in results:
        d = r.as_dict()
        if cfg_hash is not None:
            d["config"] = cfg_hash
        lines.append(json.dumps(d, sort_keys=True))
    summary = {"summary": True, "checks": len(results), "passed": sum(bool(r.passed) for r in results)}
    if cfg_hash is not None:
        summary["config"] = cfg_hash
    lines.append(json.dumps(summary, sort_keys=True))
    return "\n".join(lines) + "\n"
