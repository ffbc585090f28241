"""Deterministic report objects and their byte-stable text encoding.

Reports serialize to UTF-8 JSON with insertion-ordered keys and floats
printed with 17 significant digits, which round-trips float64 exactly and
makes output files byte-identical across runs with the same inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

__all__ = ["CheckRecord", "ResidualReport", "emit_json", "parse_json"]

TOOL_VERSION = "0.1.0"


@dataclass
class CheckRecord:
    name: str
    equation: str
    max_residual: float
    tolerance: float
    passed: bool

    def to_obj(self) -> dict:
        return {"name": self.name, "equation": self.equation,
                "max_residual": float(self.max_residual),
                "tolerance": float(self.tolerance), "pass": bool(self.passed)}

    @staticmethod
    def from_obj(obj: dict) -> "CheckRecord":
        return CheckRecord(obj["name"], obj["equation"], obj["max_residual"],
                           obj["tolerance"], obj["pass"])


@dataclass
class ResidualReport:
    """Named residual checks over sampled points, plus run provenance."""

    system: str
    params: dict
    seed: int
    checks: list[CheckRecord] = field(default_factory=list)
    points: list[list[float]] = field(default_factory=list)
    version: str = TOOL_VERSION

    def record(self, name: str, equation: str, value: float, tolerance: float,
               passed: bool | None = None) -> None:
        """Record a check, merging by pointwise max when the name repeats."""
        for c in self.checks:
            if c.name == name:
                c.max_residual = max(c.max_residual, float(value))
                c.passed = c.max_residual <= c.tolerance if passed is None else (c.passed and passed)
                return
        ok = (float(value) <= tolerance) if passed is None else passed
        self.checks.append(CheckRecord(name, equation, float(value), tolerance, ok))

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_obj(self) -> dict:
        return {
            "version": self.version,
            "seed": int(self.seed),
            "system": self.system,
            "params": {k: self.params[k] for k in sorted(self.params)},
            "checks": [c.to_obj() for c in self.checks],
            "points": [[float(v) for v in p] for p in self.points],
        }

    @staticmethod
    def from_obj(obj: dict) -> "ResidualReport":
        rep = ResidualReport(system=obj["system"], params=dict(obj["params"]),
                             seed=obj["seed"], version=obj["version"])
        rep.checks = [CheckRecord.from_obj(c) for c in obj["checks"]]
        rep.points = [list(p) for p in obj["points"]]
        return rep


# ---------------------------------------------------------------------------
# byte-stable JSON text
# ---------------------------------------------------------------------------

def _emit(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format(obj, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _emit(v, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k), ensure_ascii=False))
            out.append(": ")
            _emit(v, out)
        out.append("}")
    else:
        raise TypeError(f"cannot serialize {type(obj)}")


def emit_json(obj) -> str:
    out: list[str] = []
    _emit(obj, out)
    out.append("\n")
    return "".join(out)


def parse_json(text: str):
    return json.loads(text)
