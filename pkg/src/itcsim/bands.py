"""Reference performance bands for the two shipped scenarios.

``desk_checks`` encodes the reduced-scale (R=200, B=200) bands; widths are
the reference values' Monte Carlo errors inflated by sqrt(2000/200).
``full_checks`` compares a full-scale run with the reference values,
allowing 3 x (rounding half-unit + computed MCSE).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .harness import PerformanceSummary
from .linmod import Family

# method -> measure -> (reference value, decimals reported)
REFERENCE_VALUES = {
    Family.LOGISTIC: {
        "bucher": {"bias": (-0.211, 3), "mse": (0.062, 3), "coverage": (0.631, 3)},
        "maic": {"bias": (0.034, 3), "mse": (0.137, 3), "coverage": (0.938, 3)},
        "gcomp": {"bias": (-0.006, 3), "mse": (0.018, 3), "coverage": (0.944, 3)},
    },
    Family.LINEAR: {
        "bucher": {"bias": (0.001, 3), "mse": (0.003, 3), "coverage": (0.954, 3)},
        "maic": {"bias": (0.01, 2), "mse": (0.227, 3), "coverage": (0.889, 3)},
        "gcomp": {"bias": (0.002, 3), "mse": (0.002, 3), "coverage": (0.949, 3)},
    },
}

MIN_VALID_FRACTION = 0.99


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    passed: bool
    rule: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.4f} ({self.rule})"


def _within(name, value, lo, hi) -> Check:
    return Check(name, value, lo <= value <= hi, f"in [{lo:g}, {hi:g}]")


def _valid_checks(by, replicates) -> list[Check]:
    need = MIN_VALID_FRACTION * replicates
    return [
        Check(f"{m} n_valid", float(s.n_valid), s.n_valid >= need, f">= {need:g}")
        for m, s in by.items()
    ]


def desk_checks(summaries: Sequence[PerformanceSummary], family: Family | str, replicates: int) -> list[Check]:
    by = {s.method: s for s in summaries}
    family = Family(family)
    checks = _valid_checks(by, replicates)
    if family is Family.LOGISTIC:
        b, g, m = by["bucher"], by["gcomp"], by["maic"]
        checks += [
            _within("bucher bias", b.bias, -0.211 - 0.03, -0.211 + 0.03),
            Check("bucher coverage", b.coverage, b.coverage <= 0.72, "<= 0.72"),
            _within("bucher mse", b.mse, 0.062 - 0.015, 0.062 + 0.015),
            Check("gcomp |bias|", abs(g.bias), abs(g.bias) <= 0.02, "<= 0.02"),
            _within("gcomp coverage", g.coverage, 0.89, 0.99),
            _within("gcomp mse", g.mse, 0.018 - 0.01, 0.018 + 0.01),
            Check("maic |bias|", abs(m.bias), abs(m.bias) <= 0.06, "<= 0.06"),
            _within("maic coverage", m.coverage, 0.87, 0.99),
            _within("maic mse", m.mse, 0.08, 0.22),
        ]
    else:
        b, g, m = by["bucher"], by["gcomp"], by["maic"]
        checks += [
            Check("bucher |bias|", abs(b.bias), abs(b.bias) <= 0.01, "<= 0.01"),
            _within("bucher coverage", b.coverage, 0.91, 0.99),
            Check("gcomp mse", g.mse, g.mse <= b.mse, f"<= bucher mse {b.mse:.4f}"),
            Check("bucher mse", b.mse, b.mse <= 0.006, "<= 0.006"),
            Check("maic mse", m.mse, m.mse >= 0.12, ">= 0.12"),
            Check("maic coverage", m.coverage, m.coverage <= 0.93, "<= 0.93"),
        ]
    return checks


def full_checks(summaries: Sequence[PerformanceSummary], family: Family | str, replicates: int) -> list[Check]:
    by = {s.method: s for s in summaries}
    checks = _valid_checks(by, replicates)
    for method, measures in REFERENCE_VALUES[Family(family)].items():
        s = by[method]
        for measure, (reference, decimals) in measures.items():
            value = getattr(s, measure)
            mcse = getattr(s, f"{measure}_mcse")
            slack = 3.0 * (0.5 * 10.0**-decimals + mcse)
            checks.append(_within(f"{method} {measure}", value, reference - slack, reference + slack))
    return checks
