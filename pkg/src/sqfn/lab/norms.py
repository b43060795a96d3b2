"""Operator-norm lower estimates by probing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .._validation import ArgumentError

log = logging.getLogger(__name__)

MIN_PROBES = 32


@dataclass
class NormReport:
    operator: str
    domain: str
    codomain: str
    estimate: float
    probe_count: int
    argmax_probe: str | None
    drift_pct: float | None = None
    ratios: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    def to_dict(self, with_ratios: bool = False) -> dict:
        out = {
            "operator": self.operator,
            "domain": self.domain,
            "codomain": self.codomain,
            "estimate": self.estimate,
            "probe_count": self.probe_count,
            "argmax_probe": self.argmax_probe,
            "drift_pct": self.drift_pct,
            "skipped": list(self.skipped),
        }
        if with_ratios:
            out["ratios"] = dict(sorted(self.ratios.items()))
        return out


def estimate_operator_norm(apply, in_norm, out_norm, probes, seed: int | None = None, *,
                           zoo=None, operator: str = "T", domain: str = "", codomain: str = "",
                           min_probes: int = MIN_PROBES) -> NormReport:
    """max over probes f of out_norm(apply(f)) / in_norm(f).

    ``probes`` is either a sequence of objects with ``id`` and ``values`` or a
    count, in which case ``zoo(count, seed)`` must produce them. Probes with
    zero input norm are skipped and logged. The result is a lower estimate of
    the operator norm.
    """
    if isinstance(probes, (int, np.integer)):
        if int(probes) < min_probes:
            raise ArgumentError(f"need at least {min_probes} probes")
        if zoo is None or seed is None:
            raise ArgumentError("a probe count needs a zoo and a seed")
        probes = zoo(int(probes), seed)
    probes = list(probes)
    ratios, skipped = {}, []
    for probe in probes:
        denom = float(in_norm(probe.values))
        if denom == 0:
            log.info("probe %s has zero input norm; skipped", probe.id)
            skipped.append(probe.id)
            continue
        ratios[probe.id] = float(out_norm(apply(probe.values))) / denom
    return report_from_ratios(ratios, operator, domain, codomain, skipped)


def report_from_ratios(ratios: dict, operator: str, domain: str, codomain: str,
                       skipped=()) -> NormReport:
    if ratios:
        best = max(sorted(ratios), key=lambda k: ratios[k])
        estimate = ratios[best]
    else:
        best, estimate = None, 0.0
    return NormReport(operator, domain, codomain, float(estimate), len(ratios), best,
                      ratios=dict(ratios), skipped=list(skipped))


def drift_pct(a: float, b: float) -> float:
    """Relative change between two estimates, in percent of the larger."""
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else 100.0 * abs(a - b) / scale
