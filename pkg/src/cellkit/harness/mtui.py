"""Mean time until intervention."""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from cellkit.watchdog.interventions import Intervention


class LogOrderError(ValueError):
    pass


@dataclass
class MTUIReport:
    """Uptimes are the completed intervals between the start and successive interventions.

    The interval still open at the horizon is censored and left out of ``mean_s`` and
    ``std_s``. With no intervention at all the report is censored and ``mean_s`` is the
    observed horizon, a lower bound.
    """

    interventions: list[Intervention]
    uptimes_s: list[float]
    mean_s: float
    std_s: float | None
    censored: bool
    cycles_completed: int = 0
    exposure_s: float = 0.0
    runs: int = 1

    @property
    def lower_bound(self) -> bool:
        return self.censored

    @property
    def rate_mean_s(self) -> float | None:
        """Censoring-aware estimate: total observed time per intervention."""
        if not self.interventions:
            return None
        return self.exposure_s / len(self.interventions)

    def summary(self) -> str:
        if self.censored:
            return (f"MTUI > {self.mean_s:.1f} s (censored, no intervention in {self.runs} run(s)); "
                    f"{self.cycles_completed} cycles")
        std = "n/a" if self.std_s is None else f"{self.std_s:.1f}"
        return (f"MTUI {self.mean_s:.1f} s, std {std} s over {len(self.uptimes_s)} uptimes; "
                f"{len(self.interventions)} interventions, {self.cycles_completed} cycles, "
                f"exposure/intervention {self.rate_mean_s:.1f} s")

    def to_dict(self) -> dict:
        return {"mean_s": self.mean_s, "std_s": self.std_s, "censored": self.censored,
                "uptimes": len(self.uptimes_s), "interventions": len(self.interventions),
                "cycles_completed": self.cycles_completed, "exposure_s": self.exposure_s,
                "rate_mean_s": self.rate_mean_s, "runs": self.runs}


def _stats(uptimes: Sequence[float]) -> tuple[float, float | None]:
    mean = statistics.fmean(uptimes)
    std = statistics.stdev(uptimes) if len(uptimes) > 1 else None
    return mean, std


def uptimes_from(times_s: Sequence[float], horizon_s: float, start_s: float = 0.0) -> list[float]:
    prev = start_s
    out = []
    for t in times_s:
        if t < prev:
            raise LogOrderError(f"intervention at {t} s precedes {prev} s")
        out.append(t - prev)
        prev = t
    if prev > horizon_s:
        raise LogOrderError(f"intervention at {prev} s lies past the horizon {horizon_s} s")
    return out


def compute_mtui(log: Iterable[Intervention], horizon_s: float, start_s: float = 0.0,
                 cycles_completed: int = 0) -> MTUIReport:
    entries = list(log)
    if horizon_s <= start_s:
        raise ValueError("horizon must lie after the start")
    ups = uptimes_from([e.time_s for e in entries], horizon_s, start_s)
    exposure = horizon_s - start_s
    if not ups:
        return MTUIReport([], [], exposure, None, True, cycles_completed, exposure)
    mean, std = _stats(ups)
    return MTUIReport(entries, ups, mean, std, False, cycles_completed, exposure)


def merge_reports(reports: Sequence[MTUIReport]) -> MTUIReport:
    """Pool independent runs: uptimes and interventions concatenate, exposure adds up."""
    if not reports:
        raise ValueError("nothing to merge")
    interventions = [i for r in reports for i in r.interventions]
    ups = [u for r in reports for u in r.uptimes_s]
    exposure = sum(r.exposure_s for r in reports)
    cycles = sum(r.cycles_completed for r in reports)
    n = sum(r.runs for r in reports)
    if not ups:
        # every run censored; the shortest horizon is what each run guarantees
        return MTUIReport([], [], min(r.mean_s for r in reports), None, True, cycles, exposure, n)
    mean, std = _stats(ups)
    return MTUIReport(interventions, ups, mean, std, False, cycles, exposure, n)


def superposition_mean(rates_per_s: Iterable[float]) -> float:
    """Independent exponential failure sources race; the first arrival has the summed rate."""
    total = sum(rates_per_s)
    if total <= 0:
        return math.inf
    return 1.0 / total


def windowed_mean(mean_s: float, horizon_s: float) -> float:
    """Expected pooled mean of completed uptimes when each run stops at ``horizon_s``.

    For a Poisson process of mean spacing m on [0, T], the completed time is the last
    arrival: E[S_N] = T - m(1 - exp(-T/m)) and E[N] = T/m. Pooling many runs converges to
    their ratio, which sits below m because long intervals are the ones the horizon cuts.
    """
    if math.isinf(mean_s):
        return math.inf
    return mean_s * (1.0 - (mean_s / horizon_s) * (1.0 - math.exp(-horizon_s / mean_s)))
