"""MTS, HNS and closed-form TTS accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .coevolution import SCHEDULE_PRESETS, RunMode, Schedule

HNS_EPS = 1e-12

# ratios printed next to each schedule's arithmetic; compute_tts reports any mismatch
REFERENCE_TTS_RATIOS = {"roska": 0.89, "eureka": 1.0, "roska-u": 2.2, "roska-0.74": 0.74, "roska-0.56": 0.56}
RATIO_TOLERANCE = 0.005


class DegenerateBaseline(ValueError):
    pass


def compute_hns(method_mts: float, sparse_mts: float, human_mts: float) -> float:
    """(method - sparse) / |human - sparse|."""
    denom = abs(human_mts - sparse_mts)
    if denom < HNS_EPS:
        raise DegenerateBaseline(f"human ({human_mts}) and sparse ({sparse_mts}) baselines coincide")
    return (method_mts - sparse_mts) / denom


def mts(fitness_trace) -> Optional[float]:
    vals = [f for _, f in fitness_trace]
    return max(vals) if vals else None


@dataclass(frozen=True)
class TtsResult:
    mode: str
    first_round: int
    per_dp_round: int
    n_dp_rounds: int
    total_epochs: int
    eureka_epochs: int
    ratio_vs_eureka: float
    reference_ratio: Optional[float] = None

    @property
    def subsequent(self) -> int:
        return self.per_dp_round * self.n_dp_rounds

    @property
    def discrepancy(self) -> Optional[str]:
        if self.reference_ratio is None or abs(self.ratio_vs_eureka - self.reference_ratio) <= RATIO_TOLERANCE:
            return None
        return (f"computed TTS ratio {self.ratio_vs_eureka:.4f} ({self.total_epochs}/{self.eureka_epochs}) "
                f"differs from the reference figure {self.reference_ratio}")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "first_round": self.first_round, "per_dp_round": self.per_dp_round,
                "n_dp_rounds": self.n_dp_rounds, "subsequent": self.subsequent, "total_epochs": self.total_epochs,
                "eureka_epochs": self.eureka_epochs, "ratio_vs_eureka": self.ratio_vs_eureka,
                "reference_ratio": self.reference_ratio, "discrepancy": self.discrepancy}


def eureka_total(s: Schedule) -> int:
    return s.n_rounds * s.batch_size * s.eureka_epochs


def round_costs(s: Schedule, mode: RunMode) -> tuple[int, int]:
    """(first-round epochs, epochs per fixed-size DP batch) for ``mode``."""
    K = s.batch_size
    if mode.kind == "eureka":
        return K * s.eureka_epochs, K * s.eureka_epochs
    if mode.kind == "roska-u":
        return K * s.eureka_epochs, K * (s.uniform_alphas_count * s.uniform_probe_epochs + s.finish_epochs)
    first = K * s.first_round_probe_epochs + s.first_round_finish_epochs
    # fixed-alpha spends the search budget training the fused policy, so it costs the same
    return first, K * s.bo_J * s.bo_T_BO + K * s.post_bo_epochs + s.finish_epochs


def reference_key(schedule: Schedule, mode: RunMode) -> Optional[str]:
    """Key of the reference ratio that applies, if ``schedule`` is one of the presets."""
    if schedule == SCHEDULE_PRESETS["default"]:
        return mode.kind if mode.kind in REFERENCE_TTS_RATIOS else None
    for name, preset in SCHEDULE_PRESETS.items():
        if schedule == preset and mode.kind == "roska" and name in REFERENCE_TTS_RATIOS:
            return name
    return None


def compute_tts(schedule: Schedule, mode: RunMode) -> TtsResult:
    first, per = round_costs(schedule, mode)
    n_dp = schedule.n_rounds - 1
    total = first + n_dp * per
    base = eureka_total(schedule)
    key = reference_key(schedule, mode)
    ref = REFERENCE_TTS_RATIOS[key] if key else None
    return TtsResult(mode.label, first, per, n_dp, total, base, total / base if base else math.nan, ref)


def expected_ledger_total(schedule: Schedule, mode: RunMode, batches_per_round: Sequence[int]) -> int:
    """Closed-form epochs for a run whose DP rounds used the given batch counts."""
    first, per = round_costs(schedule, mode)
    return first + per * int(sum(batches_per_round))


def summarize(values: Sequence[float]) -> dict:
    """Mean and sample standard deviation; a single value gets std 0 and a note."""
    vals = [float(v) for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return {"n": 0, "mean": None, "std": None, "note": "no finite values"}
    if len(vals) == 1:
        return {"n": 1, "mean": vals[0], "std": 0.0, "note": "single run: std undefined, reported as 0"}
    return {"n": len(vals), "mean": float(np.mean(vals)), "std": float(np.std(vals, ddof=1)), "note": ""}
