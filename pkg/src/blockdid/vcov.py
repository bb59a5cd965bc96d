"""Stratified cluster bootstrap for the stacked coefficient covariance.

Units are resampled with replacement within their own cohorts (never-treated
included), keeping every cohort's size fixed, and each drawn unit carries its
full time series.  The full set of pre-treatment block biases and
post-treatment effects is re-estimated on every replicate; the covariance of
the stacked draws estimates the joint sampling covariance of the original
coefficients.  Point values always come from the original sample.
"""

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimators import CoefficientSet, EstimationError, estimate
from .panel import PanelData, build_layout

__all__ = ["BootstrapSpec", "ResamplingDegenerate", "bootstrap_vcov"]

_MAX_REDRAWS = 100


class ResamplingDegenerate(EstimationError):
    code = "RESAMPLING_DEGENERATE"


@dataclass(frozen=True)
class BootstrapSpec:
    """Replication count, seed, and estimator tag for one bootstrap run."""

    replications: int = 1000
    seed: int = 0
    estimator: str = "imputation"

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("need at least 2 bootstrap replications")


def _strata(panel: PanelData):
    layout = build_layout(panel)
    groups = list(layout.cohort_units) + [layout.never_units]
    return groups


def _resample_rows(groups, rng):
    """Within-stratum draws, concatenated in canonical stratum order."""
    rows = np.empty(sum(len(g) for g in groups), dtype=int)
    at = 0
    for g in groups:
        rows[at : at + len(g)] = g[rng.integers(0, len(g), size=len(g))]
        at += len(g)
    return rows


def _replicate(panel, groups, estimator, seed, b):
    """One replicate's stacked coefficient values (redrawn on failures)."""
    for attempt in range(_MAX_REDRAWS):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(b, attempt))
        )
        rows = _resample_rows(groups, rng)
        resampled = PanelData(
            units=tuple(f"b{j}" for j in range(len(rows))),
            n_periods=panel.n_periods,
            outcome=panel.outcome[rows],
            adoption=tuple(panel.adoption[r] for r in rows),
            time_labels=panel.time_labels,
        )
        try:
            return estimate(resampled, estimator).values
        except EstimationError:
            continue
    raise ResamplingDegenerate(
        f"replicate {b}: {_MAX_REDRAWS} consecutive resampling failures"
    )


def bootstrap_vcov(
    panel: PanelData, spec: BootstrapSpec, workers: int = 1
) -> CoefficientSet:
    """Point estimates from the original sample plus a bootstrap covariance.

    Replicate b draws from a dedicated random substream keyed by (seed, b),
    so results are identical whether replicates run serially or in parallel.
    """
    layout = build_layout(panel)
    singletons = [
        f"g{t}" for t, n in zip(layout.times, layout.sizes) if n < 2
    ]
    if layout.never_size < 2:
        singletons.append("never")
    if singletons:
        warnings.warn(
            "singleton cohort strata contribute zero variance: "
            + ", ".join(singletons),
            stacklevel=2,
        )

    point = estimate(panel, spec.estimator)
    groups = _strata(panel)
    B = spec.replications

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            draws = list(
                pool.map(
                    _replicate,
                    [panel] * B,
                    [groups] * B,
                    [spec.estimator] * B,
                    [spec.seed] * B,
                    range(B),
                    chunksize=max(1, B // (4 * workers)),
                )
            )
    else:
        draws = [_replicate(panel, groups, spec.estimator, spec.seed, b) for b in range(B)]

    stacked = np.vstack(draws)
    centered = stacked - stacked.mean(axis=0, keepdims=True)
    vcov = centered.T @ centered / (B - 1)
    vcov = (vcov + vcov.T) / 2.0
    return CoefficientSet(
        estimator=point.estimator,
        cells=point.cells,
        positions=point.positions,
        values=point.values,
        vcov=vcov,
    )
