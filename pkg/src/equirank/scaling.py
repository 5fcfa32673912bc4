"""Per-user score scalers: min-max, normalization, and Mehestan-style rescaling.

Min-max and normalization act on each user's raw comparison scores in
isolation. Mehestan is collaborative: every user's latent (GBT-fitted)
scores are put on a common affine scale using robust aggregation over the
other users' scores, then the rescaled score differences become the new
comparison targets. The final global aggregation into one ranking is
deliberately not performed; all scores stay per-user.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Comparison, ComparisonSet, COMPARISONS_HEADER
from .gbt import GbtConfig, IndividualScores, fit_gbt
from .robust import ResilienceParams, br_mean

SCALER_TAGS = ("minmax", "normalization", "mehestan", "none")


@dataclass(frozen=True)
class ScaledComparisonSet(ComparisonSet):
    """A ComparisonSet whose scores were rewritten by a named scaler."""

    scaler_tag: str = "none"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.scaler_tag not in SCALER_TAGS:
            raise ValueError(
                f"scaler_tag must be one of {SCALER_TAGS}, got {self.scaler_tag!r}"
            )


@dataclass(frozen=True)
class UserAffine:
    """Multiplicative scale and translation applied to one user's latent scores."""

    user_id: str
    s: float
    tau: float

    def __post_init__(self) -> None:
        if not self.s > 0:
            raise ValueError(f"scale must be positive, got {self.s}")


def _replace_scores(
    cset: ComparisonSet, new_scores: Sequence[float], tag: str
) -> ScaledComparisonSet:
    rewritten = tuple(
        Comparison(c.user_id, c.criterion, c.left_item, c.right_item, float(score))
        for c, score in zip(cset.comparisons, new_scores)
    )
    return ScaledComparisonSet(rewritten, scaler_tag=tag)


def _group_indices(cset: ComparisonSet) -> dict[tuple[str, str], list[int]]:
    groups: dict[tuple[str, str], list[int]] = {}
    for idx, c in enumerate(cset.comparisons):
        groups.setdefault((c.user_id, c.criterion), []).append(idx)
    return groups


def minmax_scale(cset: ComparisonSet) -> ScaledComparisonSet:
    """Affinely map each user's scores onto [-1, 1] (per criterion).

    Degenerate users whose scores are all equal map to 0.
    """
    scores = np.array([c.score for c in cset.comparisons], dtype=np.float64)
    out = np.zeros_like(scores)
    for _, idxs in _group_indices(cset).items():
        vals = scores[idxs]
        lo, hi = vals.min(), vals.max()
        if hi > lo:
            out[idxs] = 2.0 * (vals - lo) / (hi - lo) - 1.0
        # else: leave zeros
    return _replace_scores(cset, out, "minmax")


def normalization_scale(cset: ComparisonSet) -> ScaledComparisonSet:
    """Standardize each user's scores (population std), then shrink into [-1, 1].

    Z-scoring and then dividing by max|z| is algebraically centered / max
    |centered|, so the std cancels out of the result, and the result is
    invariant under positive affine maps of the input. That licenses a
    numerically safe evaluation: first map the scores onto [0, 1] exactly
    (range-degenerate users map to 0 instead), which sidesteps subnormal
    score gaps whose mean is not even representable, then double-center so
    the output mean sits at machine epsilon.
    """
    scores = np.array([c.score for c in cset.comparisons], dtype=np.float64)
    out = np.zeros_like(scores)
    for _, idxs in _group_indices(cset).items():
        vals = scores[idxs]
        lo, hi = vals.min(), vals.max()
        # Degeneracy is a range check, not std == 0: the float mean of a
        # constant list is not exact, which would leave std ~ 1e-17 and blow
        # the z-scores up to +-1.
        if hi > lo:
            unit = (vals - lo) / (hi - lo)
            centered = unit - unit.mean()
            centered -= centered.mean()
            out[idxs] = centered / np.abs(centered).max()
    return _replace_scores(cset, out, "normalization")


def _aggregate(
    values: list[float], weight: float, clip_radius: float, aggregator: str
) -> float:
    if aggregator == "brmean":
        return br_mean(
            values, ResilienceParams(weight=weight, default=0.0, clip_radius=clip_radius)
        )
    if aggregator == "mean":
        return float(np.mean(values)) if values else 0.0
    raise ValueError(f"unknown aggregator {aggregator!r}")


def mehestan_scale(
    cset: ComparisonSet,
    gbt_config: GbtConfig = GbtConfig(),
    params: ResilienceParams = ResilienceParams(),
    *,
    epsilon_pair: float = 1e-6,
    ratio_clip: float = 0.5,
    translation_clip: float = 1.0,
    aggregator: str = "brmean",
) -> tuple[ScaledComparisonSet, list[UserAffine], list[IndividualScores]]:
    """Collaboratively rescale every user's latent scores onto a common scale.

    Procedure:
      1. Fit GBT scores theta_u per user.
      2. The anchor user (most scored items, ties by lexicographic user_id)
         is pinned at s=1, tau=0; affine freedom needs a gauge.
      3. For every other user u, every other user v votes on u's scale with
         the median log-ratio log(|theta_v(a)-theta_v(b)| / |theta_u(a)-theta_u(b)|)
         over common item pairs whose gaps both exceed epsilon_pair;
         s_u = exp(br_mean(votes, default 0, clip ratio_clip)). No votes: s_u = 1.
      4. Translation candidates are collected per (other user v, common item a):
         s_v*theta_v(a) - s_u*theta_u(a); tau_u = br_mean(candidates, default 0,
         clip translation_clip). No candidates: tau_u = 0.
      5. Scaled scores theta'_u = s_u*theta_u + tau_u, kept per user.
      6. New comparison targets r' = clip(theta'_u(right) - theta'_u(left), -1, 1).

    Aggregating votes from all users (not only the anchor) keeps the
    influence of any single malicious voter bounded by the BrMean clipping;
    `aggregator="mean"` swaps in an unclipped mean for robustness
    comparisons. The clip radius is ratio_clip in log-ratio space so that
    multiplying or dividing by the same factor is treated symmetrically.

    Returns the rescaled comparison set, the per-user affines, and the
    scaled per-user latent scores theta'_u. Requires >= 2 users and a
    single criterion (filter first via ComparisonSet.restrict).
    """
    users = sorted(cset.users)
    if len(users) < 2:
        raise ValueError(f"mehestan_scale needs >= 2 users, got {len(users)}")
    criteria = cset.criteria
    if len(criteria) > 1:
        raise ValueError(
            f"mehestan_scale operates on one criterion at a time, got {sorted(criteria)}; "
            "restrict the set first"
        )

    fits = {u: fit_gbt(cset.restrict(user_id=u), gbt_config) for u in users}
    theta = {u: fits[u].theta for u in users}

    # Anchor: most scored items, ties broken lexicographically.
    anchor = min(users, key=lambda u: (-len(theta[u]), u))

    scales: dict[str, float] = {anchor: 1.0}
    for u in users:
        if u == anchor:
            continue
        votes: list[float] = []
        for v in users:
            if v == u:
                continue
            common = sorted(set(theta[u]) & set(theta[v]))
            ratios: list[float] = []
            for a, b in itertools.combinations(common, 2):
                gap_u = abs(theta[u][a] - theta[u][b])
                gap_v = abs(theta[v][a] - theta[v][b])
                if gap_u > epsilon_pair and gap_v > epsilon_pair:
                    ratios.append(math.log(gap_v / gap_u))
            if ratios:
                votes.append(float(np.median(ratios)))
        scales[u] = math.exp(_aggregate(votes, params.weight, ratio_clip, aggregator))

    translations: dict[str, float] = {anchor: 0.0}
    for u in users:
        if u == anchor:
            continue
        candidates: list[float] = []
        for v in users:
            if v == u:
                continue
            for a in sorted(set(theta[u]) & set(theta[v])):
                candidates.append(scales[v] * theta[v][a] - scales[u] * theta[u][a])
        translations[u] = _aggregate(
            candidates, params.weight, translation_clip, aggregator
        )

    scaled_theta = {
        u: {item: scales[u] * val + translations[u] for item, val in theta[u].items()}
        for u in users
    }
    new_scores = [
        np.clip(
            scaled_theta[c.user_id][c.right_item] - scaled_theta[c.user_id][c.left_item],
            -1.0,
            1.0,
        )
        for c in cset.comparisons
    ]
    affines = [UserAffine(u, scales[u], translations[u]) for u in users]
    scores = [
        IndividualScores(
            u, scaled_theta[u], gbt_config.lam,
            fits[u].converged, fits[u].n_iter, fits[u].grad_norm,
        )
        for u in users
    ]
    return _replace_scores(cset, new_scores, "mehestan"), affines, scores


def write_scaled_comparisons(scaled: ScaledComparisonSet, path: str | Path) -> None:
    """Scaled comparisons CSV: input schema plus a trailing `scaler` column."""
    path = Path(path)
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(COMPARISONS_HEADER + ["scaler"]) + "\n")
        for c in scaled:
            fh.write(
                f"{c.user_id},{c.criterion},{c.left_item},{c.right_item},"
                f"{c.score!r},{scaled.scaler_tag}\n"
            )


def parse_scaled_comparisons(path: str | Path) -> ScaledComparisonSet:
    """Read the scaled comparisons CSV (raw schema plus a `scaler` column)."""
    path = Path(path)
    expected = COMPARISONS_HEADER + ["scaler"]
    comparisons: list[Comparison] = []
    tags: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise ValueError(f"{path}: bad header {header!r}, expected {expected!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise ValueError(
                    f"{path}: line {lineno}: expected 6 columns, got {len(row)}"
                )
            user_id, criterion, left, right, score_text, tag = row
            try:
                score = float(score_text)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: unparsable score {score_text!r}"
                ) from None
            comparisons.append(Comparison(user_id, criterion, left, right, score))
            tags.add(tag)
    if len(tags) > 1:
        raise ValueError(f"{path}: mixed scaler tags {sorted(tags)}")
    tag = tags.pop() if tags else "none"
    return ScaledComparisonSet(tuple(comparisons), scaler_tag=tag)


def write_user_affines(affines: list[UserAffine], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        fh.write("user_id,s,tau\n")
        for a in affines:
            fh.write(f"{a.user_id},{a.s!r},{a.tau!r}\n")
