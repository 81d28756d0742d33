"""Group variable importance: drop in cross-validated R² when a covariate group is removed."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .association import AssociationEstimate, estimate_association, fold_covariance
from .data import Dataset
from .errors import EmptyComplement


@dataclass(frozen=True)
class ImportanceEstimate:
    group: tuple[int, ...]
    delta: float
    se: float
    ci_lower: float
    ci_upper: float
    p_value: float
    full: AssociationEstimate = field(repr=False)
    reduced: AssociationEstimate = field(repr=False)
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "group": list(self.group),
            "delta": self.delta,
            "se": self.se,
            "ci": [self.ci_lower, self.ci_upper],
            "p_value": self.p_value,
            "r2_full": self.full.r2,
            "r2_reduced": self.reduced.r2,
            "reduced": self.reduced.to_dict(),
        }


def importance_from_estimates(full: AssociationEstimate, reduced: AssociationEstimate,
                              group: Sequence[int] = (), alpha: float = 0.05,
                              independent: bool = False, label: str = "") -> ImportanceEstimate:
    """Delta-method inference for ``full.r2 - reduced.r2``.

    Both runs must share their outer folds. The four per-observation
    influence contributions (model and null MSE of each run) are stacked
    and their fold-averaged covariance is propagated through
    ``exp(log_ratio_reduced) - exp(log_ratio_full)``. ``independent=True``
    drops the cross-run covariance.
    """
    cf, cr = full.curves, reduced.curves
    if not np.array_equal(cf.folds.fold_of, cr.folds.fold_of):
        raise ValueError("full and reduced estimates must use identical outer folds")
    I = np.column_stack([cf.d_model, cf.d_null, cr.d_model, cr.d_null])
    S = fold_covariance(cf.folds, I)
    if independent:
        S[:2, 2:] = 0.0
        S[2:, :2] = 0.0
    ef = math.exp(full.log_ratio)
    er = math.exp(reduced.log_ratio)
    g = np.concatenate([-ef * cf.gradient, er * cr.gradient])
    var = max(float(g @ S @ g), 0.0)
    se = math.sqrt(var / full.n)
    delta = full.r2 - reduced.r2
    z = float(ndtri(1.0 - alpha / 2.0))
    if se > 0:
        p = float(2.0 * ndtr(-abs(delta) / se))
    else:
        p = 1.0 if delta == 0 else 0.0
    return ImportanceEstimate(tuple(int(d) for d in group), delta, se, delta - z * se, delta + z * se,
                              p, full, reduced, label)


def estimate_importance(specs: Sequence, data: Dataset, group: Sequence[int], K: int = 10,
                        K_circ: int | None = None, K_star: int | None = None, seed: int = 0,
                        reuse: bool = False, *, alpha: float = 0.05, independent: bool = False,
                        full: AssociationEstimate | None = None, label: str = "",
                        **kwargs) -> ImportanceEstimate:
    """Importance of covariate columns ``group`` (0-based).

    The reduced run drops the group and is driven by the same seed, so both
    runs see identical fold assignments. A precomputed ``full`` estimate
    (same settings) can be passed to avoid refitting it.
    """
    group = sorted(set(int(g) for g in group))
    if not group or any(g < 0 or g >= data.D for g in group):
        raise ValueError(f"group must be a nonempty subset of 0..{data.D - 1}")
    if len(group) == data.D:
        raise EmptyComplement("removing every covariate leaves nothing to predict from")
    if full is None:
        full = estimate_association(specs, data, K, K_circ, K_star, seed, reuse, alpha=alpha, **kwargs)
    reduced = estimate_association(specs, data.drop_covariates(group), K, K_circ, K_star, seed, reuse,
                                   alpha=alpha, **kwargs)
    return importance_from_estimates(full, reduced, group, alpha, independent, label)
