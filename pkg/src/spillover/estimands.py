"""Direct, indirect, total and overall effects from a two-stage trial.

All contrasts use the *reduction* convention: a positive value means fewer
cases under the second-named condition.  Concretely, for labels ``phi`` and
``psi``::

    direct(psi)        = Ybar(0; psi) - Ybar(1; psi)
    indirect(phi, psi) = Ybar(0; phi) - Ybar(0; psi)
    total(phi, psi)    = Ybar(0; phi) - Ybar(1; psi)
    overall(phi, psi)  = Ybar(phi)    - Ybar(psi)

where each ``Ybar`` is the across-group mean of the group-level rate.  The
"treated minus control" convention for direct effects is the negation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from statistics import NormalDist

import numpy as np

from .data import TrialTable
from .errors import EstimationError

REDUCTION = "reduction"


@dataclass(frozen=True)
class EffectEstimate:
    contrast: str
    point: float
    variance: float | None = None
    ci: tuple[float, float] | None = None
    level: float | None = None
    convention: str = REDUCTION
    units: str = "rate"
    warning: str | None = None

    def __post_init__(self):
        if self.variance is not None and self.variance < 0:
            raise ValueError("variance must be nonnegative")
        if self.ci is not None and not self.ci[0] <= self.point <= self.ci[1]:
            raise ValueError("confidence interval does not bracket the point estimate")

    def scaled(self, factor, units):
        """Rescale, e.g. ``scaled(1000, "per1000")``; variance scales by factor**2."""
        return replace(
            self,
            point=self.point * factor,
            variance=None if self.variance is None else self.variance * factor**2,
            ci=None if self.ci is None else (self.ci[0] * factor, self.ci[1] * factor),
            units=units,
        )

    def with_ci(self, level=0.95):
        if self.variance is None:
            return self
        half = NormalDist().inv_cdf(0.5 + level / 2) * np.sqrt(self.variance)
        return replace(self, ci=(self.point - half, self.point + half), level=level)


@dataclass(frozen=True)
class GroupRates:
    """Per-group empirical arm means for one allocation label."""

    label: str
    rate_treated: np.ndarray
    rate_control: np.ndarray
    rate_overall: np.ndarray
    coverage: np.ndarray

    @property
    def n_groups(self):
        return len(self.rate_overall)


def group_rates(trial: TrialTable, label) -> GroupRates:
    groups = trial.with_label(label)
    if not groups:
        raise EstimationError(f"no groups with label {label!r}")
    nt = np.array([g.n_treated for g in groups], dtype=float)
    ct = np.array([g.cases_treated for g in groups], dtype=float)
    nc = np.array([g.n_control for g in groups], dtype=float)
    cc = np.array([g.cases_control for g in groups], dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return GroupRates(
            label=label,
            rate_treated=np.where(nt > 0, ct / nt, np.nan),
            rate_control=np.where(nc > 0, cc / nc, np.nan),
            rate_overall=(ct + cc) / (nt + nc),
            coverage=nt / (nt + nc),
        )


def _arm(rates: GroupRates, arm):
    values = getattr(rates, arm)
    if np.isnan(values).any():
        raise EstimationError(
            f"label {rates.label!r}: a group has an empty "
            f"{'treated' if arm == 'rate_treated' else 'control'} arm")
    return values


def _between_group_contrast(name, a, b):
    """mean(a) - mean(b) with variance s2_a/C_a + s2_b/C_b."""
    point = float(a.mean() - b.mean())
    if len(a) < 2 or len(b) < 2:
        msg = f"{name}: a label has a single group; variance undefined"
        warnings.warn(msg, stacklevel=3)
        return EffectEstimate(name, point, warning=msg)
    var = float(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    return EffectEstimate(name, point, variance=var)


def direct_effect(trial: TrialTable, label) -> EffectEstimate:
    """Mean over ``label`` groups of (control rate - treated rate).

    No variance is attached: the between-group sample variance of per-group
    direct effects does not reproduce published direct-effect variances, which
    include within-group terms.
    """
    r = group_rates(trial, label)
    d = _arm(r, "rate_control") - _arm(r, "rate_treated")
    return EffectEstimate(f"direct@{label}", float(d.mean()))


def indirect_effect(trial: TrialTable, phi, psi) -> EffectEstimate:
    a, b = group_rates(trial, phi), group_rates(trial, psi)
    return _between_group_contrast(
        f"indirect({phi},{psi})", _arm(a, "rate_control"), _arm(b, "rate_control"))


def total_effect(trial: TrialTable, phi, psi) -> EffectEstimate:
    a, b = group_rates(trial, phi), group_rates(trial, psi)
    return _between_group_contrast(
        f"total({phi},{psi})", _arm(a, "rate_control"), _arm(b, "rate_treated"))


def overall_effect(trial: TrialTable, phi, psi) -> EffectEstimate:
    a, b = group_rates(trial, phi), group_rates(trial, psi)
    return _between_group_contrast(f"overall({phi},{psi})", a.rate_overall, b.rate_overall)


@dataclass(frozen=True)
class Decomposition:
    """Residuals of the total and overall decomposition identities (rate scale).

    ``residual_total = total - (direct(psi) + indirect)`` is zero up to
    rounding for every table.  ``residual_overall = overall - (indirect +
    direct(psi)*cov_psi - direct(phi)*cov_phi)`` is zero when coverage is
    constant within each label and is only reported otherwise.
    """

    total: float
    direct_phi: float
    direct_psi: float
    indirect: float
    overall: float
    coverage_phi: float
    coverage_psi: float
    residual_total: float
    residual_overall: float


def decomposition_report(trial: TrialTable, phi, psi) -> Decomposition:
    d_phi = direct_effect(trial, phi).point
    d_psi = direct_effect(trial, psi).point
    ind = indirect_effect_point(trial, phi, psi)
    tot = float(group_rates(trial, phi).rate_control.mean() - group_rates(trial, psi).rate_treated.mean())
    ovr = float(group_rates(trial, phi).rate_overall.mean() - group_rates(trial, psi).rate_overall.mean())
    c_phi = float(group_rates(trial, phi).coverage.mean())
    c_psi = float(group_rates(trial, psi).coverage.mean())
    return Decomposition(
        total=tot, direct_phi=d_phi, direct_psi=d_psi, indirect=ind, overall=ovr,
        coverage_phi=c_phi, coverage_psi=c_psi,
        residual_total=tot - (d_psi + ind),
        residual_overall=ovr - (ind + d_psi * c_psi - d_phi * c_phi),
    )


def indirect_effect_point(trial, phi, psi):
    a, b = group_rates(trial, phi), group_rates(trial, psi)
    return float(_arm(a, "rate_control").mean() - _arm(b, "rate_control").mean())


def all_effects(trial: TrialTable, phi, psi, level=0.95):
    """The five standard contrasts for a pair of labels, with Wald intervals."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        effects = [
            direct_effect(trial, phi),
            direct_effect(trial, psi),
            indirect_effect(trial, phi, psi),
            total_effect(trial, phi, psi),
            overall_effect(trial, phi, psi),
        ]
    return [e.with_ci(level) for e in effects]
