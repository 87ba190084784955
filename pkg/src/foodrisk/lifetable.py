"""Gompertz-Makeham life tables matched to a target life expectancy.

Hazard ``mu(x) = gamma0 + alpha * exp(beta * x)`` with ``gamma0`` and ``beta``
fixed; ``alpha`` is found by bisection so that the life expectancy at birth
equals the target. Survival ratios are returned for the 21 five-year groups
used by the cohort projection (0-4, ..., 95-99, 100+).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import BracketError, ValidationError

GAMMA0 = 0.001
BETA = 0.09
N_GROUPS = 21
GROUP_WIDTH = 5
E0_RANGE = (20.0, 110.0)
E0_TOL = 1e-6

SEXES = ("F", "M")

# Bisection runs on log(alpha).
_LOG_ALPHA_LO = np.log(1e-14)
_LOG_ALPHA_HI = np.log(20.0)
_BISECT_STEPS = 120

# Quadrature: Gauss-Legendre inside every 5-year interval up to _MAX_AGE.
_MAX_AGE = 200
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _interval_nodes():
    starts = np.arange(0, _MAX_AGE, GROUP_WIDTH, dtype=float)
    half = GROUP_WIDTH / 2.0
    ages = starts[:, None] + half * (_GL_NODES[None, :] + 1.0)
    weights = np.broadcast_to(half * _GL_WEIGHTS, ages.shape)
    return ages, np.log(weights)


_QUAD_AGES, _QUAD_LOGW = _interval_nodes()


def log_survival(x, alpha, gamma0=GAMMA0, beta=BETA):
    """log l(x) for the Gompertz-Makeham hazard (l(0) = 1)."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    return -gamma0 * x - (alpha / beta) * np.expm1(beta * x)


def e0_from_alpha(alpha, gamma0=GAMMA0, beta=BETA):
    """Closed-form life expectancy at birth.

    With ``s = gamma0/beta`` and ``c = alpha/beta``,
    ``e0 = (1 - exp(c) c**s Gamma(1-s, c)) / gamma0``.
    """
    alpha = np.asarray(alpha, dtype=float)
    s = gamma0 / beta
    c = alpha / beta
    log_upper = special.gammaln(1.0 - s) + np.log(special.gammaincc(1.0 - s, c))
    return -np.expm1(c + s * np.log(c) + log_upper) / gamma0


def solve_alpha(e0_target, gamma0=GAMMA0, beta=BETA):
    """Vectorised bisection for the Gompertz level matching ``e0_target``."""
    target = np.atleast_1d(np.asarray(e0_target, dtype=float))
    if not np.all(np.isfinite(target)):
        raise ValidationError("life expectancy target must be finite")
    lo = np.full(target.shape, _LOG_ALPHA_LO)
    hi = np.full(target.shape, _LOG_ALPHA_HI)
    e_lo = e0_from_alpha(np.exp(lo), gamma0, beta)
    e_hi = e0_from_alpha(np.exp(hi), gamma0, beta)
    bad = (target > e_lo) | (target < e_hi)
    if bad.any():
        t = target[bad][0]
        raise BracketError(
            f"e0 target {t:g} outside achievable range [{e_hi[0]:.6g}, {e_lo[0]:.6g}] "
            f"for gamma0={gamma0}, beta={beta}"
        )
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        e_mid = e0_from_alpha(np.exp(mid), gamma0, beta)
        # e0 decreases in alpha
        above = e_mid > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(hi - lo < 1e-15):
            break
    alpha = np.exp(0.5 * (lo + hi))
    err = np.abs(e0_from_alpha(alpha, gamma0, beta) - target)
    if np.any(err > E0_TOL):
        raise BracketError(f"bisection did not reach e0 tolerance (max error {err.max():.3g})")
    return alpha


def _log_person_years(alpha, gamma0=GAMMA0, beta=BETA):
    """log of 5Lx for every 5-year interval up to the quadrature cut-off."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    logs = log_survival(_QUAD_AGES[None], alpha[:, None, None], gamma0, beta)
    return special.logsumexp(logs + _QUAD_LOGW[None], axis=2)


@dataclass(frozen=True)
class LifeTable:
    sex: str
    e0_target: float
    alpha: float
    ages: np.ndarray            # group start ages 0, 5, ..., 100
    lx: np.ndarray              # survivors at exact group start ages
    person_years: np.ndarray    # 5Lx for groups 0-4 .. 95-99, then T100 for 100+
    survival: np.ndarray        # cohort survival ratios, one per group
    birth_survival: float       # births over a period surviving to 0-4

    @property
    def e0(self) -> float:
        """Life expectancy implied by the tabulated person-years."""
        return float(np.sum(self.person_years))


def survival_ratios(e0_target, gamma0=GAMMA0, beta=BETA):
    """Batch version: ``(alpha, ratios[n, 21], birth_survival[n], person_years[n, 21])``.

    Ratio ``k < 19`` is ``5L(k+1) / 5Lk``; the last two groups share
    ``T100 / T95`` (everyone aged 95+ survives into 100+).
    """
    alpha = solve_alpha(e0_target, gamma0, beta)
    log_l = _log_person_years(alpha, gamma0, beta)
    n_closed = N_GROUPS - 1
    log_t100 = special.logsumexp(log_l[:, n_closed:], axis=1)
    log_t95 = special.logsumexp(log_l[:, n_closed - 1:], axis=1)
    ratios = np.empty((len(alpha), N_GROUPS))
    ratios[:, : n_closed - 1] = np.exp(log_l[:, 1:n_closed] - log_l[:, : n_closed - 1])
    ratios[:, n_closed - 1] = np.exp(log_t100 - log_t95)
    ratios[:, n_closed] = ratios[:, n_closed - 1]
    tiny = np.finfo(float).tiny
    ratios = np.clip(ratios, tiny, 1.0)
    birth = np.clip(np.exp(log_l[:, 0]) / GROUP_WIDTH, tiny, 1.0)
    person_years = np.empty((len(alpha), N_GROUPS))
    person_years[:, :n_closed] = np.exp(log_l[:, :n_closed])
    person_years[:, n_closed] = np.exp(log_t100)
    return alpha, ratios, birth, person_years


def life_table_from_e0(e0_target: float, sex: str = "F", gamma0=GAMMA0, beta=BETA) -> LifeTable:
    """Life table whose implied e0 matches ``e0_target`` within 1e-6 years.

    The same hazard shape is used for both sexes; sex only labels the table.
    """
    if sex not in SEXES:
        raise ValidationError(f"sex must be one of {SEXES}, got {sex!r}")
    e0_target = float(e0_target)
    if not np.isfinite(e0_target):
        raise ValidationError("life expectancy target must be finite")
    if not E0_RANGE[0] <= e0_target <= E0_RANGE[1]:
        raise ValidationError(f"e0 target {e0_target} outside {E0_RANGE}")
    alpha, ratios, birth, person_years = survival_ratios(e0_target, gamma0, beta)
    ages = np.arange(0, N_GROUPS * GROUP_WIDTH, GROUP_WIDTH, dtype=float)
    lx = np.exp(log_survival(ages, alpha[0], gamma0, beta))
    return LifeTable(
        sex=sex,
        e0_target=e0_target,
        alpha=float(alpha[0]),
        ages=ages,
        lx=lx,
        person_years=person_years[0],
        survival=ratios[0],
        birth_survival=float(birth[0]),
    )
