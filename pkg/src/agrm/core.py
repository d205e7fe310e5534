"""Arithmetic graded response model over an ordinal grade scale.

A response with ability ``theta`` to an item with base difficulty ``beta1``,
arithmetic step ``gamma``, discrimination ``alpha`` and scaling constant ``d``
is graded on ``1..k``.  The cumulative curves sit at equally spaced thresholds

    beta_m = beta1 + (m - 1) * gamma,    m = 1 .. k-1,

and grade ``m`` occupies the band between the cumulative curves at
``beta_{m-1}`` and ``beta_m`` (grade 1 sits below ``beta_1``, grade ``k``
above ``beta_{k-1}``).  Written against the base threshold this means grade
``m``'s lower curve is at ``beta1 + (m - 2) * gamma``.  Whenever

    gamma > 2 * ln(2) / (d * alpha)

the grade distribution is unimodal in theta; that guarantee is the reason for
the arithmetic threshold layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

__all__ = [
    "AgrmParams",
    "GeneralGrmParams",
    "ProbVector",
    "sigmoid",
    "cumulative_prob",
    "category_probs",
    "agrm_probs",
    "gamma_threshold",
    "peak_ability",
    "boundary_thetas",
    "modal_grade",
    "is_unimodal",
    "expected_score",
    "rescale_score",
]

# Entries may undershoot 0 or overshoot 1 by a few ulp when sigmoid
# differences are taken near saturation; anything beyond this is a bug.
_ENTRY_SLACK = 1e-15


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


def _require_positive(name: str, value: float) -> None:
    _require_finite(name, value)
    if value <= 0.0:
        raise ValueError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class AgrmParams:
    """Item/response parameters with arithmetically spaced thresholds."""

    theta: float
    beta1: float
    gamma: float
    d: float = 1.7
    alpha: float = 1.0
    k: int = 5

    def __post_init__(self) -> None:
        _require_finite("theta", self.theta)
        _require_finite("beta1", self.beta1)
        _require_finite("gamma", self.gamma)
        _require_positive("d", self.d)
        _require_positive("alpha", self.alpha)
        if not isinstance(self.k, int) or self.k < 2:
            raise ValueError(f"k must be an integer >= 2, got {self.k!r}")

    def thresholds(self) -> list[float]:
        """The k-1 cumulative thresholds beta1 + (m - 1) * gamma."""
        return [self.beta1 + m * self.gamma for m in range(self.k - 1)]

    def to_general(self) -> "GeneralGrmParams":
        return GeneralGrmParams(
            theta=self.theta,
            thresholds=tuple(self.thresholds()),
            d=self.d,
            discrimination=self.alpha,
        )


@dataclass(frozen=True)
class GeneralGrmParams:
    """Graded response parameters with free (non-decreasing) thresholds."""

    theta: float
    thresholds: tuple[float, ...]
    d: float = 1.7
    discrimination: float = 1.0

    def __post_init__(self) -> None:
        _require_finite("theta", self.theta)
        _require_positive("d", self.d)
        _require_positive("discrimination", self.discrimination)
        if len(self.thresholds) < 1:
            raise ValueError("need at least one threshold")
        for b in self.thresholds:
            _require_finite("threshold", b)
        for lo, hi in zip(self.thresholds, self.thresholds[1:]):
            if hi < lo:
                raise ValueError(f"thresholds must be non-decreasing, got {self.thresholds!r}")

    @property
    def k(self) -> int:
        return len(self.thresholds) + 1


class ProbVector(Sequence[float]):
    """Probability mass over grades 1..k, validated at construction.

    Entries must lie in [0, 1] (up to float slack) and sum to 1 within
    ``tol``; construction fails otherwise, so downstream code never sees an
    unnormalized vector.
    """

    __slots__ = ("_p",)

    def __init__(self, values: Sequence[float], tol: float = 1e-12):
        p = tuple(float(v) for v in values)
        if len(p) < 2:
            raise ValueError("need at least two grades")
        for v in p:
            if not math.isfinite(v) or v < -_ENTRY_SLACK or v > 1.0 + _ENTRY_SLACK:
                raise ValueError(f"entry {v!r} outside [0, 1]")
        total = math.fsum(p)
        if abs(total - 1.0) > tol:
            raise ValueError(f"mass sums to {total!r}, not 1")
        self._p = p

    def __len__(self) -> int:
        return len(self._p)

    def __getitem__(self, index):
        return self._p[index]

    def __iter__(self) -> Iterator[float]:
        return iter(self._p)

    def __repr__(self) -> str:
        return f"ProbVector({list(self._p)!r})"


Params = Union[AgrmParams, GeneralGrmParams]


def sigmoid(x: float) -> float:
    """Logistic function 1 / (1 + e^-x), safe against overflow at both tails."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softplus(x: float) -> float:
    """log(1 + e^x) without overflow."""
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _log_expm1(g: float) -> float:
    """log(e^g - 1) for g > 0; approaches g once e^-g is negligible."""
    if g > 700.0:
        return g
    return math.log(math.expm1(g))


def _band_prob(z: float, g: float) -> float:
    """Mass between cumulative curves a distance g apart: sigma(z) - sigma(z - g).

    Evaluated through the factored form
        phi * (e^g - 1) / ((1 + phi)(1 + phi e^g)),   phi = e^-z,
    which never cancels.  Outside the comfortable range the same expression is
    taken in log space so neither e^g nor phi can overflow.
    """
    if g == 0.0:
        return 0.0
    if g <= 30.0 and abs(z) <= 30.0:
        phi = math.exp(-z)
        em1 = math.expm1(g)
        return phi * em1 / ((1.0 + phi) * (1.0 + phi * (em1 + 1.0)))
    return math.exp(_log_expm1(g) - _softplus(z) - _softplus(g - z))


def _threshold(p: Params, m: int) -> float:
    n = p.k - 1
    if not 1 <= m <= n:
        raise ValueError(f"threshold index must be in [1, {n}], got {m}")
    if isinstance(p, AgrmParams):
        return p.beta1 + (m - 1) * p.gamma
    return p.thresholds[m - 1]


def _scale(p: Params) -> float:
    if isinstance(p, AgrmParams):
        return p.d * p.alpha
    return p.d * p.discrimination


def cumulative_prob(p: Params, m: int) -> float:
    """P(grade > m) = sigma(d * a * (theta - beta_m)) for m in 1..k-1."""
    return sigmoid(_scale(p) * (p.theta - _threshold(p, m)))


def category_probs(p: GeneralGrmParams) -> ProbVector:
    """Per-grade mass as adjacent differences of the cumulative curves."""
    c = p.d * p.discrimination
    s = [sigmoid(c * (p.theta - b)) for b in p.thresholds]
    out = [1.0 - s[0]]
    out.extend(s[i - 1] - s[i] for i in range(1, len(s)))
    out.append(s[-1])
    return ProbVector(out)


def agrm_probs(p: AgrmParams) -> ProbVector:
    """Per-grade mass under arithmetic thresholds, stable at any spacing.

    Middle grades use the factored band form; the two edge grades are single
    logistic evaluations.  Requires gamma >= 0 (decreasing thresholds have no
    coherent grade bands).
    """
    if p.gamma < 0.0:
        raise ValueError(f"gamma must be >= 0, got {p.gamma!r}")
    c = p.d * p.alpha
    g = c * p.gamma
    out = [sigmoid(-c * (p.theta - p.beta1))]
    for m in range(2, p.k):
        z = c * (p.theta - (p.beta1 + (m - 2) * p.gamma))
        out.append(_band_prob(z, g))
    out.append(sigmoid(c * (p.theta - (p.beta1 + (p.k - 2) * p.gamma))))
    return ProbVector(out)


def gamma_threshold(d: float = 1.7, alpha: float = 1.0) -> float:
    """Smallest threshold spacing that guarantees unimodality: 2 ln2 / (d * alpha)."""
    _require_positive("d", d)
    _require_positive("alpha", alpha)
    return 2.0 * math.log(2.0) / (d * alpha)


def peak_ability(p: AgrmParams, m: int) -> float:
    """Ability at which interior grade m is most likely: (beta_{m-1} + beta_m) / 2.

    Defined for 2 <= m <= k-1; the edge grades peak at the ends of the scale
    rather than at a finite ability.
    """
    if not 2 <= m <= p.k - 1:
        raise ValueError(f"interior grade index must be in [2, {p.k - 1}], got {m}")
    return p.beta1 + (m - 1.5) * p.gamma


def boundary_thetas(p: AgrmParams) -> tuple[float, float]:
    """Abilities where the edge grades hand over to their neighbors.

    Returns (theta1, theta2) with P_1(theta1) = P_2(theta1) and
    P_{k-1}(theta2) = P_k(theta2):

        theta1 = beta1    - ln(1 - 2 e^{-d a gamma}) / (d a)
        theta2 = beta_{k-2} + ln(e^{d a gamma} - 2) / (d a)

    Both logarithms share the argument 1 - 2 e^{-d a gamma} (the second after
    factoring out e^{d a gamma}), so both exist exactly when
    gamma > ln2 / (d * alpha).  Needs k >= 3: with only one threshold the two
    stated equalities are the same crossing at beta1.
    """
    if p.k < 3:
        raise ValueError("boundary crossings are distinct only for k >= 3")
    c = p.d * p.alpha
    g = c * p.gamma
    t = 2.0 * math.exp(-g)
    if t >= 1.0:
        raise ValueError(
            "log argument 1 - 2*exp(-d*alpha*gamma) is not positive; "
            f"need gamma > ln(2)/(d*alpha) = {math.log(2.0) / c!r}, got {p.gamma!r}"
        )
    log_arg = math.log1p(-t)
    theta1 = p.beta1 - log_arg / c
    theta2 = (p.beta1 + (p.k - 3) * p.gamma) + (g + log_arg) / c
    return theta1, theta2


def modal_grade(probs: Sequence[float]) -> int:
    """1-based index of the largest mass; exact ties go to the lower grade."""
    v = list(probs)
    if not v:
        raise ValueError("empty probability vector")
    return v.index(max(v)) + 1


def is_unimodal(probs: Sequence[float], tol: float = 1e-12) -> bool:
    """True when the vector rises to a single peak and falls afterwards.

    Comparisons carry a slack of ``tol``: dips on the rising side and bumps on
    the falling side no larger than ``tol`` still count as monotone, so
    saturated tail entries that agree to float precision do not read as extra
    modes.  The peak itself may be a plateau of width two (an exact crossing),
    never wider.
    """
    v = list(probs)
    if len(v) < 2:
        raise ValueError("need at least two grades")
    if tol < 0.0:
        raise ValueError("tol must be >= 0")
    vmax = max(v)
    peak = v.index(vmax)
    for i in range(peak):
        if v[i + 1] - v[i] < -tol:
            return False
    for i in range(peak, len(v) - 1):
        if v[i + 1] - v[i] > tol:
            return False
    plateau = 1
    while peak - plateau >= 0 and v[peak - plateau] >= vmax - tol:
        plateau += 1
    j = peak + 1
    while j < len(v) and v[j] >= vmax - tol:
        plateau += 1
        j += 1
    return plateau <= 2


def expected_score(probs: Sequence[float]) -> float:
    """Mean grade sum_m m * P_m over the 1-based grade scale."""
    v = list(probs)
    if not v:
        raise ValueError("empty probability vector")
    return math.fsum((i + 1) * p for i, p in enumerate(v))


def rescale_score(q: float, k: int) -> float:
    """Affine map of a mean grade from [1, k] onto the [0, 5] rating scale."""
    if not isinstance(k, int) or k < 2:
        raise ValueError(f"k must be an integer >= 2, got {k!r}")
    _require_finite("q", q)
    # the multiply can overshoot an endpoint by an ulp; the contract is [0, 5]
    return min(5.0, max(0.0, (q - 1.0) * 5.0 / (k - 1.0)))
