"""Domain types and closed-form loss formulas for CCP default-fund risk.

Sign convention: a positive portfolio change ``dv`` is a loss. Member index 0
of a :class:`CcpStructure` is always the reporting member, who is assumed to
survive every default scenario.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from ccprisk.errors import DomainError, FundExhaustedError, InfiniteMeanTailError

DAYS_PER_YEAR = 365.0


def days_to_years(days: float) -> float:
    """ACT/365 fixed."""
    return days / DAYS_PER_YEAR


def hazard_from_spread(spread: float, recovery: float) -> float:
    """Credit-triangle intensity ``spread / (1 - recovery)``."""
    if not 0.0 <= recovery < 1.0:
        raise DomainError(f"recovery must lie in [0, 1), got {recovery}")
    if spread < 0.0:
        raise DomainError(f"spread must be non-negative, got {spread}")
    return spread / (1.0 - recovery)


@dataclass(frozen=True)
class ClearingMember:
    id: str
    initial_margin: float
    default_fund: float
    cds_spread: float = 0.0
    recovery: float = 0.4
    hazard: float | None = None

    def __post_init__(self):
        if self.initial_margin < 0 or self.default_fund < 0:
            raise DomainError(f"member {self.id}: collateral must be non-negative")
        if self.initial_margin == 0 and self.default_fund == 0:
            raise DomainError(f"member {self.id}: margin and default fund are both zero")
        if not 0.0 <= self.recovery < 1.0:
            raise DomainError(f"member {self.id}: recovery must lie in [0, 1)")
        if self.cds_spread < 0:
            raise DomainError(f"member {self.id}: negative CDS spread")
        if self.hazard is not None and self.hazard < 0:
            raise DomainError(f"member {self.id}: negative hazard rate")

    @property
    def hazard_rate(self) -> float:
        if self.hazard is not None:
            return self.hazard
        return hazard_from_spread(self.cds_spread, self.recovery)


@dataclass(frozen=True)
class CcpStructure:
    members: tuple[ClearingMember, ...]
    equity: float = 0.0
    liquidation_days: float = 5.0
    recap_days: float = 30.0
    margin_confidence: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if len(self.members) < 2:
            raise DomainError("a CCP needs the reporting member and at least one other")
        ids = [m.id for m in self.members]
        if len(set(ids)) != len(ids):
            raise DomainError("member ids must be unique")
        if self.equity < 0:
            raise DomainError("CCP equity must be non-negative")
        if self.liquidation_days <= 0:
            raise DomainError("liquidation period must be positive")
        if self.recap_days < self.liquidation_days:
            raise DomainError("recapitalisation period must be at least the liquidation period")
        if not 0.0 < self.margin_confidence < 0.5:
            raise DomainError("margin breach probability must lie in (0, 0.5)")

    @property
    def n_others(self) -> int:
        return len(self.members) - 1

    @property
    def total_default_fund(self) -> float:
        return math.fsum(m.default_fund for m in self.members)

    @property
    def recap_years(self) -> float:
        return days_to_years(self.recap_days)

    @property
    def liquidation_years(self) -> float:
        return days_to_years(self.liquidation_days)


@dataclass(frozen=True)
class MarketCalibration:
    """Market parameters shared by all members of a report.

    ``provenance`` records, per parameter, whether it was estimated or pinned.
    """

    wrong_way_factor: float
    breach_probability: float
    pareto_index: float
    contagion_factor: float = 1.0
    provenance: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.wrong_way_factor < 1.0:
            raise DomainError(f"wrong-way factor must be >= 1, got {self.wrong_way_factor}")
        if self.contagion_factor < 1.0:
            raise DomainError(f"contagion factor must be >= 1, got {self.contagion_factor}")
        # zero is allowed so a pinned p_hat = 0 yields a valid zero-charge report
        if not 0.0 <= self.breach_probability < 1.0:
            raise DomainError(f"breach probability must lie in [0, 1), got {self.breach_probability}")
        if self.pareto_index <= 1.0:
            raise InfiniteMeanTailError(f"Pareto index must exceed 1, got {self.pareto_index}")

    @property
    def lgd_tot(self) -> float:
        return self.wrong_way_factor * self.breach_probability / (self.pareto_index - 1.0)

    def to_dict(self) -> dict:
        return {
            "wrong_way_factor": self.wrong_way_factor,
            "contagion_factor": self.contagion_factor,
            "breach_probability": self.breach_probability,
            "pareto_index": self.pareto_index,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MarketCalibration":
        return cls(
            wrong_way_factor=float(d["wrong_way_factor"]),
            breach_probability=float(d["breach_probability"]),
            pareto_index=float(d["pareto_index"]),
            contagion_factor=float(d.get("contagion_factor", 1.0)),
            provenance=dict(d.get("provenance", {})),
        )


@dataclass(frozen=True)
class DiscountCurve:
    rate: float = 0.0

    def discount_factor(self, t: float) -> float:
        return math.exp(-self.rate * t)

    def annuity(self, horizon: float) -> float:
        """``int_0^T exp(-r t) dt``; equals ``T`` at r = 0."""
        x = self.rate * horizon
        if abs(x) < 1e-8:
            # series expansion avoids 0/0 cancellation
            return horizon * (1.0 - x / 2.0 + x * x / 6.0)
        return -math.expm1(-x) / self.rate


@dataclass(frozen=True)
class MemberRow:
    id: str
    hazard: float
    expected_tail_loss: float
    epsilon: float
    exposure: float
    contribution: float


@dataclass(frozen=True)
class RiskReport:
    rows: tuple[MemberRow, ...]
    charge: float
    lgd_tot: float
    charge_fraction: float
    mean_discounted_hazard: float
    horizon: float
    rate: float

    def to_dict(self) -> dict:
        return {
            "members": [vars(r).copy() for r in self.rows],
            "totals": {
                "charge": self.charge,
                "lgd_tot": self.lgd_tot,
                "charge_fraction": self.charge_fraction,
                "mean_discounted_hazard": self.mean_discounted_hazard,
                "horizon_years": self.horizon,
                "rate": self.rate,
            },
        }


def uncollateralised_loss(dv: float, stressed_margin: float, stressed_fund: float) -> float:
    return max(dv - stressed_margin - stressed_fund, 0.0)


def stressed_collateral(member: ClearingMember, w: float) -> tuple[float, float]:
    if w < 0:
        raise DomainError("wrong-way factor must be non-negative")
    return w * member.initial_margin, w * member.default_fund


def _check_defaulted(ccp: CcpStructure, defaulted: Iterable[int]) -> frozenset[int]:
    s = frozenset(defaulted)
    if not s:
        raise DomainError("default scenario must be non-empty")
    if 0 in s:
        raise DomainError("the reporting member (index 0) cannot be in a default scenario")
    if not all(0 < j <= ccp.n_others for j in s):
        raise DomainError(f"scenario indices out of range: {sorted(s)}")
    return s


def allocation_fraction(
    ccp: CcpStructure, defaulted: Iterable[int], default_funds: Sequence[float] | None = None
) -> float:
    """Share of mutualised losses borne by the reporting member.

    ``default_funds`` overrides the roster's contributions, e.g. with stressed
    levels; the fraction is unchanged by a common scaling.
    """
    s = _check_defaulted(ccp, defaulted)
    funds = [m.default_fund for m in ccp.members] if default_funds is None else list(default_funds)
    remaining = math.fsum(funds) - math.fsum(funds[j] for j in s)
    if remaining <= 0:
        raise FundExhaustedError(f"default fund exhausted by scenario {sorted(s)}")
    return funds[0] / remaining


def pareto_tail_prob(x: float, stressed_margin: float, p_hat: float, alpha: float) -> float:
    if stressed_margin <= 0:
        raise DomainError("Pareto scale (stressed margin) must be positive")
    if x < stressed_margin:
        raise DomainError(f"tail model is only valid for x >= M* ({x} < {stressed_margin})")
    if alpha <= 0:
        raise DomainError("Pareto index must be positive")
    if not 0.0 <= p_hat < 1.0:
        raise DomainError("breach probability must lie in [0, 1)")
    return p_hat * (stressed_margin / x) ** alpha


def conditional_expected_tail_loss(member: ClearingMember, cal: MarketCalibration) -> float:
    """Expected loss beyond stressed margin plus fund, given the member defaulted.

    Closed form of ``p_hat * int_{M*+D*}^inf (x - M* - D*) alpha M*^alpha x^-(alpha+1) dx``.
    """
    alpha = cal.pareto_index
    if alpha <= 1.0:
        raise InfiniteMeanTailError(f"Pareto index {alpha} <= 1 has an infinite mean")
    m, d = member.initial_margin, member.default_fund
    if m <= 0:
        raise DomainError(f"member {member.id}: zero initial margin degenerates the Pareto scale")
    total = m + d
    return cal.wrong_way_factor * cal.breach_probability / (alpha - 1.0) * (m / total) ** alpha * total


def member_exposure(
    member: ClearingMember, ccp: CcpStructure, cal: MarketCalibration, epsilon: float = 0.0
) -> float:
    """Per-unit-of-D0 exposure of the reporting member to ``member``'s default."""
    remaining = ccp.total_default_fund - member.default_fund
    if remaining <= 0:
        raise FundExhaustedError(f"member {member.id} holds the whole default fund")
    return conditional_expected_tail_loss(member, cal) / remaining * (1.0 + epsilon)


def total_charge(
    ccp: CcpStructure,
    cal: MarketCalibration,
    epsilon: Sequence[float] | Mapping[str, float] | None = None,
    curve: DiscountCurve = DiscountCurve(),
    horizon: float = 1.0,
    overrides: Mapping[str, MarketCalibration] | None = None,
) -> RiskReport:
    """Discounted expected loss of the reporting member up to ``horizon`` years.

    ``epsilon`` is either one value per non-reporting member (roster order) or
    a map keyed by member id; missing entries default to 0. Hazards are flat,
    so the intensity integral collapses to ``lambda_k * annuity(r, T)``.
    """
    if horizon <= 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    others = ccp.members[1:]
    if epsilon is None:
        eps = [0.0] * len(others)
    elif isinstance(epsilon, Mapping):
        eps = [float(epsilon.get(m.id, 0.0)) for m in others]
    else:
        eps = [float(e) for e in epsilon]
        if len(eps) != len(others):
            raise DomainError(f"expected {len(others)} epsilon values, got {len(eps)}")
    overrides = overrides or {}

    d0 = ccp.members[0].default_fund
    annuity = curve.annuity(horizon)
    rows = []
    for member, e in zip(others, eps):
        mcal = overrides.get(member.id, cal)
        try:
            u = conditional_expected_tail_loss(member, mcal)
            exposure = member_exposure(member, ccp, mcal, e)
        except DomainError as exc:
            raise type(exc)(f"member {member.id}: {exc}") from exc
        lam = member.hazard_rate
        rows.append(MemberRow(member.id, lam, u, e, exposure, d0 * exposure * lam * annuity))

    charge = math.fsum(r.contribution for r in rows)
    mean_hazard = math.fsum(r.hazard for r in rows) / len(rows)
    avg_collateral = math.fsum(m.initial_margin + m.default_fund for m in others) / len(others)
    return RiskReport(
        rows=tuple(rows),
        charge=charge,
        lgd_tot=cal.lgd_tot,
        charge_fraction=charge / avg_collateral,
        mean_discounted_hazard=mean_hazard * annuity / horizon,
        horizon=horizon,
        rate=curve.rate,
    )


class SimplifiedCharge(NamedTuple):
    lgd_tot: float
    charge_fraction: float
    charge: float


def simplified_charge(
    margin: float, fund: float, cal: MarketCalibration, mean_hazard: float, horizon: float = 1.0
) -> SimplifiedCharge:
    """Homogeneous-member approximation valid for D << M and negligible epsilon."""
    if margin < 0 or fund < 0 or mean_hazard < 0 or horizon < 0:
        raise DomainError("inputs must be non-negative")
    if cal.pareto_index <= 1.0:
        raise InfiniteMeanTailError("Pareto index must exceed 1")
    lgd = cal.lgd_tot
    frac = lgd * mean_hazard * horizon
    return SimplifiedCharge(lgd, frac, frac * (margin + fund))
