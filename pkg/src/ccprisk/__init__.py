"""Expected loss on collateral posted to a central counterparty."""

from ccprisk.core_model import (
    CcpStructure,
    ClearingMember,
    DiscountCurve,
    MarketCalibration,
    RiskReport,
    allocation_fraction,
    conditional_expected_tail_loss,
    hazard_from_spread,
    member_exposure,
    pareto_tail_prob,
    simplified_charge,
    stressed_collateral,
    total_charge,
    uncollateralised_loss,
)
from ccprisk.errors import (
    CcpRiskError,
    DomainError,
    ExhaustionRateError,
    FundExhaustedError,
    InfiniteMeanTailError,
    InputError,
    TailTooThinError,
)

__version__ = "0.1.0"
