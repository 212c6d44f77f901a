"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CcpRiskError(Exception):
    exit_code = 3


class InputError(CcpRiskError, ValueError):
    """Unparseable or structurally invalid input files."""

    exit_code = 2


class DomainError(CcpRiskError, ValueError):
    exit_code = 3


class InfiniteMeanTailError(DomainError):
    pass


class FundExhaustedError(DomainError):
    pass


class TailTooThinError(DomainError):
    pass


class ExhaustionRateError(CcpRiskError):
    """Too many Monte Carlo scenarios wiped out the default fund."""

    exit_code = 4
