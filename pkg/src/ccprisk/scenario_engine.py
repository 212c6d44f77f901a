"""Multi-default correction term under a one-factor Gaussian copula.

Within one recapitalisation period, member ``j`` defaults iff
``sqrt(rho) Z + sqrt(1 - rho) e_j <= Phi^-1(P_j)`` with
``P_j = 1 - exp(-lambda_j * dr)``. For a defaulted member ``k`` the scenario
``s`` amplifies the reporting member's allocation by ``B_k(s)``; the
correction is ``eps_k = E[1{k in s} B_k(s)] / P_k``.

Two evaluators are provided: seeded Monte Carlo and exact enumeration of all
non-empty scenarios, integrating over ``Z`` by quadrature. The Monte Carlo
draws ``Z`` from a shifted normal and reweights by the likelihood ratio, so
that the rare joint defaults driving ``eps`` are sampled often.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri, roots_hermitenorm

from ccprisk.core_model import CcpStructure, ClearingMember
from ccprisk.errors import DomainError, ExhaustionRateError, FundExhaustedError

log = logging.getLogger(__name__)

MAX_EXACT_MEMBERS = 20
MAX_EXHAUSTION_RATE = 1e-3
# samples per seeded substream; fixed so results do not depend on worker count
CHUNK_SIZE = 1 << 17
_FUND_TOL = 1e-12


@dataclass(frozen=True)
class ScenarioEngineConfig:
    rho: float = 0.0
    recap_days: float | None = None
    mc_samples: int = 2_000_000
    rng_seed: int = 0
    mode: Literal["monte_carlo", "exact_enumeration"] = "monte_carlo"
    quadrature_points: int = 64
    quadrature_rule: Literal["legendre", "hermite"] = "legendre"
    antithetic: bool = True
    # mean of the sampling density for Z; None picks one automatically, 0 disables
    factor_shift: float | None = None
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise DomainError(f"copula correlation must lie in [0, 1), got {self.rho}")
        if self.mode not in ("monte_carlo", "exact_enumeration"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.mode == "monte_carlo" and self.mc_samples < 10_000:
            raise DomainError("Monte Carlo needs at least 10^4 samples")
        if self.quadrature_rule not in ("legendre", "hermite"):
            raise DomainError(f"unknown quadrature rule {self.quadrature_rule!r}")
        if self.recap_days is not None and self.recap_days <= 0:
            raise DomainError("recapitalisation period must be positive")


@dataclass(frozen=True)
class DefaultScenario:
    defaulted: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "defaulted", frozenset(self.defaulted))
        if not self.defaulted:
            raise DomainError("a default scenario needs at least one default")
        if 0 in self.defaulted:
            raise DomainError("the reporting member never defaults")


@dataclass(frozen=True)
class EpsilonResult:
    """Correction terms for members ``1..N`` in roster order."""

    member_ids: tuple[str, ...]
    epsilon: np.ndarray
    std_error: np.ndarray | None
    marginal_prob: np.ndarray
    exhaustion_prob: float
    mode: str
    n_samples: int = 0
    default_frequency: np.ndarray | None = None
    # average of eps over members with positive hazard, and its standard error
    pooled_std_error: float | None = None

    @property
    def pooled_epsilon(self) -> float:
        live = self.marginal_prob > 0
        return float(self.epsilon[live].mean()) if live.any() else 0.0

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "n_samples": self.n_samples,
            "exhaustion_prob": float(self.exhaustion_prob),
            "pooled_epsilon": self.pooled_epsilon,
            "members": [],
        }
        if self.pooled_std_error is not None:
            out["pooled_std_error"] = self.pooled_std_error
        for i, mid in enumerate(self.member_ids):
            row = {
                "id": mid,
                "epsilon": float(self.epsilon[i]),
                "marginal_prob": float(self.marginal_prob[i]),
            }
            if self.std_error is not None:
                row["std_error"] = float(self.std_error[i])
            out["members"].append(row)
        return out


def period_default_probs(ccp: CcpStructure, recap_days: float | None = None) -> np.ndarray:
    """Marginal default probabilities of members ``1..N`` over one period."""
    dr = (ccp.recap_days if recap_days is None else recap_days) / 365.0
    lam = np.array([m.hazard_rate for m in ccp.members[1:]])
    return -np.expm1(-lam * dr)


def conditional_default_probs(probs: np.ndarray, rho: float, z: np.ndarray) -> np.ndarray:
    """``p_j(z)`` with shape ``(len(z), len(probs))``."""
    thresholds = ndtri(probs)
    if rho == 0.0:
        return np.broadcast_to(probs, (len(z), len(probs))).copy()
    return ndtr((thresholds[None, :] - math.sqrt(rho) * z[:, None]) / math.sqrt(1.0 - rho))


def _conditional_log_probs(probs: np.ndarray, rho: float, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``log p_j(z)`` and ``log(1 - p_j(z))``, both finite for every node."""
    if rho == 0.0:
        shape = (len(z), len(probs))
        return np.broadcast_to(np.log(probs), shape), np.broadcast_to(np.log1p(-probs), shape)
    arg = (ndtri(probs)[None, :] - math.sqrt(rho) * z[:, None]) / math.sqrt(1.0 - rho)
    return log_ndtr(arg), log_ndtr(-arg)


def joint_default_sample(
    members: Sequence[ClearingMember], rho: float, recap_days: float, rng: np.random.Generator
) -> DefaultScenario | None:
    """One copula draw for the non-reporting ``members``; indices are 1-based.

    Returns ``None`` when nobody defaults.
    """
    lam = np.array([m.hazard_rate for m in members])
    probs = -np.expm1(-lam * recap_days / 365.0)
    z = rng.standard_normal()
    e = rng.standard_normal(len(members))
    x = math.sqrt(rho) * z + math.sqrt(1.0 - rho) * e
    hit = np.flatnonzero(x <= ndtri(probs))
    if hit.size == 0:
        return None
    return DefaultScenario(frozenset(int(i) + 1 for i in hit))


def loss_amplifier(ccp: CcpStructure, s: DefaultScenario | Sequence[int], k: int) -> float:
    """``B_k(s)``: extra allocation from the other defaulters in ``s``."""
    defaulted = s.defaulted if isinstance(s, DefaultScenario) else frozenset(s)
    if k not in defaulted:
        raise DomainError(f"member {k} is not in scenario {sorted(defaulted)}")
    funds = [m.default_fund for m in ccp.members]
    in_s = math.fsum(funds[j] for j in defaulted)
    remaining = ccp.total_default_fund - in_s
    if remaining <= _FUND_TOL * ccp.total_default_fund:
        raise FundExhaustedError(f"scenario {sorted(defaulted)} exhausts the default fund")
    return (in_s - funds[k]) / remaining


def multi_default_shift(probs: np.ndarray, rho: float) -> float:
    """Mode of ``phi(z) P(at least two defaults | z)``, used as the sampling mean of Z."""
    if rho == 0.0 or probs.size < 2:
        return 0.0
    z = np.linspace(-12.0, 0.0, 1201)
    log_p, log_q = _conditional_log_probs(probs, rho, z)
    p = np.exp(log_p)
    s1 = p.sum(axis=1)
    e2 = 0.5 * (s1 * s1 - (p * p).sum(axis=1))
    p0 = np.exp(log_q.sum(axis=1))
    p1 = p0 * np.exp(log_p - log_q).sum(axis=1)
    at_least_two = np.where(s1 < 1e-4, e2, 1.0 - p0 - p1)
    with np.errstate(divide="ignore"):
        score = np.log(np.maximum(at_least_two, 0.0)) - 0.5 * z * z
    return float(z[int(np.argmax(score))])


def _chunk_moments(seed_seq, n, thresholds, funds, d_tot, rho, antithetic, shift, pool):
    """Sums needed for the estimator over one substream of ``n`` samples."""
    rng = np.random.default_rng(seed_seq)
    n_members = len(thresholds)
    if antithetic:
        half = n // 2
        u = rng.standard_normal(half)
        u = np.concatenate([u, -u])
    else:
        u = rng.standard_normal(n)
    z = u + shift
    # likelihood ratio phi(z) / phi(z - shift)
    weight = np.exp(-shift * z + 0.5 * shift * shift)
    e = rng.standard_normal((n, n_members))
    x = math.sqrt(rho) * z[:, None] + math.sqrt(1.0 - rho) * e
    hit = x <= thresholds[None, :]

    in_s = hit @ funds
    remaining = d_tot - in_s
    exhausted = remaining <= _FUND_TOL * d_tot
    multi = (hit.sum(axis=1) >= 2) & ~exhausted
    y = np.zeros((n, n_members))
    rows = np.flatnonzero(multi)
    if rows.size:
        h = hit[rows]
        y[rows] = h * (weight[rows, None] * (in_s[rows, None] - funds[None, :]) / remaining[rows, None])

    if antithetic:
        # pair averages are i.i.d.; their spread gives the standard error
        y = 0.5 * (y[:half] + y[half:])
    yp = y @ pool
    return y.sum(axis=0), (y * y).sum(axis=0), len(y), weight @ hit, float(weight @ exhausted), yp.sum(), yp @ yp


def epsilon_mc(ccp: CcpStructure, cfg: ScenarioEngineConfig) -> EpsilonResult:
    if cfg.mode != "monte_carlo":
        cfg = replace(cfg, mode="monte_carlo")
    probs = period_default_probs(ccp, cfg.recap_days)
    thresholds = ndtri(probs)
    funds = np.array([m.default_fund for m in ccp.members[1:]])
    d_tot = ccp.total_default_fund

    n_total = cfg.mc_samples
    if cfg.antithetic:
        n_total += n_total % 2
    sizes = [CHUNK_SIZE] * (n_total // CHUNK_SIZE)
    if n_total % CHUNK_SIZE:
        sizes.append(n_total % CHUNK_SIZE)
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(len(sizes))
    shift = multi_default_shift(probs, cfg.rho) if cfg.factor_shift is None else float(cfg.factor_shift)
    if cfg.rho == 0.0:
        shift = 0.0

    live = probs > 0
    pool_weights = np.where(live, 1.0 / np.where(live, probs, 1.0), 0.0) / max(int(live.sum()), 1)

    def run(i):
        return _chunk_moments(seeds[i], sizes[i], thresholds, funds, d_tot, cfg.rho, cfg.antithetic, shift, pool_weights)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]

    # combine in chunk order so the floating-point sum is worker-independent
    s1 = np.zeros(len(funds))
    s2 = np.zeros(len(funds))
    n_obs = 0
    hits = np.zeros(len(funds))
    n_exhausted = 0.0
    p1 = p2 = 0.0
    for a, b, n, h, ex, c1, c2 in parts:
        p1 += c1
        p2 += c2
        s1 += a
        s2 += b
        n_obs += n
        hits += h
        n_exhausted += ex

    exhaustion_rate = n_exhausted / n_total
    if exhaustion_rate > MAX_EXHAUSTION_RATE:
        raise ExhaustionRateError(
            f"fund-exhaustion rate too high: an estimated {exhaustion_rate:.3%} of scenarios wipe out the fund"
        )
    if n_exhausted:
        log.warning("fund-exhausting scenarios (probability %.2e) were excluded", exhaustion_rate)

    def std_error(m1, m2):
        return np.sqrt(np.maximum(m2 / n_obs - m1 * m1, 0.0) / max(n_obs - 1, 1))

    mean = s1 / n_obs
    se = std_error(mean, s2)
    pooled_se = float(std_error(p1 / n_obs, p2))
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = np.where(probs > 0, mean / probs, 0.0)
        se = np.where(probs > 0, se / probs, 0.0)
    return EpsilonResult(
        member_ids=tuple(m.id for m in ccp.members[1:]),
        epsilon=eps,
        std_error=se,
        marginal_prob=probs,
        exhaustion_prob=exhaustion_rate,
        mode="monte_carlo",
        n_samples=n_total,
        default_frequency=hits / n_total,
        pooled_std_error=pooled_se,
    )


def factor_quadrature(rho: float, n_points: int = 64, rule: str = "legendre") -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E[g(Z)]`` with ``Z ~ N(0, 1)``.

    ``hermite`` is plain Gauss-Hermite with ``n_points`` nodes. ``legendre``
    uses 8-point Gauss-Legendre panels on [-9, 9]; panels are no wider than
    the width ``sqrt((1 - rho) / rho)`` over which ``p_j(z)`` switches from 1
    to 0, and ``n_points`` is a lower bound on the node count.
    """
    if rule == "hermite":
        z, w = roots_hermitenorm(n_points)
        return z, w / w.sum()
    per_panel = 8
    width = math.sqrt((1.0 - rho) / rho) if rho > 0 else math.inf
    half = 9.0
    # panels no wider than one standard deviation even when rho is small
    panels = max(math.ceil(n_points / per_panel), math.ceil(2 * half / min(width, 1.0)))
    x, w = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(-half, half, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    z = ((b - a) / 2 * x + (a + b) / 2).ravel()
    wz = ((b - a) / 2 * w).ravel() * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return z, wz


def _subset_bits(n: int, start: int, stop: int) -> np.ndarray:
    masks = np.arange(start, stop, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n, dtype=np.int64)[None, :]) & 1).astype(bool)


def epsilon_exact(ccp: CcpStructure, cfg: ScenarioEngineConfig) -> EpsilonResult:
    """Exact scenario sum over all ``2^N - 1`` non-empty default sets.

    Scenario probabilities use conditional independence given the common
    factor, integrated with :func:`factor_quadrature`.
    """
    n_all = ccp.n_others
    if n_all > MAX_EXACT_MEMBERS:
        raise DomainError(f"exact enumeration refused for N={n_all} > {MAX_EXACT_MEMBERS}")
    if cfg.quadrature_points < 8:
        raise DomainError("exact enumeration needs at least 8 quadrature points")

    probs = period_default_probs(ccp, cfg.recap_days)
    funds_all = np.array([m.default_fund for m in ccp.members[1:]])
    d_tot = ccp.total_default_fund
    # members that can never default drop out of the enumeration
    live = np.flatnonzero(probs > 0)
    n = len(live)
    funds = funds_all[live]

    z, wz = factor_quadrature(cfg.rho, cfg.quadrature_points, cfg.quadrature_rule)
    log_p, log_q = _conditional_log_probs(probs[live], cfg.rho, z)
    log_ratio = log_p - log_q
    base = log_q.sum(axis=1)

    num = np.zeros(n)
    exhausted_mass = 0.0
    block = 1 << 16
    for start in range(1, 1 << n, block):
        bits = _subset_bits(n, start, min(start + block, 1 << n))
        # log P(s | z) for every (scenario, node)
        p_s = np.exp(bits.astype(float) @ log_ratio.T + base[None, :]) @ wz
        in_s = bits @ funds
        remaining = d_tot - in_s
        ok = remaining > _FUND_TOL * d_tot
        exhausted_mass += p_s[~ok].sum()
        w = np.where(ok, p_s / np.where(ok, remaining, 1.0), 0.0)
        # sum_s 1{k in s} P(s) (D_s - D_k) / (D_tot - D_s)
        num += bits.T @ (w * in_s) - funds * (bits.T @ w)

    eps = np.zeros(n_all)
    eps[live] = num / probs[live]
    return EpsilonResult(
        member_ids=tuple(m.id for m in ccp.members[1:]),
        epsilon=eps,
        std_error=None,
        marginal_prob=probs,
        exhaustion_prob=float(exhausted_mass),
        mode="exact_enumeration",
    )


def compute_epsilon(ccp: CcpStructure, cfg: ScenarioEngineConfig) -> EpsilonResult:
    if cfg.mode == "exact_enumeration":
        return epsilon_exact(ccp, cfg)
    return epsilon_mc(ccp, cfg)


def homogeneous_roster(
    n_members: int = 15,
    spread: float = 0.02,
    recovery: float = 0.4,
    margin: float = 100.0,
    fund: float = 10.0,
    include_reporting: bool = True,
) -> CcpStructure:
    """Equal-contribution roster; ``n_members`` counts the reporting member
    unless ``include_reporting`` is false, in which case one is added."""
    total = n_members if include_reporting else n_members + 1
    members = [
        ClearingMember(f"CM{i:02d}", margin, fund, cds_spread=spread, recovery=recovery) for i in range(total)
    ]
    return CcpStructure(members=tuple(members), recap_days=30.0)
