"""Historical estimation of the wrong-way factor, contagion factor, breach
probability and Pareto tail index from a single price series."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy import optimize, signal
from scipy.special import ndtr, ndtri

from ccprisk.core_model import MarketCalibration
from ccprisk.errors import DomainError, TailTooThinError

SEED_WINDOW = 20
WARMUP = 100


@dataclass(frozen=True)
class PriceSeries:
    dates: tuple[dt.date, ...]
    levels: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(levels):
            raise DomainError("dates and levels differ in length")
        if not np.all(np.isfinite(levels)):
            raise DomainError("price levels must be finite")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DomainError("dates must be strictly increasing")

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True)
class ReturnSeries:
    values: np.ndarray
    horizon: int = 5
    kind: Literal["log_return", "absolute_change"] = "log_return"
    overlap: bool = True
    dates: tuple = ()


@dataclass(frozen=True)
class VolSeries:
    values: np.ndarray
    direction: Literal["backward", "forward"]
    decay: float
    dates: tuple = ()

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ParetoFit:
    alpha: float
    anchor_quantile: float
    anchor_prob: float
    sse: float
    gaussian_reference_alpha: float
    n_tail: int
    tail_x: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    tail_empirical: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    def model_exceedance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.anchor_prob * (self.anchor_quantile / x) ** self.alpha


def h_day_returns(
    prices: PriceSeries,
    horizon: int = 5,
    kind: Literal["log_return", "absolute_change"] = "log_return",
    overlap: bool = True,
) -> ReturnSeries:
    """h-day changes stepped daily (``overlap``) or every h days."""
    if horizon < 1:
        raise DomainError("horizon must be at least one day")
    lv = prices.levels
    if kind == "log_return":
        if np.any(lv <= 0):
            raise DomainError("log returns need strictly positive levels")
        x = np.log(lv)
    elif kind == "absolute_change":
        x = lv
    else:
        raise DomainError(f"unknown return kind {kind!r}")
    step = 1 if overlap else horizon
    idx = np.arange(horizon, len(lv), step)
    values = x[idx] - x[idx - horizon]
    dates = tuple(prices.dates[i] for i in idx) if prices.dates else ()
    return ReturnSeries(values, horizon, kind, overlap, dates)


def _as_array(returns) -> tuple[np.ndarray, tuple]:
    if isinstance(returns, ReturnSeries):
        return np.asarray(returns.values, dtype=float), returns.dates
    return np.asarray(returns, dtype=float), ()


def default_seed_var(r: np.ndarray, window: int = SEED_WINDOW) -> float:
    return float(np.mean(r[:window] ** 2))


def ewma_backward(returns, decay: float = 0.99, seed_var: float | None = None) -> VolSeries:
    """``s2[i] = decay * s2[i-1] + (1 - decay) * r[i]**2`` with ``s2[-1] = seed_var``."""
    r, dates = _as_array(returns)
    if r.size == 0:
        raise DomainError("empty return series")
    if not 0.0 <= decay < 1.0:
        raise DomainError(f"decay must lie in [0, 1), got {decay}")
    if seed_var is None:
        seed_var = default_seed_var(r)
    if seed_var < 0:
        raise DomainError("seed variance must be non-negative")
    var, _ = signal.lfilter([1.0 - decay], [1.0, -decay], r * r, zi=[decay * seed_var])
    return VolSeries(np.sqrt(var), "backward", decay, dates)


def ewma_forward(returns, decay: float = 0.97, seed_var: float | None = None) -> VolSeries:
    """Mirror of :func:`ewma_backward`, run from the last observation backwards."""
    r, dates = _as_array(returns)
    if r.size == 0:
        raise DomainError("empty return series")
    if seed_var is None:
        seed_var = default_seed_var(r[::-1])
    back = ewma_backward(r[::-1], decay, seed_var)
    return VolSeries(back.values[::-1].copy(), "forward", decay, dates)


def stress_quantile(vols, q: float = 0.99) -> float:
    """Empirical quantile, linear between order statistics (inclusive)."""
    v = vols.values if isinstance(vols, VolSeries) else np.asarray(vols, dtype=float)
    if v.size == 0:
        raise DomainError("empty volatility series")
    if not 0.0 < q <= 1.0:
        raise DomainError(f"quantile level must lie in (0, 1], got {q}")
    return float(np.quantile(v, q, method="linear"))


def wrong_way_factor(
    stressed_vol: float,
    current_vol: float,
    mapping: Literal["linear", "exponential"] = "exponential",
    p_margin: float = 0.01,
) -> float:
    """Ratio of stressed to current VaR-based collateral.

    ``linear`` takes the vol ratio; ``exponential`` maps the Gaussian driver
    through ``exp(x) - 1`` before taking the ratio.
    """
    if stressed_vol <= 0 or current_vol <= 0:
        raise DomainError("zero volatility: wrong-way factor undefined")
    if mapping == "linear":
        return stressed_vol / current_vol
    if mapping in ("exponential", "exp"):
        g = ndtri(1.0 - p_margin)
        return math.expm1(stressed_vol * g) / math.expm1(current_vol * g)
    raise DomainError(f"unknown mapping {mapping!r}")


def contagion_ratio(back: VolSeries, fwd: VolSeries) -> np.ndarray:
    if len(back) != len(fwd):
        raise DomainError("backward and forward vol series are misaligned")
    if back.dates and fwd.dates and back.dates != fwd.dates:
        raise DomainError("backward and forward vol series cover different dates")
    if np.any(back.values <= 0):
        raise DomainError("zero backward volatility: contagion ratio undefined")
    return fwd.values / back.values


def contagion_factor(back: VolSeries, fwd: VolSeries, q: float = 0.99) -> float:
    return stress_quantile(contagion_ratio(back, fwd), q)


def breach_probability(gamma: float, p_margin: float = 0.01) -> float:
    """Margin breach probability once vol is scaled up by ``gamma``."""
    if gamma < 1.0:
        raise DomainError(f"contagion factor must be >= 1, got {gamma}")
    if not 0.0 < p_margin < 0.5:
        raise DomainError("margin breach probability must lie in (0, 0.5)")
    return float(ndtr(ndtri(p_margin) / gamma))


def loss_sample(values, side: str = "both") -> np.ndarray:
    """Signed losses for a long (``down``), short (``up``) or either
    (``both``) position; ``both`` pools the two, doubling the sample."""
    x = np.asarray(values, dtype=float)
    if side == "both":
        return np.concatenate([x, -x])
    if side == "up":
        return x
    if side == "down":
        return -x
    raise DomainError(f"unknown side {side!r}")


def _pareto_objective(alpha, x, emp, anchor_prob, q, log_space):
    model = anchor_prob * (q / x) ** alpha
    if log_space:
        return float(np.sum((np.log(emp) - np.log(model)) ** 2))
    return float(np.sum((emp - model) ** 2))


def _fit_alpha(x, emp, anchor_prob, q, log_space, bounds=(1.1, 12.0)) -> tuple[float, float]:
    grid = np.linspace(bounds[0], bounds[1], 110)
    vals = np.array([_pareto_objective(a, x, emp, anchor_prob, q, log_space) for a in grid])
    i = int(np.argmin(vals))
    if 0 < i < len(grid) - 1:
        res = optimize.minimize_scalar(
            _pareto_objective,
            bracket=(grid[i - 1], grid[i], grid[i + 1]),
            args=(x, emp, anchor_prob, q, log_space),
            method="golden",
            tol=1e-5,
        )
        return float(res.x), float(res.fun)
    return float(grid[i]), float(vals[i])


def gaussian_reference_alpha(anchor_prob: float = 0.01, n: int = 100_000, log_space: bool = False) -> float:
    """Pareto index the same fit assigns to an exact Gaussian tail."""
    k = int(round(anchor_prob * n))
    emp = np.arange(1, k + 1) / n
    x = ndtri(1.0 - emp)
    q = ndtri(1.0 - anchor_prob)
    return _fit_alpha(x, emp, anchor_prob, q, log_space)[0]


def pareto_fit(
    changes,
    anchor_prob: float = 0.01,
    side: Literal["both", "up", "down"] = "both",
    log_space: bool = False,
) -> ParetoFit:
    """Fit ``P[X > x] = anchor_prob * (q / x)**alpha`` beyond the anchor quantile.

    ``q`` is the empirical ``1 - anchor_prob`` quantile; alpha minimises the
    squared gap between the empirical exceedance ``rank / n`` and the model
    at every observation above ``q``.
    """
    values = changes.values if isinstance(changes, ReturnSeries) else changes
    x_all = loss_sample(values, side)
    if not 0.0 < anchor_prob <= 0.1:
        raise DomainError("anchor probability must lie in (0, 0.1]")
    n = x_all.size
    if np.asarray(values).size < 500:
        raise DomainError(f"need at least 500 observations for a tail fit, got {np.asarray(values).size}")
    q = float(np.quantile(x_all, 1.0 - anchor_prob, method="linear"))
    tail = np.sort(x_all[x_all > q])[::-1]
    if tail.size < 10 or q <= 0:
        raise TailTooThinError(f"only {tail.size} observations beyond the anchor quantile")
    emp = np.arange(1, tail.size + 1) / n
    alpha, sse = _fit_alpha(tail, emp, anchor_prob, q, log_space)
    return ParetoFit(
        alpha=alpha,
        anchor_quantile=q,
        anchor_prob=anchor_prob,
        sse=sse,
        gaussian_reference_alpha=gaussian_reference_alpha(anchor_prob, n, log_space),
        n_tail=int(tail.size),
        tail_x=tail,
        tail_empirical=emp,
    )


@dataclass
class CalibrationResult:
    calibration: MarketCalibration
    current_vol: float
    stressed_vol: float
    max_vol: float
    pareto: ParetoFit
    backward: VolSeries
    forward: VolSeries
    ratio: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def diagnostics(self) -> dict:
        lo, hi = WARMUP, len(self.backward) - WARMUP
        return {
            "current_vol": self.current_vol,
            "stressed_vol": self.stressed_vol,
            "max_vol": self.max_vol,
            "pareto": {
                "alpha": self.pareto.alpha,
                "anchor_quantile": self.pareto.anchor_quantile,
                "anchor_prob": self.pareto.anchor_prob,
                "sse": self.pareto.sse,
                "gaussian_reference_alpha": self.pareto.gaussian_reference_alpha,
                "n_tail": self.pareto.n_tail,
            },
            "plausibility": {
                "wrong_way_factor_in_band": 1.2 <= self.calibration.wrong_way_factor <= 2.6,
                "contagion_factor_in_band": 1.8 <= self.calibration.contagion_factor <= 2.8,
            },
            "warnings": list(self.warnings),
            "n_quantile_dates": max(hi - lo, 0),
        }


def calibrate(
    prices: PriceSeries,
    horizon: int = 5,
    decay: float = 0.99,
    decay_fwd: float = 0.97,
    q: float = 0.99,
    mapping: Literal["linear", "exponential"] = "exponential",
    p_margin: float = 0.01,
    overlap: bool = True,
    side: Literal["both", "up", "down"] = "both",
    log_space: bool = False,
    asof: int | None = None,
    warmup: int = WARMUP,
) -> CalibrationResult:
    """Full pipeline: returns, EWMA both ways, quantiles, then w, gamma, p_hat, alpha.

    ``asof`` indexes the return observation whose backward vol is "today's"
    vol; the default is the last one.
    """
    notes = []
    if len(prices) < 2 * 252:
        notes.append("fewer than two years of data")
    rets = h_day_returns(prices, horizon, "log_return", overlap)
    r = rets.values
    if r.size <= 2 * warmup:
        raise DomainError(f"insufficient data: {r.size} returns for a {warmup}-observation warm-up")
    back = ewma_backward(rets, decay)
    fwd = ewma_forward(rets, decay_fwd)
    if np.all(back.values == 0):
        raise DomainError("zero volatility: series is constant")

    usable = back.values[warmup:]
    stressed = stress_quantile(usable, q)
    current = float(back.values[-1 if asof is None else asof])
    w = wrong_way_factor(stressed, current, mapping, p_margin)
    if w < 1.0:
        notes.append(f"current vol exceeds the stressed quantile (w={w:.3f}); floored at 1")
        w = 1.0

    ratio = contagion_ratio(back, fwd)
    # both ends are excluded: each direction needs its own warm-up
    gamma = stress_quantile(ratio[warmup : len(ratio) - warmup], q)
    if gamma < 1.0:
        notes.append(f"contagion quantile below 1 ({gamma:.3f}); floored at 1")
        gamma = 1.0
    p_hat = breach_probability(gamma, p_margin)

    changes = h_day_returns(prices, horizon, "absolute_change", overlap)
    fit = pareto_fit(changes, 1.0 - q, side, log_space)

    cal = MarketCalibration(
        wrong_way_factor=w,
        breach_probability=p_hat,
        pareto_index=fit.alpha,
        contagion_factor=gamma,
        provenance={k: "estimated" for k in ("wrong_way_factor", "contagion_factor", "breach_probability", "pareto_index")},
    )
    return CalibrationResult(
        calibration=cal,
        current_vol=current,
        stressed_vol=stressed,
        max_vol=float(usable.max()),
        pareto=fit,
        backward=back,
        forward=fwd,
        ratio=ratio,
        warnings=notes,
    )
