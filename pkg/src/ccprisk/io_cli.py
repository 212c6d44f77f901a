"""File formats and the ``ccprisk`` command line.

Exit codes: 0 success, 2 input/parse error, 3 domain/model error,
4 tolerance or fund-exhaustion failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ccprisk import calibration as calib
from ccprisk import scenario_engine as se
from ccprisk.core_model import (
    CcpStructure,
    ClearingMember,
    DiscountCurve,
    MarketCalibration,
    total_charge,
)
from ccprisk.errors import CcpRiskError, DomainError, InputError

log = logging.getLogger("ccprisk")

ROSTER_COLUMNS = ("member_id", "initial_margin", "default_fund", "cds_spread_bps", "recovery_pct")
GRID_RHOS = (0.0, 0.2, 0.4, 0.6, 0.7, 0.8, 0.9)
GRID_COLUMNS = ((30.0, 200.0), (10.0, 200.0), (30.0, 100.0))


# -- roster ------------------------------------------------------------------


def _parse_float(text: str, what: str, line: int) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise InputError(f"line {line}: cannot parse {what} {text!r}") from None
    if not np.isfinite(v):
        raise InputError(f"line {line}: {what} is not finite")
    return v


def parse_roster(text: str, reporting: str | None = None) -> list[ClearingMember]:
    """Parse roster CSV; the reporting member is moved to the front.

    The reporting member is the one named by ``reporting``, else the row
    flagged in an optional ``reporting`` column, else the first row.
    """
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise InputError("roster is empty")
    missing = [c for c in ROSTER_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise InputError(f"roster header is missing columns: {', '.join(missing)}")
    members = []
    flagged = None
    for line, row in enumerate(reader, start=2):
        mid = (row["member_id"] or "").strip()
        if not mid:
            raise InputError(f"line {line}: empty member_id")
        nums = {}
        for col in ROSTER_COLUMNS[1:]:
            nums[col] = _parse_float(row[col], col, line)
            if nums[col] < 0:
                raise InputError(f"line {line}: {col} must be non-negative")
        if nums["recovery_pct"] >= 100:
            raise InputError(f"line {line}: recovery_pct must be below 100")
        try:
            members.append(
                ClearingMember(
                    mid,
                    nums["initial_margin"],
                    nums["default_fund"],
                    cds_spread=nums["cds_spread_bps"] / 1e4,
                    recovery=nums["recovery_pct"] / 100.0,
                )
            )
        except DomainError as exc:
            raise InputError(f"line {line}: {exc}") from None
        if (row.get("reporting") or "").strip().lower() in ("1", "true", "yes", "y"):
            flagged = mid
    if len(members) < 2:
        raise InputError(f"roster needs at least 2 members, found {len(members)}")
    ids = [m.id for m in members]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise InputError(f"duplicate member ids: {', '.join(dupes)}")
    target = reporting or flagged
    if target is not None:
        if target not in ids:
            raise InputError(f"reporting member {target!r} not in roster")
        i = ids.index(target)
        members.insert(0, members.pop(i))
    return members


def format_roster(members: Sequence[ClearingMember]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROSTER_COLUMNS)
    for m in members:
        w.writerow(
            [m.id, repr(m.initial_margin), repr(m.default_fund), repr(m.cds_spread * 1e4), repr(m.recovery * 100.0)]
        )
    return buf.getvalue()


# -- price series --------------------------------------------------------------


def parse_series(text: str) -> calib.PriceSeries:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise InputError("series file is empty")
    header = [h.strip().lower() for h in header]
    if header[:2] != ["date", "level"]:
        raise InputError(f"line 1: expected header 'date,level', got {','.join(header)!r}")
    dates, levels = [], []
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 2:
            raise InputError(f"line {line}: expected 2 fields, got {len(row)}")
        try:
            d = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise InputError(f"line {line}: bad ISO-8601 date {row[0]!r}") from None
        if dates and d <= dates[-1]:
            raise InputError(f"line {line}: date {d} is not after {dates[-1]}")
        dates.append(d)
        levels.append(_parse_float(row[1].strip(), "level", line))
    if not dates:
        raise InputError("series has no observations")
    return calib.PriceSeries(tuple(dates), np.array(levels))


def format_series(prices: calib.PriceSeries) -> str:
    lines = ["date,level"]
    lines += [f"{d.isoformat()},{v!r}" for d, v in zip(prices.dates, prices.levels.tolist())]
    return "\n".join(lines) + "\n"


# -- run configuration ---------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    horizon_years: float = 1.0
    rate: float = 0.0
    recap_days: float = 30.0
    liquidation_days: float = 5.0
    p_margin: float = 0.01
    rho: float = 0.0
    mc_samples: int = 2_000_000
    rng_seed: int = 0
    exact: bool = False
    pins: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"line {exc.lineno}: invalid config JSON: {exc.msg}") from None
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (dt.date,)):
        return o.isoformat()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)


# -- commands ------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    prices = parse_series(_read(args.series))
    res = calib.calibrate(
        prices,
        horizon=args.horizon_days,
        decay=args.decay,
        decay_fwd=args.decay_fwd,
        q=args.quantile,
        mapping=args.mapping,
        p_margin=args.p_margin,
        overlap=not args.no_overlap,
        side=args.side,
        log_space=args.log_space,
        asof=_asof_index(prices, args.asof, args.horizon_days, not args.no_overlap),
    )
    cal = res.calibration
    for note in res.warnings:
        log.warning(note)
    out = {"calibration": cal.to_dict(), "diagnostics": res.diagnostics()}
    print(f"current vol ({args.horizon_days}d)   {res.current_vol:.4%}")
    print(f"max vol               {res.max_vol:.4%}")
    print(f"{args.quantile:.0%} vol               {res.stressed_vol:.4%}")
    print(f"wrong-way factor w    {cal.wrong_way_factor:.3f}")
    print(f"contagion factor      {cal.contagion_factor:.3f}")
    print(f"breach probability    {cal.breach_probability:.2%}")
    print(f"Pareto index alpha    {cal.pareto_index:.3f}  (Gaussian tail ~ {res.pareto.gaussian_reference_alpha:.2f})")
    _write(args.out, dump_json(out))
    if args.diagnostics:
        _write_diagnostics(args.diagnostics, res)
    return 0


def _asof_index(prices, asof: str | None, horizon: int, overlap: bool) -> int | None:
    if asof is None:
        return None
    try:
        d = dt.date.fromisoformat(asof)
    except ValueError:
        raise InputError(f"bad --asof date {asof!r}") from None
    rets = calib.h_day_returns(prices, horizon, "log_return", overlap)
    idx = [i for i, rd in enumerate(rets.dates) if rd <= d]
    if not idx:
        raise InputError(f"--asof {asof} precedes the first return date")
    return idx[-1]


def _write_diagnostics(directory: str, res: calib.CalibrationResult) -> None:
    """Plot-ready CSVs: vol paths, contagion ratio path, empirical vs fitted tail."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "vol_paths.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "backward_vol", "forward_vol", "ratio"])
        dates = res.backward.dates or range(len(res.backward))
        for d, b, f, r in zip(dates, res.backward.values, res.forward.values, res.ratio):
            w.writerow([str(d), repr(float(b)), repr(float(f)), repr(float(r))])
    p = res.pareto
    with open(out / "tail_fit.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "empirical_exceedance", "pareto_exceedance"])
        for x, e, m in zip(p.tail_x, p.tail_empirical, p.model_exceedance(p.tail_x)):
            w.writerow([repr(float(x)), repr(float(e)), repr(float(m))])


def _engine_config(args, rho: float, recap_days: float) -> se.ScenarioEngineConfig:
    return se.ScenarioEngineConfig(
        rho=rho,
        recap_days=recap_days,
        mc_samples=args.samples,
        rng_seed=args.seed,
        mode="exact_enumeration" if args.exact else "monte_carlo",
        workers=args.workers,
    )


def run_sensitivity_grid(samples: int, seed: int, exact: bool = False, include_reporting: bool = True, workers: int = 1) -> dict:
    """Correction-term grid for a 15-member equal-fund roster, 40% recovery."""
    cols = []
    for days, bps in GRID_COLUMNS:
        ccp = se.homogeneous_roster(15, spread=bps / 1e4, recovery=0.4, include_reporting=include_reporting)
        col = {"recap_days": days, "spread_bps": bps, "points": []}
        for rho in GRID_RHOS:
            cfg = se.ScenarioEngineConfig(
                rho=rho,
                recap_days=days,
                mc_samples=samples,
                rng_seed=seed,
                mode="exact_enumeration" if exact else "monte_carlo",
                workers=workers,
            )
            r = se.compute_epsilon(ccp, cfg)
            pt = {"rho": rho, "epsilon": r.pooled_epsilon}
            if r.pooled_std_error is not None:
                pt["std_error"] = r.pooled_std_error
            col["points"].append(pt)
        cols.append(col)
    return {"grid": cols, "mode": "exact_enumeration" if exact else "monte_carlo", "samples": samples, "seed": seed}


def cmd_epsilon(args) -> int:
    if args.table1:
        out = run_sensitivity_grid(args.samples, args.seed, args.exact, not args.exclude_reporting, args.workers)
        header = "rho    " + "  ".join(f"{int(d):>3}d/{int(b):>3}bp" for d, b in GRID_COLUMNS)
        print(header)
        for i, rho in enumerate(GRID_RHOS):
            cells = "  ".join(f"{c['points'][i]['epsilon']:>10.1%}" for c in out["grid"])
            print(f"{rho:>4.0%}   {cells}")
        _write(args.out, dump_json(out))
        return 0
    if not args.roster:
        raise InputError("--roster is required unless --table1 is given")
    members = parse_roster(_read(args.roster), args.reporting)
    ccp = CcpStructure(tuple(members), recap_days=args.recap_days, liquidation_days=min(5.0, args.recap_days))
    res = se.compute_epsilon(ccp, _engine_config(args, args.rho, args.recap_days))
    print(f"{'member':<12} {'epsilon':>10} {'std err':>10} {'P(default)':>12}")
    for i, mid in enumerate(res.member_ids):
        se_txt = f"{res.std_error[i]:>10.4%}" if res.std_error is not None else f"{'-':>10}"
        print(f"{mid:<12} {res.epsilon[i]:>10.4%} {se_txt} {res.marginal_prob[i]:>12.6f}")
    pooled_se = f"{res.pooled_std_error:>10.4%}" if res.pooled_std_error is not None else f"{'-':>10}"
    print(f"{'(average)':<12} {res.pooled_epsilon:>10.4%} {pooled_se}")
    out = res.to_dict()
    out["inputs"] = {"rho": args.rho, "recap_days": args.recap_days, "samples": args.samples, "seed": args.seed}
    _write(args.out, dump_json(out))
    return 0


_PIN_FIELDS = {
    "w": "wrong_way_factor",
    "gamma": "contagion_factor",
    "p_hat": "breach_probability",
    "alpha": "pareto_index",
}


def resolve_calibration(cal_path: str | None, pins: dict, p_margin: float) -> MarketCalibration:
    """Merge a calibration file with pinned values; pins always win.

    A pinned gamma without a pinned p_hat re-derives p_hat from gamma.
    """
    base = {}
    prov = {}
    if cal_path:
        d = json.loads(_read(cal_path))
        d = d.get("calibration", d)
        base = {k: d[k] for k in _PIN_FIELDS.values() if k in d}
        prov = {k: d.get("provenance", {}).get(k, f"file:{cal_path}") for k in base}
    for short, full in _PIN_FIELDS.items():
        if pins.get(short) is not None:
            base[full] = float(pins[short])
            prov[full] = "pinned"
    if pins.get("gamma") is not None and pins.get("p_hat") is None:
        base["breach_probability"] = calib.breach_probability(base["contagion_factor"], p_margin)
        prov["breach_probability"] = "derived from pinned gamma"
    missing = [k for k in ("wrong_way_factor", "breach_probability", "pareto_index") if k not in base]
    if missing:
        raise InputError(f"calibration incomplete, supply --cal or pins for: {', '.join(missing)}")
    base.setdefault("contagion_factor", 1.0)
    prov.setdefault("contagion_factor", "default")
    return MarketCalibration(provenance=prov, **base)


def cmd_charge(args) -> int:
    members = parse_roster(_read(args.roster), args.reporting)
    ccp = CcpStructure(
        tuple(members),
        recap_days=args.recap_days,
        liquidation_days=args.liquidation_days,
        margin_confidence=args.p_margin,
    )
    pins = {"w": args.w, "gamma": args.gamma, "p_hat": args.p_hat, "alpha": args.alpha}
    cal = resolve_calibration(args.cal, pins, args.p_margin)

    eps_info = None
    if args.eps is not None:
        eps = [args.eps] * ccp.n_others
        eps_source = "pinned"
    else:
        res = se.compute_epsilon(ccp, _engine_config(args, args.rho, args.recap_days))
        eps = res.epsilon.tolist()
        eps_source = res.mode
        eps_info = res.to_dict()

    report = total_charge(ccp, cal, eps, DiscountCurve(args.rate), args.horizon_years)
    print(f"{'member':<12} {'lambda':>9} {'U_bar':>12} {'epsilon':>9} {'exposure':>12} {'contribution':>14}")
    for r in report.rows:
        print(
            f"{r.id:<12} {r.hazard:>9.4%} {r.expected_tail_loss:>12.6g} {r.epsilon:>9.2%} "
            f"{r.exposure:>12.6g} {r.contribution:>14.6g}"
        )
    print(f"charge C0(T)          {report.charge:.6g}")
    print(f"LGD_tot               {report.lgd_tot:.2%}")
    print(f"charge / (M+G)        {report.charge_fraction * 1e4:.1f} bps")
    print(f"mean disc. hazard     {report.mean_discounted_hazard * 1e4:.1f} bps")

    out = report.to_dict()
    out["inputs"] = {
        "roster": [dataclasses.asdict(m) for m in members],
        "calibration": cal.to_dict(),
        "horizon_years": args.horizon_years,
        "rate": args.rate,
        "recap_days": args.recap_days,
        "liquidation_days": args.liquidation_days,
        "p_margin": args.p_margin,
        "rho": args.rho,
        "samples": args.samples,
        "seed": args.seed,
        "epsilon_source": eps_source,
        "pins": {k: v for k, v in {**pins, "eps": args.eps}.items() if v is not None},
    }
    if eps_info is not None:
        out["epsilon"] = eps_info
    _write(args.out, dump_json(out))
    return 0


# -- argument parsing ----------------------------------------------------------


def _default_seed() -> int:
    env = os.environ.get("CCPRISK_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"CCPRISK_SEED must be an integer, got {env!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccprisk", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="estimate w, gamma, p_hat and alpha from a price series")
    c.add_argument("--series", required=True)
    c.add_argument("--horizon-days", type=int, default=5)
    c.add_argument("--decay", type=float, default=0.99)
    c.add_argument("--decay-fwd", type=float, default=0.97)
    c.add_argument("--quantile", type=float, default=0.99)
    c.add_argument("--mapping", choices=["linear", "exp", "exponential"], default="exp")
    c.add_argument("--p-margin", type=float, default=0.01)
    c.add_argument("--no-overlap", action="store_true")
    c.add_argument("--side", choices=["both", "up", "down"], default="both")
    c.add_argument("--log-space", action="store_true", help="least squares on log exceedance probabilities")
    c.add_argument("--asof", help="date whose backward vol is taken as current (default: last)")
    c.add_argument("--out", help="write calibration JSON here")
    c.add_argument("--diagnostics", help="directory for plot-ready CSV diagnostics")
    c.set_defaults(func=cmd_calibrate)

    def engine_flags(sp, rho_required):
        sp.add_argument("--rho", type=float, required=rho_required, default=0.0)
        sp.add_argument("--recap-days", type=float, default=30.0)
        sp.add_argument("--samples", type=int, default=2_000_000)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--exact", action="store_true", help="exact scenario enumeration (N <= 20)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--reporting", help="member_id of the reporting member (default: first row)")

    e = sub.add_parser("epsilon", help="multi-default correction term per member")
    e.add_argument("--roster")
    engine_flags(e, rho_required=False)
    e.add_argument("--table1", action="store_true", help="15-member homogeneous sensitivity grid")
    e.add_argument("--exclude-reporting", action="store_true", help="grid roster has 15 members besides the reporting one")
    e.add_argument("--out")
    e.set_defaults(func=cmd_epsilon)

    g = sub.add_parser("charge", help="full risk report for the reporting member")
    g.add_argument("--roster", required=True)
    g.add_argument("--cal", help="calibration JSON written by 'calibrate'")
    g.add_argument("--w", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--p-hat", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--eps", type=float, help="pin one correction term for every member")
    g.add_argument("--horizon-years", type=float, default=1.0)
    g.add_argument("--rate", type=float, default=0.0)
    g.add_argument("--liquidation-days", type=float, default=5.0)
    g.add_argument("--p-margin", type=float, default=0.01)
    engine_flags(g, rho_required=False)
    g.add_argument("--out")
    g.set_defaults(func=cmd_charge)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        return args.func(args)
    except CcpRiskError as exc:
        print(f"ccprisk: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
