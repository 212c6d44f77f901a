"""One-year CCP risk charge for the four reference markets, from pinned
(w, p_hat, alpha) and a 200 bps / 40% recovery member hazard.

Shows the homogeneous shortcut next to the full per-member model with the
correction term chosen so that (M/(M+D))^alpha (1 + eps) = 1.
"""

import argparse

from ccprisk.core_model import MarketCalibration, hazard_from_spread, simplified_charge, total_charge
from ccprisk.scenario_engine import homogeneous_roster

MARKETS = {
    "S&P 500": (1.7, 0.14, 3.3),
    "CDX IG": (2.2, 0.12, 3.3),
    "USD/GBP": (2.5, 0.16, 3.3),
    "USD rates": (1.3, 0.18, 4.4),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--members", type=int, default=16)
    ap.add_argument("--margin", type=float, default=100.0)
    ap.add_argument("--fund", type=float, default=10.0)
    ap.add_argument("--spread-bps", type=float, default=200.0)
    ap.add_argument("--recovery", type=float, default=0.4)
    ap.add_argument("--horizon", type=float, default=1.0)
    args = ap.parse_args()

    lam = hazard_from_spread(args.spread_bps / 1e4, args.recovery)
    ccp = homogeneous_roster(args.members, spread=args.spread_bps / 1e4, recovery=args.recovery,
                             margin=args.margin, fund=args.fund)
    print(f"{'market':<10} {'w':>4} {'p_hat':>6} {'alpha':>6} {'LGD_tot':>8} {'short':>9} {'full':>9}")
    for name, (w, p_hat, alpha) in MARKETS.items():
        cal = MarketCalibration(w, p_hat, alpha)
        short = simplified_charge(args.margin, args.fund, cal, lam, args.horizon)
        eps = ((args.margin + args.fund) / args.margin) ** alpha - 1.0
        full = total_charge(ccp, cal, [eps] * ccp.n_others, horizon=args.horizon)
        print(
            f"{name:<10} {w:>4.1f} {p_hat:>6.0%} {alpha:>6.1f} {short.lgd_tot:>8.1%} "
            f"{short.charge_fraction * 1e4:>6.1f}bps {full.charge_fraction * 1e4:>6.1f}bps"
        )


if __name__ == "__main__":
    main()
