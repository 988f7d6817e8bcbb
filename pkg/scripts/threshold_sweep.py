"""Compare the FPR estimate across threshold levels on one design.

For each replication the SLS (or PC) residuals are thresholded at every
delta on a grid; the averaged Avar diagonal is printed next to the TRUE
value and the HR estimate, along with the deltas chosen by the
cross-validation rule.

    python scripts/threshold_sweep.py --tau -0.5 --heteroscedastic --M 60
"""

from __future__ import annotations

import argparse

import numpy as np

from mldfm.montecarlo import replication_seed
from mldfm.mse import (
    ThresholdConfig,
    avar,
    base_avar_path,
    gamma_fpr,
    gamma_true,
    select_delta_cv,
    threshold_idio_cov,
)
from mldfm.panel import GroupStructure, simulate_design
from mldfm.pc import pc_extract, procrustes_align, residuals, sign_align
from mldfm.sls import sls_estimate


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[25, 25])
    ap.add_argument("--T", type=int, default=50)
    ap.add_argument("--tau", type=float, default=-0.5)
    ap.add_argument("--heteroscedastic", action="store_true")
    ap.add_argument("--dfm", type=int, default=0, help="use a DFM with this many factors instead")
    ap.add_argument("--M", type=int, default=60)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--grid", type=float, nargs="+", default=[0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    args = ap.parse_args(argv)

    if args.dfm:
        structure = GroupStructure.dfm(sum(args.sizes), args.dfm)
    else:
        structure = GroupStructure(tuple(args.sizes), 1, tuple(1 for _ in args.sizes))
    d = simulate_design(structure, args.T, tau=args.tau, heteroscedastic=args.heteroscedastic,
                        seed=args.seed)
    Lam = d.loadings.Lambda
    true = np.diag(avar(Lam, gamma_true(Lam, d.sigma_eps)).value)
    sums = {g: np.zeros(structure.r) for g in args.grid}
    hr = np.zeros(structure.r)
    picks = []
    for m in range(args.M):
        panel = d.draw_panel(replication_seed(args.seed, m).spawn(2)[0])
        if args.dfm:
            est = procrustes_align(pc_extract(panel, structure.r), d.factors.F)
        else:
            est = sign_align(sls_estimate(panel).as_factor_estimate(), d.factors.F)
        eps = residuals(panel, est)
        picks.append(select_delta_cv(eps))
        for g in args.grid:
            S = threshold_idio_cov(eps, ThresholdConfig(g))
            sums[g] += np.diag(avar(est.Lambda_hat, gamma_fpr(est.Lambda_hat, S)).value)
        hr += np.diag(base_avar_path(est.Lambda_hat, eps, "HR").mean(axis=0))

    labels = structure.factor_labels()
    print("x10 scale; gap = mean |diag - TRUE|")
    print(f"{'':>8}" + "".join(f"{l:>10}" for l in labels) + f"{'gap':>10}")
    print(f"{'TRUE':>8}" + "".join(f"{10 * v:10.4f}" for v in true))
    rows = [("HR", hr / args.M)] + [(f"d={g:g}", s / args.M) for g, s in sums.items()]
    for name, v in rows:
        gap = np.mean(np.abs(v - true))
        print(f"{name:>8}" + "".join(f"{10 * x:10.4f}" for x in v) + f"{10 * gap:10.4f}")
    vals, counts = np.unique(picks, return_counts=True)
    print("cross-validated delta:", dict(zip(vals.tolist(), counts.tolist())))


if __name__ == "__main__":
    main()
