"""Naive plug-in vs debiased estimator at n=500, p_x=30 over two designs and three ranges."""

import sys

from _common import finish, parser

from ocppe import experiments as ex

if __name__ == "__main__":
    ap = parser(__doc__)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cache", default="runs/oracle_cache", help="directory for the true-theta cache")
    a = ap.parse_args()
    r = ex.scaled_study(reps=a.reps, seed=a.seed, n_jobs=a.jobs, cache_dir=a.cache)
    print(r["table"])
    for c in r["cells"]:
        print({k: v for k, v in c.items() if k != "table"})
    sys.exit(finish(r, a.json))
