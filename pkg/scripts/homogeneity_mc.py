"""Bootstrap SE ratio plus size and power of the homogeneity test."""

import sys

from _common import finish, parser

from ocppe import experiments as ex

if __name__ == "__main__":
    ap = parser(__doc__)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--B", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    se = ex.bootstrap_se_check()
    print(f"bootstrap SE {se['se_bootstrap']:.5f}  analytic {se['se_analytic']:.5f}  ratio {se['ratio']:.3f}")
    hp = ex.homogeneity_size_power(reps=a.reps, n=a.n, B=a.B, seed=a.seed, n_jobs=a.jobs, progress=print)
    sys.exit(finish({"bootstrap": se, **hp, "passed": se["passed"] and hp["passed"]}, a.json))
