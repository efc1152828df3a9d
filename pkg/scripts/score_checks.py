"""Zero mean, orthogonality and double robustness of the score under oracle nuisances."""

import sys

from _common import finish, parser

from ocppe import experiments as ex

if __name__ == "__main__":
    ap = parser(__doc__)
    ap.add_argument("--n", type=int, default=1_000_000)
    a = ap.parse_args()
    r = ex.score_property_suite(n=a.n)
    print(f"theta0 {r['theta0']:.6f}  mean psi {r['mean_psi']:+.3e}  se {r['se']:.3e}  ok {r['a_ok']}")
    for b in r["b_rows"]:
        print(f"  {b['direction']:>3}  slope {b['slope']:+.3e} (se {b['slope_se']:.2e})  "
              f"curvature {b['curvature']:+.3e}  ok {b['ok']}")
    print(f"  plug-in F slope {r['naive_slope_F']:+.3e} (se {r['naive_slope_se']:.2e})")
    for c in r["c_rows"]:
        print(f"  {c['case']}: mean psi {c['mean_psi']:+.3e} (se {c['se']:.2e})")
    sys.exit(finish(r, a.json))
