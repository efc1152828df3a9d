"""How often policy learning picks the X1=1 rule on the policy design."""

import sys

from _common import finish, parser

from ocppe import experiments as ex

if __name__ == "__main__":
    ap = parser(__doc__)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--K", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    r = ex.policy_selection(reps=a.reps, n=a.n, K=a.K, seed=a.seed, n_jobs=a.jobs)
    print(f"hits {r['hits']}/{r['reps']}  selections {r['selections']}")
    print(f"V(0)=0 and V(1)=theta exact: {r['identities_exact']}  "
          f"max complement error {r['max_complement_error']:.2e}")
    sys.exit(finish(r, a.json))
