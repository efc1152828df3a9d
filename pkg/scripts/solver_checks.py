"""Riesz solver and distribution-regression checks (fast, about half a minute)."""

import sys

from _common import finish, parser

from ocppe import experiments as ex

if __name__ == "__main__":
    a = parser(__doc__).parse_args()
    rz = ex.riesz_checks()
    dr = ex.distreg_checks()
    for name, res in (("riesz", rz), ("distreg", dr)):
        print(name)
        for k, v in res.items():
            print(f"  {k}: {v}")
    sys.exit(finish({"riesz": rz, "distreg": dr, "passed": rz["passed"] and dr["passed"]}, a.json))
