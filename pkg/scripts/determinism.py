"""Run each CLI command three times (threads 1, 1, 2) and compare output bytes."""

import sys

from _common import finish, parser

from ocppe import experiments as ex

if __name__ == "__main__":
    a = parser(__doc__).parse_args()
    r = ex.determinism_check()
    for cmd, v in r["commands"].items():
        print(f"{cmd}: {'identical' if v['identical'] else 'DIFFERENT'} {v['files']}")
    sys.exit(finish(r, a.json))
