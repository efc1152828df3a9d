import argparse
import json
import sys
from pathlib import Path


def parser(description):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--json", type=Path, help="write the full result dict here")
    ap.add_argument("--jobs", type=int, help="worker processes (default: OCPPE_THREADS or all cores)")
    return ap


def finish(result, path):
    flag = "PASS" if result.get("passed") else "FAIL"
    print(f"overall: {flag}")
    if path:
        path.write_text(json.dumps(result, indent=2, default=str))
        print(f"wrote {path}")
    return 0 if result.get("passed") else 1


if __name__ == "__main__":
    sys.exit("helper module, run one of the other scripts")
