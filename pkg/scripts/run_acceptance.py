"""Run every acceptance check and print one PASS/FAIL line each; exit 1 if any fails."""
import sys
import time

from rbsde_lab.acceptance import CRITERIA


def main() -> int:
    failed = 0
    for name, check in CRITERIA:
        t0 = time.perf_counter()
        res = check()
        failed += not res.passed
        print(f"{'PASS' if res.passed else 'FAIL'} criterion {name} ({time.perf_counter() - t0:.1f}s): {res.detail}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
