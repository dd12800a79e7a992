"""Small helpers shared by the experiment scripts."""
import time

import numpy as np

from hhoglb.adapt import observed_rate


def print_history(hist, ref=None):
    cols = ("level", "ndof", "lambda_h", "glb", "lambda_C", "certified")
    print(" ".join(f"{c:>14s}" for c in cols) + ("      bracket" if ref is not None else ""))
    for r in hist.reports:
        line = f"{r.level:14d} {r.ndof:14d} {r.lambda_h:14.9g} {r.glb:14.9g} {r.lambda_C:14.9g} {int(r.certified):14d}"
        if ref is not None:
            line += f" {str(r.glb <= ref <= r.lambda_C):>12s}"
        print(line)
    print(f"stop: {hist.stop_reason}")


def rates(hist, last=4):
    cert = hist.column("certified") > 0
    err = (hist.column("lambda_C") - hist.column("glb"))[cert]
    n = hist.column("ndof")[cert]
    if len(n) < 2:
        return float("nan"), float("nan")
    return observed_rate(n, err, last=2), observed_rate(n, err, last=min(last, len(n)))


class Timer:
    def __enter__(self):
        self.t = time.perf_counter()
        return self

    def __exit__(self, *exc):
        print(f"[{time.perf_counter() - self.t:.1f} s]")


np.set_printoptions(precision=10)
