"""Wall-clock speedup of the physics kernel over worker counts (best of N).

Only meaningful on a host with several cores; on one core the threads
simply time-share.
"""

import argparse
import os
import time

from o2proxy import kernels as K
from o2proxy.archsim import CoreGroupSpec, spawn_core_group


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nchunks", type=int, default=4096)
    ap.add_argument("--workers", default="1,2,4,8")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    cols = K.ChunkedColumns.random((args.nchunks, 1, 32), 0)
    print(f"host cores: {len(os.sched_getaffinity(0))}")
    base = None
    for w in (int(x) for x in args.workers.split(",")):
        with spawn_core_group(CoreGroupSpec(n_cpes=w)) as g:
            K.physics_step(cols, group=g)
            best = float("inf")
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                K.physics_step(cols, group=g)
                best = min(best, time.perf_counter() - t0)
        base = base or best
        print(f"workers={w:<3} best={best * 1e3:8.2f} ms  speedup={base / best:5.2f}")


if __name__ == "__main__":
    main()
