"""Sweep seeds and worker counts, comparing every offloaded kernel against its
serial run. Prints one line per kernel and exits nonzero on any mismatch."""

import argparse
import sys
import time

from o2proxy import kernels as K
from o2proxy.archsim import CoreGroupSpec, spawn_core_group
from o2proxy.suites import SUITES, check_mode, execute, make_input, seed_for
from o2proxy.verify import compare, record


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--workers", default="1,2,4,8,16,32,64")
    ap.add_argument("--suite", action="append", choices=SUITES)
    ap.add_argument("--evp-subcycles", type=int, default=120)
    args = ap.parse_args(argv)

    workers = [int(w) for w in args.workers.split(",")]
    groups = {w: spawn_core_group(CoreGroupSpec(n_cpes=w)) for w in workers}
    bad = 0
    try:
        for suite in args.suite or SUITES:
            preset = "ne30" if suite.startswith("cam") else "ts015"
            dims = K.preset_dims(suite, preset) if suite != "prefix-sum" else (4096,)
            mode = check_mode(suite)
            t0 = time.perf_counter()
            mism = 0
            for seed in range(args.seeds):
                inp = make_input(suite, dims, seed_for(seed, suite, 0))
                ref = record("ref", execute(suite, inp, serial=True, group=groups[workers[0]],
                                            evp_subcycles=args.evp_subcycles))
                for w in workers:
                    out = execute(suite, inp, group=groups[w], evp_subcycles=args.evp_subcycles)
                    mism += not compare(ref, record("out", out), mode).ok
            bad += mism
            print(f"{suite:<11} {mode.kind:<4} runs={args.seeds * len(workers):<5} "
                  f"mismatches={mism} {time.perf_counter() - t0:.1f}s")
    finally:
        for g in groups.values():
            g.close()
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
