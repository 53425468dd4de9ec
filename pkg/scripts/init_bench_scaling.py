"""Message counts and peak residency of flat vs hierarchical AlltoAllw, plus
staged Gatherv depth, over a range of rank counts. Writes CSV to stdout."""

import argparse
import csv
import sys

from o2proxy import initcomm as ic


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ranks", default="16,64,256,1024")
    ap.add_argument("--group-size", type=int, default=8)
    ap.add_argument("--fanout", type=int, default=4)
    ap.add_argument("--nbytes", type=int, default=8)
    ap.add_argument("--skip-flat-above", type=int, default=256,
                    help="the flat exchange is only simulated up to this many ranks")
    args = ap.parse_args(argv)

    w = csv.writer(sys.stdout)
    w.writerow(["ranks", "group_size", "flat_msgs", "hier_msgs", "hier_expected",
                "flat_peak_peers", "hier_peak_peers", "gatherv_stages"])
    for n in (int(x) for x in args.ranks.split(",")):
        topo = ic.RankTopology(n, args.group_size)
        plan = ic.AlltoAllwPlan.uniform(n, args.nbytes)
        _, hs = ic.hierarchical_alltoallw(topo, plan)
        if n <= args.skip_flat_above:
            _, fs = ic.flat_alltoallw(topo, plan)
            flat_msgs, flat_peers = fs.messages, max(fs.max_peers)
        else:
            flat_msgs, flat_peers = n * (n - 1), n - 1
        _, gs = ic.staged_gatherv(topo, 0, args.fanout, [b"x"] * n)
        w.writerow([n, args.group_size, flat_msgs, hs.messages,
                    ic.expected_hierarchical_messages(topo), flat_peers, max(hs.max_peers), gs.stages])


if __name__ == "__main__":
    main()
