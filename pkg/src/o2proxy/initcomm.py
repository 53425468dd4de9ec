"""Simulated-rank initialization collectives.

Ranks are asyncio tasks exchanging bytes over per-pair FIFO channels, so a
run is deterministic given its plan. Each redesigned collective has a flat
or naive counterpart used as an oracle, and everything is instrumented
(message counts, resident bytes, comparator operations, pass counts).
"""

from __future__ import annotations

import asyncio
import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from numbers import Integral
from typing import Sequence

import numpy as np

IO_STRIDE = 1000
MB = 1 << 20

_ENTRY = struct.Struct("<qqq")   # source rank, dest rank, length
_GATHER = struct.Struct("<qq")   # source rank, length


class MalformedPack(RuntimeError):
    pass


@dataclass(frozen=True)
class RankTopology:
    """Contiguous groups of ``group_size`` ranks; each group is led by its lowest rank."""

    n_ranks: int
    group_size: int = 1
    node_ids: tuple[bytes, ...] | None = None

    def __post_init__(self):
        if self.n_ranks < 1:
            raise ValueError("n_ranks must be >= 1")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.node_ids is not None:
            ids = tuple(_as_bytes(x) for x in self.node_ids)
            if len(ids) != self.n_ranks:
                raise ValueError("one node id per rank required")
            if len({len(x) for x in ids}) > 1:
                raise ValueError("node ids must all have the same length")
            object.__setattr__(self, "node_ids", ids)

    @property
    def n_groups(self) -> int:
        return -(-self.n_ranks // self.group_size)

    def group_of(self, rank: int) -> int:
        return rank // self.group_size

    def leader(self, group: int) -> int:
        return group * self.group_size

    def members(self, group: int) -> range:
        return range(group * self.group_size, min((group + 1) * self.group_size, self.n_ranks))

    def is_leader(self, rank: int) -> bool:
        return rank % self.group_size == 0


def _as_bytes(x) -> bytes:
    return x.encode() if isinstance(x, str) else bytes(x)


class AlltoAllwPlan:
    """Per-pair payloads: ``sizes[i, j]`` bytes travel from rank i to rank j."""

    def __init__(self, sizes, data: bytes | None = None, seed: int = 0):
        sizes = np.asarray(sizes, dtype=np.int64)
        if sizes.ndim != 2 or sizes.shape[0] != sizes.shape[1]:
            raise ValueError("sizes must be an N x N matrix")
        if (sizes < 0).any():
            raise ValueError("sizes must be non-negative")
        self.sizes = sizes
        flat = sizes.reshape(-1)
        self.offsets = (np.cumsum(flat) - flat).reshape(sizes.shape)
        total = int(flat.sum())
        if data is None:
            data = np.random.default_rng(seed).integers(0, 256, total, dtype=np.uint8).tobytes()
        if len(data) != total:
            raise ValueError(f"payload data has {len(data)} bytes, sizes need {total}")
        self.data = data
        self._sizes = sizes.tolist()
        self._offsets = self.offsets.tolist()

    @property
    def n(self) -> int:
        return self.sizes.shape[0]

    def payload(self, i: int, j: int) -> bytes:
        o = self._offsets[i][j]
        return self.data[o:o + self._sizes[i][j]]

    def send_volume(self, i: int) -> int:
        return int(self.sizes[i].sum())

    def recv_volume(self, j: int) -> int:
        return int(self.sizes[:, j].sum())

    @classmethod
    def uniform(cls, n: int, nbytes: int, seed: int = 0) -> "AlltoAllwPlan":
        return cls(np.full((n, n), nbytes, dtype=np.int64), seed=seed)

    @classmethod
    def random(cls, n: int, max_size: int = 32, zero_fraction: float = 0.3, seed: int = 0) -> "AlltoAllwPlan":
        rng = np.random.default_rng(seed)
        sizes = rng.integers(1, max_size + 1, (n, n))
        sizes[rng.random((n, n)) < zero_fraction] = 0
        return cls(sizes, seed=seed + 1)


@dataclass
class CommStats:
    n_ranks: int = 0
    messages: int = 0
    bytes_moved: int = 0
    max_resident_bytes: list[int] = field(default_factory=list)
    max_peers: list[int] = field(default_factory=list)
    comparator_ops: int = 0
    pass_count: int = 0
    stages: int = 0

    def to_dict(self, per_rank: bool = False) -> dict:
        d = asdict(self)
        if not per_rank:
            res = d.pop("max_resident_bytes")
            peers = d.pop("max_peers")
            d["peak_resident_bytes"] = max(res, default=0)
            d["peak_peers"] = max(peers, default=0)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(per_rank=True), **kw)


class SimNetwork:
    """In-memory point-to-point channels with per-rank accounting."""

    def __init__(self, n: int):
        self.n = n
        self._queues: dict[tuple[int, int], asyncio.Queue] = {}
        self._resident = [0] * n
        self._peers: list[set[int]] = [set() for _ in range(n)]
        self.stats = CommStats(n_ranks=n, max_resident_bytes=[0] * n, max_peers=[0] * n)

    def _q(self, src: int, dst: int) -> asyncio.Queue:
        q = self._queues.get((src, dst))
        if q is None:
            q = self._queues[(src, dst)] = asyncio.Queue()
        return q

    def _link(self, a: int, b: int):
        self._peers[a].add(b)
        self._peers[b].add(a)
        self.stats.max_peers[a] = len(self._peers[a])
        self.stats.max_peers[b] = len(self._peers[b])

    async def send(self, src: int, dst: int, payload: bytes) -> None:
        if src == dst:
            raise ValueError("self-sends are local copies, not messages")
        self.stats.messages += 1
        self.stats.bytes_moved += len(payload)
        self._link(src, dst)
        self._q(src, dst).put_nowait(payload)

    async def recv(self, dst: int, src: int) -> bytes:
        return await self._q(src, dst).get()

    def hold(self, rank: int, nbytes: int) -> None:
        self._resident[rank] += nbytes
        if self._resident[rank] > self.stats.max_resident_bytes[rank]:
            self.stats.max_resident_bytes[rank] = self._resident[rank]

    def release(self, rank: int, nbytes: int) -> None:
        self._resident[rank] -= nbytes


def _run_ranks(n: int, make_coro) -> SimNetwork:
    net = SimNetwork(n)

    async def main():
        await asyncio.gather(*(make_coro(net, r) for r in range(n)))

    asyncio.run(main())
    return net


# -- AlltoAllw -----------------------------------------------------------------

Delivery = list  # delivery[dst][src] -> bytes


def flat_alltoallw(topo: RankTopology, plan: AlltoAllwPlan) -> tuple[Delivery, CommStats]:
    """Direct pairwise exchange; the reference the hierarchical scheme must match."""
    n = _check_plan(topo, plan)
    sizes = plan._sizes
    delivery: Delivery = [[b""] * n for _ in range(n)]

    async def rank(net: SimNetwork, i: int):
        net.hold(i, plan.send_volume(i) + plan.recv_volume(i))
        for j in range(n):
            if j != i and sizes[i][j]:
                await net.send(i, j, plan.payload(i, j))
        delivery[i][i] = plan.payload(i, i)
        for src in range(n):
            if src != i and sizes[src][i]:
                delivery[i][src] = await net.recv(i, src)

    net = _run_ranks(n, rank)
    return delivery, net.stats


def pack_entries(entries) -> bytes:
    """Concatenate (src, dst, payload) entries, each behind a 24-byte header."""
    parts = []
    for src, dst, payload in entries:
        parts.append(_ENTRY.pack(src, dst, len(payload)))
        parts.append(payload)
    return b"".join(parts)


def unpack_entries(buf: bytes) -> list[tuple[int, int, bytes]]:
    out = []
    pos, end = 0, len(buf)
    while pos < end:
        if end - pos < _ENTRY.size:
            raise MalformedPack(f"truncated header at byte {pos}")
        src, dst, length = _ENTRY.unpack_from(buf, pos)
        pos += _ENTRY.size
        if length < 0 or pos + length > end:
            raise MalformedPack(f"entry {src}->{dst} claims {length} bytes, {end - pos} remain")
        out.append((src, dst, buf[pos:pos + length]))
        pos += length
    return out


def hierarchical_alltoallw(topo: RankTopology, plan: AlltoAllwPlan) -> tuple[Delivery, CommStats]:
    """Three-phase exchange through group leaders.

    1. every rank packs its outgoing entries into one message to its leader;
    2. leaders swap one aggregated message per destination group;
    3. leaders scatter one packed message to each member.

    Empty messages are suppressed; since the plan is known everywhere, every
    rank can tell which messages to expect.
    """
    n = _check_plan(topo, plan)
    sz = plan._sizes
    nz = plan.sizes > 0
    np.fill_diagonal(nz, False)
    sends_any = nz.any(axis=1)
    recvs_any = nz.any(axis=0)
    G = topo.n_groups
    grp = np.array([topo.group_of(r) for r in range(n)])
    # group-to-group traffic, excluding each rank's self-pair
    g2g = np.zeros((G, G), dtype=bool)
    ii, jj = np.nonzero(nz)
    g2g[grp[ii], grp[jj]] = True
    delivery: Delivery = [[b""] * n for _ in range(n)]

    def deliver(j: int, entries):
        for src, dst, payload in entries:
            if dst != j:
                raise MalformedPack(f"rank {j} received an entry addressed to {dst}")
            if len(payload) != sz[src][dst]:
                raise MalformedPack(f"entry {src}->{dst} has {len(payload)} bytes, plan says {sz[src][dst]}")
            delivery[j][src] = payload

    async def rank(net: SimNetwork, i: int):
        g = topo.group_of(i)
        lead = topo.leader(g)
        row = sz[i]
        own = [(i, j, plan.payload(i, j)) for j in range(n) if j != i and row[j]]
        delivery[i][i] = plan.payload(i, i)
        net.hold(i, row[i])
        if i != lead:
            if sends_any[i]:
                vol = plan.send_volume(i) - row[i]
                net.hold(i, vol)
                await net.send(i, lead, pack_entries(own))
                net.release(i, vol)
            if recvs_any[i]:
                entries = unpack_entries(await net.recv(i, lead))
                net.hold(i, sum(len(p) for _, _, p in entries))
                deliver(i, entries)
            return

        # leader: gather the group's outgoing entries
        pool = list(own)
        for m in topo.members(g):
            if m != lead and sends_any[m]:
                pool.extend(unpack_entries(await net.recv(lead, m)))
        net.hold(i, sum(len(p) for _, _, p in pool))
        by_group: dict[int, list] = {}
        for e in pool:
            by_group.setdefault(topo.group_of(e[1]), []).append(e)
        for h in range(G):
            if h != g and g2g[g, h]:
                await net.send(lead, topo.leader(h), pack_entries(by_group.get(h, [])))
        inbound = by_group.get(g, [])
        for h in range(G):
            if h != g and g2g[h, g]:
                got = unpack_entries(await net.recv(lead, topo.leader(h)))
                net.hold(i, sum(len(p) for _, _, p in got))
                inbound.extend(got)
        per_member: dict[int, list] = {}
        for e in inbound:
            per_member.setdefault(e[1], []).append(e)
        for m in topo.members(g):
            entries = sorted(per_member.get(m, []), key=lambda e: e[0])
            if m == lead:
                deliver(m, entries)
            elif recvs_any[m]:
                await net.send(lead, m, pack_entries(entries))

    net = _run_ranks(n, rank)
    return delivery, net.stats


def expected_hierarchical_messages(topo: RankTopology) -> int:
    """2 * sum_g (S_g - 1) + G (G - 1), for traffic between every pair of ranks."""
    G = topo.n_groups
    return 2 * sum(len(topo.members(g)) - 1 for g in range(G)) + G * (G - 1)


def _check_plan(topo: RankTopology, plan: AlltoAllwPlan) -> int:
    if plan.n != topo.n_ranks:
        raise ValueError(f"plan is for {plan.n} ranks, topology has {topo.n_ranks}")
    return topo.n_ranks


# -- Gatherv -------------------------------------------------------------------

def ceil_log(n: int, base: int) -> int:
    """Smallest s with base**s >= n (0 for n == 1)."""
    s, reach = 0, 1
    while reach < n:
        reach *= base
        s += 1
    return s


def flat_gatherv(payloads: Sequence[bytes]) -> bytes:
    return b"".join(bytes(p) for p in payloads)


def staged_gatherv(topo: RankTopology, root: int, fanout: int,
                   payloads: Sequence[bytes]) -> tuple[bytes, CommStats]:
    """Gather along an F-ary (k-nomial) tree rooted at ``root``.

    In stage s, every rank whose relative id is a multiple of F**s but not of
    F**(s+1) sends its packed subtree to the rank F**(s+1) below it, so the
    gather finishes in ceil(log_F N) stages.
    """
    n = topo.n_ranks
    if fanout < 2:
        raise ValueError("fanout must be >= 2")
    if not 0 <= root < n:
        raise ValueError("root out of range")
    if len(payloads) != n:
        raise ValueError("one payload per rank required")
    stages_used: set[int] = set()
    result: list[bytes] = []

    async def rank(net: SimNetwork, r: int):
        v = (r - root) % n
        parts = [_GATHER.pack(r, len(payloads[r])), bytes(payloads[r])]
        held = len(payloads[r])
        net.hold(r, held)
        step, s = 1, 0
        while step < n:
            span = step * fanout
            if v % span:
                parent = (v - v % span + root) % n
                stages_used.add(s)
                await net.send(r, parent, b"".join(parts))
                net.release(r, held)
                return
            for c in range(1, fanout):
                child = v + c * step
                if child < n:
                    blob = await net.recv(r, (child + root) % n)
                    net.hold(r, len(blob))
                    held += len(blob)
                    parts.append(blob)
            step, s = span, s + 1
        # root: reorder subtrees by absolute rank
        buf = b"".join(parts)
        pieces = {}
        pos = 0
        while pos < len(buf):
            src, length = _GATHER.unpack_from(buf, pos)
            pos += _GATHER.size
            pieces[src] = buf[pos:pos + length]
            pos += length
        if sorted(pieces) != list(range(n)):
            raise MalformedPack("root did not receive exactly one piece per rank")
        result.append(b"".join(pieces[k] for k in range(n)))

    net = _run_ranks(n, rank)
    net.stats.stages = len(stages_used)
    return result[0], net.stats


# -- node id -> rank mapping ---------------------------------------------------

def _quicksort(keys: list, ops: list[int]) -> None:
    """In-place quicksort (median-of-three, Hoare partition, insertion sort
    below 16 items); ops[0] counts key comparisons."""
    c = 0
    stack = [(0, len(keys) - 1)]
    while stack:
        lo, hi = stack.pop()
        while hi - lo > 16:
            mid = (lo + hi) // 2
            c += 1
            if keys[mid] < keys[lo]:
                keys[mid], keys[lo] = keys[lo], keys[mid]
            c += 1
            if keys[hi] < keys[mid]:
                keys[hi], keys[mid] = keys[mid], keys[hi]
                c += 1
                if keys[mid] < keys[lo]:
                    keys[mid], keys[lo] = keys[lo], keys[mid]
            pivot = keys[mid]
            i, j = lo, hi
            while i <= j:
                while True:
                    c += 1
                    if not keys[i] < pivot:
                        break
                    i += 1
                while True:
                    c += 1
                    if not pivot < keys[j]:
                        break
                    j -= 1
                if i <= j:
                    keys[i], keys[j] = keys[j], keys[i]
                    i += 1
                    j -= 1
            if j - lo < hi - i:
                stack.append((i, hi))
                hi = j
            else:
                stack.append((lo, j))
                lo = i
        for a in range(lo + 1, hi + 1):
            item = keys[a]
            b = a - 1
            while b >= lo:
                c += 1
                if not item < keys[b]:
                    break
                keys[b + 1] = keys[b]
                b -= 1
            keys[b + 1] = item
    ops[0] += c


def _check_ids(node_ids) -> list[bytes]:
    ids = [_as_bytes(x) for x in node_ids]
    if len({len(x) for x in ids}) > 1:
        raise ValueError("node ids must all have the same length")
    return ids


def map_node_to_rank(node_ids) -> tuple[list[int], list[int], CommStats]:
    """Per rank: (ordinal of its node among sorted distinct ids, index among the
    node's ranks by rank order). Sorting (id, rank) keys gives both at once."""
    ids = _check_ids(node_ids)
    n = len(ids)
    keys = [(x, r) for r, x in enumerate(ids)]
    ops = [0]
    _quicksort(keys, ops)
    ordinal, within = [0] * n, [0] * n
    node, pos = -1, 0
    prev = None
    for x, r in keys:
        if prev is None or x != prev:
            node, pos = node + 1, 0
        else:
            pos += 1
        if prev is not None:
            ops[0] += 1
        prev = x
        ordinal[r], within[r] = node, pos
    return ordinal, within, CommStats(n_ranks=n, comparator_ops=ops[0])


def map_node_to_rank_naive(node_ids, count_only: bool = False):
    """Quadratic reference. With ``count_only`` the comparison count is derived
    from the same loop bounds without executing the comparisons."""
    ids = _check_ids(node_ids)
    n = len(ids)
    if count_only:
        first_pos: dict[bytes, int] = {}
        ops = 0
        for x in ids:
            if x in first_pos:
                ops += first_pos[x] + 1
            else:
                ops += len(first_pos)
                first_pos[x] = len(first_pos)
        d = len(first_pos)
        ops += n * d + n * (n - 1) // 2
        return None, None, CommStats(n_ranks=n, comparator_ops=ops)

    ops = 0
    distinct: list[bytes] = []
    for x in ids:
        for d in distinct:
            ops += 1
            if d == x:
                break
        else:
            distinct.append(x)
    ordinal = []
    for x in ids:
        k = 0
        for d in distinct:
            ops += 1
            if d < x:
                k += 1
        ordinal.append(k)
    within = []
    for i, x in enumerate(ids):
        k = 0
        for j in range(i):
            ops += 1
            if ids[j] == x:
                k += 1
        within.append(k)
    return ordinal, within, CommStats(n_ranks=n, comparator_ops=ops)


# -- clump distribution --------------------------------------------------------

def _boundaries(weights, n_procs: int):
    total = sum(weights) if weights else 0
    if all(isinstance(w, Integral) for w in weights):
        total = int(total)
        return lambda p: total * p // n_procs
    return lambda p: total * p / n_procs


def _check_clumps(n_clumps: int, weights, n_procs: int) -> list:
    if n_procs <= 0:
        raise ValueError("n_procs must be positive")
    weights = list(weights)
    if len(weights) != n_clumps:
        raise ValueError("one weight per clump required")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    return [w.item() if hasattr(w, "item") else w for w in weights]


def distribute_clumps(n_clumps: int, weights, n_procs: int) -> tuple[list[int], CommStats]:
    """Contiguous weighted split in one pass: clump c goes to the last process p
    whose boundary floor(W p / n_procs) does not exceed the weight before c."""
    weights = _check_clumps(n_clumps, weights, n_procs)
    bound = _boundaries(weights, n_procs)
    owner = [0] * n_clumps
    passes = 0
    p = 0
    before = 0
    for c in range(n_clumps):
        while p + 1 < n_procs and bound(p + 1) <= before:
            p += 1
            passes += 1
        owner[c] = p
        before += weights[c]
        passes += 1
    return owner, CommStats(n_ranks=n_procs, pass_count=passes)


def distribute_clumps_naive(n_clumps: int, weights, n_procs: int) -> tuple[list[int], CommStats]:
    """Per-clump rescan of the prefix and of every process boundary."""
    weights = _check_clumps(n_clumps, weights, n_procs)
    bound = _boundaries(weights, n_procs)
    owner = []
    passes = 0
    for c in range(n_clumps):
        before = 0
        for i in range(c):
            before += weights[i]
            passes += 1
        p = 0
        for q in range(n_procs):
            passes += 1
            if bound(q) <= before:
                p = q
        owner.append(p)
    return owner, CommStats(n_ranks=n_procs, pass_count=passes)


# -- I/O layout ----------------------------------------------------------------

def choose_io_processes(n_ranks: int, stride: int = IO_STRIDE) -> list[int]:
    """Lowest rank of each consecutive block of ``stride`` ranks."""
    if n_ranks < 1:
        raise ValueError("n_ranks must be >= 1")
    return list(range(0, n_ranks, stride))


# (stripe_count, stripe_size) per component; larger counts for components
# with larger initialization files
IO_CONFIGS = {
    "default": (1, 1 * MB),
    "atm": (32, 4 * MB),
    "ocn": (16, 4 * MB),
    "ice": (8, 1 * MB),
    "lnd": (4, 1 * MB),
    "cpl": (8, 4 * MB),
}


def emit_io_config(component: str = "default") -> tuple[int, int, float]:
    try:
        count, size = IO_CONFIGS[component.lower()]
    except KeyError:
        raise ValueError(f"unknown component {component!r}; expected one of {sorted(IO_CONFIGS)}") from None
    return count, size, 1 / IO_STRIDE


# -- benchmark scenarios -------------------------------------------------------

@dataclass
class Scenario:
    n: int = 64
    group_size: int = 8
    fanout: int = 4
    sizes: str = "uniform"  # uniform | random
    nbytes: int = 8
    zero_fraction: float = 0.0
    seed: int = 0
    verify: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown scenario keys: {sorted(bad)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def run_benchmark(sc: Scenario) -> dict:
    """Flat vs hierarchical AlltoAllw and staged Gatherv for one scenario."""
    topo = RankTopology(sc.n, sc.group_size)
    if sc.sizes == "uniform":
        plan = AlltoAllwPlan.uniform(sc.n, sc.nbytes, seed=sc.seed)
    elif sc.sizes == "random":
        plan = AlltoAllwPlan.random(sc.n, max(sc.nbytes, 1), sc.zero_fraction, seed=sc.seed)
    else:
        raise ValueError(f"unknown size distribution {sc.sizes!r}")
    hier, hs = hierarchical_alltoallw(topo, plan)
    out = {"scenario": asdict(sc), "hierarchical": hs.to_dict()}
    if sc.verify:
        flat, fs = flat_alltoallw(topo, plan)
        out["flat"] = fs.to_dict()
        out["delivery_identical"] = flat == hier
    rng = np.random.default_rng(sc.seed)
    payloads = [rng.integers(0, 256, int(k), dtype=np.uint8).tobytes()
                for k in rng.integers(0, max(sc.nbytes, 1) + 1, sc.n)]
    buf, gs = staged_gatherv(topo, 0, sc.fanout, payloads)
    out["gatherv"] = gs.to_dict()
    out["gatherv"]["expected_stages"] = ceil_log(sc.n, sc.fanout)
    out["gatherv"]["identical"] = buf == flat_gatherv(payloads)
    out["expected_hierarchical_messages"] = expected_hierarchical_messages(topo)
    out["expected_flat_messages"] = sc.n * (sc.n - 1)
    return out


def stats_to_csv(result: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "messages", "bytes_moved", "peak_resident_bytes", "peak_peers", "stages"])
    for scheme in ("flat", "hierarchical", "gatherv"):
        s = result.get(scheme)
        if s:
            w.writerow([scheme, s["messages"], s["bytes_moved"], s["peak_resident_bytes"],
                        s["peak_peers"], s["stages"]])
    return buf.getvalue()

