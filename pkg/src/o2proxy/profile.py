"""Region timers, busy/idle breakdowns and climate throughput metrics.

Each thread records into its own timer tree; trees are merged by region
path at report time. Times are kept as integer nanoseconds so merging is
exact and order-independent.
"""

from __future__ import annotations

import csv
import io
import json
import threading
import time
from dataclasses import dataclass
from typing import Iterator

CATEGORIES = ("MPE_COMPUTE", "CPE_COMPUTE", "COMM", "IO", "IDLE")
SECONDS_PER_DAY = 86400.0


class ProfileError(RuntimeError):
    pass


class MismatchedExit(ProfileError):
    pass


class OpenRegions(ProfileError):
    pass


class Region:
    __slots__ = ("name", "category", "inclusive_ns", "calls", "children", "parent")

    def __init__(self, name: str, category: str, parent: "Region | None" = None):
        if category not in CATEGORIES and parent is not None:
            raise ValueError(f"unknown category {category!r}; expected one of {CATEGORIES}")
        self.name = name
        self.category = category
        self.inclusive_ns = 0
        self.calls = 0
        self.children: dict[tuple[str, str], Region] = {}
        self.parent = parent

    @property
    def inclusive(self) -> float:
        return self.inclusive_ns * 1e-9

    @property
    def exclusive_ns(self) -> int:
        return self.inclusive_ns - sum(c.inclusive_ns for c in self.children.values())

    @property
    def exclusive(self) -> float:
        return self.exclusive_ns * 1e-9

    def child(self, name: str, category: str) -> "Region":
        # same name under different categories (MPE vs CPE side) stays distinct
        node = self.children.get((name, category))
        if node is None:
            node = self.children[(name, category)] = Region(name, category, self)
        return node

    def walk(self, path: str = "") -> Iterator[tuple[str, "Region"]]:
        for c in self.children.values():
            p = f"{path}/{c.name}" if path else c.name
            yield p, c
            yield from c.walk(p)

    def __repr__(self):
        return f"Region({self.name!r}, {self.category}, incl={self.inclusive:.6f}s, calls={self.calls})"


class _Tree:
    def __init__(self):
        self.root = Region("<root>", "MPE_COMPUTE")
        self.stack: list[tuple[Region, int]] = []


class _Timed:
    __slots__ = ("prof", "name", "category")

    def __init__(self, prof: "Profiler", name: str, category: str):
        self.prof = prof
        self.name = name
        self.category = category

    def __enter__(self):
        self.prof.region_enter(self.name, self.category)
        return self

    def __exit__(self, *exc):
        self.prof.region_exit(self.name)
        return False


class Profiler:
    def __init__(self):
        self._local = threading.local()
        self._trees: list[_Tree] = []
        self._lock = threading.Lock()
        self._deferred: _Tree | None = None

    def _tree(self) -> _Tree:
        tree = getattr(self._local, "tree", None)
        if tree is None:
            tree = self._local.tree = _Tree()
            with self._lock:
                self._trees.append(tree)
        return tree

    def region_enter(self, name: str, category: str) -> None:
        tree = self._tree()
        parent = tree.stack[-1][0] if tree.stack else tree.root
        tree.stack.append((parent.child(name, category), time.perf_counter_ns()))

    def region_exit(self, name: str) -> None:
        now = time.perf_counter_ns()
        tree = self._tree()
        if not tree.stack or tree.stack[-1][0].name != name:
            open_name = tree.stack[-1][0].name if tree.stack else None
            raise MismatchedExit(f"exit of {name!r} while {open_name!r} is open")
        node, t0 = tree.stack.pop()
        node.inclusive_ns += now - t0
        node.calls += 1

    def region(self, name: str, category: str) -> _Timed:
        return _Timed(self, name, category)

    def add_sample(self, path, ns: int, calls: int) -> None:
        """Add an already measured span at ``path``, a sequence of (name, category)
        pairs from the top level down. Lets a caller time many workers itself
        and hand over the totals once."""
        with self._lock:
            if self._deferred is None:
                self._deferred = _Tree()
                self._trees.append(self._deferred)
            node = self._deferred.root
            for name, category in path:
                node = node.child(name, category)
            node.inclusive_ns += int(ns)
            node.calls += int(calls)

    def reset(self) -> None:
        with self._lock:
            self._trees.clear()
            self._deferred = None
        self._local = threading.local()

    def merged(self) -> Region:
        """Merge all per-thread trees; raises OpenRegions if any region is still open."""
        with self._lock:
            trees = list(self._trees)
        for t in trees:
            if t.stack:
                raise OpenRegions(f"regions still open: {[n.name for n, _ in t.stack]}")
        return merge_trees([t.root for t in trees])

    def report(self) -> dict:
        return breakdown_report(self.merged())


def merge_trees(roots) -> Region:
    out = Region("<root>", "MPE_COMPUTE")

    def add(dst: Region, src: Region):
        dst.inclusive_ns += src.inclusive_ns
        dst.calls += src.calls
        for c in src.children.values():
            add(dst.child(c.name, c.category), c)

    for r in roots:
        for c in r.children.values():
            add(out.child(c.name, c.category), c)
    out.inclusive_ns = sum(c.inclusive_ns for c in out.children.values())
    return out


def breakdown_report(root: Region) -> dict:
    """Per-category (exclusive time) and per-component (top-level inclusive) shares."""
    nodes = list(root.walk())
    per_cat = {c: 0 for c in CATEGORIES}
    for _, node in nodes:
        per_cat[node.category] += node.exclusive_ns
    total = sum(per_cat.values())
    if total == 0 and nodes:
        # every region was too short to register; fall back to call counts
        per_cat = {c: 0 for c in CATEGORIES}
        for _, node in nodes:
            if not node.children:
                per_cat[node.category] += node.calls
        total = sum(per_cat.values())

    def pct(x):
        return 100.0 * x / total if total else 0.0

    top: dict[str, int] = {}
    for c in root.children.values():
        top[c.name] = top.get(c.name, 0) + c.inclusive_ns
    top_total = sum(top.values())
    return {
        "total_seconds": total * 1e-9,
        "categories": {c: {"seconds": per_cat[c] * 1e-9, "percent": pct(per_cat[c])} for c in CATEGORIES},
        "components": {
            name: {"seconds": ns * 1e-9, "percent": 100.0 * ns / top_total if top_total else 0.0}
            for name, ns in top.items()
        },
        "regions": [
            {"path": p, "category": n.category, "inclusive": n.inclusive,
             "exclusive": n.exclusive, "calls": n.calls}
            for p, n in nodes
        ],
    }


def report_to_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "name", "category", "inclusive_s", "exclusive_s", "calls", "percent"])
    for cat, v in report["categories"].items():
        w.writerow(["category", cat, cat, "", f"{v['seconds']:.9f}", "", f"{v['percent']:.4f}"])
    for name, v in report["components"].items():
        w.writerow(["component", name, "", f"{v['seconds']:.9f}", "", "", f"{v['percent']:.4f}"])
    for r in report["regions"]:
        w.writerow(["region", r["path"], r["category"], f"{r['inclusive']:.9f}",
                    f"{r['exclusive']:.9f}", r["calls"], ""])
    return buf.getvalue()


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2)


@dataclass(frozen=True)
class ThroughputMetric:
    simulated_days: float
    wall_seconds: float

    @property
    def sdpd(self) -> float:
        return compute_sdpd(self.simulated_days, self.wall_seconds)

    @property
    def sypd(self) -> float:
        return self.sdpd / 365.0


def compute_sdpd(simulated_days: float, wall_seconds: float) -> float:
    """Simulated days per wall-clock day."""
    if not wall_seconds > 0:
        raise ValueError(f"wall_seconds must be positive, got {wall_seconds}")
    return simulated_days * SECONDS_PER_DAY / wall_seconds


def scaling_efficiency(base: tuple[float, float], scaled: tuple[float, float]) -> float:
    """Strong-scaling efficiency from (procs, sdpd) points."""
    (p0, s0), (p1, s1) = base, scaled
    if min(p0, s0, p1, s1) <= 0:
        raise ValueError("process counts and throughputs must be positive")
    return (s1 / s0) / (p1 / p0)
