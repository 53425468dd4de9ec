import csv
import io
import json
import threading
import time

import pytest
from hypothesis import given, strategies as st

from o2proxy.profile import (
    CATEGORIES,
    MismatchedExit,
    OpenRegions,
    Profiler,
    ThroughputMetric,
    breakdown_report,
    compute_sdpd,
    merge_trees,
    report_to_csv,
    scaling_efficiency,
)


def test_empty_region_is_tiny():
    p = Profiler()
    p.region_enter("a", "IO")
    p.region_exit("a")
    root = p.merged()
    (a,) = root.children.values()
    assert a.calls == 1 and 0 <= a.inclusive < 0.01


def test_nested_child_within_parent():
    p = Profiler()
    with p.region("A", "MPE_COMPUTE"):
        with p.region("B", "COMM"):
            time.sleep(0.002)
    a = p.merged().children[("A", "MPE_COMPUTE")]
    b = a.children[("B", "COMM")]
    assert b.inclusive <= a.inclusive
    assert 0 <= a.exclusive <= a.inclusive


def test_mismatched_exit():
    p = Profiler()
    p.region_enter("a", "IO")
    with pytest.raises(MismatchedExit):
        p.region_exit("b")
    with pytest.raises(MismatchedExit):
        Profiler().region_exit("x")


def test_open_regions_block_report():
    p = Profiler()
    p.region_enter("a", "IO")
    with pytest.raises(OpenRegions):
        p.report()


def test_unknown_category():
    with pytest.raises(ValueError):
        Profiler().region_enter("a", "GPU")


def test_single_region_is_all_of_its_category():
    p = Profiler()
    with p.region("io", "IO"):
        time.sleep(0.001)
    rep = p.report()
    assert rep["categories"]["IO"]["percent"] == pytest.approx(100.0)
    assert set(rep["categories"]) == set(CATEGORIES)


def test_equal_siblings_split_evenly():
    p = Profiler()
    for name in ("x", "y"):
        with p.region(name, "CPE_COMPUTE"):
            time.sleep(0.05)
    comps = p.report()["components"]
    assert comps["x"]["percent"] == pytest.approx(50.0, abs=5.0)
    assert comps["x"]["percent"] + comps["y"]["percent"] == pytest.approx(100.0)


def _tree(spec):
    # spec: list of (name, category, ns, children)
    p = Profiler()
    root = p._tree().root

    def build(parent, items):
        for name, cat, ns, kids in items:
            node = parent.child(name, cat)
            node.inclusive_ns += ns
            node.calls += 1
            build(node, kids)

    build(root, spec)
    return root


tree_spec = st.recursive(
    st.just([]),
    lambda kids: st.lists(
        st.tuples(st.sampled_from("abc"), st.sampled_from(CATEGORIES), st.integers(0, 10**6), kids),
        max_size=3,
    ),
    max_leaves=8,
)


def _fix_inclusive(spec):
    # parents must cover their children
    out = []
    for name, cat, ns, kids in spec:
        kids = _fix_inclusive(kids)
        out.append((name, cat, ns + sum(k[2] for k in kids), kids))
    return out


@given(st.lists(tree_spec.map(_fix_inclusive), min_size=1, max_size=4))
def test_merge_is_order_independent(specs):
    roots = [_tree(s) for s in specs]
    fwd = breakdown_report(merge_trees(roots))
    rev = breakdown_report(merge_trees(list(reversed(roots))))
    key = lambda r: sorted((x["path"], x["category"], x["calls"], x["inclusive"]) for x in r["regions"])
    assert key(fwd) == key(rev)
    assert fwd["categories"] == rev["categories"]
    total = sum(v["percent"] for v in fwd["categories"].values())
    assert total == 0 or abs(total - 100.0) <= 0.01


def test_per_thread_trees_merge():
    p = Profiler()

    def work():
        with p.region("k", "CPE_COMPUTE"):
            pass

    ts = [threading.Thread(target=work) for _ in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    (node,) = p.merged().children.values()
    assert node.calls == 4


def test_csv_and_json_export():
    p = Profiler()
    with p.region("a", "IO"):
        pass
    rep = p.report()
    rows = list(csv.DictReader(io.StringIO(report_to_csv(rep))))
    assert {r["kind"] for r in rows} == {"category", "component", "region"}
    assert json.loads(json.dumps(rep))["regions"][0]["path"] == "a"


def test_sdpd_basics():
    assert compute_sdpd(1, 86400) == 1.0
    m = ThroughputMetric(365, 86400)
    assert m.sdpd == 365.0 and m.sypd == 1.0
    for bad in (0, -1):
        with pytest.raises(ValueError):
            compute_sdpd(1, bad)


def test_scaling_efficiency():
    assert scaling_efficiency((10, 5), (10, 5)) == 1.0
    assert scaling_efficiency((10, 5), (20, 10)) == 1.0
    assert 0.37 <= scaling_efficiency((3125, 14.6), (150000, 265)) <= 0.38
    with pytest.raises(ValueError):
        scaling_efficiency((0, 1), (1, 1))


@given(st.floats(1e-3, 1e6), st.floats(1e-3, 1e9))
def test_sdpd_closed_form(days, wall):
    assert compute_sdpd(days, wall) == days * 86400.0 / wall


def test_enter_exit_pair_cost():
    # per-pair cost bound; the relative overhead check lives in the acceptance suite
    prof = Profiler()
    n = 100_000
    t0 = time.perf_counter()
    for _ in range(n):
        prof.region_enter("x", "MPE_COMPUTE")
        prof.region_exit("x")
    per_pair = (time.perf_counter() - t0) / n
    assert per_pair < 20e-6
    assert prof.report()["regions"][0]["calls"] == n


def test_deferred_samples_merge_with_thread_trees():
    prof = Profiler()
    prof.add_sample((("r", "CPE_COMPUTE"),), 300, 3)
    prof.add_sample((("r", "CPE_COMPUTE"), ("barrier", "IDLE")), 100, 6)
    with prof.region("r", "CPE_COMPUTE"):
        pass
    paths = {r["path"]: r for r in prof.report()["regions"]}
    assert paths["r"]["calls"] == 4
    assert paths["r/barrier"]["calls"] == 6
