"""OpenMP-like offload runtime on top of a simulated core group.

Regions are fork-join: the MPE hands a job to every CPE worker and waits.
Loop nests are distributed by static chunking over the flattened product
of their parallel axes. Because the CPE cached window is not coherent,
barrier, single and critical are implemented with explicit flush and
invalidate of each worker's cache.
"""

from __future__ import annotations

import enum
import math
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Sequence

from .archsim import CoreGroup, ScratchView

DEFAULT_STACK_REQUEST = 8192
DEFAULT_BARRIER_TIMEOUT = 60.0


class OffloadError(RuntimeError):
    """Runtime-detected misuse; re-raised as-is from a region."""


class BarrierTimeout(OffloadError):
    """A barrier or critical wait exceeded its timeout (a worker skipped a barrier?)."""


class SelfDeadlock(OffloadError):
    pass


class NestedRegion(OffloadError):
    pass


class RegionAborted(OffloadError):
    """Secondary failure in workers released because another worker failed."""


class BodyPanicked(RuntimeError):
    def __init__(self, index: tuple | None, worker: int, cause: BaseException):
        where = f" at index {index}" if index is not None else ""
        super().__init__(f"body raised on worker {worker}{where}: {cause!r}")
        self.index = index
        self.worker = worker
        self.cause = cause


class Placement(enum.Enum):
    LDM = "LDM"
    PRIVATE = "PRIVATE"


@dataclass(frozen=True)
class StackPolicy:
    ldm_stack_threshold: int = 65536


def place_stack(policy: StackPolicy, requested: int, view: ScratchView) -> Placement:
    """LDM when the request is under the threshold and fits above the
    current allocations; private (main) memory otherwise."""
    if requested < 0:
        raise ValueError("requested stack size must be >= 0")
    if requested <= policy.ldm_stack_threshold and requested <= view.free_tail():
        view.reserve_stack(requested)
        return Placement.LDM
    return Placement.PRIVATE


@dataclass(frozen=True)
class LoopNest:
    """Named iteration space; work items are the row-major flattening of the
    parallel axes, in the order they appear in ``axes``."""

    axes: tuple[tuple[str, int], ...]
    parallel_axes: tuple[str, ...]
    chunk: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple((str(n), int(e)) for n, e in self.axes))
        object.__setattr__(self, "parallel_axes", tuple(self.parallel_axes))
        names = [n for n, _ in self.axes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate axis names in {names}")
        if any(e < 0 for _, e in self.axes):
            raise ValueError("extents must be >= 0")
        if not self.parallel_axes:
            raise ValueError("a parallel region needs at least one parallel axis")
        for a in self.parallel_axes:
            if a not in names:
                raise ValueError(f"parallel axis {a!r} is not an axis of the nest")
        if self.chunk is not None and self.chunk < 1:
            raise ValueError("chunk must be >= 1")

    @classmethod
    def of(cls, parallel: str | Sequence[str], chunk: int | None = None, **axes: int) -> "LoopNest":
        if isinstance(parallel, str):
            parallel = tuple(p.strip() for p in parallel.split("*"))
        return cls(tuple(axes.items()), tuple(parallel), chunk)

    def extent(self, name: str) -> int:
        return dict(self.axes)[name]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(e for _, e in self.axes)

    @property
    def parallel_shape(self) -> tuple[int, ...]:
        order = [n for n, _ in self.axes if n in self.parallel_axes]
        return tuple(self.extent(n) for n in order)

    @property
    def is_empty(self) -> bool:
        return any(e == 0 for _, e in self.axes)

    @property
    def n_items(self) -> int:
        return 0 if self.is_empty else math.prod(self.parallel_shape)

    def index(self, flat: int) -> tuple[int, ...]:
        out = []
        for extent in reversed(self.parallel_shape):
            flat, r = divmod(flat, extent)
            out.append(r)
        return tuple(reversed(out))

    def worker_items(self, worker: int, n_workers: int) -> Iterator[int]:
        """Flat item ids owned by ``worker`` under static scheduling, ascending."""
        n = self.n_items
        if self.chunk is None:
            q, r = divmod(n, n_workers)
            start = worker * q + min(worker, r)
            yield from range(start, start + q + (worker < r))
        else:
            c = self.chunk
            for lo in range(worker * c, n, n_workers * c):
                yield from range(lo, min(lo + c, n))

    def worker_span(self, worker: int, n_workers: int) -> range:
        """Contiguous block for ``worker`` (default schedule only)."""
        if self.chunk is not None:
            raise ValueError("worker_span needs the default block schedule")
        n = self.n_items
        q, r = divmod(n, n_workers)
        start = worker * q + min(worker, r)
        return range(start, start + q + (worker < r))


def block_span(n: int, worker: int, n_workers: int) -> range:
    """Balanced contiguous block of range(n) for one worker."""
    q, r = divmod(n, n_workers)
    start = worker * q + min(worker, r)
    return range(start, start + q + (worker < r))


@dataclass
class RegionStats:
    name: str
    n_workers: int
    wall_seconds: float = 0.0
    busy_seconds: list[float] = field(default_factory=list)
    idle_seconds: list[float] = field(default_factory=list)
    items: list[int] = field(default_factory=list)
    placements: list[Placement] = field(default_factory=list)

    @property
    def active_workers(self) -> int:
        return sum(1 for n in self.items if n)


class _Region:
    _ids = iter(range(1 << 62))

    def __init__(self, group: CoreGroup, n_workers: int, name: str, profiler, barrier_timeout: float):
        self.id = next(self._ids)
        self.group = group
        self.n_workers = n_workers
        self.name = name
        self.profiler = profiler
        self.barrier_timeout = barrier_timeout
        self.barrier = threading.Barrier(n_workers) if n_workers > 1 else None
        self.lock = threading.Lock()
        self.single_claims: set[int] = set()
        self.single_results: dict[int, Any] = {}
        self.failed = False
        self.span_ns = [0] * n_workers
        self.idle_ns = [0] * n_workers
        self.waits = [0] * n_workers
        self.stats = RegionStats(name, n_workers, busy_seconds=[0.0] * n_workers,
                                 idle_seconds=[0.0] * n_workers, items=[0] * n_workers,
                                 placements=[Placement.PRIVATE] * n_workers)

    def fail(self):
        self.failed = True
        if self.barrier is not None:
            self.barrier.abort()
        self.group.abort_waits()


_critical_locks: dict[tuple[int, str], threading.Lock] = {}
_critical_guard = threading.Lock()


def _critical_lock(group: CoreGroup, name: str) -> threading.Lock:
    key = (id(group), name)
    with _critical_guard:
        lock = _critical_locks.get(key)
        if lock is None:
            lock = _critical_locks[key] = threading.Lock()
        return lock


class RegionContext:
    """What a worker sees inside a region."""

    def __init__(self, region: _Region, worker_id: int, view: ScratchView):
        self._region = region
        self.worker_id = worker_id
        self.view = view
        self.epoch = 0
        self._single_seq = 0
        self._held: set[str] = set()

    @property
    def region_id(self) -> int:
        return self._region.id

    @property
    def n_workers(self) -> int:
        return self._region.n_workers

    @property
    def group(self) -> CoreGroup:
        return self._region.group

    def items(self, nest: LoopNest) -> Iterator[tuple[int, ...]]:
        if nest.is_empty:
            return
        for flat in nest.worker_items(self.worker_index, self.n_workers):
            yield nest.index(flat)

    def span(self, n: int) -> range:
        return block_span(n, self.worker_index, self.n_workers)

    @property
    def worker_index(self) -> int:
        # the MPE runs serial regions as the only worker
        return max(self.worker_id, 0)

    def _wait(self, fn: Callable[[], Any]):
        t0 = time.perf_counter_ns()
        try:
            with self.group.blocking():
                return fn()
        finally:
            w = self.worker_index
            self._region.idle_ns[w] += time.perf_counter_ns() - t0
            self._region.waits[w] += 1

    def barrier(self) -> None:
        self.view.flush()
        bar = self._region.barrier
        if bar is not None:
            try:
                self._wait(lambda: bar.wait(self._region.barrier_timeout))
            except threading.BrokenBarrierError:
                if self._region.failed:
                    raise RegionAborted("barrier released by a failing worker") from None
                self._region.fail()
                raise BarrierTimeout(
                    f"worker {self.worker_id} timed out at barrier epoch {self.epoch}; "
                    "did a worker skip a barrier?"
                ) from None
        self.view.invalidate()
        self.epoch += 1

    def single(self, body: Callable[[], Any]) -> Any:
        self._single_seq += 1
        key = self._single_seq
        region = self._region
        with region.lock:
            won = key not in region.single_claims
            region.single_claims.add(key)
        if won:
            region.single_results[key] = body()
        self.barrier()
        return region.single_results.get(key)

    @contextmanager
    def _critical(self, name: str):
        if name in self._held:
            raise SelfDeadlock(f"worker {self.worker_id} re-entered critical section {name!r}")
        lock = _critical_lock(self.group, name)
        ok = self._wait(lambda: lock.acquire(timeout=self._region.barrier_timeout))
        if not ok:
            self._region.fail()
            raise BarrierTimeout(f"worker {self.worker_id} timed out entering critical {name!r}")
        self._held.add(name)
        self.view.invalidate()
        try:
            yield
        finally:
            self.view.flush()
            self._held.discard(name)
            lock.release()

    def critical(self, name: str = "", body: Callable[[], Any] | None = None):
        """With ``body``: run it under the named lock. Without: a context manager."""
        if body is None:
            return self._critical(name)
        with self._critical(name):
            return body()


def barrier(ctx: RegionContext) -> None:
    ctx.barrier()


def single(ctx: RegionContext, body: Callable[[], Any]) -> Any:
    return ctx.single(body)


def critical(ctx: RegionContext, name: str, body: Callable[[], Any]) -> Any:
    return ctx.critical(name, body)


def _worker_threads(group: CoreGroup) -> set[int]:
    return {t.ident for t in group._threads}


@contextmanager
def _region_guard(group: CoreGroup):
    if threading.get_ident() in _worker_threads(group):
        raise NestedRegion("nested parallel regions are not supported")
    with group.region_lock:
        yield


def _profiled(profiler, name: str, category: str):
    if profiler is None:
        return _NULL
    return profiler.region(name, category)


class _Null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


_NULL = _Null()


def _raise_first(region: _Region, errors: dict[int, BaseException]):
    primary = {w: e for w, e in errors.items() if not isinstance(e, RegionAborted)}
    pool = primary or errors
    w = min(pool)
    exc = pool[w]
    if isinstance(exc, (OffloadError, BodyPanicked)):
        raise exc
    raise BodyPanicked(None, w, exc) from exc


def parallel_region(group: CoreGroup, fn: Callable[[RegionContext], None], *,
                    name: str = "region", profiler=None,
                    stack_bytes: int = DEFAULT_STACK_REQUEST,
                    stack_policy: StackPolicy = StackPolicy(),
                    barrier_timeout: float = DEFAULT_BARRIER_TIMEOUT) -> RegionStats:
    """Run ``fn(ctx)`` on every CPE of the group (SPMD), then join."""
    with _region_guard(group):
        region = _Region(group, group.n_cpes, name, profiler, barrier_timeout)

        def job(w: int):
            view = group.views[w]
            view.reset()
            ctx = RegionContext(region, w, view)
            region.stats.placements[w] = place_stack(stack_policy, stack_bytes, view)
            t0 = time.perf_counter_ns()
            try:
                try:
                    fn(ctx)
                finally:
                    region.span_ns[w] = time.perf_counter_ns() - t0
                if view.rma_pending:
                    raise OffloadError(f"worker {w} left {view.rma_pending} RMA puts unsignalled")
                view.flush()
            except BaseException:
                region.fail()
                raise
            finally:
                region.stats.idle_seconds[w] = region.idle_ns[w] * 1e-9
                region.stats.busy_seconds[w] = (region.span_ns[w] - region.idle_ns[w]) * 1e-9
                view.reset()

        t0 = time.perf_counter()
        errors = group.run_on_workers(job)
        region.stats.wall_seconds = time.perf_counter() - t0
        group.last_region = region.stats
        if profiler is not None:
            # workers time themselves; the profiler sees one sample per region
            _record_region(profiler, region)
        if errors:
            _raise_first(region, errors)
        return region.stats


def _record_region(profiler, region: _Region) -> None:
    node = ((region.name, "CPE_COMPUTE"),)
    profiler.add_sample(node, sum(region.span_ns), region.n_workers)
    if any(region.waits):
        profiler.add_sample(node + (("barrier", "IDLE"),), sum(region.idle_ns), sum(region.waits))


def serial_region(group: CoreGroup, fn: Callable[[RegionContext], None], *,
                  name: str = "region", profiler=None) -> RegionStats:
    """Run ``fn`` once on the MPE as the sole worker of a one-worker region."""
    with _region_guard(group):
        region = _Region(group, 1, name, profiler, DEFAULT_BARRIER_TIMEOUT)
        view = group.mpe_view
        view.reset()
        ctx = RegionContext(region, -1, view)
        t0 = time.perf_counter()
        try:
            with _profiled(profiler, name, "MPE_COMPUTE"):
                fn(ctx)
            view.flush()
        except (OffloadError, BodyPanicked):
            raise
        except Exception as exc:
            raise BodyPanicked(None, -1, exc) from exc
        finally:
            view.reset()
        region.stats.wall_seconds = time.perf_counter() - t0
        region.stats.busy_seconds[0] = region.stats.wall_seconds - region.stats.idle_seconds[0]
        group.last_region = region.stats
        return region.stats


def _loop(nest: LoopNest, body: Callable[[tuple, RegionContext], None], stats_items: list[int]):
    def fn(ctx: RegionContext):
        count = 0
        for idx in ctx.items(nest):
            try:
                body(idx, ctx)
            except (OffloadError, BodyPanicked):
                raise
            except Exception as exc:
                raise BodyPanicked(idx, ctx.worker_id, exc) from exc
            count += 1
        stats_items[ctx.worker_index] = count
    return fn


def parallel_for(group: CoreGroup, nest: LoopNest, body: Callable[[tuple, RegionContext], None],
                 **kw) -> RegionStats:
    """Execute ``body(index, ctx)`` once per parallel index tuple across the CPEs.

    Items are statically chunked in ascending order; the region ends with an
    implicit flushing barrier (the join).
    """
    items = [0] * group.n_cpes
    kw.setdefault("name", "parallel_for")
    stats = parallel_region(group, _loop(nest, body, items), **kw)
    stats.items = items
    return stats


def dispatch_serial(group: CoreGroup, nest: LoopNest, body: Callable[[tuple, RegionContext], None],
                    **kw) -> RegionStats:
    """Run the identical body over the whole nest on the MPE, ascending."""
    items = [0]
    kw.setdefault("name", "dispatch_serial")
    stats = serial_region(group, _loop(nest, body, items), **kw)
    stats.items = items
    return stats


def run(group: CoreGroup, fn: Callable[[RegionContext], None], *, serial: bool = False, **kw) -> RegionStats:
    """Dispatch a region function either on the CPEs or on the MPE."""
    if serial:
        kw.pop("stack_bytes", None)
        kw.pop("stack_policy", None)
        kw.pop("barrier_timeout", None)
        return serial_region(group, fn, **kw)
    return parallel_region(group, fn, **kw)
