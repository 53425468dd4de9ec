"""Simulated SW26010P-style core group.

A core group is one management element (MPE, the calling thread) plus an
array of compute elements (CPEs), each a real host thread that owns a
scratchpad (LDM). Shared arrays live in "global memory"; workers reach them
through explicit DMA or through a non-coherent, write-back cached window
that is only made consistent by explicit flush/invalidate.

Every transfer is charged to a per-view CostLedger so timings can be
reported both measured (wall clock) and modeled (bandwidth constants).
"""

from __future__ import annotations

import bisect
import json
import os
import threading
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

CACHE_SEGMENT_BYTES = 256
MPE_ID = -1


class ArchSimError(RuntimeError):
    pass


class CapacityExceeded(ArchSimError):
    """Raised when an LDM request does not fit; the kernel must tile its data."""


class OutOfRange(ArchSimError):
    pass


class CrossGroupRMA(ArchSimError):
    pass


class RmaSyncTimeout(ArchSimError):
    pass


class InvalidFree(ArchSimError):
    pass


class OwnershipViolation(ArchSimError):
    pass


class ResourceExhausted(ArchSimError):
    pass


@dataclass(frozen=True)
class CoreGroupSpec:
    n_cpes: int = 64
    ldm_bytes: int = 262144
    dma_bw: float = 307e9
    rma_bw: float = 460e9
    mem_bw: float = 51.2e9
    ldm_cache_fraction: float = 0.0

    def __post_init__(self):
        if int(self.n_cpes) != self.n_cpes or self.n_cpes < 1:
            raise ValueError(f"n_cpes must be a positive integer, got {self.n_cpes!r}")
        if int(self.ldm_bytes) != self.ldm_bytes or self.ldm_bytes <= 0:
            raise ValueError(f"ldm_bytes must be a positive integer, got {self.ldm_bytes!r}")
        for name in ("dma_bw", "rma_bw", "mem_bw"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.ldm_cache_fraction <= 1.0:
            raise ValueError("ldm_cache_fraction must lie in [0, 1]")

    @property
    def cache_bytes(self) -> int:
        return int(self.ldm_cache_fraction * self.ldm_bytes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CoreGroupSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown CoreGroupSpec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, source: str | os.PathLike) -> "CoreGroupSpec":
        """Load from a JSON file path or a JSON document string."""
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text()
        return cls.from_dict(json.loads(text))


@dataclass
class CostLedger:
    """Byte counters plus the bandwidths used to turn them into modeled time."""

    dma_bw: float = 307e9
    rma_bw: float = 460e9
    mem_bw: float = 51.2e9
    dma_bytes: int = 0
    rma_bytes: int = 0
    gmem_bytes: int = 0

    @classmethod
    def for_spec(cls, spec: CoreGroupSpec) -> "CostLedger":
        return cls(dma_bw=spec.dma_bw, rma_bw=spec.rma_bw, mem_bw=spec.mem_bw)

    @property
    def modeled_seconds(self) -> float:
        return self.dma_bytes / self.dma_bw + self.rma_bytes / self.rma_bw + self.gmem_bytes / self.mem_bw

    def merge(self, other: "CostLedger") -> "CostLedger":
        return CostLedger(
            self.dma_bw, self.rma_bw, self.mem_bw,
            self.dma_bytes + other.dma_bytes,
            self.rma_bytes + other.rma_bytes,
            self.gmem_bytes + other.gmem_bytes,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modeled_seconds"] = self.modeled_seconds
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class SharedArray:
    """A C-contiguous numpy array living in a core group's global memory."""

    def __init__(self, data: np.ndarray, name: str = ""):
        data = np.asarray(data)
        if not data.flags.c_contiguous:
            data = np.ascontiguousarray(data)
        self.data = data
        self.name = name
        self._flat = data.reshape(-1)
        self._raw = self._flat.view(np.uint8)

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    @property
    def itemsize(self) -> int:
        return self.data.itemsize

    def at(self, index: int | tuple = 0) -> "SharedRegion":
        """Region starting at an element index (flat or multi-dimensional)."""
        flat = _flat_index(self.data.shape, index)
        return SharedRegion(self, flat * self.itemsize)

    def __repr__(self):
        return f"SharedArray({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


@dataclass(frozen=True)
class SharedRegion:
    array: SharedArray
    byte_offset: int = 0

    def span(self, nbytes: int) -> np.ndarray:
        if self.byte_offset < 0 or self.byte_offset + nbytes > self.array.nbytes:
            raise OutOfRange(
                f"[{self.byte_offset}, {self.byte_offset + nbytes}) outside {self.array!r} "
                f"of {self.array.nbytes} bytes"
            )
        return self.array._raw[self.byte_offset:self.byte_offset + nbytes]


def _flat_index(shape, index) -> int:
    if isinstance(index, (tuple, list)):
        return int(np.ravel_multi_index(tuple(index), shape))
    index = int(index)
    size = int(np.prod(shape))
    if not 0 <= index <= size:
        raise OutOfRange(f"index {index} outside array of {size} elements")
    return index


class _CacheLine:
    __slots__ = ("array", "start", "values", "dirty")

    def __init__(self, array: SharedArray, start: int, stop: int):
        self.array = array
        self.start = start
        self.values = array._flat[start:stop].copy()
        self.dirty = np.zeros(stop - start, dtype=bool)


class ScratchView:
    """One worker's LDM plus its private cached window onto shared arrays.

    Single-owner: only the owning worker thread may touch it. In debug mode
    any access from another thread raises OwnershipViolation.
    """

    def __init__(self, group: "CoreGroup", owner: int):
        self.group = group
        self.owner = owner
        self.spec = group.spec
        self.ledger = CostLedger.for_spec(group.spec)
        self.stack_bytes = 0
        self._ldm: np.ndarray | None = None
        self._offsets: list[int] = []
        self._lengths: dict[int, int] = {}
        self._empty: dict[int, int] = {}
        self._cache: dict[tuple[int, int], _CacheLine] = {}
        self._rma_staged: dict[int, list[tuple[int, bytes]]] = {}
        self._owner_thread: int | None = None

    # -- bookkeeping ---------------------------------------------------------

    @property
    def ldm(self) -> np.ndarray:
        if self._ldm is None:
            self._ldm = np.zeros(self.spec.ldm_bytes, dtype=np.uint8)
        return self._ldm

    @property
    def allocations(self) -> list[tuple[int, int]]:
        return [(off, self._lengths[off]) for off in self._offsets]

    @property
    def used_bytes(self) -> int:
        return sum(self._lengths.values())

    @property
    def capacity(self) -> int:
        """Bytes available to explicit buffers (LDM minus cache and stack)."""
        return self.spec.ldm_bytes - self.spec.cache_bytes - self.stack_bytes

    @property
    def is_mpe(self) -> bool:
        return self.owner == MPE_ID

    def _check_owner(self):
        if self.group.debug and self._owner_thread is not None and threading.get_ident() != self._owner_thread:
            raise OwnershipViolation(f"view of worker {self.owner} touched from a foreign thread")

    def _high_water(self) -> int:
        if not self._offsets:
            return 0
        last = self._offsets[-1]
        return last + self._lengths[last]

    def free_tail(self) -> int:
        """Contiguous free bytes above the highest explicit allocation."""
        return self.spec.ldm_bytes - self.spec.cache_bytes - self._high_water()

    def reserve_stack(self, nbytes: int) -> None:
        if nbytes > self.free_tail():
            raise CapacityExceeded(f"stack of {nbytes} B does not fit above allocations")
        self.stack_bytes = nbytes

    def release_stack(self) -> None:
        self.stack_bytes = 0

    # -- LDM allocation ------------------------------------------------------

    def alloc(self, nbytes: int, align: int = 8) -> int:
        self._check_owner()
        if nbytes < 0:
            raise ValueError("nbytes must be >= 0")
        cap = self.capacity
        pos = 0
        for off in self._offsets:
            if off - pos >= nbytes:
                break
            pos = -(-(off + self._lengths[off]) // align) * align
        if pos + nbytes > cap:
            raise CapacityExceeded(
                f"worker {self.owner}: cannot allocate {nbytes} B "
                f"(used {self.used_bytes} of {cap} B available)"
            )
        if nbytes == 0:
            self._empty[pos] = self._empty.get(pos, 0) + 1
            return pos
        bisect.insort(self._offsets, pos)
        self._lengths[pos] = nbytes
        return pos

    def free(self, offset: int) -> None:
        self._check_owner()
        if offset in self._lengths:
            del self._lengths[offset]
            self._offsets.remove(offset)
        elif self._empty.get(offset):
            self._empty[offset] -= 1
        else:
            raise InvalidFree(f"worker {self.owner}: no allocation at offset {offset}")

    def reset(self) -> None:
        """Drop all allocations, stack, cache and staged RMA (between regions)."""
        self._offsets.clear()
        self._lengths.clear()
        self._empty.clear()
        self._cache.clear()
        self._rma_staged.clear()
        self.stack_bytes = 0

    def _ldm_span(self, offset: int, nbytes: int) -> np.ndarray:
        if nbytes == 0:
            return self.ldm[0:0]
        end = offset + nbytes
        i = bisect.bisect_right(self._offsets, offset) - 1
        if i < 0 or end > self._offsets[i] + self._lengths[self._offsets[i]]:
            raise OutOfRange(f"worker {self.owner}: LDM [{offset}, {end}) is not inside one allocation")
        return self.ldm[offset:end]

    def array(self, offset: int, count: int, dtype=np.float64) -> np.ndarray:
        """Typed numpy view onto an allocated LDM range."""
        dtype = np.dtype(dtype)
        return self._ldm_span(offset, count * dtype.itemsize).view(dtype)

    # -- DMA -----------------------------------------------------------------

    def _charge(self, nbytes: int):
        # the MPE has no DMA engine: its "transfers" are plain memory traffic
        if self.is_mpe:
            self.ledger.gmem_bytes += nbytes
        else:
            self.ledger.dma_bytes += nbytes

    def dma_get(self, region: SharedRegion, ldm_offset: int, nbytes: int) -> None:
        self._check_owner()
        if nbytes == 0:
            return
        self._ldm_span(ldm_offset, nbytes)[:] = region.span(nbytes)
        self._charge(nbytes)

    def dma_put(self, ldm_offset: int, region: SharedRegion, nbytes: int) -> None:
        self._check_owner()
        if nbytes == 0:
            return
        region.span(nbytes)[:] = self._ldm_span(ldm_offset, nbytes)
        self._charge(nbytes)

    # -- RMA -----------------------------------------------------------------

    def _peer_id(self, peer) -> int:
        if isinstance(peer, ScratchView):
            if peer.group is not self.group:
                raise CrossGroupRMA(
                    f"RMA from group {self.group.group_id} to group {peer.group.group_id}"
                )
            peer = peer.owner
        peer = int(peer)
        if not 0 <= peer < self.spec.n_cpes:
            raise OutOfRange(f"peer {peer} is not a CPE of group {self.group.group_id}")
        if self.is_mpe:
            raise CrossGroupRMA("the MPE has no RMA channel")
        return peer

    def rma_put(self, peer, ldm_offset: int, peer_offset: int, nbytes: int) -> None:
        """Stage a put into a peer's LDM; it lands when the peer calls rma_wait
        after this worker's rma_signal."""
        self._check_owner()
        dst = self._peer_id(peer)
        if nbytes == 0:
            return
        payload = self._ldm_span(ldm_offset, nbytes).tobytes()
        self._rma_staged.setdefault(dst, []).append((peer_offset, payload))
        self.ledger.rma_bytes += nbytes

    def rma_signal(self, peer) -> None:
        self._check_owner()
        dst = self._peer_id(peer)
        self.group._rma_publish(self.owner, dst, self._rma_staged.pop(dst, []))

    def rma_wait(self, peer, timeout: float | None = None) -> None:
        self._check_owner()
        src = self._peer_id(peer)
        for peer_offset, payload in self.group._rma_collect(src, self.owner, timeout):
            self._ldm_span(peer_offset, len(payload))[:] = np.frombuffer(payload, dtype=np.uint8)

    @property
    def rma_pending(self) -> int:
        return sum(len(v) for v in self._rma_staged.values())

    # -- non-coherent cached window -----------------------------------------

    def _line(self, shared: SharedArray, flat: int) -> tuple[_CacheLine, int]:
        per_line = max(1, CACHE_SEGMENT_BYTES // shared.itemsize)
        seg = flat // per_line
        key = (id(shared), seg)
        line = self._cache.get(key)
        if line is None:
            start = seg * per_line
            stop = min(start + per_line, shared._flat.size)
            line = _CacheLine(shared, start, stop)
            self._cache[key] = line
            self.ledger.gmem_bytes += line.values.nbytes
        return line, flat - line.start

    def cached_read(self, shared: SharedArray, index):
        self._check_owner()
        flat = _flat_index(shared.data.shape, index)
        if flat >= shared._flat.size:
            raise OutOfRange(f"index {index} outside {shared!r}")
        line, i = self._line(shared, flat)
        return line.values[i].item()

    def cached_write(self, shared: SharedArray, index, value) -> None:
        self._check_owner()
        flat = _flat_index(shared.data.shape, index)
        if flat >= shared._flat.size:
            raise OutOfRange(f"index {index} outside {shared!r}")
        line, i = self._line(shared, flat)
        line.values[i] = value
        line.dirty[i] = True

    def flush(self) -> None:
        """Write back dirty elements (element-granular, so false sharing is harmless)."""
        for line in self._cache.values():
            if line.dirty.any():
                dst = line.array._flat[line.start:line.start + line.values.size]
                dst[line.dirty] = line.values[line.dirty]
                self.ledger.gmem_bytes += int(line.dirty.sum()) * line.values.itemsize
                line.dirty[:] = False

    def invalidate(self) -> None:
        """Refetch every cached line now; dirty elements keep the local value.

        The refresh is eager, so a write flushed by a peer after this call
        stays invisible until the next invalidate.
        """
        for line in self._cache.values():
            fresh = line.array._flat[line.start:line.start + line.values.size]
            clean = ~line.dirty
            line.values[clean] = fresh[clean]
            self.ledger.gmem_bytes += line.values.nbytes

    def __repr__(self):
        who = "MPE" if self.is_mpe else f"CPE {self.owner}"
        return f"<ScratchView {who} of CG{self.group.group_id}: {self.used_bytes}/{self.capacity} B>"


def _host_cap() -> int | None:
    raw = os.environ.get("O2PROXY_WORKERS")
    if not raw:
        return None
    cap = int(raw)
    if cap < 1:
        raise ValueError("O2PROXY_WORKERS must be >= 1")
    return cap


_tls = threading.local()
_host_slots_lock = threading.Lock()
_host_slots: threading.BoundedSemaphore | None = None
_host_slots_cap: int | None = None


def _slots() -> threading.BoundedSemaphore | None:
    global _host_slots, _host_slots_cap
    cap = _host_cap()
    with _host_slots_lock:
        if cap != _host_slots_cap:
            _host_slots = threading.BoundedSemaphore(cap) if cap else None
            _host_slots_cap = cap
        return _host_slots


class CoreGroup:
    """Handle on one simulated core group.

    CPE worker threads start lazily on the first parallel dispatch, so a group
    used only for serial (MPE) execution costs nothing.
    """

    def __init__(self, spec: CoreGroupSpec, group_id: int = 0, debug: bool = False):
        self.spec = spec
        self.group_id = group_id
        self.debug = debug
        self.views = [ScratchView(self, w) for w in range(spec.n_cpes)]
        self.mpe_view = ScratchView(self, MPE_ID)
        self.region_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._cv = threading.Condition()
        self._generation = 0
        self._job: Callable[[int], None] | None = None
        self._closing = False
        self._pending = 0
        self._errors: dict[int, BaseException] = {}
        self._rma_cv = threading.Condition()
        self._rma_mail: dict[tuple[int, int], list[list[tuple[int, bytes]]]] = {}
        self._rma_abort = False
        self._slots = None
        self.last_region = None

    @property
    def n_cpes(self) -> int:
        return self.spec.n_cpes

    def ledger(self) -> CostLedger:
        total = CostLedger.for_spec(self.spec)
        for v in [self.mpe_view, *self.views]:
            total = total.merge(v.ledger)
        return total

    def reset_ledgers(self) -> None:
        for v in [self.mpe_view, *self.views]:
            v.ledger = CostLedger.for_spec(self.spec)

    # -- worker threads ------------------------------------------------------

    def _start(self):
        try:
            for w in range(self.spec.n_cpes):
                t = threading.Thread(
                    target=self._worker_main, args=(w,), daemon=True,
                    name=f"cg{self.group_id}-cpe{w}",
                )
                t.start()
                self._threads.append(t)
        except RuntimeError as exc:
            self.close()
            raise ResourceExhausted(f"could not start CPE threads: {exc}") from exc

    def _worker_main(self, w: int):
        self.views[w]._owner_thread = threading.get_ident()
        seen = 0
        while True:
            with self._cv:
                while self._generation == seen and not self._closing:
                    self._cv.wait()
                if self._closing:
                    return
                seen = self._generation
                job = self._job
            slots = self._slots
            try:
                if slots is not None:
                    slots.acquire()
                    _tls.holding = True
                try:
                    job(w)
                finally:
                    if slots is not None:
                        _tls.holding = False
                        slots.release()
            except BaseException as exc:  # noqa: BLE001 - reported to the dispatcher
                self._errors[w] = exc
            finally:
                with self._cv:
                    self._pending -= 1
                    if self._pending == 0:
                        self._cv.notify_all()

    @contextmanager
    def blocking(self) -> Iterator[None]:
        """Give up the host slot while waiting on other workers."""
        slots = self._slots
        if slots is None or not getattr(_tls, "holding", False):
            yield
            return
        slots.release()
        try:
            yield
        finally:
            slots.acquire()

    def run_on_workers(self, job: Callable[[int], None]) -> dict[int, BaseException]:
        """Run job(worker_id) on every CPE thread; return exceptions by worker."""
        if self._closing:
            raise ArchSimError("core group is closed")
        if not self._threads:
            self._start()
        self._slots = _slots()
        self._errors = {}
        self._rma_abort = False
        with self._cv:
            self._job = job
            self._pending = self.spec.n_cpes
            self._generation += 1
            self._cv.notify_all()
            while self._pending:
                self._cv.wait()
            self._job = None
        with self._rma_cv:
            self._rma_mail.clear()
        return dict(self._errors)

    def abort_waits(self) -> None:
        with self._rma_cv:
            self._rma_abort = True
            self._rma_cv.notify_all()

    def close(self) -> None:
        with self._cv:
            self._closing = True
            self._cv.notify_all()
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- RMA mailbox ---------------------------------------------------------

    def _rma_publish(self, src: int, dst: int, puts: list[tuple[int, bytes]]):
        with self._rma_cv:
            self._rma_mail.setdefault((src, dst), []).append(puts)
            self._rma_cv.notify_all()

    def _rma_collect(self, src: int, dst: int, timeout: float | None):
        key = (src, dst)
        with self.blocking(), self._rma_cv:
            ok = self._rma_cv.wait_for(lambda: self._rma_mail.get(key) or self._rma_abort, timeout)
            if self._rma_abort:
                raise RmaSyncTimeout("RMA wait aborted: another worker failed")
            if not ok:
                raise RmaSyncTimeout(f"CPE {dst} waited for a signal from CPE {src} that never came")
            return self._rma_mail[key].pop(0)

    def __repr__(self):
        return f"<CoreGroup {self.group_id}: {self.spec.n_cpes} CPEs, {self.spec.ldm_bytes} B LDM>"


_group_ids = iter(range(1 << 62))
_group_ids_lock = threading.Lock()


def spawn_core_group(spec: CoreGroupSpec | None = None, *, group_id: int | None = None,
                     debug: bool = False) -> CoreGroup:
    spec = spec or CoreGroupSpec()
    if group_id is None:
        with _group_ids_lock:
            group_id = next(_group_ids)
    return CoreGroup(spec, group_id, debug=debug)


# Functional spellings of the view operations.

def ldm_alloc(view: ScratchView, nbytes: int) -> int:
    return view.alloc(nbytes)


def ldm_free(view: ScratchView, offset: int) -> None:
    view.free(offset)


def dma_get(view: ScratchView, region: SharedRegion, ldm_offset: int, nbytes: int) -> None:
    view.dma_get(region, ldm_offset, nbytes)


def dma_put(view: ScratchView, ldm_offset: int, region: SharedRegion, nbytes: int) -> None:
    view.dma_put(ldm_offset, region, nbytes)


def rma_put(view: ScratchView, peer, ldm_offset: int, peer_offset: int, nbytes: int) -> None:
    view.rma_put(peer, ldm_offset, peer_offset, nbytes)


def cached_read(view: ScratchView, shared: SharedArray, index):
    return view.cached_read(shared, index)


def cached_write(view: ScratchView, shared: SharedArray, index, value) -> None:
    view.cached_write(shared, index, value)
