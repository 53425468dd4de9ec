"""Climate proxy kernels, each runnable on the MPE (serial reference) or
offloaded to the CPEs with the loop-nest strategy its component uses.

=========  ==========================================  ===================
kernel     loop form                                    parallel on
=========  ==========================================  ===================
cam-dyn    nelem x pver x np x np        (4x32x4x4)     nelem x pver
cam-phys   nchunks x ncols x pver        (36x1x32)      nchunks
pop-vmix   mxblk x nlayer x nyblk x nxblk (1x60x56x10)  nyblk
pop-hmix   mxblk x nlayer x nyblk x nxblk (1x60x56x10)  nlayer
cice-evp   mxblk x ncat x nlayer x nyblk x nxblk        mxblk
           (32x5x8x4x4)
=========  ==========================================  ===================

The arithmetic is deliberately simple; what matters is the loop form, the
data dependencies and the communication each kernel exhibits. Apart from
the prefix sum, every kernel keeps the serial per-element operation order
and is therefore bitwise reproducible across worker counts.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import offload
from .archsim import CapacityExceeded, CoreGroup, CoreGroupSpec, SharedArray, spawn_core_group
from .offload import LoopNest

F8 = 8

# Table-of-strategies dims, per core group
CAM_DYN_DIMS = (4, 32, 4, 4)
CAM_PHYS_DIMS = (36, 1, 32)
POP_DIMS = (1, 60, 56, 10)
CICE_DIMS = (32, 5, 8, 4, 4)

ATM_PRESETS = {"ne30": 1, "ne120": 4, "ne240": 8, "ne480": 16}
OCN_PRESETS = {"ts015": 1.0, "ts010": 1.5, "ts005": 3.0, "ts003": 5.0}

BIT_EXACT = "bit-exact"
TOLERANCE = "tolerance"


class KernelError(ValueError):
    pass


class NonFiniteInput(KernelError):
    pass


class AdjacencyError(KernelError):
    pass


class SingularTridiagonal(KernelError):
    pass


_default_group: CoreGroup | None = None
_default_lock = threading.Lock()


def _group(group: CoreGroup | None) -> CoreGroup:
    global _default_group
    if group is not None:
        return group
    with _default_lock:
        if _default_group is None:
            _default_group = spawn_core_group(CoreGroupSpec())
        return _default_group


def _run(group, fn, serial, name, profiler):
    g = _group(group)
    if group is None:
        serial = True
    return offload.run(g, fn, serial=serial, name=name, profiler=profiler)


def _require_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput("kernel input contains NaN or Inf")


def _tile(view, per_item_bytes: int, n_buffers: int, want: int) -> int:
    room = view.capacity - view.used_bytes - 64
    tile = min(want, room // (per_item_bytes * n_buffers))
    if tile < 1:
        raise CapacityExceeded(
            f"one work item needs {per_item_bytes * n_buffers} B of LDM, only {room} B free"
        )
    return tile


# -- flat binary format ------------------------------------------------------

def encode_array(array) -> bytes:
    """ndim (u64 LE), dims (u64 LE each), then float64 LE in row-major order."""
    a = np.require(array, dtype="<f8", requirements="C")
    return struct.pack(f"<Q{a.ndim}Q", a.ndim, *a.shape) + a.tobytes()


def decode_array(blob: bytes) -> np.ndarray:
    if len(blob) < 8:
        raise ValueError("truncated header")
    (ndim,) = struct.unpack_from("<Q", blob, 0)
    head = 8 + 8 * ndim
    if len(blob) < head:
        raise ValueError("truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 8)
    count = math.prod(dims)
    if len(blob) != head + 8 * count:
        raise ValueError(f"payload has {len(blob) - head} bytes, dims {dims} need {8 * count}")
    return np.frombuffer(blob, dtype="<f8", offset=head).reshape(dims).astype(np.float64)


def write_array(path, array) -> None:
    Path(path).write_bytes(encode_array(array))


def read_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


# -- CAM physics --------------------------------------------------------------

@dataclass
class ChunkedColumns:
    t: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=np.float64)
        self.q = np.ascontiguousarray(self.q, dtype=np.float64)
        if self.t.ndim != 3 or self.t.shape != self.q.shape:
            raise KernelError("t and q must both be nchunks x ncols x pver")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.t.shape

    @classmethod
    def random(cls, dims=CAM_PHYS_DIMS, rng=None) -> "ChunkedColumns":
        rng = np.random.default_rng(rng)
        return cls(200.0 + 120.0 * rng.random(dims), 0.02 * rng.random(dims))


def equilibrium_profile(pver: int) -> np.ndarray:
    """Relaxation target temperature, 300 K at the top level falling to 250 K."""
    if pver == 1:
        return np.full(1, 300.0)
    return 300.0 - 50.0 * np.arange(pver, dtype=np.float64) / (pver - 1)


def physics_step(cols: ChunkedColumns, alpha: float = 0.1, beta: float = 1e-3, *,
                 group: CoreGroup | None = None, serial: bool = False, profiler=None) -> ChunkedColumns:
    """Column relaxation t' = t + alpha (Teq - t) + beta q^2, parallel on nchunks."""
    nchunks, ncols, pver = cols.dims
    if min(cols.dims) <= 0:
        raise KernelError("dims must be positive")
    _require_finite(cols.t, cols.q)
    nest = LoopNest.of("nchunks", nchunks=nchunks, ncols=ncols, pver=pver)
    t_in, q_in = SharedArray(cols.t, "t"), SharedArray(cols.q, "q")
    t_out = SharedArray(np.empty_like(cols.t), "t_out")
    teq_sh = SharedArray(equilibrium_profile(pver), "teq")
    per = ncols * pver

    def body(ctx):
        span = nest.worker_span(ctx.worker_index, ctx.n_workers)
        if not span:
            return
        view = ctx.view
        teq_off = view.alloc(pver * F8)
        view.dma_get(teq_sh.at(0), teq_off, pver * F8)
        teq = view.array(teq_off, pver)
        tile = _tile(view, per * F8, 2, len(span))
        tb, qb = view.alloc(tile * per * F8), view.alloc(tile * per * F8)
        for lo in range(span.start, span.stop, tile):
            n = min(tile, span.stop - lo)
            nbytes = n * per * F8
            view.dma_get(t_in.at(lo * per), tb, nbytes)
            view.dma_get(q_in.at(lo * per), qb, nbytes)
            t = view.array(tb, n * per).reshape(n, ncols, pver)
            q = view.array(qb, n * per).reshape(n, ncols, pver)
            relax = (teq - t) * alpha
            moist = (q * q) * beta
            t += relax
            t += moist
            view.dma_put(tb, t_out.at(lo * per), nbytes)

    _run(group, body, serial, "cam-phys", profiler)
    return ChunkedColumns(t_out.data, cols.q.copy())


# -- CAM dynamics -------------------------------------------------------------

W, E, S, N = range(4)


def periodic_adjacency(nelem: int) -> np.ndarray:
    """Neighbours (W, E, S, N) of elements laid out on a periodic ny x nx grid."""
    ny = max(d for d in range(1, int(math.isqrt(nelem)) + 1) if nelem % d == 0)
    nx = nelem // ny
    adj = np.empty((nelem, 4), dtype=np.int64)
    for e in range(nelem):
        y, x = divmod(e, nx)
        adj[e] = (y * nx + (x - 1) % nx, y * nx + (x + 1) % nx,
                  ((y - 1) % ny) * nx + x, ((y + 1) % ny) * nx + x)
    return adj


def check_adjacency(adj: np.ndarray) -> None:
    adj = np.asarray(adj)
    n = adj.shape[0]
    if adj.shape != (n, 4) or adj.min(initial=0) < 0 or adj.max(initial=0) >= n:
        raise AdjacencyError("adjacency must be nelem x 4 with valid element ids")
    for e in range(n):
        if adj[adj[e, E], W] != e or adj[adj[e, W], E] != e or adj[adj[e, N], S] != e or adj[adj[e, S], N] != e:
            raise AdjacencyError(f"adjacency of element {e} is not symmetric")


@dataclass
class ElementField:
    values: np.ndarray
    adjacency: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 4 or self.values.shape[2] != self.values.shape[3]:
            raise KernelError("values must be nelem x pver x np x np")
        if self.values.shape[2] < 2:
            raise KernelError("np must be >= 2")
        if self.adjacency is None:
            self.adjacency = periodic_adjacency(self.values.shape[0])
        self.adjacency = np.asarray(self.adjacency, dtype=np.int64)

    @property
    def dims(self):
        return self.values.shape

    @classmethod
    def random(cls, dims=CAM_DYN_DIMS, rng=None) -> "ElementField":
        rng = np.random.default_rng(rng)
        return cls(rng.standard_normal(dims))


def dycore_step(f: ElementField, nu: float = 0.05, dt: float = 1.0, *,
                group: CoreGroup | None = None, serial: bool = False, profiler=None) -> ElementField:
    """Boundary exchange (east-west then south-north edge averaging) followed by
    in-element Laplacian relaxation; parallel on nelem x pver."""
    check_adjacency(f.adjacency)
    nelem, pver, npt, _ = f.dims
    nest = LoopNest.of("nelem*pver", nelem=nelem, pver=pver, np_j=npt, np_i=npt)
    adj = f.adjacency
    lev = npt * npt
    src = SharedArray(f.values, "field")
    ew = SharedArray(np.empty_like(f.values), "ew")
    ns = SharedArray(np.empty_like(f.values), "ns")
    out = SharedArray(np.empty_like(f.values), "out")
    coef = nu * dt

    def body(ctx):
        view = ctx.view
        me, lo_n, hi_n = (view.alloc(lev * F8) for _ in range(3))
        a = view.array(me, lev).reshape(npt, npt)
        lo = view.array(lo_n, lev).reshape(npt, npt)
        hi = view.array(hi_n, lev).reshape(npt, npt)
        mine = list(ctx.items(nest))

        def load(arr, e, k, off):
            view.dma_get(arr.at((e, k, 0, 0)), off, lev * F8)

        for e, k in mine:
            load(src, e, k, me)
            load(src, adj[e, W], k, lo_n)
            load(src, adj[e, E], k, hi_n)
            east = (a[:, -1] + hi[:, 0]) * 0.5
            west = (lo[:, -1] + a[:, 0]) * 0.5
            a[:, -1] = east
            a[:, 0] = west
            view.dma_put(me, ew.at((e, k, 0, 0)), lev * F8)
        ctx.barrier()
        for e, k in mine:
            load(ew, e, k, me)
            load(ew, adj[e, S], k, lo_n)
            load(ew, adj[e, N], k, hi_n)
            north = (a[-1, :] + hi[0, :]) * 0.5
            south = (lo[-1, :] + a[0, :]) * 0.5
            a[-1, :] = north
            a[0, :] = south
            view.dma_put(me, ns.at((e, k, 0, 0)), lev * F8)
        ctx.barrier()
        for e, k in mine:
            load(ns, e, k, me)
            p = np.pad(a, 1, mode="edge")
            lap = ((p[1:-1, :-2] + p[1:-1, 2:]) + (p[:-2, 1:-1] + p[2:, 1:-1])) - 4.0 * a
            a += coef * lap
            view.dma_put(me, out.at((e, k, 0, 0)), lev * F8)

    _run(group, body, serial, "cam-dyn", profiler)
    return ElementField(out.data, adj.copy())


# -- vertical prefix sum (OMEGA) ---------------------------------------------

def prefix_sum_serial(div, dp) -> np.ndarray:
    """Left-to-right running sum of div*dp."""
    div, dp = _columns(div, dp)
    out = np.empty_like(div)
    acc = 0.0
    for k in range(div.size):
        acc = acc + div[k] * dp[k]
        out[k] = acc
    return out


def _columns(div, dp):
    div = np.ascontiguousarray(div, dtype=np.float64).reshape(-1)
    dp = np.ascontiguousarray(dp, dtype=np.float64).reshape(-1)
    if div.shape != dp.shape:
        raise KernelError(f"length mismatch: div has {div.size}, dp has {dp.size}")
    return div, dp


def vertical_prefix_sum(div, dp, *, group: CoreGroup | None = None, serial: bool = False,
                        profiler=None) -> np.ndarray:
    """omega[k] = sum_{j<=k} div[j] dp[j].

    Each worker scans its contiguous chunk locally; chunk totals are then
    carried from worker to worker in rank order over RMA, and every worker
    adds its incoming carry. The carry changes the addition order, so the
    result matches a serial scan only to rounding (exactly on integers).
    """
    div, dp = _columns(div, dp)
    n = div.size
    d_sh, p_sh = SharedArray(div, "div"), SharedArray(dp, "dp")
    out = SharedArray(np.empty(n), "omega")

    def body(ctx):
        view = ctx.view
        w, nw = ctx.worker_index, ctx.n_workers
        span = ctx.span(n)
        carry_off = view.alloc(F8)
        carry = view.array(carry_off, 1)
        acc = 0.0
        if span:
            tile = _tile(view, F8, 3, len(span))
            db, pb, sb = (view.alloc(tile * F8) for _ in range(3))
            resident = tile == len(span)
            for lo in range(span.start, span.stop, tile):
                m = min(tile, span.stop - lo)
                view.dma_get(d_sh.at(lo), db, m * F8)
                view.dma_get(p_sh.at(lo), pb, m * F8)
                prod = view.array(db, m) * view.array(pb, m)
                local = view.array(sb, m)
                # seeding with the running value keeps the scan strictly left-to-right
                local[:] = np.cumsum(np.concatenate(([acc], prod)))[1:]
                acc = float(local[-1])
                if not resident:
                    view.dma_put(sb, out.at(lo), m * F8)
        carry_in = 0.0
        if w > 0:
            view.rma_wait(w - 1)
            carry_in = float(carry[0])
        if w < nw - 1:
            carry[0] = carry_in + acc if span else carry_in
            view.rma_put(w + 1, carry_off, carry_off, F8)
            view.rma_signal(w + 1)
        if not span:
            return
        if resident:
            local = view.array(sb, len(span))
            if w > 0:
                local[:] = carry_in + local
            view.dma_put(sb, out.at(span.start), len(span) * F8)
        elif w > 0:
            for lo in range(span.start, span.stop, tile):
                m = min(tile, span.stop - lo)
                view.dma_get(out.at(lo), sb, m * F8)
                local = view.array(sb, m)
                local[:] = carry_in + local
                view.dma_put(sb, out.at(lo), m * F8)

    _run(group, body, serial, "prefix-sum", profiler)
    return out.data


# -- POP mixing ---------------------------------------------------------------

@dataclass
class BlockField:
    """Blocked ocean/ice state: (mxblk, nlayer, nyblk, nxblk) for POP,
    (mxblk, ncat, nlayer, nyblk, nxblk) for CICE. ``forcing`` matches
    ``values`` and is only read by the ice kernel."""

    values: np.ndarray
    forcing: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim not in (4, 5) or min(self.values.shape) <= 0:
            raise KernelError("block field must have 4 or 5 positive dims")
        if self.forcing is not None:
            self.forcing = np.ascontiguousarray(self.forcing, dtype=np.float64)
            if self.forcing.shape != self.values.shape:
                raise KernelError("forcing must match values")

    @property
    def dims(self):
        return self.values.shape

    @classmethod
    def random(cls, dims=POP_DIMS, rng=None, forcing: bool = False) -> "BlockField":
        rng = np.random.default_rng(rng)
        vals = 10.0 + rng.standard_normal(dims)
        return cls(vals, rng.uniform(-1.0, 1.0, dims) if forcing else None)


def exchange_halos(tiles: np.ndarray) -> np.ndarray:
    """Pad (..., mxblk-major) 2-D tiles with a one-point halo.

    ``tiles`` is (mxblk, ny, nx). Blocks form a periodic ring in x; the y
    boundaries are insulating (edge values replicated).
    """
    m = tiles.shape[0]
    p = np.empty((m, tiles.shape[1] + 2, tiles.shape[2] + 2))
    p[:, 1:-1, 1:-1] = tiles
    for b in range(m):
        p[b, 1:-1, 0] = tiles[(b - 1) % m, :, -1]
        p[b, 1:-1, -1] = tiles[(b + 1) % m, :, 0]
    p[:, 0, :] = p[:, 1, :]
    p[:, -1, :] = p[:, -2, :]
    return p


def _five_point(p: np.ndarray) -> np.ndarray:
    c = p[..., 1:-1, 1:-1]
    return ((p[..., 1:-1, :-2] + p[..., 1:-1, 2:]) + (p[..., :-2, 1:-1] + p[..., 2:, 1:-1])) - 4.0 * c


def _thomas_coefficients(nlayer: int, r: float):
    lower = [-r] * nlayer
    upper = [-r] * nlayer
    diag = [1.0 + 2.0 * r] * nlayer
    if nlayer == 1:
        diag = [1.0]
    else:
        diag[0] = diag[-1] = 1.0 + r
    cprime, denom = [0.0] * nlayer, [0.0] * nlayer
    for k in range(nlayer):
        m = diag[k] - (lower[k] * cprime[k - 1] if k else 0.0)
        if m == 0.0:
            raise SingularTridiagonal(f"zero pivot at layer {k}")
        denom[k] = m
        cprime[k] = upper[k] / m
    return lower, cprime, denom


def pop_vmix_step(b: BlockField, r: float = 0.2, *, group: CoreGroup | None = None,
                  serial: bool = False, profiler=None) -> BlockField:
    """Implicit vertical diffusion with insulating ends, parallel on nyblk.

    Solves (I - r D2) dv = r D2 v per column by a tridiagonal sweep and
    returns v + dv, so a uniform column is left bit-for-bit unchanged.
    """
    if b.values.ndim != 4:
        raise KernelError("POP fields are mxblk x nlayer x nyblk x nxblk")
    mxblk, nlayer, nyblk, nxblk = b.dims
    lower, cprime, denom = _thomas_coefficients(nlayer, r)
    nest = LoopNest.of("nyblk", mxblk=mxblk, nlayer=nlayer, nyblk=nyblk, nxblk=nxblk)
    src = SharedArray(b.values, "v")
    out = SharedArray(np.empty_like(b.values), "v_out")
    row = nxblk * F8

    def body(ctx):
        view = ctx.view
        slab = view.alloc(nlayer * row)
        v = view.array(slab, nlayer * nxblk).reshape(nlayer, nxblk)
        d = np.empty((nlayer, nxblk))
        for (j,) in ctx.items(nest):
            for blk in range(mxblk):
                for k in range(nlayer):
                    view.dma_get(src.at((blk, k, j, 0)), slab + k * row, row)
                if nlayer > 1:
                    d[0] = (v[1] - v[0]) * r
                    d[-1] = (v[-2] - v[-1]) * r
                    for k in range(1, nlayer - 1):
                        d[k] = ((v[k - 1] - v[k]) + (v[k + 1] - v[k])) * r
                else:
                    d[0] = 0.0
                d[0] = d[0] / denom[0]
                for k in range(1, nlayer):
                    d[k] = (d[k] - lower[k] * d[k - 1]) / denom[k]
                for k in range(nlayer - 2, -1, -1):
                    d[k] = d[k] - cprime[k] * d[k + 1]
                v += d
                for k in range(nlayer):
                    view.dma_put(slab + k * row, out.at((blk, k, j, 0)), row)

    _run(group, body, serial, "pop-vmix", profiler)
    return BlockField(out.data, b.forcing)


def pop_hmix_step(b: BlockField, kappa: float = 0.1, *, group: CoreGroup | None = None,
                  serial: bool = False, profiler=None) -> BlockField:
    """Explicit 5-point horizontal Laplacian mixing, parallel on nlayer."""
    if b.values.ndim != 4:
        raise KernelError("POP fields are mxblk x nlayer x nyblk x nxblk")
    mxblk, nlayer, nyblk, nxblk = b.dims
    nest = LoopNest.of("nlayer", mxblk=mxblk, nlayer=nlayer, nyblk=nyblk, nxblk=nxblk)
    src = SharedArray(b.values, "v")
    out = SharedArray(np.empty_like(b.values), "v_out")
    tile = nyblk * nxblk

    def body(ctx):
        view = ctx.view
        buf = view.alloc(mxblk * tile * F8)
        tiles = view.array(buf, mxblk * tile).reshape(mxblk, nyblk, nxblk)
        for (k,) in ctx.items(nest):
            for blk in range(mxblk):
                view.dma_get(src.at((blk, k, 0, 0)), buf + blk * tile * F8, tile * F8)
            lap = _five_point(exchange_halos(tiles))
            tiles += kappa * lap
            for blk in range(mxblk):
                view.dma_put(buf + blk * tile * F8, out.at((blk, k, 0, 0)), tile * F8)

    _run(group, body, serial, "pop-hmix", profiler)
    return BlockField(out.data, b.forcing)


# -- CICE EVP subcycling ------------------------------------------------------

def cice_evp_step(b: BlockField, n_subcycles: int = 120, dte: float = 0.1, strength: float = 1.0, *,
                  group: CoreGroup | None = None, serial: bool = False, profiler=None) -> BlockField:
    """Subcycled relaxation u <- u + dte (f + strength |f| lap(u)), parallel on mxblk.

    Blocks are independent within a subcycle and trade halos between
    subcycles (a flushing barrier separates them). With zero forcing the
    state is left unchanged.
    """
    if b.values.ndim != 5:
        raise KernelError("CICE fields are mxblk x ncat x nlayer x nyblk x nxblk")
    if n_subcycles < 1:
        raise KernelError("n_subcycles must be >= 1")
    mxblk, ncat, nlayer, nyblk, nxblk = b.dims
    nest = LoopNest.of("mxblk", mxblk=mxblk, ncat=ncat, nlayer=nlayer, nyblk=nyblk, nxblk=nxblk)
    forcing = b.forcing if b.forcing is not None else np.zeros_like(b.values)
    _require_finite(b.values, forcing)
    bufs = (SharedArray(b.values.copy(), "u0"), SharedArray(np.empty_like(b.values), "u1"))
    f_sh = SharedArray(forcing, "forcing")
    blk = ncat * nlayer * nyblk * nxblk
    shape = (ncat * nlayer, nyblk, nxblk)
    rate = dte * strength

    def body(ctx):
        view = ctx.view
        mine = [i for (i,) in ctx.items(nest)]
        if mine:
            f_off = view.alloc(len(mine) * blk * F8)
            for n, i in enumerate(mine):
                view.dma_get(f_sh.at(i * blk), f_off + n * blk * F8, blk * F8)
            fs = view.array(f_off, len(mine) * blk).reshape(len(mine), *shape)
            drive = [(fs[n] * dte, np.abs(fs[n]) * rate) for n in range(len(mine))]
            u_off, w_off, e_off = (view.alloc(blk * F8) for _ in range(3))
            u = view.array(u_off, blk).reshape(shape)
            uw = view.array(w_off, blk).reshape(shape)
            ue = view.array(e_off, blk).reshape(shape)
            pad = np.empty((shape[0], nyblk + 2, nxblk + 2))
        for s in range(n_subcycles):
            cur, nxt = bufs[s % 2], bufs[(s + 1) % 2]
            for n, i in enumerate(mine):
                view.dma_get(cur.at(i * blk), u_off, blk * F8)
                view.dma_get(cur.at(((i - 1) % mxblk) * blk), w_off, blk * F8)
                view.dma_get(cur.at(((i + 1) % mxblk) * blk), e_off, blk * F8)
                pad[:, 1:-1, 1:-1] = u
                pad[:, 1:-1, 0] = uw[:, :, -1]
                pad[:, 1:-1, -1] = ue[:, :, 0]
                pad[:, 0, :] = pad[:, 1, :]
                pad[:, -1, :] = pad[:, -2, :]
                push, stiff = drive[n]
                u += push + stiff * _five_point(pad)
                view.dma_put(u_off, nxt.at(i * blk), blk * F8)
            ctx.barrier()

    _run(group, body, serial, "cice-evp", profiler)
    return BlockField(bufs[n_subcycles % 2].data, b.forcing)


# -- problem-size presets ------------------------------------------------------

def atm_scale(preset: str) -> int:
    try:
        return ATM_PRESETS[preset]
    except KeyError:
        raise KernelError(f"unknown atmosphere preset {preset!r}; choose from {sorted(ATM_PRESETS)}") from None


def ocn_scale(preset: str) -> float:
    try:
        return OCN_PRESETS[preset]
    except KeyError:
        raise KernelError(f"unknown ocean preset {preset!r}; choose from {sorted(OCN_PRESETS)}") from None


def preset_dims(kernel: str, preset: str) -> tuple[int, ...]:
    """Desk-scale dims per core group for a kernel at a resolution preset."""
    if kernel == "cam-dyn":
        s = atm_scale(preset)
        return (CAM_DYN_DIMS[0] * s, *CAM_DYN_DIMS[1:])
    if kernel == "cam-phys":
        s = atm_scale(preset)
        return (CAM_PHYS_DIMS[0] * s, *CAM_PHYS_DIMS[1:])
    if kernel == "prefix-sum":
        return (1024 * atm_scale(preset),)
    if kernel in ("pop-vmix", "pop-hmix"):
        s = ocn_scale(preset)
        return (max(1, round(POP_DIMS[0] * s)), *POP_DIMS[1:])
    if kernel == "cice-evp":
        s = ocn_scale(preset)
        return (round(CICE_DIMS[0] * s), *CICE_DIMS[1:])
    raise KernelError(f"unknown kernel {kernel!r}")
