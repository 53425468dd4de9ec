"""Bitwise checking of reference (MPE) against offloaded (MPE+CPE) outputs.

Checkpoints hold float64 payloads in the kernels' flat binary format.
Comparison modes:

* ``bit``      raw 64-bit patterns must be identical;
* ``ulp:k``    at most k representable doubles apart;
* ``rel:eps``  |a - b| <= eps * max(|a|, |b|).

In every mode NaNs match only the identical bit pattern, and identical
bit patterns always match. +0.0 and -0.0 differ in ``bit`` and ``ulp``
modes (they are one ulp apart) and are equal in ``rel`` mode.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import decode_array, encode_array

_SIGN = np.uint64(1 << 63)


class DimsMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Mode:
    kind: str = "bit"
    ulps: int = 0
    eps: float = 0.0

    def __post_init__(self):
        if self.kind not in ("bit", "ulp", "rel"):
            raise ValueError(f"unknown mode {self.kind!r}")
        if self.ulps < 0 or self.eps < 0:
            raise ValueError("tolerances must be non-negative")

    @classmethod
    def bit(cls) -> "Mode":
        return cls("bit")

    @classmethod
    def ulp(cls, k: int) -> "Mode":
        return cls("ulp", ulps=int(k))

    @classmethod
    def rel(cls, eps: float) -> "Mode":
        return cls("rel", eps=float(eps))

    @classmethod
    def parse(cls, text: str) -> "Mode":
        """'bit', 'ulp:K' or 'rel:EPS'."""
        kind, _, arg = text.strip().lower().partition(":")
        if kind == "bit" and not arg:
            return cls.bit()
        if kind == "ulp" and arg:
            return cls.ulp(int(arg))
        if kind == "rel" and arg:
            return cls.rel(float(arg))
        raise ValueError(f"cannot parse comparison mode {text!r}")

    def __str__(self):
        return {"bit": "bit", "ulp": f"ulp:{self.ulps}", "rel": f"rel:{self.eps:g}"}[self.kind]


@dataclass
class Checkpoint:
    label: str
    dims: tuple[int, ...]
    payload: np.ndarray
    digest: str = ""
    path: Path | None = None

    def __post_init__(self):
        self.payload = np.ascontiguousarray(self.payload, dtype=np.float64).reshape(-1)
        self.dims = tuple(int(d) for d in self.dims)
        if int(np.prod(self.dims, dtype=np.int64)) != self.payload.size:
            raise DimsMismatch(f"dims {self.dims} do not match {self.payload.size} elements")
        h = hashlib.sha256(self.payload.tobytes()).hexdigest()
        if self.digest and self.digest != h:
            raise ValueError(f"checkpoint {self.label!r}: payload hash mismatch")
        self.digest = h

    def array(self) -> np.ndarray:
        return self.payload.reshape(self.dims)

    @classmethod
    def load(cls, path, label: str | None = None) -> "Checkpoint":
        path = Path(path)
        arr = decode_array(path.read_bytes())
        return cls(label or path.stem, arr.shape, arr, path=path)


def record(label: str, array, directory=None) -> Checkpoint:
    """Snapshot ``array``; with ``directory``, also persist it as ``<label>.bin``."""
    arr = np.asarray(array, dtype=np.float64)
    cp = Checkpoint(label, arr.shape, arr.copy())
    if directory is not None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        cp.path = d / f"{label}.bin"
        cp.path.write_bytes(encode_array(arr))
    return cp


@dataclass
class Mismatch:
    index: int
    bits_a: str
    bits_b: str
    value_a: float
    value_b: float


@dataclass
class CompareReport:
    mode: str
    status: str
    mismatch_count: int = 0
    first_mismatch: Mismatch | None = None
    labels: tuple[str, str] = field(default_factory=lambda: ("a", "b"))

    @property
    def ok(self) -> bool:
        return self.status == "match"

    def to_dict(self) -> dict:
        fm = self.first_mismatch
        return {
            "mode": self.mode,
            "status": self.status,
            "mismatch_count": self.mismatch_count,
            "first_mismatch": None if fm is None else {
                "index": fm.index, "bits_a": fm.bits_a, "bits_b": fm.bits_b,
                "value_a": repr(fm.value_a), "value_b": repr(fm.value_b),
            },
            "labels": list(self.labels),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _ordered(bits: np.ndarray) -> np.ndarray:
    """Map float64 bit patterns to integers that are monotone in value, with
    -0.0 one step below +0.0."""
    neg = (bits & _SIGN) != 0
    mag = (bits & ~_SIGN).astype(np.int64)
    return np.where(neg, -mag - 1, mag)


def ulp_distance(a, b) -> np.ndarray:
    """Number of representable doubles between a and b (elementwise, uint64)."""
    oa = _ordered(np.ascontiguousarray(a, dtype=np.float64).view(np.uint64))
    ob = _ordered(np.ascontiguousarray(b, dtype=np.float64).view(np.uint64))
    # unsigned wrap-around gives the exact difference, which is < 2**64
    return np.maximum(oa, ob).astype(np.uint64) - np.minimum(oa, ob).astype(np.uint64)


def mismatch_mask(a: np.ndarray, b: np.ndarray, mode: Mode) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1)
    ba, bb = a.view(np.uint64), b.view(np.uint64)
    same_bits = ba == bb
    if mode.kind == "bit":
        return ~same_bits
    special = ~(np.isfinite(a) & np.isfinite(b))
    if mode.kind == "ulp":
        bad = ulp_distance(a, b) > np.uint64(mode.ulps)
    else:
        with np.errstate(invalid="ignore", over="ignore"):
            bad = ~(np.abs(a - b) <= mode.eps * np.maximum(np.abs(a), np.abs(b)))
    return ~same_bits & (special | bad)


def compare(a: Checkpoint, b: Checkpoint, mode: Mode | str = Mode()) -> CompareReport:
    if isinstance(mode, str):
        mode = Mode.parse(mode)
    if a.dims != b.dims:
        raise DimsMismatch(f"{a.label}: {a.dims} vs {b.label}: {b.dims}")
    bad = mismatch_mask(a.payload, b.payload, mode)
    count = int(bad.sum())
    first = None
    if count:
        i = int(np.argmax(bad))
        va, vb = a.payload[i], b.payload[i]
        first = Mismatch(i, f"{int(va.view(np.uint64)):016x}", f"{int(vb.view(np.uint64)):016x}",
                         float(va), float(vb))
    return CompareReport(str(mode), "match" if count == 0 else "mismatch", count, first, (a.label, b.label))


def compare_files(path_a, path_b, mode: Mode | str = Mode()) -> CompareReport:
    return compare(Checkpoint.load(path_a), Checkpoint.load(path_b), mode)
