"""Kernel suites: deterministic inputs, reference/offloaded execution, checks.

A suite run builds inputs for each selected kernel from a 64-bit seed,
executes them on one or more simulated core groups and, in ``mpe+cpe``
mode, compares every offloaded output against the MPE-only reference.
The report separates deterministic content from timing so two runs with
the same config diff cleanly apart from the ``timing`` key.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels as K
from .archsim import CoreGroupSpec, spawn_core_group
from .profile import Profiler
from .verify import Mode, compare, record

SUITES = ("cam-dyn", "cam-phys", "pop-vmix", "pop-hmix", "cice-evp", "prefix-sum")
MODES = ("mpe", "mpe+cpe")
REPORT_SCHEMA = "o2proxy.run/1"

VERIFY_CLASS = {s: K.BIT_EXACT for s in SUITES} | {"prefix-sum": K.TOLERANCE}
PREFIX_REL_TOL = 1e-12


def check_mode(suite: str) -> Mode:
    return Mode.bit() if VERIFY_CLASS[suite] == K.BIT_EXACT else Mode.rel(PREFIX_REL_TOL)


def _family(suite: str) -> str:
    return "atm" if suite in ("cam-dyn", "cam-phys", "prefix-sum") else "ocn"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    suite: str = "all"
    mode: str = "mpe+cpe"
    n_cpes: int = 64
    n_core_groups: int = 1
    atm_preset: str = "ne30"
    ocn_preset: str = "ts015"
    seed: int = 0
    out: str = "o2proxy-run"
    evp_subcycles: int = 120

    def __post_init__(self):
        if self.suite != "all" and self.suite not in SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 1 <= self.n_cpes <= 64:
            raise ConfigError("n_cpes must be in 1..64")
        if self.n_core_groups < 1:
            raise ConfigError("n_core_groups must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.evp_subcycles < 1:
            raise ConfigError("evp_subcycles must be >= 1")
        K.atm_scale(self.atm_preset)
        K.ocn_scale(self.ocn_preset)

    @property
    def suites(self) -> tuple[str, ...]:
        return SUITES if self.suite == "all" else (self.suite,)

    def preset_for(self, suite: str) -> str:
        return self.atm_preset if _family(suite) == "atm" else self.ocn_preset

    def with_preset(self, preset: str) -> "RunConfig":
        """Route a single resolution name to the matching model family."""
        if preset in K.ATM_PRESETS:
            return RunConfig(**{**asdict(self), "atm_preset": preset})
        if preset in K.OCN_PRESETS:
            return RunConfig(**{**asdict(self), "ocn_preset": preset})
        raise ConfigError(f"unknown preset {preset!r}; choose from "
                          f"{sorted(K.ATM_PRESETS) + sorted(K.OCN_PRESETS)}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**d)
        return cfg.with_preset(preset) if preset else cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def seed_for(seed: int, suite: str, group_index: int) -> np.random.SeedSequence:
    # one independent stream per (suite, core group), stable across runs
    return np.random.SeedSequence(seed, spawn_key=(SUITES.index(suite), group_index))


def make_input(suite: str, dims, rng):
    rng = np.random.default_rng(rng)
    if suite == "cam-dyn":
        return K.ElementField.random(dims, rng)
    if suite == "cam-phys":
        return K.ChunkedColumns.random(dims, rng)
    if suite in ("pop-vmix", "pop-hmix"):
        return K.BlockField.random(dims, rng)
    if suite == "cice-evp":
        return K.BlockField.random(dims, rng, forcing=True)
    if suite == "prefix-sum":
        (n,) = dims
        # nonnegative integrand: partial sums never cross zero, so the
        # per-element relative check stays well conditioned
        return rng.uniform(0.0, 1.0, n), rng.uniform(0.5, 1.5, n)
    raise K.KernelError(f"unknown kernel {suite!r}")


def execute(suite: str, inp, *, group=None, serial: bool = False, profiler=None,
            evp_subcycles: int = 120) -> np.ndarray:
    """Run one kernel step and return its primary output array."""
    kw = dict(group=group, serial=serial, profiler=profiler)
    if suite == "cam-dyn":
        return K.dycore_step(inp, **kw).values
    if suite == "cam-phys":
        return K.physics_step(inp, **kw).t
    if suite == "pop-vmix":
        return K.pop_vmix_step(inp, **kw).values
    if suite == "pop-hmix":
        return K.pop_hmix_step(inp, **kw).values
    if suite == "cice-evp":
        return K.cice_evp_step(inp, n_subcycles=evp_subcycles, **kw).values
    if suite == "prefix-sum":
        return K.vertical_prefix_sum(*inp, **kw)
    raise K.KernelError(f"unknown kernel {suite!r}")


def _run_one(cfg: RunConfig, suite: str, cg: int, out: Path, profiler: Profiler) -> tuple[dict, dict]:
    dims = K.preset_dims(suite, cfg.preset_for(suite))
    inp = make_input(suite, dims, seed_for(cfg.seed, suite, cg))
    label = f"{suite}.cg{cg}"
    spec = CoreGroupSpec(n_cpes=cfg.n_cpes)
    timing: dict = {}
    with spawn_core_group(spec, group_id=cg) as group:
        serial = cfg.mode == "mpe"
        t0 = time.perf_counter()
        result = execute(suite, inp, group=group, serial=serial, profiler=profiler,
                         evp_subcycles=cfg.evp_subcycles)
        timing["wall_seconds"] = time.perf_counter() - t0
        ledger = group.ledger()
        timing["modeled_seconds"] = ledger.modeled_seconds
        entry = {
            "checkpoint": f"{label}.bin",
            "dims": list(result.shape),
            "dma_bytes": ledger.dma_bytes,
            "rma_bytes": ledger.rma_bytes,
            "gmem_bytes": ledger.gmem_bytes,
            "compare": None,
        }
        with profiler.region("checkpoint", "IO"):
            cp = record(label, result, out)
        entry["sha256"] = cp.digest
        if not serial:
            t0 = time.perf_counter()
            ref = execute(suite, inp, group=group, serial=True, profiler=profiler,
                          evp_subcycles=cfg.evp_subcycles)
            timing["reference_wall_seconds"] = time.perf_counter() - t0
            entry["compare"] = compare(record(f"{label}.ref", ref), cp, check_mode(suite)).to_dict()
    return entry, timing


def run_suites(cfg: RunConfig, profiler: Profiler | None = None) -> dict:
    """Execute the configured suites and write checkpoints, profile and report
    into ``cfg.out``. Returns the report dict."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    profiler = profiler or Profiler()
    results: dict = {}
    timing: dict = {}
    ok = True
    t_start = time.perf_counter()
    for suite in cfg.suites:
        with ThreadPoolExecutor(max_workers=cfg.n_core_groups) as pool:
            futs = [pool.submit(_run_one, cfg, suite, cg, out, profiler) for cg in range(cfg.n_core_groups)]
            done = [f.result() for f in futs]
        entries = [e for e, _ in done]
        ok &= all(e["compare"] is None or e["compare"]["status"] == "match" for e in entries)
        results[suite] = {
            "preset": cfg.preset_for(suite),
            "verification_class": VERIFY_CLASS[suite],
            "check_mode": str(check_mode(suite)),
            "core_groups": entries,
        }
        timing[suite] = [t for _, t in done]
    timing["total_wall_seconds"] = time.perf_counter() - t_start
    prof = profiler.report()
    (out / "profile.json").write_text(json.dumps(prof, indent=2))
    timing["profile"] = {k: prof[k] for k in ("total_seconds", "categories", "components")}
    report = {
        "schema": REPORT_SCHEMA,
        "config": asdict(cfg),
        "status": "pass" if ok else "fail",
        "results": results,
        "timing": timing,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def deterministic_part(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timing"}

