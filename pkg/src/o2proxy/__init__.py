"""Offload runtime, climate proxy kernels and initialization collectives on a
simulated manycore core group."""

from .archsim import CoreGroup, CoreGroupSpec, CostLedger, SharedArray, spawn_core_group
from .offload import LoopNest, StackPolicy, parallel_for, parallel_region, run, serial_region
from .profile import Profiler, compute_sdpd, scaling_efficiency
from .verify import Checkpoint, Mode, compare, record

__version__ = "0.1.0"
