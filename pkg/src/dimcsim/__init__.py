"""dimcsim: simulator for a RISC-V vector core with an in-pipeline digital
in-memory-compute lane, plus the layer-lowering toolchain and evaluation
metrics around it."""

from .baseline import BaselineCostConfig, baseline_cycles
from .isa import DcF, DcP, DlI, DlM, assemble, decode, disassemble, encode
from .mapper import (LayerDescriptor, MappingPlan, NotDimcEligibleError,
                     lower, lower_compressed, ops_count, plan_mapping)
from .metrics import PerfReport, ans, gops, peak_gops, speedup
from .sim import (Program, Repeat, SimOutcome, TimingModel, VClear, VLoad,
                  VStore, class_of, execute, run_layer)
from .tile import DimcTile, PrecisionMode, QuantConfig, wrap_partial

__version__ = "0.1.0"

__all__ = [
    "BaselineCostConfig", "baseline_cycles",
    "DcF", "DcP", "DlI", "DlM", "assemble", "decode", "disassemble", "encode",
    "LayerDescriptor", "MappingPlan", "NotDimcEligibleError",
    "lower", "lower_compressed", "ops_count", "plan_mapping",
    "PerfReport", "ans", "gops", "peak_gops", "speedup",
    "Program", "Repeat", "SimOutcome", "TimingModel",
    "VClear", "VLoad", "VStore", "class_of", "execute", "run_layer",
    "DimcTile", "PrecisionMode", "QuantConfig", "wrap_partial",
]
