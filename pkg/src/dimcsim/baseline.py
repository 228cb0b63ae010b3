"""Analytic cycle cost of running a layer on the plain vector core at INT8.

The reference core has no in-memory lane and a minimum element width of
8 bits, so one vector operation covers VLEN/8 = 8 elements. The model is a
closed formula rather than an instruction-by-instruction simulation, with
every constant overridable so reported speedups stay auditable:

    cycles = och * oh * ow *
             ( ceil(ich*kh*kw / lanes) * (load + mac) + reduce + store )
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BaselineCostConfig:
    lanes_int8: int = 8
    load_cycles: int = 8
    mac_cycles: int = 1
    reduce_cycles: int = 4
    store_cycles: int = 8

    def __post_init__(self):
        for name in ("lanes_int8", "load_cycles", "mac_cycles",
                     "reduce_cycles", "store_cycles"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


def baseline_cycles(layer, cfg: BaselineCostConfig = BaselineCostConfig()) -> int:
    """Cycles for the whole layer on the baseline core."""
    chunks = -(-layer.kernel_elements // cfg.lanes_int8)
    per_output = chunks * (cfg.load_cycles + cfg.mac_cycles) + cfg.reduce_cycles + cfg.store_cycles
    return layer.och * layer.oh * layer.ow * per_output
