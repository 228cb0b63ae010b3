"""Lowering of convolution and fully-connected layers onto the DIMC lane.

A layer maps in five phases per kernel group: load the group's kernels into
weight rows, load one input patch into the input buffer, fire one compute
per kernel row, slide the window, and reload kernels for the next group.
A kernel (re)load is a hard phase boundary: the stream carries a barrier
that drains the pipeline before weight rows are overwritten, so per-group
costs add exactly instead of overlapping across the swap.
Kernels are flattened along (kh, kw, ich) with ich fastest, split into
1024-bit row chunks when they exceed one row (tiling factor T), and
processed in groups of at most floor(32 / T) kernels (grouping), chaining
the 24-bit partial through dc.p between the chunks of one kernel.

External-memory layout (all offsets 8-byte aligned)
---------------------------------------------------
The host marshals tensors so that every transfer is a unit-stride 64-bit
load, which keeps the instruction pattern identical for every output
position. Patches are pre-gathered im2col style, one zero-padded record
per output position mirroring the per-row weight layout element for
element; this realizes the conservative no-reuse policy where each patch
is fetched from memory in full.

    weights  : och records of ceil(kernel_bits/64)*8 bytes each
    patches  : oh*ow records, same record size as weights
    outputs  : one region per group, one record per output position;
               quantized flow packs two nibbles per byte in kernel order
               (odd counts leave the last high nibble zero), partial flow
               stores one sign-extended 32-bit partial per kernel

Register allocation
-------------------
    v0        always-zero partial source (never written; the register
              file reads unwritten registers as zero)
    v1..v16   load staging, batched per row chunk so loads pipeline
    v17..v24  live partials, kernel k of a group in half k%2 of v17+k//2
    v25..v28  packed quantized outputs

Chunks never need more than 16 staging registers (a full row is 16
slices), and any tiled kernel (T >= 2) runs with at most 16 kernels per
group, so partials fit the eight dedicated registers. Untiled partial-sum
flows can have up to 32 kernels per group and emit their computes in
batches of 16 with a store burst after each batch.

Rows and buffer sectors that a layer never loads keep the tile's initial
zeros, so partially filled rows multiply against zero instead of stale
data; groups always rewrite the same sector pattern, which keeps that
guarantee across kernel reloads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .isa import DcF, DcP, DlI, DlM
from .sim import Barrier, Program, Repeat, VClear, VLoad, VStore
from .tile import PrecisionMode, QuantConfig, ROW_BITS, ROWS, pack_elements

REG_ZERO = 0
REG_STAGE = 1
REG_PART = 17
REG_OUT = 25

_PARTIAL_BATCH = 16


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class MappingError(ValueError):
    """The layer cannot be planned or lowered as requested."""


class NotDimcEligibleError(MappingError):
    """The layer violates a DIMC constraint (precision or capacity)."""


@dataclass(frozen=True)
class LayerDescriptor:
    """Shape and precision of one convolutional or fully-connected layer.

    A fully-connected layer is the kind="fc" degenerate case with
    h = w = kh = kw = 1 over flattened input features.
    """

    kind: str
    ich: int
    och: int
    h: int = 1
    w: int = 1
    kh: int = 1
    kw: int = 1
    stride: int = 1
    padding: int = 0
    precision: PrecisionMode = PrecisionMode()

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise MappingError(f"unknown layer kind {self.kind!r}")
        if self.kind == "fc" and (self.h, self.w, self.kh, self.kw) != (1, 1, 1, 1):
            raise MappingError("fc layers must have h = w = kh = kw = 1")
        for name in ("ich", "och", "h", "w", "kh", "kw", "stride"):
            if getattr(self, name) < 1:
                raise MappingError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.padding < 0:
            raise MappingError(f"padding must be >= 0, got {self.padding}")
        if self.oh < 1 or self.ow < 1:
            raise MappingError(
                f"empty output: oh={self.oh}, ow={self.ow} for "
                f"h={self.h}, w={self.w}, k={self.kh}x{self.kw}, "
                f"stride={self.stride}, padding={self.padding}")

    @property
    def oh(self) -> int:
        return (self.h + 2 * self.padding - self.kh) // self.stride + 1

    @property
    def ow(self) -> int:
        return (self.w + 2 * self.padding - self.kw) // self.stride + 1

    @property
    def kernel_elements(self) -> int:
        return self.ich * self.kh * self.kw


@dataclass(frozen=True)
class MappingPlan:
    """Derived tiling/grouping factors and the per-group instruction budget."""

    kernel_bits: int
    tiling_factor: int
    kernels_per_group: int
    group_count: int
    budget: dict = field(default_factory=dict)

    @property
    def tiled(self) -> bool:
        return self.tiling_factor > 1

    @property
    def grouped(self) -> bool:
        return self.group_count > 1


def plan_mapping(layer: LayerDescriptor) -> MappingPlan:
    """Compute tiling factor, kernels per group and group count for a layer."""
    mode = layer.precision
    if not mode.dimc_supported:
        raise NotDimcEligibleError(
            f"precision {mode.bits}-bit exceeds the 4-bit DIMC maximum")
    kernel_bits = layer.kernel_elements * mode.bits
    tiling = _ceil_div(kernel_bits, ROW_BITS)
    if tiling > ROWS:
        raise NotDimcEligibleError(
            f"kernel needs {tiling} rows, more than the {ROWS} available")
    per_group = ROWS // tiling
    groups = _ceil_div(layer.och, per_group)
    budget = {
        "dlm_sector_loads_per_group": per_group * _row_sector_count(kernel_bits),
        "dli_sector_loads_per_position": _row_sector_count(kernel_bits),
        "computes_per_position_per_kernel": tiling,
    }
    return MappingPlan(kernel_bits=kernel_bits, tiling_factor=tiling,
                       kernels_per_group=per_group, group_count=groups,
                       budget=budget)


def ops_count(layer: LayerDescriptor) -> int:
    """Total operation count with each MAC counted as two operations."""
    return 2 * layer.och * layer.oh * layer.ow * layer.kernel_elements


def _chunk_bits(kernel_bits: int, t: int) -> int:
    return min(ROW_BITS, kernel_bits - ROW_BITS * t)


def _sector_plan(chunk_bits: int):
    """(sector, nvec, mask) loads covering chunk_bits, trailing parts omitted."""
    plan = []
    for sec in range(_ceil_div(chunk_bits, 256)):
        bits = min(256, chunk_bits - 256 * sec)
        nvec = _ceil_div(bits, 64)
        plan.append((sec, nvec, (1 << nvec) - 1))
    return plan


def _row_sector_count(kernel_bits: int) -> int:
    total = 0
    for t in range(_ceil_div(kernel_bits, ROW_BITS)):
        total += len(_sector_plan(_chunk_bits(kernel_bits, t)))
    return total


def _group_sizes(layer: LayerDescriptor, plan: MappingPlan) -> list[int]:
    sizes = [plan.kernels_per_group] * (layer.och // plan.kernels_per_group)
    rest = layer.och % plan.kernels_per_group
    if rest:
        sizes.append(rest)
    return sizes


def _partial_slot(k: int) -> tuple[int, int]:
    slot = k % _PARTIAL_BATCH
    return REG_PART + slot // 2, slot % 2


def _final_target(k: int) -> tuple[int, int, int]:
    byte = k // 2
    return REG_OUT + byte // 8, (byte % 8) // 4, byte % 4


class _Layout:
    """Byte offsets of the weight, patch and output regions."""

    def __init__(self, layer: LayerDescriptor, plan: MappingPlan, terminal: str):
        self.record_bytes = _ceil_div(plan.kernel_bits, 64) * 8
        self.weights_base = 0
        self.patches_base = layer.och * self.record_bytes
        positions = layer.oh * layer.ow
        self.out_base = []
        self.out_record = []
        offset = self.patches_base + positions * self.record_bytes
        for size in _group_sizes(layer, plan):
            if terminal == "final":
                rec = _ceil_div(_ceil_div(size, 2), 8) * 8
            else:
                # 16-kernel batches of 32-bit partials, each batch padded
                # to whole stored registers
                rec = (size // _PARTIAL_BATCH) * 8 * _PARTIAL_BATCH // 2
                rest = size % _PARTIAL_BATCH
                rec += _ceil_div(rest, 2) * 8
            self.out_base.append(offset)
            self.out_record.append(rec)
            offset += positions * rec
        self.total_bytes = offset


class _Emitter:
    def __init__(self, layer: LayerDescriptor, plan: MappingPlan,
                 terminal: str, layout: _Layout):
        self.layer = layer
        self.plan = plan
        self.terminal = terminal
        self.layout = layout
        self.group_sizes = _group_sizes(layer, plan)

    def _chunk_loads(self, out: list, base: int, chunk_bits: int, make) -> None:
        # batch every slice load first so the loads pipeline, then issue
        # the sector transfers
        for i in range(_ceil_div(chunk_bits, 64)):
            out.append(VLoad(REG_STAGE + i, base + 8 * i))
        for sec, nvec, mask in _sector_plan(chunk_bits):
            out.append(make(REG_STAGE + 4 * sec, nvec, sec, mask))

    def group_prologue(self, g: int) -> list:
        layer, plan, layout = self.layer, self.plan, self.layout
        # a kernel (re)load starts only once the pipeline has drained
        out: list = [Barrier()]
        size = self.group_sizes[g]
        if self.terminal == "final":
            for j in range(layout.out_record[g] // 8):
                out.append(VClear(REG_OUT + j))
        for k in range(size):
            record = layout.weights_base + (g * plan.kernels_per_group + k) * layout.record_bytes
            for t in range(plan.tiling_factor):
                row = k * plan.tiling_factor + t
                bits = _chunk_bits(plan.kernel_bits, t)
                self._chunk_loads(
                    out, record + t * (ROW_BITS // 8), bits,
                    lambda vs1, nvec, sec, mask, row=row: DlM(
                        vs1=vs1, nvec=nvec, sec=sec, mask=mask, m_row=row))
        return out

    def position_block(self, g: int, pos: int) -> list:
        layer, plan, layout = self.layer, self.plan, self.layout
        size = self.group_sizes[g]
        tiles = plan.tiling_factor
        patch = layout.patches_base + pos * layout.record_bytes
        out_rec = layout.out_base[g] + pos * layout.out_record[g]
        out: list = []
        if self.terminal == "partial" and tiles == 1:
            self._chunk_loads(out, patch, plan.kernel_bits, self._dli)
            for start in range(0, size, _PARTIAL_BATCH):
                batch = min(_PARTIAL_BATCH, size - start)
                for k in range(start, start + batch):
                    reg, half = _partial_slot(k)
                    out.append(DcP(vs1=REG_ZERO, vd=reg, sh=0, dh=half, m_row=k))
                for j in range(_ceil_div(batch, 2)):
                    out.append(VStore(REG_PART + j, out_rec + (start // 2) * 8 + 8 * j))
            return out
        for t in range(tiles):
            bits = _chunk_bits(plan.kernel_bits, t)
            self._chunk_loads(out, patch + t * (ROW_BITS // 8), bits, self._dli)
            last = t == tiles - 1
            for k in range(size):
                row = k * tiles + t
                preg, phalf = _partial_slot(k)
                src, shalf = (REG_ZERO, 0) if t == 0 else (preg, phalf)
                if not last:
                    out.append(DcP(vs1=src, vd=preg, sh=shalf, dh=phalf, m_row=row))
                elif self.terminal == "partial":
                    out.append(DcP(vs1=src, vd=preg, sh=shalf, dh=phalf, m_row=row))
                else:
                    oreg, odh, obidx = _final_target(k)
                    out.append(DcF(vs1=src, vd=oreg, sh=shalf, dh=odh,
                                   m_row=row, bidx=obidx))
        if self.terminal == "partial":
            for j in range(_ceil_div(size, 2)):
                out.append(VStore(REG_PART + j, out_rec + 8 * j))
        else:
            for j in range(layout.out_record[g] // 8):
                out.append(VStore(REG_OUT + j, out_rec + 8 * j))
        return out

    @staticmethod
    def _dli(vs1, nvec, sec, mask):
        return DlI(vs1=vs1, nvec=nvec, sec=sec, mask=mask)

    def flat(self) -> list:
        body: list = []
        positions = self.layer.oh * self.layer.ow
        for g in range(len(self.group_sizes)):
            body.extend(self.group_prologue(g))
            for pos in range(positions):
                body.extend(self.position_block(g, pos))
        return body

    def compressed(self) -> list:
        body: list = []
        positions = self.layer.oh * self.layer.ow
        full = self.layer.och // self.plan.kernels_per_group
        if full:
            group = tuple(self.group_prologue(0)) + (
                Repeat(positions, self.position_block(0, 0)),)
            body.append(Repeat(full, group))
        if self.layer.och % self.plan.kernels_per_group:
            g = len(self.group_sizes) - 1
            body.extend(self.group_prologue(g))
            body.append(Repeat(positions, self.position_block(g, 0)))
        return body


@dataclass(frozen=True)
class Lowering:
    """A lowered layer: the program plus its external-memory conventions."""

    layer: LayerDescriptor
    plan: MappingPlan
    terminal: str
    quant: QuantConfig
    program: Program
    _layout: _Layout

    def memory_image(self, inputs, weights) -> bytearray:
        """Marshal integer tensors into the external-memory image.

        ``inputs`` has shape (h, w, ich) and ``weights`` (och, kh, kw, ich);
        values must lie in the precision mode's element ranges.
        """
        layer, layout = self.layer, self._layout
        mode = layer.precision
        inputs = self._checked(inputs, (layer.h, layer.w, layer.ich),
                               mode.input_range(), "inputs")
        weights = self._checked(weights, (layer.och, layer.kh, layer.kw, layer.ich),
                                mode.weight_range(), "weights")
        memory = bytearray(layout.total_bytes)
        for k in range(layer.och):
            packed = pack_elements(weights[k].reshape(-1), mode.bits).tobytes()
            base = layout.weights_base + k * layout.record_bytes
            memory[base:base + len(packed)] = packed
        pad = layer.padding
        padded = np.zeros((layer.h + 2 * pad, layer.w + 2 * pad, layer.ich), dtype=np.int64)
        padded[pad:pad + layer.h, pad:pad + layer.w] = inputs
        for oy in range(layer.oh):
            for ox in range(layer.ow):
                window = padded[oy * layer.stride:oy * layer.stride + layer.kh,
                                ox * layer.stride:ox * layer.stride + layer.kw]
                packed = pack_elements(window.reshape(-1), mode.bits).tobytes()
                base = layout.patches_base + (oy * layer.ow + ox) * layout.record_bytes
                memory[base:base + len(packed)] = packed
        return memory

    def extract_output(self, memory) -> np.ndarray:
        """Read the output tensor (oh, ow, och) back from the memory image.

        Quantized flows return nibble values, partial flows the
        sign-extended 24-bit partial sums.
        """
        layer, plan, layout = self.layer, self.plan, self._layout
        out = np.zeros((layer.oh, layer.ow, layer.och), dtype=np.int64)
        positions = layer.oh * layer.ow
        for g, size in enumerate(_group_sizes(layer, plan)):
            for pos in range(positions):
                rec = layout.out_base[g] + pos * layout.out_record[g]
                oy, ox = divmod(pos, layer.ow)
                for k in range(size):
                    och = g * plan.kernels_per_group + k
                    if self.terminal == "final":
                        byte = memory[rec + k // 2]
                        out[oy, ox, och] = byte >> 4 if k % 2 else byte & 0xF
                    else:
                        out[oy, ox, och] = int.from_bytes(
                            memory[rec + 4 * k:rec + 4 * k + 4], "little", signed=True)
        return out

    @staticmethod
    def _checked(tensor, shape, bounds, name) -> np.ndarray:
        arr = np.asarray(tensor)
        if arr.shape != shape:
            raise MappingError(f"{name} shape {arr.shape} does not match layer {shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise MappingError(f"{name} must be an integer tensor, got {arr.dtype}")
        lo, hi = bounds
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise MappingError(f"{name} values outside [{lo}, {hi}] for this precision")
        return arr.astype(np.int64)


def _resolve(layer: LayerDescriptor, plan: MappingPlan | None,
             terminal: str, quant: QuantConfig | None):
    if terminal not in ("final", "partial"):
        raise MappingError(f"terminal must be 'final' or 'partial', got {terminal!r}")
    if plan is None:
        plan = plan_mapping(layer)
    elif plan != plan_mapping(layer):
        raise MappingError("mapping plan does not match the layer")
    return plan, quant if quant is not None else QuantConfig()


def lower(layer: LayerDescriptor, plan: MappingPlan | None = None, *,
          terminal: str = "final", quant: QuantConfig | None = None) -> Lowering:
    """Lower a layer to a flat, functionally executable instruction stream.

    ``terminal`` picks how each kernel's chain ends: "final" emits dc.f
    (ReLU + requantization, packed nibbles), "partial" emits dc.p and
    stores raw partial sums.
    """
    plan, quant = _resolve(layer, plan, terminal, quant)
    layout = _Layout(layer, plan, terminal)
    emitter = _Emitter(layer, plan, terminal, layout)
    program = Program(emitter.flat(), mode=layer.precision, quant=quant)
    return Lowering(layer=layer, plan=plan, terminal=terminal, quant=quant,
                    program=program, _layout=layout)


def lower_compressed(layer: LayerDescriptor, plan: MappingPlan | None = None, *,
                     terminal: str = "final", quant: QuantConfig | None = None) -> Program:
    """Lower a layer to a loop-compressed program for timing-only runs.

    Cycle counts match the flat stream exactly; only memory addresses
    differ between the represented iterations, and those never influence
    timing.
    """
    plan, quant = _resolve(layer, plan, terminal, quant)
    layout = _Layout(layer, plan, terminal)
    emitter = _Emitter(layer, plan, terminal, layout)
    return Program(emitter.compressed(), mode=layer.precision, quant=quant)
