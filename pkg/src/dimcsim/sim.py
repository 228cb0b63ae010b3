"""Cycle-approximate execution engine for the DIMC-extended vector core.

The machine model is a single-issue in-order vector pipeline (VLEN = 64,
ELEN = 32) with the DIMC tile attached as an extra execution lane. Only the
instruction subset the layer mapper emits is modeled: unit-stride 64-bit
vector loads and stores against a flat external memory, register clears,
and the four custom tile instructions.

Timing contract
---------------
Each instruction issues at the earliest cycle t such that

  * t is strictly after the previous issue (single issue, in order),
  * the instruction's class unit is free (per-class issue interval),
  * every value it reads is ready, where a producer issued at t' with
    latency L makes its results ready at t' + L.

Operands are captured at issue, so write-after-read never stalls, and
write ports are not modeled, so write-after-write never stalls either; in
particular back-to-back dc.f results stream into the same destination
register one per cycle, with the nibble packing handled by the write-back
stage. Functional state always evolves in program order, making results
independent of the latency table.

Each cycle of the run is attributed to exactly one of three classes
(computing, loading, storing): the gap from one instruction's issue to the
next instruction's issue belongs to the earlier instruction's class, and
the tail after the final issue belongs to the final instruction. The three
class counters therefore always sum to the total cycle count.

dc.f nibble packing
-------------------
A dc.f result is one nibble stored into byte ``bidx`` of the dh-selected
register half. Consecutive dc.f instructions pack pairwise: the first
write to a byte clears it and fills the low nibble, and an immediately
following dc.f aimed at the same byte merges into the high nibble. Any
other instruction flushes the packer, so the next dc.f starts a fresh
(low-nibble) byte. An odd run of results leaves the last high nibble zero.

Loop compression
----------------
A program may contain ``Repeat`` nodes whose body is a fixed instruction
block standing for iterations that differ only in memory addresses (which
never affect timing). Such programs are costed timing-only: iterations are
simulated until two consecutive ones leave the scoreboard in the same
relative state and advance time by the same amount, after which the
remaining iterations are applied as a closed-form shift. The resulting
cycle counts are identical to full tracing. Functional execution requires
a flat program.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .isa import DcF, DcP, DlI, DlM
from .tile import DimcTile, PrecisionMode, QuantConfig, SECTOR_BYTES, wrap_partial

VLEN = 64
ELEN = 32
NUM_VREGS = 32

CLASSES = ("computing", "loading", "storing")

INSTRUCTION_KINDS = ("vload", "vstore", "varith", "dl.i", "dl.m", "dc.p", "dc.f")

_CLASS_BY_KIND = {
    "vload": "loading",
    "dl.i": "loading",
    "dl.m": "loading",
    "vstore": "storing",
    "varith": "computing",
    "dc.p": "computing",
    "dc.f": "computing",
}


class SimulationError(Exception):
    """Raised when a program cannot execute; carries the offending pc."""

    def __init__(self, message: str, pc: int | None = None):
        if pc is not None:
            message = f"pc {pc}: {message}"
        super().__init__(message)
        self.pc = pc


@dataclass(frozen=True)
class VLoad:
    """Unit-stride 64-bit load from external memory into register vd."""

    vd: int
    addr: int

    mnemonic = "vload"
    kind = "vload"


@dataclass(frozen=True)
class VStore:
    """Unit-stride 64-bit store of register vs1 to external memory."""

    vs1: int
    addr: int

    mnemonic = "vstore"
    kind = "vstore"


@dataclass(frozen=True)
class VClear:
    """Register clear (modeled vector arithmetic): vd = 0."""

    vd: int

    mnemonic = "vclear"
    kind = "varith"


@dataclass(frozen=True)
class Barrier:
    """Scheduling fence: the next instruction issues only after every
    outstanding result has committed.

    Not an instruction (no class, no cycle of its own); the drain time it
    exposes is attributed to the preceding instruction's class. The mapper
    places one before each kernel reload, making a weight swap a hard
    phase boundary instead of overlapping with the previous group's tail.
    """

    mnemonic = "barrier"


@dataclass(frozen=True)
class Repeat:
    """``count`` timing-identical iterations of ``body``."""

    count: int
    body: tuple

    def __post_init__(self):
        if self.count < 0:
            raise ValueError(f"repeat count must be >= 0, got {self.count}")
        object.__setattr__(self, "body", tuple(self.body))


@dataclass(frozen=True)
class Program:
    """An instruction stream plus the tile configuration it assumes."""

    body: tuple
    mode: PrecisionMode = PrecisionMode()
    quant: QuantConfig = QuantConfig()

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))

    @property
    def is_flat(self) -> bool:
        return not any(isinstance(n, Repeat) for n in self.body)

    def flat_instructions(self):
        for node in self.body:
            if isinstance(node, Repeat):
                raise SimulationError("program with Repeat nodes has no flat expansion")
            yield node


def class_of(instr) -> str:
    """Operation class of a decoded instruction: computing, loading or storing."""
    try:
        return _CLASS_BY_KIND[instr.kind]
    except (AttributeError, KeyError):
        raise ValueError(f"not a simulatable instruction: {instr!r}") from None


class VectorRegisterFile:
    """32 vector registers of VLEN = 64 bits; unwritten registers read 0."""

    def __init__(self):
        self.regs = [0] * NUM_VREGS

    def read(self, r: int) -> int:
        return self.regs[r]

    def write(self, r: int, value: int) -> None:
        self.regs[r] = value & 0xFFFFFFFFFFFFFFFF

    def read_half(self, r: int, half: int) -> int:
        return (self.regs[r] >> (32 * half)) & 0xFFFFFFFF

    def write_half(self, r: int, half: int, value: int) -> None:
        keep = 0xFFFFFFFF << (32 * (1 - half))
        self.regs[r] = (self.regs[r] & keep) | ((value & 0xFFFFFFFF) << (32 * half))


@dataclass
class TimingModel:
    """Per-kind latency and issue-interval table plus the clock.

    ``memory_latency`` seeds the vload/vstore latencies unless the
    ``latency`` dict overrides them explicitly. All latencies and
    intervals must be at least 1.
    """

    memory_latency: int = 8
    freq_hz: float = 500e6
    latency: dict = field(default_factory=dict)
    issue_interval: dict = field(default_factory=dict)

    def __post_init__(self):
        lat = {
            "vload": self.memory_latency,
            "vstore": self.memory_latency,
            "varith": 1,
            "dl.i": 1,
            "dl.m": 1,
            "dc.p": 4,
            "dc.f": 4,
        }
        lat.update(self.latency)
        iv = {k: 1 for k in INSTRUCTION_KINDS}
        iv.update(self.issue_interval)
        for table, name in ((lat, "latency"), (iv, "issue interval")):
            for kind in INSTRUCTION_KINDS:
                if table[kind] < 1:
                    raise ValueError(f"{name} for {kind} must be >= 1, got {table[kind]}")
        if not self.freq_hz > 0:
            raise ValueError(f"clock frequency must be positive, got {self.freq_hz}")
        self.latency = lat
        self.issue_interval = iv

    @classmethod
    def from_dict(cls, d: dict) -> "TimingModel":
        known = {"memory_latency", "freq_hz", "latency", "issue_interval"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown timing keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "TimingModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SimOutcome:
    """Result of one simulation run.

    ``functional`` tells whether vrf/tile/memory reflect real execution
    (flat programs) or are untouched placeholders (loop-compressed runs,
    which produce timing and counts only).
    """

    total_cycles: int
    cycles_by_class: dict
    counts_by_class: dict
    vrf: VectorRegisterFile
    tile: DimcTile
    memory: bytearray | None
    functional: bool
    trace: list | None = None

    @property
    def instruction_count(self) -> int:
        return sum(self.counts_by_class.values())

    def class_fractions(self) -> dict:
        total = self.total_cycles
        if total == 0:
            return {c: 0.0 for c in CLASSES}
        return {c: self.cycles_by_class[c] / total for c in CLASSES}


# Scoreboard resource keys, packed as small ints: register halves occupy
# 0..63, input-buffer sectors 64..67, weight rows 68..99.
def _reg_key(reg: int, half: int) -> int:
    return reg * 2 + half


_SEC_BASE = 64
_ROW_BASE = 68


class _Machine:
    def __init__(self, program: Program, timing: TimingModel, memory, trace):
        self.mode = program.mode
        self.quant = program.quant
        self.timing = timing
        self.vrf = VectorRegisterFile()
        self.tile = DimcTile()
        self.memory = memory
        self.trace = trace
        self.functional = program.is_flat
        if not self.functional:
            if trace is not None:
                raise SimulationError("event tracing requires a flat program")
            if memory is not None:
                raise SimulationError("loop-compressed programs run timing-only; "
                                      "pass a flat program to execute functionally")
        # timing state
        self.t_last = -1
        self.t_max = 0
        self.ready: dict[int, int] = {}
        self.unit_free: dict[str, int] = {}
        self.cycles = {c: 0 for c in CLASSES}
        self.counts = {c: 0 for c in CLASSES}
        self.pending_class: str | None = None
        self.pc = 0
        # dc.f write-back packer: (vd, dh, bidx) of a half-filled byte, or None
        self.dcf_open_byte = None

    # -- timing -----------------------------------------------------------

    def _issue(self, kind: str, reads, writes) -> int:
        t = self.t_last + 1
        uf = self.unit_free.get(kind)
        if uf is not None and uf > t:
            t = uf
        ready = self.ready
        for key in reads:
            r = ready.get(key)
            if r is not None and r > t:
                t = r
        cls = _CLASS_BY_KIND[kind]
        if self.pending_class is not None:
            self.cycles[self.pending_class] += t - self.t_last
        self.counts[cls] += 1
        done = t + self.timing.latency[kind]
        for key in writes:
            ready[key] = done
        if done > self.t_max:
            self.t_max = done
        iv = self.timing.issue_interval[kind]
        if iv > 1:
            self.unit_free[kind] = t + iv
        self.pending_class = cls
        self.t_last = t
        return done

    def finish(self) -> None:
        if self.pending_class is not None:
            self.cycles[self.pending_class] += self.t_max - self.t_last

    def _state_signature(self):
        t = self.t_last
        active = tuple(sorted((k, v - t) for k, v in self.ready.items() if v > t))
        units = tuple(sorted((k, v - t) for k, v in self.unit_free.items() if v > t))
        return active, units, self.t_max - t, self.pending_class

    # -- one instruction ---------------------------------------------------

    def step(self, ins) -> None:
        cls = ins.__class__
        if cls is Barrier:
            # close the drain gap on the preceding instruction's class and
            # move the issue horizon past every outstanding completion
            drained = self.t_max - 1
            if drained > self.t_last:
                if self.pending_class is not None:
                    self.cycles[self.pending_class] += drained - self.t_last
                self.t_last = drained
            if self.functional:
                self.dcf_open_byte = None
            return
        if cls is VLoad:
            done = self._issue("vload", (), (_reg_key(ins.vd, 0), _reg_key(ins.vd, 1)))
            if self.functional:
                self._load_reg(ins.vd, ins.addr)
                self.dcf_open_byte = None
        elif cls is VStore:
            done = self._issue("vstore", (_reg_key(ins.vs1, 0), _reg_key(ins.vs1, 1)), ())
            if self.functional:
                self._store_reg(ins.vs1, ins.addr)
                self.dcf_open_byte = None
        elif cls is VClear:
            done = self._issue("varith", (), (_reg_key(ins.vd, 0), _reg_key(ins.vd, 1)))
            if self.functional:
                self.vrf.write(ins.vd, 0)
                self.dcf_open_byte = None
        elif cls is DlI:
            done = self._issue("dl.i", self._load_reads(ins), (_SEC_BASE + ins.sec,))
            if self.functional:
                data, mask = self._gather(ins)
                self.tile.load_input_sector(ins.sec, data, mask)
                self.dcf_open_byte = None
        elif cls is DlM:
            done = self._issue("dl.m", self._load_reads(ins), (_ROW_BASE + ins.m_row,))
            if self.functional:
                data, mask = self._gather(ins)
                self.tile.load_memory_row(ins.m_row, ins.sec, data, mask)
                self.dcf_open_byte = None
        elif cls is DcP:
            done = self._issue("dc.p", self._compute_reads(ins), (_reg_key(ins.vd, ins.dh),))
            if self.functional:
                incoming = wrap_partial(self.vrf.read_half(ins.vs1, ins.sh))
                p = self.tile.compute_row(ins.m_row, self.mode, incoming)
                self.vrf.write_half(ins.vd, ins.dh, p)
                self.dcf_open_byte = None
        elif cls is DcF:
            done = self._issue("dc.f", self._compute_reads(ins), (_reg_key(ins.vd, ins.dh),))
            if self.functional:
                incoming = wrap_partial(self.vrf.read_half(ins.vs1, ins.sh))
                nibble = self.tile.compute_row_final(ins.m_row, self.mode, incoming, self.quant)
                self._pack_nibble(ins, nibble)
        else:
            raise SimulationError(f"cannot execute {ins!r}", pc=self.pc)
        if self.trace is not None:
            self.trace.append((done, _CLASS_BY_KIND[ins.kind], ins.mnemonic))
        self.pc += 1

    # -- functional helpers --------------------------------------------------

    @staticmethod
    def _load_reads(ins):
        lo = _reg_key(ins.vs1, 0)
        return range(lo, lo + 2 * ins.nvec)

    @staticmethod
    def _compute_reads(ins):
        return (_reg_key(ins.vs1, ins.sh), _SEC_BASE, _SEC_BASE + 1, _SEC_BASE + 2,
                _SEC_BASE + 3, _ROW_BASE + ins.m_row)

    def _gather(self, ins):
        if ins.vs1 + ins.nvec > NUM_VREGS:
            raise SimulationError(
                f"{ins.mnemonic} reads past register 31 (vs1={ins.vs1}, nvec={ins.nvec})",
                pc=self.pc)
        regs = self.vrf.regs
        data = b"".join(regs[ins.vs1 + i].to_bytes(8, "little") for i in range(ins.nvec))
        if ins.nvec < 4:
            data += bytes(SECTOR_BYTES - 8 * ins.nvec)
        # slices beyond nvec carry no payload, so clip them out of the mask
        return data, ins.mask & ((1 << ins.nvec) - 1)

    def _load_reg(self, vd: int, addr: int) -> None:
        if self.memory is None:
            raise SimulationError("vload needs a memory image", pc=self.pc)
        if addr < 0 or addr + 8 > len(self.memory):
            raise SimulationError(f"vload address {addr:#x} out of bounds", pc=self.pc)
        self.vrf.write(vd, int.from_bytes(self.memory[addr:addr + 8], "little"))

    def _store_reg(self, vs1: int, addr: int) -> None:
        if self.memory is None:
            raise SimulationError("vstore needs a memory image", pc=self.pc)
        if addr < 0 or addr + 8 > len(self.memory):
            raise SimulationError(f"vstore address {addr:#x} out of bounds", pc=self.pc)
        self.memory[addr:addr + 8] = self.vrf.read(vs1).to_bytes(8, "little")

    def _pack_nibble(self, ins: DcF, nibble: int) -> None:
        target = (ins.vd, ins.dh, ins.bidx)
        half = self.vrf.read_half(ins.vd, ins.dh)
        shift = 8 * ins.bidx
        if self.dcf_open_byte == target:
            # second result of a pair: merge into the high nibble
            half |= nibble << (shift + 4)
            self.dcf_open_byte = None
        else:
            # fresh byte: clear it and fill the low nibble
            half = (half & ~(0xFF << shift)) | (nibble << shift)
            self.dcf_open_byte = target
        self.vrf.write_half(ins.vd, ins.dh, half)

    # -- program walk ------------------------------------------------------

    def run_nodes(self, nodes) -> None:
        for node in nodes:
            if isinstance(node, Repeat):
                self._run_repeat(node)
            else:
                self.step(node)

    def _run_repeat(self, node: Repeat) -> None:
        prev_sig = None
        prev_delta = None
        done = 0
        while done < node.count:
            t0 = self.t_last
            c0 = dict(self.cycles)
            n0 = dict(self.counts)
            self.run_nodes(node.body)
            done += 1
            remaining = node.count - done
            if remaining == 0:
                return
            sig = self._state_signature()
            delta = (self.t_last - t0,
                     tuple(self.cycles[c] - c0[c] for c in CLASSES),
                     tuple(self.counts[c] - n0[c] for c in CLASSES))
            if sig == prev_sig and delta == prev_delta:
                self._extrapolate(remaining, delta)
                return
            prev_sig, prev_delta = sig, delta

    def _extrapolate(self, remaining: int, delta) -> None:
        dt, dcycles, dcounts = delta
        shift = remaining * dt
        self.t_last += shift
        self.t_max += shift
        for key in self.ready:
            self.ready[key] += shift
        for kind in self.unit_free:
            self.unit_free[kind] += shift
        for c, dc, dn in zip(CLASSES, dcycles, dcounts):
            self.cycles[c] += remaining * dc
            self.counts[c] += remaining * dn
        self.pc += remaining * sum(dcounts)


def execute(program: Program, timing: TimingModel | None = None,
            memory: bytearray | None = None, *, trace: list | None = None) -> SimOutcome:
    """Run a program and account its cycles.

    Flat programs execute functionally (the returned vrf, tile and memory
    are the final architectural state). Programs containing Repeat nodes
    are costed timing-only with identical cycle results; they accept no
    memory image and no trace. Identical inputs always produce an
    identical outcome.
    """
    timing = timing if timing is not None else TimingModel()
    machine = _Machine(program, timing, memory, trace)
    machine.run_nodes(program.body)
    machine.finish()
    return SimOutcome(
        total_cycles=machine.t_max,
        cycles_by_class=machine.cycles,
        counts_by_class=machine.counts,
        vrf=machine.vrf,
        tile=machine.tile,
        memory=machine.memory,
        functional=machine.functional,
        trace=trace,
    )


def write_trace_csv(trace, path) -> None:
    """Write an event trace as CSV rows of (cycle, class, mnemonic)."""
    with open(path, "w", newline="") as fh:
        fh.write("cycle,class,mnemonic\n")
        for cycle, cls, mnemonic in trace:
            fh.write(f"{cycle},{cls},{mnemonic}\n")


def run_layer(lowering, timing: TimingModel | None = None, inputs=None, weights=None,
              *, trace: list | None = None):
    """Execute a lowered layer end to end and pull its output tensor back.

    ``lowering`` comes from the mapper and supplies the flat program, the
    external-memory layout and the output extractor; ``inputs`` and
    ``weights`` are the integer tensors to marshal into the memory image.
    Returns (SimOutcome, output tensor).
    """
    memory = lowering.memory_image(inputs, weights)
    outcome = execute(lowering.program, timing, memory, trace=trace)
    return outcome, lowering.extract_output(outcome.memory)
