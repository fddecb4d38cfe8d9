"""Function-selector and storage-layout collisions between a proxy and its logic.

Storage accesses are recovered by a symbolic stack walk over basic blocks:
slot operands are constant-folded, and the byte range each access touches is
read off the two mask idioms compilers emit for packed variables

    SLOAD [SHR 8n | DIV 2^(8n)] AND (2^(8k)-1)      read bytes [n, n+k)
    (SLOAD AND NOT(mask << 8n)) OR new  SSTORE      update bytes [n, n+k)

Anything else is treated as a full 32-byte access.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import opcodes as op
from .bytecode import BasicBlockGraph, InstructionStream, as_bytes, bytecode_hash, decode_bytecode, split_basic_blocks
from .dispatch import SelectorSet, extract_selectors, format_selector
from .kernels import keccak256
from .state import format_word

__all__ = [
    "SlotAccess",
    "StorageLayout",
    "FunctionCollisionReport",
    "StorageCollision",
    "StorageCollisionReport",
    "CollisionReport",
    "ContractAnalysis",
    "detect_function_collisions",
    "extract_storage_layout",
    "detect_storage_collisions",
    "flag_sensitive_slots",
    "analyze_contract",
    "collide",
    "overlap",
]

MASK = (1 << 256) - 1
UINT256 = 1 << 256


# -- domain types ------------------------------------------------------------

@dataclass(frozen=True)
class SlotAccess:
    slot_kind: str  # Constant | HashDerived | Unknown
    slot: int | None
    offset: int = 0
    width: int = 32
    mode: str = "read"  # read | write | read-modify-write
    pc: int = 0

    def __post_init__(self):
        if not (0 <= self.offset and 1 <= self.width and self.offset + self.width <= 32):
            raise ValueError(f"bad byte range offset={self.offset} width={self.width}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.offset, self.width

    def to_json(self) -> dict:
        return {"offset": self.offset, "width": self.width, "mode": self.mode, "pc": self.pc}

    def to_cache(self) -> list:
        return [self.slot_kind, None if self.slot is None else hex(self.slot),
                self.offset, self.width, self.mode, self.pc]

    @classmethod
    def from_cache(cls, row) -> "SlotAccess":
        kind, slot, offset, width, mode, pc = row
        return cls(kind, None if slot is None else int(slot, 16), offset, width, mode, pc)


@dataclass(frozen=True)
class StorageLayout:
    accesses: tuple[SlotAccess, ...] = ()
    # storage ops whose slot is neither constant nor recognisably hash-derived
    unresolved_count: int = 0

    def constant(self) -> dict[int, list[SlotAccess]]:
        by_slot: dict[int, list[SlotAccess]] = {}
        for a in self.accesses:
            if a.slot_kind == "Constant":
                by_slot.setdefault(a.slot, []).append(a)
        return by_slot

    def to_cache(self) -> dict:
        return {"accesses": [a.to_cache() for a in self.accesses],
                "unresolved": self.unresolved_count}

    @classmethod
    def from_cache(cls, doc) -> "StorageLayout":
        return cls(tuple(SlotAccess.from_cache(r) for r in doc["accesses"]), doc["unresolved"])


@dataclass(frozen=True)
class FunctionCollisionReport:
    colliding: frozenset[int]
    proxy_evidence: dict[int, int] = field(default_factory=dict)
    logic_evidence: dict[int, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"colliding": [format_selector(s) for s in sorted(self.colliding)]}


@dataclass(frozen=True)
class StorageCollision:
    slot: int
    proxy_access: SlotAccess
    logic_access: SlotAccess
    overlap: tuple[int, int]

    def to_json(self) -> dict:
        return {
            "slot": format_word(self.slot),
            "proxy": self.proxy_access.to_json(),
            "logic": self.logic_access.to_json(),
            "overlap": list(self.overlap),
        }


@dataclass(frozen=True)
class StorageCollisionReport:
    collisions: tuple[StorageCollision, ...] = ()
    sensitive_slots: frozenset[int] = frozenset()

    def to_json(self) -> dict:
        return {
            "collisions": [c.to_json() for c in self.collisions],
            "sensitive_slots": [format_word(s) for s in sorted(self.sensitive_slots)],
        }


# -- function collisions -----------------------------------------------------

def detect_function_collisions(proxy: SelectorSet, logic: SelectorSet) -> FunctionCollisionReport:
    common = proxy.selectors & logic.selectors
    return FunctionCollisionReport(
        frozenset(common),
        {s: proxy.evidence[s] for s in common if s in proxy.evidence},
        {s: logic.evidence[s] for s in common if s in logic.evidence},
    )


# -- symbolic evaluation -----------------------------------------------------

class _Sym:
    """Abstract stack value.

    ``const`` holds the value when it folds.  ``load`` names the SLOAD whose
    (possibly right-shifted by ``shift`` bytes) result this is, untouched by
    anything but the shift.  ``clear`` marks ``load AND NOT(byte mask)`` as
    (offset, width); ``update`` marks ``(load AND NOT mask) OR x``.
    """

    __slots__ = ("const", "load", "shift", "clear", "update", "deps", "caller", "hashy", "check")

    def __init__(self, const=None, load=None, shift=0, clear=None, update=None,
                 deps=frozenset(), caller=False, hashy=False, check=frozenset()):
        self.const = const
        self.load = load
        self.shift = shift
        self.clear = clear
        self.update = update
        self.deps = deps  # SLOAD indices this value derives from
        self.caller = caller  # derives from CALLER
        self.hashy = hashy  # derives from a non-constant SHA3
        self.check = check  # SLOAD indices compared against CALLER


_UNKNOWN = _Sym()


def _merge(*args: _Sym) -> _Sym:
    deps = frozenset().union(*(a.deps for a in args))
    return _Sym(deps=deps, caller=any(a.caller for a in args), hashy=any(a.hashy for a in args))


def _byte_mask(value: int) -> tuple[int, int] | None:
    """(offset, width) if ``value`` is 0xff.. over whole bytes [offset, offset+width)."""
    if value == 0:
        return None
    low = (value & -value).bit_length() - 1
    if low % 8:
        return None
    run = value >> low
    if run & (run + 1):
        return None
    bits = run.bit_length()
    if bits % 8:
        return None
    return low // 8, bits // 8


def _signed(v):
    return v - UINT256 if v >> 255 else v


_FOLD2 = {
    0x01: lambda a, b: (a + b) & MASK,
    0x02: lambda a, b: (a * b) & MASK,
    0x03: lambda a, b: (a - b) & MASK,
    0x04: lambda a, b: a // b if b else 0,
    0x06: lambda a, b: a % b if b else 0,
    0x0A: lambda a, b: pow(a, b, UINT256),
    0x10: lambda a, b: int(a < b),
    0x11: lambda a, b: int(a > b),
    0x12: lambda a, b: int(_signed(a) < _signed(b)),
    0x13: lambda a, b: int(_signed(a) > _signed(b)),
    0x14: lambda a, b: int(a == b),
    0x16: lambda a, b: a & b,
    0x17: lambda a, b: a | b,
    0x18: lambda a, b: a ^ b,
    0x1A: lambda a, b: (b >> (248 - 8 * a)) & 0xFF if a < 32 else 0,
    0x1B: lambda a, b: (b << a) & MASK if a < 256 else 0,
    0x1C: lambda a, b: b >> a if a < 256 else 0,
}
_FOLD1 = {
    0x15: lambda a: int(a == 0),
    0x19: lambda a: MASK ^ a,
}


class _Walker:
    def __init__(self, stream: InstructionStream, graph: BasicBlockGraph):
        self.stream = stream
        self.graph = graph
        ins = stream.instructions
        self.storage_ops = [i for i, x in enumerate(ins) if x.opcode in (op.SLOAD, op.SSTORE)]
        # per storage-op index: ("Constant", slot) | ("HashDerived", None) | ("Unknown", None)
        self.slots: dict[int, tuple[str, int | None]] = {}
        self.load_shape: dict[int, tuple[int, int, str]] = {}  # first mask wins
        self.store_shape: dict[int, tuple[int, int, str]] = {}
        self.sensitive_loads: set[int] = set()

    def run(self) -> None:
        graph = self.graph
        dynamic_targets = bool(graph.unresolved)
        preds: dict[int, list[int]] = {}
        for s, d in graph.edges:
            preds.setdefault(d, []).append(s)
        exits: dict[int, tuple[list, dict]] = {}
        ins = self.stream.instructions
        for k, block in enumerate(graph.blocks):
            stack: list[_Sym] = []
            memory: dict[int, _Sym] = {}
            p = preds.get(k, [])
            may_be_dynamic = dynamic_targets and ins[block.first].opcode == op.JUMPDEST
            if len(p) == 1 and p[0] in exits and not may_be_dynamic:
                prev_stack, prev_mem = exits[p[0]]
                stack = list(prev_stack)
                memory = dict(prev_mem)
            self._block(block.first, block.last, stack, memory)
            exits[k] = (stack, memory)

    def _pop(self, stack: list[_Sym]) -> _Sym:
        return stack.pop() if stack else _UNKNOWN

    def _classify_slot(self, index: int, slot: _Sym) -> None:
        if slot.const is not None:
            self.slots[index] = ("Constant", slot.const)
        elif slot.hashy:
            self.slots[index] = ("HashDerived", None)
        else:
            self.slots[index] = ("Unknown", None)

    def _block(self, first: int, last: int, stack: list[_Sym], memory: dict[int, _Sym]) -> None:
        ins = self.stream.instructions
        pop = self._pop
        for i in range(first, last + 1):
            x = ins[i]
            o = x.opcode
            if op.PUSH0 <= o <= op.PUSH32:
                stack.append(_Sym(const=x.value))
            elif op.DUP1 <= o <= op.DUP16:
                n = o - op.DUP1 + 1
                stack.append(stack[-n] if len(stack) >= n else _UNKNOWN)
            elif op.SWAP1 <= o <= op.SWAP16:
                n = o - op.SWAP1 + 1
                if len(stack) < n + 1:
                    stack[:0] = [_UNKNOWN] * (n + 1 - len(stack))
                stack[-1], stack[-n - 1] = stack[-n - 1], stack[-1]
            elif o == op.SLOAD:
                slot = pop(stack)
                self._classify_slot(i, slot)
                stack.append(_Sym(load=i, deps=frozenset({i})))
            elif o == op.SSTORE:
                slot, value = pop(stack), pop(stack)
                self._classify_slot(i, slot)
                if value.update is not None:
                    n, k, load = value.update
                    self.store_shape[i] = (n, k, "read-modify-write")
                    self.load_shape.setdefault(load, (n, k, "read-modify-write"))
                else:
                    self.store_shape[i] = (0, 32, "write")
            elif o == op.CALLER:
                stack.append(_Sym(caller=True))
            elif o == op.MSTORE:
                offset, value = pop(stack), pop(stack)
                if offset.const is None:
                    memory.clear()
                else:
                    for w in [w for w in memory if abs(w - offset.const) < 32]:
                        del memory[w]
                    memory[offset.const] = value
            elif o == op.SHA3:
                stack.append(self._sha3(pop(stack), pop(stack), memory))
            elif o == 0x16:  # AND
                stack.append(self._and(pop(stack), pop(stack)))
            elif o == 0x17:  # OR
                stack.append(self._or(pop(stack), pop(stack)))
            elif o == 0x1C:  # SHR
                shift, value = pop(stack), pop(stack)
                stack.append(self._shift(value, shift.const, 0x1C, shift))
            elif o == 0x04:  # DIV
                value, div = pop(stack), pop(stack)
                shift = None
                if div.const and div.const & (div.const - 1) == 0:
                    shift = div.const.bit_length() - 1
                stack.append(self._shift(value, shift, 0x04, div))
            elif o == 0x14:  # EQ
                a, b = pop(stack), pop(stack)
                if a.const is not None and b.const is not None:
                    stack.append(_Sym(const=int(a.const == b.const)))
                    continue
                r = _merge(a, b)
                if a.caller and b.deps and not b.caller:
                    r.check = b.deps
                elif b.caller and a.deps and not a.caller:
                    r.check = a.deps
                stack.append(r)
            elif o == 0x15:  # ISZERO
                a = pop(stack)
                if a.const is not None:
                    stack.append(_Sym(const=int(a.const == 0)))
                else:
                    r = _merge(a)
                    r.check = a.check
                    stack.append(r)
            elif o == op.JUMPI:
                pop(stack)
                cond = pop(stack)
                self.sensitive_loads |= cond.check
            elif o == op.MSTORE8 or op.CALLDATACOPY <= o <= op.CODECOPY or o in (0x3C, 0x3E, 0x5E):
                n_in = op.OPCODES[o][1]
                for _ in range(n_in):
                    pop(stack)
                memory.clear()
            else:
                entry = op.OPCODES.get(o)
                if entry is None:
                    continue
                _, n_in, n_out = entry
                args = [pop(stack) for _ in range(n_in)]
                if n_out == 0:
                    continue
                if o in _FOLD2 and all(a.const is not None for a in args):
                    stack.append(_Sym(const=_FOLD2[o](args[0].const, args[1].const)))
                elif o in _FOLD1 and args[0].const is not None:
                    stack.append(_Sym(const=_FOLD1[o](args[0].const)))
                elif n_in and (0x01 <= o <= 0x1D):
                    stack.append(_merge(*args))
                else:
                    # calls, environment reads and the like start fresh
                    stack.extend([_UNKNOWN] * n_out)

    def _sha3(self, offset: _Sym, size: _Sym, memory: dict[int, _Sym]) -> _Sym:
        if offset.const is not None and size.const is not None and size.const % 32 == 0 \
                and size.const <= 1024:
            words = [memory.get(offset.const + j) for j in range(0, size.const, 32)]
            if all(w is not None and w.const is not None for w in words):
                data = b"".join(w.const.to_bytes(32, "big") for w in words)
                return _Sym(const=int.from_bytes(keccak256(data), "big"))
        return _Sym(hashy=True)

    def _and(self, a: _Sym, b: _Sym) -> _Sym:
        if a.const is not None and b.const is not None:
            return _Sym(const=a.const & b.const)
        if b.const is not None:
            a, b = b, a
        if a.const is not None and b.load is not None:
            mask = a.const
            shape = _byte_mask(mask)
            if shape and shape[0] == 0 and b.shift + shape[1] <= 32:
                self.load_shape.setdefault(b.load, (b.shift, shape[1], "read"))
            elif b.shift == 0:
                cleared = _byte_mask(MASK ^ mask)
                if cleared:
                    r = _merge(b)
                    r.clear = (cleared[0], cleared[1], b.load)
                    return r
        r = _merge(a, b)
        if a.check or b.check:
            r.check = a.check | b.check
        return r

    def _or(self, a: _Sym, b: _Sym) -> _Sym:
        if a.const is not None and b.const is not None:
            return _Sym(const=a.const | b.const)
        r = _merge(a, b)
        part = a.clear or b.clear
        if part is not None:
            r.update = part
        return r

    def _shift(self, value: _Sym, bits: int | None, opcode: int, other: _Sym) -> _Sym:
        if value.const is not None and other.const is not None:
            if opcode == 0x1C:
                return _Sym(const=_FOLD2[0x1C](other.const, value.const))
            return _Sym(const=_FOLD2[0x04](value.const, other.const))
        if value.load is not None and bits is not None and bits % 8 == 0 and value.shift + bits // 8 < 32:
            r = _merge(value)
            r.load = value.load
            r.shift = value.shift + bits // 8
            return r
        return _merge(value, other)


def _walk(stream: InstructionStream, graph: BasicBlockGraph | None) -> _Walker:
    walker = _Walker(stream, graph if graph is not None else split_basic_blocks(stream))
    walker.run()
    return walker


def _layout(walker: _Walker) -> StorageLayout:
    ins = walker.stream.instructions
    accesses = []
    unresolved = 0
    for i in walker.storage_ops:
        kind, slot = walker.slots.get(i, ("Unknown", None))
        if kind == "Unknown":
            unresolved += 1
            continue
        if ins[i].opcode == op.SLOAD:
            offset, width, mode = walker.load_shape.get(i, (0, 32, "read"))
        else:
            offset, width, mode = walker.store_shape.get(i, (0, 32, "write"))
        accesses.append(SlotAccess(kind, slot, offset, width, mode, ins[i].offset))
    return StorageLayout(tuple(accesses), unresolved)


def extract_storage_layout(stream: InstructionStream,
                           blocks: BasicBlockGraph | None = None) -> StorageLayout:
    return _layout(_walk(stream, blocks))


def flag_sensitive_slots(stream: InstructionStream,
                         blocks: BasicBlockGraph | None = None) -> frozenset[int]:
    """Constant slots whose value is compared with CALLER ahead of a JUMPI."""
    walker = _walk(stream, blocks)
    return _sensitive(walker)


def _sensitive(walker: _Walker) -> frozenset[int]:
    out = set()
    for i in walker.sensitive_loads:
        kind, slot = walker.slots.get(i, ("Unknown", None))
        if kind == "Constant":
            out.add(slot)
    return frozenset(out)


# -- storage collisions ------------------------------------------------------

def overlap(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int] | None:
    """Intersection of byte ranges (offset, width), or None if disjoint."""
    lo = max(a[0], b[0])
    hi = min(a[0] + a[1], b[0] + b[1])
    return (lo, hi - lo) if lo < hi else None


def detect_storage_collisions(proxy: StorageLayout, logic: StorageLayout,
                              sensitive: frozenset[int] = frozenset()) -> StorageCollisionReport:
    """Cross pairs on a shared constant slot that overlap with different shapes.

    Pairs are reported once per distinct (slot, proxy shape, logic shape),
    keeping the first access of each as evidence.  ``sensitive`` slots that
    take part in a collision are carried into the report.
    """
    p_slots = proxy.constant()
    l_slots = logic.constant()
    seen = set()
    found = []
    for slot in sorted(p_slots.keys() & l_slots.keys()):
        for pa in p_slots[slot]:
            for la in l_slots[slot]:
                if pa.shape == la.shape:
                    continue
                both = overlap(pa.shape, la.shape)
                if both is None:
                    continue
                key = (slot, pa.shape, la.shape)
                if key in seen:
                    continue
                seen.add(key)
                found.append(StorageCollision(slot, pa, la, both))
    colliding = {c.slot for c in found}
    return StorageCollisionReport(tuple(found), frozenset(sensitive & colliding))


# -- whole-contract analysis -------------------------------------------------

@dataclass(frozen=True)
class ContractAnalysis:
    """Everything collision checks need from one bytecode; cacheable by hash."""

    selectors: SelectorSet
    layout: StorageLayout
    sensitive: frozenset[int]

    def to_cache(self) -> dict:
        return {
            "selectors": {f"{s:08x}": off for s, off in sorted(self.selectors.evidence.items())},
            "incomplete": self.selectors.possibly_incomplete,
            "layout": self.layout.to_cache(),
            "sensitive": [hex(s) for s in sorted(self.sensitive)],
        }

    @classmethod
    def from_cache(cls, doc) -> "ContractAnalysis":
        evidence = {int(s, 16): off for s, off in doc["selectors"].items()}
        selectors = SelectorSet(frozenset(evidence), evidence, doc["incomplete"])
        return cls(selectors, StorageLayout.from_cache(doc["layout"]),
                   frozenset(int(s, 16) for s in doc["sensitive"]))


def analyze_contract(code) -> ContractAnalysis:
    stream = decode_bytecode(as_bytes(code))
    walker = _walk(stream, None)
    return ContractAnalysis(extract_selectors(stream), _layout(walker), _sensitive(walker))


@dataclass(frozen=True)
class CollisionReport:
    proxy: str
    logic: str
    function: FunctionCollisionReport
    storage: StorageCollisionReport
    dedup_key: str

    def to_json(self) -> dict:
        return {
            "pair": {"proxy": self.proxy, "logic": self.logic},
            "function": self.function.to_json(),
            "storage": self.storage.to_json(),
            "dedup_key": self.dedup_key,
        }


def collide(proxy_code, logic_code, *, proxy_label: str | None = None,
            logic_label: str | None = None, proxy_analysis: ContractAnalysis | None = None,
            logic_analysis: ContractAnalysis | None = None) -> CollisionReport:
    """Full pairwise check.  Labels default to the bytecode hashes."""
    proxy_code, logic_code = as_bytes(proxy_code), as_bytes(logic_code)
    p_hash = bytecode_hash(proxy_code).hex()
    l_hash = bytecode_hash(logic_code).hex()
    pa = proxy_analysis or analyze_contract(proxy_code)
    la = logic_analysis or analyze_contract(logic_code)
    return CollisionReport(
        proxy_label or "0x" + p_hash,
        logic_label or "0x" + l_hash,
        detect_function_collisions(pa.selectors, la.selectors),
        detect_storage_collisions(pa.layout, la.layout, pa.sensitive | la.sensitive),
        f"{p_hash}:{l_hash}",
    )
