"""Single-transaction EVM interpreter with nested frames and full tracing.

Gas is not metered: a global step budget guarantees termination and the GAS
opcode reports a fixed large value.  Storage reads go to a per-emulation
overlay first and then to the chain-state provider at the pinned block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import kernels
from . import opcodes as op
from .state import (
    BlockContext,
    ChainStateProvider,
    EmptyState,
    ProviderError,
    format_address,
    format_word,
)

__all__ = [
    "Limits",
    "MachineState",
    "Event",
    "CallRecord",
    "SloadRecord",
    "Halt",
    "ExecutionTrace",
    "Emulator",
    "execute",
    "create_address",
    "keccak256",
    "DEFAULT_CALLER",
    "DEFAULT_ADDRESS",
    "CREATE_SENTINEL",
    "GAS_VALUE",
    "NORMAL_HALTS",
]

UINT256 = 1 << 256
MASK = UINT256 - 1
SIGN_BIT = 1 << 255
ADDRESS_MASK = (1 << 160) - 1

DEFAULT_CALLER = int("cafe" + "00" * 17 + "01", 16)
DEFAULT_ADDRESS = int("cafe" + "00" * 17 + "02", 16)
CREATE_SENTINEL = int("7f" * 20, 16)
GAS_VALUE = 1 << 32
PRECOMPILES = range(1, 10)
IDENTITY = 4

NORMAL_HALTS = frozenset({"stop", "return", "revert"})


def keccak256(data: bytes) -> bytes:
    return kernels.keccak256(data)


def create_address(kind: str = "CREATE", *args) -> int:
    """Address given to contracts created during emulation.

    Always the fixed sentinel, whatever the creator, nonce or salt; the
    chance of clashing with a real account is negligible.
    """
    return CREATE_SENTINEL


@dataclass(frozen=True)
class Limits:
    max_steps: int = 100_000  # instructions across all frames
    max_depth: int = 8
    stack_snapshot: int = 4  # stack entries kept per event; 0 disables
    max_memory: int = 1 << 22  # bytes per frame; larger expansion fails the frame

    def __post_init__(self):
        if self.max_steps < 1 or self.max_depth < 0:
            raise ValueError("limits must be positive")


class Event:
    __slots__ = ("opcode", "pc", "depth", "stack")

    def __init__(self, opcode: int, pc: int, depth: int):
        self.opcode = opcode
        self.pc = pc
        self.depth = depth
        self.stack: tuple = ()

    def to_json(self) -> dict:
        return {
            "opcode": op.mnemonic(self.opcode),
            "pc": self.pc,
            "depth": self.depth,
            "stack": [hex(v) for v in self.stack],
        }


@dataclass
class CallRecord:
    kind: str
    callee: int
    input: bytes
    depth: int
    pc: int
    event_index: int
    context: int  # storage address of the calling frame
    output: bytes = b""
    success: bool = False

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "callee": format_address(self.callee),
            "input": "0x" + self.input.hex(),
            "output": "0x" + self.output.hex(),
            "success": self.success,
            "depth": self.depth,
            "pc": self.pc,
        }


@dataclass(frozen=True)
class SloadRecord:
    slot: int
    value: int
    address: int
    depth: int
    pc: int
    event_index: int

    def to_json(self) -> dict:
        return {
            "slot": format_word(self.slot),
            "value": format_word(self.value),
            "address": format_address(self.address),
            "depth": self.depth,
            "pc": self.pc,
        }


@dataclass(frozen=True)
class Halt:
    reason: str
    data: bytes = b""
    pc: int = 0
    depth: int = 0
    detail: str = ""

    @property
    def normal(self) -> bool:
        return self.reason in NORMAL_HALTS


class MachineState:
    """One call frame."""

    __slots__ = (
        "stack", "memory", "pc", "code", "jumpdests", "calldata", "caller",
        "address", "origin", "callvalue", "depth", "steps", "static",
        "returndata", "transient", "_overlay",
    )

    def __init__(self, code: bytes, calldata: bytes, *, address: int, caller: int,
                 origin: int, callvalue: int, depth: int, static: bool,
                 overlay: dict, jumpdests: frozenset):
        self.stack: list[int] = []
        self.memory = bytearray()
        self.pc = 0
        self.code = code
        self.jumpdests = jumpdests
        self.calldata = calldata
        self.caller = caller
        self.address = address
        self.origin = origin
        self.callvalue = callvalue
        self.depth = depth
        self.steps = 0
        self.static = static
        self.returndata = b""
        self.transient: dict[int, int] = {}
        self._overlay = overlay

    @property
    def storage_overlay(self) -> dict[int, int]:
        """Slots written during this emulation under this frame's address."""
        return self._overlay.setdefault(self.address, {})


@dataclass
class ExecutionTrace:
    events: list[Event] = field(default_factory=list)
    external_calls: list[CallRecord] = field(default_factory=list)
    sloads: list[SloadRecord] = field(default_factory=list)
    halt: Halt | None = None
    state: MachineState | None = None  # final top-level frame
    storage: dict[int, dict[int, int]] = field(default_factory=dict)
    steps: int = 0

    @property
    def storage_overlay(self) -> dict[int, int]:
        if self.state is None:
            return {}
        return self.storage.get(self.state.address, {})

    def to_json(self, include_events: bool = True) -> dict:
        doc = {
            "external_calls": [c.to_json() for c in self.external_calls],
            "sloads": [s.to_json() for s in self.sloads],
            "halt": {
                "reason": self.halt.reason,
                "data": "0x" + self.halt.data.hex(),
                "pc": self.halt.pc,
                "depth": self.halt.depth,
            } if self.halt else None,
            "steps": self.steps,
        }
        if include_events:
            doc["events"] = [e.to_json() for e in self.events]
        return doc


class _FrameEnd(Exception):
    """Ends the current frame (normally or exceptionally)."""

    def __init__(self, reason: str, data: bytes = b""):
        self.reason = reason
        self.data = data


class _Abort(Exception):
    """Ends the whole emulation."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail


def _signed(v: int) -> int:
    return v - UINT256 if v & SIGN_BIT else v


_STACK_IN = [0] * 256
_STACK_NET = [0] * 256
for _code, (_name, _in, _out) in op.OPCODES.items():
    _STACK_IN[_code] = _in
    _STACK_NET[_code] = _out - _in
del _code, _name, _in, _out

_JUMPDEST_CACHE: dict[bytes, frozenset] = {}


def _jumpdests(code: bytes) -> frozenset:
    jd = _JUMPDEST_CACHE.get(code)
    if jd is None:
        jd = kernels.jumpdests(code)
        if len(_JUMPDEST_CACHE) > 4096:
            _JUMPDEST_CACHE.clear()
        _JUMPDEST_CACHE[code] = jd
    return jd


class Emulator:
    """Runs one transaction; create a fresh instance per emulation."""

    def __init__(self, state: ChainStateProvider | None = None,
                 context: BlockContext | None = None, limits: Limits | None = None,
                 block: int | None = None):
        self.provider = state if state is not None else EmptyState()
        self.context = context or BlockContext()
        self.limits = limits or Limits()
        self.block = self.context.number if block is None else block
        self.trace = ExecutionTrace()
        self.overlay: dict[int, dict[int, int]] = self.trace.storage
        self.code_table: dict[int, bytes] = {}
        self.fresh: set[int] = set()  # created during emulation; no chain storage
        self._code_cache: dict[int, bytes] = {}
        self._reads: dict[tuple[int, int], int] = {}
        self.steps = 0
        self.origin = DEFAULT_CALLER

    # -- entry points ---------------------------------------------------------

    def run(self, code: bytes, calldata: bytes = b"", *, address: int = DEFAULT_ADDRESS,
            caller: int = DEFAULT_CALLER, origin: int | None = None,
            callvalue: int = 0) -> ExecutionTrace:
        self.origin = caller if origin is None else origin
        m = MachineState(bytes(code), bytes(calldata), address=address, caller=caller,
                         origin=self.origin, callvalue=callvalue, depth=0, static=False,
                         overlay=self.overlay, jumpdests=_jumpdests(bytes(code)))
        trace = self.trace
        trace.state = m
        try:
            reason, data = self._run(m)
            trace.halt = Halt(reason, data, m.pc, 0)
        except _Abort as abort:
            trace.halt = Halt(abort.reason, b"", m.pc, 0, abort.detail)
        trace.steps = self.steps
        return trace

    def execute_nested(self, parent: MachineState, kind: str, callee: int, data: bytes,
                       value: int = 0) -> tuple[bool, bytes]:
        """Run ``callee`` as a child of ``parent``; returns (success, output)."""
        if parent.depth + 1 > self.limits.max_depth:
            return False, b""
        if callee in PRECOMPILES and callee not in self.code_table:
            return True, (data if callee == IDENTITY else b"")
        code = self._code_of(callee)
        if not code:
            return True, b""
        if kind == "DELEGATECALL":
            address, caller, value = parent.address, parent.caller, parent.callvalue
        elif kind == "CALLCODE":
            address, caller = parent.address, parent.address
        else:
            address, caller = callee, parent.address
        static = parent.static or kind == "STATICCALL"
        child = MachineState(code, data, address=address, caller=caller, origin=self.origin,
                             callvalue=value, depth=parent.depth + 1, static=static,
                             overlay=self.overlay, jumpdests=_jumpdests(code))
        snapshot = {a: dict(s) for a, s in self.overlay.items()}
        reason, out = self._run(child)
        ok = reason in ("stop", "return")
        if not ok:
            self.overlay.clear()
            self.overlay.update(snapshot)
        return ok, out

    # -- state access ---------------------------------------------------------

    def _code_of(self, address: int) -> bytes:
        if address in self.code_table:
            return self.code_table[address]
        code = self._code_cache.get(address)
        if code is None:
            try:
                code = bytes(self.provider.get_code(address, self.block))
            except ProviderError as exc:
                raise _Abort("oracle-missing", f"code of {format_address(address)}: {exc}") from exc
            self._code_cache[address] = code
        return code

    def _sload(self, m: MachineState, slot: int) -> int:
        address = m.address
        written = self.overlay.get(address)
        if written is not None and slot in written:
            value = written[slot]
        elif address in self.fresh:
            value = 0
        else:
            key = (address, slot)
            value = self._reads.get(key)
            if value is None:
                try:
                    value = int(self.provider.get_storage_at(address, slot, self.block)) & MASK
                except ProviderError as exc:
                    raise _Abort("oracle-missing",
                                 f"slot {format_word(slot)} of {format_address(address)}: {exc}") from exc
                self._reads[key] = value
        self.trace.sloads.append(SloadRecord(slot, value, address, m.depth, m.pc - 1,
                                             len(self.trace.events) - 1))
        return value

    def _balance(self, address: int) -> int:
        getter = getattr(self.provider, "get_balance", None)
        if getter is None:
            return 0
        try:
            return int(getter(address, self.block)) & MASK
        except ProviderError as exc:
            raise _Abort("oracle-missing", f"balance of {format_address(address)}: {exc}") from exc

    # -- interpreter loop -----------------------------------------------------

    def _run(self, m: MachineState) -> tuple[str, bytes]:
        """Execute a frame until it ends; returns (halt reason, output)."""
        code = m.code
        n = len(code)
        handlers = _HANDLERS
        events = self.trace.events
        snap = self.limits.stack_snapshot
        max_steps = self.limits.max_steps
        stack_in = _STACK_IN
        stack_net = _STACK_NET
        stack = m.stack
        depth = m.depth
        try:
            while True:
                pc = m.pc
                if pc >= n:
                    return "stop", b""
                if self.steps >= max_steps:
                    raise _Abort("step-limit", f"{max_steps} steps")
                self.steps += 1
                m.steps += 1
                opcode = code[pc]
                ev = Event(opcode, pc, depth)
                events.append(ev)
                size = len(stack)
                if size < stack_in[opcode]:
                    raise _FrameEnd("stack-underflow")
                if size + stack_net[opcode] > 1024:
                    raise _FrameEnd("stack-overflow")
                m.pc = pc + 1
                handlers[opcode](self, m)
                if snap:
                    ev.stack = tuple(stack[-snap:])
        except _FrameEnd as end:
            return end.reason, end.data

    # -- helpers --------------------------------------------------------------

    def _expand(self, m: MachineState, offset: int, size: int) -> None:
        if size == 0:
            return
        end = offset + size
        if end > self.limits.max_memory:
            raise _FrameEnd("invalid")
        mem = m.memory
        if end > len(mem):
            mem.extend(bytes(((end + 31) // 32) * 32 - len(mem)))

    def _read_mem(self, m: MachineState, offset: int, size: int) -> bytes:
        if size == 0:
            return b""
        self._expand(m, offset, size)
        return bytes(m.memory[offset:offset + size])

    def _write_mem(self, m: MachineState, offset: int, data: bytes) -> None:
        if data:
            self._expand(m, offset, len(data))
            m.memory[offset:offset + len(data)] = data

    @staticmethod
    def _slice(src: bytes, offset: int, size: int) -> bytes:
        if offset >= len(src):
            return bytes(size)
        chunk = src[offset:offset + size]
        return chunk + bytes(size - len(chunk)) if len(chunk) < size else chunk

    # -- opcode table ---------------------------------------------------------

    @classmethod
    def _build_table(cls):
        table = [cls._op_invalid] * 256
        simple = {
            0x00: cls._op_stop, 0x01: cls._op_add, 0x02: cls._op_mul, 0x03: cls._op_sub,
            0x04: cls._op_div, 0x05: cls._op_sdiv, 0x06: cls._op_mod, 0x07: cls._op_smod,
            0x08: cls._op_addmod, 0x09: cls._op_mulmod, 0x0A: cls._op_exp,
            0x0B: cls._op_signextend, 0x10: cls._op_lt, 0x11: cls._op_gt,
            0x12: cls._op_slt, 0x13: cls._op_sgt, 0x14: cls._op_eq, 0x15: cls._op_iszero,
            0x16: cls._op_and, 0x17: cls._op_or, 0x18: cls._op_xor, 0x19: cls._op_not,
            0x1A: cls._op_byte, 0x1B: cls._op_shl, 0x1C: cls._op_shr, 0x1D: cls._op_sar,
            0x20: cls._op_sha3,
            0x30: cls._op_address, 0x31: cls._op_balance, 0x32: cls._op_origin,
            0x33: cls._op_caller, 0x34: cls._op_callvalue, 0x35: cls._op_calldataload,
            0x36: cls._op_calldatasize, 0x37: cls._op_calldatacopy, 0x38: cls._op_codesize,
            0x39: cls._op_codecopy, 0x3A: cls._op_gasprice, 0x3B: cls._op_extcodesize,
            0x3C: cls._op_extcodecopy, 0x3D: cls._op_returndatasize,
            0x3E: cls._op_returndatacopy, 0x3F: cls._op_extcodehash,
            0x40: cls._op_blockhash, 0x41: cls._op_coinbase, 0x42: cls._op_timestamp,
            0x43: cls._op_number, 0x44: cls._op_difficulty, 0x45: cls._op_gaslimit,
            0x46: cls._op_chainid, 0x47: cls._op_selfbalance, 0x48: cls._op_basefee,
            0x49: cls._op_blobhash, 0x4A: cls._op_blobbasefee,
            0x50: cls._op_pop, 0x51: cls._op_mload, 0x52: cls._op_mstore,
            0x53: cls._op_mstore8, 0x54: cls._op_sload, 0x55: cls._op_sstore,
            0x56: cls._op_jump, 0x57: cls._op_jumpi, 0x58: cls._op_pc, 0x59: cls._op_msize,
            0x5A: cls._op_gas, 0x5B: cls._op_jumpdest, 0x5C: cls._op_tload,
            0x5D: cls._op_tstore, 0x5E: cls._op_mcopy, 0x5F: cls._op_push0,
            0xF0: cls._op_create, 0xF1: cls._op_call, 0xF2: cls._op_callcode,
            0xF3: cls._op_return, 0xF4: cls._op_delegatecall, 0xF5: cls._op_create2,
            0xFA: cls._op_staticcall, 0xFD: cls._op_revert, 0xFE: cls._op_invalid,
            0xFF: cls._op_selfdestruct,
        }
        for code, fn in simple.items():
            table[code] = fn
        for width in range(1, 33):
            table[0x5F + width] = _make_push(width)
        for n in range(1, 17):
            table[0x7F + n] = _make_dup(n)
            table[0x8F + n] = _make_swap(n)
        for n in range(5):
            table[0xA0 + n] = _make_log(n)
        return table

    # arithmetic

    def _op_stop(self, m):
        raise _FrameEnd("stop")

    def _op_add(self, m):
        s = m.stack
        s.append((s.pop() + s.pop()) & MASK)

    def _op_mul(self, m):
        s = m.stack
        s.append((s.pop() * s.pop()) & MASK)

    def _op_sub(self, m):
        s = m.stack
        a = s.pop()
        s.append((a - s.pop()) & MASK)

    def _op_div(self, m):
        s = m.stack
        a, b = s.pop(), s.pop()
        s.append(a // b if b else 0)

    def _op_sdiv(self, m):
        s = m.stack
        a, b = _signed(s.pop()), _signed(s.pop())
        if b == 0:
            s.append(0)
            return
        q = abs(a) // abs(b)
        s.append((-q if (a < 0) != (b < 0) else q) & MASK)

    def _op_mod(self, m):
        s = m.stack
        a, b = s.pop(), s.pop()
        s.append(a % b if b else 0)

    def _op_smod(self, m):
        s = m.stack
        a, b = _signed(s.pop()), _signed(s.pop())
        if b == 0:
            s.append(0)
            return
        r = abs(a) % abs(b)
        s.append((-r if a < 0 else r) & MASK)

    def _op_addmod(self, m):
        s = m.stack
        a, b, n = s.pop(), s.pop(), s.pop()
        s.append((a + b) % n if n else 0)

    def _op_mulmod(self, m):
        s = m.stack
        a, b, n = s.pop(), s.pop(), s.pop()
        s.append((a * b) % n if n else 0)

    def _op_exp(self, m):
        s = m.stack
        a, b = s.pop(), s.pop()
        s.append(pow(a, b, UINT256))

    def _op_signextend(self, m):
        s = m.stack
        b, x = s.pop(), s.pop()
        if b < 31:
            bit = 8 * b + 7
            low = (1 << (bit + 1)) - 1
            x = (x | (MASK ^ low)) if (x >> bit) & 1 else (x & low)
        s.append(x)

    # comparison and bitwise

    def _op_lt(self, m):
        s = m.stack
        a, b = s.pop(), s.pop()
        s.append(1 if a < b else 0)

    def _op_gt(self, m):
        s = m.stack
        a, b = s.pop(), s.pop()
        s.append(1 if a > b else 0)

    def _op_slt(self, m):
        s = m.stack
        a, b = _signed(s.pop()), _signed(s.pop())
        s.append(1 if a < b else 0)

    def _op_sgt(self, m):
        s = m.stack
        a, b = _signed(s.pop()), _signed(s.pop())
        s.append(1 if a > b else 0)

    def _op_eq(self, m):
        s = m.stack
        s.append(1 if s.pop() == s.pop() else 0)

    def _op_iszero(self, m):
        s = m.stack
        s.append(0 if s.pop() else 1)

    def _op_and(self, m):
        s = m.stack
        s.append(s.pop() & s.pop())

    def _op_or(self, m):
        s = m.stack
        s.append(s.pop() | s.pop())

    def _op_xor(self, m):
        s = m.stack
        s.append(s.pop() ^ s.pop())

    def _op_not(self, m):
        s = m.stack
        s.append(MASK ^ s.pop())

    def _op_byte(self, m):
        s = m.stack
        i, x = s.pop(), s.pop()
        s.append((x >> (248 - 8 * i)) & 0xFF if i < 32 else 0)

    def _op_shl(self, m):
        s = m.stack
        shift, value = s.pop(), s.pop()
        s.append((value << shift) & MASK if shift < 256 else 0)

    def _op_shr(self, m):
        s = m.stack
        shift, value = s.pop(), s.pop()
        s.append(value >> shift if shift < 256 else 0)

    def _op_sar(self, m):
        s = m.stack
        shift, value = s.pop(), _signed(s.pop())
        if shift >= 256:
            s.append(MASK if value < 0 else 0)
        else:
            s.append((value >> shift) & MASK)

    def _op_sha3(self, m):
        s = m.stack
        offset, size = s.pop(), s.pop()
        data = self._read_mem(m, offset, size)
        s.append(int.from_bytes(kernels.keccak256(data), "big"))

    # environment

    def _op_address(self, m):
        m.stack.append(m.address)

    def _op_balance(self, m):
        s = m.stack
        s.append(self._balance(s.pop() & ADDRESS_MASK))

    def _op_origin(self, m):
        m.stack.append(m.origin)

    def _op_caller(self, m):
        m.stack.append(m.caller)

    def _op_callvalue(self, m):
        m.stack.append(m.callvalue)

    def _op_calldataload(self, m):
        s = m.stack
        s.append(int.from_bytes(self._slice(m.calldata, s.pop(), 32), "big"))

    def _op_calldatasize(self, m):
        m.stack.append(len(m.calldata))

    def _op_calldatacopy(self, m):
        s = m.stack
        dest, offset, size = s.pop(), s.pop(), s.pop()
        if size:
            self._expand(m, dest, size)
            self._write_mem(m, dest, self._slice(m.calldata, offset, size))

    def _op_codesize(self, m):
        m.stack.append(len(m.code))

    def _op_codecopy(self, m):
        s = m.stack
        dest, offset, size = s.pop(), s.pop(), s.pop()
        if size:
            self._expand(m, dest, size)
            self._write_mem(m, dest, self._slice(m.code, offset, size))

    def _op_gasprice(self, m):
        m.stack.append(self.context.gasprice)

    def _op_extcodesize(self, m):
        s = m.stack
        s.append(len(self._code_of(s.pop() & ADDRESS_MASK)))

    def _op_extcodecopy(self, m):
        s = m.stack
        address, dest, offset, size = s.pop() & ADDRESS_MASK, s.pop(), s.pop(), s.pop()
        if size:
            self._expand(m, dest, size)
            self._write_mem(m, dest, self._slice(self._code_of(address), offset, size))

    def _op_returndatasize(self, m):
        m.stack.append(len(m.returndata))

    def _op_returndatacopy(self, m):
        s = m.stack
        dest, offset, size = s.pop(), s.pop(), s.pop()
        if offset + size > len(m.returndata):
            raise _FrameEnd("invalid")
        if size:
            self._write_mem(m, dest, m.returndata[offset:offset + size])

    def _op_extcodehash(self, m):
        s = m.stack
        code = self._code_of(s.pop() & ADDRESS_MASK)
        s.append(int.from_bytes(kernels.keccak256(code), "big") if code else 0)

    def _op_blockhash(self, m):
        s = m.stack
        s.append(self.context.blockhash.get(s.pop(), 0))

    def _op_coinbase(self, m):
        m.stack.append(self.context.coinbase)

    def _op_timestamp(self, m):
        m.stack.append(self.context.timestamp)

    def _op_number(self, m):
        m.stack.append(self.context.number)

    def _op_difficulty(self, m):
        m.stack.append(self.context.difficulty)

    def _op_gaslimit(self, m):
        m.stack.append(self.context.gaslimit)

    def _op_chainid(self, m):
        m.stack.append(self.context.chainid)

    def _op_selfbalance(self, m):
        m.stack.append(self._balance(m.address))

    def _op_basefee(self, m):
        m.stack.append(self.context.basefee)

    def _op_blobhash(self, m):
        m.stack.pop()
        m.stack.append(0)

    def _op_blobbasefee(self, m):
        m.stack.append(self.context.blobbasefee)

    # stack, memory, storage, flow

    def _op_pop(self, m):
        m.stack.pop()

    def _op_mload(self, m):
        s = m.stack
        offset = s.pop()
        self._expand(m, offset, 32)
        s.append(int.from_bytes(m.memory[offset:offset + 32], "big"))

    def _op_mstore(self, m):
        s = m.stack
        offset, value = s.pop(), s.pop()
        self._expand(m, offset, 32)
        m.memory[offset:offset + 32] = value.to_bytes(32, "big")

    def _op_mstore8(self, m):
        s = m.stack
        offset, value = s.pop(), s.pop()
        self._expand(m, offset, 1)
        m.memory[offset] = value & 0xFF

    def _op_sload(self, m):
        s = m.stack
        s.append(self._sload(m, s.pop()))

    def _op_sstore(self, m):
        if m.static:
            raise _FrameEnd("invalid")
        s = m.stack
        slot, value = s.pop(), s.pop()
        self.overlay.setdefault(m.address, {})[slot] = value

    def _op_jump(self, m):
        dest = m.stack.pop()
        if dest not in m.jumpdests:
            raise _FrameEnd("bad-jump")
        m.pc = dest

    def _op_jumpi(self, m):
        s = m.stack
        dest, cond = s.pop(), s.pop()
        if cond:
            if dest not in m.jumpdests:
                raise _FrameEnd("bad-jump")
            m.pc = dest

    def _op_pc(self, m):
        m.stack.append(m.pc - 1)

    def _op_msize(self, m):
        m.stack.append(len(m.memory))

    def _op_gas(self, m):
        m.stack.append(GAS_VALUE)

    def _op_jumpdest(self, m):
        pass

    def _op_tload(self, m):
        s = m.stack
        s.append(m.transient.get(s.pop(), 0))

    def _op_tstore(self, m):
        if m.static:
            raise _FrameEnd("invalid")
        s = m.stack
        slot, value = s.pop(), s.pop()
        m.transient[slot] = value

    def _op_mcopy(self, m):
        s = m.stack
        dest, src, size = s.pop(), s.pop(), s.pop()
        if size:
            data = self._read_mem(m, src, size)
            self._write_mem(m, dest, data)

    def _op_push0(self, m):
        m.stack.append(0)

    def _op_return(self, m):
        s = m.stack
        offset, size = s.pop(), s.pop()
        raise _FrameEnd("return", self._read_mem(m, offset, size))

    def _op_revert(self, m):
        s = m.stack
        offset, size = s.pop(), s.pop()
        raise _FrameEnd("revert", self._read_mem(m, offset, size))

    def _op_invalid(self, m):
        raise _FrameEnd("invalid")

    def _op_selfdestruct(self, m):
        if m.static:
            raise _FrameEnd("invalid")
        m.stack.pop()
        raise _FrameEnd("stop")

    # calls and creation

    def _begin_call(self, m, kind: str, callee: int, data: bytes) -> CallRecord:
        record = CallRecord(kind, callee, data, m.depth, m.pc - 1,
                            len(self.trace.events) - 1, m.address)
        self.trace.external_calls.append(record)
        return record

    def _call_common(self, m, kind: str, has_value: bool):
        s = m.stack
        s.pop()  # gas
        callee = s.pop() & ADDRESS_MASK
        value = s.pop() if has_value else 0
        in_off, in_size, out_off, out_size = s.pop(), s.pop(), s.pop(), s.pop()
        if kind == "CALL" and value and m.static:
            raise _FrameEnd("invalid")
        data = self._read_mem(m, in_off, in_size)
        self._expand(m, out_off, out_size)
        record = self._begin_call(m, kind, callee, data)
        ok, output = self.execute_nested(m, kind, callee, data, value)
        record.success = ok
        record.output = output
        m.returndata = output
        if out_size:
            m.memory[out_off:out_off + min(out_size, len(output))] = output[:out_size]
        s.append(1 if ok else 0)

    def _op_call(self, m):
        self._call_common(m, "CALL", True)

    def _op_callcode(self, m):
        self._call_common(m, "CALLCODE", True)

    def _op_delegatecall(self, m):
        self._call_common(m, "DELEGATECALL", False)

    def _op_staticcall(self, m):
        self._call_common(m, "STATICCALL", False)

    def _create_common(self, m, kind: str):
        if m.static:
            raise _FrameEnd("invalid")
        s = m.stack
        value, offset, size = s.pop(), s.pop(), s.pop()
        salt = s.pop() if kind == "CREATE2" else None
        init = self._read_mem(m, offset, size)
        address = create_address(kind, m.address, salt)
        record = self._begin_call(m, kind, address, init)
        m.returndata = b""
        if m.depth + 1 > self.limits.max_depth:
            s.append(0)
            return
        # a new account: empty storage, whatever the chain says
        self.fresh.add(address)
        self.overlay.pop(address, None)
        self.code_table[address] = b""
        if not init:
            record.success = True
            s.append(address)
            return
        child = MachineState(init, b"", address=address, caller=m.address, origin=self.origin,
                             callvalue=value, depth=m.depth + 1, static=False,
                             overlay=self.overlay, jumpdests=_jumpdests(init))
        snapshot = {a: dict(st) for a, st in self.overlay.items()}
        reason, out = self._run(child)
        if reason in ("stop", "return"):
            self.code_table[address] = out
            record.success = True
            record.output = out
            s.append(address)
        else:
            self.overlay.clear()
            self.overlay.update(snapshot)
            del self.code_table[address]
            if reason == "revert":
                m.returndata = out
            record.output = out
            s.append(0)

    def _op_create(self, m):
        self._create_common(m, "CREATE")

    def _op_create2(self, m):
        self._create_common(m, "CREATE2")



def _make_push(width: int):
    def push(self, m):
        start = m.pc
        chunk = m.code[start:start + width]
        if len(chunk) < width:
            chunk = chunk + bytes(width - len(chunk))
        m.stack.append(int.from_bytes(chunk, "big"))
        m.pc = start + width
    return push


def _make_dup(n: int):
    def dup(self, m):
        m.stack.append(m.stack[-n])
    return dup


def _make_swap(n: int):
    def swap(self, m):
        s = m.stack
        s[-1], s[-n - 1] = s[-n - 1], s[-1]
    return swap


def _make_log(n: int):
    def log(self, m):
        if m.static:
            raise _FrameEnd("invalid")
        s = m.stack
        offset, size = s.pop(), s.pop()
        del s[len(s) - n:]
        self._expand(m, offset, size)
    return log


_HANDLERS = Emulator._build_table()


def execute(code: bytes, calldata: bytes = b"", context: BlockContext | None = None,
            state: ChainStateProvider | None = None, limits: Limits | None = None, *,
            address: int = DEFAULT_ADDRESS, caller: int = DEFAULT_CALLER,
            origin: int | None = None, callvalue: int = 0,
            block: int | None = None) -> ExecutionTrace:
    """Emulate one call of ``code`` with ``calldata`` and return its trace.

    Never raises for bad bytecode: the trace's ``halt.reason`` says why
    execution stopped (``stop``, ``return``, ``revert``, ``invalid``,
    ``step-limit``, ``stack-underflow``, ``stack-overflow``, ``bad-jump`` or
    ``oracle-missing`` when the state provider could not answer).
    """
    emu = Emulator(state, context, limits, block)
    return emu.run(code, calldata, address=address, caller=caller, origin=origin,
                   callvalue=callvalue)
