"""Decoding EVM runtime bytecode into instructions and basic blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

from . import kernels
from . import opcodes as op

__all__ = [
    "BytecodeParseError",
    "Instruction",
    "InstructionStream",
    "BasicBlock",
    "BasicBlockGraph",
    "parse_hex",
    "decode_bytecode",
    "contains_delegatecall",
    "split_basic_blocks",
    "push4_operands",
    "bytecode_hash",
    "format_listing",
    "serialize",
]

CodeLike = Union[bytes, bytearray, str]


class BytecodeParseError(ValueError):
    pass


def parse_hex(text: str) -> bytes:
    """Parse a hex string with an optional ``0x`` prefix (any case)."""
    s = text.strip()
    if s[:2].lower() == "0x":
        s = s[2:]
    if len(s) % 2:
        raise BytecodeParseError(f"odd number of hex digits in {text!r}")
    try:
        return bytes.fromhex(s)
    except ValueError:
        raise BytecodeParseError(f"not a hex string: {text!r}") from None


def as_bytes(code: CodeLike) -> bytes:
    if isinstance(code, str):
        return parse_hex(code)
    return bytes(code)


@dataclass(frozen=True, slots=True)
class Instruction:
    offset: int
    opcode: int
    operand: bytes = b""
    truncated: bool = False
    # bytes actually present in code; smaller than 1 + len(operand) if truncated
    size: int = 1

    @property
    def mnemonic(self) -> str:
        return op.mnemonic(self.opcode)

    @property
    def value(self) -> int:
        """Operand as an unsigned integer (0 for non-PUSH instructions)."""
        return int.from_bytes(self.operand, "big")

    @property
    def is_push(self) -> bool:
        return op.PUSH0 <= self.opcode <= op.PUSH32

    @property
    def next_offset(self) -> int:
        return self.offset + self.size

    def __str__(self) -> str:
        text = f"{self.offset:04X}  {self.opcode:02X}  {self.mnemonic}"
        if self.operand:
            text += " 0x" + self.operand.hex()
        return text


@dataclass(frozen=True)
class InstructionStream:
    code: bytes
    instructions: tuple[Instruction, ...]
    jumpdests: frozenset[int]
    _index: dict[int, int] = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    def __getitem__(self, i):
        return self.instructions[i]

    def index_of(self, offset: int) -> int | None:
        """Position of the instruction starting at ``offset``, if any."""
        if not self._index:
            self._index.update((ins.offset, i) for i, ins in enumerate(self.instructions))
        return self._index.get(offset)

    def at(self, offset: int) -> Instruction | None:
        i = self.index_of(offset)
        return None if i is None else self.instructions[i]


def decode_bytecode(code: CodeLike) -> InstructionStream:
    """Total decoding of ``code``; never raises for byte input.

    PUSH data is never decoded as opcodes.  A PUSH running past the end of
    code keeps an operand zero-padded to its full width and is marked
    ``truncated``.
    """
    raw = as_bytes(code)
    instructions = []
    append = instructions.append
    for offset, opcode, size in kernels.decode_raw(raw):
        width = opcode - 0x5F if 0x60 <= opcode <= 0x7F else 0
        if width:
            operand = raw[offset + 1:offset + size]
            truncated = size < 1 + width
            if truncated:
                operand = operand + bytes(width - len(operand))
            append(Instruction(offset, opcode, operand, truncated, size))
        else:
            append(Instruction(offset, opcode, b"", False, 1))
    return InstructionStream(raw, tuple(instructions), kernels.jumpdests(raw))


def serialize(stream: InstructionStream | Iterable[Instruction]) -> bytes:
    """Re-encode instructions, dropping truncation padding."""
    out = bytearray()
    for ins in stream:
        out.append(ins.opcode)
        out += ins.operand[: ins.size - 1]
    return bytes(out)


def contains_delegatecall(stream: InstructionStream | CodeLike) -> bool:
    if isinstance(stream, InstructionStream):
        return kernels.contains_opcode(stream.code, op.DELEGATECALL)
    return kernels.contains_opcode(as_bytes(stream), op.DELEGATECALL)


def push4_operands(stream: InstructionStream) -> frozenset[int]:
    """Every distinct PUSH4 operand, selector or not."""
    return frozenset(ins.value for ins in stream.instructions if ins.opcode == op.PUSH4)


def bytecode_hash(code: CodeLike) -> bytes:
    return kernels.keccak256(as_bytes(code))


def format_listing(stream: InstructionStream) -> str:
    return "\n".join(str(ins) for ins in stream.instructions)


# -- basic blocks -------------------------------------------------------------

TERMINATORS = {
    op.JUMP: "jump",
    op.JUMPI: "conditional-jump",
    op.STOP: "stop",
    op.SELFDESTRUCT: "stop",
    op.RETURN: "return",
    op.REVERT: "revert",
}


def _terminator(opcode: int) -> str | None:
    if opcode == op.INVALID or not op.is_defined(opcode):
        return "invalid"
    return TERMINATORS.get(opcode)


@dataclass(frozen=True, slots=True)
class BasicBlock:
    start: int  # offset of first instruction
    end: int  # offset of last instruction
    terminator: str
    first: int  # index range [first, last] into stream.instructions
    last: int
    jump_target: int | None = None  # statically resolved JUMP/JUMPI target


@dataclass(frozen=True)
class BasicBlockGraph:
    blocks: tuple[BasicBlock, ...]
    edges: frozenset[tuple[int, int]]
    # block index -> True when its JUMP/JUMPI target could not be resolved
    unresolved: frozenset[int] = frozenset()

    def block_at(self, offset: int) -> int | None:
        for i, b in enumerate(self.blocks):
            if b.start == offset:
                return i
        return None

    def successors(self, index: int) -> list[int]:
        return sorted(d for s, d in self.edges if s == index)

    def predecessors(self, index: int) -> list[int]:
        return sorted(s for s, d in self.edges if d == index)


def _static_target(instructions: tuple[Instruction, ...], first: int, last: int) -> int | None:
    """Resolve the jump target of the block's final JUMP/JUMPI.

    Runs a tiny constant stack over the block; values of unknown provenance
    are ``None``.  Entry stack contents are unknown.
    """
    stack: list[int | None] = []
    for i in range(first, last):
        ins = instructions[i]
        o = ins.opcode
        if op.PUSH0 <= o <= op.PUSH32:
            stack.append(ins.value)
            continue
        if op.DUP1 <= o <= op.DUP16:
            n = o - op.DUP1 + 1
            stack.append(stack[-n] if len(stack) >= n else None)
            continue
        if op.SWAP1 <= o <= op.SWAP16:
            n = o - op.SWAP1 + 1
            if len(stack) < n + 1:
                # pad with unknown entry values so positions line up
                stack[:0] = [None] * (n + 1 - len(stack))
            stack[-1], stack[-n - 1] = stack[-n - 1], stack[-1]
            continue
        entry = op.OPCODES.get(o)
        n_in, n_out = (entry[1], entry[2]) if entry else (0, 0)
        del stack[max(0, len(stack) - n_in):]
        stack.extend([None] * n_out)
    return stack[-1] if stack else None


def split_basic_blocks(stream: InstructionStream) -> BasicBlockGraph:
    instructions = stream.instructions
    blocks: list[BasicBlock] = []
    n = len(instructions)
    first = 0
    for i, ins in enumerate(instructions):
        term = _terminator(ins.opcode)
        nxt = instructions[i + 1] if i + 1 < n else None
        if term is None and nxt is not None and nxt.opcode != op.JUMPDEST:
            continue
        kind = term or "fallthrough"
        target = None
        if kind in ("jump", "conditional-jump"):
            target = _static_target(instructions, first, i)
        blocks.append(BasicBlock(instructions[first].offset, ins.offset, kind, first, i, target))
        first = i + 1

    start_index = {b.start: k for k, b in enumerate(blocks)}
    edges = set()
    unresolved = set()
    for k, b in enumerate(blocks):
        if b.terminator in ("jump", "conditional-jump"):
            t = b.jump_target
            if t is not None and t in stream.jumpdests and t in start_index:
                edges.add((k, start_index[t]))
            else:
                unresolved.add(k)
        if b.terminator in ("conditional-jump", "fallthrough") and k + 1 < len(blocks):
            edges.add((k, k + 1))
    return BasicBlockGraph(tuple(blocks), frozenset(edges), frozenset(unresolved))
