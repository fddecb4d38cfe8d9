"""Function-selector recovery from compiler-emitted dispatchers."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import opcodes as op
from .bytecode import InstructionStream
from .kernels import keccak256

__all__ = ["SelectorSet", "extract_selectors", "function_selector", "format_selector"]

# Max instructions allowed between the PUSH4 and its EQ.
MAX_INTERLEAVE = 8


@dataclass(frozen=True)
class SelectorSet:
    selectors: frozenset[int] = frozenset()
    # selector -> offset of the PUSH4 that produced it (first match wins)
    evidence: dict[int, int] = field(default_factory=dict)
    # True when PUSH4 data and CALLDATALOAD exist but no dispatcher matched,
    # e.g. a table-driven dispatcher this pattern does not understand
    possibly_incomplete: bool = False

    def __contains__(self, selector: int) -> bool:
        return selector in self.selectors

    def __len__(self) -> int:
        return len(self.selectors)

    def sorted(self) -> list[int]:
        return sorted(self.selectors)

    def to_json(self) -> list[str]:
        return [format_selector(s) for s in self.sorted()]


def format_selector(selector: int) -> str:
    return f"0x{selector:08x}"


def function_selector(signature: str) -> int:
    """First four bytes of Keccak-256 over the canonical prototype."""
    return int.from_bytes(keccak256(signature.encode()), "big") >> 224


def _compared_at_eq(instructions, start: int) -> int | None:
    """Follow the PUSH4 at ``start`` to an EQ that consumes it.

    Returns the index of that EQ, or None.  Only DUPn, SWAPn and pushes may
    sit in between; the PUSH4 value is tracked through them symbolically.
    """
    # one marker per stack entry from the PUSH4 upward; True where the
    # PUSH4 value (or a DUP of it) sits
    stack = [True]
    n = len(instructions)
    for j in range(start + 1, min(n, start + 2 + MAX_INTERLEAVE)):
        o = instructions[j].opcode
        if o == op.EQ:
            top = stack[-2:] if len(stack) >= 2 else stack[-1:]
            return j if any(top) else None
        if op.PUSH0 <= o <= op.PUSH32:
            stack.append(False)
        elif op.DUP1 <= o <= op.DUP16:
            k = o - op.DUP1 + 1
            stack.append(stack[-k] if k <= len(stack) else False)
        elif op.SWAP1 <= o <= op.SWAP16:
            k = o - op.SWAP1 + 1
            if k + 1 > len(stack):
                stack[:0] = [False] * (k + 1 - len(stack))
            stack[-1], stack[-k - 1] = stack[-k - 1], stack[-1]
        else:
            return None
        if not any(stack):
            return None
    return None


def extract_selectors(stream: InstructionStream) -> SelectorSet:
    """Selectors matched by ``PUSH4 w .. EQ PUSHn target JUMPI``.

    The jump target must be a JUMPDEST.  LT/GT split trees still match at
    their leaf EQ comparisons; mask constants such as ``PUSH4 0xffffffff
    AND`` never do.
    """
    instructions = stream.instructions
    jumpdests = stream.jumpdests
    evidence: dict[int, int] = {}
    n = len(instructions)
    saw_push4 = False
    for i, ins in enumerate(instructions):
        if ins.opcode != op.PUSH4:
            continue
        saw_push4 = True
        j = _compared_at_eq(instructions, i)
        if j is None or j + 2 >= n:
            continue
        target, jumpi = instructions[j + 1], instructions[j + 2]
        if not (op.PUSH1 <= target.opcode <= op.PUSH1 + 2) or jumpi.opcode != op.JUMPI:
            continue
        if target.truncated or target.value not in jumpdests:
            continue
        evidence.setdefault(ins.value, ins.offset)
    incomplete = (
        not evidence
        and saw_push4
        and any(ins.opcode == op.CALLDATALOAD for ins in instructions)
    )
    return SelectorSet(frozenset(evidence), evidence, incomplete)
