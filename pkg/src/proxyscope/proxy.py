"""Dynamic proxy detection: probe a contract with unused-selector calldata and
see whether it forwards the call through DELEGATECALL."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field, replace

from . import samples
from .bytecode import InstructionStream, as_bytes, contains_delegatecall, decode_bytecode, push4_operands
from .emulator import ExecutionTrace, Limits, NORMAL_HALTS, execute
from .state import BlockContext, ChainStateProvider, EmptyState, ProviderError, format_address, format_word

__all__ = [
    "POINTER_KINDS",
    "ProbeCalldata",
    "ImplementationPointer",
    "ProxyReport",
    "ProbeExhausted",
    "craft_probe",
    "detect_proxy",
    "classify_pointer",
    "is_minimal_proxy",
    "forwarding_calls",
]

POINTER_KINDS = ("Hardcoded", "StorageSlot", "Eip1967", "Eip1822", "Unresolved")
SLOT_KINDS = frozenset({"StorageSlot", "Eip1967", "Eip1822"})

PROBE_PADDING = 32


class ProbeExhausted(ValueError):
    """Every 4-byte selector is taken; no probe can avoid them all."""


@dataclass(frozen=True)
class ProbeCalldata:
    data: bytes
    avoided: frozenset[int]
    seed: int

    @property
    def selector(self) -> int:
        return int.from_bytes(self.data[:4], "big")

    def to_json(self) -> dict:
        return {"selector": f"0x{self.selector:08x}", "seed": self.seed}


@dataclass(frozen=True)
class ImplementationPointer:
    kind: str
    slot: int | None = None
    address: int | None = None

    def to_json(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.slot is not None:
            doc["slot"] = format_word(self.slot)
        if self.address is not None:
            doc["address"] = format_address(self.address)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ImplementationPointer":
        slot = doc.get("slot")
        address = doc.get("address")
        return cls(doc["kind"], int(slot, 16) if slot else None,
                   int(address, 16) if address else None)


@dataclass
class ProxyReport:
    is_proxy: bool
    probe: ProbeCalldata | None = None
    pointer: ImplementationPointer | None = None
    forwarded_input: bytes = b""
    minimal_proxy: bool = False
    exact_forward: bool = False
    confidence: str = "full"
    failure: str | None = None
    address: int | None = None
    emulated: bool = False
    # forwarding DELEGATECALLs after the first, as (callee, input)
    extra_forwards: list[tuple[int, bytes]] = field(default_factory=list)

    def to_json(self) -> dict:
        doc: dict = {}
        if self.address is not None:
            doc["address"] = format_address(self.address)
        doc["is_proxy"] = self.is_proxy
        doc["minimal_proxy"] = self.minimal_proxy
        doc["pointer"] = self.pointer.to_json() if self.pointer else None
        doc["exact_forward"] = self.exact_forward
        doc["confidence"] = self.confidence
        if self.failure is not None:
            doc["failure"] = self.failure
        doc["probe"] = self.probe.to_json() if self.probe else None
        if self.extra_forwards:
            doc["extra_forwards"] = [format_address(a) for a, _ in self.extra_forwards]
        return doc


def craft_probe(stream: InstructionStream, seed: int = 0) -> ProbeCalldata:
    """Random selector outside every PUSH4 operand, plus 32 zero bytes."""
    avoided = push4_operands(stream)
    if len(avoided) >= 1 << 32:
        raise ProbeExhausted("all 2^32 selectors occur as PUSH4 operands")
    rng = random.Random(seed)
    while True:
        selector = rng.getrandbits(32)
        if selector not in avoided:
            break
    return ProbeCalldata(selector.to_bytes(4, "big") + bytes(PROBE_PADDING), avoided, seed)


def is_minimal_proxy(code: bytes) -> bool:
    """Exact EIP-1167 runtime template, any embedded address."""
    pre, suf = samples.EIP1167_PREFIX, samples.EIP1167_SUFFIX
    return len(code) == len(pre) + 20 + len(suf) and code.startswith(pre) and code.endswith(suf)


def forwarding_calls(trace: ExecutionTrace, probe: ProbeCalldata):
    """Top-level DELEGATECALLs whose input starts with the probe selector."""
    head = probe.data[:4]
    return [
        c for c in trace.external_calls
        if c.kind == "DELEGATECALL" and c.depth == 0 and len(c.input) >= 4 and c.input[:4] == head
    ]


def classify_pointer(trace: ExecutionTrace, code: bytes, call=None) -> ImplementationPointer:
    """Where the forwarding call's target address comes from.

    ``call`` defaults to the first forwarding DELEGATECALL in ``trace``.
    """
    if call is None:
        calls = [c for c in trace.external_calls if c.kind == "DELEGATECALL" and c.depth == 0]
        if not calls:
            return ImplementationPointer("Unresolved")
        call = calls[0]
    target = call.callee
    # a zero target is an unset pointer, not an embedded address
    if target and target.to_bytes(20, "big") in code:
        return ImplementationPointer("Hardcoded", address=target)
    # Only loads the proxy itself made before the call can have produced the
    # target; the logic contract may later read the same slot for its own use.
    source = None
    for load in trace.sloads:
        if load.event_index > call.event_index:
            break
        if load.address == call.context and load.value & samples.ADDRESS_MASK == target:
            source = load
    if source is None:
        return ImplementationPointer("Unresolved", address=target)
    if source.slot == samples.EIP1967_IMPLEMENTATION_SLOT:
        kind = "Eip1967"
    elif source.slot == samples.EIP1822_PROXIABLE_SLOT:
        kind = "Eip1822"
    else:
        kind = "StorageSlot"
    return ImplementationPointer(kind, source.slot, target)


def _detect_once(code: bytes, stream: InstructionStream, provider, context, limits,
                 seed: int, address: int | None) -> ProxyReport:
    probe = craft_probe(stream, seed)
    kwargs = {} if address is None else {"address": address}
    trace = execute(code, probe.data, context, provider, limits, **kwargs)
    report = ProxyReport(False, probe, address=address, emulated=True)
    halt = trace.halt
    abnormal = halt is not None and halt.reason not in NORMAL_HALTS
    forwards = forwarding_calls(trace, probe)
    if not forwards:
        if abnormal:
            report.failure = halt.reason
            report.confidence = "degraded"
        return report
    first = forwards[0]
    report.is_proxy = True
    report.forwarded_input = first.input
    report.exact_forward = first.input == probe.data
    report.pointer = classify_pointer(trace, code, first)
    report.minimal_proxy = report.pointer.kind == "Hardcoded" and is_minimal_proxy(code)
    report.extra_forwards = [(c.callee, c.input) for c in forwards[1:] if c.callee != first.callee]
    if abnormal:
        report.confidence = "degraded"
    return report


def detect_proxy(code_or_address, provider: ChainStateProvider | None = None,
                 context: BlockContext | None = None, limits: Limits | None = None,
                 seed: int = 0, *, block: int | None = None, votes: int = 1,
                 address: int | None = None) -> ProxyReport:
    """Decide whether a contract is a proxy.

    Pass runtime bytecode (``bytes`` or hex ``str``) or an integer address to
    fetch from ``provider``.  ``address`` names the account the bytecode
    runs as, so storage reads hit its state.  With ``votes > 1`` the probe is repeated with
    seeds ``seed .. seed+votes-1`` and the majority verdict wins.
    """
    provider = provider if provider is not None else EmptyState()
    context = context or BlockContext()
    height = context.number if block is None else block
    if block is not None and context.number != block:
        context = replace(context, number=block)
    if isinstance(code_or_address, int):
        address = code_or_address
        try:
            code = bytes(provider.get_code(address, height))
        except ProviderError as exc:
            if getattr(exc, "fatal", False):
                raise
            return ProxyReport(False, address=address, failure="oracle-missing",
                               confidence="degraded")
    else:
        code = as_bytes(code_or_address)
    if not contains_delegatecall(code):
        return ProxyReport(False, address=address)
    stream = decode_bytecode(code)
    reports = [_detect_once(code, stream, provider, context, limits, seed + k, address)
               for k in range(max(1, votes))]
    if len(reports) == 1:
        return reports[0]
    tally = Counter(r.is_proxy for r in reports)
    winner = tally[True] > tally[False]
    return next(r for r in reports if r.is_proxy == winner)

