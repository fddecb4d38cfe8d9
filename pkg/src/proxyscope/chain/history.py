"""Recover every value a storage slot has held over a block range.

Binary partitioning over heights: if both endpoints of a range read the same
value, the slot is assumed constant across it.  This is exact as long as the
value sequence never returns to an earlier value (A -> B -> A is missed).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from ..proxy import SLOT_KINDS, ProxyReport
from ..state import ChainStateProvider, ProviderError

__all__ = ["SlotHistory", "HistoryError", "find_slot_history", "logic_history", "LogicHistory"]

ADDRESS_MASK = (1 << 160) - 1


class HistoryError(ProviderError):
    """A storage read failed part-way through a history search."""

    retriable = True

    def __init__(self, height: int, cause: Exception):
        super().__init__(f"storage read failed at block {height}: {cause}")
        self.height = height
        self.cause = cause


@dataclass(frozen=True)
class SlotHistory:
    values: tuple[int, ...]  # distinct nonzero values, first-seen order
    query_count: int
    range: tuple[int, int]

    @property
    def value_set(self) -> frozenset[int]:
        return frozenset(self.values)


class _Reader:
    """Memoizes one slot's value per height."""

    def __init__(self, provider, address: int, slot: int):
        self.provider = provider
        self.address = address
        self.slot = slot
        self.memo: dict[int, int] = {}
        self.lock = threading.Lock()

    def __call__(self, height: int) -> int:
        with self.lock:
            if height in self.memo:
                return self.memo[height]
        try:
            value = self.provider.get_storage_at(self.address, self.slot, height)
        except ProviderError as exc:
            raise HistoryError(height, exc) from exc
        with self.lock:
            self.memo.setdefault(height, value)
        return value


def find_slot_history(provider: ChainStateProvider, address: int, slot: int,
                      h_lower: int, h_upper: int) -> SlotHistory:
    if h_lower > h_upper:
        raise ValueError(f"empty range [{h_lower}, {h_upper}]")
    read = _Reader(provider, address, slot)
    found: dict[int, int] = {}  # value -> first height it was seen at

    def note(value: int, height: int) -> None:
        if value not in found or height < found[value]:
            found[value] = height

    # explicit stack instead of recursion; left halves are visited first so
    # ties in first-seen height keep recursion order
    pending = [(h_lower, h_upper)]
    while pending:
        lo, hi = pending.pop()
        v_lo, v_hi = read(lo), read(hi)
        if v_lo == v_hi:
            note(v_lo, lo)
            continue
        mid = (lo + hi) // 2
        pending.append((mid + 1, hi))
        pending.append((lo, mid))
    found.pop(0, None)
    ordered = sorted(found, key=lambda v: found[v])
    return SlotHistory(tuple(ordered), len(read.memo), (h_lower, h_upper))


@dataclass(frozen=True)
class LogicHistory:
    addresses: tuple[int, ...]
    query_count: int


def logic_history(provider: ChainStateProvider, report: ProxyReport, deploy_height: int,
                  latest_height: int, address: int | None = None) -> LogicHistory:
    """Every logic address the proxy has pointed at, oldest first."""
    if not report.is_proxy or report.pointer is None:
        raise ValueError("not a proxy")
    pointer = report.pointer
    if pointer.kind == "Hardcoded":
        return LogicHistory((pointer.address,), 0)
    if pointer.kind not in SLOT_KINDS:
        return LogicHistory((pointer.address,) if pointer.address else (), 0)
    target = address if address is not None else report.address
    if target is None:
        raise ValueError("slot-based history needs the proxy's address")
    history = find_slot_history(provider, target, pointer.slot, deploy_height, latest_height)
    seen: dict[int, None] = {}
    for value in history.values:
        a = value & ADDRESS_MASK
        if a:
            seen.setdefault(a, None)
    return LogicHistory(tuple(seen), history.query_count)
