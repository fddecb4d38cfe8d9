"""Chain-state access contract shared by the emulator and the providers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Protocol, runtime_checkable

__all__ = [
    "BlockContext",
    "ChainStateProvider",
    "EmptyState",
    "ProviderError",
    "StateUnavailable",
    "format_address",
    "format_word",
    "parse_int",
]


class ProviderError(Exception):
    """A chain-state query could not be answered."""

    retriable = False


class StateUnavailable(ProviderError):
    """The provider has no answer for this query (e.g. a strict fixture)."""


@dataclass(frozen=True)
class BlockContext:
    """Block-level values pinned for the lifetime of one emulation."""

    number: int = 0
    timestamp: int = 0
    gaslimit: int = 30_000_000
    gasprice: int = 0
    difficulty: int = 0  # PREVRANDAO after the merge
    basefee: int = 0
    chainid: int = 1
    coinbase: int = 0
    blockhash: dict[int, int] = field(default_factory=dict)
    blobbasefee: int = 1

    def to_json(self) -> dict:
        out = asdict(self)
        out["coinbase"] = format_address(self.coinbase)
        out["blockhash"] = {str(k): format_word(v) for k, v in self.blockhash.items()}
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "BlockContext":
        kwargs = {}
        for name in ("number", "timestamp", "gaslimit", "gasprice", "difficulty",
                     "basefee", "chainid", "coinbase", "blobbasefee"):
            if name in doc:
                kwargs[name] = parse_int(doc[name])
        if "prevrandao" in doc and "difficulty" not in doc:
            kwargs["difficulty"] = parse_int(doc["prevrandao"])
        if "blockhash" in doc:
            kwargs["blockhash"] = {int(k): parse_int(v) for k, v in doc["blockhash"].items()}
        return cls(**kwargs)


@runtime_checkable
class ChainStateProvider(Protocol):
    """Read-only chain state at a given block height.

    Answers for a fixed (address, slot, height) never change, so callers may
    memoize freely.  Implementations must tolerate concurrent reads.
    """

    def get_code(self, address: int, block: int) -> bytes: ...

    def get_storage_at(self, address: int, slot: int, block: int) -> int: ...

    def latest_block(self) -> tuple[int, BlockContext]: ...


class EmptyState:
    """World with no code and all-zero storage."""

    def get_code(self, address: int, block: int) -> bytes:
        return b""

    def get_storage_at(self, address: int, slot: int, block: int) -> int:
        return 0

    def latest_block(self) -> tuple[int, BlockContext]:
        return 0, BlockContext()


def parse_int(value) -> int:
    if isinstance(value, int):
        return value
    s = str(value).strip()
    if s[:2].lower() == "0x":
        return int(s, 16) if len(s) > 2 else 0
    return int(s)


def format_address(value: int) -> str:
    return "0x" + (value & ((1 << 160) - 1)).to_bytes(20, "big").hex()


def format_word(value: int) -> str:
    return "0x" + value.to_bytes(32, "big").hex()
