"""Chain-state providers and storage-slot history recovery."""

from ..state import BlockContext, ChainStateProvider, EmptyState, ProviderError, StateUnavailable
from .fixture import FixtureError, FixtureProvider, load_fixture
from .history import HistoryError, LogicHistory, SlotHistory, find_slot_history, logic_history
from .rpc import RpcError, RpcProvider, endpoint_from_env, rpc_provider

__all__ = [
    "BlockContext",
    "ChainStateProvider",
    "EmptyState",
    "ProviderError",
    "StateUnavailable",
    "FixtureError",
    "FixtureProvider",
    "load_fixture",
    "HistoryError",
    "LogicHistory",
    "SlotHistory",
    "find_slot_history",
    "logic_history",
    "RpcError",
    "RpcProvider",
    "endpoint_from_env",
    "rpc_provider",
]
