"""Offline chain state loaded from a JSON document.

    {"accounts": {"0xaddr": {"code": "0x..",
                             "storage": {"0xslot": [{"from": 0, "to": 99, "value": "0x.."}]},
                             "balance": "0x..", "deployed": 12}},
     "latest": {"height": 150, "timestamp": ..., "chainid": 1, ...},
     "strict": false}

Missing code reads as empty and missing storage as zero.  With ``strict``
set, a storage read of an account or slot not listed raises
StateUnavailable instead, which the emulator reports as oracle-missing.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

from ..state import BlockContext, StateUnavailable, parse_int

__all__ = ["FixtureError", "FixtureProvider", "load_fixture"]


class FixtureError(ValueError):
    pass


@dataclass
class _Account:
    code: bytes
    storage: dict[int, tuple[list[int], list[tuple[int | None, int]]]]
    balance: int
    deployed: int


def _int_field(value, where: str) -> int:
    try:
        return parse_int(value)
    except (TypeError, ValueError):
        raise FixtureError(f"{where}: expected an integer or 0x-hex, got {value!r}") from None


def _hex_bytes(value, where: str) -> bytes:
    if not isinstance(value, str):
        raise FixtureError(f"{where}: expected a hex string")
    text = value[2:] if value[:2].lower() == "0x" else value
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise FixtureError(f"{where}: invalid hex") from None


def _parse_history(entries, where: str):
    if isinstance(entries, (str, int)):
        entries = [{"from": 0, "to": None, "value": entries}]
    if not isinstance(entries, list):
        raise FixtureError(f"{where}: expected a list of {{from, to, value}} ranges")
    ranges = []
    for i, entry in enumerate(entries):
        at = f"{where}[{i}]"
        if not isinstance(entry, dict) or "value" not in entry:
            raise FixtureError(f"{at}: expected an object with 'value'")
        lo = _int_field(entry.get("from", 0), f"{at}.from")
        hi = entry.get("to")
        hi = None if hi is None else _int_field(hi, f"{at}.to")
        if hi is not None and hi < lo:
            raise FixtureError(f"{at}: 'to' {hi} is below 'from' {lo}")
        ranges.append((lo, hi, _int_field(entry["value"], f"{at}.value")))
    ranges.sort(key=lambda r: r[0])
    for (lo_a, hi_a, _), (lo_b, _, _) in zip(ranges, ranges[1:]):
        if hi_a is None or hi_a >= lo_b:
            raise FixtureError(f"{where}: overlapping ranges starting at {lo_a} and {lo_b}")
    return [r[0] for r in ranges], [(r[1], r[2]) for r in ranges]


class FixtureProvider:
    """ChainStateProvider backed by a fixture document; read-only and thread-safe."""

    def __init__(self, document: dict, source: str = "<fixture>"):
        if not isinstance(document, dict):
            raise FixtureError(f"{source}: top level must be an object")
        self.source = source
        self.strict = bool(document.get("strict", False))
        self.accounts: dict[int, _Account] = {}
        accounts = document.get("accounts", {})
        if not isinstance(accounts, dict):
            raise FixtureError(f"{source}: accounts: expected an object")
        for key, spec in accounts.items():
            where = f"{source}: accounts.{key}"
            address = _int_field(key, where)
            if not isinstance(spec, dict):
                raise FixtureError(f"{where}: expected an object")
            storage = {}
            raw_storage = spec.get("storage", {})
            if not isinstance(raw_storage, dict):
                raise FixtureError(f"{where}.storage: expected an object")
            for slot_key, entries in raw_storage.items():
                slot = _int_field(slot_key, f"{where}.storage")
                storage[slot] = _parse_history(entries, f"{where}.storage.{slot_key}")
            self.accounts[address] = _Account(
                code=_hex_bytes(spec.get("code", "0x"), f"{where}.code"),
                storage=storage,
                balance=_int_field(spec.get("balance", 0), f"{where}.balance"),
                deployed=_int_field(spec.get("deployed", 0), f"{where}.deployed"),
            )
        latest = document.get("latest", {})
        if not isinstance(latest, dict):
            raise FixtureError(f"{source}: latest: expected an object")
        self.height = _int_field(latest.get("height", 0), f"{source}: latest.height")
        try:
            fields = {k: v for k, v in latest.items() if k != "height"}
            self.context = BlockContext.from_json({"number": self.height, **fields})
        except (TypeError, ValueError) as exc:
            raise FixtureError(f"{source}: latest: {exc}") from None

    @classmethod
    def load(cls, path) -> "FixtureProvider":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FixtureError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        return cls(document, str(path))

    def get_code(self, address: int, block: int) -> bytes:
        account = self.accounts.get(address)
        if account is None or block < account.deployed:
            return b""
        return account.code

    def get_storage_at(self, address: int, slot: int, block: int) -> int:
        account = self.accounts.get(address)
        if account is None:
            if self.strict:
                raise StateUnavailable(f"no account {address:#042x} in {self.source}")
            return 0
        entry = account.storage.get(slot)
        if entry is None:
            if self.strict:
                raise StateUnavailable(f"slot {slot:#x} of {address:#042x} not in {self.source}")
            return 0
        starts, tails = entry
        i = bisect_right(starts, block) - 1
        if i < 0:
            return 0
        hi, value = tails[i]
        return value if hi is None or block <= hi else 0

    def get_balance(self, address: int, block: int) -> int:
        account = self.accounts.get(address)
        return account.balance if account else 0

    def deployed_at(self, address: int) -> int:
        account = self.accounts.get(address)
        return account.deployed if account else 0

    def latest_block(self) -> tuple[int, BlockContext]:
        return self.height, self.context


def load_fixture(path) -> FixtureProvider:
    return FixtureProvider.load(path)
