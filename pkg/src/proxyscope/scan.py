"""Batch scanning: fetch, dedup by bytecode hash, detect, resolve history, collide."""

from __future__ import annotations

import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .bytecode import bytecode_hash
from .chain.history import logic_history
from .collision import ContractAnalysis, analyze_contract, collide
from .emulator import Limits
from .proxy import SLOT_KINDS, ImplementationPointer, ProbeCalldata, ProxyReport, detect_proxy
from .state import BlockContext, ChainStateProvider, ProviderError, format_address

__all__ = ["ScanConfig", "ScanRecord", "AnalysisCache", "Scanner", "read_address_list", "parse_address"]

CACHE_VERSION = 1


def parse_address(text: str) -> int:
    s = text.strip()
    if s[:2].lower() != "0x" or len(s) != 42:
        raise ValueError(f"not a 0x-prefixed 20-byte address: {text.strip()!r}")
    return int(s, 16)


def read_address_list(path) -> list[str]:
    """Non-empty, non-comment lines of a UTF-8 address list."""
    lines = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return lines


@dataclass
class ScanConfig:
    provider: ChainStateProvider
    block: int | None = None  # None: latest at scan start
    limits: Limits = field(default_factory=Limits)
    seed: int = 0
    votes: int = 1
    workers: int = 1
    cache_path: str | None = None
    omit_timing: bool = False

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class ScanRecord:
    address: str
    bytecode_hash: str | None = None
    proxy: ProxyReport | None = None
    logic: list[int] = field(default_factory=list)
    query_count: int = 0
    collisions: list = field(default_factory=list)
    cache_hit: bool = False
    failure: str | None = None
    timing_us: dict[str, int] = field(default_factory=dict)

    def to_json(self, omit_timing: bool = False) -> dict:
        doc = {
            "address": self.address,
            "bytecode_hash": self.bytecode_hash,
            "proxy": self.proxy.to_json() if self.proxy else None,
            "logic": [format_address(a) for a in self.logic],
            "query_count": self.query_count,
            "collisions": [c.to_json() for c in self.collisions],
            "cache_hit": self.cache_hit,
        }
        if self.failure is not None:
            doc["failure"] = self.failure
        if not omit_timing:
            doc["timing_us"] = self.timing_us
        return doc


def _core_to_json(report: ProxyReport) -> dict:
    doc = {
        "is_proxy": report.is_proxy,
        "minimal_proxy": report.minimal_proxy,
        "exact_forward": report.exact_forward,
        "confidence": report.confidence,
        "failure": report.failure,
        "pointer": report.pointer.to_json() if report.pointer else None,
        "probe": None,
    }
    if report.probe is not None:
        doc["probe"] = {"data": report.probe.data.hex(), "seed": report.probe.seed}
    return doc


def _core_from_json(doc: dict) -> ProxyReport:
    probe = None
    if doc.get("probe"):
        probe = ProbeCalldata(bytes.fromhex(doc["probe"]["data"]), frozenset(), doc["probe"]["seed"])
    pointer = ImplementationPointer.from_json(doc["pointer"]) if doc.get("pointer") else None
    return ProxyReport(doc["is_proxy"], probe, pointer, minimal_proxy=doc["minimal_proxy"],
                       exact_forward=doc["exact_forward"], confidence=doc["confidence"],
                       failure=doc.get("failure"))


class AnalysisCache:
    """Bytecode-hash keyed results, shared between workers.

    Concurrent requests for the same hash compute once; the others wait.
    """

    def __init__(self, path: str | None = None):
        self.path = path
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        self.proxy: dict[str, dict] = {}
        self.analysis: dict[str, ContractAnalysis] = {}
        if path and os.path.exists(path):
            self._load(path)

    def _load(self, path: str) -> None:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("version") != CACHE_VERSION:
            return
        for h, entry in doc.get("entries", {}).items():
            if "proxy" in entry:
                self.proxy[h] = entry["proxy"]
            if "analysis" in entry:
                self.analysis[h] = ContractAnalysis.from_cache(entry["analysis"])

    def save(self) -> None:
        if not self.path:
            return
        with self._lock:
            entries: dict[str, dict] = {}
            for h, core in self.proxy.items():
                entries.setdefault(h, {})["proxy"] = core
            for h, analysis in self.analysis.items():
                entries.setdefault(h, {})["analysis"] = analysis.to_cache()
        tmp = f"{self.path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"version": CACHE_VERSION, "entries": dict(sorted(entries.items()))}, fh,
                      sort_keys=True)
        os.replace(tmp, self.path)

    def _key_lock(self, key: str) -> threading.Lock:
        with self._lock:
            lock = self._key_locks.get(key)
            if lock is None:
                lock = self._key_locks[key] = threading.Lock()
            return lock

    def proxy_core(self, key: str, compute) -> tuple[dict, bool]:
        """(cached core, hit?) computing with ``compute()`` on a miss.

        ``compute`` returns (core, cacheable); state-dependent failures are
        not stored.
        """
        with self._key_lock("p" + key):
            core = self.proxy.get(key)
            if core is not None:
                return core, True
            core, cacheable = compute()
            if cacheable:
                with self._lock:
                    self.proxy[key] = core
            return core, False

    def contract(self, key: str, code: bytes) -> ContractAnalysis:
        with self._key_lock("a" + key):
            analysis = self.analysis.get(key)
            if analysis is None:
                analysis = analyze_contract(code)
                with self._lock:
                    self.analysis[key] = analysis
            return analysis


class Scanner:
    def __init__(self, config: ScanConfig, cache: AnalysisCache | None = None):
        self.config = config
        self.cache = cache or AnalysisCache(config.cache_path)
        self.height, self.context = self._pin()
        self.emulations = 0
        self._count_lock = threading.Lock()

    def _pin(self) -> tuple[int, BlockContext]:
        height, context = self.config.provider.latest_block()
        if self.config.block is not None and self.config.block != height:
            height = self.config.block
            context = replace(context, number=height)
        return height, context

    # -- per address ----------------------------------------------------------

    def scan_one(self, line: str) -> ScanRecord:
        record = ScanRecord(address=line.strip())
        timing = record.timing_us
        try:
            address = parse_address(line)
        except ValueError as exc:
            record.failure = f"bad-address: {exc}"
            return record
        record.address = format_address(address)
        provider = self.config.provider
        t0 = time.perf_counter()
        try:
            code = bytes(provider.get_code(address, self.height))
        except ProviderError as exc:
            if getattr(exc, "fatal", False):
                raise
            record.failure = f"oracle-missing: {exc}"
            return record
        finally:
            timing["fetch"] = _us(t0)
        key = bytecode_hash(code).hex()
        record.bytecode_hash = "0x" + key

        t0 = time.perf_counter()
        report, record.cache_hit = self._detect(address, code, key)
        timing["detect"] = _us(t0)
        record.proxy = report
        if report.failure:
            record.failure = report.failure
        if not report.is_proxy:
            return record

        t0 = time.perf_counter()
        try:
            deploy = provider.deployed_at(address) if hasattr(provider, "deployed_at") else 0
            history = logic_history(provider, report, min(deploy, self.height), self.height, address)
            record.logic = list(history.addresses)
            record.query_count = history.query_count
        except (ProviderError, ValueError) as exc:
            if getattr(exc, "fatal", False):
                raise
            record.failure = f"history: {exc}"
            record.logic = [report.pointer.address] if report.pointer.address else []
        timing["history"] = _us(t0)

        t0 = time.perf_counter()
        proxy_analysis = self.cache.contract(key, code)
        for logic in record.logic:
            try:
                logic_code = bytes(provider.get_code(logic, self.height))
            except ProviderError as exc:
                if getattr(exc, "fatal", False):
                    raise
                record.failure = record.failure or f"oracle-missing: {exc}"
                continue
            if not logic_code:
                continue
            logic_key = bytecode_hash(logic_code).hex()
            record.collisions.append(collide(
                code, logic_code,
                proxy_label=record.address, logic_label=format_address(logic),
                proxy_analysis=proxy_analysis,
                logic_analysis=self.cache.contract(logic_key, logic_code),
            ))
        timing["collide"] = _us(t0)
        return record

    def _detect(self, address: int, code: bytes, key: str) -> tuple[ProxyReport, bool]:
        def compute():
            report = detect_proxy(code, self.config.provider, self.context, self.config.limits,
                                  self.config.seed, votes=self.config.votes, block=self.height,
                                  address=address)
            if report.emulated:
                with self._count_lock:
                    self.emulations += max(1, self.config.votes)
            # oracle-missing depends on this account's state, not just its code
            return _core_to_json(report), report.failure != "oracle-missing"

        core, hit = self.cache.proxy_core(key, compute)
        report = _core_from_json(core)
        report.address = address
        pointer = report.pointer
        if report.is_proxy and pointer is not None and pointer.kind in SLOT_KINDS:
            # the slot is a property of the code; the address lives in this account
            try:
                value = self.config.provider.get_storage_at(address, pointer.slot, self.height)
                report.pointer = replace(pointer, address=value & ((1 << 160) - 1))
            except ProviderError as exc:
                if getattr(exc, "fatal", False):
                    raise
                report.failure = "oracle-missing"
                report.confidence = "degraded"
        return report, hit

    # -- batch ----------------------------------------------------------------

    def scan(self, lines, emit) -> dict:
        """Scan ``lines`` and call ``emit(record)`` in input order; returns the summary."""
        started = time.perf_counter()
        totals = {"records": 0, "proxies": 0, "failures": 0, "cache_hits": 0}

        def tally(record: ScanRecord) -> None:
            totals["records"] += 1
            totals["proxies"] += bool(record.proxy and record.proxy.is_proxy)
            totals["failures"] += record.failure is not None
            totals["cache_hits"] += record.cache_hit
            emit(record)

        if self.config.workers == 1:
            for line in lines:
                tally(self.scan_one(line))
        else:
            with ThreadPoolExecutor(self.config.workers) as pool:
                for record in pool.map(self.scan_one, lines):
                    tally(record)
        self.cache.save()
        elapsed = time.perf_counter() - started
        summary = {**totals, "emulations": self.emulations, "block": self.height}
        if not self.config.omit_timing:
            summary["elapsed_s"] = round(elapsed, 6)
            summary["throughput"] = round(totals["records"] / elapsed, 3) if elapsed > 0 else None
        return summary


def _us(t0: float) -> int:
    return int((time.perf_counter() - t0) * 1e6)
