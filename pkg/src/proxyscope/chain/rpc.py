"""Ethereum JSON-RPC state provider with memoization and bounded retries."""

from __future__ import annotations

import itertools
import os
import threading
import time

import requests

from ..state import BlockContext, ProviderError, format_address, parse_int

__all__ = ["RpcError", "RpcProvider", "rpc_provider", "endpoint_from_env", "ENV_VARS"]

ENV_VARS = ("PROXYSCOPE_RPC_URL", "ETH_RPC_URL")


class RpcError(ProviderError):
    def __init__(self, message: str, method: str, params, *, code: int | None = None,
                 retriable: bool = False, fatal: bool = False):
        super().__init__(f"{method}{tuple(params)}: {message}")
        self.method = method
        self.params = params
        self.code = code
        self.retriable = retriable
        # misconfiguration (bad URL, unsupported scheme): not a per-contract failure
        self.fatal = fatal


def _is_retriable_code(code) -> bool:
    return isinstance(code, int) and -32099 <= code <= -32000


class RpcProvider:
    def __init__(self, url: str, *, retries: int = 3, backoff: float = 0.2,
                 timeout: float = 30.0, cache: dict | None = None):
        self.url = url
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.cache: dict = {} if cache is None else cache
        self.requests_sent = 0
        self._lock = threading.Lock()
        self._local = threading.local()
        self._ids = itertools.count(1)

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = self._local.session = requests.Session()
        return session

    def _post(self, method: str, params: list):
        with self._lock:
            request_id = next(self._ids)
            self.requests_sent += 1
        body = {"jsonrpc": "2.0", "id": request_id, "method": method, "params": params}
        try:
            response = self._session().post(self.url, json=body, timeout=self.timeout)
        except (requests.exceptions.MissingSchema, requests.exceptions.InvalidSchema,
                requests.exceptions.InvalidURL) as exc:
            raise RpcError(str(exc), method, params, fatal=True) from exc
        except requests.RequestException as exc:
            raise RpcError(f"transport: {exc}", method, params, retriable=True) from exc
        if response.status_code >= 500 or response.status_code == 429:
            raise RpcError(f"HTTP {response.status_code}", method, params, retriable=True)
        if response.status_code >= 400:
            raise RpcError(f"HTTP {response.status_code}", method, params)
        try:
            doc = response.json()
        except ValueError as exc:
            raise RpcError("response is not JSON", method, params, retriable=True) from exc
        if not isinstance(doc, dict):
            raise RpcError("malformed JSON-RPC response", method, params)
        if doc.get("error") is not None:
            err = doc["error"]
            code = err.get("code") if isinstance(err, dict) else None
            message = err.get("message", str(err)) if isinstance(err, dict) else str(err)
            raise RpcError(f"error {code}: {message}", method, params, code=code,
                           retriable=_is_retriable_code(code))
        if "result" not in doc:
            raise RpcError("response has no result", method, params)
        return doc["result"]

    def call(self, method: str, params: list):
        key = (method, tuple(params))
        with self._lock:
            if key in self.cache:
                return self.cache[key]
        delay = self.backoff
        for attempt in range(self.retries + 1):
            try:
                result = self._post(method, params)
                break
            except RpcError as exc:
                if not exc.retriable or attempt == self.retries:
                    raise
                time.sleep(delay)
                delay *= 2
        with self._lock:
            self.cache[key] = result
        return result

    def get_code(self, address: int, block: int) -> bytes:
        result = self.call("eth_getCode", [format_address(address), hex(block)])
        return bytes.fromhex(result[2:] if result.startswith("0x") else result)

    def get_storage_at(self, address: int, slot: int, block: int) -> int:
        result = self.call("eth_getStorageAt", [format_address(address), hex(slot), hex(block)])
        return parse_int(result)

    def get_balance(self, address: int, block: int) -> int:
        return parse_int(self.call("eth_getBalance", [format_address(address), hex(block)]))

    def latest_block(self) -> tuple[int, BlockContext]:
        # not memoized: "latest" moves
        block = self._post("eth_getBlockByNumber", ["latest", False])
        if not isinstance(block, dict):
            raise RpcError("no latest block", "eth_getBlockByNumber", ["latest", False])
        height = parse_int(block["number"])
        basefee = parse_int(block.get("baseFeePerGas", 0))
        context = BlockContext(
            number=height,
            timestamp=parse_int(block.get("timestamp", 0)),
            gaslimit=parse_int(block.get("gasLimit", 0)),
            gasprice=basefee,
            difficulty=parse_int(block.get("mixHash") or block.get("difficulty") or 0),
            basefee=basefee,
            chainid=self._chain_id(),
            coinbase=parse_int(block.get("miner", 0)),
            blockhash={height - 1: parse_int(block["parentHash"])} if block.get("parentHash") else {},
        )
        return height, context

    def _chain_id(self) -> int:
        try:
            return parse_int(self.call("eth_chainId", []))
        except RpcError:
            return 1


def endpoint_from_env() -> str | None:
    for name in ENV_VARS:
        value = os.environ.get(name)
        if value:
            return value
    return None


def rpc_provider(url: str | None = None, cache: dict | None = None, **kwargs) -> RpcProvider:
    url = url or endpoint_from_env()
    if not url:
        raise ValueError(f"no RPC endpoint: pass a URL or set {ENV_VARS[0]}")
    return RpcProvider(url, cache=cache, **kwargs)
