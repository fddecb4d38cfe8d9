"""proxyscope command line.

Exit codes: 0 success (per-record failures included), 1 domain error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from dataclasses import replace


from .bytecode import BytecodeParseError, bytecode_hash, decode_bytecode, format_listing, parse_hex
from .chain import FixtureError, FixtureProvider, RpcError, endpoint_from_env, logic_history, rpc_provider
from .collision import collide
from .dispatch import extract_selectors, format_selector
from .emulator import Limits
from .proxy import detect_proxy
from .scan import ScanConfig, Scanner, read_address_list
from .state import BlockContext, EmptyState, ProviderError, format_address

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


def _global_flags() -> argparse.ArgumentParser:
    # defaults are SUPPRESS so a flag given after the subcommand does not
    # clobber one given before it
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    g = p.add_argument_group("global options")
    g.add_argument("--rpc-url", default=S, help="JSON-RPC endpoint (default: $PROXYSCOPE_RPC_URL)")
    g.add_argument("--fixture", default=S, help="offline chain-state fixture (JSON)")
    g.add_argument("--block", default=S, help="block height or 'latest' (default)")
    g.add_argument("--step-limit", type=int, default=S, help="max instructions per emulation")
    g.add_argument("--depth-limit", type=int, default=S, help="max call depth")
    g.add_argument("--seed", type=int, default=S, help="probe RNG seed")
    g.add_argument("--votes", type=int, default=S, help="probe with N seeds, majority wins")
    g.add_argument("--workers", type=int, default=S, help="scan worker threads")
    g.add_argument("--format", choices=("json", "text"), default=S, help="output format")
    g.add_argument("--cache", default=S, help="persistent bytecode-hash cache file")
    g.add_argument("--omit-timing", action="store_true", default=S,
                   help="drop timing fields for reproducible output")
    return p


DEFAULTS = {
    "rpc_url": None, "fixture": None, "block": "latest", "step_limit": Limits.max_steps,
    "depth_limit": Limits.max_depth, "seed": 0, "votes": 1, "workers": 1, "format": "json",
    "cache": None, "omit_timing": False,
}


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="proxyscope", parents=[common],
                                     description="Hidden proxy and collision detection for EVM contracts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("disasm", parents=[common], help="disassemble bytecode")
    p.add_argument("input", help="hex bytecode, or an address when a state source is set")

    p = sub.add_parser("selectors", parents=[common], help="list dispatched function selectors")
    p.add_argument("input")

    p = sub.add_parser("is-proxy", parents=[common], help="probe one contract")
    p.add_argument("input")

    p = sub.add_parser("logic-history", parents=[common], help="all logic addresses of a proxy")
    p.add_argument("address")
    p.add_argument("--from-block", type=int, default=None,
                   help="search start (default: deployment height, else 0)")

    p = sub.add_parser("collide", parents=[common], help="check a proxy/logic pair")
    p.add_argument("proxy")
    p.add_argument("logic")

    p = sub.add_parser("scan", parents=[common], help="scan an address list")
    p.add_argument("addresses", help="file with one 0x address per line ('-' for stdin)")
    return parser


class _Context:
    def __init__(self, args):
        self.args = args
        self.provider = self._provider()
        self.height, self.block_context = self._pin()
        self.limits = Limits(max_steps=args.step_limit, max_depth=args.depth_limit)

    def _provider(self):
        a = self.args
        if a.fixture:
            try:
                return FixtureProvider.load(a.fixture)
            except OSError as exc:
                raise DomainError(f"cannot read fixture: {exc}") from exc
            except FixtureError as exc:
                raise DomainError(f"malformed fixture: {exc}") from exc
        url = a.rpc_url or endpoint_from_env()
        if url:
            return rpc_provider(url)
        return None

    def _pin(self) -> tuple[int, BlockContext]:
        block = self.args.block
        pinned = None
        if str(block).lower() != "latest":
            try:
                pinned = int(str(block), 0)
            except ValueError:
                raise UsageError(f"--block: expected a height or 'latest', got {block!r}") from None
        if self.provider is None:
            return pinned or 0, BlockContext(number=pinned or 0)
        height, context = self.provider.latest_block()
        if pinned is not None:
            height, context = pinned, replace(context, number=pinned)
        return height, context

    @property
    def state(self):
        return self.provider if self.provider is not None else EmptyState()

    def code_of(self, text: str) -> tuple[bytes, int | None]:
        """Bytecode for ``text``: an address if a state source is set, else hex."""
        s = text.strip()
        if self.provider is not None and s[:2].lower() == "0x" and len(s) == 42:
            address = int(s, 16)
            return bytes(self.provider.get_code(address, self.height)), address
        try:
            return parse_hex(s), None
        except BytecodeParseError as exc:
            raise UsageError(f"{text!r}: {exc}") from None

    def address(self, text: str) -> int:
        s = text.strip()
        if s[:2].lower() != "0x" or len(s) != 42:
            raise UsageError(f"{text!r}: expected a 0x-prefixed 20-byte address")
        try:
            return int(s, 16)
        except ValueError:
            raise UsageError(f"{text!r}: invalid hex") from None


def _emit(args, doc, text: str | None = None) -> None:
    if args.format == "text" and text is not None:
        print(text)
    else:
        print(json.dumps(doc, sort_keys=False))


def cmd_disasm(ctx: _Context) -> int:
    code, _ = ctx.code_of(ctx.args.input)
    listing = format_listing(decode_bytecode(code))
    if listing:
        print(listing)
    return EXIT_OK


def cmd_selectors(ctx: _Context) -> int:
    code, _ = ctx.code_of(ctx.args.input)
    found = extract_selectors(decode_bytecode(code))
    doc = {"selectors": found.to_json(), "possibly_incomplete": found.possibly_incomplete}
    _emit(ctx.args, doc, "\n".join(format_selector(s) for s in found.sorted()))
    return EXIT_OK


def _report_text(doc: dict) -> str:
    head = doc.get("address") or doc.get("bytecode_hash")
    if not doc["is_proxy"]:
        tail = f" failure={doc['failure']}" if doc.get("failure") else ""
        return f"{head} not-a-proxy{tail}"
    ptr = doc["pointer"]
    parts = [head, "proxy", ptr["kind"]]
    if "slot" in ptr:
        parts.append(f"slot={ptr['slot']}")
    if "address" in ptr:
        parts.append(f"logic={ptr['address']}")
    if doc["minimal_proxy"]:
        parts.append("minimal")
    if doc["confidence"] != "full":
        parts.append(f"confidence={doc['confidence']}")
    return " ".join(parts)


def cmd_is_proxy(ctx: _Context) -> int:
    a = ctx.args
    code, address = ctx.code_of(a.input)
    try:
        report = detect_proxy(code, ctx.state, ctx.block_context, ctx.limits, a.seed,
                              block=ctx.height, votes=a.votes, address=address)
    except RpcError as exc:
        if exc.fatal:
            raise
        raise DomainError(str(exc)) from exc
    report.address = address
    doc = report.to_json()
    doc["bytecode_hash"] = "0x" + bytecode_hash(code).hex()
    _emit(a, doc, _report_text(doc))
    return EXIT_OK


def cmd_logic_history(ctx: _Context) -> int:
    a = ctx.args
    if ctx.provider is None:
        raise UsageError("logic-history needs --fixture or --rpc-url")
    address = ctx.address(a.address)
    code = bytes(ctx.provider.get_code(address, ctx.height))
    report = detect_proxy(code, ctx.provider, ctx.block_context, ctx.limits, a.seed,
                          block=ctx.height, votes=a.votes, address=address)
    report.address = address
    if not report.is_proxy:
        raise DomainError(f"{format_address(address)} is not a proxy")
    start = a.from_block
    if start is None:
        deployed = getattr(ctx.provider, "deployed_at", None)
        start = deployed(address) if deployed else 0
    history = logic_history(ctx.provider, report, min(start, ctx.height), ctx.height, address)
    doc = {
        "address": format_address(address),
        "pointer": report.pointer.to_json(),
        "logic": [format_address(x) for x in history.addresses],
        "query_count": history.query_count,
    }
    text = "\n".join(doc["logic"] + [f"# query_count={history.query_count}"])
    _emit(a, doc, text)
    return EXIT_OK


def cmd_collide(ctx: _Context) -> int:
    a = ctx.args
    proxy_code, proxy_addr = ctx.code_of(a.proxy)
    logic_code, logic_addr = ctx.code_of(a.logic)
    for name, code in (("proxy", proxy_code), ("logic", logic_code)):
        if not code:
            raise DomainError(f"{name} bytecode is empty")
    report = collide(
        proxy_code, logic_code,
        proxy_label=format_address(proxy_addr) if proxy_addr is not None else None,
        logic_label=format_address(logic_addr) if logic_addr is not None else None,
    )
    doc = report.to_json()
    lines = [f"function collisions: {', '.join(doc['function']['colliding']) or 'none'}"]
    for c in doc["storage"]["collisions"]:
        p, l = c["proxy"], c["logic"]
        lines.append(f"storage slot {c['slot']}: proxy ({p['offset']},{p['width']}) "
                     f"vs logic ({l['offset']},{l['width']})")
    if not doc["storage"]["collisions"]:
        lines.append("storage collisions: none")
    _emit(a, doc, "\n".join(lines))
    return EXIT_OK


def cmd_scan(ctx: _Context) -> int:
    a = ctx.args
    if ctx.provider is None:
        raise UsageError("scan needs --fixture or --rpc-url")
    if a.workers < 1:
        raise UsageError("--workers must be at least 1")
    try:
        lines = read_address_list("/dev/stdin" if a.addresses == "-" else a.addresses)
    except (OSError, UnicodeDecodeError) as exc:
        raise DomainError(f"cannot read address list: {exc}") from exc
    config = ScanConfig(ctx.provider, block=ctx.height, limits=ctx.limits, seed=a.seed,
                        votes=a.votes, workers=a.workers, cache_path=a.cache,
                        omit_timing=a.omit_timing)
    out_lock = threading.Lock()

    def emit(record) -> None:
        doc = record.to_json(a.omit_timing)
        if a.format == "text":
            line = _report_text({**doc["proxy"], "address": doc["address"]}) if doc["proxy"] \
                else f"{doc['address']} failure={doc.get('failure')}"
        else:
            line = json.dumps(doc)
        with out_lock:
            sys.stdout.write(line + "\n")

    summary = Scanner(config).scan(lines, emit)
    if a.format == "text":
        print("# " + " ".join(f"{k}={v}" for k, v in summary.items()))
    else:
        print(json.dumps({"summary": summary}))
    sys.stdout.flush()
    return EXIT_OK


COMMANDS = {
    "disasm": cmd_disasm,
    "selectors": cmd_selectors,
    "is-proxy": cmd_is_proxy,
    "logic-history": cmd_logic_history,
    "collide": cmd_collide,
    "scan": cmd_scan,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for key, value in DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    try:
        if args.step_limit < 1 or args.depth_limit < 0:
            raise UsageError("--step-limit must be >= 1 and --depth-limit >= 0")
        ctx = _Context(args)
        return COMMANDS[args.command](ctx)
    except UsageError as exc:
        print(f"proxyscope: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ProviderError, ValueError) as exc:
        print(f"proxyscope: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
