"""Hand-assembled contracts covering the common proxy and logic shapes.

Used by the test suite, the benchmark and for trying the CLI against a
fixture world without a node.
"""

from __future__ import annotations

from .asm import assemble
from .kernels import keccak256

ADDRESS_MASK = (1 << 160) - 1

EIP1967_IMPLEMENTATION_SLOT = int.from_bytes(keccak256(b"eip1967.proxy.implementation"), "big") - 1
EIP1822_PROXIABLE_SLOT = int.from_bytes(keccak256(b"PROXIABLE"), "big")

EIP1167_PREFIX = bytes.fromhex("363d3d373d3d3d363d73")
EIP1167_SUFFIX = bytes.fromhex("5af43d82803e903d91602b57fd5bf3")

USDT = 0xDAC17F958D2EE523A2206206994597C13D831EC7
FREE_ETHER_WITHDRAWAL = 0xDF4A3106


def _hex(value: int, width: int) -> str:
    return "0x" + value.to_bytes(width, "big").hex()


def minimal_proxy(logic: int) -> bytes:
    """EIP-1167 clone delegating everything to ``logic``."""
    return EIP1167_PREFIX + logic.to_bytes(20, "big") + EIP1167_SUFFIX


def listing_proxy(logic_slot: int = 1, selector: int = FREE_ETHER_WITHDRAWAL) -> bytes:
    """Solidity-style proxy laid out like the classic honeypot example.

    One dispatched function (``selector``) whose body delegatecalls USDT with
    a fixed ``transfer(address,uint256)`` payload, and a fallback that
    forwards calldata to the address held in ``logic_slot``.  The owner lives
    in slot 0 and is read as a 20-byte address.
    """
    mask = _hex(ADDRESS_MASK, 20)
    transfer = _hex(0xA9059CBB << 224, 32)
    return assemble(f"""
        PUSH1 0x80
        PUSH1 0x40
        MSTORE
        CALLVALUE
        DUP1
        ISZERO
        PUSH2 :nonpayable
        JUMPI
        PUSH0
        DUP1
        REVERT
    nonpayable:
        JUMPDEST
        POP
        PUSH1 0x04
        CALLDATASIZE
        LT
        PUSH2 :forward
        JUMPI
        PUSH0
        CALLDATALOAD
        PUSH1 0xe0
        SHR
        DUP1
        PUSH4 {_hex(selector, 4)}
        EQ
        PUSH2 :impl
        JUMPI
        POP
    forward:
        JUMPDEST
        PUSH {hex(logic_slot)}
        SLOAD
        PUSH20 {mask}
        AND
        CALLDATASIZE
        PUSH0
        PUSH1 0x80
        CALLDATACOPY
        CALLDATASIZE
        PUSH1 0x80
        ADD
        PUSH2 :fallback
        JUMP
        .org 0x7c 0xfe
    fallback:
        JUMPDEST
        PUSH0
        PUSH1 0x40
        MLOAD
        DUP1
        DUP4
        SUB
        DUP2
        DUP6
        GAS
        DELEGATECALL
        POP
        RETURNDATASIZE
        PUSH0
        PUSH0
        RETURNDATACOPY
        RETURNDATASIZE
        PUSH0
        RETURN
        .org 0xce 0xfe
    impl:
        JUMPDEST
        PUSH32 {transfer}
        PUSH1 0x80
        MSTORE
        PUSH0
        SLOAD
        PUSH20 {mask}
        AND
        PUSH1 0x84
        MSTORE
        PUSH2 0x03e8
        PUSH1 0xa4
        MSTORE
        PUSH0
        PUSH0
        PUSH1 0x44
        PUSH1 0x80
        PUSH20 {_hex(USDT, 20)}
        GAS
        DELEGATECALL
        POP
        STOP
    """)


def slot_proxy(slot: int, selectors: tuple[int, ...] = ()) -> bytes:
    """Forwarding proxy reading its logic address from ``slot``.

    With ``selectors``, a dispatcher precedes the fallback; every dispatched
    function simply returns.
    """
    return assemble(_dispatcher(selectors, "forward") + f"""
    forward:
        JUMPDEST
        CALLDATASIZE
        PUSH0
        PUSH0
        CALLDATACOPY
        PUSH0
        PUSH0
        CALLDATASIZE
        PUSH0
        PUSH32 {_hex(slot, 32)}
        SLOAD
        GAS
        DELEGATECALL
        RETURNDATASIZE
        PUSH0
        PUSH0
        RETURNDATACOPY
        PUSH2 :ok
        JUMPI
        RETURNDATASIZE
        PUSH0
        REVERT
    ok:
        JUMPDEST
        RETURNDATASIZE
        PUSH0
        RETURN
    """ + _function_bodies(selectors))


def eip1967_proxy(selectors: tuple[int, ...] = ()) -> bytes:
    return slot_proxy(EIP1967_IMPLEMENTATION_SLOT, selectors)


def eip1822_proxy(selectors: tuple[int, ...] = ()) -> bytes:
    return slot_proxy(EIP1822_PROXIABLE_SLOT, selectors)


def library_caller(library: int, selector: int = 0x12345678) -> bytes:
    """Delegatecalls ``library`` with a fixed payload, ignoring calldata."""
    return assemble(f"""
        PUSH32 {_hex(selector << 224, 32)}
        PUSH0
        MSTORE
        PUSH0
        PUSH0
        PUSH1 0x04
        PUSH0
        PUSH20 {_hex(library, 20)}
        GAS
        DELEGATECALL
        POP
        STOP
    """)


def _dispatcher(selectors, default_label: str) -> str:
    lines = [
        "PUSH1 0x04", "CALLDATASIZE", "LT", f"PUSH2 :{default_label}", "JUMPI",
        "PUSH0", "CALLDATALOAD", "PUSH1 0xe0", "SHR",
    ]
    for sel in selectors:
        lines += ["DUP1", f"PUSH4 {_hex(sel, 4)}", "EQ", f"PUSH2 :fn_{sel:08x}", "JUMPI"]
    lines += [f"PUSH2 :{default_label}", "JUMP"]
    return "\n".join(lines) + "\n"


def _function_bodies(selectors) -> str:
    return "".join(f"fn_{sel:08x}:\nJUMPDEST\nSTOP\n" for sel in selectors)


def plain_contract(selectors: tuple[int, ...] = (0x18160DDD, 0x70A08231)) -> bytes:
    """Dispatcher-only contract with no DELEGATECALL; unknown selectors revert."""
    return assemble(_dispatcher(selectors, "nomatch") + """
    nomatch:
        JUMPDEST
        PUSH0
        DUP1
        REVERT
    """ + _function_bodies(selectors))


def logic_contract(selectors: tuple[int, ...] = (FREE_ETHER_WITHDRAWAL,)) -> bytes:
    """Logic side of the function-collision example: plain dispatcher."""
    return plain_contract(selectors)


def packed_flags_logic() -> bytes:
    """Logic reading two packed bools at slot 0, bytes 0 and 1."""
    return assemble("""
        PUSH0
        SLOAD
        PUSH1 0xff
        AND
        PUSH0
        SLOAD
        PUSH1 0x08
        SHR
        PUSH1 0xff
        AND
        OR
        PUSH2 :done
        JUMPI
        PUSH0
        DUP1
        REVERT
    done:
        JUMPDEST
        STOP
    """)


def initializer_logic() -> bytes:
    """Packed-bool initializer: reads both flags and updates them in place."""
    not_low = _hex(((1 << 256) - 1) ^ 0xFF, 32)
    not_second = _hex(((1 << 256) - 1) ^ 0xFF00, 32)
    return assemble(f"""
        PUSH0
        SLOAD
        PUSH1 0x08
        SHR
        PUSH1 0xff
        AND
        PUSH0
        SLOAD
        PUSH1 0xff
        AND
        ISZERO
        OR
        PUSH2 :go
        JUMPI
        PUSH0
        DUP1
        REVERT
    go:
        JUMPDEST
        PUSH0
        SLOAD
        PUSH32 {not_low}
        AND
        PUSH1 0x01
        OR
        PUSH0
        SSTORE
        PUSH0
        SLOAD
        PUSH32 {not_second}
        AND
        PUSH0
        PUSH1 0x08
        SHL
        OR
        PUSH0
        SSTORE
        STOP
    """)


def owner_guarded(slot: int = 0) -> bytes:
    """``require(msg.sender == owner)`` with the owner stored at ``slot``."""
    return assemble(f"""
        PUSH1 {_hex(slot, 1)}
        SLOAD
        PUSH20 {_hex(ADDRESS_MASK, 20)}
        AND
        CALLER
        EQ
        PUSH2 :ok
        JUMPI
        PUSH0
        DUP1
        REVERT
    ok:
        JUMPDEST
        STOP
    """)


def fixture_document(accounts: dict, height: int = 100, **context) -> dict:
    """Build a fixture-provider document.

    ``accounts`` maps an integer address to ``{"code": bytes, "storage":
    {slot: value | [(from, to, value), ...]}, ...}``.
    """
    out = {}
    for address, spec in accounts.items():
        entry = {"code": "0x" + bytes(spec.get("code", b"")).hex()}
        storage = {}
        for slot, hist in spec.get("storage", {}).items():
            if isinstance(hist, int):
                hist = [(0, None, hist)]
            storage[hex(slot)] = [
                {"from": lo, "to": hi, "value": hex(value)} for lo, hi, value in hist
            ]
        if storage:
            entry["storage"] = storage
        for key in ("balance", "deployed"):
            if key in spec:
                entry[key] = spec[key]
        out[_hex(address, 20)] = entry
    return {"accounts": out, "latest": {"height": height, **context}}
