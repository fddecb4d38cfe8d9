import random

import pytest
from hypothesis import given, settings, strategies as st

from proxyscope import samples
from proxyscope.asm import assemble
from proxyscope.bytecode import contains_delegatecall, decode_bytecode, push4_operands
from proxyscope.emulator import DEFAULT_ADDRESS, Limits, execute
from proxyscope.proxy import (
    ImplementationPointer, ProbeExhausted, classify_pointer, craft_probe, detect_proxy,
    forwarding_calls, is_minimal_proxy,
)
from proxyscope.state import StateUnavailable

from helpers import World
from oracles import keccak256

LOGIC = 0x5A5A5A5A5A5A5A5A5A5A5A5A5A5A5A5A5A5A5A5A
EIP1967 = int.from_bytes(keccak256(b"eip1967.proxy.implementation"), "big") - 1
PROXIABLE = int.from_bytes(keccak256(b"PROXIABLE"), "big")


def world_for(slot: int, code: bytes, value: int = LOGIC) -> World:
    return World(code={DEFAULT_ADDRESS: code}, storage={(DEFAULT_ADDRESS, slot): value})


def test_slot_constants_match_keccak_oracle():
    assert samples.EIP1967_IMPLEMENTATION_SLOT == EIP1967
    assert hex(EIP1967).startswith("0x360894a1")
    assert samples.EIP1822_PROXIABLE_SLOT == PROXIABLE


# -- probe -----------------------------------------------------------------------

def test_probe_avoids_listing_selector():
    probe = craft_probe(decode_bytecode(samples.listing_proxy()), seed=7)
    assert probe.selector != samples.FREE_ETHER_WITHDRAWAL
    assert len(probe.data) == 36 and probe.data[4:] == bytes(32)
    assert samples.FREE_ETHER_WITHDRAWAL in probe.avoided


def test_probe_is_deterministic_per_seed():
    stream = decode_bytecode(samples.listing_proxy())
    assert craft_probe(stream, 3) == craft_probe(stream, 3)
    assert craft_probe(stream, 3).selector == random.Random(3).getrandbits(32)
    assert len({craft_probe(stream, s).selector for s in range(20)}) > 15


def test_probe_on_empty_code():
    probe = craft_probe(decode_bytecode(b""), 0)
    assert probe.avoided == frozenset() and len(probe.data) == 36


def test_probe_exhaustion_is_a_distinct_error(monkeypatch):
    class Everything(frozenset):
        def __len__(self):
            return 1 << 32

    monkeypatch.setattr("proxyscope.proxy.push4_operands", lambda stream: Everything())
    with pytest.raises(ProbeExhausted):
        craft_probe(decode_bytecode(b""), 0)


def test_probe_skips_colliding_draws():
    first = random.Random(11).getrandbits(32)
    code = assemble(f"PUSH4 {hex(first)}\nPOP")
    probe = craft_probe(decode_bytecode(code), 11)
    assert probe.selector != first and first in probe.avoided


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=12, unique=True), st.integers(0, 10**6))
def test_probe_never_enters_a_dispatched_function(selectors, seed):
    code = samples.slot_proxy(3, tuple(selectors))
    probe = craft_probe(decode_bytecode(code), seed)
    assert probe.selector not in selectors
    assert set(selectors) <= push4_operands(decode_bytecode(code))
    trace = execute(code, probe.data, state=world_for(3, code))
    eqs = [e for e in trace.events if e.opcode == 0x14]
    assert len(eqs) == len(selectors)
    assert all(e.stack[-1] == 0 for e in eqs)


# -- the six fixture shapes ----------------------------------------------------

def test_minimal_proxy():
    code = samples.minimal_proxy(LOGIC)
    report = detect_proxy(code)
    assert report.is_proxy and report.minimal_proxy
    assert report.pointer == ImplementationPointer("Hardcoded", address=LOGIC)
    assert report.exact_forward and report.forwarded_input == report.probe.data
    assert is_minimal_proxy(code)


def test_minimal_proxy_template_bytes():
    code = samples.minimal_proxy(0x1234)
    assert code.hex() == ("363d3d373d3d3d363d73" + "00" * 18 + "1234"
                          + "5af43d82803e903d91602b57fd5bf3")


def test_hardcoded_non_template_is_not_minimal():
    code = samples.minimal_proxy(LOGIC) + b"\x00"
    report = detect_proxy(code)
    assert report.is_proxy and report.pointer.kind == "Hardcoded" and not report.minimal_proxy


def test_slot_proxy_listing_layout():
    code = samples.listing_proxy(logic_slot=1)
    report = detect_proxy(code, world_for(1, code))
    assert report.is_proxy and not report.minimal_proxy
    assert report.pointer == ImplementationPointer("StorageSlot", 1, LOGIC)
    assert report.forwarded_input == report.probe.data


def test_storage_slot_two():
    code = samples.slot_proxy(2)
    report = detect_proxy(code, world_for(2, code))
    assert report.pointer == ImplementationPointer("StorageSlot", 2, LOGIC)


@pytest.mark.parametrize("factory,kind,slot", [
    (samples.eip1967_proxy, "Eip1967", EIP1967),
    (samples.eip1822_proxy, "Eip1822", PROXIABLE),
])
def test_standard_slots(factory, kind, slot):
    code = factory()
    report = detect_proxy(code, world_for(slot, code))
    assert report.is_proxy
    assert report.pointer == ImplementationPointer(kind, slot, LOGIC)


def test_library_call_shape_is_not_proxy():
    code = samples.library_caller(LOGIC)
    assert contains_delegatecall(code)
    report = detect_proxy(code)
    assert report.emulated and not report.is_proxy and report.failure is None


def test_no_delegatecall_skips_emulation():
    report = detect_proxy(samples.plain_contract())
    assert not report.is_proxy and not report.emulated and report.probe is None


def test_listing_dispatched_delegatecall_does_not_count():
    # only the fallback path forwards; the USDT call is behind the selector
    code = samples.listing_proxy()
    report = detect_proxy(code, World())
    assert report.is_proxy and report.pointer.address == 0


def test_address_lookup_through_provider():
    code = samples.slot_proxy(4)
    world = world_for(4, code)
    world.code[0xAB] = code
    world.storage[(0xAB, 4)] = 0x77
    report = detect_proxy(0xAB, world)
    assert report.address == 0xAB
    assert report.pointer == ImplementationPointer("StorageSlot", 4, 0x77)


def test_report_json_schema():
    report = detect_proxy(samples.minimal_proxy(LOGIC), seed=5)
    doc = report.to_json()
    assert list(doc) == ["is_proxy", "minimal_proxy", "pointer", "exact_forward", "confidence", "probe"]
    assert doc["pointer"] == {"kind": "Hardcoded", "address": "0x" + "5a" * 20}
    assert doc["probe"]["seed"] == 5 and doc["probe"]["selector"].startswith("0x")


# -- forwarding rule -------------------------------------------------------------

def _appending_proxy(extra: bytes) -> bytes:
    """Forwards calldata followed by ``extra`` to a hardcoded target."""
    return assemble(f"""
        CALLDATASIZE
        PUSH0
        PUSH0
        CALLDATACOPY
        PUSH{len(extra)} 0x{extra.hex()}
        PUSH1 {8 * (32 - len(extra))}
        SHL
        CALLDATASIZE
        MSTORE
        PUSH0
        PUSH0
        PUSH1 {len(extra)}
        CALLDATASIZE
        ADD
        PUSH0
        PUSH20 {hex(LOGIC)}
        GAS
        DELEGATECALL
        STOP
    """)


def test_prefix_match_accepts_appended_context():
    code = _appending_proxy(b"\xaa\xbb")
    report = detect_proxy(code)
    assert report.is_proxy and not report.exact_forward
    assert report.forwarded_input == report.probe.data + b"\xaa\xbb"


def test_selector_only_forward_counts():
    code = assemble(f"""
        PUSH1 4
        PUSH0
        PUSH0
        CALLDATACOPY
        PUSH0
        PUSH0
        PUSH1 4
        PUSH0
        PUSH20 {hex(LOGIC)}
        GAS
        DELEGATECALL
        STOP
    """)
    report = detect_proxy(code)
    assert report.is_proxy and not report.exact_forward and len(report.forwarded_input) == 4


def test_nested_delegatecall_does_not_count():
    # outer CALLs a real proxy; the forwarding happens one frame down
    inner = samples.minimal_proxy(LOGIC)
    outer = assemble(f"""
        CALLDATASIZE
        PUSH0
        PUSH0
        CALLDATACOPY
        PUSH0
        PUSH0
        CALLDATASIZE
        PUSH0
        PUSH0
        PUSH20 {hex(0xEE)}
        GAS
        CALL
        PUSH0
        PUSH0
        PUSH0
        PUSH0
        PUSH20 {hex(0xEF)}
        GAS
        DELEGATECALL
        STOP
    """)
    report = detect_proxy(outer, World(code={0xEE: inner}))
    assert not report.is_proxy


def test_two_forwards_report_first_and_list_rest():
    body = "\n".join(f"""
        CALLDATASIZE
        PUSH0
        PUSH0
        CALLDATACOPY
        PUSH0
        PUSH0
        CALLDATASIZE
        PUSH0
        PUSH20 {hex(target)}
        GAS
        DELEGATECALL
        POP""" for target in (0x1111, 0x2222))
    report = detect_proxy(assemble(body + "\nSTOP"))
    assert report.is_proxy and report.pointer.address == 0x1111
    assert [a for a, _ in report.extra_forwards] == [0x2222]
    assert report.to_json()["extra_forwards"] == ["0x" + "00" * 18 + "2222"]


def test_classify_pointer_defaults_to_first_forward():
    code = samples.eip1822_proxy()
    probe = craft_probe(decode_bytecode(code), 0)
    trace = execute(code, probe.data, state=world_for(PROXIABLE, code))
    (call,) = forwarding_calls(trace, probe)
    assert classify_pointer(trace, code) == classify_pointer(trace, code, call)


def test_unresolved_pointer():
    # target computed arithmetically, never stored, never embedded
    code = assemble("""
        CALLDATASIZE
        PUSH0
        PUSH0
        CALLDATACOPY
        PUSH0
        PUSH0
        CALLDATASIZE
        PUSH0
        PUSH1 0x21
        PUSH1 0x21
        MUL
        GAS
        DELEGATECALL
        STOP
    """)
    report = detect_proxy(code)
    assert report.is_proxy
    assert report.pointer == ImplementationPointer("Unresolved", address=0x21 * 0x21)


def test_logic_side_sload_does_not_steal_classification():
    # logic reads slot 9 (same value) after the proxy loaded slot 1
    logic = assemble("PUSH1 9\nSLOAD\nPOP\nSTOP")
    code = samples.slot_proxy(1)
    world = World(code={LOGIC: logic},
                  storage={(DEFAULT_ADDRESS, 1): LOGIC, (DEFAULT_ADDRESS, 9): LOGIC})
    report = detect_proxy(code, world)
    assert report.pointer == ImplementationPointer("StorageSlot", 1, LOGIC)


def test_high_bits_in_slot_value_are_ignored():
    code = samples.slot_proxy(6)
    report = detect_proxy(code, world_for(6, code, (0xFF << 200) | LOGIC))
    assert report.pointer == ImplementationPointer("StorageSlot", 6, LOGIC)


# -- failures and confidence --------------------------------------------------------

def test_halt_before_forward_is_recorded():
    code = assemble("loop:\nJUMPDEST\nPUSH2 :loop\nJUMP\nDELEGATECALL")
    report = detect_proxy(code, limits=Limits(max_steps=500))
    assert not report.is_proxy
    assert report.failure == "step-limit" and report.confidence == "degraded"


def test_halt_after_forward_degrades_confidence():
    code = samples.minimal_proxy(LOGIC)[:-1] + b"\xfe"  # RETURN replaced by INVALID
    report = detect_proxy(code)
    assert report.is_proxy and report.confidence == "degraded"


def test_missing_state_is_oracle_missing():
    class Strict(World):
        def get_storage_at(self, address, slot, block):
            raise StateUnavailable(f"slot {slot}")

    report = detect_proxy(samples.slot_proxy(1), Strict())
    assert not report.is_proxy and report.failure == "oracle-missing"


def test_missing_code_is_oracle_missing():
    class NoCode(World):
        def get_code(self, address, block):
            raise StateUnavailable("unknown account")

    report = detect_proxy(0x99, NoCode())
    assert not report.is_proxy and report.failure == "oracle-missing"


def test_block_pins_context_number():
    code = assemble("""
        CALLDATASIZE
        PUSH0
        PUSH0
        CALLDATACOPY
        PUSH0
        PUSH0
        CALLDATASIZE
        PUSH0
        NUMBER
        GAS
        DELEGATECALL
        STOP
    """)
    report = detect_proxy(code, block=4242)
    assert report.pointer.address == 4242


def test_votes_majority():
    code = samples.slot_proxy(2)
    single = detect_proxy(code, world_for(2, code), seed=1)
    voted = detect_proxy(code, world_for(2, code), seed=1, votes=5)
    assert voted.is_proxy == single.is_proxy and voted.pointer == single.pointer


# -- properties ------------------------------------------------------------------------

SHAPES = [
    ("minimal", lambda: samples.minimal_proxy(LOGIC), None, "Hardcoded"),
    ("slot", lambda: samples.slot_proxy(2, (0x11111111,)), 2, "StorageSlot"),
    ("listing", lambda: samples.listing_proxy(1), 1, "StorageSlot"),
    ("1967", lambda: samples.eip1967_proxy((0x22222222, 0x33333333)), EIP1967, "Eip1967"),
    ("1822", samples.eip1822_proxy, PROXIABLE, "Eip1822"),
]


@pytest.mark.parametrize("name,factory,slot,kind", SHAPES, ids=[s[0] for s in SHAPES])
def test_seed_independence(name, factory, slot, kind):
    code = factory()
    world = world_for(slot, code) if slot is not None else World()
    kinds = set()
    for seed in range(10):
        report = detect_proxy(code, world, seed=seed)
        assert report.is_proxy
        kinds.add(report.pointer.kind)
    assert kinds == {kind}


@pytest.mark.parametrize("name,factory,slot,kind", SHAPES, ids=[s[0] for s in SHAPES])
def test_calldatacopy_forwarders_forward_exactly(name, factory, slot, kind):
    code = factory()
    world = world_for(slot, code) if slot is not None else World()
    for seed in range(5):
        report = detect_proxy(code, world, seed=seed)
        assert report.exact_forward and report.forwarded_input == report.probe.data


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=120))
def test_step1_step2_consistency(code):
    report = detect_proxy(code, limits=Limits(max_steps=2000))
    if report.is_proxy:
        assert contains_delegatecall(code)
        assert report.forwarded_input[:4] == report.probe.data[:4]
    if report.minimal_proxy:
        assert report.pointer.kind == "Hardcoded"


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 2**160 - 1))
def test_hardcoded_address_occurs_in_code(addr):
    code = samples.minimal_proxy(addr)
    report = detect_proxy(code)
    assert report.pointer.kind == "Hardcoded"
    assert report.pointer.address.to_bytes(20, "big") in code
