import json
import subprocess
import sys

import pytest

from proxyscope import samples
from proxyscope.cli import main

MINIMAL, SLOTTED, PLAIN, LOGIC1, LOGIC2, FLAGS = 0x1000, 0x1001, 0x1002, 0x2000, 0x2001, 0x2002


def addr(a: int) -> str:
    return f"0x{a:040x}"


def world(strict: bool = False) -> dict:
    doc = samples.fixture_document({
        MINIMAL: {"code": samples.minimal_proxy(LOGIC1)},
        SLOTTED: {"code": samples.listing_proxy(1), "deployed": 10,
                  "storage": {1: [(0, 49, LOGIC1), (50, None, LOGIC2)], 0: 0xABC}},
        PLAIN: {"code": samples.plain_contract()},
        LOGIC1: {"code": samples.logic_contract()},
        LOGIC2: {"code": samples.packed_flags_logic()},
        FLAGS: {"code": samples.packed_flags_logic()},
    }, height=100)
    if strict:
        doc["strict"] = True
    return doc


@pytest.fixture
def fixture(tmp_path):
    path = tmp_path / "world.json"
    path.write_text(json.dumps(world()))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def lines(out):
    return [json.loads(line) for line in out.splitlines()]


# -- disasm / selectors ------------------------------------------------------------

def test_disasm(capsys):
    code, out, _ = run(capsys, "disasm", "0x6080604052")
    assert code == 0
    listing = out.splitlines()
    assert len(listing) == 3 and listing[0].endswith("PUSH1 0x80") and listing[-1].endswith("MSTORE")


def test_disasm_empty(capsys):
    assert run(capsys, "disasm", "0x") == (0, "", "")


def test_disasm_bad_hex(capsys):
    code, out, err = run(capsys, "disasm", "zz")
    assert code == 2 and out == "" and "proxyscope: error:" in err


def test_disasm_address_via_fixture(capsys, fixture):
    code, out, _ = run(capsys, "--fixture", fixture, "disasm", addr(MINIMAL))
    assert code == 0 and "DELEGATECALL" in out


def test_selectors(capsys):
    code, out, _ = run(capsys, "selectors", "0x" + samples.listing_proxy().hex())
    assert code == 0
    assert json.loads(out) == {"selectors": ["0xdf4a3106"], "possibly_incomplete": False}
    code, out, _ = run(capsys, "selectors", "--format", "text", "0x" + samples.listing_proxy().hex())
    assert out.strip() == "0xdf4a3106"


# -- is-proxy -------------------------------------------------------------------------

def test_is_proxy_minimal(capsys, fixture):
    code, out, _ = run(capsys, "--fixture", fixture, "is-proxy", addr(MINIMAL))
    doc = json.loads(out)
    assert code == 0
    assert doc["is_proxy"] and doc["minimal_proxy"]
    assert doc["pointer"] == {"kind": "Hardcoded", "address": addr(LOGIC1)}
    assert doc["address"] == addr(MINIMAL)


def test_is_proxy_slot(capsys, fixture):
    code, out, _ = run(capsys, "is-proxy", addr(SLOTTED), "--fixture", fixture)
    doc = json.loads(out)
    assert doc["pointer"]["kind"] == "StorageSlot" and doc["pointer"]["address"] == addr(LOGIC2)


def test_is_proxy_non_proxy(capsys, fixture):
    code, out, _ = run(capsys, "--fixture", fixture, "--format", "text", "is-proxy", addr(PLAIN))
    assert code == 0 and out.strip() == f"{addr(PLAIN)} not-a-proxy"


def test_is_proxy_raw_bytecode(capsys):
    code, out, _ = run(capsys, "is-proxy", "0x" + samples.minimal_proxy(0xBEEF).hex())
    assert json.loads(out)["minimal_proxy"] is True


def test_is_proxy_missing_slot_is_recorded(capsys, tmp_path):
    doc = world(strict=True)
    del doc["accounts"][addr(SLOTTED)]["storage"]
    path = tmp_path / "strict.json"
    path.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "--fixture", str(path), "is-proxy", addr(SLOTTED))
    rec = json.loads(out)
    assert code == 0
    assert rec["failure"] == "oracle-missing" and rec["confidence"] == "degraded"


def test_is_proxy_block_pin(capsys, fixture):
    _, out, _ = run(capsys, "--fixture", fixture, "--block", "20", "is-proxy", addr(SLOTTED))
    assert json.loads(out)["pointer"]["address"] == addr(LOGIC1)


def test_seed_and_votes_flags(capsys, fixture):
    _, out, _ = run(capsys, "--fixture", fixture, "--seed", "9", "--votes", "3", "is-proxy", addr(MINIMAL))
    doc = json.loads(out)
    assert doc["probe"]["seed"] in (9, 10, 11) and doc["is_proxy"]


def test_bad_rpc_url_exits_nonzero(capsys):
    code, _, err = run(capsys, "--rpc-url", "nonsense", "is-proxy", addr(MINIMAL))
    assert code != 0 and err


# -- logic-history ------------------------------------------------------------------------

def test_logic_history_slot(capsys, fixture):
    code, out, _ = run(capsys, "--fixture", fixture, "logic-history", addr(SLOTTED))
    doc = json.loads(out)
    assert code == 0
    assert doc["logic"] == [addr(LOGIC1), addr(LOGIC2)]
    assert 0 < doc["query_count"] <= 2 * 2 * 7 + 2


def test_logic_history_from_block(capsys, fixture):
    _, out, _ = run(capsys, "--fixture", fixture, "logic-history", "--from-block", "60", addr(SLOTTED))
    assert json.loads(out)["logic"] == [addr(LOGIC2)]


def test_logic_history_hardcoded(capsys, fixture):
    _, out, _ = run(capsys, "--fixture", fixture, "--format", "text", "logic-history", addr(MINIMAL))
    assert out.splitlines() == [addr(LOGIC1), "# query_count=0"]


def test_logic_history_not_a_proxy(capsys, fixture):
    code, _, err = run(capsys, "--fixture", fixture, "logic-history", addr(PLAIN))
    assert code == 1 and "not a proxy" in err


def test_logic_history_needs_state(capsys):
    assert run(capsys, "logic-history", addr(PLAIN))[0] == 2


# -- collide ------------------------------------------------------------------------------

def test_collide_function(capsys, fixture):
    code, out, _ = run(capsys, "--fixture", fixture, "collide", addr(SLOTTED), addr(LOGIC1))
    doc = json.loads(out)
    assert code == 0 and doc["function"]["colliding"] == ["0xdf4a3106"]


def test_collide_storage(capsys, fixture):
    _, out, _ = run(capsys, "--fixture", fixture, "collide", addr(SLOTTED), addr(FLAGS))
    collisions = json.loads(out)["storage"]["collisions"]
    assert len(collisions) == 2 and {c["slot"] for c in collisions} == {"0x" + "00" * 32}


def test_collide_identical(capsys, fixture):
    _, out, _ = run(capsys, "--fixture", fixture, "collide", addr(FLAGS), addr(LOGIC2))
    assert json.loads(out)["storage"]["collisions"] == []


def test_collide_empty_side(capsys, fixture):
    code, _, err = run(capsys, "--fixture", fixture, "collide", addr(SLOTTED), addr(0x9999))
    assert code == 1 and "empty" in err


def test_collide_text(capsys):
    a = "0x" + samples.listing_proxy().hex()
    b = "0x" + samples.packed_flags_logic().hex()
    _, out, _ = run(capsys, "--format", "text", "collide", a, b)
    assert "storage slot" in out and "function collisions: none" in out


# -- scan -------------------------------------------------------------------------------------

def write_list(tmp_path, entries, name="addrs.txt"):
    path = tmp_path / name
    path.write_text("\n".join(entries) + "\n", encoding="utf-8")
    return str(path)


def scan(capsys, fixture, path, *extra):
    code, out, err = run(capsys, "--fixture", fixture, "--omit-timing", *extra, "scan", path)
    docs = lines(out)
    return code, docs[:-1], docs[-1]["summary"]


def test_scan_three_shapes(capsys, fixture, tmp_path):
    path = write_list(tmp_path, ["# corpus", addr(MINIMAL), "", addr(SLOTTED), addr(PLAIN)])
    code, records, summary = scan(capsys, fixture, path)
    assert code == 0 and len(records) == 3
    assert summary["records"] == 3 and summary["proxies"] == 2 and summary["failures"] == 0
    assert [r["address"] for r in records] == [addr(MINIMAL), addr(SLOTTED), addr(PLAIN)]
    slot = records[1]
    assert slot["logic"] == [addr(LOGIC1), addr(LOGIC2)]
    assert len(slot["collisions"]) == 2
    assert slot["collisions"][0]["function"]["colliding"] == ["0xdf4a3106"]
    assert slot["collisions"][1]["storage"]["collisions"]
    assert records[2]["proxy"]["is_proxy"] is False and records[2]["logic"] == []
    assert all("timing_us" not in r for r in records) and "elapsed_s" not in summary


def test_scan_duplicates_hit_cache(capsys, fixture, tmp_path):
    path = write_list(tmp_path, [addr(MINIMAL)] * 4)
    _, records, summary = scan(capsys, fixture, path)
    assert summary["emulations"] == 1 and summary["cache_hits"] == 3
    assert [r["cache_hit"] for r in records] == [False, True, True, True]


def test_scan_empty_file(capsys, fixture, tmp_path):
    path = write_list(tmp_path, [])
    code, records, summary = scan(capsys, fixture, path)
    assert code == 0 and records == [] and summary["records"] == 0


def test_scan_bad_line_is_isolated(capsys, fixture, tmp_path):
    path = write_list(tmp_path, [addr(MINIMAL), "not-an-address", addr(PLAIN)])
    code, records, summary = scan(capsys, fixture, path)
    assert code == 0 and len(records) == 3
    assert records[1]["failure"].startswith("bad-address")
    assert summary["failures"] == 1


def test_scan_is_deterministic(capsys, fixture, tmp_path):
    path = write_list(tmp_path, [addr(a) for a in (MINIMAL, SLOTTED, PLAIN, SLOTTED)])
    first = run(capsys, "--fixture", fixture, "--omit-timing", "--seed", "4", "scan", path)
    second = run(capsys, "--fixture", fixture, "--omit-timing", "--seed", "4", "scan", path)
    assert first == second


def test_parallel_matches_sequential(capsys, fixture, tmp_path):
    path = write_list(tmp_path, [addr(a) for a in (MINIMAL, SLOTTED, PLAIN, FLAGS) * 5])
    _, seq, _ = scan(capsys, fixture, path)
    _, par, summary = scan(capsys, fixture, path, "--workers", "4")
    strip = lambda rs: sorted(json.dumps({k: v for k, v in r.items() if k != "cache_hit"}, sort_keys=True)
                              for r in rs)
    assert strip(seq) == strip(par)
    assert [r["address"] for r in seq] == [r["address"] for r in par]


def test_scan_text_format(capsys, fixture, tmp_path):
    path = write_list(tmp_path, [addr(MINIMAL), addr(PLAIN)])
    _, out, _ = run(capsys, "--fixture", fixture, "--format", "text", "scan", path)
    rows = out.splitlines()
    assert rows[0].startswith(addr(MINIMAL) + " proxy Hardcoded")
    assert rows[1] == f"{addr(PLAIN)} not-a-proxy"
    assert rows[2].startswith("# records=2 proxies=1")


def test_scan_persistent_cache(capsys, fixture, tmp_path):
    cache = tmp_path / "cache.json"
    path = write_list(tmp_path, [addr(MINIMAL), addr(SLOTTED)])
    _, first, s1 = scan(capsys, fixture, path, "--cache", str(cache))
    doc = json.loads(cache.read_text())
    assert doc["version"] == 1 and len(doc["entries"]) >= 2
    _, second, s2 = scan(capsys, fixture, path, "--cache", str(cache))
    assert s1["emulations"] == 2 and s2["emulations"] == 0
    assert all(r["cache_hit"] for r in second)
    assert [r["proxy"] for r in first] == [r["proxy"] for r in second]


def test_scan_needs_state(capsys, tmp_path):
    assert run(capsys, "scan", write_list(tmp_path, []))[0] == 2


def test_scan_missing_list(capsys, fixture, tmp_path):
    assert run(capsys, "--fixture", fixture, "scan", str(tmp_path / "nope.txt"))[0] == 1


# -- usage errors ------------------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["--step-limit", "0", "disasm", "0x00"],
    ["--block", "soon", "disasm", "0x00"],
    ["--workers", "0", "--fixture", "x", "scan", "-"],
])
def test_usage_errors(capsys, argv, tmp_path):
    if "--fixture" in argv:
        fx = tmp_path / "fx.json"
        fx.write_text(json.dumps(world()))
        argv = [str(fx) if a == "x" else a for a in argv]
    assert run(capsys, *argv)[0] == 2


def test_malformed_fixture_is_domain_error(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code, _, err = run(capsys, "--fixture", str(bad), "disasm", "0x00")
    assert code == 1 and "bad.json:1:" in err


def test_module_entry_point(fixture, tmp_path):
    path = write_list(tmp_path, [addr(MINIMAL)])
    proc = subprocess.run([sys.executable, "-m", "proxyscope", "--fixture", fixture, "--omit-timing",
                           "scan", path], capture_output=True, text=True, check=True)
    out = [json.loads(line) for line in proc.stdout.splitlines()]
    assert out[0]["proxy"]["minimal_proxy"] and out[-1]["summary"]["proxies"] == 1
