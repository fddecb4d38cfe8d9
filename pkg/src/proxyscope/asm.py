"""A minimal two-pass EVM assembler.

Source is whitespace/newline separated; ``;`` and ``//`` start comments.

    PUSH1 0x80          explicit-width push
    PUSH 0x1234         smallest push that fits (PUSH0 for zero)
    PUSH2 :fallback     push a label's offset
    fallback:           define a label (emits nothing; add JUMPDEST yourself)
    .org 0x7c 0xfe      pad with a byte up to an absolute offset
    .bytes 0xdeadbeef   raw bytes
"""

from __future__ import annotations

import re

from . import opcodes as op

__all__ = ["AssemblyError", "assemble"]


class AssemblyError(ValueError):
    pass


_COMMENT = re.compile(r"(;|//).*$")


def _tokens(source: str):
    for line in source.splitlines():
        line = _COMMENT.sub("", line).strip()
        if line:
            yield line.split()


def _int(text: str) -> int:
    return int(text, 16) if text.lower().startswith("0x") else int(text)


def _push_bytes(width: int, value: int) -> bytes:
    if value >= 1 << (8 * width):
        raise AssemblyError(f"value {value:#x} does not fit in PUSH{width}")
    return bytes([0x5F + width]) + value.to_bytes(width, "big")


def assemble(source: str) -> bytes:
    lines = list(_tokens(source))
    labels: dict[str, int] = {}
    # Label references always use the declared width, so pass 1 is exact.
    for pass_no in (1, 2):
        out = bytearray()
        for parts in lines:
            head = parts[0]
            if head.endswith(":") and len(parts) == 1:
                labels[head[:-1]] = len(out)
                continue
            if head == ".org":
                target = _int(parts[1])
                fill = _int(parts[2]) if len(parts) > 2 else 0
                if target < len(out):
                    raise AssemblyError(f".org {target:#x} is behind current offset {len(out):#x}")
                out += bytes([fill]) * (target - len(out))
                continue
            if head == ".bytes":
                out += bytes.fromhex(parts[1][2:] if parts[1].startswith("0x") else parts[1])
                continue
            name = head.upper()
            if name == "PUSH" or (name.startswith("PUSH") and name != "PUSH0"):
                if len(parts) != 2:
                    raise AssemblyError(f"{head} needs one operand")
                arg = parts[1]
                if arg.startswith(":"):
                    value = labels.get(arg[1:], 0) if pass_no == 1 else labels.get(arg[1:])
                    if value is None:
                        raise AssemblyError(f"undefined label {arg[1:]!r}")
                    width = 2 if name == "PUSH" else int(name[4:])
                else:
                    value = _int(arg)
                    if name == "PUSH":
                        if value == 0:
                            out.append(op.PUSH0)
                            continue
                        width = (value.bit_length() + 7) // 8
                    else:
                        width = int(name[4:])
                out += _push_bytes(width, value)
                continue
            if name not in op.MNEMONICS:
                raise AssemblyError(f"unknown mnemonic {head!r}")
            if len(parts) != 1:
                raise AssemblyError(f"{head} takes no operand")
            out.append(op.MNEMONICS[name])
    return bytes(out)
