"""Normal-side test client generation.

Emits one self-contained C file per TA that opens a session, runs each test
case through TEEC_InvokeCommand and prints a `RESULT <id> <code> <output>`
line the harness can parse back.
"""

import logging
import uuid

from app.models.schemas import ClientSpec, ParamSetup, ParamType, TestCase
from app.services.harness import UnsupportedParamType
from app.utils.constants import (
    DEFAULT_MEMREF_LEN,
    DEFAULT_OUTPUT_LEN,
    PARAM_SLOTS,
    TEEC_PARAM_TYPES,
)


logger = logging.getLogger(__name__)

CLIENT_HEADERS = (
    "err.h",
    "stdint.h",
    "stdio.h",
    "stdlib.h",
    "string.h",
)

_PRELUDE = """\
static void print_result(const char *id, TEEC_Result res, const uint8_t *out, size_t len)
{
\tsize_t i;

\tprintf("RESULT %s 0x%08x ", id, (unsigned int)res);
\tif (!out || !len) {
\t\tprintf("-\\n");
\t\treturn;
\t}
\tfor (i = 0; i < len; i++)
\t\tprintf("%02x", out[i]);
\tprintf("\\n");
}

static size_t arg_or(const char *arg, size_t fallback)
{
\treturn arg ? (size_t)strtoul(arg, NULL, 0) : fallback;
}
"""


def client_file_name(ta_uuid: str) -> str:
    return f"client_{ta_uuid}.c"


def uuid_initializer(value: str) -> str:
    """TEEC_UUID brace initializer for a canonical UUID string."""
    u = uuid.UUID(value)
    node = f"{u.clock_seq_hi_variant:02x}{u.clock_seq_low:02x}{u.node:012x}"
    seq = ", ".join(f"0x{node[i:i + 2]}" for i in range(0, len(node), 2))
    return f"{{ 0x{u.time_low:08x}, 0x{u.time_mid:04x}, 0x{u.time_hi_version:04x}, {{ {seq} }} }}"


def _slot_kinds(spec: ClientSpec, case: TestCase) -> list[ParamType]:
    command = spec.command(case.command_id)
    kinds: list[ParamType] = list(command.param_types) if command else ["none"] * PARAM_SLOTS
    for setup in case.params:
        if setup.kind == "none":
            raise UnsupportedParamType(setup.slot, setup.kind)
        kinds[setup.slot] = setup.kind
    if case.tamper is not None and not kinds[case.tamper.slot].startswith("memref"):
        raise UnsupportedParamType(case.tamper.slot, kinds[case.tamper.slot])
    for slot, kind in enumerate(kinds):
        if kind not in TEEC_PARAM_TYPES:
            raise UnsupportedParamType(slot, kind)
    return kinds


def _command_literal(spec: ClientSpec, case: TestCase) -> str:
    command = spec.command(case.command_id)
    if command is not None and isinstance(command.command_id, int):
        return str(command.command_id)
    # unresolved symbolic id: compile against the TA's header
    return str(command.symbol if command and command.symbol else case.command_id)


def _expected_label(case: TestCase) -> str:
    if isinstance(case.expected, str):
        return case.expected
    return f"ciphertext of {case.expected.source}"


def _output_slot(case: TestCase, kinds: list[ParamType]) -> int | None:
    if case.output_slot is not None:
        return case.output_slot
    return next((slot for slot, kind in enumerate(kinds) if kind == "memref-out"), None)


def _case_function(spec: ClientSpec, case: TestCase) -> str:
    kinds = _slot_kinds(spec, case)
    setups: dict[int, ParamSetup] = {p.slot: p for p in case.params}
    driven = case.params[0].slot if case.params else None

    decls: list[str] = ["\tTEEC_Operation op;", "\tuint32_t origin;", "\tTEEC_Result res;"]
    body: list[str] = []
    frees: list[str] = []

    for slot, kind in enumerate(kinds):
        setup = setups.get(slot)
        if kind.startswith("memref"):
            fallback = DEFAULT_OUTPUT_LEN if kind == "memref-out" else DEFAULT_MEMREF_LEN
            length = setup.length if setup and setup.length is not None else fallback
            if setup and setup.symbolic is not None:
                length = 0
            size = f"arg_or(arg, {length})" if slot == driven else str(length)
            comment = f" /* {setup.symbolic} */" if setup and setup.symbolic is not None else ""
            decls.append(f"\tsize_t len{slot} = {size};{comment}")
            decls.append(f"\tuint8_t *buf{slot} = malloc(len{slot} ? len{slot} : 1);")
            body.append(f"\tif (!buf{slot})")
            body.append('\t\terrx(1, "out of memory");')
            fill = setup.fill if setup else 0
            body.append(f"\tmemset(buf{slot}, 0x{fill:02x}, len{slot});")
            frees.append(f"\tfree(buf{slot});")
        elif kind.startswith("value"):
            value = (setup.value or 0) if setup else 0
            raw = f"0x{value & 0xFFFFFFFF:x}"
            fallback = f"arg_or(arg, {raw})" if slot == driven else raw
            comment = f" /* {setup.symbolic} */" if setup and setup.symbolic is not None else ""
            decls.append(f"\tuint32_t val{slot} = (uint32_t){fallback};{comment}")

    if driven is None:
        body.insert(0, "\t(void)arg;")
    body.append("\tmemset(&op, 0, sizeof(op));")
    types = ", ".join(TEEC_PARAM_TYPES[k] for k in kinds)
    body.append(f"\top.paramTypes = TEEC_PARAM_TYPES({types});")
    for slot, kind in enumerate(kinds):
        if kind.startswith("memref"):
            body.append(f"\top.params[{slot}].tmpref.buffer = buf{slot};")
            body.append(f"\top.params[{slot}].tmpref.size = len{slot};")
        elif kind.startswith("value"):
            body.append(f"\top.params[{slot}].value.a = val{slot};")
    if case.tamper is not None:
        t = case.tamper
        body.append("\t/* normal-side tamper of the shared region */")
        body.append(f"\tif (len{t.slot} > {t.offset})")
        body.append(f"\t\tbuf{t.slot}[{t.offset}] ^= 0x{t.xor_mask:02x};")
    body.append(f"\tres = TEEC_InvokeCommand(sess, {_command_literal(spec, case)}, &op, &origin);")

    out = _output_slot(case, kinds)
    if out is not None and kinds[out].startswith("memref"):
        body.append(f'\tprint_result("{case.id}", res, buf{out}, op.params[{out}].tmpref.size);')
    else:
        body.append(f'\tprint_result("{case.id}", res, NULL, 0);')

    header = f"/* {case.id}: expect {_expected_label(case)}"
    header += f"; {case.note} */" if case.note else " */"
    lines = [
        header,
        f"static void run_{case.id}(TEEC_Session *sess, const char *arg)",
        "{",
        *decls,
        "",
        *body,
        *frees,
        "}",
    ]
    return "\n".join(lines) + "\n"


def generate_client(spec: ClientSpec, cases: list[TestCase]) -> str:
    """C source of the test client for `spec`; zero cases only opens and closes a session."""
    parts = [f"/* Test client for TA {spec.uuid}. Generated; do not edit. */\n"]
    parts.append("".join(f"#include <{h}>\n" for h in CLIENT_HEADERS))
    parts.append("\n#include <tee_client_api.h>\n\n")
    parts.append(f"static const TEEC_UUID ta_uuid = {uuid_initializer(spec.uuid)};\n\n")
    parts.append(_PRELUDE)
    for case in cases:
        parts.append("\n")
        parts.append(_case_function(spec, case))

    main = [
        "",
        "int main(int argc, char *argv[])",
        "{",
        "\tTEEC_Context ctx;",
        "\tTEEC_Session sess;",
        "\tuint32_t origin;",
        "\tTEEC_Result res;",
        "\tconst char *only = argc > 1 ? argv[1] : NULL;",
        "\tconst char *arg = argc > 2 ? argv[2] : NULL;",
        "",
        "\tres = TEEC_InitializeContext(NULL, &ctx);",
        "\tif (res != TEEC_SUCCESS)",
        '\t\terrx(1, "TEEC_InitializeContext failed with code 0x%x", res);',
        "\tres = TEEC_OpenSession(&ctx, &sess, &ta_uuid, TEEC_LOGIN_PUBLIC, NULL, NULL, &origin);",
        "\tif (res != TEEC_SUCCESS)",
        '\t\terrx(1, "TEEC_OpenSession failed with code 0x%x origin 0x%x", res, origin);',
        "",
    ]
    if not cases:
        main += ["\t(void)only;", "\t(void)arg;"]
    for case in cases:
        main.append(f'\tif (!only || !strcmp(only, "{case.id}"))')
        main.append(f"\t\trun_{case.id}(&sess, arg);")
    main += [
        "",
        "\tTEEC_CloseSession(&sess);",
        "\tTEEC_FinalizeContext(&ctx);",
        "\treturn 0;",
        "}",
    ]
    parts.append("\n".join(main) + "\n")
    logger.info(f"Generated client for {spec.uuid} with {len(cases)} case(s)")
    return "".join(parts)
