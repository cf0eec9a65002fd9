"""Constants for the repair toolkit - issue classes, DSL arities, default function classification, lowering table, TEE codes."""

#=====================|
# Issue Classes       |
#=====================|

ISSUE_KINDS: tuple[str, ...] = (
    "UnencryptedOutput",
    "InputValidationWeakness",
    "SharedMemoryUse",
)

# Names used in prompts, summaries and metrics tables
ISSUE_DISPLAY_NAMES: dict[str, str] = {
    "UnencryptedOutput": "Unencrypted Data Output",
    "InputValidationWeakness": "Input Validation Weaknesses",
    "SharedMemoryUse": "Direct Usage of Shared Memory",
}

# (issue kind, trigger node kind) -> bundled rule name
RULE_HINTS: dict[tuple[str, str], str] = {
    ("UnencryptedOutput", "COPY"): "1.1",
    ("UnencryptedOutput", "SNPRINT"): "1.2",
    ("InputValidationWeakness", "COPY"): "2.1",
    ("InputValidationWeakness", "ARRAY"): "2.2",
    ("SharedMemoryUse", "SHALLOW"): "3.1",
    ("SharedMemoryUse", "MUTATE"): "3.2",
}


#=====================|
# DSL Grammar         |
#=====================|

CALL_KINDS: tuple[str, ...] = (
    "COPY", "SNPRINT", "MALLOC", "ENC", "MULMALLOC", "MULENC",
    "ARRAY", "SHALLOW", "READ", "WRITE", "HASH", "MUTATE",
)

# kind -> (min args, max args or None when variadic, result required)
CALL_ARITY: dict[str, tuple[int, int | None, bool]] = {
    "COPY": (3, 3, False),
    "SNPRINT": (3, None, False),
    "MALLOC": (1, 1, True),
    "ENC": (3, 3, False),
    "MULMALLOC": (1, None, True),
    "MULENC": (2, None, False),
    "ARRAY": (2, 2, True),
    "SHALLOW": (1, 1, True),
    "READ": (0, 0, True),
    "WRITE": (1, 1, False),
    "HASH": (3, 3, False),
    "MUTATE": (1, 1, True),
}

# Argument roles: "use" positions must reference something that already
# exists, "synth" positions may introduce a value the resolver fills in.
# Variadic kinds repeat their last role; MULENC's final argument is synth.
ARG_ROLES: dict[str, tuple[str, ...]] = {
    "COPY": ("use", "use", "synth"),
    "SNPRINT": ("use", "use", "use"),
    "MALLOC": ("synth",),
    "ENC": ("use", "synth", "synth"),
    "MULMALLOC": ("use",),
    "MULENC": ("use", "synth"),
    "ARRAY": ("use", "use"),
    "SHALLOW": ("use",),
    "READ": (),
    "WRITE": ("use",),
    "HASH": ("use", "synth", "synth"),
    "MUTATE": ("use",),
}

RELOPS: tuple[str, ...] = ("==", "!=", "<=", ">=", "<", ">")
PLACEHOLDER_PATTERN = r"\$([A-Za-z_]\w*)"
EQUAL_TERM = "equal"
ECODE_TOKEN = "ECODE"
DISCARD = "_"


#=====================|
# Function Classes    |
#=====================|

DEFAULT_COPY_FNS: list[str] = ["TEE_MemMove", "memcpy", "memmove", "strncpy"]
DEFAULT_SNPRINT_FNS: list[str] = ["snprintf"]
DEFAULT_ENC_FNS: list[str] = ["enc", "encrypt"]
DEFAULT_HASH_FNS: list[str] = ["hash"]
DEFAULT_READ_FNS: list[str] = ["read"]
DEFAULT_WRITE_FNS: list[str] = ["write"]
DEFAULT_MALLOC_FNS: list[str] = ["TEE_Malloc", "malloc"]
DEFAULT_COMPARE_FNS: list[str] = ["TEE_MemCompare", "memcmp"]

# Parameter expressions. Every memref buffer is treated as shared memory
# unless a profile narrows the pattern to specific slots.
DEFAULT_OUTPUT_PARAM_PATTERN = r"params\s*\[\s*\d+\s*\]\s*\.\s*memref\s*\.\s*buffer"
DEFAULT_INPUT_PARAM_PATTERN = (
    r"params\s*\[\s*\d+\s*\]\s*\.\s*(?:memref\s*\.\s*(?:buffer|size)|value\s*\.\s*[ab])"
)
DEFAULT_SHARED_MEM_PATTERN = r"params\s*\[\s*\d+\s*\]\s*\.\s*memref\s*\.\s*buffer"


#=====================|
# Lowering Table      |
#=====================|

DEFAULT_COPY_FN = "TEE_MemMove"
DEFAULT_ENC_FN = "enc"
DEFAULT_HASH_FN = "hash"
DEFAULT_READ_FN = "read"
DEFAULT_WRITE_FN = "write"
DEFAULT_EQUAL_FN = "TEE_MemCompare"
DEFAULT_ECODE = "TEE_ERROR_BAD_PARAMETERS"
HASH_BUFFER_LEN = 256

GUARD_BODY_INDENT = "    "


#=====================|
# C Source Model      |
#=====================|

C_KEYWORDS: frozenset[str] = frozenset({
    "auto", "break", "case", "char", "const", "continue", "default", "do",
    "double", "else", "enum", "extern", "float", "for", "goto", "if",
    "inline", "int", "long", "register", "return", "short", "signed",
    "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned",
    "void", "volatile", "while",
})

# Element sizes for length hints; unknown types leave the hint empty
C_TYPE_SIZES: dict[str, int] = {
    "char": 1, "unsigned char": 1, "signed char": 1, "uint8_t": 1, "int8_t": 1,
    "short": 2, "unsigned short": 2, "uint16_t": 2, "int16_t": 2,
    "int": 4, "unsigned int": 4, "unsigned": 4, "uint32_t": 4, "int32_t": 4,
    "float": 4, "TEE_Result": 4,
    "long": 8, "unsigned long": 8, "uint64_t": 8, "int64_t": 8,
    "double": 8, "size_t": 8,
}

DEFAULT_ENTRY_POINT = "TA_InvokeCommandEntryPoint"


#=====================|
# TEE Client / Oracle |
#=====================|

PARAM_SLOTS = 4

TEE_SUCCESS_CODE = 0x00000000
TEE_ERROR_BAD_PARAMETERS_CODE = 0xFFFF0006

EXPECTED_STATUS_CODES: dict[str, int] = {
    "Success": TEE_SUCCESS_CODE,
    "ErrorBadParameters": TEE_ERROR_BAD_PARAMETERS_CODE,
}

# TA-side TEE_PARAM_TYPES constants -> client spec slot kinds
TEE_PARAM_TYPE_KINDS: dict[str, str] = {
    "TEE_PARAM_TYPE_NONE": "none",
    "TEE_PARAM_TYPE_VALUE_INPUT": "value-in",
    "TEE_PARAM_TYPE_VALUE_OUTPUT": "value-out",
    "TEE_PARAM_TYPE_VALUE_INOUT": "value-out",
    "TEE_PARAM_TYPE_MEMREF_INPUT": "memref-in",
    "TEE_PARAM_TYPE_MEMREF_OUTPUT": "memref-out",
    "TEE_PARAM_TYPE_MEMREF_INOUT": "memref-out",
}

# Client spec slot kinds -> normal-side TEEC parameter types
TEEC_PARAM_TYPES: dict[str, str] = {
    "none": "TEEC_NONE",
    "value-in": "TEEC_VALUE_INPUT",
    "value-out": "TEEC_VALUE_OUTPUT",
    "memref-in": "TEEC_MEMREF_TEMP_INPUT",
    "memref-out": "TEEC_MEMREF_TEMP_OUTPUT",
}

DEFAULT_MEMREF_LEN = 64
DEFAULT_OUTPUT_LEN = 256
PAYLOAD_FILL_BYTE = 0x41
TAMPER_OFFSET = 0
TAMPER_XOR_MASK = 0xFF

DEFAULT_CIPHER_STUB = "xor"
DEFAULT_CIPHER_KEY = 1


#=====================|
# Repair Loop         |
#=====================|

DEFAULT_MAX_ITERS = 3
DEFAULT_MODEL_NAME = "gemini-2.5-flash"
