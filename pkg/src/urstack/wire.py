"""Framing, recipes, value packing and the register file of the RTDE-style link.

Frame layout (all multi-byte values big-endian)::

    uint16 size | uint8 type | payload

where ``size`` counts the whole frame including its 3-byte header.
"""

from __future__ import annotations

import enum
import numbers
import re
import struct
import threading
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

PROTOCOL_VERSION = 2
MAX_PAYLOAD = 65532
HEADER = struct.Struct(">HB")
REGISTER_COUNT = 24


class ProtocolError(Exception):
    """Malformed frame or payload."""


class RecipeError(ProtocolError):
    """A recipe request named an unknown field or was otherwise invalid."""


class PacketType(enum.IntEnum):
    PROTOCOL_VERSION = 0x56
    SETUP_OUTPUTS = 0x4F
    SETUP_INPUTS = 0x49
    START = 0x53
    PAUSE = 0x50
    DATA_PACKAGE = 0x55


class FieldKind(enum.Enum):
    DOUBLE = ">d"
    INT32 = ">i"
    UINT32 = ">I"
    UINT64 = ">Q"
    BOOL = ">?"
    VECTOR6D = ">6d"

    @property
    def width(self) -> int:
        return struct.calcsize(self.value)


def encode_frame(ptype: PacketType, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload too large: {len(payload)} > {MAX_PAYLOAD}")
    return HEADER.pack(HEADER.size + len(payload), int(ptype)) + bytes(payload)


def decode_frames(buffer: bytes) -> tuple[list[tuple[PacketType, bytes]], bytes]:
    """Split ``buffer`` into complete frames plus the trailing partial remainder."""
    packets = []
    pos = 0
    view = memoryview(buffer)
    while len(buffer) - pos >= HEADER.size:
        size, code = HEADER.unpack_from(view, pos)
        if size < HEADER.size:
            raise ProtocolError(f"declared frame size {size} < {HEADER.size}")
        try:
            ptype = PacketType(code)
        except ValueError:
            raise ProtocolError(f"unknown packet type 0x{code:02x}") from None
        if len(buffer) - pos < size:
            break
        packets.append((ptype, bytes(view[pos + HEADER.size:pos + size])))
        pos += size
    return packets, bytes(view[pos:])


class FrameReader:
    """Incremental frame decoder for a byte stream."""

    def __init__(self) -> None:
        self._buffer = b""

    def feed(self, data: bytes) -> list[tuple[PacketType, bytes]]:
        packets, self._buffer = decode_frames(self._buffer + data)
        return packets

    @property
    def pending(self) -> int:
        return len(self._buffer)


# ---------------------------------------------------------------------------
# Recipes

@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: FieldKind


@dataclass(frozen=True)
class Recipe:
    id: int
    fields: tuple[FieldSpec, ...]
    frequency: float | None = None

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    @cached_property
    def layout(self) -> struct.Struct:
        """Whole-payload layout: the id byte followed by every field."""
        return struct.Struct(">B" + "".join(f.kind.value[1:] for f in self.fields))

    @cached_property
    def _kinds(self) -> tuple[FieldKind, ...]:
        return tuple(f.kind for f in self.fields)

    @property
    def width(self) -> int:
        return self.layout.size

    def index(self, name: str) -> int:
        return self.names.index(name)


_OUTPUT_FIXED = {
    "timestamp": FieldKind.DOUBLE,
    "actual_q": FieldKind.VECTOR6D,
    "actual_qd": FieldKind.VECTOR6D,
    "actual_TCP_pose": FieldKind.VECTOR6D,
    "actual_TCP_force": FieldKind.VECTOR6D,
    "actual_digital_input_bits": FieldKind.UINT64,
    "actual_digital_output_bits": FieldKind.UINT64,
}
_INPUT_FIXED = {
    "standard_digital_output_mask": FieldKind.UINT64,
    "standard_digital_output": FieldKind.UINT64,
}
_REGISTER_NAME = re.compile(r"^(input|output)_(int|double)_register_(\d+)$")


@lru_cache(maxsize=1024)
def parse_register_name(name: str) -> tuple[str, int] | None:
    """Map e.g. ``input_double_register_18`` to ``("input_float", 18)``."""
    m = _REGISTER_NAME.match(name)
    if not m:
        return None
    direction, kind, index = m.group(1), m.group(2), int(m.group(3))
    if index >= REGISTER_COUNT or str(index) != m.group(3):
        return None
    return f"{direction}_{'int' if kind == 'int' else 'float'}", index


def register_field_name(bank: str, index: int) -> str:
    direction, kind = bank.split("_")
    return f"{direction}_{'int' if kind == 'int' else 'double'}_register_{index}"


def output_field_kind(name: str) -> FieldKind:
    if name in _OUTPUT_FIXED:
        return _OUTPUT_FIXED[name]
    reg = parse_register_name(name)
    if reg and reg[0].startswith("output"):
        return FieldKind.INT32 if reg[0] == "output_int" else FieldKind.DOUBLE
    raise RecipeError(f"unknown output field: {name!r}")


def input_field_kind(name: str) -> FieldKind:
    if name in _INPUT_FIXED:
        return _INPUT_FIXED[name]
    reg = parse_register_name(name)
    if reg and reg[0].startswith("input"):
        return FieldKind.INT32 if reg[0] == "input_int" else FieldKind.DOUBLE
    raise RecipeError(f"unknown input field: {name!r}")


def _build(names: Sequence[str], kind_of, recipe_id: int, frequency: float | None) -> Recipe:
    if not names:
        raise RecipeError("empty recipe")
    if not 0 < recipe_id < 256:
        raise RecipeError(f"recipe id must be in 1..255, got {recipe_id}")
    if len(set(names)) != len(names):
        dup = next(n for n in names if list(names).count(n) > 1)
        raise RecipeError(f"duplicate field: {dup!r}")
    return Recipe(recipe_id, tuple(FieldSpec(n, kind_of(n)) for n in names), frequency)


def build_output_recipe(names: Sequence[str], frequency: float, recipe_id: int = 1) -> Recipe:
    if not 1 <= frequency <= 500:
        raise RecipeError(f"frequency out of range [1, 500]: {frequency}")
    return _build(names, output_field_kind, recipe_id, float(frequency))


def build_input_recipe(names: Sequence[str], recipe_id: int = 1) -> Recipe:
    return _build(names, input_field_kind, recipe_id, None)


class RecipeBook:
    """Per-connection recipe registry; ids are handed out sequentially from 1."""

    def __init__(self) -> None:
        self._next_id = 1
        self.recipes: dict[int, Recipe] = {}

    def _take_id(self) -> int:
        if self._next_id > 255:
            raise RecipeError("recipe ids exhausted")
        return self._next_id

    def output(self, names: Sequence[str], frequency: float) -> Recipe:
        recipe = build_output_recipe(names, frequency, self._take_id())
        self._next_id += 1
        self.recipes[recipe.id] = recipe
        return recipe

    def input(self, names: Sequence[str]) -> Recipe:
        recipe = build_input_recipe(names, self._take_id())
        self._next_id += 1
        self.recipes[recipe.id] = recipe
        return recipe


# ---------------------------------------------------------------------------
# Value packing

def _check_value(kind: FieldKind, value, name: str):
    if kind is FieldKind.VECTOR6D:
        values = tuple(float(v) for v in value)
        if len(values) != 6:
            raise ProtocolError(f"field {name!r} expects 6 values, got {len(values)}")
        return values
    if kind is FieldKind.DOUBLE:
        if isinstance(value, bool) or not isinstance(value, numbers.Real):
            raise ProtocolError(f"field {name!r} expects a float, got {type(value).__name__}")
        return (float(value),)
    if kind is FieldKind.BOOL:
        if not isinstance(value, (bool, numbers.Integral)) or value not in (0, 1):
            raise ProtocolError(f"field {name!r} expects a bool, got {type(value).__name__}")
        return (bool(value),)
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ProtocolError(f"field {name!r} expects an integer, got {type(value).__name__}")
    return (int(value),)


def pack_values(recipe: Recipe, values: Sequence) -> bytes:
    if len(values) != len(recipe.fields):
        raise ProtocolError(f"recipe {recipe.id} has {len(recipe.fields)} fields, got {len(values)} values")
    flat = [recipe.id]
    for spec, kind, value in zip(recipe.fields, recipe._kinds, values):
        # exact builtin types skip the generic checks; range errors still surface from struct
        if kind is FieldKind.DOUBLE and type(value) is float:
            flat.append(value)
        elif kind is not FieldKind.DOUBLE and kind is not FieldKind.VECTOR6D and kind is not FieldKind.BOOL \
                and type(value) is int:
            flat.append(value)
        else:
            flat.extend(_check_value(kind, value, spec.name))
    try:
        return recipe.layout.pack(*flat)
    except struct.error:
        # locate the offending field for the message
        for spec, value in zip(recipe.fields, values):
            try:
                struct.pack(spec.kind.value, *_check_value(spec.kind, value, spec.name))
            except struct.error as exc:
                raise ProtocolError(f"field {spec.name!r}: {exc}") from None
        raise


def unpack_values(recipe: Recipe, payload: bytes) -> list:
    if len(payload) < recipe.width:
        raise ProtocolError(f"short buffer: recipe {recipe.id} needs {recipe.width} bytes, got {len(payload)}")
    if payload[0] != recipe.id:
        raise ProtocolError(f"recipe id mismatch: expected {recipe.id}, got {payload[0]}")
    flat = recipe.layout.unpack_from(payload)
    out = []
    pos = 1
    for kind in recipe._kinds:
        if kind is FieldKind.VECTOR6D:
            out.append(flat[pos:pos + 6])
            pos += 6
        else:
            out.append(flat[pos])
            pos += 1
    return out


# ---------------------------------------------------------------------------
# Control-message payloads

def encode_version_request(version: int = PROTOCOL_VERSION) -> bytes:
    return struct.pack(">H", version)


def encode_setup_outputs(names: Iterable[str], frequency: float) -> bytes:
    return struct.pack(">d", frequency) + ",".join(names).encode("utf-8")


def decode_setup_outputs(payload: bytes) -> tuple[float, list[str]]:
    if len(payload) < 8:
        raise ProtocolError("SETUP_OUTPUTS payload too short")
    (frequency,) = struct.unpack_from(">d", payload)
    return frequency, _split_names(payload[8:])


def encode_setup_inputs(names: Iterable[str]) -> bytes:
    return ",".join(names).encode("utf-8")


def decode_setup_inputs(payload: bytes) -> list[str]:
    return _split_names(payload)


def _split_names(raw: bytes) -> list[str]:
    text = raw.decode("utf-8")
    return [n.strip() for n in text.split(",")] if text else []


def encode_setup_reply(recipe: Recipe) -> bytes:
    return bytes([recipe.id]) + ",".join(f.kind.name for f in recipe.fields).encode("utf-8")


def encode_setup_error(message: str) -> bytes:
    """A setup reply with recipe id 0 carries an error message instead of kinds."""
    return b"\x00" + message.encode("utf-8")


def decode_setup_reply(payload: bytes) -> tuple[int, list[str] | str]:
    if not payload:
        raise ProtocolError("empty setup reply")
    text = payload[1:].decode("utf-8")
    if payload[0] == 0:
        return 0, text
    return payload[0], text.split(",") if text else []


# ---------------------------------------------------------------------------
# Registers

BANKS = ("input_int", "input_float", "output_int", "output_float")
INT32_MIN, INT32_MAX = -(2 ** 31), 2 ** 31 - 1


@dataclass
class RegisterFile:
    """Input/output integer and float register banks plus digital IO bits.

    Every ``get``/``set`` is atomic on its own; no multi-register transactions.
    """

    input_int: list[int] = field(default_factory=lambda: [0] * REGISTER_COUNT)
    input_float: list[float] = field(default_factory=lambda: [0.0] * REGISTER_COUNT)
    output_int: list[int] = field(default_factory=lambda: [0] * REGISTER_COUNT)
    output_float: list[float] = field(default_factory=lambda: [0.0] * REGISTER_COUNT)
    digital_out_bits: int = 0
    digital_in_bits: int = 0

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def _bank(self, bank: str) -> list:
        if bank not in BANKS:
            raise ValueError(f"unknown register bank {bank!r}")
        return getattr(self, bank)

    def get(self, bank: str, index: int):
        regs = self._bank(bank)
        if not 0 <= index < REGISTER_COUNT:
            raise IndexError(f"register index out of range: {index}")
        with self._lock:
            return regs[index]

    def set(self, bank: str, index: int, value):
        regs = self._bank(bank)
        if not 0 <= index < REGISTER_COUNT:
            raise IndexError(f"register index out of range: {index}")
        if bank.endswith("_int"):
            value = int(value)
            if not INT32_MIN <= value <= INT32_MAX:
                raise ValueError(f"value {value} does not fit a 32-bit register")
        else:
            value = float(value)
        with self._lock:
            regs[index] = value
        return value

    def snapshot(self) -> dict[str, tuple]:
        with self._lock:
            return {bank: tuple(getattr(self, bank)) for bank in BANKS}


def register_get(registers: RegisterFile, bank: str, index: int):
    return registers.get(bank, index)


def register_set(registers: RegisterFile, bank: str, index: int, value):
    return registers.set(bank, index, value)
