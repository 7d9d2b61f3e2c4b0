"""Server side of one RTDE-style connection, independent of the byte transport."""

from __future__ import annotations

import logging
import struct
from typing import Callable

from ..wire import (
    PROTOCOL_VERSION,
    FrameReader,
    PacketType,
    ProtocolError,
    RecipeBook,
    RecipeError,
    decode_setup_inputs,
    decode_setup_outputs,
    encode_frame,
    encode_setup_error,
    encode_setup_reply,
    parse_register_name,
    unpack_values,
)
from .core import Controller

log = logging.getLogger(__name__)

_U16 = struct.Struct(">H")


class RtdeEndpoint:
    """Feed it received bytes; it answers through ``send``.

    In virtual-time mode every data package from the control owner advances
    the controller by exactly one tick, after the package's writes are posted.
    """

    def __init__(self, controller: Controller, send: Callable[[bytes], None], name: str = "rtde"):
        self.controller = controller
        self._send = send
        self.name = name
        self.reader = FrameReader()
        self.book = RecipeBook()
        self.output_recipe = None
        self.input_recipe = None
        self.subscription = None
        self.started = False
        self.closed = False

    @property
    def is_control_owner(self) -> bool:
        return self.controller.control_owner is self

    def feed(self, data: bytes) -> None:
        for ptype, payload in self.reader.feed(data):
            self.handle(ptype, payload)

    def reply(self, ptype: PacketType, payload: bytes = b"") -> None:
        self._send(encode_frame(ptype, payload))

    def handle(self, ptype: PacketType, payload: bytes) -> None:
        if ptype == PacketType.PROTOCOL_VERSION:
            if len(payload) != 2:
                raise ProtocolError("version request needs a 2-byte payload")
            (version,) = _U16.unpack(payload)
            self.reply(ptype, bytes([version == PROTOCOL_VERSION]))
        elif ptype == PacketType.SETUP_OUTPUTS:
            try:
                frequency, names = decode_setup_outputs(payload)
                if frequency > self.controller.frequency:
                    raise RecipeError(
                        f"frequency {frequency:g} Hz exceeds the controller's {self.controller.frequency:g} Hz")
                recipe = self.book.output(names, frequency)
            except RecipeError as exc:
                self.reply(ptype, encode_setup_error(str(exc)))
                return
            self.output_recipe = recipe
            self.reply(ptype, encode_setup_reply(recipe))
        elif ptype == PacketType.SETUP_INPUTS:
            try:
                names = decode_setup_inputs(payload)
                recipe = self.book.input(names)
                self.controller.claim_inputs(self, recipe.names)
            except RecipeError as exc:
                self.reply(ptype, encode_setup_error(str(exc)))
                return
            self.input_recipe = recipe
            self.reply(ptype, encode_setup_reply(recipe))
        elif ptype == PacketType.START:
            ok = self.output_recipe is not None or self.input_recipe is not None
            self.reply(ptype, bytes([ok]))
            if ok:
                self._start()
        elif ptype == PacketType.PAUSE:
            self._stop()
            self.reply(ptype, b"\x01")
        elif ptype == PacketType.DATA_PACKAGE:
            self._data(payload)

    def _start(self) -> None:
        with self.controller.lock:
            self._stop()
            if self.output_recipe is not None:
                self.subscription = self.controller.subscribe(self.output_recipe, self._deliver)
            self.started = True

    def _stop(self) -> None:
        if self.subscription is not None:
            self.controller.unsubscribe(self.subscription)
            self.subscription = None
        self.started = False

    def _deliver(self, payload: bytes) -> None:
        if not self.closed:
            self._send(encode_frame(PacketType.DATA_PACKAGE, payload))

    def _data(self, payload: bytes) -> None:
        recipe = self.input_recipe
        if recipe is None or not payload or payload[0] != recipe.id:
            raise ProtocolError("data package does not match the input recipe")
        values = unpack_values(recipe, payload)
        ctrl = self.controller
        mask = value = None
        for name, v in zip(recipe.names, values):
            if name == "standard_digital_output_mask":
                mask = v
            elif name == "standard_digital_output":
                value = v
            else:
                bank, idx = parse_register_name(name)
                ctrl.post_register(bank, idx, v)
        if mask is not None:
            ctrl.post_digital_out(mask, value or 0)
        if ctrl.config.virtual_time and self.started and self.is_control_owner:
            ctrl.tick()

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        with self.controller.lock:
            self._stop()
            self.controller.release(self)
