"""Register assignments shared by the controller's command dispatch and the client."""

import enum

# input_int
OPCODE = 0
SEQUENCE = 1
ASYNC_FLAG = 2
# input_float
TARGET = range(0, 6)
SPEED = 6
ACCEL = 7
# output_int
DONE_SEQUENCE = 0
ERROR_CODE = 1
ERROR_SEQUENCE = 2
RESULT_FLAG = 3
# extensions: input_float/output_float 18 trigger and completion; 19 by convention for parameters
EXTENSION_TRIGGER = 18
EXTENSION_PARAM = 19
FIRST_EXTENSION_ID = 256


class Opcode(enum.IntEnum):
    NOOP = 0
    MOVEJ = 1
    MOVEL = 2
    SERVOJ = 3
    STOPJ = 4
    ZERO_FT = 5
    MOVE_UNTIL_CONTACT = 6


class ErrorCode(enum.IntEnum):
    NONE = 0
    UNKNOWN_OPCODE = 1
    BUSY = 2
    TRACKING_DIVERGED = 3
    TARGET_OUT_OF_LIMITS = 4
    BAD_PARAMETER = 5
