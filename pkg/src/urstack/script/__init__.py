"""A small end-delimited scripting language for controller-side extension snippets."""

from .ast import Program
from .interp import (
    CORE_BUILTINS,
    BuiltinError,
    Env,
    Execution,
    ScriptRuntimeError,
    Suspend,
    evaluate,
    format_value,
    register_builtins,
)
from .lexer import ScriptSyntaxError, Token, tokenize
from .parser import parse, parse_source
from .printer import pretty_print

__all__ = [
    "CORE_BUILTINS", "BuiltinError", "Env", "Execution", "Program", "ScriptRuntimeError",
    "ScriptSyntaxError", "Suspend", "Token", "evaluate", "format_value", "parse",
    "parse_source", "pretty_print", "register_builtins", "tokenize",
]
