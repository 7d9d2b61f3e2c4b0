"""Tree-walking evaluator.

Evaluation is written as generators so that ``sleep``/``sync`` can suspend a
running snippet: each suspension yields a duration in seconds and the driver
(the controller loop) decides how many ticks that costs.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

from . import ast

DEFAULT_STEP_BUDGET = 1_000_000


class ScriptRuntimeError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.message = message
        self.line = line


class BuiltinError(Exception):
    """Raised by host functions; the evaluator attaches the call's line."""


@dataclass(frozen=True)
class Suspend:
    """Returned by a host function to pause the snippet for ``seconds``."""

    seconds: float


class _Return(Exception):
    def __init__(self, value):
        self.value = value


@dataclass
class Env:
    builtins: dict[str, Callable] = field(default_factory=dict)
    functions: dict[str, ast.FuncDef] = field(default_factory=dict)
    globals: dict[str, object] = field(default_factory=dict)
    log: list[str] = field(default_factory=list)
    registers: object = None
    step_budget: int = DEFAULT_STEP_BUDGET
    # virtual seconds consumed by suspensions when run without a controller
    clock: float = 0.0

    def define_functions(self, program: ast.Program) -> None:
        for fn in program.functions.values():
            if fn.name in self.builtins:
                raise ScriptRuntimeError(f"cannot redefine builtin '{fn.name}'", fn.line)
            self.functions[fn.name] = fn


def format_value(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else repr(value)
    if value is None:
        return "None"
    return str(value)


def _type_name(value) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    return "none" if value is None else type(value).__name__


def _is_number(value) -> bool:
    return isinstance(value, float) and not isinstance(value, bool)


def _truth(value, line: int) -> bool:
    if isinstance(value, bool):
        return value
    if _is_number(value):
        return value != 0.0
    raise ScriptRuntimeError(f"type error: {_type_name(value)} used as a condition", line)


def _to_script(value):
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, (int, float)):
        return float(value)
    return value


class Execution:
    """One invocation: a statement budget shared by everything it runs."""

    def __init__(self, env: Env, budget: int | None = None):
        self.env = env
        self.budget = env.step_budget if budget is None else budget
        self.steps = 0

    # -- statements ---------------------------------------------------------

    def run_program(self, program: ast.Program) -> Iterator[float]:
        self.env.define_functions(program)
        top = [s for s in program.body if not isinstance(s, ast.FuncDef)]
        try:
            yield from self.exec_block(top, self.env.globals)
        except _Return as ret:
            return ret.value
        return None

    def call_function(self, name: str, args: list, line: int) -> Iterator[float]:
        fn = self.env.functions.get(name)
        if fn is None:
            raise ScriptRuntimeError(f"unknown function '{name}'", line)
        if len(args) != len(fn.params):
            raise ScriptRuntimeError(
                f"arity mismatch: '{name}' takes {len(fn.params)} argument(s), got {len(args)}", line)
        scope = dict(zip(fn.params, args))
        try:
            yield from self.exec_block(fn.body, scope)
        except _Return as ret:
            return ret.value
        return None

    def exec_block(self, body: list, scope: dict) -> Iterator[float]:
        for stmt in body:
            yield from self.exec_stmt(stmt, scope)

    def exec_stmt(self, stmt, scope: dict) -> Iterator[float]:
        self.steps += 1
        if self.steps > self.budget:
            raise ScriptRuntimeError("step budget exceeded", stmt.line)
        if isinstance(stmt, ast.Assign):
            if stmt.name in self.env.builtins or stmt.name in self.env.functions:
                raise ScriptRuntimeError(f"cannot assign to function name '{stmt.name}'", stmt.line)
            scope[stmt.name] = yield from self.eval(stmt.expr, scope)
        elif isinstance(stmt, ast.ExprStmt):
            yield from self.eval(stmt.expr, scope)
        elif isinstance(stmt, ast.If):
            for cond, body in stmt.arms:
                value = yield from self.eval(cond, scope)
                if _truth(value, cond.line):
                    yield from self.exec_block(body, scope)
                    break
            else:
                if stmt.else_body is not None:
                    yield from self.exec_block(stmt.else_body, scope)
        elif isinstance(stmt, ast.While):
            while True:
                value = yield from self.eval(stmt.cond, scope)
                if not _truth(value, stmt.cond.line):
                    break
                yield from self.exec_block(stmt.body, scope)
                self.steps += 1
                if self.steps > self.budget:
                    raise ScriptRuntimeError("step budget exceeded", stmt.line)
        elif isinstance(stmt, ast.Return):
            value = None
            if stmt.expr is not None:
                value = yield from self.eval(stmt.expr, scope)
            raise _Return(value)
        elif isinstance(stmt, ast.FuncDef):
            raise ScriptRuntimeError("function definitions are only allowed at top level", stmt.line)
        else:  # pragma: no cover - parser never produces other nodes
            raise ScriptRuntimeError(f"unsupported statement {type(stmt).__name__}", stmt.line)

    # -- expressions --------------------------------------------------------

    def eval(self, node, scope: dict) -> Iterator[float]:
        if isinstance(node, ast.NumberLit):
            return node.value
        if isinstance(node, ast.StringLit):
            return node.value
        if isinstance(node, ast.BoolLit):
            return node.value
        if isinstance(node, ast.Var):
            if node.name in scope:
                return scope[node.name]
            if node.name in self.env.globals:
                return self.env.globals[node.name]
            raise ScriptRuntimeError(f"unknown identifier '{node.name}'", node.line)
        if isinstance(node, ast.Call):
            args = []
            for arg in node.args:
                args.append((yield from self.eval(arg, scope)))
            return (yield from self.call(node.name, args, node.line))
        if isinstance(node, ast.UnaryOp):
            value = yield from self.eval(node.operand, scope)
            if node.op == "not":
                return not _truth(value, node.line)
            if not _is_number(value):
                raise ScriptRuntimeError(f"type error: unary '-' on {_type_name(value)}", node.line)
            return -value
        if isinstance(node, ast.BinOp):
            if node.op in ("and", "or"):
                left = _truth((yield from self.eval(node.left, scope)), node.line)
                if node.op == "and" and not left:
                    return False
                if node.op == "or" and left:
                    return True
                return _truth((yield from self.eval(node.right, scope)), node.line)
            left = yield from self.eval(node.left, scope)
            right = yield from self.eval(node.right, scope)
            return _binop(node.op, left, right, node.line)
        raise ScriptRuntimeError(f"unsupported expression {type(node).__name__}", getattr(node, "line", 0))

    def call(self, name: str, args: list, line: int) -> Iterator[float]:
        if name in self.env.functions:
            return (yield from self.call_function(name, args, line))
        fn = self.env.builtins.get(name)
        if fn is None:
            raise ScriptRuntimeError(f"unknown identifier '{name}'", line)
        try:
            inspect.signature(fn).bind(*args)
        except TypeError:
            raise ScriptRuntimeError(f"arity mismatch in call to '{name}'", line) from None
        try:
            result = fn(*args)
        except ScriptRuntimeError:
            raise
        except (BuiltinError, IndexError, ValueError, TypeError) as exc:
            raise ScriptRuntimeError(str(exc), line) from None
        if isinstance(result, Suspend):
            yield result.seconds
            return None
        return _to_script(result)


def _binop(op: str, left, right, line: int):
    if op in ("==", "!="):
        if _is_number(left) and _is_number(right):
            equal = left == right
        else:
            equal = type(left) is type(right) and left == right
        return equal if op == "==" else not equal
    if op == "+" and isinstance(left, str) and isinstance(right, str):
        return left + right
    if op in ("<", "<=", ">", ">=") and isinstance(left, str) and isinstance(right, str):
        pass
    elif not (_is_number(left) and _is_number(right)):
        raise ScriptRuntimeError(
            f"type error: '{op}' on {_type_name(left)} and {_type_name(right)}", line)
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op in ("/", "%"):
        if right == 0.0:
            raise ScriptRuntimeError("division by zero", line)
        return left / right if op == "/" else math.fmod(left, right)
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise ScriptRuntimeError(f"unknown operator '{op}'", line)


def run(gen: Iterator[float], env: Env | None = None):
    """Drive an evaluation generator to completion; suspensions advance ``env.clock``."""
    try:
        while True:
            seconds = next(gen)
            if env is not None:
                env.clock += seconds
    except StopIteration as stop:
        return stop.value


def evaluate(program: ast.Program, env: Env, budget: int | None = None):
    """Execute ``program`` in ``env`` and return its completion value."""
    return run(Execution(env, budget).run_program(program), env)


# ---------------------------------------------------------------------------
# Builtins

CORE_BUILTINS = (
    "read_input_integer_register", "read_input_float_register",
    "write_output_integer_register", "write_output_float_register",
    "sleep", "sync", "textmsg",
)


def _index(i) -> int:
    if not isinstance(i, float) or isinstance(i, bool) or not i.is_integer():
        raise BuiltinError(f"register index must be an integer, got {format_value(i)}")
    i = int(i)
    if not 0 <= i < 24:
        raise BuiltinError(f"register index out of range: {i}")
    return i


def _number(v, what: str) -> float:
    if not _is_number(v):
        raise BuiltinError(f"{what} must be a number, got {_type_name(v)}")
    return v


def register_builtins(env: Env, registers, extras: dict[str, Callable] | None = None,
                      frequency: float | None = None) -> Env:
    """Install the register, timing and logging builtins plus device ``extras``."""
    extras = dict(extras or {})
    clash = sorted(set(extras) & set(CORE_BUILTINS))
    if clash:
        raise ValueError(f"extras collide with core builtins: {', '.join(clash)}")

    def read_input_integer_register(i):
        return float(registers.get("input_int", _index(i)))

    def read_input_float_register(i):
        return float(registers.get("input_float", _index(i)))

    def write_output_integer_register(i, v):
        registers.set("output_int", _index(i), round(_number(v, "value")))

    def write_output_float_register(i, v):
        registers.set("output_float", _index(i), _number(v, "value"))

    def sleep(seconds):
        seconds = _number(seconds, "sleep time")
        if seconds < 0:
            raise BuiltinError("sleep time must be non-negative")
        return Suspend(seconds)

    def sync():
        return Suspend(1.0 / frequency if frequency else 0.0)

    def textmsg(message):
        env.log.append(format_value(message))

    env.builtins.update({
        "read_input_integer_register": read_input_integer_register,
        "read_input_float_register": read_input_float_register,
        "write_output_integer_register": write_output_integer_register,
        "write_output_float_register": write_output_float_register,
        "sleep": sleep,
        "sync": sync,
        "textmsg": textmsg,
    })
    env.builtins.update(extras)
    env.registers = registers
    return env
