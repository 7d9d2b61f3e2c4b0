"""Syntax tree of the script subset. Source lines are excluded from equality."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


@dataclass
class NumberLit:
    value: float
    line: int = field(default=0, compare=False)


@dataclass
class StringLit:
    value: str
    line: int = field(default=0, compare=False)


@dataclass
class BoolLit:
    value: bool
    line: int = field(default=0, compare=False)


@dataclass
class Var:
    name: str
    line: int = field(default=0, compare=False)


@dataclass
class Call:
    name: str
    args: list
    line: int = field(default=0, compare=False)


@dataclass
class BinOp:
    op: str
    left: object
    right: object
    line: int = field(default=0, compare=False)


@dataclass
class UnaryOp:
    op: str  # "-" or "not"
    operand: object
    line: int = field(default=0, compare=False)


Expr = Union[NumberLit, StringLit, BoolLit, Var, Call, BinOp, UnaryOp]


@dataclass
class Assign:
    name: str
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass
class ExprStmt:
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass
class If:
    arms: list  # [(condition, body)]
    else_body: list | None
    line: int = field(default=0, compare=False)


@dataclass
class While:
    cond: Expr
    body: list
    line: int = field(default=0, compare=False)


@dataclass
class Return:
    expr: Expr | None
    line: int = field(default=0, compare=False)


@dataclass
class FuncDef:
    name: str
    params: list
    body: list
    line: int = field(default=0, compare=False)


@dataclass
class Program:
    body: list
    line: int = field(default=1, compare=False)

    @property
    def functions(self) -> dict[str, FuncDef]:
        return {s.name: s for s in self.body if isinstance(s, FuncDef)}
