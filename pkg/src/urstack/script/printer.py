"""Source printer; output re-parses to an equal tree."""

from __future__ import annotations

from . import ast


def _string(value: str) -> str:
    escaped = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    return f'"{escaped}"'


def expr_to_source(node) -> str:
    if isinstance(node, ast.NumberLit):
        return repr(float(node.value))
    if isinstance(node, ast.StringLit):
        return _string(node.value)
    if isinstance(node, ast.BoolLit):
        return "True" if node.value else "False"
    if isinstance(node, ast.Var):
        return node.name
    if isinstance(node, ast.Call):
        return f"{node.name}({', '.join(expr_to_source(a) for a in node.args)})"
    if isinstance(node, ast.UnaryOp):
        sep = " " if node.op == "not" else ""
        return f"({node.op}{sep}{expr_to_source(node.operand)})"
    if isinstance(node, ast.BinOp):
        return f"({expr_to_source(node.left)} {node.op} {expr_to_source(node.right)})"
    raise TypeError(f"not an expression: {node!r}")


def _block(body: list, indent: int) -> list[str]:
    lines = []
    for stmt in body:
        lines.extend(_stmt(stmt, indent))
    return lines


def _stmt(stmt, indent: int) -> list[str]:
    pad = "  " * indent
    if isinstance(stmt, ast.Assign):
        return [f"{pad}{stmt.name} = {expr_to_source(stmt.expr)}"]
    if isinstance(stmt, ast.ExprStmt):
        return [f"{pad}{expr_to_source(stmt.expr)}"]
    if isinstance(stmt, ast.Return):
        return [f"{pad}return" + ("" if stmt.expr is None else f" {expr_to_source(stmt.expr)}")]
    if isinstance(stmt, ast.While):
        return ([f"{pad}while {expr_to_source(stmt.cond)}:"]
                + _block(stmt.body, indent + 1) + [f"{pad}end"])
    if isinstance(stmt, ast.If):
        lines = []
        for i, (cond, body) in enumerate(stmt.arms):
            kw = "if" if i == 0 else "elif"
            lines.append(f"{pad}{kw} {expr_to_source(cond)}:")
            lines.extend(_block(body, indent + 1))
        if stmt.else_body is not None:
            lines.append(f"{pad}else:")
            lines.extend(_block(stmt.else_body, indent + 1))
        lines.append(f"{pad}end")
        return lines
    if isinstance(stmt, ast.FuncDef):
        return ([f"{pad}def {stmt.name}({', '.join(stmt.params)}):"]
                + _block(stmt.body, indent + 1) + [f"{pad}end"])
    raise TypeError(f"not a statement: {stmt!r}")


def pretty_print(program: ast.Program) -> str:
    return "\n".join(_block(program.body, 0)) + "\n"
