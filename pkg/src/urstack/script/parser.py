"""Recursive-descent parser for the script subset.

Grammar::

    program  := { funcdef | stmt }
    funcdef  := "def" IDENT "(" [IDENT {"," IDENT}] ")" ":" block "end"
    stmt     := assign | call | if | while | return
    if       := "if" expr ":" block {"elif" expr ":" block} ["else" ":" block] "end"
    while    := "while" expr ":" block "end"
    expr     := or-expr, with precedence
                or < and < not < comparison < additive < multiplicative < unary minus < call/atom
"""

from __future__ import annotations

from . import ast
from .lexer import ScriptSyntaxError, Token, tokenize

_COMPARISONS = ("==", "!=", "<", "<=", ">", ">=")


def _describe(tok: Token) -> str:
    if tok.kind == "EOF":
        return "end of input"
    if tok.kind == "NEWLINE":
        return "end of line"
    return repr(tok.text)


class Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def error(self, expected: str) -> ScriptSyntaxError:
        tok = self.tok
        return ScriptSyntaxError(f"expected {expected}, found {_describe(tok)}", tok.line, tok.column)

    def expect_op(self, text: str) -> Token:
        if not self.tok.is_op(text):
            raise self.error(f"'{text}'")
        return self.advance()

    def expect_kw(self, text: str) -> Token:
        if not self.tok.is_kw(text):
            raise self.error(f"'{text}'")
        return self.advance()

    def expect_ident(self) -> Token:
        if self.tok.kind != "IDENT":
            raise self.error("identifier")
        return self.advance()

    def skip_newlines(self) -> None:
        while self.tok.kind == "NEWLINE":
            self.advance()

    def end_of_statement(self) -> None:
        if self.tok.kind == "EOF":
            return
        if self.tok.kind != "NEWLINE":
            raise self.error("end of line")
        self.skip_newlines()

    # -- statements ---------------------------------------------------------

    def parse_program(self) -> ast.Program:
        body = []
        self.skip_newlines()
        while self.tok.kind != "EOF":
            if self.tok.is_kw("def"):
                body.append(self.parse_funcdef())
            else:
                body.append(self.parse_statement())
            self.skip_newlines()
        return ast.Program(body)

    def parse_funcdef(self) -> ast.FuncDef:
        line = self.expect_kw("def").line
        name = self.expect_ident().text
        self.expect_op("(")
        params = []
        if not self.tok.is_op(")"):
            params.append(self.expect_ident().text)
            while self.tok.is_op(","):
                self.advance()
                params.append(self.expect_ident().text)
        self.expect_op(")")
        if len(set(params)) != len(params):
            raise ScriptSyntaxError(f"duplicate parameter in '{name}'", line)
        self.expect_op(":")
        body = self.parse_block(("end",))
        self.expect_kw("end")
        self.end_of_statement()
        return ast.FuncDef(name, params, body, line)

    def parse_block(self, terminators: tuple[str, ...]) -> list:
        self.end_of_statement()
        body = []
        while not any(self.tok.is_kw(t) for t in terminators):
            if self.tok.kind == "EOF":
                raise self.error("'end'")
            if self.tok.is_kw("def"):
                raise ScriptSyntaxError("function definitions are only allowed at top level",
                                        self.tok.line, self.tok.column)
            body.append(self.parse_statement())
        return body

    def parse_statement(self):
        tok = self.tok
        if tok.is_kw("if"):
            return self.parse_if()
        if tok.is_kw("while"):
            self.advance()
            cond = self.parse_expr()
            self.expect_op(":")
            body = self.parse_block(("end",))
            self.expect_kw("end")
            self.end_of_statement()
            return ast.While(cond, body, tok.line)
        if tok.is_kw("return"):
            self.advance()
            expr = None
            if self.tok.kind not in ("NEWLINE", "EOF"):
                expr = self.parse_expr()
            self.end_of_statement()
            return ast.Return(expr, tok.line)
        if tok.kind == "IDENT" and self.tokens[self.pos + 1].is_op("="):
            self.advance()
            self.advance()
            stmt = ast.Assign(tok.text, self.parse_expr(), tok.line)
            self.end_of_statement()
            return stmt
        if tok.kind == "IDENT" and self.tokens[self.pos + 1].is_op("("):
            expr = self.parse_expr()
            self.end_of_statement()
            return ast.ExprStmt(expr, tok.line)
        raise self.error("statement")

    def parse_if(self) -> ast.If:
        line = self.expect_kw("if").line
        arms = []
        cond = self.parse_expr()
        self.expect_op(":")
        arms.append((cond, self.parse_block(("elif", "else", "end"))))
        else_body = None
        while self.tok.is_kw("elif"):
            self.advance()
            cond = self.parse_expr()
            self.expect_op(":")
            arms.append((cond, self.parse_block(("elif", "else", "end"))))
        if self.tok.is_kw("else"):
            self.advance()
            self.expect_op(":")
            else_body = self.parse_block(("end",))
        self.expect_kw("end")
        self.end_of_statement()
        return ast.If(arms, else_body, line)

    # -- expressions --------------------------------------------------------

    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        left = self.parse_and()
        while self.tok.is_kw("or"):
            line = self.advance().line
            left = ast.BinOp("or", left, self.parse_and(), line)
        return left

    def parse_and(self):
        left = self.parse_not()
        while self.tok.is_kw("and"):
            line = self.advance().line
            left = ast.BinOp("and", left, self.parse_not(), line)
        return left

    def parse_not(self):
        if self.tok.is_kw("not"):
            line = self.advance().line
            return ast.UnaryOp("not", self.parse_not(), line)
        return self.parse_comparison()

    def parse_comparison(self):
        left = self.parse_additive()
        while self.tok.kind == "OP" and self.tok.text in _COMPARISONS:
            tok = self.advance()
            left = ast.BinOp(tok.text, left, self.parse_additive(), tok.line)
        return left

    def parse_additive(self):
        left = self.parse_multiplicative()
        while self.tok.kind == "OP" and self.tok.text in ("+", "-"):
            tok = self.advance()
            left = ast.BinOp(tok.text, left, self.parse_multiplicative(), tok.line)
        return left

    def parse_multiplicative(self):
        left = self.parse_unary()
        while self.tok.kind == "OP" and self.tok.text in ("*", "/", "%"):
            tok = self.advance()
            left = ast.BinOp(tok.text, left, self.parse_unary(), tok.line)
        return left

    def parse_unary(self):
        if self.tok.is_op("-"):
            line = self.advance().line
            return ast.UnaryOp("-", self.parse_unary(), line)
        return self.parse_atom()

    def parse_atom(self):
        tok = self.tok
        if tok.kind == "NUMBER":
            self.advance()
            return ast.NumberLit(float(tok.text), tok.line)
        if tok.kind == "STRING":
            self.advance()
            return ast.StringLit(tok.text, tok.line)
        if tok.is_kw("True") or tok.is_kw("False"):
            self.advance()
            return ast.BoolLit(tok.text == "True", tok.line)
        if tok.kind == "IDENT":
            self.advance()
            if self.tok.is_op("("):
                self.advance()
                args = []
                if not self.tok.is_op(")"):
                    args.append(self.parse_expr())
                    while self.tok.is_op(","):
                        self.advance()
                        args.append(self.parse_expr())
                self.expect_op(")")
                return ast.Call(tok.text, args, tok.line)
            return ast.Var(tok.text, tok.line)
        if tok.is_op("("):
            self.advance()
            expr = self.parse_expr()
            self.expect_op(")")
            return expr
        raise self.error("expression")


def parse(tokens: list[Token]) -> ast.Program:
    return Parser(tokens).parse_program()


def parse_source(source: str) -> ast.Program:
    return parse(tokenize(source))
