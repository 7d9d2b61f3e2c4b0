from __future__ import annotations

from dataclasses import dataclass

KEYWORDS = frozenset({
    "def", "end", "if", "elif", "else", "while", "return",
    "and", "or", "not", "True", "False",
})

# longest first so that "==" wins over "="
OPERATORS = ("==", "!=", "<=", ">=", "<", ">", "=", "+", "-", "*", "/", "%", "(", ")", ",", ":")


class ScriptSyntaxError(Exception):
    def __init__(self, message: str, line: int, column: int = 0):
        super().__init__(f"line {line}: {message}")
        self.message = message
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT NUMBER STRING OP NEWLINE KEYWORD EOF
    text: str
    line: int
    column: int

    def is_op(self, text: str) -> bool:
        return self.kind == "OP" and self.text == text

    def is_kw(self, text: str) -> bool:
        return self.kind == "KEYWORD" and self.text == text


_ESCAPES = {"n": "\n", "t": "\t", "\\": "\\", '"': '"', "'": "'"}


def tokenize(source: str) -> list[Token]:
    """Split script source into tokens.

    Comments run from ``#`` to end of line. Newlines inside parentheses are
    not statement separators.
    """
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    depth = 0
    n = len(source)
    last_line = 1

    def emit(kind, text, ln, cl):
        nonlocal last_line
        tokens.append(Token(kind, text, ln, cl))
        if kind != "NEWLINE":
            last_line = ln

    while i < n:
        c = source[i]
        if c == "\n":
            if depth == 0 and tokens and tokens[-1].kind != "NEWLINE":
                emit("NEWLINE", "\n", line, col)
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_col = col
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            emit("KEYWORD" if word in KEYWORDS else "IDENT", word, line, start_col)
            col += j - i
            i = j
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == ".":
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            emit("NUMBER", source[i:j], line, start_col)
            col += j - i
            i = j
            continue
        if c in "\"'":
            quote = c
            j = i + 1
            chars = []
            while True:
                if j >= n or source[j] == "\n":
                    raise ScriptSyntaxError("unterminated string", line, start_col)
                ch = source[j]
                if ch == quote:
                    break
                if ch == "\\" and j + 1 < n and source[j + 1] in _ESCAPES:
                    chars.append(_ESCAPES[source[j + 1]])
                    j += 2
                    continue
                chars.append(ch)
                j += 1
            emit("STRING", "".join(chars), line, start_col)
            col += j + 1 - i
            i = j + 1
            continue
        for op in OPERATORS:
            if source.startswith(op, i):
                if op == "(":
                    depth += 1
                elif op == ")":
                    depth = max(0, depth - 1)
                emit("OP", op, line, start_col)
                i += len(op)
                col += len(op)
                break
        else:
            raise ScriptSyntaxError(f"illegal character {c!r}", line, start_col)
    if tokens and tokens[-1].kind != "NEWLINE":
        emit("NEWLINE", "\n", line, col)
    tokens.append(Token("EOF", "", last_line, 0))
    return tokens
