"""Parser for the call-style config grammar, e.g. ``matern(nu=1.5, ell=1)``.

The grammar is a subset of Python call syntax, so :mod:`ast` does the
tokenising.  Values are numbers, lists of numbers, quoted or bare strings
(``file=pts.csv``), or nested calls.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from typing import Any


class GrammarError(ValueError):
    """Malformed kernel or measure text."""


@dataclass(frozen=True)
class Call:
    name: str
    kwargs: dict[str, Any] = field(default_factory=dict)


_BARE_FILE = re.compile(r"(\bfile\s*=\s*)([^,()\"'\s][^,()]*)")


def _convert(node: ast.AST, text: str) -> Any:
    if isinstance(node, ast.Call):
        return _call(node, text)
    if isinstance(node, ast.Name):
        return node.id
    try:
        return ast.literal_eval(node)
    except ValueError as exc:
        raise GrammarError(f"unsupported value {ast.get_source_segment(text, node)!r} in {text!r}") from exc


def _call(node: ast.Call, text: str) -> Call:
    if not isinstance(node.func, ast.Name):
        raise GrammarError(f"expected name(...) in {text!r}")
    if node.args:
        raise GrammarError(f"positional arguments are not allowed in {text!r}; use key=value")
    kwargs = {}
    for kw in node.keywords:
        if kw.arg is None:
            raise GrammarError(f"'**' is not allowed in {text!r}")
        kwargs[kw.arg] = _convert(kw.value, text)
    return Call(node.func.id.lower(), kwargs)


def parse_call(text: str) -> Call:
    """Parse ``name(key=value, ...)`` into a :class:`Call`."""
    if not isinstance(text, str) or not text.strip():
        raise GrammarError("empty expression")
    src = _BARE_FILE.sub(lambda m: f"{m.group(1)}{m.group(2).strip()!r}", text.strip())
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise GrammarError(f"cannot parse {text!r}: {exc.msg}") from exc
    if not isinstance(tree.body, ast.Call):
        raise GrammarError(f"expected name(...) in {text!r}")
    return _call(tree.body, src)
