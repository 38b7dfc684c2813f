"""Prompt template tokenization and placeholder substitution.

Templates are plain strings with ``{name}`` holes.  Names may contain any
characters except braces (spaces included, e.g. ``{entity categories}``).
Parsing is lossless: re-rendering the token stream reproduces the source
byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

TEXT = "text"
SLOT = "slot"


class TemplateError(ValueError):
    """Base class for template parsing and substitution failures."""


class UnbalancedBrace(TemplateError):
    def __init__(self, position: int):
        super().__init__(f"unbalanced brace at position {position}")
        self.position = position


class EmptyPlaceholder(TemplateError):
    def __init__(self, position: int):
        super().__init__(f"empty placeholder at position {position}")
        self.position = position


class MissingBinding(TemplateError):
    def __init__(self, name: str):
        super().__init__(f"no binding for placeholder {name!r}")
        self.name = name


@dataclass(frozen=True)
class TemplateTokens:
    """Ordered literal/placeholder segments of one parsed template."""

    tokens: tuple[tuple[str, str], ...]

    def render(self) -> str:
        """Reassemble the source template, placeholders included."""
        parts = []
        for kind, value in self.tokens:
            parts.append(value if kind == TEXT else "{" + value + "}")
        return "".join(parts)


def parse_template(template: str) -> TemplateTokens:
    """Tokenize a template into literal runs and named placeholders.

    Raises UnbalancedBrace for stray or nested braces and EmptyPlaceholder
    for ``{}``.  Positions in the errors are 0-based character offsets.
    """
    tokens: list[tuple[str, str]] = []
    literal_start = 0
    i = 0
    while i < len(template):
        ch = template[i]
        if ch == "{":
            close = template.find("}", i + 1)
            reopen = template.find("{", i + 1)
            if close == -1 or (reopen != -1 and reopen < close):
                raise UnbalancedBrace(i)
            name = template[i + 1 : close]
            if not name:
                raise EmptyPlaceholder(i)
            if literal_start < i:
                tokens.append((TEXT, template[literal_start:i]))
            tokens.append((SLOT, name))
            i = close + 1
            literal_start = i
        elif ch == "}":
            raise UnbalancedBrace(i)
        else:
            i += 1
    if literal_start < len(template):
        tokens.append((TEXT, template[literal_start:]))
    return TemplateTokens(tuple(tokens))


def placeholder_names(tokens: TemplateTokens) -> list[str]:
    """Placeholder names in first-appearance order, duplicates kept."""
    return [value for kind, value in tokens.tokens if kind == SLOT]


def substitute(tokens: TemplateTokens, bindings: Mapping[str, str]) -> str:
    """Replace every placeholder with its binding.

    Bindings are inserted verbatim; a binding containing ``{x}`` is not
    re-substituted.  Extra bindings are ignored, missing ones raise
    MissingBinding.
    """
    parts = []
    for kind, value in tokens.tokens:
        if kind == TEXT:
            parts.append(value)
        else:
            if value not in bindings:
                raise MissingBinding(value)
            parts.append(bindings[value])
    return "".join(parts)


def assemble_instruction(prompt) -> str:
    """Join a prompt's input and output templates with a single space.

    The result keeps placeholders unsubstituted; it is the string stored
    under the "instruction" key of the input structure.  Both templates
    are parsed first so malformed prompts fail here.
    """
    parse_template(prompt.input_template)
    parse_template(prompt.output_template)
    return prompt.input_template + " " + prompt.output_template
