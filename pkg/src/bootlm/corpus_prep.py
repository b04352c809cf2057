"""Normalization of the BabyLM source corpora into one pretraining format.

Every source gets a fixed composition of small, deterministic rewrites:

    childes, bnc_dialogue           normalize, capitalize, quote as speech
    cbt                             normalize (Penn Treebank remnants included)
    children_stories                tabs -> ``[TAB]`` marker, normalize
    gutenberg                       restore hard-wrapped paragraphs, normalize
    open_subtitles, switchboard     strip leading dash, normalize, quote
    qed                             HTML cleanup, strip dash, normalize, quote
    wikipedia, simple_wikipedia     HTML/wiki-markup cleanup, normalize

All functions are pure and the per-source pipelines are idempotent.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from .errors import UnknownSource

__all__ = [
    "SourceKind",
    "TextDocument",
    "normalize_typography",
    "restore_hard_wraps",
    "wrap_as_speech",
    "clean_markup",
    "capitalize_first",
    "preprocess_source",
    "preprocess_text",
]


class SourceKind(str, enum.Enum):
    CHILDES = "childes"
    BNC_DIALOGUE = "bnc_dialogue"
    CBT = "cbt"
    CHILDREN_STORIES = "children_stories"
    GUTENBERG = "gutenberg"
    OPEN_SUBTITLES = "open_subtitles"
    QED = "qed"
    WIKIPEDIA = "wikipedia"
    SIMPLE_WIKIPEDIA = "simple_wikipedia"
    SWITCHBOARD = "switchboard"

    @classmethod
    def parse(cls, name: "str | SourceKind") -> "SourceKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            known = ", ".join(k.value for k in cls)
            raise UnknownSource(f"unknown source {name!r}; expected one of: {known}") from None


@dataclass(frozen=True)
class TextDocument:
    lines: tuple[str, ...]
    source: SourceKind = field(default=SourceKind.WIKIPEDIA)

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "source", SourceKind.parse(self.source))

    @classmethod
    def from_text(cls, text: str, source) -> "TextDocument":
        text = text.replace("\r\n", "\n").replace("\r", "\n")
        return cls(tuple(text.split("\n")), source)

    def to_text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


# Penn Treebank bracket tokens and quote pairs left over in some corpora.
_PTB_SYMBOLS = {
    "-LRB-": "(",
    "-RRB-": ")",
    "-LSB-": "[",
    "-RSB-": "]",
    "-LCB-": "{",
    "-RCB-": "}",
    "``": "“",
    "''": "”",
}
_PTB_RE = re.compile("|".join(re.escape(k) for k in _PTB_SYMBOLS))

_SPACE_BEFORE = re.compile(r" +([,.!?'”)\]}])")
_SPACE_AFTER = re.compile(r"([(\[{“]) +")
_WHITESPACE = re.compile(r"\s+")

# Frozen entity table; anything else is left alone.
_ENTITIES = {
    "&amp;": "&",
    "&lt;": "<",
    "&gt;": ">",
    "&quot;": '"',
    "&#39;": "'",
}
_ENTITY_RE = re.compile("|".join(re.escape(k) for k in _ENTITIES))
_TAG_RE = re.compile(r"</?[A-Za-z][^<>]*>")
_WIKI_LINK_RE = re.compile(r"\[\[(?:[^\[\]|]*\|)?([^\[\]|]*)\]\]")
_EXT_LINK_RE = re.compile(r"\[(?:https?|ftp)://[^\s\]]*(?: ([^\]]*))?\]")
_EMPHASIS_RE = re.compile(r"'{2,}")
_LEADING_DASH = re.compile(r"^(?:-\s*)+")


def normalize_typography(line: str) -> str:
    """Detokenize punctuation and collapse whitespace on a single line.

    >>> normalize_typography("hello , world .")
    'hello, world.'
    >>> normalize_typography("a -LRB- b -RRB-")
    'a (b)'
    """
    return _settle(_normalize_once, line)


def _normalize_once(line: str) -> str:
    line = _PTB_RE.sub(lambda m: _PTB_SYMBOLS[m.group(0)], line)
    line = _WHITESPACE.sub(" ", line).strip()
    return _SPACE_AFTER.sub(r"\1", _SPACE_BEFORE.sub(r"\1", line))


def _settle(fn, line: str) -> str:
    # Every rewrite here only shortens or keeps the line, so this terminates.
    while True:
        fixed = fn(line)
        if fixed == line:
            return line
        line = fixed


def capitalize_first(line: str) -> str:
    """Uppercase the first character if (and only if) it is alphabetic."""
    if line and line[0].isalpha():
        return line[0].upper() + line[1:]
    return line


def restore_hard_wraps(text: str) -> str:
    """Join hard-wrapped lines back into paragraphs.

    Single newlines become spaces; a blank line separates paragraphs, and each
    paragraph ends up on its own line.
    """
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    paragraphs = []
    for block in re.split(r"\n[ \t]*\n", text):
        joined = _WHITESPACE.sub(" ", block).strip()
        if joined:
            paragraphs.append(joined)
    return "\n".join(paragraphs)


def _is_quoted(line: str) -> bool:
    return len(line) >= 2 and line[0] == '"' and line[-1] == '"'


def _curl_inner_quotes(line: str) -> str:
    # Straight quotes inside a line about to be wrapped would otherwise produce
    # '""' at the boundaries; alternate them into typographic quotes.
    out, opening = [], True
    for ch in line:
        if ch == '"':
            out.append("“" if opening else "”")
            opening = not opening
        else:
            out.append(ch)
    return "".join(out)


def wrap_as_speech(line: str) -> str:
    """Strip a leading dialogue dash and enclose the line in double quotes.

    >>> wrap_as_speech("- Hi there")
    '"Hi there"'
    >>> wrap_as_speech('"Okay."')
    '"Okay."'
    """
    if _is_quoted(line):
        return line
    line = _LEADING_DASH.sub("", line).strip()
    if not line:
        return ""
    if '"' in line:
        line = normalize_typography(_curl_inner_quotes(line))
    return f'"{line}"'


def clean_markup(line: str, wiki: bool = False) -> str:
    """Heuristic cleanup of mis-parsed HTML entities/tags (and wiki markup).

    Iterated to a fixed point so that doubly escaped input such as ``&amp;lt;``
    is fully resolved in one call.
    """

    def once(s: str) -> str:
        s = _ENTITY_RE.sub(lambda m: _ENTITIES[m.group(0)], s)
        s = _TAG_RE.sub(" ", s)
        if wiki:
            s = _WIKI_LINK_RE.sub(r"\1", s)
            s = _EXT_LINK_RE.sub(lambda m: m.group(1) or "", s)
            s = _EMPHASIS_RE.sub("", s)
        return s

    return _settle(once, line)


def _clean_and_normalize(line: str, wiki: bool) -> str:
    # Whitespace removal can re-form markup ("[ [x] ]"), so settle both together.
    return _settle(lambda s: normalize_typography(clean_markup(s, wiki)), line)


def _speech_line(line: str, capitalize: bool) -> str:
    line = normalize_typography(line)
    if not _is_quoted(line):
        line = normalize_typography(_LEADING_DASH.sub("", line))
    inner = normalize_typography(line[1:-1]) if _is_quoted(line) else line
    if '"' in inner:
        inner = normalize_typography(_curl_inner_quotes(inner))
    if capitalize:
        inner = capitalize_first(inner)
    return f'"{inner}"' if inner else ""


def _tabs_to_marker(line: str) -> str:
    return line.replace("\t", " [TAB] ")


def preprocess_source(doc: TextDocument) -> TextDocument:
    """Apply the rule set of ``doc.source`` and return the normalized document.

    Empty lines are dropped, except for Gutenberg where a single blank line is
    kept between paragraphs so that the output can be re-read with the same
    paragraph structure.
    """
    source = SourceKind.parse(doc.source)
    rules = _RULES.get(source)
    if rules is None:  # pragma: no cover - enum and table are kept in sync
        raise UnknownSource(str(source))
    if source is SourceKind.GUTENBERG:
        paragraphs = restore_hard_wraps("\n".join(doc.lines)).split("\n")
        out: list[str] = []
        for para in paragraphs:
            para = normalize_typography(para)
            if para:
                if out:
                    out.append("")
                out.append(para)
        return TextDocument(tuple(out), source)
    lines = (rules(line) for line in doc.lines)
    return TextDocument(tuple(line for line in lines if line), source)


def preprocess_text(text: str, source) -> str:
    """Convenience wrapper: raw file contents in, normalized file contents out."""
    return preprocess_source(TextDocument.from_text(text, source)).to_text()


_RULES = {
    SourceKind.CHILDES: lambda s: _speech_line(s, capitalize=True),
    SourceKind.BNC_DIALOGUE: lambda s: _speech_line(s, capitalize=True),
    SourceKind.CBT: normalize_typography,
    SourceKind.CHILDREN_STORIES: lambda s: normalize_typography(_tabs_to_marker(s)),
    SourceKind.GUTENBERG: normalize_typography,
    SourceKind.OPEN_SUBTITLES: lambda s: _speech_line(s, capitalize=False),
    SourceKind.SWITCHBOARD: lambda s: _speech_line(s, capitalize=False),
    SourceKind.QED: lambda s: _speech_line(_clean_and_normalize(s, wiki=False), capitalize=False),
    SourceKind.WIKIPEDIA: lambda s: _clean_and_normalize(s, wiki=True),
    SourceKind.SIMPLE_WIKIPEDIA: lambda s: _clean_and_normalize(s, wiki=True),
}
