"""Label inventories mapping text to integer ids and back.

A charset is an ordered list of symbol strings. Two kinds of marker symbols
exist: the blank (never produced by decoding) and the space. Beyond plain
single characters, units may be multi-character ("ll", "'s") or a single
uppercase letter, which stands for its lowercase counterpart in word-initial
position only. Encoding is greedy longest-match over each unit's surface
form; at a word start a capital unit beats a lowercase unit of the same
surface length.

File format: one symbol per line; the lines `<blank>` and `<space>` declare
the two markers at their positions.
"""

from __future__ import annotations

from dataclasses import dataclass

BLANK_MARKER = "<blank>"
SPACE_MARKER = "<space>"


class EncodingError(ValueError):
    """Text contains a stretch no charset unit covers."""


@dataclass
class Charset:
    symbols: list[str]
    blank_id: int
    space_id: int

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in charset")
        for i, marker in ((self.blank_id, BLANK_MARKER), (self.space_id, SPACE_MARKER)):
            if not 0 <= i < len(self.symbols):
                raise ValueError(f"{marker} id {i} out of range")
        if self.symbols[self.blank_id] != BLANK_MARKER:
            raise ValueError("blank_id does not point at the blank marker")
        if self.symbols[self.space_id] != SPACE_MARKER:
            raise ValueError("space_id does not point at the space marker")
        if self.symbols.count(BLANK_MARKER) != 1:
            raise ValueError("blank must appear exactly once")

    def __len__(self) -> int:
        return len(self.symbols)

    def surface(self, sym_id: int) -> str:
        """Text a unit produces when decoded."""
        s = self.symbols[sym_id]
        if sym_id == self.blank_id:
            return ""
        if sym_id == self.space_id:
            return " "
        if self.is_capital(sym_id):
            return s.lower()
        return s

    def is_capital(self, sym_id: int) -> bool:
        s = self.symbols[sym_id]
        return len(s) == 1 and s.isalpha() and s.isupper()


def charset_encode(text: str, cs: Charset) -> list[int]:
    """Greedy longest-match tokenization of `text` into unit ids.

    Word-initial positions prefer the capital unit among equal-length
    matches; blanks are never emitted. Raises EncodingError when no unit
    matches the current position.
    """
    # index surfaces once: surface -> (lowercase unit id, capital unit id)
    plain: dict[str, int] = {}
    capital: dict[str, int] = {}
    for i, s in enumerate(cs.symbols):
        if i == cs.blank_id or i == cs.space_id:
            continue
        if cs.is_capital(i):
            capital[s.lower()] = i
        else:
            plain[s] = i
    max_len = max((len(s) for s in list(plain) + list(capital)), default=1)

    ids: list[int] = []
    pos = 0
    word_start = True
    while pos < len(text):
        ch = text[pos]
        if ch == " ":
            ids.append(cs.space_id)
            pos += 1
            word_start = True
            continue
        match_id = None
        matched = 0
        for length in range(min(max_len, len(text) - pos), 0, -1):
            piece = text[pos:pos + length]
            if word_start and piece in capital:
                match_id = capital[piece]
                matched = length
                break
            if piece in plain:
                match_id = plain[piece]
                matched = length
                break
        if match_id is None:
            raise EncodingError(f"cannot encode {text[pos:pos + 8]!r} at position {pos}")
        ids.append(match_id)
        pos += matched
        word_start = False
    return ids


def charset_decode(ids, cs: Charset) -> str:
    return "".join(cs.surface(int(i)) for i in ids)


def load_charset(path) -> Charset:
    symbols: list[str] = []
    blank_id = space_id = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line == BLANK_MARKER:
                blank_id = len(symbols)
            elif line == SPACE_MARKER:
                space_id = len(symbols)
            symbols.append(line)
    if blank_id is None or space_id is None:
        raise ValueError("charset file must declare <blank> and <space>")
    return Charset(symbols, blank_id, space_id)


def save_charset(path, cs: Charset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in cs.symbols:
            fh.write(s + "\n")


def charset_28() -> Charset:
    """Blank + space + a-z: the minimal lowercase inventory."""
    symbols = [BLANK_MARKER, SPACE_MARKER] + [chr(c) for c in range(ord("a"), ord("z") + 1)]
    return Charset(symbols, blank_id=0, space_id=1)


_DOUBLED = [c + c for c in "abcdefghiklmnoprstuvwxyz"]  # 24: jj and qq omitted
_APOSTROPHE = ["'s", "'t", "'d", "'m", "'re"]


def charset_83() -> Charset:
    """A representative larger inventory: lowercase letters, word-initial
    capitals, doubled-letter units, and common apostrophe suffixes.
    83 = 1 blank + 1 space + 26 + 26 + 24 + 5."""
    symbols = [BLANK_MARKER, SPACE_MARKER]
    symbols += [chr(c) for c in range(ord("a"), ord("z") + 1)]
    symbols += [chr(c) for c in range(ord("A"), ord("Z") + 1)]
    symbols += _DOUBLED
    symbols += _APOSTROPHE
    cs = Charset(symbols, blank_id=0, space_id=1)
    assert len(cs) == 83
    return cs
