"""Greedy decoding and error-rate metrics.

Decoding takes the per-frame argmax (ties broken toward the lowest label
index), collapses the path, renders it through the charset, and splits on
spaces. No beam, lexicon, or external language model.

edit_distance is plain Levenshtein with unit costs; corpus WER/CER divide
total edits by total reference length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .charset import Charset, charset_decode
from .ctc import LogPosteriorLattice, collapse


@dataclass
class Transcript:
    words: list[str]

    def __post_init__(self):
        if any(w == "" for w in self.words):
            raise ValueError("empty word in transcript")

    @property
    def text(self) -> str:
        return " ".join(self.words)

    @classmethod
    def from_text(cls, text: str) -> "Transcript":
        return cls([w for w in text.split(" ") if w])


def greedy_path(lat: LogPosteriorLattice | np.ndarray) -> list[int]:
    logp = lat.logp if isinstance(lat, LogPosteriorLattice) else np.asarray(lat)
    return [int(np.argmax(row)) for row in logp]  # argmax takes the lowest index on ties


def greedy_decode(lat: LogPosteriorLattice, cs: Charset) -> Transcript:
    if lat.K != len(cs):
        raise ValueError(f"lattice width {lat.K} != charset size {len(cs)}")
    ids = collapse(greedy_path(lat), lat.blank_id)
    return Transcript.from_text(charset_decode(ids, cs))


def edit_distance(ref: list, hyp: list) -> tuple[int, int, int, int]:
    """Levenshtein alignment. Returns (distance, substitutions, insertions,
    deletions); insertions are hypothesis tokens with no reference partner.
    """
    R, H = len(ref), len(hyp)
    dist = np.zeros((R + 1, H + 1), dtype=np.int64)
    dist[:, 0] = np.arange(R + 1)
    dist[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            same = ref[i - 1] == hyp[j - 1]
            dist[i, j] = min(
                dist[i - 1, j - 1] + (0 if same else 1),
                dist[i - 1, j] + 1,
                dist[i, j - 1] + 1,
            )
    # backtrace for the operation breakdown
    i, j = R, H
    sub = ins = dele = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                sub += 1
            i -= 1
            j -= 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return int(dist[R, H]), sub, ins, dele


class UndefinedRateError(ZeroDivisionError):
    """Error rate against an empty reference is undefined."""


def error_rate(refs: list[list], hyps: list[list]) -> float:
    """Total edits over total reference tokens, across the corpus."""
    if len(refs) != len(hyps):
        raise ValueError("reference/hypothesis count mismatch")
    total_len = sum(len(r) for r in refs)
    if total_len == 0:
        raise UndefinedRateError("empty reference corpus")
    total_edits = sum(edit_distance(r, h)[0] for r, h in zip(refs, hyps))
    return total_edits / total_len


def wer(ref_texts: list[str], hyp_texts: list[str]) -> float:
    """Word error rate over whitespace-split words."""
    return error_rate([r.split() for r in ref_texts], [h.split() for h in hyp_texts])


def cer(ref_texts: list[str], hyp_texts: list[str]) -> float:
    """Character error rate over the raw text characters, spaces included."""
    return error_rate([list(r) for r in ref_texts], [list(h) for h in hyp_texts])
