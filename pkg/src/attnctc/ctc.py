"""CTC loss over a log-posterior lattice.

The label alphabet is extended with a blank; a length-T frame path maps to a
label sequence by collapsing repeats and then deleting blanks. The loss is
the negative log of the total probability of all paths collapsing to the
target, assuming per-frame conditional independence.

Two routes compute it:
  * ctc_loss_bruteforce enumerates every path (oracle, exponential in T);
  * ctc_nll runs the standard forward recursion over the blank-interleaved
    state lattice, in log space, on the autodiff tape. ctc_loss wraps it
    for plain lattices.

Log-domain zeros use the finite sentinel LOG_ZERO rather than -inf so that
logaddexp gradients never see inf - inf. An impossible target is a flagged
error (InfeasibleLabelError) or, from the bruteforce route, the explicit
INFEASIBLE_LOSS sentinel; neither is ever produced silently by rounding.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor, concat, gather, logaddexp, logsumexp, narrow, neg

LOG_ZERO = -1e30
INFEASIBLE_LOSS = 1e30

_BRUTEFORCE_PATH_LIMIT = 1_000_000


class InfeasibleLabelError(ValueError):
    """Target cannot be produced from the given number of frames."""


def collapse(path: Sequence[int], blank_id: int) -> list[int]:
    """Collapse a frame path to a label sequence: merge adjacent repeats,
    then drop blanks. Order matters ("aa-a" keeps both a's, "aaa" keeps one).
    """
    out: list[int] = []
    prev: int | None = None
    for p in path:
        if p != prev:
            if p != blank_id:
                out.append(p)
            prev = p
    return out


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames that can emit `labels`: one per label plus one separator
    blank per adjacent equal pair."""
    n = len(labels)
    for i in range(1, len(labels)):
        if labels[i] == labels[i - 1]:
            n += 1
    return n


def blank_interleave(labels: Sequence[int], blank_id: int) -> list[int]:
    """[blank, l1, blank, l2, ..., blank]; the CTC state sequence."""
    ext = [blank_id]
    for l in labels:
        ext.append(int(l))
        ext.append(blank_id)
    return ext


@dataclass
class LogPosteriorLattice:
    """(T, K) per-frame log posteriors plus the blank index. Each row must
    log-sum-exp to zero within 1e-9 (rows are normalized distributions)."""

    logp: np.ndarray
    blank_id: int = 0

    def __post_init__(self):
        self.logp = np.asarray(self.logp, dtype=np.float64)
        if self.logp.ndim != 2:
            raise ValueError(f"lattice must be (T, K), got {self.logp.shape}")
        if not 0 <= self.blank_id < self.logp.shape[1]:
            raise ValueError(f"blank_id {self.blank_id} outside K={self.logp.shape[1]}")

    @property
    def T(self) -> int:
        return self.logp.shape[0]

    @property
    def K(self) -> int:
        return self.logp.shape[1]

    def validate(self, tol: float = 1e-9) -> None:
        m = self.logp.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(self.logp - m).sum(axis=1))
        worst = float(np.abs(lse).max())
        if worst > tol:
            raise ValueError(f"lattice rows not normalized: max |logsumexp| = {worst:.3e}")


@dataclass
class LabelSequence:
    """Blank-free target label ids."""

    ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def check(self, blank_id: int) -> None:
        if any(i == blank_id for i in self.ids):
            raise ValueError("label sequence contains the blank id")

    def feasible(self, T: int) -> bool:
        return T >= min_frames(self.ids)


def _label_ids(lab) -> list[int]:
    if isinstance(lab, LabelSequence):
        return list(lab.ids)
    return [int(l) for l in lab]


def _as_logp(lat) -> tuple[np.ndarray, int]:
    if isinstance(lat, LogPosteriorLattice):
        return lat.logp, lat.blank_id
    return np.asarray(lat, dtype=np.float64), 0


def ctc_loss_bruteforce(lat, lab, blank_id: int | None = None) -> float:
    """Exact loss by full path enumeration. Only viable for K**T up to 1e6;
    exists to check the forward recursion, not to train with.

    Returns INFEASIBLE_LOSS when no path collapses to `lab`.
    """
    logp, default_blank = _as_logp(lat)
    blank = default_blank if blank_id is None else blank_id
    T, K = logp.shape
    if K ** T > _BRUTEFORCE_PATH_LIMIT:
        raise ValueError(f"bruteforce refuses K^T = {K}^{T} paths")
    target = _label_ids(lab)
    total = -np.inf
    for path in itertools.product(range(K), repeat=T):
        if collapse(path, blank) == target:
            lp = 0.0
            for t, k in enumerate(path):
                lp += logp[t, k]
            total = np.logaddexp(total, lp)
    if total == -np.inf:
        return INFEASIBLE_LOSS
    return float(-total)


def ctc_nll(rows: Sequence[Tensor], labels, blank_id: int = 0) -> Tensor:
    """Differentiable CTC negative log-likelihood.

    rows -- length-T sequence of (K,) log-posterior tensors (tape-recorded).
    Raises InfeasibleLabelError when T < min_frames(labels).
    """
    T = len(rows)
    labels = _label_ids(labels)
    if T == 0:
        raise InfeasibleLabelError("empty lattice")
    if T < min_frames(labels):
        raise InfeasibleLabelError(
            f"{len(labels)} labels need >= {min_frames(labels)} frames, got {T}"
        )
    ext = blank_interleave(labels, blank_id)
    S = len(ext)
    ext_idx = np.asarray(ext, dtype=np.intp)

    # state s may also arrive from s-2 when that hop does not skip a
    # required blank (distinct consecutive labels only)
    allow2 = np.zeros(S)
    for s in range(2, S):
        if ext[s] != blank_id and ext[s] != ext[s - 2]:
            allow2[s] = 1.0
    block2 = (1.0 - allow2) * LOG_ZERO
    allow2_t = Tensor(allow2)
    block2_t = Tensor(block2)

    init_mask = np.full(S, LOG_ZERO)
    init_mask[0] = 0.0
    if S > 1:
        init_mask[1] = 0.0
    pad2 = Tensor(np.full(2, LOG_ZERO))

    alpha = gather(rows[0], ext_idx) + Tensor(init_mask)
    for t in range(1, T):
        padded = concat([pad2, alpha])
        shift1 = narrow(padded, 0, 1, S)
        shift2 = narrow(padded, 0, 0, S)
        shift2 = shift2 * allow2_t + block2_t
        prev = logaddexp(alpha, shift1, shift2)
        alpha = gather(rows[t], ext_idx) + prev

    tail = min(2, S)
    final = narrow(alpha, 0, S - tail, tail)
    return neg(logsumexp(final))


def ctc_loss(lat, lab, blank_id: int | None = None) -> float:
    """Loss over a plain (already materialized) lattice; not differentiable."""
    logp, default_blank = _as_logp(lat)
    blank = default_blank if blank_id is None else blank_id
    rows = [Tensor(logp[t]) for t in range(logp.shape[0])]
    return ctc_nll(rows, _label_ids(lab), blank_id=blank).item()
