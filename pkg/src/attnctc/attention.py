"""Windowed attention head producing per-frame label logits.

At output step u the head looks at a window of encoder features
h_{u-tau} .. h_{u+tau} (C = 2*tau + 1 slots, zero vectors past the
sequence edges). Each slot is filtered by its own matrix (time
convolution), the filtered slots are mixed by attention weights into a
context vector, and an affine map plus softmax yields the label posterior:

    g_t = W'_{u-t} h_t
    c_u = gamma * sum_t alpha_{u,t} g_t
    z_u = W_soft c_u + b_soft,   y_u = softmax(z_u)

The mode ladder turns features on cumulatively:

    vanilla  z_u = W_soft h_u + b_soft (no window at all)
    tc       alpha fixed uniform at 1/C
    tc+ca    alpha = softmax_t( v^T tanh(U z_{u-1} + W g_t + b) )
    tc+ha    adds a location term V f_t, f = F * alpha_{u-1} (1-D conv)
    +lm      scores condition on an LSTM state z^LM_{u-1} driven by
             [z_{u-1}; c_{u-1}] instead of raw z_{u-1}
    +coma    vector scores tanh(...) without v, normalized per component;
             context uses Hadamard weighting c_u = gamma * sum alpha ⊙ g

gamma stays fixed at C in every mode; removing it hurt in every trial.

Everything is batched: one "frame" is a (B, n) tensor and scalar attention
weights live in a (B, C) tensor (a list of C (B, n) tensors under +coma).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import (
    LstmParams,
    Tensor,
    add,
    add_n,
    concat,
    div,
    exp,
    init_lstm,
    lstm_cell,
    matmul,
    mul,
    narrow,
    reshape,
    row,
    softmax,
    sum as tsum,
    tanh,
    transpose,
    uniform_init,
)

MODES = ("vanilla", "tc", "tc+ca", "tc+ha", "+lm", "+coma")


class InvariantError(AssertionError):
    """An internal numeric invariant failed (bug, not bad user input)."""


@dataclass
class AttnConfig:
    tau: int
    mode: str
    n: int
    K: int
    n_f: int = 4
    w_f: int = 3
    gamma: float | None = None  # None -> C

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.uses_location and self.w_f > self.C:
            raise ValueError(f"location kernel w_f={self.w_f} wider than window C={self.C}")
        if self.gamma is None:
            self.gamma = float(self.C)

    @property
    def C(self) -> int:
        return 2 * self.tau + 1

    @property
    def uses_window(self) -> bool:
        return self.mode != "vanilla"

    @property
    def uses_scores(self) -> bool:
        return self.mode in ("tc+ca", "tc+ha", "+lm", "+coma")

    @property
    def uses_location(self) -> bool:
        return self.mode in ("tc+ha", "+lm", "+coma")

    @property
    def uses_lm(self) -> bool:
        return self.mode in ("+lm", "+coma")

    @property
    def uses_coma(self) -> bool:
        return self.mode == "+coma"

    @property
    def state_dim(self) -> int:
        """Width of the score conditioning vector: z^LM (n) under the
        implicit LM, raw logits z (K) otherwise."""
        return self.n if self.uses_lm else self.K


@dataclass
class AttentionState:
    """Recurrent quantities carried from step u-1 into step u.

    alpha_prev: (B, C) weights, or a list of C (B, n) tensors under +coma.
    z_prev: (B, K) logits. lm_h/lm_c: (B, n) LSTM state. c_prev: (B, n).
    """

    alpha_prev: Tensor | list[Tensor] | None
    z_prev: Tensor
    lm_h: Tensor
    lm_c: Tensor
    c_prev: Tensor


@dataclass
class HeadParams:
    """Only the fields a mode needs are populated; the rest stay None."""

    w_soft: Tensor
    b_soft: Tensor
    tc_w: list[Tensor] | None = None          # C matrices (n, n)
    u_mat: Tensor | None = None               # (n, state_dim)
    w_mat: Tensor | None = None               # (n, n)
    b_vec: Tensor | None = None               # (n,)
    v_vec: Tensor | None = None               # (n,)   scalar-score direction
    v_loc: Tensor | None = None               # (n, n_f)
    f_loc: Tensor | None = None               # (n_f, w_f) location kernels
    lm: LstmParams | None = None

    def named(self, prefix: str = "head"):
        if self.tc_w is not None:
            for j, w in enumerate(self.tc_w):
                yield f"{prefix}.tc.w{j}", w
        for nm in ("u_mat", "w_mat", "b_vec", "v_vec", "v_loc", "f_loc"):
            t = getattr(self, nm)
            if t is not None:
                yield f"{prefix}.score.{nm}", t
        if self.lm is not None:
            yield from self.lm.named(f"{prefix}.lm")
        yield f"{prefix}.soft.w", self.w_soft
        yield f"{prefix}.soft.b", self.b_soft


def init_head(cfg: AttnConfig, rng: np.random.Generator) -> HeadParams:
    n, K = cfg.n, cfg.K
    p = HeadParams(
        w_soft=uniform_init(rng, (K, n), n),
        b_soft=uniform_init(rng, (K,), n),
    )
    if cfg.uses_window:
        p.tc_w = [uniform_init(rng, (n, n), n) for _ in range(cfg.C)]
    if cfg.uses_scores:
        sd = cfg.state_dim
        p.u_mat = uniform_init(rng, (n, sd), sd)
        p.w_mat = uniform_init(rng, (n, n), n)
        p.b_vec = uniform_init(rng, (n,), n)
        if not cfg.uses_coma:
            p.v_vec = uniform_init(rng, (n,), n)
    if cfg.uses_location:
        p.v_loc = uniform_init(rng, (n, cfg.n_f), cfg.n_f)
        p.f_loc = uniform_init(rng, (cfg.n_f, cfg.w_f), cfg.w_f)
    if cfg.uses_lm:
        p.lm = init_lstm(rng, K + n, n)
    return p


def init_state(cfg: AttnConfig, batch: int) -> AttentionState:
    """State entering u = 0: uniform attention, zero logits/context/LM."""
    C, n, K = cfg.C, cfg.n, cfg.K
    if cfg.uses_coma:
        alpha = [Tensor(np.full((batch, n), 1.0 / C)) for _ in range(C)]
    elif cfg.uses_window:
        alpha = Tensor(np.full((batch, C), 1.0 / C))
    else:
        alpha = None
    return AttentionState(
        alpha_prev=alpha,
        z_prev=Tensor(np.zeros((batch, K))),
        lm_h=Tensor(np.zeros((batch, n))),
        lm_c=Tensor(np.zeros((batch, n))),
        c_prev=Tensor(np.zeros((batch, n))),
    )


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------

def tc_filter(frames: Sequence[Tensor], tc_w: Sequence[Tensor], u: int, tau: int) -> list[Tensor]:
    """Filtered window [g_0 .. g_{C-1}], slot j holding W'_j h_{u-tau+j}.
    Frames outside [0, T) enter as zero vectors."""
    T = len(frames)
    B = frames[0].shape[0]
    n = tc_w[0].shape[0]
    out = []
    for j in range(2 * tau + 1):
        t = u - tau + j
        if 0 <= t < T:
            out.append(matmul(frames[t], transpose(tc_w[j])))
        else:
            out.append(Tensor(np.zeros((B, n))))
    return out


def annotate(alpha, g: Sequence[Tensor], gamma: float) -> Tensor:
    """Context vector c_u = gamma * sum_t alpha_t (*) g_t; scalar weights
    scale slots, COMA weights (list form) multiply elementwise."""
    C = len(g)
    if isinstance(alpha, list):
        comp_sums = np.zeros_like(alpha[0].data)
        for a in alpha:
            comp_sums = comp_sums + a.data
        if np.max(np.abs(comp_sums - 1.0)) > 1e-6:
            raise InvariantError("component attention weights not normalized")
        terms = [mul(a, gj) for a, gj in zip(alpha, g)]
    else:
        sums = alpha.data.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > 1e-6:
            raise InvariantError("attention weights not normalized")
        terms = [mul(narrow(alpha, 1, j, 1), g[j]) for j in range(C)]
    return mul(add_n(terms), float(gamma))


def _aligned_prev_alpha(alpha_prev, C: int) -> Tensor:
    """Previous-step weights re-indexed to the current window's slots.

    Window u starts one frame later than window u-1, so current slot j saw
    previous slot j+1; the final slot was outside the old window and reads 0.
    COMA weights collapse to their per-slot component mean first.
    """
    if isinstance(alpha_prev, list):
        n = alpha_prev[0].shape[1]
        cols = [mul(tsum(a, axis=1, keepdims=True), 1.0 / n) for a in alpha_prev]
        B = alpha_prev[0].shape[0]
        shifted = cols[1:] + [Tensor(np.zeros((B, 1)))]
        return concat(shifted, axis=1)
    B = alpha_prev.shape[0]
    return concat([narrow(alpha_prev, 1, 1, C - 1), Tensor(np.zeros((B, 1)))], axis=1)


def location_features(alpha_prev, f_loc: Tensor, C: int) -> list[Tensor]:
    """Same-padded 1-D convolution of the (aligned) previous weights with
    n_f kernels; slot j gets f_j in R^{n_f}."""
    n_f, w_f = f_loc.shape
    aligned = _aligned_prev_alpha(alpha_prev, C)
    kernel_cols = [reshape(narrow(f_loc, 1, d, 1), (n_f,)) for d in range(w_f)]
    off = (w_f - 1) // 2
    feats = []
    for j in range(C):
        terms = []
        for d in range(w_f):
            s = j + d - off
            if 0 <= s < C:
                terms.append(mul(narrow(aligned, 1, s, 1), kernel_cols[d]))
        feats.append(add_n(terms))
    return feats


def score_preacts(state_vec: Tensor, g: Sequence[Tensor], p: HeadParams,
                  loc: Sequence[Tensor] | None) -> list[Tensor]:
    """Per-slot pre-activations U s + W g_j (+ V f_j) + b, each (B, n)."""
    su = matmul(state_vec, transpose(p.u_mat))
    wt = transpose(p.w_mat)
    vt = transpose(p.v_loc) if loc is not None else None
    pres = []
    for j, gj in enumerate(g):
        pre = add(su, matmul(gj, wt))
        if loc is not None:
            pre = add(pre, matmul(loc[j], vt))
        pres.append(add(pre, p.b_vec))
    return pres


def score_content(state_vec: Tensor, g_t: Tensor, p: HeadParams) -> Tensor:
    """e_{u,t} = v^T tanh(U s + W g_t + b), shape (B, 1)."""
    pre = score_preacts(state_vec, [g_t], p, None)[0]
    return tsum(mul(tanh(pre), p.v_vec), axis=1, keepdims=True)


def score_hybrid(state_vec: Tensor, g_t: Tensor, f_t: Tensor, p: HeadParams) -> Tensor:
    """Content score plus the location term V f_t."""
    pre = score_preacts(state_vec, [g_t], p, [f_t])[0]
    return tsum(mul(tanh(pre), p.v_vec), axis=1, keepdims=True)


def normalize_scores(e: Sequence[Tensor]) -> Tensor:
    """C scalar scores (B, 1) -> (B, C) weights summing to one."""
    return softmax(concat(list(e), axis=1), axis=1)


def coma_score(state_vec: Tensor, g_t: Tensor, f_t: Tensor | None, p: HeadParams) -> Tensor:
    """Vector score tanh(U s + W g_t + V f_t + b), no inner product."""
    loc = [f_t] if f_t is not None else None
    return tanh(score_preacts(state_vec, [g_t], p, loc)[0])


def coma_normalize(E: Sequence[Tensor]) -> list[Tensor]:
    """Normalize scores across slots separately for every component j:
    A[t][j] = exp(E[t][j]) / sum_t' exp(E[t'][j])."""
    m = E[0].data
    for e in E[1:]:
        m = np.maximum(m, e.data)
    shift = Tensor(m)  # constant; softmax is shift-invariant
    exps = [exp(e - shift) for e in E]
    denom = add_n(exps)
    return [div(ex, denom) for ex in exps]


def lm_step(z_prev: Tensor, c_prev: Tensor, lm_h: Tensor, lm_c: Tensor,
            lm: LstmParams) -> tuple[Tensor, Tensor, Tensor]:
    """Implicit-LM recurrence: one LSTM step over [z_{u-1}; c_{u-1}].
    Returns (z_lm, new_h, new_c); z_lm is the new hidden state."""
    x = concat([z_prev, c_prev], axis=1)
    h, c = lstm_cell(x, lm_h, lm_c, lm)
    return h, h, c


# ---------------------------------------------------------------------------
# the per-step composition
# ---------------------------------------------------------------------------

def head_step(frames: Sequence[Tensor], u: int, state: AttentionState,
              cfg: AttnConfig, p: HeadParams) -> tuple[Tensor, Tensor, AttentionState]:
    """One output step: (z_u, y_u, state for u+1). frames: T tensors (B, n)."""
    wt_soft = transpose(p.w_soft)

    if not cfg.uses_window:
        z = add(matmul(frames[u], wt_soft), p.b_soft)
        y = softmax(z, axis=1)
        new_state = AttentionState(state.alpha_prev, z, state.lm_h, state.lm_c, state.c_prev)
        return z, y, new_state

    g = tc_filter(frames, p.tc_w, u, cfg.tau)
    B = frames[0].shape[0]
    C = cfg.C

    lm_h, lm_c = state.lm_h, state.lm_c
    if cfg.uses_lm:
        state_vec, lm_h, lm_c = lm_step(state.z_prev, state.c_prev, lm_h, lm_c, p.lm)
    else:
        state_vec = state.z_prev

    if cfg.uses_coma:
        loc = location_features(state.alpha_prev, p.f_loc, C)
        E = [tanh(pre) for pre in score_preacts(state_vec, g, p, loc)]
        alpha = coma_normalize(E)
    elif cfg.uses_scores:
        loc = location_features(state.alpha_prev, p.f_loc, C) if cfg.uses_location else None
        pres = score_preacts(state_vec, g, p, loc)
        e = [tsum(mul(tanh(pre), p.v_vec), axis=1, keepdims=True) for pre in pres]
        alpha = normalize_scores(e)
    else:
        alpha = Tensor(np.full((B, C), 1.0 / C))

    c = annotate(alpha, g, cfg.gamma)
    z = add(matmul(c, wt_soft), p.b_soft)
    y = softmax(z, axis=1)
    return z, y, AttentionState(alpha, z, lm_h, lm_c, c)


def run_head(frames: Sequence[Tensor], cfg: AttnConfig, p: HeadParams) -> tuple[list[Tensor], list[Tensor]]:
    """All steps u = 0..T-1 with the standard initial state.
    Returns ([z_u], [y_u])."""
    state = init_state(cfg, frames[0].shape[0])
    zs, ys = [], []
    for u in range(len(frames)):
        z, y, state = head_step(frames, u, state, cfg, p)
        zs.append(z)
        ys.append(y)
    return zs, ys


def frames_from_matrix(h: Tensor) -> list[Tensor]:
    """(T, n) tensor -> list of T (1, n) frames (batch of one)."""
    return [reshape(row(h, t), (1, -1)) for t in range(h.shape[0])]
