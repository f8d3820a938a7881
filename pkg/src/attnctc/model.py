"""Encoder + attention head assembled into a trainable model.

The head walks the encoder's output frames one step per frame, so lattice
length equals encoder output length (input length after stack/skip).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttnConfig, HeadParams, init_head, run_head
from .ctc import LogPosteriorLattice, ctc_nll
from .encoder import Encoder, EncoderConfig, FeatureSequence
from .tensor import Tensor, add_n, log_softmax, mul, row


@dataclass
class ModelConfig:
    encoder: EncoderConfig
    attn: AttnConfig

    def __post_init__(self):
        if self.attn.n != self.encoder.proj_dim:
            raise ValueError(
                f"head width n={self.attn.n} != encoder projection {self.encoder.proj_dim}"
            )


class Model:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder, rng)
        self.head: HeadParams = init_head(cfg.attn, rng)

    def named_parameters(self):
        yield from self.encoder.named_parameters()
        yield from self.head.named()

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def logits_batch(self, x: np.ndarray) -> list[Tensor]:
        """(B, T', d) features -> T tensors of (B, K) logits."""
        frames = self.encoder.forward_batch(x)
        zs, _ = run_head(frames, self.cfg.attn, self.head)
        return zs

    def loss_batch(self, x: np.ndarray, labels: list[list[int]], blank_id: int = 0) -> Tensor:
        """Mean CTC loss over a batch of same-length feature sequences."""
        B = x.shape[0]
        if len(labels) != B:
            raise ValueError("label count != batch size")
        zs = self.logits_batch(x)
        log_rows = [log_softmax(z, axis=1) for z in zs]
        losses = []
        for i in range(B):
            rows_i = [row(lr, i) for lr in log_rows]
            losses.append(ctc_nll(rows_i, labels[i], blank_id=blank_id))
        return mul(add_n(losses), 1.0 / B)

    def lattice(self, f: FeatureSequence, blank_id: int = 0) -> LogPosteriorLattice:
        """Posterior lattice for one sequence (run outside any tape)."""
        zs = self.logits_batch(f.frames[None, :, :])
        logp = np.stack([log_softmax(z, axis=1).data[0] for z in zs])
        return LogPosteriorLattice(logp, blank_id=blank_id)
