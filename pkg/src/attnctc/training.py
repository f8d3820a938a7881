"""Training loop, ablation runner, and gradient checking.

SGD with momentum, gradients clipped by global norm. Batches are built by
exact-length bucketing: only sequences with identical frame counts share a
batch, so no padding or loss masking is ever needed (a batch is a clean
(B, T', d) block). The step size halves when dev CER stops improving.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .attention import MODES, AttnConfig
from .charset import Charset, charset_encode
from .ctc import min_frames
from .decoding import cer, greedy_decode, wer
from .encoder import EncoderConfig
from .model import Model, ModelConfig
from .tensor import GradTape, backward, clip_global_norm

log = logging.getLogger("attnctc")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; training state is unusable."""


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 14
    clip_norm: float = 5.0
    lr_decay: float = 0.5
    patience: int = 2
    seed: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("step size must be positive")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_cer: float
    dev_wer: float


@dataclass
class TrainResult:
    metrics: list[EpochMetrics]
    init_loss: float
    best_dev_cer: float
    best_epoch: int
    best_state: dict[str, np.ndarray]
    final_lr: float


class SgdMomentum:
    def __init__(self, params, lr: float, momentum: float):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v -= self.lr * p.grad
            p.data = p.data + v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def length_buckets(lengths: list[int], batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Indices grouped into same-length batches, shuffled at both levels."""
    order = rng.permutation(len(lengths))
    by_len: dict[int, list[int]] = {}
    for i in order:
        by_len.setdefault(lengths[int(i)], []).append(int(i))
    batches = []
    for length in sorted(by_len):
        group = by_len[length]
        for k in range(0, len(group), batch_size):
            batches.append(group[k:k + batch_size])
    perm = rng.permutation(len(batches))
    return [batches[int(i)] for i in perm]


def filter_feasible(pairs, labels, out_len) -> tuple[list, list]:
    """Drop utterances whose label sequence cannot fit the encoder output
    length; warn, never crash."""
    keep_pairs, keep_labels = [], []
    for (f, text), lab in zip(pairs, labels):
        T = out_len(f.frames.shape[0])
        if min_frames(lab) > T:
            log.warning("dropping infeasible utterance: %d labels need %d frames, have %d (%r)",
                        len(lab), min_frames(lab), T, text)
            continue
        keep_pairs.append((f, text))
        keep_labels.append(lab)
    return keep_pairs, keep_labels


def evaluate(model: Model, pairs, cs: Charset) -> tuple[float, float]:
    """Corpus (CER, WER) of greedy decodes against the references."""
    refs, hyps = [], []
    for f, text in pairs:
        lat = model.lattice(f, blank_id=cs.blank_id)
        hyps.append(greedy_decode(lat, cs).text)
        refs.append(text)
    return cer(refs, hyps), wer(refs, hyps)


def mean_loss(model: Model, pairs, labels, batches, blank_id: int) -> float:
    """Forward-only mean loss over the given batches (no tape)."""
    total, count = 0.0, 0
    for batch in batches:
        x = np.stack([pairs[i][0].frames for i in batch])
        lab = [labels[i] for i in batch]
        total += model.loss_batch(x, lab, blank_id=blank_id).item() * len(batch)
        count += len(batch)
    return total / max(count, 1)


def train(model: Model, train_pairs, dev_pairs, cs: Charset, tc: TrainConfig,
          metrics_path=None) -> TrainResult:
    enc = model.cfg.encoder

    def out_len(Tp: int) -> int:
        return -(-Tp // enc.skip)

    labels = [charset_encode(text, cs) for _, text in train_pairs]
    train_pairs, labels = filter_feasible(train_pairs, labels, out_len)
    if not train_pairs:
        raise ValueError("no feasible training utterances")

    rng = np.random.default_rng(tc.seed)
    params = model.parameters()
    names = [n for n, _ in model.named_parameters()]
    opt = SgdMomentum(params, tc.lr, tc.momentum)
    lengths = [f.frames.shape[0] for f, _ in train_pairs]

    init_batches = length_buckets(lengths, tc.batch_size, np.random.default_rng(tc.seed))
    init_loss = mean_loss(model, train_pairs, labels, init_batches, cs.blank_id)

    best_cer = np.inf
    best_epoch = -1
    best_state = {n: t.data.copy() for n, t in zip(names, params)}
    bad_epochs = 0
    metrics: list[EpochMetrics] = []

    for epoch in range(1, tc.epochs + 1):
        t0 = time.time()
        total, count = 0.0, 0
        for batch in length_buckets(lengths, tc.batch_size, rng):
            x = np.stack([train_pairs[i][0].frames for i in batch])
            lab = [labels[i] for i in batch]
            opt.zero_grad()
            with GradTape():
                loss = model.loss_batch(x, lab, blank_id=cs.blank_id)
                val = loss.item()
                if not np.isfinite(val):
                    raise TrainingDivergedError(
                        f"non-finite loss {val} at epoch {epoch} (lr={opt.lr:g}); "
                        "lower the step size or raise the clip norm"
                    )
                backward(loss)
            clip_global_norm(params, tc.clip_norm)
            opt.step()
            total += val * len(batch)
            count += len(batch)

        train_loss = total / count
        dev_cer, dev_wer = evaluate(model, dev_pairs, cs)
        metrics.append(EpochMetrics(epoch, train_loss, dev_cer, dev_wer))
        log.info("epoch %d: loss %.4f dev CER %.4f dev WER %.4f (%.1fs, lr %g)",
                 epoch, train_loss, dev_cer, dev_wer, time.time() - t0, opt.lr)

        if dev_cer < best_cer - 1e-12:
            best_cer = dev_cer
            best_epoch = epoch
            best_state = {n: t.data.copy() for n, t in zip(names, params)}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tc.patience:
                opt.lr *= tc.lr_decay
                bad_epochs = 0
                log.info("dev CER plateau: step size now %g", opt.lr)

    if metrics_path is not None:
        write_metrics(metrics_path, metrics)
    if tc.checkpoint_path is not None:
        from .checkpoint import save_checkpoint
        restore = {n: t.data.copy() for n, t in zip(names, params)}
        load_state(model, best_state)
        save_checkpoint(tc.checkpoint_path, model, cs)
        load_state(model, restore)

    return TrainResult(metrics, init_loss, best_cer, best_epoch, best_state, opt.lr)


def load_state(model: Model, state: dict[str, np.ndarray]) -> None:
    for name, t in model.named_parameters():
        t.data = state[name].copy()


def write_metrics(path, metrics: list[EpochMetrics]) -> None:
    """One line per epoch: epoch, train loss, dev CER, dev WER (tab-separated)."""
    with open(path, "w") as fh:
        fh.write("epoch\ttrain_loss\tdev_cer\tdev_wer\n")
        for m in metrics:
            fh.write(f"{m.epoch}\t{m.train_loss:.6f}\t{m.dev_cer:.6f}\t{m.dev_wer:.6f}\n")


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    mode: str
    cer: float
    wer: float
    rel_wer: float  # percent improvement vs the vanilla row


def make_model_config(mode: str, in_dim: int, K: int, *, n: int = 32, tau: int = 3,
                      layers: int = 1, cells: int = 32, n_f: int = 4, w_f: int = 3,
                      bidirectional: bool = False, stack: int = 1, skip: int = 1) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(in_dim=in_dim, layers=layers, cells_per_dir=cells,
                              bidirectional=bidirectional, stack=stack, skip=skip,
                              proj_dim=n),
        attn=AttnConfig(tau=tau, mode=mode, n=n, K=K, n_f=n_f, w_f=w_f),
    )


def ablate(train_pairs, dev_pairs, test_pairs, cs: Charset, tc: TrainConfig,
           modes=MODES, model_kw: dict | None = None) -> list[AblationRow]:
    """Train every mode with identical seeds and budgets; score on test."""
    in_dim = train_pairs[0][0].frames.shape[1]
    rows = []
    for mode in modes:
        cfg = make_model_config(mode, in_dim, len(cs), **(model_kw or {}))
        model = Model(cfg, np.random.default_rng(tc.seed))
        result = train(model, list(train_pairs), dev_pairs, cs, tc)
        load_state(model, result.best_state)
        test_cer, test_wer = evaluate(model, test_pairs, cs)
        rows.append(AblationRow(mode, test_cer, test_wer, 0.0))
        log.info("ablate %s: test CER %.4f WER %.4f", mode, test_cer, test_wer)
    base = rows[0].wer if rows and rows[0].mode == "vanilla" else None
    if base is not None and base > 0:
        for r in rows:
            r.rel_wer = 100.0 * (base - r.wer) / base
    return rows


def format_ablation_table(rows: list[AblationRow]) -> str:
    """CER/WER per mode, relative WER improvement vs vanilla in parentheses."""
    lines = [f"{'model':<10} {'CER%':>8} {'WER%':>8} {'rel.':>10}"]
    for r in rows:
        lines.append(f"{r.mode:<10} {100 * r.cer:>8.2f} {100 * r.wer:>8.2f}"
                     f"   ({r.rel_wer:.2f}%)")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# finite-difference audit of the assembled model
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    mode: str
    per_tensor: dict[str, float]
    max_rel_err: float
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def format(self) -> str:
        lines = [f"mode {self.mode}: max relative error {self.max_rel_err:.3e} "
                 f"({'PASS' if self.passed else 'FAIL'} at {self.tol:g})"]
        for name, err in sorted(self.per_tensor.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {name:<24} {err:.3e}")
        return "\n".join(lines)


def grad_check(mode: str, seed: int = 0, *, n: int = 8, K: int = 5, tau: int = 2,
               T: int = 6, d: int = 4, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Central finite differences vs the tape for every parameter entry of a
    compact model in the given mode, through the full CTC loss."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        encoder=EncoderConfig(in_dim=d, layers=1, cells_per_dir=n, proj_dim=n),
        attn=AttnConfig(tau=tau, mode=mode, n=n, K=K),
    )
    model = Model(cfg, rng)
    x = rng.normal(size=(1, T, d)) * 0.8
    labels = [rng.integers(1, K, size=2).tolist()]

    with GradTape():
        backward(model.loss_batch(x, labels))

    per_tensor: dict[str, float] = {}
    worst = 0.0
    for name, t in model.named_parameters():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = model.loss_batch(x, labels).item()
            flat[i] = orig - eps
            fm = model.loss_batch(x, labels).item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            denom = max(abs(gflat[i]), abs(num), 1e-4)
            err = max(err, abs(gflat[i] - num) / denom)
        per_tensor[name] = err
        worst = max(worst, err)
        t.grad = None
    return GradCheckReport(mode, per_tensor, worst, tol)
