"""Synthetic sequence tasks: each label has a prototype feature vector,
utterances emit prototypes for a few frames each under Gaussian noise.

The "toy" preset is the standard desk-scale task every convergence and
pipeline test runs on: 8 emitting symbols (7 letters + space) + blank,
16-dim unit prototypes, 2-5 frames per label, sigma 0.3, 3-8 labels per
utterance. Labels follow a first-order chain with a preferred successor
per symbol, so models that exploit label context have something real to
learn; the chain is doubly stochastic, which keeps the marginal label
distribution exactly uniform. Generation is bit-reproducible from the
spec seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .charset import BLANK_MARKER, SPACE_MARKER, Charset, charset_decode, charset_encode, load_charset, save_charset
from .encoder import FeatureSequence, read_features, write_features


@dataclass
class SynthTaskSpec:
    charset: Charset
    prototypes: np.ndarray          # (|charset|, d_base); the blank row is unused
    dur_min: int
    dur_max: int
    sigma: float
    len_min: int
    len_max: int
    seed: int
    frame_period: float = 10.0
    # optional label chain, indexed in emitting_ids order; row i is the
    # distribution of the next label given current label emitting_ids[i].
    # None means labels are drawn iid uniform.
    transition: np.ndarray | None = None

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.shape[0] != len(self.charset):
            raise ValueError("need one prototype row per charset symbol")
        if self.dur_min < 1 or self.dur_max < self.dur_min:
            raise ValueError("bad duration range")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.len_min < 1 or self.len_max < self.len_min:
            raise ValueError("bad utterance length range")
        if self.transition is not None:
            m = len(self.emitting_ids)
            self.transition = np.asarray(self.transition, dtype=np.float64)
            if self.transition.shape != (m, m):
                raise ValueError(f"transition must be ({m}, {m})")
            if np.any(self.transition < 0):
                raise ValueError("transition entries must be >= 0")
            if not np.allclose(self.transition.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("transition rows must sum to 1")

    @property
    def d_base(self) -> int:
        return self.prototypes.shape[1]

    @property
    def emitting_ids(self) -> list[int]:
        return [i for i in range(len(self.charset)) if i != self.charset.blank_id]


def toy_charset() -> Charset:
    """Blank + space + a..g: nine ids, eight of them emitting."""
    symbols = [BLANK_MARKER, SPACE_MARKER] + list("abcdefg")
    return Charset(symbols, blank_id=0, space_id=1)


# probability mass a toy-task label puts on its preferred successor
_TOY_SUCCESSOR_P = 0.7


def successor_chain(m: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Row-stochastic (m, m) chain: each state sends mass p to its successor
    in a random single cycle and spreads the rest evenly. A single cycle has
    no fixed points and makes the matrix doubly stochastic, so the stationary
    distribution is uniform."""
    if not (0.0 <= p <= 1.0) or m < 2:
        raise ValueError("need m >= 2 and p in [0, 1]")
    trans = np.full((m, m), (1.0 - p) / (m - 1))
    order = rng.permutation(m)
    for i in range(m):
        trans[order[i], order[(i + 1) % m]] = p
    return trans


def toy_task_spec(seed: int = 1234, d_base: int = 16, sigma: float = 0.3) -> SynthTaskSpec:
    """The standard toy task. Prototypes are random unit vectors (nearly
    orthogonal at d_base=16), and the label chain's successor cycle is drawn
    from the same stream, all fixed by `seed`."""
    cs = toy_charset()
    proto_rng = np.random.default_rng(seed)
    protos = proto_rng.normal(size=(len(cs), d_base))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    protos[cs.blank_id] = 0.0
    trans = successor_chain(len(cs) - 1, _TOY_SUCCESSOR_P, proto_rng)
    return SynthTaskSpec(
        charset=cs, prototypes=protos,
        dur_min=2, dur_max=5, sigma=sigma,
        len_min=3, len_max=8, seed=seed,
        transition=trans,
    )


def sample_label_ids(spec: SynthTaskSpec, length: int, rng: np.random.Generator) -> list[int]:
    """Label ids for one utterance: iid uniform over emitting symbols, or a
    walk on spec.transition started from its uniform stationary draw."""
    emit = spec.emitting_ids
    if spec.transition is None:
        return [int(i) for i in rng.choice(emit, size=length)]
    pos = [int(rng.integers(len(emit)))]
    for _ in range(length - 1):
        pos.append(int(rng.choice(len(emit), p=spec.transition[pos[-1]])))
    return [emit[k] for k in pos]


def gen_utterance(spec: SynthTaskSpec, rng: np.random.Generator) -> tuple[FeatureSequence, str]:
    L = int(rng.integers(spec.len_min, spec.len_max + 1))
    ids = sample_label_ids(spec, L, rng)
    frames = []
    for i in ids:
        dur = int(rng.integers(spec.dur_min, spec.dur_max + 1))
        block = np.tile(spec.prototypes[i], (dur, 1))
        if spec.sigma > 0:
            block = block + spec.sigma * rng.normal(size=block.shape)
        frames.append(block)
    feats = FeatureSequence(np.concatenate(frames, axis=0), frame_period=spec.frame_period)
    return feats, charset_decode(ids, spec.charset)


def gen_dataset(spec: SynthTaskSpec, count: int,
                rng: np.random.Generator | None = None) -> list[tuple[FeatureSequence, str]]:
    """`count` utterances from the spec's seeded stream (or a caller-owned
    one, for generating consecutive splits)."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    return [gen_utterance(spec, rng) for _ in range(count)]


def gen_splits(spec: SynthTaskSpec, n_train: int = 2000, n_dev: int = 200,
               n_test: int = 200):
    """Train/dev/test drawn consecutively from one seeded stream."""
    rng = np.random.default_rng(spec.seed)
    train = gen_dataset(spec, n_train, rng)
    dev = gen_dataset(spec, n_dev, rng)
    test = gen_dataset(spec, n_test, rng)
    return train, dev, test


def labels_for(text: str, cs: Charset) -> list[int]:
    return charset_encode(text, cs)


# ---------------------------------------------------------------------------
# on-disk dataset layout: <dir>/charset.txt, <dir>/<split>/uttNNNNN.feat,
# <dir>/<split>/refs.txt with "uttid<TAB>text" lines
# ---------------------------------------------------------------------------

def save_split(split_dir, pairs) -> None:
    os.makedirs(split_dir, exist_ok=True)
    with open(os.path.join(split_dir, "refs.txt"), "w", encoding="utf-8") as fh:
        for i, (feats, text) in enumerate(pairs):
            uttid = f"utt{i:05d}"
            write_features(os.path.join(split_dir, uttid + ".feat"), feats)
            fh.write(f"{uttid}\t{text}\n")


def load_split(split_dir) -> list[tuple[str, FeatureSequence, str]]:
    out = []
    with open(os.path.join(split_dir, "refs.txt"), encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            uttid, _, text = line.partition("\t")
            feats = read_features(os.path.join(split_dir, uttid + ".feat"))
            out.append((uttid, feats, text))
    return out


def save_dataset(root, spec: SynthTaskSpec, splits: dict) -> None:
    os.makedirs(root, exist_ok=True)
    save_charset(os.path.join(root, "charset.txt"), spec.charset)
    for name, pairs in splits.items():
        save_split(os.path.join(root, name), pairs)


def load_dataset(root, splits=("train", "dev", "test")):
    cs = load_charset(os.path.join(root, "charset.txt"))
    return cs, {name: load_split(os.path.join(root, name)) for name in splits}
