"""Teacher-forced cross-entropy training with Adam, plus checkpointing.

One optimizer step per (image, caption) pair, captions shuffled each epoch
under a seeded generator.  Gradients are clipped by global norm before the
update.  The checkpoint file is a binary container: magic "CHAC", a u32
version, a length-prefixed JSON manifest (config, vocabulary, optimizer
scalars, RNG state, array directory), then the named float64 arrays
little-endian in directory order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import kernels
from . import tensor as T
from .decoder import (
    DecoderConfig,
    LSTM_CONTEXT_PLUS_EMBEDDING,
    ModelParams,
    greedy_decode,
    init_params,
    init_state,
    step_logits,
)
from .features import FeatureStack, compute_raw_features, project_features
from .metrics import bleu, tokenize
from .vocab import END_ID, PAD_ID, Vocabulary

MAGIC = b"CHAC"
CHECKPOINT_VERSION = 1
GRAD_CLIP_NORM = 5.0


@dataclass
class TrainConfig:
    # Widths sized so the pinned 1e-4 learning rate converges on desk-scale
    # corpora in minutes; Adam's per-element step is ~lr, so wider layers
    # move the logits further per update.
    feature_dim: int = 64
    hidden_dim: int = 128
    attn_dim: int = 64
    out_hidden_dim: int = 1024
    n_objects: int = 5
    patch_scale: float = 2.0
    lr: float = 1e-4
    epochs: int = 100
    seed: int = 0
    lstm_input: str = LSTM_CONTEXT_PLUS_EMBEDDING
    beam: int = 2
    max_len: int = 20

    def __post_init__(self):
        for name in ("feature_dim", "hidden_dim", "attn_dim", "out_hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.patch_scale <= 0:
            raise ValueError(f"patch_scale must be positive, got {self.patch_scale}")
        if self.n_objects < 1:
            raise ValueError(f"n_objects must be >= 1, got {self.n_objects}")

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            feature_dim=self.feature_dim,
            hidden_dim=self.hidden_dim,
            attn_dim=self.attn_dim,
            out_hidden_dim=self.out_hidden_dim,
            n_objects=self.n_objects,
            lstm_input=self.lstm_input,
        )


def teacher_forced_loss(params: ModelParams, stack: FeatureStack, caption: Sequence[int]) -> T.Tensor:
    """Mean per-step cross-entropy with gold previous tokens.

    ``caption`` holds the word indices without control tokens; the frame
    <start> ... <end> is applied here.  <pad> targets are skipped.
    """
    content = [t for t in caption if t != PAD_ID]
    if not content:
        raise ValueError("teacher_forced_loss needs a non-empty caption")
    targets = content + [END_ID]
    state = init_state(stack, params.config.hidden_dim)
    losses = []
    for target in targets:
        logits, state = step_logits(state, stack, params)
        losses.append(T.cross_entropy(logits, target))
        state.prev_token = target
    total = losses[0]
    for piece in losses[1:]:
        total = total + piece
    return total * (1.0 / len(losses))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, tensor in params.named().items():
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ValueError(
                f"gradient shape mismatch for {name}: {g.shape} vs {tensor.data.shape}"
            )
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        kernels.adam_update(
            tensor.data, g, state.m[name], state.v[name],
            lr, b1, b2, state.eps, bc1, bc2,
        )


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float = GRAD_CLIP_NORM) -> float:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


@dataclass
class Checkpoint:
    version: int
    config: TrainConfig
    vocab: Vocabulary
    arrays: dict[str, np.ndarray]
    adam: AdamState
    rng_state: dict
    epoch: int

    def build_model(self) -> ModelParams:
        rng = np.random.default_rng(0)
        params = init_params(self.config.decoder_config(), len(self.vocab), rng)
        params.load_arrays(self.arrays)
        return params


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    adam_arrays = {}
    for name, arr in ckpt.adam.m.items():
        adam_arrays[f"adam_m.{name}"] = arr
    for name, arr in ckpt.adam.v.items():
        adam_arrays[f"adam_v.{name}"] = arr
    ordered = {**ckpt.arrays, **adam_arrays}
    manifest = {
        "config": asdict(ckpt.config),
        "vocab": ckpt.vocab.words,
        "adam": {
            "t": ckpt.adam.t,
            "beta1": ckpt.adam.beta1,
            "beta2": ckpt.adam.beta2,
            "eps": ckpt.adam.eps,
        },
        "rng_state": ckpt.rng_state,
        "epoch": ckpt.epoch,
        "arrays": [
            {"name": name, "shape": list(arr.shape)} for name, arr in ordered.items()
        ],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in ordered.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, config: TrainConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``config`` given, array shapes are validated
    against a model built from it and mismatches name the offending array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported checkpoint version {version}"
        )
    (manifest_len,) = struct.unpack_from("<Q", raw, 8)
    body = 16 + manifest_len
    if len(raw) < body:
        raise CheckpointTruncatedError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:body].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt manifest: {exc}") from exc
    ordered = {}
    offset = body
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointTruncatedError(
                f"{path}: truncated array data for {entry['name']}"
            )
        ordered[entry["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    arrays = {k: v for k, v in ordered.items() if not k.startswith("adam_")}
    adam = AdamState(
        m={k[len("adam_m.") :]: v for k, v in ordered.items() if k.startswith("adam_m.")},
        v={k[len("adam_v.") :]: v for k, v in ordered.items() if k.startswith("adam_v.")},
        t=manifest["adam"]["t"],
        beta1=manifest["adam"]["beta1"],
        beta2=manifest["adam"]["beta2"],
        eps=manifest["adam"]["eps"],
    )
    ckpt = Checkpoint(
        version=version,
        config=TrainConfig(**manifest["config"]),
        vocab=Vocabulary(manifest["vocab"]),
        arrays=arrays,
        adam=adam,
        rng_state=manifest["rng_state"],
        epoch=manifest["epoch"],
    )
    if config is not None:
        probe = init_params(config.decoder_config(), len(ckpt.vocab), np.random.default_rng(0))
        for name, tensor in probe.named().items():
            if arrays[name].shape != tensor.data.shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {name}: checkpoint "
                    f"{arrays[name].shape}, requested config {tensor.data.shape}"
                )
    return ckpt


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_bleu4: float


def _greedy_caption(params: ModelParams, stack: FeatureStack, vocab: Vocabulary, max_len: int) -> str:
    return " ".join(vocab.decode(greedy_decode(stack, params, max_len)))


def train(
    config: TrainConfig,
    train_samples: Sequence,
    val_samples: Sequence = (),
) -> tuple[Checkpoint, list[EpochLog]]:
    """Full training run; returns the best-validation checkpoint and the
    per-epoch log (the last epoch's state when there is no validation set)."""
    if not train_samples:
        raise ValueError("training split is empty")
    from .dataset import build_vocabulary

    all_captions = [c for s in train_samples for c in s.captions]
    vocabulary = build_vocabulary(all_captions)
    rng_init = np.random.default_rng([config.seed, 0])
    shuffle_rng = np.random.default_rng([config.seed, 1])
    params = init_params(config.decoder_config(), len(vocabulary), rng_init)
    adam = AdamState()

    raws = [
        compute_raw_features(s, config.n_objects, config.patch_scale)
        for s in train_samples
    ]
    encoded = [
        [vocabulary.encode(tokenize(c)) for c in s.captions] for s in train_samples
    ]
    pairs = [
        (si, ci)
        for si in range(len(train_samples))
        for ci in range(len(train_samples[si].captions))
    ]
    val_raws = [
        compute_raw_features(s, config.n_objects, config.patch_scale)
        for s in val_samples
    ]

    param_tensors = list(params.named().values())
    logs: list[EpochLog] = []
    best: tuple[float, Checkpoint] | None = None
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(pairs))
        losses = []
        for idx in order:
            si, ci = pairs[idx]
            T.zero_grads(param_tensors)
            stack = project_features(raws[si], params)
            loss = teacher_forced_loss(params, stack, encoded[si][ci])
            loss.backward()
            grads = {name: t.grad for name, t in params.named().items()}
            clip_global_norm(grads)
            adam_step(params, grads, adam, config.lr)
            losses.append(loss.item())
        train_loss = float(np.mean(losses))

        val_bleu4 = 0.0
        if val_samples:
            cands, refs = [], []
            for s, raw in zip(val_samples, val_raws):
                stack = project_features(raw, params)
                cands.append(vocabulary.decode(greedy_decode(stack, params, config.max_len)))
                refs.append([tokenize(c) for c in s.captions])
            val_bleu4 = bleu(cands, refs)[3]
        logs.append(EpochLog(epoch, train_loss, val_bleu4))

        score = val_bleu4 if val_samples else -train_loss
        if best is None or score >= best[0]:
            best = (
                score,
                Checkpoint(
                    version=CHECKPOINT_VERSION,
                    config=config,
                    vocab=vocabulary,
                    arrays=params.copy_arrays(),
                    adam=AdamState(
                        m={k: v.copy() for k, v in adam.m.items()},
                        v={k: v.copy() for k, v in adam.v.items()},
                        t=adam.t,
                        beta1=adam.beta1,
                        beta2=adam.beta2,
                        eps=adam.eps,
                    ),
                    rng_state=_rng_state(shuffle_rng),
                    epoch=epoch,
                ),
            )
    return best[1], logs


def _rng_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": int(state["state"]["state"]),
        "inc": int(state["state"]["inc"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }
