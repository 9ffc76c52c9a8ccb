"""Cross-hierarchy attention LSTM decoder.

Per generated word: the previous word's embedding and the previous hidden
state are concatenated with every feature-stack row to score the 2n+1
attention slots; softmax turns scores into weights; the context vector is
the weighted row combination; the word distribution reads the context and
the previous hidden state; finally the LSTM advances the hidden state on
the fresh context.

Two recurrence input modes exist: ``context_only`` feeds the LSTM the
context vector alone, ``context_plus_embedding`` (default) also appends
the previous word's embedding, which the context-only form can see only
through attention.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .features import RAW_DIM, FeatureStack
from .vocab import END_ID, START_ID, Vocabulary

LSTM_CONTEXT_ONLY = "context_only"
LSTM_CONTEXT_PLUS_EMBEDDING = "context_plus_embedding"
LSTM_INPUT_MODES = (LSTM_CONTEXT_ONLY, LSTM_CONTEXT_PLUS_EMBEDDING)


@dataclass
class DecoderConfig:
    feature_dim: int = 64
    hidden_dim: int = 64
    attn_dim: int = 64
    out_hidden_dim: int = 64
    n_objects: int = 5
    lstm_input: str = LSTM_CONTEXT_PLUS_EMBEDDING

    def __post_init__(self):
        if self.lstm_input not in LSTM_INPUT_MODES:
            raise ValueError(
                f"lstm_input must be one of {LSTM_INPUT_MODES}, got {self.lstm_input!r}"
            )
        for name in ("feature_dim", "hidden_dim", "attn_dim", "out_hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def lstm_in_dim(self) -> int:
        if self.lstm_input == LSTM_CONTEXT_ONLY:
            return self.feature_dim
        return 2 * self.feature_dim


@dataclass
class ModelParams:
    """Every trainable array, including the three feature projections."""

    config: DecoderConfig
    vocab_size: int
    proj_object: T.Tensor
    proj_patch: T.Tensor
    proj_global: T.Tensor
    attn_weight: T.Tensor  # (d + H + d, A): concatenated slot row -> attention hidden
    attn_score_vec: T.Tensor  # (A,): attention hidden -> scalar score
    lstm_wx: T.Tensor  # (lstm_in, 4H)
    lstm_wh: T.Tensor  # (H, 4H)
    lstm_b: T.Tensor  # (4H,)
    embedding: T.Tensor  # (|V|, d)
    out_hidden_weight: T.Tensor  # (d + H, P)
    out_hidden_bias: T.Tensor  # (P,)
    out_vocab_weight: T.Tensor  # (P, |V|)

    _ORDER = (
        "proj_object",
        "proj_patch",
        "proj_global",
        "attn_weight",
        "attn_score_vec",
        "lstm_wx",
        "lstm_wh",
        "lstm_b",
        "embedding",
        "out_hidden_weight",
        "out_hidden_bias",
        "out_vocab_weight",
    )

    def named(self) -> dict[str, T.Tensor]:
        return {name: getattr(self, name) for name in self._ORDER}

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named().items():
            incoming = arrays[name]
            if incoming.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {incoming.shape}, "
                    f"model {t.data.shape}"
                )
            t.data[...] = incoming


def init_params(config: DecoderConfig, vocab_size: int, rng: np.random.Generator) -> ModelParams:
    """Uniform(-s, s) with s = 1/sqrt(fan_in) per array."""

    def uni(fan_in, *shape):
        s = 1.0 / np.sqrt(fan_in)
        return T.Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)

    d, hidden = config.feature_dim, config.hidden_dim
    attn, out_hidden = config.attn_dim, config.out_hidden_dim
    cat = 2 * d + hidden
    lstm_in = config.lstm_in_dim
    return ModelParams(
        config=config,
        vocab_size=vocab_size,
        proj_object=uni(RAW_DIM, RAW_DIM, d),
        proj_patch=uni(RAW_DIM, RAW_DIM, d),
        proj_global=uni(RAW_DIM, RAW_DIM, d),
        attn_weight=uni(cat, cat, attn),
        attn_score_vec=uni(attn, attn),
        lstm_wx=uni(lstm_in, lstm_in, 4 * hidden),
        lstm_wh=uni(hidden, hidden, 4 * hidden),
        lstm_b=T.Tensor(np.zeros(4 * hidden), requires_grad=True),
        embedding=uni(d, vocab_size, d),
        out_hidden_weight=uni(d + hidden, d + hidden, out_hidden),
        out_hidden_bias=T.Tensor(np.zeros(out_hidden), requires_grad=True),
        out_vocab_weight=uni(out_hidden, out_hidden, vocab_size),
    )


@dataclass
class DecoderState:
    h: T.Tensor
    c: T.Tensor
    alpha: T.Tensor
    context: T.Tensor
    prev_token: int


def init_state(stack: FeatureStack, hidden_dim: int = 0) -> DecoderState:
    """Uniform attention over all slots; initial context is the row mean.

    Hidden and cell start at zero; when ``hidden_dim`` is omitted they are
    sized lazily at the first step.
    """
    n_slots = stack.num_slots
    alpha = T.Tensor(np.full(n_slots, 1.0 / n_slots))
    context = T.matmul(alpha, stack.matrix)
    return DecoderState(
        h=T.Tensor(np.zeros(hidden_dim)),
        c=T.Tensor(np.zeros(hidden_dim)),
        alpha=alpha,
        context=context,
        prev_token=START_ID,
    )


def _ensure_state_sized(state: DecoderState, hidden_dim: int) -> None:
    if state.h.data.shape[0] != hidden_dim:
        state.h = T.Tensor(np.zeros(hidden_dim))
        state.c = T.Tensor(np.zeros(hidden_dim))


def attention_scores(stack: FeatureStack, h_prev: T.Tensor, e_prev: T.Tensor, params: ModelParams) -> T.Tensor:
    """One score per slot: project tanh of the concatenated [row; h; e]."""
    cat = T.broadcast_concat(stack.matrix, h_prev, e_prev)
    return T.matmul(T.tanh(T.matmul(cat, params.attn_weight)), params.attn_score_vec)


def attention_weights(scores: T.Tensor) -> T.Tensor:
    return T.softmax(scores)


def context_vector(stack: FeatureStack, alpha: T.Tensor) -> T.Tensor:
    if alpha.data.shape[0] != stack.num_slots:
        raise ValueError(
            f"alpha length {alpha.data.shape[0]} != slot count {stack.num_slots}"
        )
    return T.matmul(alpha, stack.matrix)


def lstm_step(x: T.Tensor, state: DecoderState, params: ModelParams) -> tuple[T.Tensor, T.Tensor]:
    return T.lstm_cell(x, state.h, state.c, params.lstm_wx, params.lstm_wh, params.lstm_b)


def word_logits(context: T.Tensor, h_prev: T.Tensor, params: ModelParams) -> T.Tensor:
    cat = T.concat_rows([context, h_prev])
    hidden = T.tanh(
        T.add(T.matmul(cat, params.out_hidden_weight), params.out_hidden_bias)
    )
    return T.matmul(hidden, params.out_vocab_weight)


def word_distribution(context: T.Tensor, h_prev: T.Tensor, params: ModelParams) -> T.Tensor:
    return T.softmax(word_logits(context, h_prev, params))


def step_logits(state: DecoderState, stack: FeatureStack, params: ModelParams) -> tuple[T.Tensor, DecoderState]:
    """One decode step; the word readout uses the pre-update hidden state.

    Order: embed previous token, score and soften attention, form the
    context, read the word logits from (context, h_prev), then advance the
    LSTM on the fresh context (plus the embedding in the default mode).
    """
    _ensure_state_sized(state, params.config.hidden_dim)
    e_prev = T.embedding_lookup(params.embedding, state.prev_token)
    scores = attention_scores(stack, state.h, e_prev, params)
    alpha = attention_weights(scores)
    context = context_vector(stack, alpha)
    logits = word_logits(context, state.h, params)
    if params.config.lstm_input == LSTM_CONTEXT_ONLY:
        x = context
    else:
        x = T.concat_rows([context, e_prev])
    h_new, c_new = T.lstm_cell(
        x, state.h, state.c, params.lstm_wx, params.lstm_wh, params.lstm_b
    )
    new_state = DecoderState(
        h=h_new, c=c_new, alpha=alpha, context=context, prev_token=state.prev_token
    )
    return logits, new_state


def step(state: DecoderState, stack: FeatureStack, params: ModelParams) -> tuple[T.Tensor, DecoderState]:
    """Public step: returns the word probability vector and the new state."""
    logits, new_state = step_logits(state, stack, params)
    return T.softmax(logits), new_state


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    z = np.exp(logits - m).sum()
    return logits - m - np.log(z)


def greedy_decode(
    stack: FeatureStack,
    params: ModelParams,
    max_len: int,
    record_attention: bool = False,
    vocab: Vocabulary | None = None,
):
    """Argmax decoding; ties break toward the lowest index.

    Returns the emitted token ids with <start>/<end> stripped; with
    ``record_attention`` also returns per-step attention records.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    tokens: list[int] = []
    records: list[dict] = []
    labels = stack.slot_labels()
    with T.no_grad():
        state = init_state(stack)
        for t in range(max_len):
            logits, state = step_logits(state, stack, params)
            token = int(np.argmax(logits.data))
            if record_attention:
                records.append(
                    {
                        "t": t,
                        "token": (
                            vocab.words[token] if vocab is not None else token
                        ),
                        "alpha": [float(a) for a in state.alpha.data],
                        "slot_labels": labels,
                    }
                )
            if token == END_ID:
                break
            tokens.append(token)
            state.prev_token = token
    if record_attention:
        return tokens, records
    return tokens


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)
    log_prob: float = 0.0
    state: DecoderState | None = None
    finished: bool = False

    def normalized_score(self) -> float:
        return self.log_prob / max(1, len(self.tokens))


def beam_decode(stack: FeatureStack, params: ModelParams, beam: int, max_len: int) -> list[int]:
    """Beam search with length-normalized ranking (exponent 1.0).

    Finished hypotheses are held aside and compete with live ones at the
    end; score ties break toward the lexicographically smaller sequence.
    """
    if beam < 1:
        raise ValueError(f"beam width must be >= 1, got {beam}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    with T.no_grad():
        live = [Hypothesis(state=init_state(stack))]
        done: list[Hypothesis] = []
        for _ in range(max_len):
            candidates: list[Hypothesis] = []
            for hyp in live:
                logits, new_state = step_logits(hyp.state, stack, params)
                logp = _log_softmax(logits.data)
                order = np.argsort(-logp, kind="stable")[:beam]
                for token in order:
                    token = int(token)
                    if token == END_ID:
                        candidates.append(
                            Hypothesis(
                                tokens=hyp.tokens,
                                log_prob=hyp.log_prob + float(logp[token]),
                                state=None,
                                finished=True,
                            )
                        )
                    else:
                        st = copy.copy(new_state)
                        st.prev_token = token
                        candidates.append(
                            Hypothesis(
                                tokens=hyp.tokens + [token],
                                log_prob=hyp.log_prob + float(logp[token]),
                                state=st,
                            )
                        )
            candidates.sort(key=lambda c: (-c.log_prob, c.tokens))
            live = []
            for cand in candidates:
                if cand.finished:
                    done.append(cand)
                else:
                    live.append(cand)
                if len(live) == beam:
                    break
            if not live:
                break
        pool = done + live
        pool.sort(key=lambda c: (-c.normalized_score(), c.tokens))
        return pool[0].tokens
