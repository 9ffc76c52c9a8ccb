"""Finite-difference verification of analytic gradients.

Every differentiable op, and the fully unrolled decoder loss, is checked
against central differences.  The same machinery backs the ``gradcheck``
CLI subcommand and the acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T

EPS = 1e-5
REL_TOL = 1e-4


def numeric_gradient(build_loss: Callable[[], T.Tensor], leaf: T.Tensor, eps: float = EPS) -> np.ndarray:
    """Central-difference gradient of a re-runnable scalar loss w.r.t. one leaf."""
    out = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        with T.no_grad():
            up = build_loss().item()
        flat[i] = orig - eps
        with T.no_grad():
            down = build_loss().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric).max() if analytic.size else 0.0
    scale = max(
        np.abs(analytic).max() if analytic.size else 0.0,
        np.abs(numeric).max() if numeric.size else 0.0,
        1e-6,
    )
    return float(diff / scale)


def check_gradients(
    build_loss: Callable[[], T.Tensor],
    leaves: Sequence[T.Tensor],
    eps: float = EPS,
) -> float:
    """Run backward once and compare every leaf against finite differences.

    Returns the worst relative error over all leaves.
    """
    T.zero_grads(leaves)
    loss = build_loss()
    loss.backward()
    worst = 0.0
    for leaf in leaves:
        numeric = numeric_gradient(build_loss, leaf, eps)
        worst = max(worst, relative_error(leaf.grad, numeric))
    return worst


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < REL_TOL


def _rand(rng, *shape):
    return T.Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=True)


def _op_cases(rng):
    """One randomized loss builder per differentiable op."""
    m, k, p = (int(x) for x in rng.integers(2, 5, size=3))

    a2 = _rand(rng, m, k)
    b2 = _rand(rng, k, p)
    yield "matmul", lambda: T.tensor_sum(T.tanh(T.matmul(a2, b2))), [a2, b2]

    mv_a = _rand(rng, m, k)
    mv_b = _rand(rng, k)
    yield "matmul_vec", lambda: T.tensor_sum(T.tanh(T.matmul(mv_a, mv_b))), [mv_a, mv_b]

    vm_a = _rand(rng, k)
    vm_b = _rand(rng, k, p)
    yield "vec_matmul", lambda: T.tensor_sum(T.tanh(T.matmul(vm_a, vm_b))), [vm_a, vm_b]

    sx = _rand(rng, k + 2)
    w = T.Tensor(rng.uniform(-1, 1, size=k + 2), requires_grad=False)
    yield "softmax", lambda: T.dot(T.softmax(sx), T.Tensor(w.data)), [sx]

    th = _rand(rng, m, k)
    yield "tanh", lambda: T.tensor_sum(T.mul(T.tanh(th), T.tanh(th))), [th]

    sg = _rand(rng, k)
    yield "sigmoid", lambda: T.tensor_sum(T.sigmoid(sg)), [sg]

    c1 = _rand(rng, m)
    c2 = _rand(rng, p)
    yield "concat_rows", lambda: T.tensor_sum(
        T.tanh(T.concat_rows([c1, c2]))
    ), [c1, c2]

    st = [_rand(rng, k) for _ in range(3)]
    yield "stack_rows", lambda: T.tensor_sum(T.tanh(T.stack_rows(st))), st

    bc_r = _rand(rng, m, k)
    bc_h = _rand(rng, p)
    bc_e = _rand(rng, k)
    yield "broadcast_concat", lambda: T.tensor_sum(
        T.tanh(T.broadcast_concat(bc_r, bc_h, bc_e))
    ), [bc_r, bc_h, bc_e]

    emb = _rand(rng, 4, k)
    idx = int(rng.integers(0, 4))
    yield "embedding_lookup", lambda: T.tensor_sum(
        T.tanh(T.embedding_lookup(emb, idx))
    ), [emb]

    logits = _rand(rng, k + 2)
    tgt = int(rng.integers(0, k + 2))
    yield "cross_entropy", lambda: T.cross_entropy(logits, tgt), [logits]

    hidden = int(rng.integers(2, 4))
    xin = int(rng.integers(2, 4))
    lx = _rand(rng, xin)
    lh = _rand(rng, hidden)
    lc = _rand(rng, hidden)
    lwx = _rand(rng, xin, 4 * hidden)
    lwh = _rand(rng, hidden, 4 * hidden)
    lb = _rand(rng, 4 * hidden)

    def lstm_loss():
        hn, cn = T.lstm_cell(lx, lh, lc, lwx, lwh, lb)
        return T.tensor_sum(T.mul(hn, hn)) + T.tensor_sum(T.tanh(cn))

    yield "lstm_cell", lstm_loss, [lx, lh, lc, lwx, lwh, lb]

    # Diamond-shaped sharing: the same node feeds two branches; backward
    # must accumulate both contributions.
    dx = _rand(rng, k)

    def diamond_loss():
        y = T.tanh(dx)
        return T.dot(y, y) + T.tensor_sum(T.sigmoid(y))

    yield "shared_subexpression", diamond_loss, [dx]


def run_op_suite(trials: int = 100, seed: int = 0, case_factory=None) -> list[CheckResult]:
    """Gradient-check every op over ``trials`` seeded random instances."""
    factory = case_factory or _op_cases
    worst: dict[str, float] = {}
    counts: dict[str, int] = {}
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        for name, build, leaves in factory(rng):
            err = check_gradients(build, leaves)
            worst[name] = max(worst.get(name, 0.0), err)
            counts[name] = counts.get(name, 0) + 1
    return [CheckResult(n, worst[n], counts[n]) for n in worst]


def run_decoder_suite(trials: int = 5, seed: int = 0) -> list[CheckResult]:
    """Check the fully unrolled teacher-forced loss on a tiny decoder."""
    from .decoder import DecoderConfig, init_params
    from .features import FeatureStack
    from .training import teacher_forced_loss

    results = []
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, 1000 + trial])
        cfg = DecoderConfig(
            feature_dim=4, hidden_dim=4, attn_dim=4, out_hidden_dim=4, n_objects=2
        )
        params = init_params(cfg, vocab_size=6, rng=rng)
        rows = rng.uniform(-1, 1, size=(2 * cfg.n_objects + 1, cfg.feature_dim))
        stack = FeatureStack.from_matrix(
            T.Tensor(rows, requires_grad=True), cfg.n_objects
        )
        caption = [int(x) for x in rng.integers(4, 6, size=3)]
        leaves = list(params.named().values()) + [stack.matrix]

        def build():
            return teacher_forced_loss(params, stack, caption)

        worst = max(worst, check_gradients(build, leaves))
    results.append(CheckResult("decoder_unrolled_loss", worst, trials))
    return results
