"""Numerical reference for low-rank reference injection in attention.

Reference hidden states are projected through rank-r down/up matrix
pairs into key and value space, concatenated with the original keys
and values along the sequence dimension, and consumed by single-head
scaled dot-product attention. Forward, analytic backward, and a seeded
property suite (used by `forge inject-check`) live here.

The forward path reduces softmax denominators and value contractions
with exactly rounded summation (math.fsum), so permuting the reference
tokens permutes intermediate terms without changing any output bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HiddenStates:
    """Batch of token feature vectors, shape (batch, length, dim).

    length may be zero: an absent reference is a valid input and must
    reduce injection to vanilla attention.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        v = self.values
        if not isinstance(v, np.ndarray) or v.ndim != 3:
            raise ValueError(f"hidden states must be a (B, L, d) array, got {getattr(v, 'shape', None)}")
        if v.shape[0] < 1 or v.shape[2] < 1:
            raise ValueError("batch and feature extents must be positive")
        if not np.isfinite(v).all():
            raise ValueError("hidden states contain non-finite values")

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @classmethod
    def from_array(cls, arr) -> "HiddenStates":
        return cls(np.asarray(arr, dtype=np.float64))


@dataclass(frozen=True)
class InjectorWeights:
    """Two low-rank projection pairs: r x d down and d x r up matrices."""

    w_down_k: np.ndarray
    w_up_k: np.ndarray
    w_down_v: np.ndarray
    w_up_v: np.ndarray

    def __post_init__(self) -> None:
        r, d = self.w_down_k.shape
        if r < 1:
            raise ValueError("rank must be positive")
        if r > d:
            raise ValueError(f"rank {r} exceeds feature dim {d}")
        if self.w_down_v.shape != (r, d):
            raise ValueError(f"w_down_v shape {self.w_down_v.shape}, expected {(r, d)}")
        for name in ("w_up_k", "w_up_v"):
            w = getattr(self, name)
            if w.shape != (d, r):
                raise ValueError(f"{name} shape {w.shape}, expected {(d, r)}")
        for name in ("w_down_k", "w_up_k", "w_down_v", "w_up_v"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contains non-finite values")

    @property
    def rank(self) -> int:
        return self.w_down_k.shape[0]

    @property
    def dim(self) -> int:
        return self.w_down_k.shape[1]


@dataclass(frozen=True)
class AttentionInputs:
    """Query/key/value tensors plus the (possibly empty) reference states."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    h_ref: HiddenStates

    def __post_init__(self) -> None:
        for name in ("q", "k", "v"):
            t = getattr(self, name)
            if not isinstance(t, np.ndarray) or t.ndim != 3:
                raise ValueError(f"{name} must be a (B, L, d) array")
            if not np.isfinite(t).all():
                raise ValueError(f"{name} contains non-finite values")
        b, _, d = self.q.shape
        if self.k.shape[0] != b or self.v.shape[0] != b or self.h_ref.batch != b:
            raise ValueError("batch extents differ")
        if self.k.shape[2] != d or self.v.shape[2] != d or self.h_ref.dim != d:
            raise ValueError("feature extents differ")
        if self.k.shape[1] != self.v.shape[1]:
            raise ValueError("k and v lengths differ")


def lora_project(h_ref: np.ndarray, w_down: np.ndarray, w_up: np.ndarray) -> np.ndarray:
    """Apply w_up . (w_down . h_t) to every token t of a (B, L, d) tensor.

    Token-by-token evaluation: each output row depends only on its own
    input row, so reordering tokens reorders outputs bit-for-bit.
    """
    if h_ref.ndim != 3:
        raise ValueError("h_ref must be (B, L, d)")
    r, d = w_down.shape
    if h_ref.shape[2] != d:
        raise ValueError(f"w_down expects dim {d}, h_ref has {h_ref.shape[2]}")
    if w_up.shape != (d, r):
        raise ValueError(f"w_up shape {w_up.shape}, expected {(d, r)}")
    batch, length, _ = h_ref.shape
    out = np.zeros((batch, length, d), dtype=np.float64)
    for b in range(batch):
        for t in range(length):
            out[b, t] = w_up @ (w_down @ h_ref[b, t])
    return out


def concat_kv(
    k: np.ndarray, v: np.ndarray, k_ref: np.ndarray, v_ref: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate reference keys/values after the originals (sequence axis)."""
    if k.shape[0] != k_ref.shape[0] or v.shape[0] != v_ref.shape[0]:
        raise ValueError("batch extents differ")
    if k.shape[2] != k_ref.shape[2] or v.shape[2] != v_ref.shape[2]:
        raise ValueError("feature extents differ")
    if k_ref.shape[1] != v_ref.shape[1]:
        raise ValueError("reference key/value lengths differ")
    k_tilde = np.concatenate([k, k_ref], axis=1)
    v_tilde = np.concatenate([v, v_ref], axis=1)
    return k_tilde, v_tilde


def attention_forward(
    inputs: AttentionInputs,
    weights: InjectorWeights,
    return_weights: bool = False,
):
    """softmax(q . k_tilde^T / sqrt(d)) . v_tilde with injected reference tokens.

    Stabilized by row-max subtraction; all reductions use fsum so the
    result is independent of reference-token order.
    """
    if weights.dim != inputs.q.shape[2]:
        raise ValueError(
            f"weights built for dim {weights.dim}, inputs have {inputs.q.shape[2]}"
        )
    h = inputs.h_ref.values
    k_ref = lora_project(h, weights.w_down_k, weights.w_up_k)
    v_ref = lora_project(h, weights.w_down_v, weights.w_up_v)
    k_tilde, v_tilde = concat_kv(inputs.k, inputs.v, k_ref, v_ref)

    batch, lq, d = inputs.q.shape
    lt = k_tilde.shape[1]
    if lt == 0:
        raise ValueError("attention over zero keys is undefined")
    scale = 1.0 / math.sqrt(d)
    out = np.zeros((batch, lq, d), dtype=np.float64)
    attn = np.zeros((batch, lq, lt), dtype=np.float64)
    for b in range(batch):
        for i in range(lq):
            qi = inputs.q[b, i]
            logits = [scale * float(np.dot(qi, k_tilde[b, j])) for j in range(lt)]
            peak = max(logits)
            exps = [math.exp(z - peak) for z in logits]
            denom = math.fsum(exps)
            for c in range(d):
                col = v_tilde[b, :, c]
                out[b, i, c] = math.fsum(e * col[j] for j, e in enumerate(exps)) / denom
            for j, e in enumerate(exps):
                attn[b, i, j] = e / denom
    if return_weights:
        return out, attn
    return out


def attention_backward(
    inputs: AttentionInputs, weights: InjectorWeights, upstream_grad: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of L = <upstream_grad, attention_forward(...)>.

    Returns gradients keyed q, k, v, h_ref, w_down_k, w_up_k, w_down_v,
    w_up_v. Vectorized; matches the forward to well below the 1e-4
    tolerance a finite-difference check needs.
    """
    q, k, v = inputs.q, inputs.k, inputs.v
    h = inputs.h_ref.values
    if upstream_grad.shape != q.shape:
        raise ValueError(
            f"upstream_grad shape {upstream_grad.shape}, expected {q.shape}"
        )
    k_ref = lora_project(h, weights.w_down_k, weights.w_up_k)
    v_ref = lora_project(h, weights.w_down_v, weights.w_up_v)
    k_tilde, v_tilde = concat_kv(k, v, k_ref, v_ref)
    d = q.shape[2]
    lk = k.shape[1]
    scale = 1.0 / math.sqrt(d)

    z = scale * np.einsum("bid,bjd->bij", q, k_tilde)
    z = z - z.max(axis=2, keepdims=True)
    e = np.exp(z)
    a = e / e.sum(axis=2, keepdims=True)

    g = upstream_grad
    d_a = np.einsum("bic,bjc->bij", g, v_tilde)
    d_vt = np.einsum("bij,bic->bjc", a, g)
    inner = (d_a * a).sum(axis=2, keepdims=True)
    d_z = a * (d_a - inner)
    d_q = scale * np.einsum("bij,bjd->bid", d_z, k_tilde)
    d_kt = scale * np.einsum("bij,bid->bjd", d_z, q)

    d_k, d_kref = d_kt[:, :lk], d_kt[:, lk:]
    d_v, d_vref = d_vt[:, :lk], d_vt[:, lk:]

    def lora_backward(d_ref, w_down, w_up):
        mid = np.einsum("rd,btd->btr", w_down, h)
        d_up = np.einsum("bte,btr->er", d_ref, mid)
        up_pull = np.einsum("bte,er->btr", d_ref, w_up)
        d_down = np.einsum("btr,btd->rd", up_pull, h)
        d_h = np.einsum("btr,rd->btd", up_pull, w_down)
        return d_down, d_up, d_h

    d_down_k, d_up_k, d_h_k = lora_backward(d_kref, weights.w_down_k, weights.w_up_k)
    d_down_v, d_up_v, d_h_v = lora_backward(d_vref, weights.w_down_v, weights.w_up_v)

    return {
        "q": d_q,
        "k": np.ascontiguousarray(d_k),
        "v": np.ascontiguousarray(d_v),
        "h_ref": d_h_k + d_h_v,
        "w_down_k": d_down_k,
        "w_up_k": d_up_k,
        "w_down_v": d_down_v,
        "w_up_v": d_up_v,
    }


def init_weights(dim: int, rank: int, seed: int) -> InjectorWeights:
    """Training-style initialization: seeded uniform down, zero up.

    Zero up-projections make the injected keys and values start at
    zero. Note the reference tokens still receive softmax weight (a
    zero key gives logit 0), unlike additive low-rank updates.
    """
    rng = np.random.default_rng(seed)
    return InjectorWeights(
        w_down_k=rng.uniform(-0.1, 0.1, size=(rank, dim)),
        w_up_k=np.zeros((dim, rank)),
        w_down_v=rng.uniform(-0.1, 0.1, size=(rank, dim)),
        w_up_v=np.zeros((dim, rank)),
    )


def random_weights(dim: int, rank: int, rng: np.random.Generator) -> InjectorWeights:
    """Dense random weights for property checks (zero-init would hide bugs)."""
    return InjectorWeights(
        w_down_k=rng.uniform(-0.5, 0.5, size=(rank, dim)),
        w_up_k=rng.uniform(-0.5, 0.5, size=(dim, rank)),
        w_down_v=rng.uniform(-0.5, 0.5, size=(rank, dim)),
        w_up_v=rng.uniform(-0.5, 0.5, size=(dim, rank)),
    )


def random_inputs(
    rng: np.random.Generator, batch: int, lq: int, lk: int, l_ref: int, dim: int
) -> AttentionInputs:
    return AttentionInputs(
        q=rng.normal(size=(batch, lq, dim)),
        k=rng.normal(size=(batch, lk, dim)),
        v=rng.normal(size=(batch, lk, dim)),
        h_ref=HiddenStates(rng.normal(size=(batch, l_ref, dim))),
    )


def _vanilla_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Independent plain implementation used as the empty-reference oracle."""
    scale = 1.0 / math.sqrt(q.shape[2])
    z = scale * np.einsum("bid,bjd->bij", q, k)
    z = z - z.max(axis=2, keepdims=True)
    e = np.exp(z)
    a = e / e.sum(axis=2, keepdims=True)
    return np.einsum("bij,bjc->bic", a, v)


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str


def _loss(tensors: dict[str, np.ndarray], grad: np.ndarray) -> float:
    inputs = AttentionInputs(
        q=tensors["q"], k=tensors["k"], v=tensors["v"],
        h_ref=HiddenStates(tensors["h_ref"]),
    )
    weights = InjectorWeights(
        w_down_k=tensors["w_down_k"], w_up_k=tensors["w_up_k"],
        w_down_v=tensors["w_down_v"], w_up_v=tensors["w_up_v"],
    )
    out = attention_forward(inputs, weights)
    return float(np.vdot(grad, out))


def _fd_gradient(tensors: dict[str, np.ndarray], name: str, grad: np.ndarray,
                 step: float = 1e-5) -> np.ndarray:
    base = tensors[name]
    fd = np.zeros_like(base)
    flat_fd = fd.reshape(-1)
    work = {key: val.copy() for key, val in tensors.items()}
    target = work[name].reshape(-1)
    for idx in range(target.size):
        orig = target[idx]
        target[idx] = orig + step
        loss_plus = _loss(work, grad)
        target[idx] = orig - step
        loss_minus = _loss(work, grad)
        target[idx] = orig
        flat_fd[idx] = (loss_plus - loss_minus) / (2.0 * step)
    return fd


def run_property_suite(seed: int) -> list[PropertyResult]:
    """Seeded checks of the injection math; all must pass.

    Covers empty-reference equivalence, exact reference-token
    permutation invariance, softmax row normalization, analytic-vs-FD
    gradients, the low-rank bound on injected keys, and h_ref/up-weight
    scale cancellation.
    """
    rng = np.random.default_rng(seed)
    batch = int(rng.integers(1, 3))
    lq = int(rng.integers(2, 5))
    lk = int(rng.integers(2, 5))
    l_ref = int(rng.integers(2, 5))
    dim = int(rng.choice([4, 8]))
    rank = int(rng.integers(1, 3))

    inputs = random_inputs(rng, batch, lq, lk, l_ref, dim)
    weights = random_weights(dim, rank, rng)
    results = []

    # Empty reference reduces to vanilla attention.
    empty = AttentionInputs(
        q=inputs.q, k=inputs.k, v=inputs.v,
        h_ref=HiddenStates(np.zeros((batch, 0, dim))),
    )
    gap = float(np.abs(
        attention_forward(empty, weights)
        - _vanilla_attention(inputs.q, inputs.k, inputs.v)
    ).max())
    results.append(PropertyResult(
        "empty_reference_equivalence", gap <= 1e-12, f"max abs diff {gap:.3e}"
    ))

    # Permuting reference tokens must not move a single bit.
    perm = rng.permutation(l_ref)
    permuted = AttentionInputs(
        q=inputs.q, k=inputs.k, v=inputs.v,
        h_ref=HiddenStates(inputs.h_ref.values[:, perm, :]),
    )
    out_base = attention_forward(inputs, weights)
    out_perm = attention_forward(permuted, weights)
    exact = bool(np.array_equal(out_base, out_perm))
    perm_gap = float(np.abs(out_base - out_perm).max())
    results.append(PropertyResult(
        "reference_permutation_invariance", exact, f"max abs diff {perm_gap:.3e}"
    ))

    # Softmax rows are probability distributions.
    _, attn = attention_forward(inputs, weights, return_weights=True)
    row_err = float(np.abs(attn.sum(axis=2) - 1.0).max())
    results.append(PropertyResult(
        "softmax_row_sums", row_err <= 1e-12, f"max |sum-1| {row_err:.3e}"
    ))

    # Analytic gradients against central finite differences.
    grad = rng.normal(size=(batch, lq, dim))
    tensors = {
        "q": inputs.q, "k": inputs.k, "v": inputs.v,
        "h_ref": inputs.h_ref.values,
        "w_down_k": weights.w_down_k, "w_up_k": weights.w_up_k,
        "w_down_v": weights.w_down_v, "w_up_v": weights.w_up_v,
    }
    analytic = attention_backward(inputs, weights, grad)
    worst_name, worst_rel = "", 0.0
    for name in tensors:
        fd = _fd_gradient(tensors, name, grad)
        denom = max(float(np.linalg.norm(fd)), 1e-12)
        rel = float(np.linalg.norm(analytic[name] - fd)) / denom
        if rel > worst_rel:
            worst_name, worst_rel = name, rel
    results.append(PropertyResult(
        "gradient_check", worst_rel < 1e-4,
        f"worst rel err {worst_rel:.3e} ({worst_name})",
    ))

    # Injected keys live in an r-dimensional subspace.
    k_ref = lora_project(inputs.h_ref.values, weights.w_down_k, weights.w_up_k)
    sv = np.linalg.svd(k_ref.reshape(-1, dim), compute_uv=False)
    tail = float(sv[rank:].max() / sv[0]) if sv.size > rank and sv[0] > 0 else 0.0
    results.append(PropertyResult(
        "low_rank_bound", tail < 1e-6, f"relative tail singular value {tail:.3e}"
    ))

    # Scaling h_ref by lambda and the up-projections by 1/lambda cancels.
    lam = 3.7
    scaled_inputs = AttentionInputs(
        q=inputs.q, k=inputs.k, v=inputs.v,
        h_ref=HiddenStates(inputs.h_ref.values * lam),
    )
    scaled_weights = InjectorWeights(
        w_down_k=weights.w_down_k, w_up_k=weights.w_up_k / lam,
        w_down_v=weights.w_down_v, w_up_v=weights.w_up_v / lam,
    )
    scale_gap = float(np.abs(
        attention_forward(scaled_inputs, scaled_weights) - out_base
    ).max())
    results.append(PropertyResult(
        "scale_cancellation", scale_gap <= 1e-10, f"max abs diff {scale_gap:.3e}"
    ))

    return results
