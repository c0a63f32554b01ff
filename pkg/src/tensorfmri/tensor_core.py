"""Dense tensor helpers and PARAFAC (CP) composition.

Tensors are plain ``float64`` numpy arrays. The linear layout used
everywhere (binary blobs, flattened cell vectors) is C order: the last mode
varies fastest, so cell ``(i_1, ..., i_D)`` of a tensor with dims
``(p_1, ..., p_D)`` sits at ``np.ravel_multi_index((i_1, ..., i_D), dims)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np


@dataclass
class ParafacCoeff:
    """Rank-R margin set of one coefficient tensor.

    ``margins[j]`` has shape ``(p_j, R)``; column ``r`` is the mode-j margin
    of rank component ``r``.
    """

    margins: list[np.ndarray]

    def __post_init__(self):
        self.margins = [np.asarray(m, dtype=np.float64) for m in self.margins]
        if not self.margins:
            raise ValueError("at least one mode is required")
        ranks = {m.shape[1] if m.ndim == 2 else -1 for m in self.margins}
        if len(ranks) != 1 or -1 in ranks:
            raise ValueError("every margin must be a (p_j, R) matrix with a common R")

    @property
    def rank(self) -> int:
        return self.margins[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.margins)

    @property
    def ndim(self) -> int:
        return len(self.margins)


def outer(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product ``a_1 o ... o a_D`` of a sequence of vectors."""
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vectors:
        return np.ones(())
    return reduce(np.multiply.outer, vectors)


def compose(coeff: ParafacCoeff | Sequence[np.ndarray]) -> np.ndarray:
    """Sum of the R rank-one outer products of the margins."""
    if not isinstance(coeff, ParafacCoeff):
        coeff = ParafacCoeff(list(coeff))
    margins = coeff.margins
    d = len(margins)
    letters = "abcdefghijklmnopqrstuvwxy"
    if d > len(letters):
        raise ValueError(f"tensor order {d} not supported")
    spec = ",".join(f"{letters[j]}z" for j in range(d)) + "->" + letters[:d]
    return np.einsum(spec, *margins, optimize=d > 2)


def compose_rank(margins: Sequence[np.ndarray], r: int) -> np.ndarray:
    """Rank-one component ``r`` of a margin set."""
    return outer([m[:, r] for m in margins])


def outer_contraction(t: np.ndarray, others: Sequence[np.ndarray], j: int) -> np.ndarray:
    """Contract every mode of ``t`` except ``j`` against the given vectors.

    ``others`` holds one vector per mode other than ``j``, in mode order.
    The result has length ``t.shape[j]`` and equals
    ``sum over all non-j indices of t[...] * prod_k others_k[i_k]``.
    """
    t = np.asarray(t, dtype=np.float64)
    if len(others) != t.ndim - 1:
        raise ValueError(f"expected {t.ndim - 1} margins, got {len(others)}")
    modes = [k for k in range(t.ndim) if k != j]
    for k, v in zip(modes, others):
        if np.shape(v) != (t.shape[k],):
            raise ValueError(f"margin for mode {k} has shape {np.shape(v)}, expected ({t.shape[k]},)")
    out = t
    # contract trailing modes first so axis numbers of remaining modes stay valid
    for k, v in sorted(zip(modes, others), key=lambda kv: -kv[0]):
        out = np.tensordot(out, v, axes=([k], [0]))
    return out


def frobenius_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def n_cells(dims: Sequence[int]) -> int:
    return int(np.prod(dims, dtype=np.int64))


def khatri_rao(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product; rows ordered with the last matrix fastest."""
    out = matrices[0]
    for m in matrices[1:]:
        out = np.einsum("ir,jr->ijr", out, m).reshape(-1, m.shape[1])
    return out


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization; columns follow C order of the remaining modes."""
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def cp_als(
    t: np.ndarray, rank: int, rng: np.random.Generator, n_iter: int = 100, tol: float = 1e-10
) -> list[np.ndarray]:
    """Least-squares rank-``rank`` CP fit by alternating least squares.

    Returns margins whose composition approximates ``t``; the component
    scale is spread evenly over the modes.
    """
    t = np.asarray(t, dtype=np.float64)
    d = t.ndim
    if d == 1:
        out = np.zeros((t.size, rank))
        out[:, 0] = t
        return [out]
    margins = [rng.standard_normal((p, rank)) for p in t.shape]
    norm_t = np.linalg.norm(t)
    prev = np.inf
    for _ in range(n_iter):
        for j in range(d):
            others = [margins[k] for k in range(d) if k != j]
            gram = np.ones((rank, rank))
            for m in others:
                gram *= m.T @ m
            rhs = unfold(t, j) @ khatri_rao(others)
            margins[j] = np.linalg.lstsq(gram, rhs.T, rcond=None)[0].T
        err = np.linalg.norm(t - compose(margins)) / max(norm_t, 1e-300)
        if abs(prev - err) < tol:
            break
        prev = err
    norms = np.stack([np.linalg.norm(m, axis=0) for m in margins])
    total = np.prod(norms, axis=0)
    for j in range(d):
        safe = np.where(norms[j] > 0, norms[j], 1.0)
        margins[j] = margins[j] / safe * np.where(total > 0, total ** (1.0 / d), 0.0)
    return margins
