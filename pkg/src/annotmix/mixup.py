"""Convex mixing of training examples.

Two flavours: vanilla mixup over (instance, label) pairs, used by the
majority-vote baseline, and triple mixup over (instance, annotator, noisy
label), where the annotator identity is one-hot encoded and interpolated
alongside the instance and the label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import MixupConfig
from .data import Dataset, TripleSet, one_hot
from .errors import ContractError
from .numerics import Rng, sample_beta


@dataclass
class MixedBatch:
    x: np.ndarray  # batch x D
    a: np.ndarray  # batch x M
    z: np.ndarray  # batch x C
    lam: float | np.ndarray


def draw_lambda(cfg: MixupConfig, rng: Rng, batch_size: int) -> float | np.ndarray:
    """One coefficient per batch, or one per row when ``cfg.per_row`` is set."""
    if cfg.mode == "off":
        return 1.0
    if cfg.fixed_lambda is not None:
        return cfg.fixed_lambda if not cfg.per_row else np.full(batch_size, cfg.fixed_lambda)
    if cfg.per_row:
        return np.array([sample_beta(rng, cfg.alpha) for _ in range(batch_size)])
    return sample_beta(rng, cfg.alpha)


def _check_lambda(lam, batch_size):
    lam_arr = np.asarray(lam, dtype=np.float64)
    if lam_arr.ndim == 0:
        if not 0.0 <= float(lam_arr) <= 1.0:
            raise ContractError(f"lambda {float(lam_arr)} outside [0, 1]")
        return float(lam_arr)
    if lam_arr.shape != (batch_size,):
        raise ContractError("per-row lambda must have one entry per row")
    if np.any(lam_arr < 0) or np.any(lam_arr > 1):
        raise ContractError("lambda outside [0, 1]")
    return lam_arr[:, None]


def _combine(lam, u: np.ndarray, v: np.ndarray, same: np.ndarray | None = None) -> np.ndarray:
    # exact at the boundaries: lambda=1 returns u, lambda=0 returns v bit-for-bit
    if np.ndim(lam) == 0:
        if lam == 1.0:
            out = u.copy()
        elif lam == 0.0:
            out = v.copy()
        else:
            out = lam * u + (1.0 - lam) * v
    else:
        out = lam * u + (1.0 - lam) * v
        ones = lam[:, 0] == 1.0
        zeros = lam[:, 0] == 0.0
        out[ones] = u[ones]
        out[zeros] = v[zeros]
    if same is not None and same.any():
        out[same] = u[same]
    return out


def encode_triples(batch: TripleSet, ds: Dataset, num_annotators: int):
    """Features, one-hot annotators, and one-hot labels for a batch of triples."""
    return (
        ds.features[batch.instances],
        one_hot(batch.annotators, num_annotators),
        one_hot(batch.labels, ds.num_classes),
    )


def mix_triple_batch(b1: TripleSet, b2: TripleSet, lam, ds: Dataset, num_annotators: int) -> MixedBatch:
    """Row ``i`` mixes triple ``b1[i]`` with ``b2[i]`` using weight ``lam`` on ``b1``.

    Rows whose two triples are identical are copied unmixed.
    """
    if len(b1) != len(b2):
        raise ContractError(f"batch sizes differ: {len(b1)} vs {len(b2)}")
    lam_b = _check_lambda(lam, len(b1))
    x1, a1, z1 = encode_triples(b1, ds, num_annotators)
    x2, a2, z2 = encode_triples(b2, ds, num_annotators)
    same = (b1.instances == b2.instances) & (b1.annotators == b2.annotators) & (b1.labels == b2.labels)
    return MixedBatch(
        x=_combine(lam_b, x1, x2, same),
        a=_combine(lam_b, a1, a2, same),
        z=_combine(lam_b, z1, z2, same),
        lam=lam,
    )


def mix_vanilla_batch(x1, y1, x2, y2, lam, num_classes: int):
    """Mix (instance, label) pairs; labels are class indices, returned mixed one-hot."""
    x1, x2 = np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape or len(y1) != len(y2) or len(y1) != x1.shape[0]:
        raise ContractError("vanilla mixup batches differ in shape")
    lam_b = _check_lambda(lam, x1.shape[0])
    return (_combine(lam_b, x1, x2), _combine(lam_b, one_hot(y1, num_classes), one_hot(y2, num_classes)))


def pair_same_instance(ts: TripleSet, rng: Rng) -> list[tuple[int, int]]:
    """Pair each triple with another triple of the same instance.

    The partner is drawn uniformly from the other triples on that instance.
    A triple whose instance carries a single annotation is paired with itself.
    """
    n = len(ts)
    if n == 0:
        return []
    partner = np.arange(n)
    order = np.argsort(ts.instances, kind="stable")
    bounds = np.flatnonzero(np.diff(ts.instances[order])) + 1
    for group in np.split(order, bounds):
        k = group.size
        if k < 2:
            continue
        # offset in [1, k) never maps a triple to itself
        offsets = rng.integers(1, k, size=k)
        partner[group] = group[(np.arange(k) + offsets) % k]
    return list(zip(range(n), partner.tolist()))


def subset(ts: TripleSet, idx) -> TripleSet:
    return TripleSet(ts.instances[idx], ts.annotators[idx], ts.labels[idx])
