"""Feature-wise Lipschitz queries: the standard catalog, closure combinators,
and the complete/masked sensitivity constants they induce.

A query f is feature-wise Lipschitz (FWL) for a norm when substituting one
record changes the output by at most sum_j L_j * |gap_j|, with the gap taken
per feature under a shared mask (NA against NA counts as zero). Masked cells
contribute nothing to any sum and mean denominators stay at n, which keeps the
constants data-independent; that is what lets the masked sensitivity be read
off the sorted constants alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .datasets import (
    CompleteDataset,
    IncompleteDataset,
    Mask,
    MaskMatrix,
    apply_mask,
)
from .errors import DimensionError, LipschitzContractError
from .missingness import substream, _KEY_TRIAL


@dataclass(frozen=True)
class FwlQuery:
    """A dataset-level query with per-feature Lipschitz constants.

    ``norm_p`` is the norm the inequality is declared for; a query valid under
    the l1 norm is automatically valid under l2 with the same constants.
    """

    evaluate: Callable[[IncompleteDataset], np.ndarray]
    constants_L: np.ndarray
    norm_p: int
    output_dim: int
    n: int
    d: int
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        L = np.asarray(self.constants_L, dtype=float)
        L.setflags(write=False)
        object.__setattr__(self, "constants_L", L)
        if L.ndim != 1 or len(L) != self.d:
            raise DimensionError("constants_L must be a length-d vector")
        if np.any(L < 0):
            raise ValueError("Lipschitz constants must be nonnegative")
        if self.norm_p not in (1, 2):
            raise ValueError("norm_p must be 1 or 2")
        if self.output_dim < 1 or self.n < 1 or self.d < 1:
            raise DimensionError("output_dim, n and d must be positive")

    def __call__(self, data: IncompleteDataset) -> np.ndarray:
        if data.n != self.n or data.d != self.d:
            raise DimensionError(
                f"query expects {self.n}x{self.d} data, got {data.n}x{data.d}"
            )
        out = np.asarray(self.evaluate(data), dtype=float).reshape(-1)
        if out.shape != (self.output_dim,):
            raise DimensionError(
                f"query evaluator returned shape {out.shape}, expected ({self.output_dim},)"
            )
        return out


@dataclass(frozen=True)
class SensitivityBounds:
    """Complete-data and masked-data sensitivity constants for one query."""

    C_p: float
    C_tilde_p: float
    rho: float
    B: float

    def __post_init__(self):
        if not (0.0 <= self.C_tilde_p <= self.C_p + 1e-15):
            raise ValueError("masked constant must satisfy 0 <= C_tilde <= C")

    @property
    def ratio(self) -> float:
        if self.C_p == 0.0:
            return 1.0
        return self.C_tilde_p / self.C_p


def _norm(v: np.ndarray, p: int) -> float:
    return float(np.sum(np.abs(v))) if p == 1 else float(np.sqrt(np.sum(v * v)))


# --- standard catalog -------------------------------------------------------


def _linear_query(matrices: Sequence[np.ndarray], n: int, d: int) -> FwlQuery:
    mats = [np.asarray(m, dtype=float) for m in matrices]
    if len(mats) == 1 and n > 1:
        mats = mats * n
    if len(mats) != n:
        raise DimensionError("linear query needs one matrix per row (or one shared)")
    k = mats[0].shape[0]
    for m in mats:
        if m.shape != (k, d):
            raise DimensionError("linear query matrices must all be k x d")
    stacked = np.stack(mats)  # (n, k, d)
    L = np.abs(stacked).sum(axis=1).max(axis=0)  # max_i ||B_i e_j||_1

    def evaluate(data: IncompleteDataset) -> np.ndarray:
        vals = data.values_filled
        return np.einsum("ikd,id->k", stacked, vals)

    return FwlQuery(evaluate, L, 1, k, n, d, {"kind": "linear"})


def _bounded_mean_query(n: int, d: int) -> FwlQuery:
    def evaluate(data: IncompleteDataset) -> np.ndarray:
        return data.values_filled.sum(axis=0) / n

    L = np.full(d, 1.0 / n)
    return FwlQuery(evaluate, L, 1, d, n, d, {"kind": "bounded_mean"})


def _clipped_mean_query(n: int, d: int, clip: float) -> FwlQuery:
    if clip <= 0:
        raise ValueError("clip bound must be positive")

    def evaluate(data: IncompleteDataset) -> np.ndarray:
        vals = np.clip(data.values_filled, -clip, clip)
        vals = np.where(data.na_mask, 0.0, vals)
        return vals.sum(axis=0) / n

    L = np.full(d, 1.0 / n)
    return FwlQuery(evaluate, L, 1, d, n, d, {"kind": "clipped_mean", "clip": clip})


def _covariance_query(n: int, d: int, B: float) -> FwlQuery:
    if B <= 0:
        raise ValueError("covariance query needs a positive entry bound B")

    def evaluate(data: IncompleteDataset) -> np.ndarray:
        vals = data.values_filled
        return (vals.T @ vals / n).reshape(-1)

    L = np.full(d, 2.0 * B * d / n)
    return FwlQuery(evaluate, L, 1, d * d, n, d, {"kind": "covariance", "B": B})


def _mean_projection_query(n: int, d: int, projection: np.ndarray) -> FwlQuery:
    P = np.asarray(projection, dtype=float)
    if P.ndim != 2 or P.shape[1] != d:
        raise DimensionError("projection must be k x d")

    def evaluate(data: IncompleteDataset) -> np.ndarray:
        return P @ (data.values_filled.sum(axis=0) / n)

    L = np.sqrt((P * P).sum(axis=0)) / n  # ||P e_j||_2 / n
    return FwlQuery(evaluate, L, 2, P.shape[0], n, d, {"kind": "mean_projection"})


def _histogram_query(
    n: int,
    d: int,
    lo: float,
    hi: float,
    bins: int,
    features: Optional[Sequence[int]] = None,
) -> FwlQuery:
    """Per-feature marginals with triangular (hat) bin memberships.

    Hard one-hot binning is not feature-wise Lipschitz with any finite
    constant: two values straddling a bin edge move a full 2/n of mass while
    their gap is arbitrarily small. Hat memberships with unit overlap change
    at rate 1/width per bin and at most two bins are active, so the constants
    2 / (n * width) hold exactly.
    """
    if hi <= lo or bins < 1:
        raise ValueError("histogram needs hi > lo and bins >= 1")
    feats = tuple(range(d)) if features is None else tuple(sorted(set(features)))
    if any(j < 0 or j >= d for j in feats):
        raise ValueError("histogram feature indices out of range")
    width = (hi - lo) / bins
    centers = lo + width * (np.arange(bins) + 0.5)

    def evaluate(data: IncompleteDataset) -> np.ndarray:
        vals = data.values_filled
        obs = ~data.na_mask
        out = np.empty(len(feats) * bins)
        for pos, j in enumerate(feats):
            col = vals[:, j][obs[:, j]]
            member = np.clip(
                1.0 - np.abs(col[:, None] - centers[None, :]) / width, 0.0, None
            )
            out[pos * bins : (pos + 1) * bins] = member.sum(axis=0) / n
        return out

    L = np.zeros(d)
    for j in feats:
        L[j] = 2.0 / (n * width)
    return FwlQuery(
        evaluate, L, 1, len(feats) * bins, n, d,
        {"kind": "histogram", "bins": bins, "lo": lo, "hi": hi},
    )


_CONSTRUCTORS = {
    "histogram": _histogram_query,
    "linear": _linear_query,
    "bounded_mean": _bounded_mean_query,
    "clipped_mean": _clipped_mean_query,
    "covariance": _covariance_query,
    "mean_projection": _mean_projection_query,
}


def make_standard_query(kind: str, **params) -> FwlQuery:
    """Build a catalog query; the constants match the closed-form formulas.

    Kinds: histogram, linear, bounded_mean, clipped_mean, covariance,
    mean_projection. See the individual builders for kind-specific params.
    """
    if kind not in _CONSTRUCTORS:
        raise ValueError(f"unknown query kind '{kind}'")
    return _CONSTRUCTORS[kind](**params)


# --- closure combinators -----------------------------------------------------


def lipschitz_postprocess(
    q: FwlQuery,
    mapping: Callable[[np.ndarray], np.ndarray],
    Lambda: float,
    output_dim: Optional[int] = None,
    spot_checks: int = 32,
    check_radius: float = 1.0,
    seed: int = 7,
) -> FwlQuery:
    """Compose a Lambda-Lipschitz map after a query; constants scale by Lambda.

    The Lipschitz claim is the caller's; it is spot-checked on random point
    pairs and a violation raises rather than producing silently invalid
    constants.
    """
    if Lambda < 0:
        raise ValueError("Lambda must be nonnegative")
    rng = substream(seed, _KEY_TRIAL, 0)
    k_out = output_dim
    for _ in range(spot_checks):
        x = rng.uniform(-check_radius, check_radius, q.output_dim)
        y = rng.uniform(-check_radius, check_radius, q.output_dim)
        fx = np.atleast_1d(np.asarray(mapping(x), dtype=float))
        fy = np.atleast_1d(np.asarray(mapping(y), dtype=float))
        if k_out is None:
            k_out = fx.size
        lhs = _norm(fx - fy, q.norm_p)
        rhs = Lambda * _norm(x - y, q.norm_p)
        if lhs > rhs + 1e-9 * max(1.0, rhs):
            raise LipschitzContractError(
                f"map moved points by {lhs:.6g} > Lambda * input distance {rhs:.6g}"
            )
    if k_out is None:
        k_out = int(np.atleast_1d(np.asarray(mapping(np.zeros(q.output_dim)))).size)

    def evaluate(data: IncompleteDataset) -> np.ndarray:
        return np.atleast_1d(np.asarray(mapping(q(data)), dtype=float))

    return FwlQuery(
        evaluate,
        Lambda * q.constants_L,
        q.norm_p,
        int(k_out),
        q.n,
        q.d,
        {"kind": "postprocess", "lambda": Lambda, "inner": q.descriptor},
    )


def linear_combination(queries: Sequence[FwlQuery], coeffs: Sequence[float]) -> FwlQuery:
    """Weighted sum of queries; constants add with absolute coefficients."""
    if len(queries) != len(coeffs) or not queries:
        raise DimensionError("need one coefficient per query")
    q0 = queries[0]
    for q in queries:
        if (q.output_dim, q.norm_p, q.n, q.d) != (
            q0.output_dim,
            q0.norm_p,
            q0.n,
            q0.d,
        ):
            raise DimensionError("queries must share output dim, norm, n and d")
    coeffs = [float(a) for a in coeffs]
    L = sum(abs(a) * q.constants_L for a, q in zip(coeffs, queries))

    def evaluate(data: IncompleteDataset) -> np.ndarray:
        return sum(a * q(data) for a, q in zip(coeffs, queries))

    return FwlQuery(
        evaluate,
        L,
        q0.norm_p,
        q0.output_dim,
        q0.n,
        q0.d,
        {"kind": "linear_combination", "coeffs": coeffs},
    )


# --- sensitivity bounds ------------------------------------------------------


def sensitivity_complete(q: FwlQuery, B: float) -> float:
    """Complete-data sensitivity constant: 2B times the sum of all constants."""
    if B < 0:
        raise ValueError("B must be nonnegative")
    return 2.0 * B * float(np.sum(q.constants_L))


def sensitivity_masked(q: FwlQuery, B: float, rho: float) -> SensitivityBounds:
    """Masked-data constant: 2B times the sum of the floor(rho*d) largest L.

    Only features a mask can observe contribute to the gap, so the worst case
    keeps the largest constants. The sort is stable on the original index;
    floor(rho*d) = 0 gives a zero constant (everything is always missing).
    """
    if B < 0:
        raise ValueError("B must be nonnegative")
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    keep = math.floor(rho * q.d)
    order = np.argsort(-q.constants_L, kind="stable")
    c_tilde = 2.0 * B * float(np.sum(q.constants_L[order[:keep]]))
    return SensitivityBounds(
        C_p=sensitivity_complete(q, B), C_tilde_p=c_tilde, rho=rho, B=B
    )


# --- empirical check ---------------------------------------------------------


@dataclass(frozen=True)
class FwlCheckReport:
    max_violation: float
    worst_case: Optional[tuple]
    trials: int


def _corner_pair(q: FwlQuery, B: float):
    """Deterministic adversarial trial: fully observed, max-gap corner rows."""
    base = [[-B] * q.d for _ in range(q.n)]
    alt = [row[:] for row in base]
    alt[0] = [B] * q.d
    mask = MaskMatrix(tuple(Mask(tuple([0] * q.d)) for _ in range(q.n)))
    return CompleteDataset(tuple(map(tuple, base))), CompleteDataset(
        tuple(map(tuple, alt))
    ), mask, 0


def verify_fwl(q: FwlQuery, trials: int, B: float, seed: int = 0) -> FwlCheckReport:
    """Sample shared-mask neighbor pairs and test the FWL inequality.

    max_violation <= 0 certifies no counterexample was found; this is
    probabilistic evidence guarding combinator misuse, not a proof. Trial 0 is
    the deterministic max-gap corner pair, which catches understated constants
    immediately.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    worst = -math.inf
    worst_case = None
    for t in range(trials):
        if t == 0:
            left, right, mask, i_star = _corner_pair(q, B)
        else:
            rng = substream(seed, _KEY_TRIAL, t)
            vals = rng.uniform(-B, B, (q.n, q.d))
            left = CompleteDataset(tuple(map(tuple, vals)))
            i_star = int(rng.integers(q.n))
            right = left.substitute(i_star, rng.uniform(-B, B, q.d))
            bits = rng.integers(0, 2, (q.n, q.d))
            mask = MaskMatrix(tuple(Mask(tuple(int(b) for b in r)) for r in bits))
        masked_l = apply_mask(left, mask)
        masked_r = apply_mask(right, mask)
        lhs = _norm(q(masked_l) - q(masked_r), q.norm_p)
        obs = np.array([1.0 - b for b in mask.rows[i_star].bits])
        gaps = (
            np.abs(np.array(left.rows[i_star]) - np.array(right.rows[i_star])) * obs
        )
        rhs = float(np.dot(q.constants_L, gaps))
        violation = lhs - rhs
        if violation > worst:
            worst = violation
            worst_case = (left, right, mask)
    return FwlCheckReport(max_violation=worst, worst_case=worst_case, trials=trials)
