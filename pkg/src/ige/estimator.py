"""Channel gain recovery from transmit-power matrices and received powers.

Each receiver solves min ||P h - p_rx||^2 subject to h_min <= h <= h_max,
where row j of P holds the senders' transmit powers (mW) in round j.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, RankError

RANK_RTOL = 1e-10
GRAD_RTOL = 1e-12


class RankVerdict(enum.Enum):
    FULL_RANK = "full_rank"
    SINGULAR = "singular"
    DEGENERATE_DELTA = "degenerate_delta"


@dataclass
class GainEstimate:
    gains: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    residual_norm: float
    condition_number: float
    iterations: int = 0


def numerical_rank(P) -> int:
    s = np.linalg.svd(np.asarray(P, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > RANK_RTOL * s[0]))


def _check_matrix(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] < 1 or P.shape[1] < 1:
        raise InvalidInputError("transmit power matrix must be a non-empty 2-D array")
    if np.any(P < 0) or not np.all(np.isfinite(P)):
        raise InvalidInputError("transmit powers must be finite and non-negative")
    return P


def condition_number(P) -> float:
    P = _check_matrix(P)
    s = np.linalg.svd(P, compute_uv=False)
    n = P.shape[1]
    rank = int(np.count_nonzero(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
    if rank < n:
        raise RankError(rank, n)
    return float(s[0] / s[n - 1])


def _broadcast_bounds(bounds, n):
    lo, hi = bounds
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    if np.any(lo > hi):
        raise InvalidInputError("every lower bound must not exceed its upper bound")
    return lo, hi


def bvls(A: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray,
         max_iter: int | None = None):
    """Bounded-variable least squares by active-set iteration.

    Variables start pinned at their lower bounds and are released one at a
    time, choosing the largest KKT violation (lowest index on ties).  After
    each release the free subproblem is solved; if the solution leaves the
    box we step back to the first bound crossed and pin those variables.
    Returns (x, outer_iterations).
    """
    m, n = A.shape
    max_iter = 10 * n if max_iter is None else max_iter
    x = lo.copy()
    free = np.zeros(n, dtype=bool)
    scale = np.linalg.norm(A) * max(np.linalg.norm(b), np.linalg.norm(A @ hi), 1e-300)
    tol = GRAD_RTOL * scale
    blocked = -1
    it = 0
    while it < max_iter:
        it += 1
        w = A.T @ (b - A @ x)
        at_lo = ~free & (x <= lo)
        at_hi = ~free & (x >= hi)
        viol = np.where(at_lo & (w > tol), w, 0.0) + np.where(at_hi & (w < -tol), -w, 0.0)
        if blocked >= 0:
            viol[blocked] = 0.0
        if not np.any(viol > 0):
            break
        j = int(np.argmax(viol))
        free[j] = True
        while True:
            F = np.flatnonzero(free)
            rhs = b - A[:, ~free] @ x[~free]
            z = np.linalg.lstsq(A[:, F], rhs, rcond=None)[0]
            inside = (z > lo[F]) & (z < hi[F])
            if np.all(inside):
                x[F] = z
                blocked = -1
                break
            # largest step toward z that stays feasible
            d = z - x[F]
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d < 0, (lo[F] - x[F]) / d, np.where(d > 0, (hi[F] - x[F]) / d, np.inf))
            step = np.clip(np.where(inside, np.inf, step), 0.0, 1.0)
            alpha = float(np.min(step))
            x[F] = x[F] + alpha * d
            hit = F[step <= alpha]
            for k in hit:
                x[k] = lo[k] if d[np.searchsorted(F, k)] < 0 else hi[k]
                free[k] = False
            if j in hit and alpha == 0.0:
                # released variable bounces straight back: skip it next round
                blocked = j
                break
            if not np.any(free):
                break
    return x, it


def estimate_gains(P, p_rx, bounds) -> GainEstimate:
    """Bounded least-squares gains for one receiver.

    ``P`` is m x n (mW), ``p_rx`` has length m (mW), ``bounds`` is a pair of
    scalars or length-n arrays.
    """
    P = _check_matrix(P)
    p_rx = np.asarray(p_rx, dtype=float).reshape(-1)
    m, n = P.shape
    if p_rx.shape[0] != m:
        raise InvalidInputError(f"p_rx has {p_rx.shape[0]} entries, matrix has {m} rows")
    if m < n:
        raise RankError(m, n, f"{m} rounds cannot determine {n} gains")
    lo, hi = _broadcast_bounds(bounds, n)
    s = np.linalg.svd(P, compute_uv=False)
    rank = int(np.count_nonzero(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
    if rank < n:
        raise RankError(rank, n)
    kappa = float(s[0] / s[n - 1])
    h = np.linalg.lstsq(P, p_rx, rcond=None)[0]
    it = 0
    if np.any(h < lo) or np.any(h > hi):
        h, it = bvls(P, p_rx, lo, hi)
        h = np.clip(h, lo, hi)
    res = float(np.linalg.norm(P @ h - p_rx))
    return GainEstimate(h, lo, hi, res, kappa, it)


def assemble_power_matrix(base, deltas) -> np.ndarray:
    """Rows are rounds: every node at base power, node j adjusted in round j."""
    base = np.asarray(base, dtype=float)
    return np.tile(base, (len(base), 1)) + np.diag(np.asarray(deltas, dtype=float))


def full_rank_condition(base, deltas) -> RankVerdict:
    """Decide invertibility of 1 b^T + diag(deltas) by the determinant lemma.

    det = prod(deltas) * (1 + sum(b_i / delta_i)), so the matrix is singular
    exactly when 1 + sum(b_i / delta_i) vanishes.  A zero delta puts the
    lemma out of reach; the caller must fall back to a numerical rank.
    """
    base = np.asarray(base, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    if base.shape != deltas.shape or base.ndim != 1:
        raise InvalidInputError("base and deltas must be 1-D and the same length")
    if np.any(base <= 0):
        raise InvalidInputError("base powers must be positive")
    if np.any(deltas == 0):
        return RankVerdict.DEGENERATE_DELTA
    ratios = base / deltas
    total = 1.0 + float(np.sum(ratios))
    scale = max(1.0, float(np.sum(np.abs(ratios))))
    if abs(total) <= RANK_RTOL * scale:
        return RankVerdict.SINGULAR
    return RankVerdict.FULL_RANK


def error_bound(kappa: float, noise_norm: float, delta_prx_norm: float) -> float:
    """Relative gain-error bound kappa * |v| / |delta p_rx|."""
    if delta_prx_norm == 0:
        raise InvalidInputError("received-power change must be non-zero")
    if kappa <= 0 or noise_norm < 0 or delta_prx_norm < 0:
        raise InvalidInputError("inputs must be positive")
    return kappa * noise_norm / delta_prx_norm


def gain_error_db(estimate, truth, censor_rtol: float = 1e-9):
    """Per-link |dB(estimate) - dB(truth)| and a censored mask.

    Estimates sitting on their lower bound (or non-positive) are censored;
    their error is still reported against the bound when it is positive.
    """
    if isinstance(estimate, GainEstimate):
        est, lo = estimate.gains, estimate.lower
    else:
        est, lo = np.asarray(estimate, dtype=float), None
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise InvalidInputError("estimate and truth dimensions differ")
    if np.any(truth <= 0):
        raise InvalidInputError("true gains must be positive")
    censored = est <= 0
    if lo is not None:
        censored |= est <= lo * (1.0 + censor_rtol)
    with np.errstate(divide="ignore"):
        err = np.where(est > 0, np.abs(10.0 * np.log10(np.where(est > 0, est, 1.0)) - 10.0 * np.log10(truth)), np.inf)
    return err, censored


def gain_bounds(power_set_mw, rx_floor_dbm: float = -90.0, rx_ceiling_dbm: float = -20.0):
    """Box bounds keeping every received power inside the rx window."""
    p = np.asarray(power_set_mw, dtype=float)
    h_max = min(1.0, 10.0 ** (rx_ceiling_dbm / 10.0) / p.min())
    h_min = 10.0 ** (rx_floor_dbm / 10.0) / p.max()
    return h_min, h_max


def write_estimates_csv(path, rows) -> None:
    """rows: iterables of (receiver, sender, gain_mw_ratio, censored, kappa, residual)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["receiver", "sender", "gain_db", "censored", "kappa", "residual_mw"])
        for rx, tx, g, cen, kappa, res in rows:
            gdb = 10.0 * math.log10(g) if g > 0 else float("-inf")
            w.writerow([rx, tx, f"{gdb:.6f}", int(bool(cen)), f"{kappa:.6g}", f"{res:.6g}"])
