"""Subspace perturbation bounds for the Grassmannian distance and the d' selection study."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import DegenerateSpectrumError
from .losses import grassmann_distance
from .numerics import covariance, sym_eig

RANK_TOL = 1e-10


@dataclass(frozen=True)
class SpectrumPair:
    lambdas_s: np.ndarray
    lambdas_t: np.ndarray
    n: int
    B: float
    delta: float

    def __post_init__(self):
        for lam in (self.lambdas_s, self.lambdas_t):
            lam = np.asarray(lam)
            if np.any(lam < -1e-10) or np.any(np.diff(lam) > 1e-10):
                raise ValueError("eigenvalue lists must be non-negative and descending")


def _check(B, n, delta):
    if not B > 0:
        raise ValueError(f"B must be positive, got {B}")
    if not n >= 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def e_delta(B: float, n: float, delta: float) -> float:
    """(4B / sqrt(n)) * (1 + sqrt(ln(1/delta) / 2))."""
    _check(B, n, delta)
    return 4.0 * B / math.sqrt(n) * (1.0 + math.sqrt(math.log(1.0 / delta) / 2.0))


def sample_size_threshold(B: float, delta: float, gap: float) -> float:
    """Smallest n for which the projector perturbation bound applies at this eigen-gap."""
    if not gap > 0:
        raise DegenerateSpectrumError(float(gap), -1, 0.0)
    _check(B, 1, delta)
    return (4.0 * B / gap * (1.0 + math.sqrt(math.log(1.0 / delta) / 2.0))) ** 2


def spectrum(C, rank_tol: float = RANK_TOL, length: int | None = None) -> np.ndarray:
    """Descending eigenvalues of C; values below rank_tol * lambda_1 become exact zeros.

    ``length`` pads with zeros (or truncates) so gaps past the dimension are defined.
    """
    lam = sym_eig(C).values.copy()
    top = lam[0] if lam.size else 0.0
    lam[lam < rank_tol * max(top, 0.0)] = 0.0
    if length is not None:
        lam = np.concatenate([lam, np.zeros(max(0, length - lam.size))])[:length]
    return lam


def eigen_gap(lam, d_prime: int) -> float:
    lam = np.asarray(lam)
    nxt = lam[d_prime] if d_prime < lam.size else 0.0
    return float(lam[d_prime - 1] - nxt)


def error_index(pair: SpectrumPair, d_prime: int) -> float:
    """sqrt(d')/gap_s + sqrt(d')/gap_t; ``inf`` when either gap is not positive."""
    gs, gt = eigen_gap(pair.lambdas_s, d_prime), eigen_gap(pair.lambdas_t, d_prime)
    if gs <= 0 or gt <= 0:
        return math.inf
    r = math.sqrt(d_prime)
    return r / gs + r / gt


def bound_value(pair: SpectrumPair, d_prime: int) -> float:
    """2 sqrt(2) E(delta) e(d')."""
    return 2.0 * math.sqrt(2.0) * e_delta(pair.B, pair.n, pair.delta) * error_index(pair, d_prime)


def max_column_norm(*mats) -> float:
    return float(max(np.linalg.norm(m, axis=0).max() for m in mats))


def _draw(seed, trial, n, size):
    return np.random.default_rng([seed, trial, n]).choice(n, size, replace=False)


def recommend_dprime(features_s, features_t, batch_size: int, trials: int = 20, seed: int = 0):
    """Average e(d') over random batches for d' = 1 .. batch_size - 1.

    Returns ``(best, curve)``; ``curve`` rows are ``(d', mean e, mean gap_s, mean gap_t)``
    and ``best`` is the argmin of mean e (ties go to the larger d').
    """
    if batch_size < 3:
        raise ValueError("batch_size must be >= 3")
    Xs, Xt = np.asarray(features_s, float), np.asarray(features_t, float)
    if Xs.shape[1] < batch_size or Xt.shape[1] < batch_size:
        raise ValueError(f"need at least {batch_size} samples per domain")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    dps = np.arange(1, batch_size)
    e_sum = np.zeros(dps.size)
    gs_sum = np.zeros(dps.size)
    gt_sum = np.zeros(dps.size)
    for t in range(trials):
        # each domain's draw depends only on (seed, trial, its size), so exchanging
        # the domains exchanges the batches and leaves the curve unchanged
        bs = Xs[:, _draw(seed, t, Xs.shape[1], batch_size)]
        bt = Xt[:, _draw(seed, t, Xt.shape[1], batch_size)]
        pair = SpectrumPair(spectrum(covariance(bs), length=batch_size),
                            spectrum(covariance(bt), length=batch_size), batch_size, 1.0, 0.5)
        for i, dp in enumerate(dps):
            e_sum[i] += error_index(pair, int(dp))
            gs_sum[i] += eigen_gap(pair.lambdas_s, int(dp))
            gt_sum[i] += eigen_gap(pair.lambdas_t, int(dp))
    e_mean = e_sum / trials
    curve = [(int(dp), float(e), float(a), float(b))
             for dp, e, a, b in zip(dps, e_mean, gs_sum / trials, gt_sum / trials)]
    finite = np.isfinite(e_mean)
    if not finite.any():
        raise DegenerateSpectrumError(0.0, -1, 0.0)
    best_val = e_mean[finite].min()
    best = int(dps[np.flatnonzero(finite & (e_mean == best_val))[-1]])
    return best, curve


@dataclass
class BoundCheck:
    full_distance: float
    bound: float
    errors: np.ndarray

    @property
    def coverage(self) -> float:
        return float(np.mean(self.errors <= self.bound))


def bound_monte_carlo(features_s, features_t, batch_size: int, d_prime: int, delta: float = 0.05,
                      resamples: int = 200, seed: int = 0, B: float | None = None) -> BoundCheck:
    """Compare the full-data Grassmannian distance with batch estimates against the bound.

    The full-data covariances stand in for the population ones.
    """
    Xs, Xt = np.asarray(features_s, float), np.asarray(features_t, float)
    Cs, Ct = covariance(Xs), covariance(Xt)
    full = grassmann_distance(Cs, Ct, d_prime)
    B = max_column_norm(Xs, Xt) if B is None else B
    pair = SpectrumPair(spectrum(Cs), spectrum(Ct), batch_size, B, delta)
    bound = bound_value(pair, d_prime)
    rng = np.random.default_rng(seed)
    errs = np.empty(resamples)
    for r in range(resamples):
        bs = Xs[:, rng.choice(Xs.shape[1], batch_size, replace=False)]
        bt = Xt[:, rng.choice(Xt.shape[1], batch_size, replace=False)]
        errs[r] = abs(full - grassmann_distance(covariance(bs), covariance(bt), d_prime))
    return BoundCheck(full, bound, errs)
