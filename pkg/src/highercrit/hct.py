"""Thresholding transforms, p-values, the HC curve, and the HC threshold.

Selection works on a transformed copy of the training z-vector: the
innovated transform Omega*Z (optimal per-coordinate SNR among linear
transforms), the brute-force identity, or the whitening transform
Omega^{1/2} Z. Coordinates are converted to two-sided normal p-values,
sorted, and scanned with the standardized HC statistic

    HC_{p,j} = sqrt(p) * (j/p - pi_(j)) / sqrt((j/p) * (1 - j/p)),

maximized over the order indices whose corresponding |Z_hat| order statistic
falls in (PSI_BAR_INV_HALF, s*). The maximizing order statistic, clamped to
[s~, s*], is the working threshold; the clipping rule
mu_hat(j) = sgn(Z_hat(j)) 1{|Z_hat(j)| >= t} then estimates the contrast mean.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.special

from .model import RareWeakParams, SparseSymMatrix

__all__ = [
    "TransformMode",
    "transform",
    "pvalues",
    "hc_curve",
    "hc_threshold",
    "clip_estimate",
    "ThresholdReport",
    "PSI_BAR_INV_HALF",
]

# t with P(|N(0,1)| >= t) = 1/2, the lower end of the threshold search range
PSI_BAR_INV_HALF = float(scipy.special.ndtri(0.75))

MAX_DENSE_SQRT_P = 6000


class TransformMode(enum.Enum):
    IT = "it"  # innovated: Omega_hat @ Z
    BT = "bt"  # brute force: Z unchanged
    WT = "wt"  # whitened: Omega_hat^{1/2} @ Z


def _paired_block_sqrt_apply(h: float, z: np.ndarray) -> np.ndarray:
    # 2x2 blocks [[1,h],[h,1]] have sqrt [[alpha,gamma],[gamma,alpha]]
    alpha = 0.5 * (math.sqrt(1.0 + h) + math.sqrt(1.0 - h))
    gamma = 0.5 * (math.sqrt(1.0 + h) - math.sqrt(1.0 - h))
    out = alpha * z
    out[0::2] += gamma * z[1::2]
    out[1::2] += gamma * z[0::2]
    return out


def transform(
    z: np.ndarray, omega_hat: SparseSymMatrix | np.ndarray, mode: TransformMode
) -> np.ndarray:
    """Apply the selection transform to the z-vector."""
    z = np.asarray(z, dtype=np.float64)
    if mode is TransformMode.BT:
        return z.copy()
    if mode is TransformMode.IT:
        return omega_hat @ z
    if mode is TransformMode.WT:
        if isinstance(omega_hat, SparseSymMatrix):
            if omega_hat.meta.get("kind") == "paired_block":
                return _paired_block_sqrt_apply(omega_hat.meta["h"], z.copy())
            dense = omega_hat.to_dense()
        else:
            dense = np.asarray(omega_hat, dtype=np.float64)
        if dense.shape[0] > MAX_DENSE_SQRT_P:
            raise ValueError(
                f"whitening square root uses a dense path capped at "
                f"p={MAX_DENSE_SQRT_P}"
            )
        evals, evecs = scipy.linalg.eigh(dense)
        if evals[0] <= 1e-12 * max(evals[-1], 1.0):
            raise ValueError("whitening transform needs a positive definite matrix")
        return evecs @ (np.sqrt(evals) * (evecs.T @ z))
    raise TypeError(f"unknown transform mode {mode!r}")


def pvalues(z_hat: np.ndarray) -> np.ndarray:
    """Two-sided normal p-values pi_j = P(|N(0,1)| >= |z_hat(j)|)."""
    z_hat = np.asarray(z_hat, dtype=np.float64)
    return scipy.special.erfc(np.abs(z_hat) / math.sqrt(2.0))


def hc_curve(pi: np.ndarray) -> np.ndarray:
    """HC values over the sorted p-values, for j = 1 .. p-1 (j = p excluded)."""
    pi = np.sort(np.asarray(pi, dtype=np.float64))
    p = pi.size
    if p < 2:
        raise ValueError("need at least two p-values")
    j = np.arange(1, p, dtype=np.float64)
    frac = j / p
    return math.sqrt(p) * (frac - pi[:-1]) / np.sqrt(frac * (1.0 - frac))


@dataclass
class ThresholdReport:
    """HC scan outcome: curve, argmax, raw and clamped threshold, selection."""

    hc_values: np.ndarray
    sorted_abs: np.ndarray  # |z_hat| descending; pairs with ascending p-values
    pvalues_sorted: np.ndarray
    jhat: Optional[int]  # 1-based order index of the argmax, None if none admissible
    raw_threshold: float
    clamped_threshold: float
    selected: np.ndarray
    clamp_applied: str  # "none" | "lower" | "upper"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("j,abs_z_sorted,pvalue_sorted,hc\n")
            for j in range(self.hc_values.size):
                fh.write(
                    f"{j + 1},{self.sorted_abs[j]!r},"
                    f"{self.pvalues_sorted[j]!r},{self.hc_values[j]!r}\n"
                )


def hc_threshold(z_hat: np.ndarray, params: RareWeakParams) -> ThresholdReport:
    """Pick the data-driven threshold by maximizing the HC curve.

    The argmax runs over order indices j whose |z_hat| order statistic lies
    strictly inside (PSI_BAR_INV_HALF, s*); ties break toward smaller j (the
    larger threshold). The raw threshold is then clamped into [s~, s*]; an
    empty admissible set falls straight to the upper clamp t = s*.
    """
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if z_hat.size < 2:
        raise ValueError("need at least two coordinates")
    abs_z = np.abs(z_hat)
    sorted_abs = np.sort(abs_z)[::-1]
    pi_sorted = scipy.special.erfc(sorted_abs / math.sqrt(2.0))
    hc = hc_curve_from_sorted(pi_sorted)

    ord_stats = sorted_abs[:-1]  # the j-th largest |z_hat|, j = 1..p-1
    admissible = (ord_stats > PSI_BAR_INV_HALF) & (ord_stats < params.s_star)
    if not admissible.any():
        jhat = None
        raw = math.nan
        clamped = params.s_star
        clamp = "upper"
    else:
        cand = np.where(admissible, hc, -np.inf)
        jhat = int(np.argmax(cand)) + 1
        raw = float(ord_stats[jhat - 1])
        if raw < params.s_tilde:
            clamped, clamp = params.s_tilde, "lower"
        elif raw > params.s_star:
            clamped, clamp = params.s_star, "upper"
        else:
            clamped, clamp = raw, "none"
    selected = np.flatnonzero(abs_z >= clamped)
    return ThresholdReport(
        hc_values=hc,
        sorted_abs=sorted_abs,
        pvalues_sorted=pi_sorted,
        jhat=jhat,
        raw_threshold=raw,
        clamped_threshold=float(clamped),
        selected=selected,
        clamp_applied=clamp,
    )


def hc_curve_from_sorted(pi_sorted: np.ndarray) -> np.ndarray:
    """hc_curve for p-values already in ascending order (no re-sort)."""
    p = pi_sorted.size
    if p < 2:
        raise ValueError("need at least two p-values")
    j = np.arange(1, p, dtype=np.float64)
    frac = j / p
    return math.sqrt(p) * (frac - pi_sorted[:-1]) / np.sqrt(frac * (1.0 - frac))


def clip_estimate(z_hat: np.ndarray, t: float) -> np.ndarray:
    """Clipping rule: mu_hat(j) = sgn(z_hat(j)) 1{|z_hat(j)| >= t}."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    z_hat = np.asarray(z_hat, dtype=np.float64)
    return np.sign(z_hat) * (np.abs(z_hat) >= t)
