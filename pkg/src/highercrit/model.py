"""Rare/weak calibration, structured precision matrices, and data simulation.

The generative model: a contrast mean vector mu with sqrt(n)*mu(j) drawn iid
from (1 - eps) nu_0 + eps H, labels Y = +/-1, and samples
X_i ~ N(Y_i mu, Sigma) with Omega = Sigma^{-1} sparse. Training data are
summarized by the z-vector Z = n^{-1/2} sum_i Y_i X_i ~ N(sqrt(n) mu, Sigma).

Calibration links everything to a single dimension p through exponents
(beta, r, theta): eps = p^-beta, tau = sqrt(2 r log p), n = round(p^theta),
with thresholding landmarks s* = sqrt(2 log p) and
s~ = sqrt(2 max(0, log(p/n^2))).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse

from . import kernels
from .kernels import NotPositiveDefiniteError

__all__ = [
    "RareWeakParams",
    "derive_params",
    "SignalDistribution",
    "sample_mu",
    "Identity",
    "Tridiagonal",
    "FiveDiagonal",
    "PairedBlock",
    "BlockFiveDiagonal",
    "Explicit",
    "build_omega",
    "SparseSymMatrix",
    "Dataset",
    "sample_dataset",
    "ZVector",
    "z_vector",
    "NotPositiveDefiniteError",
]

MAX_BANDWIDTH = 64  # beyond this, fall back to a dense factorization
MAX_DENSE_P = 6000


class ParameterDomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RareWeakParams:
    """Calibrated problem size: (p, beta, r, theta) plus all derived scalars."""

    p: int
    beta: float
    r: float
    theta: float
    eps_p: float
    n_p: int
    tau_p: float
    s_star: float
    s_tilde: float

    def to_text(self) -> str:
        return (
            f"p = {self.p!r}\n"
            f"eps_p = {self.eps_p!r}\n"
            f"n = {self.n_p!r}\n"
            f"tau_p = {self.tau_p!r}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "RareWeakParams":
        kv = parse_keyvalue_text(text)
        return derive_params(
            int(kv["p"]),
            eps_p=float(kv["eps_p"]),
            n=int(kv["n"]),
            tau_p=float(kv["tau_p"]),
        )


def derive_params(
    p: int,
    beta: float | None = None,
    r: float | None = None,
    theta: float | None = None,
    *,
    eps_p: float | None = None,
    tau_p: float | None = None,
    n: int | None = None,
) -> RareWeakParams:
    """Calibrate the rare/weak parameters.

    Each of the three axes may be given either as an exponent in (0,1)
    (beta, r, theta) or as a literal (eps_p, tau_p, n), matching how the
    simulation experiments fix numbers directly. Literal eps_p may sit on
    the closed interval [0, 1] so degenerate all-null / all-signal draws
    are expressible; the exponent form keeps the strict open domain.
    """
    if not isinstance(p, (int, np.integer)) or p < 2:
        raise ParameterDomainError(f"p must be an integer >= 2, got {p!r}")
    p = int(p)
    logp = math.log(p)

    if (beta is None) == (eps_p is None):
        raise ParameterDomainError("give exactly one of beta or eps_p")
    if beta is not None:
        if not 0.0 < beta < 1.0:
            raise ParameterDomainError(f"beta must lie in (0,1), got {beta}")
        eps_p = p ** (-beta)
    else:
        if not 0.0 <= eps_p <= 1.0:
            raise ParameterDomainError(f"eps_p must lie in [0,1], got {eps_p}")
        beta = -math.log(eps_p) / logp if 0.0 < eps_p else math.inf

    if (r is None) == (tau_p is None):
        raise ParameterDomainError("give exactly one of r or tau_p")
    if r is not None:
        if not 0.0 < r < 1.0:
            raise ParameterDomainError(f"r must lie in (0,1), got {r}")
        tau_p = math.sqrt(2.0 * r * logp)
    else:
        if tau_p <= 0.0:
            raise ParameterDomainError(f"tau_p must be positive, got {tau_p}")
        r = tau_p * tau_p / (2.0 * logp)

    if (theta is None) == (n is None):
        raise ParameterDomainError("give exactly one of theta or n")
    if theta is not None:
        if not 0.0 < theta < 1.0:
            raise ParameterDomainError(f"theta must lie in (0,1), got {theta}")
        n_p = max(2, round(p**theta))
    else:
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise ParameterDomainError(f"n must be an integer >= 1, got {n!r}")
        n_p = int(n)
        theta = math.log(n_p) / logp

    s_star = math.sqrt(2.0 * logp)
    s_tilde = math.sqrt(2.0 * max(0.0, math.log(p / n_p**2)))
    return RareWeakParams(
        p=p,
        beta=beta,
        r=r,
        theta=theta,
        eps_p=eps_p,
        n_p=n_p,
        tau_p=tau_p,
        s_star=s_star,
        s_tilde=s_tilde,
    )


# ---------------------------------------------------------------------------
# signal distribution H (distribution of sqrt(n) * mu(j) given a signal)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalDistribution:
    """Signal-strength law H: point mass at tau, or uniform on [lo, hi].

    ``sign_mode`` is "positive" by default (all signals share the positive
    sign); "negative" and "mixed" (iid random signs) are accepted but unused
    by the stock experiments.
    """

    kind: str  # "point_mass" | "uniform"
    tau: float | None = None
    lo: float | None = None
    hi: float | None = None
    sign_mode: str = "positive"

    def __post_init__(self):
        if self.kind == "point_mass":
            if self.tau is None or self.tau <= 0:
                raise ParameterDomainError("point mass needs tau > 0")
        elif self.kind == "uniform":
            if self.lo is None or self.hi is None or not 0 < self.lo < self.hi:
                raise ParameterDomainError("uniform needs 0 < lo < hi")
        else:
            raise ParameterDomainError(f"unknown signal kind {self.kind!r}")
        if self.sign_mode not in ("positive", "negative", "mixed"):
            raise ParameterDomainError(f"unknown sign_mode {self.sign_mode!r}")

    @classmethod
    def point_mass(cls, tau: float, sign_mode: str = "positive"):
        return cls(kind="point_mass", tau=tau, sign_mode=sign_mode)

    @classmethod
    def uniform(cls, lo: float, hi: float, sign_mode: str = "positive"):
        return cls(kind="uniform", lo=lo, hi=hi, sign_mode=sign_mode)

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "point_mass":
            vals = np.full(size, self.tau, dtype=np.float64)
        else:
            vals = rng.uniform(self.lo, self.hi, size=size)
        if self.sign_mode == "negative":
            vals = -vals
        elif self.sign_mode == "mixed":
            vals = vals * (2.0 * rng.integers(0, 2, size=size) - 1.0)
        return vals


def sample_mu(
    params: RareWeakParams, dist: SignalDistribution, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw the contrast mean: returns (mu, support indices).

    Each coordinate is zero with probability 1 - eps_p, otherwise
    sqrt(n) * mu(j) is drawn from H, so mu(j) = draw / sqrt(n).
    """
    p = params.p
    on = rng.random(p) < params.eps_p
    support = np.flatnonzero(on)
    mu = np.zeros(p)
    if support.size:
        mu[support] = dist.draw(support.size, rng) / math.sqrt(params.n_p)
    return mu, support


# ---------------------------------------------------------------------------
# sparse symmetric matrices
# ---------------------------------------------------------------------------


class SparseSymMatrix:
    """Symmetric sparse matrix with a cached banded/dense Cholesky factor.

    Houses Omega, Sigma, and their estimates. The factor certifies positive
    definiteness on first use; banded storage is used whenever the bandwidth
    is small, dense Cholesky otherwise (p capped at MAX_DENSE_P).
    """

    def __init__(self, csr: scipy.sparse.csr_matrix, meta: dict | None = None):
        csr = scipy.sparse.csr_matrix(csr, dtype=np.float64)
        csr.eliminate_zeros()
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1]:
            raise ValueError("matrix must be square")
        diff = abs(csr - csr.T)
        if diff.nnz and diff.max() > 0:
            raise ValueError("matrix must be exactly symmetric")
        self._csr = csr
        self.meta = dict(meta or {})
        self._factor = None  # ("banded", c) | ("dense", L)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dense(cls, arr, meta=None) -> "SparseSymMatrix":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(scipy.sparse.csr_matrix(arr), meta=meta)

    @classmethod
    def from_triplets(cls, p: int, triplets, meta=None) -> "SparseSymMatrix":
        rows, cols, vals = [], [], []
        for i, j, v in triplets:
            rows.append(i)
            cols.append(j)
            vals.append(v)
        m = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(p, p))
        return cls(m.tocsr(), meta=meta)

    @classmethod
    def identity(cls, p: int) -> "SparseSymMatrix":
        return cls(scipy.sparse.eye(p, format="csr"), meta={"kind": "identity"})

    # -- basic views ---------------------------------------------------------

    @property
    def p(self) -> int:
        return self._csr.shape[0]

    @property
    def csr(self) -> scipy.sparse.csr_matrix:
        return self._csr

    @property
    def diag(self) -> np.ndarray:
        return self._csr.diagonal()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted (column indices, values) of row i."""
        sl = slice(self._csr.indptr[i], self._csr.indptr[i + 1])
        return self._csr.indices[sl], self._csr.data[sl]

    @property
    def k_sparsity(self) -> int:
        """Max row nonzero count, the K of a K-sparse matrix."""
        counts = np.diff(self._csr.indptr)
        return int(counts.max()) if counts.size else 0

    @property
    def bandwidth(self) -> int:
        coo = self._csr.tocoo()
        if coo.nnz == 0:
            return 0
        return int(np.max(np.abs(coo.row - coo.col)))

    def __matmul__(self, other):
        return self._csr @ other

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self._csr @ v

    def is_identity(self) -> bool:
        return self.k_sparsity <= 1 and bool(np.all(self.diag == 1.0))

    # -- factorization and solves -------------------------------------------

    def _to_banded(self, w: int) -> np.ndarray:
        ab = np.zeros((w + 1, self.p))
        coo = self._csr.tocoo()
        lower = coo.row >= coo.col
        ab[coo.row[lower] - coo.col[lower], coo.col[lower]] = coo.data[lower]
        return ab

    def ensure_factor(self):
        """Factorize once (certifying positive definiteness) and cache."""
        if self._factor is not None:
            return self._factor
        w = self.bandwidth
        if w <= MAX_BANDWIDTH:
            c = kernels.banded_cholesky(self._to_banded(w))
            self._factor = ("banded", c)
        else:
            if self.p > MAX_DENSE_P:
                raise ValueError(
                    f"bandwidth {w} too large for banded path and p={self.p} "
                    f"exceeds the dense cap {MAX_DENSE_P}"
                )
            try:
                L = scipy.linalg.cholesky(self.to_dense(), lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError(str(exc)) from exc
            self._factor = ("dense", L)
        return self._factor

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve A x = b through the Cholesky factor."""
        kind, f = self.ensure_factor()
        if kind == "banded":
            return kernels.solve_banded_lower_t(f, kernels.solve_banded_lower(f, b))
        y = scipy.linalg.solve_triangular(f, b, lower=True)
        return scipy.linalg.solve_triangular(f, y, lower=True, trans="T")

    def solve_factor_t(self, b: np.ndarray) -> np.ndarray:
        """Solve L' x = b; maps iid N(0,1) columns to N(0, A^{-1}) noise."""
        kind, f = self.ensure_factor()
        if kind == "banded":
            return kernels.solve_banded_lower_t(f, b)
        return scipy.linalg.solve_triangular(f, b, lower=True, trans="T")

    # -- text round trip ------------------------------------------------------

    def to_triplet_text(self) -> str:
        """Sparse triplet text (i, j, value); repr floats round-trip exactly."""
        coo = self._csr.tocoo()
        buf = io.StringIO()
        buf.write(f"p = {self.p}\n")
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            buf.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]!r}\n")
        return buf.getvalue()

    @classmethod
    def from_triplet_text(cls, text: str) -> "SparseSymMatrix":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("p"):
            raise ValueError("triplet text must start with 'p = <dim>'")
        p = int(lines[0].split("=")[1])
        trips = []
        for ln in lines[1:]:
            i, j, v = ln.split()
            trips.append((int(i), int(j), float(v)))
        return cls.from_triplets(p, trips)


# ---------------------------------------------------------------------------
# precision-matrix specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Tridiagonal:
    a: float


@dataclass(frozen=True)
class FiveDiagonal:
    a1: float
    a2: float


@dataclass(frozen=True)
class PairedBlock:
    h: float

    def __post_init__(self):
        if not -1.0 < self.h < 1.0:
            raise ParameterDomainError("paired-block h must lie in (-1,1)")


@dataclass(frozen=True)
class BlockFiveDiagonal:
    num_blocks: int
    block_size: int
    a1: float
    a2: float


@dataclass(frozen=True)
class Explicit:
    dense: tuple  # nested tuples so the spec stays hashable

    @classmethod
    def from_array(cls, arr) -> "Explicit":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(dense=tuple(tuple(row) for row in arr))


OmegaSpec = Identity | Tridiagonal | FiveDiagonal | PairedBlock | BlockFiveDiagonal | Explicit


def _banded_from_offsets(p: int, offsets: dict[int, float]) -> scipy.sparse.csr_matrix:
    diags = [np.ones(p)]
    offs = [0]
    for k, v in offsets.items():
        diags.append(np.full(p - k, v))
        diags.append(np.full(p - k, v))
        offs.extend([k, -k])
    return scipy.sparse.diags(diags, offs, shape=(p, p), format="csr")


def build_omega(spec: OmegaSpec, p: int | None = None) -> SparseSymMatrix:
    """Build the precision matrix for a spec, certifying positive definiteness.

    Raises NotPositiveDefiniteError naming the spec when the Cholesky
    factorization breaks down.
    """
    if isinstance(spec, Identity):
        m = SparseSymMatrix.identity(_need_p(spec, p))
    elif isinstance(spec, Tridiagonal):
        m = SparseSymMatrix(
            _banded_from_offsets(_need_p(spec, p), {1: spec.a}),
            meta={"kind": "tridiagonal", "a": spec.a},
        )
    elif isinstance(spec, FiveDiagonal):
        m = SparseSymMatrix(
            _banded_from_offsets(_need_p(spec, p), {1: spec.a1, 2: spec.a2}),
            meta={"kind": "five_diagonal", "a1": spec.a1, "a2": spec.a2},
        )
    elif isinstance(spec, PairedBlock):
        p = _need_p(spec, p)
        if p % 2:
            raise ParameterDomainError("paired-block needs even p")
        band = np.zeros(p - 1)
        band[::2] = spec.h
        csr = scipy.sparse.diags(
            [np.ones(p), band, band], [0, 1, -1], shape=(p, p), format="csr"
        )
        m = SparseSymMatrix(csr, meta={"kind": "paired_block", "h": spec.h})
    elif isinstance(spec, BlockFiveDiagonal):
        q = spec.num_blocks * spec.block_size
        if p is not None and p != q:
            raise ParameterDomainError(
                f"block spec implies p={q}, but p={p} was requested"
            )
        block = _banded_from_offsets(spec.block_size, {1: spec.a1, 2: spec.a2})
        csr = scipy.sparse.block_diag([block] * spec.num_blocks, format="csr")
        m = SparseSymMatrix(
            csr,
            meta={
                "kind": "block_five_diagonal",
                "num_blocks": spec.num_blocks,
                "block_size": spec.block_size,
                "a1": spec.a1,
                "a2": spec.a2,
            },
        )
    elif isinstance(spec, Explicit):
        arr = np.asarray(spec.dense, dtype=np.float64)
        if p is not None and arr.shape[0] != p:
            raise ParameterDomainError("explicit matrix does not match requested p")
        m = SparseSymMatrix.from_dense(arr, meta={"kind": "explicit"})
    else:
        raise TypeError(f"unknown omega spec {spec!r}")

    try:
        m.ensure_factor()
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(
            f"spec {spec!r} is not positive definite: {exc}", minor=exc.minor
        ) from exc
    return m


def _need_p(spec, p):
    if p is None:
        raise ParameterDomainError(f"spec {spec!r} needs an explicit p")
    return int(p)


def omega_spec_to_text(spec: OmegaSpec) -> str:
    if isinstance(spec, Identity):
        return "kind = identity\n"
    if isinstance(spec, Tridiagonal):
        return f"kind = tridiagonal\na = {spec.a!r}\n"
    if isinstance(spec, FiveDiagonal):
        return f"kind = five_diagonal\na1 = {spec.a1!r}\na2 = {spec.a2!r}\n"
    if isinstance(spec, PairedBlock):
        return f"kind = paired_block\nh = {spec.h!r}\n"
    if isinstance(spec, BlockFiveDiagonal):
        return (
            "kind = block_five_diagonal\n"
            f"num_blocks = {spec.num_blocks}\nblock_size = {spec.block_size}\n"
            f"a1 = {spec.a1!r}\na2 = {spec.a2!r}\n"
        )
    raise TypeError(f"spec {spec!r} has no text form")


def omega_spec_from_text(text: str) -> OmegaSpec:
    kv = parse_keyvalue_text(text)
    kind = kv["kind"]
    if kind == "identity":
        return Identity()
    if kind == "tridiagonal":
        return Tridiagonal(a=float(kv["a"]))
    if kind == "five_diagonal":
        return FiveDiagonal(a1=float(kv["a1"]), a2=float(kv["a2"]))
    if kind == "paired_block":
        return PairedBlock(h=float(kv["h"]))
    if kind == "block_five_diagonal":
        return BlockFiveDiagonal(
            num_blocks=int(kv["num_blocks"]),
            block_size=int(kv["block_size"]),
            a1=float(kv["a1"]),
            a2=float(kv["a2"]),
        )
    raise ValueError(f"unknown omega kind {kind!r}")


def parse_keyvalue_text(text: str) -> dict[str, str]:
    """Parse 'key = value' lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise ValueError(f"bad config line {ln!r}")
        k, v = ln.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# datasets and the z-vector
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Labeled or unlabeled samples; rows are observations of length p."""

    samples: np.ndarray
    labels: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-d array")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.samples.shape[0],):
                raise ValueError("labels must align with samples")
            if not np.all(np.isin(self.labels, (-1, 1))):
                raise ValueError("labels must be -1 or +1")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def p(self) -> int:
        return self.samples.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = [f"x{j}" for j in range(self.p)]
            if self.labeled:
                fh.write(",".join(["label"] + cols) + "\n")
                for y, row in zip(self.labels, self.samples):
                    fh.write(str(int(y)) + "," + ",".join(repr(v) for v in row) + "\n")
            else:
                fh.write(",".join(cols) + "\n")
                for row in self.samples:
                    fh.write(",".join(repr(v) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            labeled = header and header[0] == "label"
            labels, rows = [], []
            for ln in fh:
                ln = ln.strip()
                if not ln:
                    continue
                parts = ln.split(",")
                if labeled:
                    labels.append(int(parts[0]))
                    rows.append([float(v) for v in parts[1:]])
                else:
                    rows.append([float(v) for v in parts])
        return cls(
            samples=np.asarray(rows, dtype=np.float64),
            labels=np.asarray(labels, dtype=np.int64) if labeled else None,
        )


def sample_dataset(
    mu: np.ndarray,
    omega: SparseSymMatrix,
    n: int,
    rng: np.random.Generator,
    scheme: str = "balanced",
    provenance: dict | None = None,
) -> Dataset:
    """Draw n samples X_i = Y_i mu + noise, noise ~ N(0, Omega^{-1}).

    Noise is generated by back-substitution against the Cholesky factor of
    Omega (solve L' x = xi), so the covariance is exactly Omega^{-1} in
    distribution. Label schemes: "balanced" (Y_i = +1 for i <= n/2, the
    training protocol), "random" (iid +/-1, the test protocol), "unlabeled"
    (drawn as "random" but labels dropped).
    """
    mu = np.asarray(mu, dtype=np.float64)
    p = mu.shape[0]
    if omega.p != p:
        raise ValueError("mu and omega dimensions differ")
    if scheme == "balanced":
        labels = np.where(np.arange(1, n + 1) <= n / 2, 1, -1).astype(np.int64)
    elif scheme in ("random", "unlabeled"):
        labels = (2 * rng.integers(0, 2, size=n) - 1).astype(np.int64)
    else:
        raise ValueError(f"unknown label scheme {scheme!r}")
    xi = rng.standard_normal((n, p))
    noise = omega.solve_factor_t(xi.T).T
    samples = labels[:, None] * mu[None, :] + noise
    return Dataset(
        samples=samples,
        labels=None if scheme == "unlabeled" else labels,
        provenance=dict(provenance or {}),
    )


@dataclass(frozen=True)
class ZVector:
    z: np.ndarray
    n: int


def z_vector(dataset: Dataset) -> ZVector:
    """Summarize labeled training data: Z = n^{-1/2} sum_i Y_i X_i."""
    if not dataset.labeled:
        raise ValueError("z-vector needs a labeled dataset")
    z = (dataset.labels[:, None] * dataset.samples).sum(axis=0) / math.sqrt(dataset.n)
    return ZVector(z=z, n=dataset.n)
