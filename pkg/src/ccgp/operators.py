"""Coboundary, Hodge Laplacian, super-Laplacian and Dirac matrices.

All operators are dense ``float64`` arrays.  Weighted variants follow the
inner product ``<f, g> = f.T @ W_k @ g``; with unit weights they reduce to the
familiar transposed-incidence expressions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .complex import CellularComplex, ChainVec
from .errors import ArgumentError, NumericError, OperatorError

__all__ = [
    "SpectralBasis",
    "WeightSet",
    "coboundary",
    "coboundary_adjoint",
    "dirac_matrix",
    "eigendecompose",
    "flat",
    "hodge_laplacian",
    "inner_product",
    "load_basis",
    "operator_basis",
    "save_basis",
    "super_laplacian",
]


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Positive per-cell weights, one vector per dimension."""

    w: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = []
        for k, v in enumerate(self.w):
            v = np.asarray(v, dtype=float)
            if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ArgumentError(f"weights for dimension {k} must be positive and finite")
            ws.append(v)
        object.__setattr__(self, "w", tuple(ws))

    @classmethod
    def unit(cls, X: CellularComplex) -> "WeightSet":
        return cls(tuple(np.ones(n) for n in X.counts))

    @classmethod
    def of(cls, X: CellularComplex, W=None) -> "WeightSet":
        """Resolve ``W``: None means the complex's own weights."""
        if W is None:
            W = cls(X.weights)
        elif not isinstance(W, WeightSet):
            W = cls(tuple(W))
        if tuple(v.size for v in W.w) != X.counts:
            raise ArgumentError("weight vectors do not match the complex cell counts")
        return W

    def get(self, k: int) -> np.ndarray:
        if 0 <= k < len(self.w):
            return self.w[k]
        return np.ones(0)

    def concat(self) -> np.ndarray:
        return np.concatenate(self.w)


def coboundary(X: CellularComplex, k: int) -> np.ndarray:
    """``D_k = B_{k+1}.T`` mapping k-cochains to (k+1)-cochains.

    ``k = -1`` and ``k = n`` give the zero maps of shape ``(N_0, 0)`` and
    ``(0, N_n)``.
    """
    if not -1 <= k <= X.dimension:
        raise ArgumentError(f"coboundary degree {k} outside [-1, {X.dimension}]")
    return X.incidence(k + 1).T.astype(float)


def coboundary_adjoint(X: CellularComplex, k: int, W=None) -> np.ndarray:
    """``D_k* = W_k^{-1} B_{k+1} W_{k+1}``, the adjoint of ``D_k``."""
    if not -1 <= k <= X.dimension:
        raise ArgumentError(f"coboundary degree {k} outside [-1, {X.dimension}]")
    W = WeightSet.of(X, W)
    B = X.incidence(k + 1).astype(float)
    return (B / W.get(k)[:, None]) * W.get(k + 1)[None, :]


def hodge_laplacian(X: CellularComplex, k: int, W=None) -> np.ndarray:
    """Weighted Hodge Laplacian on k-cochains (down part plus up part)."""
    if not 0 <= k <= X.dimension:
        raise ArgumentError(f"Laplacian degree {k} outside [0, {X.dimension}]")
    W = WeightSet.of(X, W)
    down = coboundary(X, k - 1) @ coboundary_adjoint(X, k - 1, W)
    up = coboundary_adjoint(X, k, W) @ coboundary(X, k)
    return down + up


def super_laplacian(X: CellularComplex, W=None) -> np.ndarray:
    """Block-diagonal stack of all Hodge Laplacians."""
    W = WeightSet.of(X, W)
    return sla.block_diag(*[hodge_laplacian(X, k, W) for k in range(X.dimension + 1)])


def dirac_matrix(X: CellularComplex, W=None) -> np.ndarray:
    """Block-tridiagonal Dirac matrix; its square is the super-Laplacian."""
    W = WeightSet.of(X, W)
    offs = X.offsets
    D = np.zeros((X.total_size, X.total_size))
    for k in range(1, X.dimension + 1):
        lo, mid, hi = offs[k - 1], offs[k], offs[k + 1]
        D[lo:mid, mid:hi] = coboundary_adjoint(X, k - 1, W)
        D[mid:hi, lo:mid] = coboundary(X, k - 1)
    return D


def flat(c, W) -> np.ndarray:
    """Riesz representer of a chain: ``W^{-1} c`` so that ``<f, c_flat>_W = f(c)``."""
    cv = np.asarray(c.coeffs if isinstance(c, ChainVec) else c, dtype=float)
    w = np.asarray(W, dtype=float)
    if cv.shape != w.shape:
        raise ArgumentError(f"chain length {cv.shape} does not match weights {w.shape}")
    return cv / w


def inner_product(f, g, W=None) -> float:
    """``sum_a w_a f_a g_a``; unit weights when ``W`` is None."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ArgumentError(f"shape mismatch {f.shape} vs {g.shape}")
    if W is None:
        return float(f @ g)
    w = np.asarray(W, dtype=float)
    if w.shape != f.shape:
        raise ArgumentError(f"weights {w.shape} do not match cochain {f.shape}")
    return float(np.sum(w * (f * g)))


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Eigenpairs of a self-adjoint operator with ``U.T @ diag(w) @ U = I``.

    ``role`` names the source operator (``hodge:k``, ``super`` or ``dirac``);
    ``layout`` lists ``(dim, count)`` blocks of the index space it covers.
    """

    values: np.ndarray
    vectors: np.ndarray
    weights: np.ndarray
    role: str
    layout: tuple[tuple[int, int], ...]
    complex_hash: str = ""

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_dirac(self) -> bool:
        return self.role == "dirac"

    def offsets(self) -> dict[int, int]:
        out, acc = {}, 0
        for dim, n in self.layout:
            out[dim] = acc
            acc += n
        return out

    def orthonormality_error(self) -> float:
        U = self.vectors
        G = U.T @ (self.weights[:, None] * U)
        return float(np.max(np.abs(G - np.eye(self.size)))) if self.size else 0.0

    def verify(self, tol: float = 1e-8) -> None:
        err = self.orthonormality_error()
        if not err <= tol:
            raise NumericError(f"basis is not W-orthonormal (max error {err:.3e})")


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # largest |entry| positive; argmax picks the lowest index on ties
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def eigendecompose(A, W=None, role: str = "operator", layout=None, complex_hash: str = "") -> SpectralBasis:
    """Full eigendecomposition of an operator self-adjoint under ``diag(W)``.

    Solves the symmetric problem ``W^{1/2} A W^{-1/2} v = lam v`` and maps back
    with ``U = W^{-1/2} V``.  Eigenvalues ascend; each eigenvector's largest
    entry is made positive.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ArgumentError(f"operator must be square, got shape {A.shape}")
    n = A.shape[0]
    w = np.ones(n) if W is None else np.asarray(W, dtype=float)
    if w.shape != (n,) or np.any(w <= 0):
        raise ArgumentError("weights must be a positive vector matching the operator")
    WA = w[:, None] * A
    scale = max(1.0, float(np.max(np.abs(WA)))) if n else 1.0
    asym = float(np.max(np.abs(WA - WA.T))) if n else 0.0
    if asym > 1e-8 * scale:
        raise OperatorError(f"operator is not self-adjoint under W (asymmetry {asym:.3e})")
    sq = np.sqrt(w)
    M = sq[:, None] * A / sq[None, :]
    M = 0.5 * (M + M.T)
    try:
        lam, V = sla.eigh(M)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    U = _fix_signs(V / sq[:, None])
    if layout is None:
        layout = ((0, n),)
    return SpectralBasis(lam, U, w, role, tuple(tuple(b) for b in layout), complex_hash)


def _blockwise_super(X: CellularComplex, Ws: WeightSet, layout, h: str) -> SpectralBasis:
    # one Hodge block at a time: eigenvectors never straddle dimensions, so
    # cross-dimension kernel blocks come out exactly zero
    parts = [eigendecompose(hodge_laplacian(X, k, Ws), Ws.get(k)) for k in range(X.dimension + 1)]
    values = np.concatenate([p.values for p in parts])
    U = sla.block_diag(*[p.vectors for p in parts])
    order = np.argsort(values, kind="stable")
    return SpectralBasis(values[order], U[:, order], Ws.concat(), "super", layout, h)


def operator_basis(X: CellularComplex, role: str, W=None) -> SpectralBasis:
    """Assemble the named operator (``hodge:k``, ``super``, ``dirac``) and decompose it."""
    Ws = WeightSet.of(X, W)
    h = X.content_hash()
    if role.startswith("hodge:"):
        try:
            k = int(role.split(":", 1)[1])
        except ValueError as exc:
            raise ArgumentError(f"bad operator spec {role!r}") from exc
        A = hodge_laplacian(X, k, Ws)
        return eigendecompose(A, Ws.get(k), role=f"hodge:{k}", layout=((k, X.size(k)),), complex_hash=h)
    layout = tuple((k, n) for k, n in enumerate(X.counts))
    if role == "super":
        return _blockwise_super(X, Ws, layout, h)
    if role == "dirac":
        return eigendecompose(dirac_matrix(X, Ws), Ws.concat(), role="dirac", layout=layout, complex_hash=h)
    raise ArgumentError(f"unknown operator {role!r}; use hodge:k, super or dirac")


def save_basis(basis: SpectralBasis, path: str | Path) -> None:
    """Write ``.npz`` (binary) or ``.json`` depending on the suffix.

    JSON stores ``U`` column-major, i.e. as a list of eigenvectors.
    """
    path = Path(path)
    if path.suffix == ".json":
        doc = {
            "role": basis.role,
            "layout": [list(b) for b in basis.layout],
            "complex_hash": basis.complex_hash,
            "values": basis.values.tolist(),
            "vectors": basis.vectors.T.tolist(),
            "weights": basis.weights.tolist(),
        }
        path.write_text(json.dumps(doc))
    else:
        with open(path, "wb") as fh:
            np.savez(
                fh,
                values=basis.values,
                vectors=basis.vectors,
                weights=basis.weights,
                role=np.array(basis.role),
                layout=np.array(basis.layout, dtype=np.int64).reshape(-1, 2),
                complex_hash=np.array(basis.complex_hash),
            )


def load_basis(path: str | Path, tol: float = 1e-8) -> SpectralBasis:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        vectors = np.asarray(doc["vectors"], dtype=float).T
        basis = SpectralBasis(
            np.asarray(doc["values"], dtype=float),
            vectors.reshape(len(doc["values"]), -1) if vectors.size == 0 else vectors,
            np.asarray(doc["weights"], dtype=float),
            doc["role"],
            tuple(tuple(b) for b in doc["layout"]),
            doc.get("complex_hash", ""),
        )
    else:
        with np.load(path) as z:
            basis = SpectralBasis(
                z["values"],
                z["vectors"],
                z["weights"],
                str(z["role"]),
                tuple(tuple(int(x) for x in b) for b in z["layout"]),
                str(z["complex_hash"]),
            )
    basis.verify(tol)
    return basis
