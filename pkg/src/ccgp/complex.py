"""Oriented cellular complexes and their signed incidence matrices.

Cells are stored per dimension in a fixed order; that order is the labelling
used by every vector and matrix in the package.  Simplices are keyed by their
sorted vertex tuple plus an orientation sign, polygons by their vertex cycle
rotated to start at the smallest vertex id.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    ArgumentError,
    ConsistencyError,
    ConstructionError,
    InvalidCellError,
)

__all__ = [
    "Cell",
    "CellularComplex",
    "ChainVec",
    "CochainVec",
    "ComplexBuilder",
    "Relabeling",
    "assemble_incidence",
    "boundary_of_polygon",
    "boundary_of_simplex",
    "build_complex",
    "evaluate_cochain",
    "load_complex",
    "path",
    "cubical_grid",
    "relabel",
    "save_complex",
    "triangulated_grid",
]


def _parity(seq: Sequence[int]) -> int:
    """Sign of the permutation that sorts ``seq`` (entries distinct)."""
    inversions = 0
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                inversions += 1
    return -1 if inversions % 2 else 1


def _canonical_simplex(vertices: Sequence[int]) -> tuple[tuple[int, ...], int]:
    verts = tuple(int(v) for v in vertices)
    return tuple(sorted(verts)), _parity(verts)


def _canonical_cycle(cycle: Sequence[int]) -> tuple[int, ...]:
    cyc = [int(v) for v in cycle]
    start = cyc.index(min(cyc))
    return tuple(cyc[start:] + cyc[:start])


def boundary_of_simplex(vertices):
    """Signed faces of an oriented simplex.

    Face ``l`` drops vertex ``l`` and carries sign ``(-1)**l``; each face is
    then reported as a sorted vertex tuple with the sign multiplied by the
    parity of the sorting permutation.

    >>> boundary_of_simplex([0, 1, 2])
    [((1, 2), 1), ((0, 2), -1), ((0, 1), 1)]
    """
    verts = tuple(int(v) for v in vertices)
    if len(verts) < 2:
        raise InvalidCellError(f"simplex needs at least 2 vertices, got {verts}")
    if len(set(verts)) != len(verts):
        raise InvalidCellError(f"simplex has repeated vertices: {verts}")
    faces = []
    for ell in range(len(verts)):
        face = verts[:ell] + verts[ell + 1:]
        key, par = _canonical_simplex(face)
        faces.append((key, (-1) ** ell * par))
    return faces


def boundary_of_polygon(cycle):
    """Signed edges of a polygon traversed in the order given by ``cycle``.

    Each edge is reported as ``(low, high)``; the sign is +1 when the
    traversal runs low -> high and -1 otherwise.
    """
    cyc = [int(v) for v in cycle]
    if len(cyc) < 3:
        raise InvalidCellError(f"polygon needs at least 3 vertices, got {cyc}")
    if len(set(cyc)) != len(cyc):
        raise InvalidCellError(f"polygon has repeated vertices: {cyc}")
    out = []
    m = len(cyc)
    for ell in range(m):
        a, b = cyc[ell], cyc[(ell + 1) % m]
        out.append(((min(a, b), max(a, b)), 1 if a < b else -1))
    return out


@dataclass(frozen=True)
class Cell:
    """One oriented cell.

    ``kind`` is one of ``vertex``, ``simplex``, ``polygon`` or ``explicit``.
    For simplices ``vertices`` is sorted and ``sign`` records the orientation
    relative to that order.  Polygons keep their traversal cycle.  Explicit
    cells list ``(face_id, coefficient)`` pairs one dimension below.
    """

    dim: int
    kind: str
    vertices: tuple[int, ...] = ()
    sign: int = 1
    boundary: tuple[tuple[int, int], ...] = ()

    def key(self):
        if self.kind == "vertex":
            return self.vertices
        if self.kind == "simplex":
            return self.vertices
        if self.kind == "polygon":
            return ("polygon",) + self.vertices
        return ("explicit",) + tuple(sorted(self.boundary))

    def to_record(self) -> dict:
        if self.kind == "vertex":
            return {"kind": "vertex"}
        if self.kind == "simplex":
            return {"kind": "simplex", "vertices": list(self.vertices), "sign": self.sign}
        if self.kind == "polygon":
            return {"kind": "polygon", "cycle": list(self.vertices)}
        return {"kind": "explicit", "boundary": [list(p) for p in self.boundary]}


def _face_terms(cell: Cell, lookup: dict, dim_cells: list[Cell]):
    """(face_id, degree) pairs of ``cell`` using the key lookup one dim below."""
    if cell.kind == "explicit":
        return list(cell.boundary)
    if cell.kind == "simplex":
        raw = boundary_of_simplex(cell.vertices)
        raw = [(key, s * cell.sign) for key, s in raw]
    elif cell.kind == "polygon":
        raw = boundary_of_polygon(cell.vertices)
    else:
        raise ConstructionError(f"cell of kind {cell.kind!r} has no boundary")
    terms = []
    for key, s in raw:
        idx = lookup.get(key)
        if idx is None:
            raise ConstructionError(
                f"{cell.kind} cell {cell.vertices} of dimension {cell.dim} "
                f"references missing face {key}"
            )
        terms.append((idx, s * dim_cells[idx].sign))
    return terms


def assemble_incidence(cells: Sequence[Sequence[Cell]]):
    """Build the signed incidence triplets ``B_1 .. B_n`` from cell geometry.

    Returns a list whose entry ``k - 1`` is ``(rows, cols, vals)`` for
    ``B_k``.  Raises :class:`ConstructionError` for missing faces or
    non-regular columns and :class:`ConsistencyError` if some
    ``B_{k-1} B_k`` is nonzero.
    """
    n = len(cells) - 1
    lookups = []
    for dim_cells in cells:
        lookups.append({c.key(): i for i, c in enumerate(dim_cells)})
    triplets = []
    for k in range(1, n + 1):
        rows, cols, vals = [], [], []
        n_faces = len(cells[k - 1])
        for j, cell in enumerate(cells[k]):
            column: dict[int, int] = {}
            for face, s in _face_terms(cell, lookups[k - 1], list(cells[k - 1])):
                if not 0 <= face < n_faces:
                    raise ConstructionError(
                        f"cell {j} of dimension {k} references missing face id {face}"
                    )
                if s not in (-1, 1):
                    raise ConstructionError(
                        f"cell {j} of dimension {k} has coefficient {s} (expected +-1)"
                    )
                column[face] = column.get(face, 0) + s
            for face in sorted(column):
                v = column[face]
                if v == 0:
                    continue
                if abs(v) != 1:
                    raise ConstructionError(
                        f"cell {j} of dimension {k} is not regular (degree {v} on face {face})"
                    )
                rows.append(face)
                cols.append(j)
                vals.append(v)
        triplets.append(
            (
                np.asarray(rows, dtype=np.int64),
                np.asarray(cols, dtype=np.int64),
                np.asarray(vals, dtype=np.int64),
            )
        )
    counts = [len(c) for c in cells]
    mats = [
        sp.csr_array((v, (r, c)), shape=(counts[k], counts[k + 1]), dtype=np.int64)
        for k, (r, c, v) in enumerate(triplets)
    ]
    for k in range(1, len(mats)):
        prod = mats[k - 1] @ mats[k]
        if prod.count_nonzero():
            raise ConsistencyError(f"B_{k} B_{k + 1} is not zero")
    return triplets


@dataclass(frozen=True)
class ChainVec:
    """Integer coefficients of a k-chain."""

    dim: int
    coeffs: np.ndarray


@dataclass(frozen=True)
class CochainVec:
    """Real values of a k-cochain."""

    dim: int
    values: np.ndarray


def evaluate_cochain(f, c) -> float:
    """Evaluate cochain ``f`` on chain ``c``: the dot product ``f . c``."""
    if isinstance(f, CochainVec) and isinstance(c, ChainVec) and f.dim != c.dim:
        raise ArgumentError(f"cochain of dim {f.dim} evaluated on chain of dim {c.dim}")
    fv = np.asarray(f.values if isinstance(f, CochainVec) else f, dtype=float)
    cv = np.asarray(c.coeffs if isinstance(c, ChainVec) else c)
    if fv.shape != cv.shape:
        raise ArgumentError(f"length mismatch: cochain {fv.shape} vs chain {cv.shape}")
    return float(fv @ cv)


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CellularComplex:
    """A finished, immutable oriented cellular complex."""

    cells: tuple[tuple[Cell, ...], ...]
    triplets: tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]
    weights: tuple[np.ndarray, ...]
    coords: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return len(self.cells) - 1

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.cells)

    def size(self, k: int) -> int:
        if 0 <= k <= self.dimension:
            return len(self.cells[k])
        return 0

    @property
    def total_size(self) -> int:
        return sum(self.counts)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.counts)]))

    def incidence(self, k: int) -> np.ndarray:
        """Dense ``B_k`` of shape ``(N_{k-1}, N_k)``; zero outside ``1..n``."""
        shape = (self.size(k - 1), self.size(k))
        out = np.zeros(shape, dtype=np.int64)
        if 1 <= k <= self.dimension:
            r, c, v = self.triplets[k - 1]
            out[r, c] = v
        return out

    def incidence_sparse(self, k: int) -> sp.csr_array:
        shape = (self.size(k - 1), self.size(k))
        if 1 <= k <= self.dimension:
            r, c, v = self.triplets[k - 1]
            return sp.csr_array((v, (r, c)), shape=shape, dtype=np.int64)
        return sp.csr_array(shape, dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "cells": [[c.to_record() for c in dim_cells] for dim_cells in self.cells],
            "weights": [w.tolist() for w in self.weights],
            "incidence": [
                [[int(a), int(b), int(s)] for a, b, s in zip(*t)] for t in self.triplets
            ],
            "coords": None if self.coords is None else self.coords.tolist(),
            "meta": self.meta,
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def summary(self) -> str:
        names = [("vertex", "vertices"), ("edge", "edges"), ("face", "faces")]
        parts = []
        for k, n in enumerate(self.counts):
            one, many = names[k] if k < len(names) else (f"{k}-cell", f"{k}-cells")
            if k == 2 and n and all(c.kind == "simplex" for c in self.cells[2]):
                one, many = "triangle", "triangles"
            parts.append(f"{n} {one if n == 1 else many}")
        return ", ".join(parts)


class ComplexBuilder:
    """Incremental construction of a :class:`CellularComplex`.

    Cells are appended in the order they are added; faces must exist before
    the cells that use them.
    """

    def __init__(self, n_vertices: int = 0, coords=None):
        self._cells: list[list[Cell]] = [[]]
        self._keys: list[set] = [set()]
        self._coords = None if coords is None else [tuple(map(float, p)) for p in coords]
        for v in range(n_vertices):
            self._append(Cell(0, "vertex", (v,)))
        if self._coords is not None and len(self._coords) != n_vertices:
            raise ArgumentError("coords length does not match vertex count")

    def _append(self, cell: Cell) -> int:
        while len(self._cells) <= cell.dim:
            self._cells.append([])
            self._keys.append(set())
        key = cell.key()
        if key in self._keys[cell.dim]:
            raise ConstructionError(f"duplicate {cell.kind} cell {cell.vertices or cell.boundary}")
        if cell.dim > 0 and not self._cells[cell.dim - 1]:
            raise ConstructionError(f"cell of dimension {cell.dim} added before any faces")
        self._keys[cell.dim].add(key)
        self._cells[cell.dim].append(cell)
        return len(self._cells[cell.dim]) - 1

    def add_vertex(self, coord=None) -> int:
        idx = len(self._cells[0])
        if coord is not None:
            if self._coords is None:
                if idx:
                    raise ArgumentError("cannot mix vertices with and without coordinates")
                self._coords = []
            self._coords.append(tuple(map(float, coord)))
        elif self._coords is not None:
            raise ArgumentError("vertex coordinates required")
        return self._append(Cell(0, "vertex", (idx,)))

    def add_simplex(self, vertices) -> int:
        verts = tuple(int(v) for v in vertices)
        if len(set(verts)) != len(verts):
            raise InvalidCellError(f"simplex has repeated vertices: {verts}")
        if len(verts) < 2:
            raise InvalidCellError("use add_vertex for 0-cells")
        n0 = len(self._cells[0])
        if any(not 0 <= v < n0 for v in verts):
            raise ConstructionError(f"simplex {verts} references a missing vertex")
        key, par = _canonical_simplex(verts)
        return self._append(Cell(len(verts) - 1, "simplex", key, par))

    def add_polygon(self, cycle) -> int:
        cyc = [int(v) for v in cycle]
        if len(cyc) < 3 or len(set(cyc)) != len(cyc):
            raise InvalidCellError(f"polygon needs >= 3 distinct vertices, got {cyc}")
        return self._append(Cell(2, "polygon", _canonical_cycle(cyc)))

    def add_cell(self, dim: int, boundary) -> int:
        """Add a cell given explicitly by signed face ids one dimension below."""
        if dim < 1:
            raise ArgumentError("explicit cells must have dimension >= 1")
        terms = tuple((int(i), int(s)) for i, s in boundary)
        for _, s in terms:
            if s not in (-1, 1):
                raise InvalidCellError(f"explicit boundary coefficient {s} not in {{-1, +1}}")
        return self._append(Cell(dim, "explicit", (), 1, terms))

    def build(self, weights=None, meta=None) -> CellularComplex:
        cells = tuple(tuple(c) for c in self._cells)
        triplets = assemble_incidence(cells)
        counts = [len(c) for c in cells]
        if weights is None:
            weights = [np.ones(n) for n in counts]
        if len(weights) != len(counts):
            raise ArgumentError("one weight vector per dimension required")
        ws = []
        for k, (w, n) in enumerate(zip(weights, counts)):
            w = np.asarray(w, dtype=float)
            if w.shape != (n,):
                raise ArgumentError(f"weights for dimension {k} must have length {n}")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ArgumentError(f"weights for dimension {k} must be positive")
            ws.append(_frozen(w, float))
        coords = None if self._coords is None else _frozen(self._coords, float)
        return CellularComplex(
            cells=cells,
            triplets=tuple(tuple(_frozen(a, np.int64) for a in t) for t in triplets),
            weights=tuple(ws),
            coords=coords,
            meta=dict(meta or {}),
        )


# --- builders ---------------------------------------------------------------


def path(n: int) -> CellularComplex:
    """Path graph ``v0 -> v1 -> ... -> v_{n-1}``."""
    if n < 1:
        raise ArgumentError("path needs at least one vertex")
    b = ComplexBuilder(n, coords=[(float(i), 0.0) for i in range(n)])
    for i in range(n - 1):
        b.add_simplex((i, i + 1))
    return b.build(meta={"kind": "path", "dims": [n]})


def _grid_coords(rows: int, cols: int):
    return [(float(j), float(i)) for i in range(rows + 1) for j in range(cols + 1)]


def triangulated_grid(rows: int, cols: int) -> CellularComplex:
    """``rows x cols`` squares, each split along its lower-left/upper-right diagonal.

    Vertex ``i * (cols + 1) + j`` sits at ``(x, y) = (j, i)``.
    """
    if rows < 1 or cols < 1:
        raise ArgumentError(f"grid dimensions must be >= 1, got {(rows, cols)}")
    vid = lambda i, j: i * (cols + 1) + j  # noqa: E731
    b = ComplexBuilder((rows + 1) * (cols + 1), coords=_grid_coords(rows, cols))
    edges, tris = set(), set()
    for i in range(rows + 1):
        for j in range(cols + 1):
            if j < cols:
                edges.add((vid(i, j), vid(i, j + 1)))
            if i < rows:
                edges.add((vid(i, j), vid(i + 1, j)))
            if i < rows and j < cols:
                ll, lr, ul, ur = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
                edges.add((ll, ur))
                tris.add(tuple(sorted((ll, lr, ur))))
                tris.add(tuple(sorted((ll, ul, ur))))
    for e in sorted(edges):
        b.add_simplex(e)
    for t in sorted(tris):
        b.add_simplex(t)
    return b.build(meta={"kind": "triangulated_grid", "dims": [rows, cols]})


def cubical_grid(rows: int, cols: int) -> CellularComplex:
    """``rows x cols`` unit squares, each oriented clockwise (y axis up)."""
    if rows < 1 or cols < 1:
        raise ArgumentError(f"grid dimensions must be >= 1, got {(rows, cols)}")
    vid = lambda i, j: i * (cols + 1) + j  # noqa: E731
    b = ComplexBuilder((rows + 1) * (cols + 1), coords=_grid_coords(rows, cols))
    edges, faces = set(), []
    for i in range(rows + 1):
        for j in range(cols + 1):
            if j < cols:
                edges.add((vid(i, j), vid(i, j + 1)))
            if i < rows:
                edges.add((vid(i, j), vid(i + 1, j)))
            if i < rows and j < cols:
                ll, lr, ul, ur = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
                faces.append(_canonical_cycle((ll, ul, ur, lr)))
    for e in sorted(edges):
        b.add_simplex(e)
    for f in sorted(faces):
        b.add_polygon(f)
    return b.build(meta={"kind": "cubical_grid", "dims": [rows, cols]})


_BUILDERS = {"path": path, "triangulated_grid": triangulated_grid, "cubical_grid": cubical_grid}


def build_complex(kind: str, dims) -> CellularComplex:
    """Dispatch to one of the named builders (``path``, ``triangulated_grid``, ``cubical_grid``)."""
    if kind not in _BUILDERS:
        raise ArgumentError(f"unknown complex kind {kind!r}; choose from {sorted(_BUILDERS)}")
    dims = [int(d) for d in np.atleast_1d(dims)]
    expected = 1 if kind == "path" else 2
    if len(dims) != expected:
        raise ArgumentError(f"{kind} takes {expected} dimension(s), got {dims}")
    if any(d < 1 for d in dims):
        raise ArgumentError(f"dimensions must be >= 1, got {dims}")
    return _BUILDERS[kind](*dims)


# --- relabelling ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Relabeling:
    """Per-dimension permutations; ``perms[k][new] = old``.

    The permutation matrix ``S_k`` has ``S_k[old, new] = 1`` so that vectors
    transform as ``S_k.T @ v`` and kernels as ``S_k.T @ K @ S_k``.
    """

    perms: tuple[np.ndarray, ...]

    def __post_init__(self):
        checked = []
        for k, p in enumerate(self.perms):
            p = np.asarray(p, dtype=np.int64)
            if p.ndim != 1 or not np.array_equal(np.sort(p), np.arange(p.size)):
                raise ArgumentError(f"permutation for dimension {k} is not a bijection")
            checked.append(_frozen(p, np.int64))
        object.__setattr__(self, "perms", tuple(checked))

    @classmethod
    def identity(cls, X: CellularComplex) -> "Relabeling":
        return cls(tuple(np.arange(n) for n in X.counts))

    @classmethod
    def random(cls, X: CellularComplex, rng) -> "Relabeling":
        rng = np.random.default_rng(rng)
        return cls(tuple(rng.permutation(n) for n in X.counts))

    def inverse(self) -> "Relabeling":
        return Relabeling(tuple(np.argsort(p) for p in self.perms))

    def matrix(self, k: int) -> np.ndarray:
        p = self.perms[k]
        S = np.zeros((p.size, p.size))
        S[p, np.arange(p.size)] = 1.0
        return S

    def direct_sum_perm(self) -> np.ndarray:
        offs = np.concatenate([[0], np.cumsum([p.size for p in self.perms])])
        return np.concatenate([p + offs[k] for k, p in enumerate(self.perms)])

    def transform_vector(self, v, k: int | None = None) -> np.ndarray:
        """``S.T @ v`` for dimension ``k`` (or the direct sum when ``k`` is None)."""
        p = self.direct_sum_perm() if k is None else self.perms[k]
        return np.asarray(v)[p]

    def transform_matrix(self, M, k: int | None = None) -> np.ndarray:
        """``S.T @ M @ S`` for dimension ``k`` (or the direct sum when ``k`` is None)."""
        p = self.direct_sum_perm() if k is None else self.perms[k]
        return np.asarray(M)[np.ix_(p, p)]


def relabel(X: CellularComplex, rho: Relabeling) -> CellularComplex:
    """Reorder the cells of ``X``; geometry and orientations are preserved."""
    if len(rho.perms) != len(X.counts) or any(
        p.size != n for p, n in zip(rho.perms, X.counts)
    ):
        raise ArgumentError("relabeling does not match the complex cell counts")
    inv = [np.argsort(p) for p in rho.perms]
    new_vertex = inv[0]
    coords = None if X.coords is None else X.coords[rho.perms[0]]
    b = ComplexBuilder(X.size(0), coords=coords)
    for k in range(1, X.dimension + 1):
        for old in rho.perms[k]:
            cell = X.cells[k][old]
            if cell.kind == "simplex":
                ordered = [int(new_vertex[v]) for v in cell.vertices]
                if cell.sign < 0:
                    ordered[0], ordered[1] = ordered[1], ordered[0]
                b.add_simplex(ordered)
            elif cell.kind == "polygon":
                b.add_polygon([int(new_vertex[v]) for v in cell.vertices])
            else:
                b.add_cell(k, [(int(inv[k - 1][f]), s) for f, s in cell.boundary])
    weights = [w[p] for w, p in zip(X.weights, rho.perms)]
    return b.build(weights=weights, meta=X.meta)


# --- serialization ----------------------------------------------------------


def complex_from_dict(doc: dict) -> CellularComplex:
    try:
        n = int(doc["dimension"])
        cells = doc["cells"]
        weights = doc.get("weights")
        coords = doc.get("coords")
    except (KeyError, TypeError) as exc:
        raise ArgumentError(f"malformed complex document: {exc}") from exc
    if len(cells) != n + 1:
        raise ArgumentError("cells must list one array per dimension")
    b = ComplexBuilder(len(cells[0]), coords=coords)
    for k in range(1, n + 1):
        for rec in cells[k]:
            kind = rec.get("kind")
            if kind == "simplex":
                verts = list(rec["vertices"])
                if int(rec.get("sign", 1)) < 0:
                    verts[0], verts[1] = verts[1], verts[0]
                b.add_simplex(verts)
            elif kind == "polygon":
                b.add_polygon(rec["cycle"])
            elif kind == "explicit":
                b.add_cell(k, rec["boundary"])
            else:
                raise ArgumentError(f"unknown cell kind {kind!r}")
    X = b.build(weights=weights, meta=doc.get("meta"))
    stored = doc.get("incidence")
    if stored is not None:
        if len(stored) != n:
            raise ConsistencyError("stored incidence has the wrong number of matrices")
        for k, trip in enumerate(stored, start=1):
            arr = np.asarray(trip, dtype=np.int64).reshape(-1, 3)
            got = np.zeros((X.size(k - 1), X.size(k)), dtype=np.int64)
            got[arr[:, 0], arr[:, 1]] = arr[:, 2]
            if not np.array_equal(got, X.incidence(k)):
                raise ConsistencyError(f"stored B_{k} disagrees with the cell geometry")
    return X


def save_complex(X: CellularComplex, path_: str | Path) -> None:
    Path(path_).write_text(json.dumps(X.to_dict(), indent=1))


def load_complex(path_: str | Path) -> CellularComplex:
    try:
        doc = json.loads(Path(path_).read_text())
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"{path_}: not valid JSON ({exc})") from exc
    return complex_from_dict(doc)
