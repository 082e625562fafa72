"""Cochain-valued data: synthetic edge fields, grid projections, train/test splits."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .complex import CellularComplex
from .errors import ArgumentError, RangeError
from .operators import SpectralBasis

__all__ = [
    "Dataset",
    "GridField",
    "derive_vertex_triangle",
    "kl_edge_field",
    "load_dataset",
    "load_grid_field",
    "make_dataset",
    "project_field",
    "save_dataset",
]

_KIND_DIM = {"scalar": 0, "vector2": 1, "pseudoscalar": 2}


def kl_edge_field(basis: SpectralBasis, k_min: int, k_max: int, seed=None, coefficients=None) -> np.ndarray:
    """Random 1-cochain ``sum_{i=k_min}^{k_max} xi_i u_i`` with ``xi_i ~ N(0, 1/lam_i)``.

    Indices are 1-based and inclusive over the ascending spectrum.
    ``coefficients``, when given, are used as the ``xi`` values directly.
    """
    n = basis.size
    if not 0 < k_min < k_max <= n:
        raise ArgumentError(f"need 0 < k_min < k_max <= {n}, got ({k_min}, {k_max})")
    lam = basis.values[k_min - 1:k_max]
    tol = 1e-10 * max(1.0, float(np.max(np.abs(basis.values))))
    zero = np.flatnonzero(lam <= tol)
    if zero.size:
        raise RangeError(f"eigenvalue at index {k_min + int(zero[0])} is zero; KL variance undefined")
    if coefficients is None:
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal(lam.size) / np.sqrt(lam)
    else:
        xi = np.broadcast_to(np.asarray(coefficients, dtype=float), lam.shape)
    return basis.vectors[:, k_min - 1:k_max] @ xi


def derive_vertex_triangle(f, X: CellularComplex):
    """Vertex signal ``B_1 f`` and triangle signal ``B_2.T f`` from an edge cochain.

    For complexes without 2-cells the triangle part is None and a warning is
    issued.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (X.size(1),):
        raise ArgumentError(f"edge cochain must have length {X.size(1)}")
    vertex = X.incidence(1) @ f
    if X.dimension < 2:
        warnings.warn("complex has no 2-cells; returning the vertex signal only", stacklevel=2)
        return vertex, None
    return vertex, X.incidence(2).T @ f


@dataclass(frozen=True, eq=False)
class GridField:
    """Node-sampled field on an ``(rows+1) x (cols+1)`` grid.

    ``values`` has shape ``(ny, nx)`` for scalar/pseudoscalar kinds and
    ``(ny, nx, 2)`` for ``vector2``; node ``(i, j)`` sits at ``(x, y) = (j, i)``.
    """

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in _KIND_DIM:
            raise ArgumentError(f"unknown field kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        want = 3 if self.kind == "vector2" else 2
        if v.ndim != want or (want == 3 and v.shape[2] != 2):
            raise ArgumentError(f"{self.kind} field values have shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape[:2]


def _node_lookup(field: GridField, X: CellularComplex) -> np.ndarray:
    if X.coords is None:
        raise ArgumentError("complex has no vertex coordinates")
    ij = np.rint(X.coords[:, ::-1]).astype(np.int64)
    ny, nx = field.shape
    if np.any(ij < 0) or np.any(ij[:, 0] >= ny) or np.any(ij[:, 1] >= nx) or not np.allclose(X.coords[:, ::-1], ij):
        raise ArgumentError(f"grid of shape {field.shape} is not aligned with the complex vertices")
    if X.meta.get("dims") and X.meta.get("kind") != "path":
        r, c = X.meta["dims"]
        if (ny, nx) != (r + 1, c + 1):
            raise ArgumentError(f"grid shape {(ny, nx)} does not match complex dims {(r, c)}")
    return ij


def _face_cycle(cell) -> list[int]:
    if cell.kind == "polygon":
        return list(cell.vertices)
    if cell.kind == "simplex":
        verts = list(cell.vertices)
        if cell.sign < 0:
            verts[0], verts[1] = verts[1], verts[0]
        return verts
    raise ArgumentError("pseudoscalar projection needs polygon or simplex faces")


def project_field(field: GridField, X: CellularComplex) -> np.ndarray:
    """Project a node-sampled grid field onto a cochain of matching degree.

    * scalar: vertex values copied.
    * vector2: per edge, the trapezoid rule for the line integral of ``v . t``
      along the oriented edge, ``t`` the unit tangent.  On unit-length edges
      this is the plain average of ``v . t`` at the two endpoints.
    * pseudoscalar: per face, the corner average times +1 for counter-clockwise
      faces and -1 for clockwise ones.
    """
    dim = _KIND_DIM[field.kind]
    if dim > X.dimension:
        raise ArgumentError(f"{field.kind} field needs {dim}-cells; complex has dimension {X.dimension}")
    ij = _node_lookup(field, X)
    vals = field.values
    if dim == 0:
        return vals[ij[:, 0], ij[:, 1]].copy()
    if dim == 1:
        out = np.empty(X.size(1))
        for e, cell in enumerate(X.cells[1]):
            if cell.kind != "simplex":
                raise ArgumentError("vector projection needs simplicial edges")
            a, b = cell.vertices
            if cell.sign < 0:
                a, b = b, a
            # trapezoid line integral; equals the endpoint average of v . t on unit edges
            step = X.coords[b] - X.coords[a]
            va = vals[ij[a, 0], ij[a, 1]]
            vb = vals[ij[b, 0], ij[b, 1]]
            out[e] = 0.5 * (va @ step + vb @ step)
        return out
    out = np.empty(X.size(2))
    for q, cell in enumerate(X.cells[2]):
        cyc = _face_cycle(cell)
        xy = X.coords[cyc]
        area2 = np.sum(xy[:, 0] * np.roll(xy[:, 1], -1) - np.roll(xy[:, 0], -1) * xy[:, 1])
        orient = 1.0 if area2 > 0 else -1.0
        out[q] = orient * np.mean(vals[ij[cyc, 0], ij[cyc, 1]])
    return out


def load_grid_field(path: str | Path, kind: str, shape=None) -> GridField:
    """Read ``i, j, value`` or ``i, j, vx, vy`` CSV rows (header row required)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ArgumentError(f"{path}: empty field file")
        for rec in reader:
            if not rec:
                continue
            try:
                rows.append([float(x) for x in rec])
            except ValueError as exc:
                raise ArgumentError(f"{path}: non-numeric entry in {rec}") from exc
    arr = np.asarray(rows)
    width = 4 if kind == "vector2" else 3
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ArgumentError(f"{path}: expected {width} columns for a {kind} field")
    ii = arr[:, 0].astype(np.int64)
    jj = arr[:, 1].astype(np.int64)
    ny, nx = shape if shape is not None else (ii.max() + 1, jj.max() + 1)
    if ii.min() < 0 or jj.min() < 0 or ii.max() >= ny or jj.max() >= nx:
        raise ArgumentError(f"{path}: node indices exceed the expected grid shape {(ny, nx)}")
    if kind == "vector2":
        values = np.full((ny, nx, 2), np.nan)
        values[ii, jj] = arr[:, 2:4]
    else:
        values = np.full((ny, nx), np.nan)
        values[ii, jj] = arr[:, 2]
    if np.isnan(values).any():
        raise ArgumentError(f"{path}: grid has missing nodes")
    return GridField(kind, values)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Per-dimension split of ground-truth cochains into observed and held-out cells."""

    truth: dict
    observed: dict
    test: dict
    noisy: dict
    noise_var: float
    seed: int | None

    @property
    def dims(self):
        return sorted(self.truth)

    def train_pairs(self, offsets):
        idx = np.concatenate([self.observed[k] + offsets[k] for k in self.dims])
        y = np.concatenate([self.noisy[k] for k in self.dims])
        return idx, y

    def test_pairs(self, offsets):
        idx = np.concatenate([self.test[k] + offsets[k] for k in self.dims])
        y = np.concatenate([self.truth[k][self.test[k]] for k in self.dims])
        return idx, y


def make_dataset(truth: dict, fractions=1 / 3, noise_var: float = 1e-2, seed=None) -> Dataset:
    """Observe ``floor(N_k * fraction)`` random cells per dimension with Gaussian noise.

    ``noise_var`` is a variance: the noise standard deviation is its square
    root.
    """
    if not noise_var > 0:
        raise ArgumentError("noise variance must be positive")
    rng = np.random.default_rng(seed)
    truth = {int(k): np.asarray(v, dtype=float) for k, v in truth.items()}
    observed, test, noisy = {}, {}, {}
    for k in sorted(truth):
        frac = fractions[k] if isinstance(fractions, dict) else fractions
        if not 0 < frac <= 1:
            raise ArgumentError(f"fraction for dimension {k} must lie in (0, 1], got {frac}")
        n = truth[k].size
        m = int(np.floor(n * frac + 1e-9))
        if m == 0:
            raise ArgumentError(f"fraction {frac} selects no cells of dimension {k} (N={n})")
        obs = np.sort(rng.choice(n, size=m, replace=False))
        mask = np.ones(n, dtype=bool)
        mask[obs] = False
        observed[k] = obs
        test[k] = np.flatnonzero(mask)
        noisy[k] = truth[k][obs] + rng.normal(0.0, np.sqrt(noise_var), size=m)
    return Dataset(truth, observed, test, noisy, float(noise_var), seed)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """CSV rows ``dim, cell_id, observed_flag, noisy_value, true_value``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "cell_id", "observed_flag", "noisy_value", "true_value"])
        for k in ds.dims:
            noisy = dict(zip(ds.observed[k].tolist(), ds.noisy[k].tolist()))
            for i, t in enumerate(ds.truth[k]):
                flag = int(i in noisy)
                w.writerow([k, i, flag, repr(noisy[i]) if flag else "", repr(float(t))])


def load_dataset(path: str | Path, noise_var: float, seed=None) -> Dataset:
    truth, observed, noisy = {}, {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            k, i = int(rec["dim"]), int(rec["cell_id"])
            truth.setdefault(k, {})[i] = float(rec["true_value"])
            if int(rec["observed_flag"]):
                observed.setdefault(k, []).append(i)
                noisy.setdefault(k, []).append(float(rec["noisy_value"]))
    t_arr, o_arr, te_arr, n_arr = {}, {}, {}, {}
    for k, cells in truth.items():
        n = max(cells) + 1
        t_arr[k] = np.array([cells[i] for i in range(n)])
        o_arr[k] = np.asarray(observed.get(k, []), dtype=np.int64)
        n_arr[k] = np.asarray(noisy.get(k, []), dtype=float)
        mask = np.ones(n, dtype=bool)
        mask[o_arr[k]] = False
        te_arr[k] = np.flatnonzero(mask)
    return Dataset(t_arr, o_arr, te_arr, n_arr, float(noise_var), seed)
