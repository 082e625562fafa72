"""Gaussian process regression on cochains.

Observations target either a single cell ``(dim, index)`` or an arbitrary
chain vector in the kernel's index space.  The prior mean is zero.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import ArgumentError, CCGPError, NumericError, OptimizationError
from .kernels import (
    KernelMatrix,
    laplacian_spectrum,
    matern_filter,
    rd_filter,
    spectral_filter_kernel,
)
from .operators import SpectralBasis

__all__ = [
    "GPFit",
    "MaternFamily",
    "Observation",
    "Posterior",
    "RDFamily",
    "evaluate",
    "fit",
    "nll",
    "nll_and_grad",
    "posterior",
]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Observation:
    """``value = f(target) + noise``; target is ``(dim, index)`` or a chain vector."""

    target: object
    value: float


class Targets:
    """Maps cell/chain targets onto rows of a kernel's index space."""

    def __init__(self, targets: Sequence, layout):
        self.layout = tuple(tuple(b) for b in layout)
        offs, acc = {}, 0
        for dim, n in self.layout:
            offs[dim] = (acc, n)
            acc += n
        self.n = acc
        idx, dims, rows = [], [], []
        all_cells = True
        for t in targets:
            if isinstance(t, tuple) and len(t) == 2 and all(isinstance(x, (int, np.integer)) for x in t):
                dim, a = int(t[0]), int(t[1])
                if dim not in offs or not 0 <= a < offs[dim][1]:
                    raise ArgumentError(f"target cell {t} outside kernel layout {self.layout}")
                g = offs[dim][0] + a
                idx.append(g)
                dims.append(dim)
                row = np.zeros(self.n)
                row[g] = 1.0
                rows.append(row)
            else:
                c = np.asarray(t, dtype=float)
                if c.shape != (self.n,):
                    raise ArgumentError(f"chain target must have length {self.n}, got {c.shape}")
                all_cells = False
                idx.append(-1)
                dims.append(-1)
                rows.append(c)
        self.dims = np.asarray(dims, dtype=np.int64)
        self.cell_ids = np.asarray(
            [t[1] if isinstance(t, tuple) and len(t) == 2 else -1 for t in targets], dtype=np.int64
        ) if len(targets) else np.zeros(0, dtype=np.int64)
        self.idx = np.asarray(idx, dtype=np.int64) if all_cells else None
        self.S = None if all_cells else np.vstack(rows)

    @classmethod
    def from_indices(cls, idx, layout) -> "Targets":
        """Fast path for global cell indices into the direct-sum index space."""
        t = cls.__new__(cls)
        t.layout = tuple(tuple(b) for b in layout)
        t.n = sum(n for _, n in t.layout)
        t.idx = np.asarray(idx, dtype=np.int64)
        bounds = np.cumsum([0] + [n for _, n in t.layout])
        pos = np.searchsorted(bounds, t.idx, side="right") - 1
        dims_arr = np.array([d for d, _ in t.layout])
        t.dims = dims_arr[pos] if t.idx.size else np.zeros(0, dtype=np.int64)
        t.cell_ids = t.idx - bounds[pos] if t.idx.size else np.zeros(0, dtype=np.int64)
        t.S = None
        return t

    def __len__(self):
        return self.dims.size

    def rows(self, M: np.ndarray) -> np.ndarray:
        return M[self.idx] if self.idx is not None else self.S @ M

    def cross(self, K: np.ndarray, other: "Targets") -> np.ndarray:
        left = self.rows(K)
        return left[:, other.idx] if other.idx is not None else left @ other.S.T


@dataclass(frozen=True, eq=False)
class Posterior:
    mean: np.ndarray
    cov: np.ndarray
    targets: Targets

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.var, 0.0))


def _split(obs):
    if isinstance(obs, tuple) and len(obs) == 2 and not isinstance(obs[0], Observation):
        targets, y = obs
        if not isinstance(targets, Targets):
            targets = list(targets)
        return targets, np.asarray(y, dtype=float)
    obs = list(obs)
    return [o.target for o in obs], np.asarray([o.value for o in obs], dtype=float)


def _as_targets(targets, layout) -> Targets:
    return targets if isinstance(targets, Targets) else Targets(list(targets), layout)


def _kernel_parts(kernel):
    if isinstance(kernel, KernelMatrix):
        return kernel.K, kernel.layout
    K = np.asarray(kernel, dtype=float)
    return K, ((0, K.shape[0]),)


def cholesky(A: np.ndarray):
    """Lower Cholesky factor with one jittered retry."""
    if not np.all(np.isfinite(A)):
        raise NumericError("matrix has non-finite entries")
    try:
        return sla.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-8 * float(np.mean(np.diag(A)))
    try:
        return sla.cho_factor(A + jitter * np.eye(A.shape[0]), lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"system is not positive definite even with jitter {jitter:.3e}") from exc


def posterior(kernel, obs, noise: float, test) -> Posterior:
    """Exact Gaussian conditioning of the zero-mean prior on noisy observations.

    ``obs`` is a list of :class:`Observation` or a ``(targets, values)`` pair;
    ``test`` is a list of targets or a :class:`Targets`.
    """
    if not noise > 0:
        raise ArgumentError("noise variance must be positive")
    K, layout = _kernel_parts(kernel)
    tr_targets, y = _split(obs)
    te = _as_targets(test, layout)
    Kss = te.cross(K, te)
    if len(y) == 0:
        return Posterior(np.zeros(len(te)), Kss, te)
    tr = _as_targets(tr_targets, layout)
    if not np.all(np.isfinite(y)):
        raise ArgumentError("observation values must be finite")
    A = tr.cross(K, tr) + noise * np.eye(len(tr))
    cf = cholesky(A)
    Ksf = te.cross(K, tr)
    mean = Ksf @ sla.cho_solve(cf, y)
    cov = Kss - Ksf @ sla.cho_solve(cf, Ksf.T)
    cov = 0.5 * (cov + cov.T)
    d = np.diag(cov).copy()
    d[(d < 0) & (d >= -1e-8)] = 0.0
    np.fill_diagonal(cov, d)
    return Posterior(mean, cov, te)


def nll(kernel, obs, noise: float) -> float:
    """Negative log marginal likelihood including the ``m/2 log 2 pi`` term."""
    if not noise > 0:
        raise ArgumentError("noise variance must be positive")
    K, layout = _kernel_parts(kernel)
    targets, y = _split(obs)
    tr = _as_targets(targets, layout)
    A = tr.cross(K, tr) + noise * np.eye(len(tr))
    cf = cholesky(A)
    alpha = sla.cho_solve(cf, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return float(0.5 * y @ alpha + 0.5 * logdet + 0.5 * len(y) * LOG_2PI)


# --- spectral model families -------------------------------------------------


class MaternFamily:
    """``sigma2 * (2 nu / l^2 + s)^(-nu)`` over Laplacian eigenvalues ``s``."""

    name = "matern"
    params = ("sigma2", "lengthscale", "nu")
    default_trainable = ("sigma2", "lengthscale")

    def spectrum(self, basis: SpectralBasis) -> np.ndarray:
        return laplacian_spectrum(basis)

    def filter(self, s, p) -> np.ndarray:
        return p["sigma2"] * matern_filter(s, p["nu"], p["lengthscale"])

    def filter_grad(self, s, p) -> dict:
        nu, ell = p["nu"], p["lengthscale"]
        a = 2.0 * nu / ell**2 + s
        base = a ** (-nu)
        return {
            "sigma2": base,
            "lengthscale": p["sigma2"] * 4.0 * nu**2 / ell**3 * a ** (-nu - 1.0),
            "nu": p["sigma2"] * base * (-np.log(a) - nu * (2.0 / ell**2) / a),
        }


class RDFamily:
    """``sigma2 * (r - c lam + d lam^2)^(-nu)`` over signed Dirac eigenvalues."""

    name = "rd"
    params = ("sigma2", "r", "c", "d", "nu")
    default_trainable = ("sigma2", "r", "c", "d")

    def __init__(self, allow_non_even: bool = False):
        self.allow_non_even = allow_non_even

    def spectrum(self, basis: SpectralBasis) -> np.ndarray:
        if not basis.is_dirac:
            raise ArgumentError(f"reaction-diffusion family needs a Dirac basis, got {basis.role!r}")
        return np.asarray(basis.values, dtype=float)

    def filter(self, lam, p) -> np.ndarray:
        return p["sigma2"] * rd_filter(lam, p["r"], p["c"], p["d"], p["nu"], self.allow_non_even)

    def filter_grad(self, lam, p) -> dict:
        nu = p["nu"]
        poly = p["r"] - p["c"] * lam + p["d"] * lam**2
        base = poly ** (-nu)
        dpoly = -nu * p["sigma2"] * poly ** (-nu - 1.0)
        return {
            "sigma2": base,
            "r": dpoly,
            "c": -lam * dpoly,
            "d": lam**2 * dpoly,
            "nu": -p["sigma2"] * base * np.log(np.abs(poly)),
        }


FAMILIES = {"matern": MaternFamily, "rd": RDFamily}


def _family(family):
    if isinstance(family, str):
        if family not in FAMILIES:
            raise ArgumentError(f"unknown kernel family {family!r}")
        return FAMILIES[family]()
    return family


def _fd_filter_grad(family, lam, p, names, h=1e-6):
    out = {}
    for name in names:
        up, dn = dict(p), dict(p)
        up[name] = p[name] * math.exp(h)
        dn[name] = p[name] * math.exp(-h)
        # derivative w.r.t. log(param), divided back to natural units
        out[name] = (family.filter(lam, up) - family.filter(lam, dn)) / (2 * h * p[name])
    return out


def nll_and_grad(family, lam, Uf, y, noise, params, trainable=(), learn_noise=False, grad="analytic"):
    """NLL and its gradient w.r.t. log-parameters for a spectral model.

    ``Uf`` holds the basis rows at the training targets, so the training
    covariance is ``Uf diag(phi) Uf.T + noise I``.  The gradient uses
    ``dNLL/dtheta = 1/2 sum_j dphi_j u_j.T (A^-1 - alpha alpha.T) u_j``.
    """
    family = _family(family)
    phi = family.filter(lam, params)
    m = Uf.shape[0]
    A = (Uf * phi) @ Uf.T + noise * np.eye(m)
    cf = cholesky(A)
    alpha = sla.cho_solve(cf, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    value = float(0.5 * y @ alpha + 0.5 * logdet + 0.5 * m * LOG_2PI)
    grads = {}
    if trainable or learn_noise:
        Ainv = sla.cho_solve(cf, np.eye(m))
        M = Ainv - np.outer(alpha, alpha)
        if trainable:
            q = np.einsum("ij,ij->j", M @ Uf, Uf)
            analytic = family.filter_grad(lam, params) if grad == "analytic" else {}
            missing = [n for n in trainable if analytic.get(n) is None]
            if missing:
                analytic.update(_fd_filter_grad(family, lam, params, missing))
            for name in trainable:
                grads[name] = 0.5 * float(analytic[name] @ q) * params[name]
        if learn_noise:
            grads["noise"] = 0.5 * float(np.trace(M)) * noise
    return value, grads


@dataclass(eq=False)
class GPFit:
    """Trained spectral GP: hyperparameters, data and cached factorisation."""

    family: str
    params: dict
    noise: float
    basis: SpectralBasis
    train_targets: Targets
    y: np.ndarray
    seed: int = 0
    iterations: int = 0
    lr: float = 0.1
    initial_nll: float = float("nan")
    final_nll: float = float("nan")
    history: list = field(default_factory=list)
    allow_non_even: bool = False

    def kernel(self) -> KernelMatrix:
        fam = _family(self.family)
        if isinstance(fam, RDFamily):
            fam.allow_non_even = self.allow_non_even
        lam = fam.spectrum(self.basis)
        base = fam.filter(lam, {**self.params, "sigma2": 1.0})
        return spectral_filter_kernel(self.basis, base, self.params["sigma2"], {"family": self.family, **self.params})

    def predict(self, test) -> Posterior:
        """Posterior at ``test`` targets, computed in the spectral basis."""
        fam = _family(self.family)
        if isinstance(fam, RDFamily):
            fam.allow_non_even = self.allow_non_even
        lam = fam.spectrum(self.basis)
        phi = fam.filter(lam, self.params)
        te = _as_targets(test, self.basis.layout)
        U = self.basis.vectors
        Uf = self.train_targets.rows(U)
        Us = te.rows(U)
        A = (Uf * phi) @ Uf.T + self.noise * np.eye(len(self.y))
        cf = cholesky(A)
        Ksf = (Us * phi) @ Uf.T
        Kss = (Us * phi) @ Us.T
        mean = Ksf @ sla.cho_solve(cf, self.y)
        cov = Kss - Ksf @ sla.cho_solve(cf, Ksf.T)
        cov = 0.5 * (cov + cov.T)
        d = np.diag(cov).copy()
        d[(d < 0) & (d >= -1e-8)] = 0.0
        np.fill_diagonal(cov, d)
        return Posterior(mean, cov, te)

    def record(self) -> dict:
        return {
            "kernel_family": self.family,
            "hyperparameters": {k: float(v) for k, v in self.params.items()},
            "noise": float(self.noise),
            "seed": int(self.seed),
            "iterations": int(self.iterations),
            "learning_rate": float(self.lr),
            "initial_nll": float(self.initial_nll),
            "final_nll": float(self.final_nll),
            "basis_hash": self.basis.complex_hash,
            "basis_role": self.basis.role,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.record(), indent=1))


def fit(
    basis: SpectralBasis,
    family,
    init: dict,
    obs,
    noise: float,
    lr: float = 0.1,
    iters: int = 1000,
    seed: int = 0,
    trainable=None,
    learn_noise: bool = False,
    grad: str = "analytic",
    betas=(0.9, 0.999),
    eps: float = 1e-8,
) -> GPFit:
    """Fit positive hyperparameters by Adam on their logarithms.

    The eigenbasis is fixed; hyperparameters only change the filter values.
    ``init`` must give every parameter of the family.  Raises
    :class:`OptimizationError` carrying the last finite state if the NLL
    stops being finite.
    """
    fam = _family(family)
    params = {}
    for name in fam.params:
        if name not in init:
            raise ArgumentError(f"initial value for {name!r} missing")
        v = float(init[name])
        if not v > 0:
            raise ArgumentError(f"{name} must start positive for log-space fitting, got {v}")
        params[name] = v
    if not noise > 0:
        raise ArgumentError("noise variance must be positive")
    trainable = tuple(fam.default_trainable if trainable is None else trainable)
    for name in trainable:
        if name not in params:
            raise ArgumentError(f"{name!r} is not a parameter of {fam.name}")
    targets, y = _split(obs)
    tr = _as_targets(targets, basis.layout)
    if len(y) == 0:
        raise ArgumentError("fit needs at least one observation")
    lam = fam.spectrum(basis)
    Uf = tr.rows(basis.vectors)

    names = list(trainable) + (["noise"] if learn_noise else [])
    theta = np.log([params[n] for n in trainable] + ([noise] if learn_noise else []))

    def unpack(th):
        p = dict(params)
        for n, t in zip(trainable, th):
            p[n] = float(np.exp(t))
        nz = float(np.exp(th[-1])) if learn_noise else noise
        return p, nz

    def objective(th):
        p, nz = unpack(th)
        try:
            val, g = nll_and_grad(fam, lam, Uf, y, nz, p, trainable, learn_noise, grad)
        except CCGPError:
            return float("nan"), None
        return val, np.array([g[n] for n in names])

    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    b1, b2 = betas
    history = []
    last_ok = theta.copy()
    for t in range(1, iters + 1):
        val, g = objective(theta)
        if not math.isfinite(val) or g is None or not np.all(np.isfinite(g)):
            p, nz = unpack(last_ok)
            raise OptimizationError(
                f"NLL became non-finite at iteration {t}",
                last_params={**p, "noise": nz},
                last_nll=history[-1] if history else None,
            )
        history.append(val)
        last_ok = theta.copy()
        m1 = b1 * m1 + (1 - b1) * g
        m2 = b2 * m2 + (1 - b2) * g * g
        mhat = m1 / (1 - b1**t)
        vhat = m2 / (1 - b2**t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
    final, _ = objective(theta)
    if not math.isfinite(final):
        p, nz = unpack(last_ok)
        raise OptimizationError(
            "NLL non-finite after the last update",
            last_params={**p, "noise": nz},
            last_nll=history[-1] if history else None,
        )
    p, nz = unpack(theta)
    initial = history[0] if history else final
    return GPFit(
        family=fam.name,
        params=p,
        noise=nz,
        basis=basis,
        train_targets=tr,
        y=y,
        seed=seed,
        iterations=iters,
        lr=lr,
        initial_nll=initial,
        final_nll=final,
        history=history,
        allow_non_even=getattr(fam, "allow_non_even", False),
    )


def evaluate(post: Posterior, truth, noise: float) -> dict:
    """Per-dimension MSE of the mean and summed predictive NLL.

    The predictive variance of each test point is ``var_i + noise``.
    Chain-valued targets are grouped under dimension ``-1``.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.shape != post.mean.shape:
        raise ArgumentError(f"truth has shape {truth.shape}, posterior mean {post.mean.shape}")
    var = np.maximum(post.var, 0.0) + noise
    err = truth - post.mean
    point_nll = 0.5 * (LOG_2PI + np.log(var) + err**2 / var)
    out = {}
    for dim in np.unique(post.targets.dims):
        sel = post.targets.dims == dim
        out[int(dim)] = {
            "mse": float(np.mean(err[sel] ** 2)),
            "nll": float(np.sum(point_nll[sel])),
            "count": int(sel.sum()),
        }
    return out


def write_predictions(path: str | Path, post: Posterior, truth=None) -> None:
    """CSV rows ``dimension, cell_id, mean, std`` (+ ``truth, error`` when given)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["dimension", "cell_id", "mean", "std"]
        if truth is not None:
            header += ["truth", "error"]
        w.writerow(header)
        std = post.std
        for i in range(len(post.mean)):
            row = [int(post.targets.dims[i]), int(post.targets.cell_ids[i]), repr(float(post.mean[i])), repr(float(std[i]))]
            if truth is not None:
                row += [repr(float(truth[i])), repr(float(post.mean[i] - truth[i]))]
            w.writerow(row)
