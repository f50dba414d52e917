"""GROUP LASSO objective and solvers.

Two coordinate-descent solvers are provided for

    min_X  0.5 * ||A X - Y||_F^2 + lam * sum_i ||X[i, :]||_2

``bcd_mmv`` updates the rows one at a time; ``pcd_mmv`` computes every
candidate row from the previous iterate and moves towards them with a
diminishing step. ``amp_mmv_baseline`` is a plain group-soft-threshold AMP,
kept as a reference point for the experiments.

Internally every solver works on batches laid out as ``(N, B, M)`` so that
the products with ``A`` collapse into a single GEMM over ``B * M`` columns.
The public functions accept a single problem; the ``*_batch`` variants take
``(B, L, M)`` measurement stacks sharing one ``A``.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.stats import chi2

from .signal_model import ComplexMatrix

__all__ = [
    "NumericError",
    "soft_threshold",
    "ScheduleForm",
    "StepSchedule",
    "GroupLassoProblem",
    "SolverResult",
    "group_lasso_objective",
    "kkt_threshold",
    "row_update",
    "bcd_mmv",
    "pcd_mmv",
    "amp_mmv_baseline",
    "bcd_mmv_batch",
    "pcd_mmv_batch",
    "amp_mmv_batch",
]


class NumericError(ArithmeticError):
    """A solver or network produced a non-finite value."""


def soft_threshold(x, eta, lam):
    """Scalar shrinkage: ``x - lam*eta`` above ``lam*eta``, ``x + lam*eta``
    below ``-lam*eta``, zero in between. Vectorizes over numpy arrays."""
    t = lam * eta
    return np.where(x > t, x - t, np.where(x < -t, x + t, 0.0))


class ScheduleForm(str, enum.Enum):
    INV_SQRT = "inv_sqrt"
    INV_POW = "inv_pow"
    CONSTANT = "constant"


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``gamma_k`` for the parallel update, ``k >= 1``.

    ``INV_POW`` gives ``gamma0 * k**-delta``; with ``delta`` in (0.5, 1] the
    steps are positive, vanish, are not summable but are square summable.
    ``INV_SQRT`` is the ``delta = 0.5`` boundary case (square sums diverge
    logarithmically). ``CONSTANT`` carries no convergence guarantee for the
    solver but suits a fixed-depth unrolled network.
    """

    form: ScheduleForm = ScheduleForm.INV_POW
    gamma0: float = 1.0
    delta: float = 0.51

    def __post_init__(self):
        object.__setattr__(self, "form", ScheduleForm(self.form))
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if self.form is ScheduleForm.INV_POW and not 0.5 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0.5, 1], got {self.delta}")

    def __call__(self, k: int) -> float:
        if k < 1:
            raise ValueError("step index starts at 1")
        if self.form is ScheduleForm.INV_POW:
            return self.gamma0 * float(k) ** -self.delta
        if self.form is ScheduleForm.INV_SQRT:
            return self.gamma0 / np.sqrt(k)
        return self.gamma0

    def steps(self, k_max: int) -> np.ndarray:
        return np.array([self(k) for k in range(1, k_max + 1)])

    def to_dict(self) -> dict:
        return {"form": self.form.value, "gamma0": self.gamma0, "delta": self.delta}

    @classmethod
    def from_dict(cls, d: dict) -> "StepSchedule":
        return cls(ScheduleForm(d.get("form", "inv_pow")), float(d.get("gamma0", 1.0)),
                   float(d.get("delta", 0.51)))


@dataclass(frozen=True)
class GroupLassoProblem:
    a: ComplexMatrix
    y: ComplexMatrix
    lam: float

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.a.re.ndim != 2 or self.y.re.ndim != 2:
            raise ValueError("a and y must be 2-D")
        if self.a.shape[0] != self.y.shape[0]:
            raise ValueError(f"A has {self.a.shape[0]} rows but Y has {self.y.shape[0]}")
        if np.any(self.a.column_norms() == 0):
            raise ValueError("A has a zero column")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(N, L, M)."""
        return self.a.shape[1], self.a.shape[0], self.y.shape[1]


@dataclass
class SolverResult:
    x_hat: ComplexMatrix
    objective_history: np.ndarray
    iterations_run: int
    wall_time: float
    alg: str = ""
    lam: float | np.ndarray = 0.0
    k_max: int = 0
    schedule: StepSchedule | None = None
    diverged: bool | np.ndarray = False
    iterates: list[ComplexMatrix] | None = field(default=None, repr=False)

    def mse(self, truth: ComplexMatrix) -> float:
        """Squared error normalized by N (and by batch size for batches)."""
        err = (self.x_hat - truth).frobenius_sq()
        n = truth.shape[-2]
        batch = truth.shape[0] if truth.re.ndim == 3 else 1
        return err / (n * batch)

    def to_json(self, truth: ComplexMatrix | None = None, seed: int | None = None) -> str:
        n, m = self.x_hat.shape[-2:]
        doc = {
            "alg": self.alg,
            "N": int(n),
            "M": int(m),
            "lambda": np.asarray(self.lam).tolist(),
            "k_max": int(self.k_max),
            "schedule": self.schedule.to_dict() if self.schedule else None,
            "objective_history": np.asarray(self.objective_history).tolist(),
            "iterations_run": int(self.iterations_run),
            "wall_time_s": float(self.wall_time),
            "seed": seed,
        }
        if truth is not None:
            doc["mse"] = self.mse(truth)
        return json.dumps(doc)


# -- batched real-arithmetic kernels ----------------------------------------
# x, g: (N, B, M);  y, r: (L, B, M);  ar, ai: (L, N)

def _apply(ar, ai, xr, xi):
    n, b, m = xr.shape
    xr2 = xr.reshape(n, b * m)
    xi2 = xi.reshape(n, b * m)
    l = ar.shape[0]
    return ((ar @ xr2 - ai @ xi2).reshape(l, b, m),
            (ai @ xr2 + ar @ xi2).reshape(l, b, m))


def _apply_h(ar, ai, rr, ri):
    l, b, m = rr.shape
    rr2 = rr.reshape(l, b * m)
    ri2 = ri.reshape(l, b * m)
    n = ar.shape[1]
    return ((ar.T @ rr2 + ai.T @ ri2).reshape(n, b, m),
            (ar.T @ ri2 - ai.T @ rr2).reshape(n, b, m))


def _objective(rr, ri, xr, xi, lam):
    fit = 0.5 * np.sum(rr * rr + ri * ri, axis=(0, 2))
    rows = np.sqrt(np.sum(xr * xr + xi * xi, axis=2)).sum(axis=0)
    return fit + lam * rows


def _group_shrink_scale(r, c, lam):
    """Row factor s with candidate = s * w, from the threshold applied to
    ``(||w|| / c, 1 / c)``; zero where ``||w|| == 0``."""
    f = soft_threshold(r / c, 1.0 / c, lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(r > 0, f / r, 0.0)
    return s


def _to_internal(m: ComplexMatrix):
    """(B, K, M) -> (K, B, M), contiguous."""
    return (np.ascontiguousarray(m.re.transpose(1, 0, 2)),
            np.ascontiguousarray(m.im.transpose(1, 0, 2)))


def _to_public(xr, xi) -> ComplexMatrix:
    return ComplexMatrix(np.ascontiguousarray(xr.transpose(1, 0, 2)),
                         np.ascontiguousarray(xi.transpose(1, 0, 2)))


def _check_batch(a: ComplexMatrix, y: ComplexMatrix, lam):
    if y.re.ndim != 3:
        raise ValueError(f"expected a (B, L, M) stack, got shape {y.shape}")
    if a.shape[0] != y.shape[1]:
        raise ValueError(f"A has {a.shape[0]} rows but Y has {y.shape[1]}")
    if np.any(a.column_norms() == 0):
        raise ValueError("A has a zero column")
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (y.shape[0],)).copy()
    if np.any(lam < 0):
        raise ValueError("lambda must be non-negative")
    return lam


def _kkt_internal(ar, ai, yr, yi):
    gr, gi = _apply_h(ar, ai, yr, yi)
    return np.sqrt(np.sum(gr * gr + gi * gi, axis=2)).max(axis=0)


def kkt_threshold(a: ComplexMatrix, y: ComplexMatrix):
    """``max_i ||A[:, i]^H Y||_2``: the smallest lambda for which X = 0 is
    optimal. Returns a float, or an array of shape (B,) for a stack."""
    if y.re.ndim == 2:
        return float(kkt_threshold(a, y[None])[0])
    yr, yi = _to_internal(y)
    return _kkt_internal(a.re, a.im, yr, yi)


def group_lasso_objective(p: GroupLassoProblem, x: ComplexMatrix) -> float:
    n, l, m = p.dims
    if x.shape != (n, m):
        raise ValueError(f"X must be {(n, m)}, got {x.shape}")
    ax = (p.a.re @ x.re - p.a.im @ x.im, p.a.im @ x.re + p.a.re @ x.im)
    rr = ax[0] - p.y.re
    ri = ax[1] - p.y.im
    fit = 0.5 * float(np.sum(rr * rr + ri * ri))
    return fit + p.lam * float(np.sum(x.row_norms()))


def row_update(p: GroupLassoProblem, x: ComplexMatrix, i: int) -> ComplexMatrix:
    """Exact minimizer over row ``i`` (0-based) with all other rows of ``x``
    held fixed. Returns a ``(1, M)`` matrix."""
    ar, ai = p.a.re, p.a.im
    rr = ar @ x.re - ai @ x.im - p.y.re
    ri = ai @ x.re + ar @ x.im - p.y.im
    c = float(np.sum(ar[:, i] ** 2 + ai[:, i] ** 2))
    gr = ar[:, i] @ rr + ai[:, i] @ ri
    gi = ar[:, i] @ ri - ai[:, i] @ rr
    wr = c * x.re[i] - gr
    wi = c * x.im[i] - gi
    r = np.sqrt(np.sum(wr * wr + wi * wi))
    s = _group_shrink_scale(np.array(r), c, p.lam)
    return ComplexMatrix((s * wr)[None, :], (s * wi)[None, :])


# -- block coordinate descent -----------------------------------------------

@numba.njit(cache=True)
def _bcd_sweep(ar, ai, c, xr, xi, rr, ri, lam, active):
    """One in-place sweep over all rows; ``rr, ri`` hold ``A X - Y`` and are
    kept in sync with every row change."""
    l, n = ar.shape
    b, m = xr.shape[1], xr.shape[2]
    wr = np.empty(m)
    wi = np.empty(m)
    for i in range(n):
        ci = c[i]
        for j in range(b):
            if not active[j]:
                continue
            r2 = 0.0
            for q in range(m):
                gr = 0.0
                gi = 0.0
                for p in range(l):
                    gr += ar[p, i] * rr[p, j, q] + ai[p, i] * ri[p, j, q]
                    gi += ar[p, i] * ri[p, j, q] - ai[p, i] * rr[p, j, q]
                wr[q] = ci * xr[i, j, q] - gr
                wi[q] = ci * xi[i, j, q] - gi
                r2 += wr[q] * wr[q] + wi[q] * wi[q]
            r = np.sqrt(r2)
            # soft threshold of (r / c, 1 / c); r >= 0 so only two branches
            t = lam[j] / ci
            u = r / ci
            s = (u - t) / r if u > t else 0.0
            for q in range(m):
                dr = s * wr[q] - xr[i, j, q]
                di = s * wi[q] - xi[i, j, q]
                if dr != 0.0 or di != 0.0:
                    for p in range(l):
                        rr[p, j, q] += ar[p, i] * dr - ai[p, i] * di
                        ri[p, j, q] += ai[p, i] * dr + ar[p, i] * di
                xr[i, j, q] = s * wr[q]
                xi[i, j, q] = s * wi[q]


def _bcd_sweep_hooked(ar, ai, c, xr, xi, rr, ri, lam, active, k, on_row):
    """Reference sweep in plain numpy, calling ``on_row`` after each row."""
    l, n = ar.shape
    _, b, m = xr.shape
    rr2 = rr.reshape(l, b * m)
    ri2 = ri.reshape(l, b * m)
    for i in range(n):
        a_r = ar[:, i]
        a_i = ai[:, i]
        gr = (a_r @ rr2 + a_i @ ri2).reshape(b, m)
        gi = (a_r @ ri2 - a_i @ rr2).reshape(b, m)
        wr = c[i] * xr[i] - gr
        wi = c[i] * xi[i] - gi
        r = np.sqrt(np.sum(wr * wr + wi * wi, axis=1))
        s = _group_shrink_scale(r, c[i], lam)[:, None]
        new_r = np.where(active[:, None], s * wr, xr[i])
        new_i = np.where(active[:, None], s * wi, xi[i])
        dr = (new_r - xr[i]).reshape(b * m)
        di = (new_i - xi[i]).reshape(b * m)
        rr2 += np.outer(a_r, dr) - np.outer(a_i, di)
        ri2 += np.outer(a_i, dr) + np.outer(a_r, di)
        xr[i] = new_r
        xi[i] = new_i
        on_row(k, i, xr, xi)


def _bcd_core(ar, ai, yr, yi, lam, k_max, stop_tol, on_row=None, keep_iterates=False):
    n = ar.shape[1]
    _, b, m = yr.shape
    ar = np.ascontiguousarray(ar)
    ai = np.ascontiguousarray(ai)
    c = np.sum(ar * ar + ai * ai, axis=0)
    xr = np.zeros((n, b, m))
    xi = np.zeros((n, b, m))
    prev = _objective(-yr, -yi, xr, xi, lam)
    active = np.ones(b, dtype=bool)
    history = []
    iterates = [] if keep_iterates else None
    k = 0
    for k in range(1, k_max + 1):
        # fresh residual each sweep so the incremental updates cannot drift
        rr, ri = _apply(ar, ai, xr, xi)
        rr -= yr
        ri -= yi
        if on_row is None:
            _bcd_sweep(ar, ai, c, xr, xi, rr, ri, lam, active)
        else:
            _bcd_sweep_hooked(ar, ai, c, xr, xi, rr, ri, lam, active, k, on_row)
        rr, ri = _apply(ar, ai, xr, xi)
        obj = _objective(rr - yr, ri - yi, xr, xi, lam)
        if not np.all(np.isfinite(obj)):
            raise NumericError(f"non-finite objective at BCD iteration {k}")
        history.append(obj)
        if keep_iterates:
            iterates.append((xr.copy(), xi.copy()))
        rel = np.abs(prev - obj) / np.maximum(np.abs(prev), np.finfo(float).tiny)
        active &= ~(rel < stop_tol)
        prev = obj
        if not active.any():
            break
    return xr, xi, np.array(history).reshape(-1, b), k, iterates


def bcd_mmv_batch(a: ComplexMatrix, y: ComplexMatrix, lam, k_max: int = 200,
                  stop_tol: float = 1e-8, on_row=None,
                  keep_iterates: bool = False) -> SolverResult:
    """Sequential row-by-row GROUP LASSO solver over a ``(B, L, M)`` stack.

    Each sample stops independently once its relative objective change drops
    below ``stop_tol``. ``objective_history`` has shape ``(iterations, B)``.
    ``on_row(k, i, xr, xi)`` is called after every single row update with the
    internal ``(N, B, M)`` iterate (a debugging hook; it is slow).
    """
    lam = _check_batch(a, y, lam)
    yr, yi = _to_internal(y)
    t0 = time.perf_counter()
    xr, xi, hist, k, its = _bcd_core(a.re, a.im, yr, yi, lam, k_max, stop_tol, on_row,
                                     keep_iterates)
    wall = time.perf_counter() - t0
    res = SolverResult(_to_public(xr, xi), hist, k, wall, alg="bcd", lam=lam, k_max=k_max)
    if its is not None:
        res.iterates = [_to_public(*it) for it in its]
    return res


def bcd_mmv(p: GroupLassoProblem, k_max: int = 200, stop_tol: float = 1e-8,
            on_row=None, keep_iterates: bool = False) -> SolverResult:
    res = bcd_mmv_batch(p.a, p.y[None], p.lam, k_max, stop_tol, on_row, keep_iterates)
    return _unbatch(res, p.lam)


def _unbatch(res: SolverResult, lam) -> SolverResult:
    res.x_hat = res.x_hat[0]
    res.objective_history = res.objective_history[:, 0]
    res.lam = float(lam)
    if res.iterates is not None:
        res.iterates = [it[0] for it in res.iterates]
    if isinstance(res.diverged, np.ndarray):
        res.diverged = bool(res.diverged[0])
    return res


# -- parallel coordinate descent --------------------------------------------

def _pcd_core(ar, ai, yr, yi, lam, k_max, schedule, stop_tol, keep_iterates=False):
    _, n = ar.shape
    _, b, m = yr.shape
    c = np.sum(ar * ar + ai * ai, axis=0)[:, None]
    xr = np.zeros((n, b, m))
    xi = np.zeros((n, b, m))
    rr, ri = -yr, -yi
    prev = _objective(rr, ri, xr, xi, lam)
    active = np.ones(b, dtype=bool)
    history = []
    iterates = [] if keep_iterates else None
    k = 0
    for k in range(1, k_max + 1):
        gamma = schedule(k)
        gr, gi = _apply_h(ar, ai, rr, ri)
        wr = c[:, :, None] * xr - gr
        wi = c[:, :, None] * xi - gi
        r = np.sqrt(np.sum(wr * wr + wi * wi, axis=2))
        s = _group_shrink_scale(r, c, lam)[:, :, None]
        new_r = gamma * (s * wr) + (1.0 - gamma) * xr
        new_i = gamma * (s * wi) + (1.0 - gamma) * xi
        if not active.all():
            keep = active[None, :, None]
            new_r = np.where(keep, new_r, xr)
            new_i = np.where(keep, new_i, xi)
        xr, xi = new_r, new_i
        rr, ri = _apply(ar, ai, xr, xi)
        rr -= yr
        ri -= yi
        obj = _objective(rr, ri, xr, xi, lam)
        if not np.all(np.isfinite(obj)):
            raise NumericError(f"non-finite objective at PCD iteration {k}")
        history.append(obj)
        if keep_iterates:
            iterates.append((xr.copy(), xi.copy()))
        rel = np.abs(prev - obj) / np.maximum(np.abs(prev), np.finfo(float).tiny)
        active &= ~(rel < stop_tol)
        prev = obj
        if not active.any():
            break
    return xr, xi, np.array(history).reshape(-1, b), k, iterates


def pcd_mmv_batch(a: ComplexMatrix, y: ComplexMatrix, lam, k_max: int = 200,
                  schedule: StepSchedule | None = None, stop_tol: float = 1e-8,
                  keep_iterates: bool = False) -> SolverResult:
    """Parallel-update GROUP LASSO solver over a ``(B, L, M)`` stack.

    All candidate rows of iteration k are computed from ``X^(k-1)`` in one
    matrix expression, then ``X^(k) = g_k * candidate + (1 - g_k) * X^(k-1)``.
    """
    schedule = schedule or StepSchedule()
    lam = _check_batch(a, y, lam)
    yr, yi = _to_internal(y)
    t0 = time.perf_counter()
    xr, xi, hist, k, its = _pcd_core(a.re, a.im, yr, yi, lam, k_max, schedule, stop_tol,
                                     keep_iterates)
    wall = time.perf_counter() - t0
    res = SolverResult(_to_public(xr, xi), hist, k, wall, alg="pcd", lam=lam, k_max=k_max,
                       schedule=schedule)
    if its is not None:
        res.iterates = [_to_public(*it) for it in its]
    return res


def pcd_mmv(p: GroupLassoProblem, k_max: int = 200, schedule: StepSchedule | None = None,
            stop_tol: float = 1e-8, keep_iterates: bool = False) -> SolverResult:
    res = pcd_mmv_batch(p.a, p.y[None], p.lam, k_max, schedule, stop_tol, keep_iterates)
    return _unbatch(res, p.lam)


# -- AMP baseline -------------------------------------------------------------

def amp_mmv_batch(a: ComplexMatrix, y: ComplexMatrix, access_prob: float, k_max: int = 200,
                  tol: float = 1e-7) -> SolverResult:
    """Group-soft-threshold AMP over a ``(B, L, M)`` stack.

    A simplified stand-in for an MMSE-denoiser AMP: the columns of ``A`` are
    normalized to unit norm, the effective noise level is estimated from the
    residual each iteration, and the row threshold is set so that a pure
    noise row survives with probability ``access_prob``. The residual keeps
    the usual Onsager correction. A sample whose residual energy exceeds 10x
    ``||Y||_F^2`` is flagged as diverged and frozen.
    """
    lam = _check_batch(a, y, 0.0)
    del lam
    yr, yi = _to_internal(y)
    l, n = a.shape
    _, b, m = yr.shape
    t0 = time.perf_counter()

    norms = a.column_norms()
    ar = a.re / norms
    ai = a.im / norms
    if access_prob <= 0:
        kappa = np.inf
    elif access_prob >= 1:
        kappa = 0.0
    else:
        kappa = np.sqrt(chi2.ppf(1.0 - access_prob, 2 * m) / 2.0)

    xr = np.zeros((n, b, m))
    xi = np.zeros((n, b, m))
    zr, zi = yr.copy(), yi.copy()
    y_energy = np.sum(yr * yr + yi * yi, axis=(0, 2))
    diverged = np.zeros(b, dtype=bool)
    active = np.ones(b, dtype=bool)
    history = []
    k = 0
    for k in range(1, k_max + 1):
        tau = np.sqrt(np.sum(zr * zr + zi * zi, axis=(0, 2)) / (l * m))
        theta = np.where(np.isinf(kappa), np.inf, kappa * tau)[None, :]
        gr, gi = _apply_h(ar, ai, zr, zi)
        pr = xr + gr
        pi = xi + gi
        rn = np.sqrt(np.sum(pr * pr + pi * pi, axis=2))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rn > 0, theta / rn, np.inf)
        on = ratio < 1.0
        ratio = np.minimum(ratio, 1.0)
        shrink = np.where(on, 1.0 - ratio, 0.0)
        deriv = np.where(on, 1.0 - ratio + ratio / (2 * m), 0.0)
        onsager = deriv.sum(axis=0) / l
        new_r = shrink[:, :, None] * pr
        new_i = shrink[:, :, None] * pi
        axr, axi = _apply(ar, ai, new_r, new_i)
        new_zr = yr - axr + onsager[None, :, None] * zr
        new_zi = yi - axi + onsager[None, :, None] * zi
        fit = np.sum((yr - axr) ** 2 + (yi - axi) ** 2, axis=(0, 2))
        bad = ~np.isfinite(fit) | (fit > 10.0 * y_energy)
        diverged |= bad & active
        step = active & ~bad
        delta = np.sum((new_r - xr) ** 2 + (new_i - xi) ** 2, axis=(0, 2))
        scale = np.sum(new_r ** 2 + new_i ** 2, axis=(0, 2))
        keep = step[None, :, None]
        xr = np.where(keep, new_r, xr)
        xi = np.where(keep, new_i, xi)
        zr = np.where(keep, new_zr, zr)
        zi = np.where(keep, new_zi, zi)
        axr, axi = _apply(ar, ai, xr, xi)
        history.append(0.5 * np.sum((yr - axr) ** 2 + (yi - axi) ** 2, axis=(0, 2)))
        active &= ~bad & ~(delta <= tol * tol * np.maximum(scale, np.finfo(float).tiny))
        if not active.any():
            break

    # undo the column normalization
    xr = xr / norms[:, None, None]
    xi = xi / norms[:, None, None]
    wall = time.perf_counter() - t0
    return SolverResult(_to_public(xr, xi), np.array(history).reshape(-1, b), k, wall,
                        alg="amp", lam=0.0, k_max=k_max, diverged=diverged)


def amp_mmv_baseline(a: ComplexMatrix, y: ComplexMatrix, access_prob: float,
                     k_max: int = 200, tol: float = 1e-7) -> SolverResult:
    res = amp_mmv_batch(a, y[None], access_prob, k_max, tol)
    return _unbatch(res, 0.0)
