"""Training of the auto-encoder: MSE loss, a hand-written reverse pass
through the unrolled decoder, ADAM with column projection, and a central
finite-difference gradient used to check the reverse pass.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import (
    ForwardTrace,
    NetworkParams,
    autoencoder_forward,
    decode,
    project_encoder,
    save_params,
)
from .signal_model import (
    ComplexMatrix,
    NoiseModel,
    RngStream,
    SparsityConfig,
    gen_sample_set,
    measure_set,
)
from .solvers import NumericError

log = logging.getLogger(__name__)

__all__ = [
    "TrainingConfig",
    "GradientSet",
    "TrainResult",
    "mse_loss",
    "backward",
    "loss_and_gradients",
    "Adam",
    "train",
    "extract_measurement_matrix",
    "finite_difference_gradients",
    "kink_margins",
]

PURPOSE_TRAIN_DATA = 21
PURPOSE_TRAIN_NOISE = 22
PURPOSE_TRAIN_ORDER = 23


@dataclass(frozen=True)
class TrainingConfig:
    samples: int = 50_000
    batch_size: int = 64
    epochs: int = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    project_columns: bool = True
    fd_epsilon: float = 1e-6
    seed: int = 0
    per_entry: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("ADAM betas must lie in (0, 1)")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 1 <= self.batch_size <= self.samples:
            raise ValueError(f"batch size {self.batch_size} must be in [1, {self.samples}]")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class GradientSet:
    d_a_re: np.ndarray
    d_a_im: np.ndarray
    d_layers_re: list[tuple[np.ndarray, np.ndarray]]
    d_layers_im: list[tuple[np.ndarray, np.ndarray]]

    def arrays(self) -> list[np.ndarray]:
        """Same order as :meth:`NetworkParams.arrays`."""
        out = [self.d_a_re, self.d_a_im]
        for branch in (self.d_layers_re, self.d_layers_im):
            for dW, db in branch:
                out.extend((dW, db))
        return out


def _stack(x) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, ComplexMatrix):
        if x.re.ndim == 2:
            return x.re[None], x.im[None]
        return x.re, x.im
    return np.stack([m.re for m in x]), np.stack([m.im for m in x])


def mse_loss(x_true, x_hat, per_entry: bool = False) -> float:
    """``sum_i ||X_i - X_hat_i||_F^2 / (N * I)`` over a batch of I samples.

    Batches are ``(I, N, M)`` matrices or sequences of ``(N, M)`` matrices.
    ``per_entry`` additionally divides by M.
    """
    tr, ti = _stack(x_true)
    hr, hi = _stack(x_hat)
    if tr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tr.shape} vs {hr.shape}")
    n_samples, n, m = tr.shape
    dr = tr - hr
    di = ti - hi
    denom = n * n_samples * (m if per_entry else 1)
    return float(np.sum(dr * dr + di * di)) / denom


def _mlp_backward(branch, cache, dh):
    grads = [None] * len(branch)
    last = len(branch) - 1
    for j in range(last, -1, -1):
        W, _ = branch[j]
        h_in, z = cache[j]
        dz = dh if j == last else dh * (z > 0)
        grads[j] = (dz.T @ h_in, dz.sum(axis=0))
        dh = dz @ W
    return grads, dh


def backward(params: NetworkParams, trace: ForwardTrace, per_entry: bool = False) -> GradientSet:
    """Gradients of :func:`mse_loss` at a traced forward pass.

    ``A`` enters the measurements and every unrolled layer; all paths are
    accumulated. Subgradient 0 is used at the shrinkage kink and at ReLU(0).
    """
    if not isinstance(trace, ForwardTrace) or trace.out_re is None:
        raise ValueError("backward needs a completed ForwardTrace (autoencoder_forward(trace=True))")
    arch = params.arch
    ar, ai = params.a_re, params.a_im
    n, b, m = trace.x_true_re.shape
    l = arch.L
    denom = n * b * (m if per_entry else 1)

    dxr = 2.0 * (trace.out_re - trace.x_true_re) / denom
    dxi = 2.0 * (trace.out_im - trace.x_true_im) / denom

    d_layers_re, d_layers_im = [], []
    if arch.V > 0:
        d_layers_re, df_r = _mlp_backward(params.layers_re, trace.mlp_re, dxr.reshape(n * b, m))
        d_layers_im, df_i = _mlp_backward(params.layers_im, trace.mlp_im, dxi.reshape(n * b, m))
        df = (df_r + df_i).reshape(n, b, 2 * m)
        dxr = np.ascontiguousarray(df[:, :, :m])
        dxi = np.ascontiguousarray(df[:, :, m:])

    d_ar = np.zeros_like(ar)
    d_ai = np.zeros_like(ai)
    dc = np.zeros(n)
    dyr = np.zeros((l, b, m))
    dyi = np.zeros((l, b, m))
    c = np.sum(ar * ar + ai * ai, axis=0)
    lam = arch.lam

    for cache in reversed(trace.layers):
        g = cache.gamma
        # X' = g * cand + (1 - g) * X
        d_cr = g * dxr
        d_ci = g * dxi
        dxr_prev = (1.0 - g) * dxr
        dxi_prev = (1.0 - g) * dxi
        # cand = s * W with s = 1/c - lam / (c ||w||) on active rows
        s = cache.scale
        act = s > 0
        inner = np.sum(cache.w_re * d_cr + cache.w_im * d_ci, axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(act, inner * lam / (c[:, None] * cache.w_norm ** 3), 0.0)
        d_wr = s[:, :, None] * d_cr + coef[:, :, None] * cache.w_re
        d_wi = s[:, :, None] * d_ci + coef[:, :, None] * cache.w_im
        dc -= np.sum(inner * s, axis=1) / c
        # W = c * X - G
        dxr_prev += c[:, None, None] * d_wr
        dxi_prev += c[:, None, None] * d_wi
        dc += np.sum(cache.x_re * d_wr + cache.x_im * d_wi, axis=(1, 2))
        # G = A^H R, so dR = -A dW
        d_gr = -d_wr.reshape(n, b * m)
        d_gi = -d_wi.reshape(n, b * m)
        rr = cache.r_re.reshape(l, b * m)
        ri = cache.r_im.reshape(l, b * m)
        d_rr = ar @ d_gr - ai @ d_gi
        d_ri = ai @ d_gr + ar @ d_gi
        d_ar += rr @ d_gr.T + ri @ d_gi.T
        d_ai += ri @ d_gr.T - rr @ d_gi.T
        # R = A X - Y
        xr = cache.x_re.reshape(n, b * m)
        xi = cache.x_im.reshape(n, b * m)
        dxr_prev += (ar.T @ d_rr + ai.T @ d_ri).reshape(n, b, m)
        dxi_prev += (ar.T @ d_ri - ai.T @ d_rr).reshape(n, b, m)
        d_ar += d_rr @ xr.T + d_ri @ xi.T
        d_ai += d_ri @ xr.T - d_rr @ xi.T
        dyr -= d_rr.reshape(l, b, m)
        dyi -= d_ri.reshape(l, b, m)
        dxr, dxi = dxr_prev, dxi_prev

    # column energies c = sum_l ar^2 + ai^2
    d_ar += 2.0 * ar * dc[None, :]
    d_ai += 2.0 * ai * dc[None, :]
    # Y = A X_true + Z; the noise is parameter independent
    d_yr = dyr.reshape(l, b * m)
    d_yi = dyi.reshape(l, b * m)
    tr = trace.x_true_re.reshape(n, b * m)
    ti = trace.x_true_im.reshape(n, b * m)
    d_ar += d_yr @ tr.T + d_yi @ ti.T
    d_ai += d_yi @ tr.T - d_yr @ ti.T
    return GradientSet(d_ar, d_ai, d_layers_re, d_layers_im)


def loss_and_gradients(params: NetworkParams, x: ComplexMatrix, noise: NoiseModel,
                       rng=None, noise_draw=None, per_entry: bool = False):
    trace = autoencoder_forward(params, x, noise, rng, trace=True, noise_draw=noise_draw)
    loss = mse_loss(x, trace.output(), per_entry)
    return loss, backward(params, trace, per_entry), trace


class Adam:
    """ADAM over the arrays of a :class:`NetworkParams`, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, project_columns=True):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.project_columns = project_columns
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None
        self.t = 0

    @classmethod
    def from_config(cls, cfg: TrainingConfig) -> "Adam":
        return cls(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.project_columns)

    def step(self, params: NetworkParams, grads: GradientSet) -> NetworkParams:
        ps = params.arrays()
        gs = grads.arrays()
        if self.m is None:
            self.m = [np.zeros_like(p) for p in ps]
            self.v = [np.zeros_like(p) for p in ps]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(ps, gs, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        if self.project_columns:
            project_encoder(params)
        return params


@dataclass
class TrainResult:
    params: NetworkParams
    curve: list[dict] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [row["train_loss"] for row in self.curve]

    def write_curve(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "eval_mse", "wall_time_s"])
            w.writeheader()
            w.writerows(self.curve)


def train(params0: NetworkParams, sparsity: SparsityConfig, noise: NoiseModel,
          cfg: TrainingConfig, eval_set: tuple[ComplexMatrix, RngStream] | None = None,
          checkpoint_dir=None, x_train: ComplexMatrix | None = None) -> TrainResult:
    """Mini-batch ADAM on ``cfg.samples`` signals drawn from ``sparsity``.

    Noise is redrawn on every forward pass. ``eval_set`` is a pair of
    signals and a noise stream; after each epoch the signals are measured
    with the current encoder (same noise every time) and decoded. Deterministic
    given ``cfg.seed``.
    """
    if params0.arch.N != sparsity.N:
        raise ValueError(f"network N={params0.arch.N} but scenario N={sparsity.N}")
    params = params0.copy()
    result = TrainResult(params)
    if cfg.epochs == 0:
        return result
    root = RngStream(cfg.seed)
    if x_train is None:
        x_train = gen_sample_set(sparsity, params.arch.M, cfg.samples,
                                 root.child(PURPOSE_TRAIN_DATA))
    opt = Adam.from_config(cfg)
    n_batches = cfg.samples // cfg.batch_size
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = root.child(PURPOSE_TRAIN_ORDER, epoch).generator().permutation(cfg.samples)
        total = 0.0
        for j in range(n_batches):
            idx = np.sort(order[j * cfg.batch_size:(j + 1) * cfg.batch_size])
            xb = ComplexMatrix(x_train.re[idx], x_train.im[idx])
            stream = root.child(PURPOSE_TRAIN_NOISE, epoch * n_batches + j)
            loss, grads, _ = loss_and_gradients(params, xb, noise, stream,
                                                per_entry=cfg.per_entry)
            if not np.isfinite(loss):
                raise NumericError(f"training loss is not finite at epoch {epoch}")
            opt.step(params, grads)
            total += loss
        row = {"epoch": epoch, "train_loss": total / n_batches,
               "eval_mse": float("nan"), "wall_time_s": time.perf_counter() - t0}
        if eval_set is not None:
            x_eval, eval_noise = eval_set
            y_eval = measure_set(params.a, x_eval, noise, eval_noise)
            row["eval_mse"] = mse_loss(x_eval, decode(params, y_eval), cfg.per_entry)
        result.curve.append(row)
        log.info("epoch %d train_loss %.6g eval_mse %.6g", epoch, row["train_loss"],
                 row["eval_mse"])
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_params(Path(checkpoint_dir) / f"params_epoch{epoch:04d}.json", params)
    return result


def extract_measurement_matrix(params: NetworkParams) -> ComplexMatrix:
    """The encoder weights as the pilot/measurement matrix ``A``."""
    return ComplexMatrix(params.a_re.copy(), params.a_im.copy())


# -- gradient checking -------------------------------------------------------

def finite_difference_gradients(params: NetworkParams, x: ComplexMatrix, noise_draw,
                                eps: float = 1e-6, per_entry: bool = False) -> list[np.ndarray]:
    """Central differences of the loss for every trainable entry, with the
    noise realization held fixed."""
    work = params.copy()
    noise = NoiseModel(0.0)
    out = []
    for p in work.arrays():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = mse_loss(x, autoencoder_forward(work, x, noise, noise_draw=noise_draw), per_entry)
            flat[j] = orig - eps
            down = mse_loss(x, autoencoder_forward(work, x, noise, noise_draw=noise_draw), per_entry)
            flat[j] = orig
            gflat[j] = (up - down) / (2 * eps)
        out.append(g)
    return out


def kink_margins(params: NetworkParams, trace: ForwardTrace) -> tuple[float, float]:
    """Smallest distance of any row norm ``||w||`` to lambda, and of any
    ReLU pre-activation to zero, over the traced pass."""
    lam = params.arch.lam
    w_margin = min((float(np.min(np.abs(c.w_norm - lam))) for c in trace.layers),
                   default=np.inf)
    relu_margin = np.inf
    for cache in (trace.mlp_re, trace.mlp_im):
        for _, z in cache[:-1]:
            relu_margin = min(relu_margin, float(np.min(np.abs(z))))
    return w_margin, relu_margin
