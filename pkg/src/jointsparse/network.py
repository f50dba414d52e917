"""Auto-encoder for jointly sparse recovery, in real arithmetic.

encoder      Y = A X + Z with a trainable complex A = (a_re, a_im)
approximation  U unrolled parallel coordinate descent layers from X = 0
correction   a small MLP applied to each row ``[Re x_n, Im x_n]`` of the
             approximation output, one branch producing Re(X_hat) and a
             second producing Im(X_hat); weights are shared across rows

Batches use the public ``(B, N, M)`` layout; the layers internally work on
``(N, B, M)`` so that products with ``A`` become one GEMM.

Forward passes can record a :class:`ForwardTrace`, which is what the manual
reverse pass in :mod:`jointsparse.training` consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal_model import (
    ComplexMatrix,
    NoiseModel,
    RngStream,
    format_matrix,
    gen_measurement_matrix,
    normalize_columns,
    parse_matrix,
)
from .solvers import NumericError, StepSchedule, soft_threshold

__all__ = [
    "NetworkArch",
    "NetworkParams",
    "LayerState",
    "LayerCache",
    "ForwardTrace",
    "init_params",
    "encoder_forward",
    "pcd_layer_forward",
    "approximation_forward",
    "correction_forward",
    "autoencoder_forward",
    "decode",
    "save_params",
    "load_params",
]

FORMAT_VERSION = 1

# stream purposes for RngStream.child
PURPOSE_INIT_A = 11
PURPOSE_INIT_MLP = 12


@dataclass(frozen=True)
class NetworkArch:
    N: int
    L: int
    M: int
    U: int = 20
    V: int = 3
    hidden: tuple[int, ...] | None = None
    lam: float = 0.1
    schedule: StepSchedule = field(default_factory=StepSchedule)

    def __post_init__(self):
        if self.U < 0 or self.V < 0:
            raise ValueError("U and V must be non-negative")
        if self.hidden is None:
            object.__setattr__(self, "hidden", (4 * self.M,) * max(self.V - 1, 0))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if len(self.hidden) != max(self.V - 1, 0):
            raise ValueError(f"need {max(self.V - 1, 0)} hidden widths, got {len(self.hidden)}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def widths(self) -> tuple[int, ...]:
        """Layer widths of one correction branch, input first."""
        if self.V == 0:
            return ()
        return (2 * self.M, *self.hidden, self.M)

    def to_dict(self) -> dict:
        return {"N": self.N, "L": self.L, "M": self.M, "U": self.U, "V": self.V,
                "hidden": list(self.hidden), "lambda": self.lam,
                "schedule": self.schedule.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkArch":
        return cls(int(d["N"]), int(d["L"]), int(d["M"]), int(d["U"]), int(d["V"]),
                   tuple(d["hidden"]), float(d["lambda"]),
                   StepSchedule.from_dict(d.get("schedule", {})))


@dataclass
class NetworkParams:
    """Trainable state. Dense layers are ``(weight (out, in), bias (out,))``."""

    arch: NetworkArch
    a_re: np.ndarray
    a_im: np.ndarray
    layers_re: list[tuple[np.ndarray, np.ndarray]]
    layers_im: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        arch = self.arch
        if self.a_re.shape != (arch.L, arch.N) or self.a_im.shape != (arch.L, arch.N):
            raise ValueError(f"encoder must be {(arch.L, arch.N)}")
        w = arch.widths
        for branch in (self.layers_re, self.layers_im):
            if len(branch) != arch.V:
                raise ValueError(f"expected {arch.V} correction layers, got {len(branch)}")
            for j, (W, b) in enumerate(branch):
                if W.shape != (w[j + 1], w[j]) or b.shape != (w[j + 1],):
                    raise ValueError(f"correction layer {j} has shape {W.shape}/{b.shape}, "
                                     f"expected {(w[j + 1], w[j])}")

    @property
    def a(self) -> ComplexMatrix:
        return ComplexMatrix(self.a_re, self.a_im)

    def arrays(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (shared with GradientSet)."""
        out = [self.a_re, self.a_im]
        for branch in (self.layers_re, self.layers_im):
            for W, b in branch:
                out.extend((W, b))
        return out

    def names(self) -> list[str]:
        out = ["a_re", "a_im"]
        for tag in ("re", "im"):
            for j in range(self.arch.V):
                out.extend((f"{tag}.W{j}", f"{tag}.b{j}"))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.a_re.copy(), self.a_im.copy(),
                             [(W.copy(), b.copy()) for W, b in self.layers_re],
                             [(W.copy(), b.copy()) for W, b in self.layers_im])

    def with_encoder(self, a: ComplexMatrix) -> "NetworkParams":
        p = self.copy()
        p.a_re = np.array(a.re, dtype=np.float64)
        p.a_im = np.array(a.im, dtype=np.float64)
        return p


def _glorot(gen, fan_out, fan_in):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-lim, lim, size=(fan_out, fan_in))


def init_params(arch: NetworkArch, rng: RngStream) -> NetworkParams:
    """CN(0, 1) encoder projected to column norm sqrt(L); Glorot-uniform
    correction weights with zero biases."""
    a = gen_measurement_matrix(arch.L, arch.N, rng.child(PURPOSE_INIT_A), normalize=True)
    gen = rng.child(PURPOSE_INIT_MLP).generator()
    w = arch.widths
    branches = []
    for _ in range(2):
        branches.append([(_glorot(gen, w[j + 1], w[j]), np.zeros(w[j + 1]))
                         for j in range(arch.V)])
    return NetworkParams(arch, a.re.copy(), a.im.copy(), branches[0], branches[1])


# -- forward pieces ----------------------------------------------------------

@dataclass
class LayerState:
    """Iterate of the unrolled recursion, internal layout ``(N, B, M)``."""

    x_re: np.ndarray
    x_im: np.ndarray

    @classmethod
    def zeros(cls, n, b, m) -> "LayerState":
        return cls(np.zeros((n, b, m)), np.zeros((n, b, m)))

    def to_matrix(self) -> ComplexMatrix:
        return ComplexMatrix(self.x_re.transpose(1, 0, 2).copy(),
                             self.x_im.transpose(1, 0, 2).copy())

    @classmethod
    def from_matrix(cls, m: ComplexMatrix) -> "LayerState":
        re, im = _batched(m)
        return cls(np.ascontiguousarray(re.transpose(1, 0, 2)),
                   np.ascontiguousarray(im.transpose(1, 0, 2)))


@dataclass
class LayerCache:
    x_re: np.ndarray      # input iterate
    x_im: np.ndarray
    r_re: np.ndarray      # residual A X - Y
    r_im: np.ndarray
    w_re: np.ndarray
    w_im: np.ndarray
    w_norm: np.ndarray    # (N, B)
    scale: np.ndarray     # candidate = scale * w, (N, B)
    gamma: float


@dataclass
class ForwardTrace:
    x_true_re: np.ndarray         # (N, B, M)
    x_true_im: np.ndarray
    noise_re: np.ndarray          # (L, B, M)
    noise_im: np.ndarray
    y_re: np.ndarray
    y_im: np.ndarray
    layers: list[LayerCache]
    approx: LayerState
    mlp_re: list = field(default_factory=list)   # per layer (input, pre-activation)
    mlp_im: list = field(default_factory=list)
    out_re: np.ndarray | None = None             # (N, B, M)
    out_im: np.ndarray | None = None

    def output(self) -> ComplexMatrix:
        return ComplexMatrix(self.out_re.transpose(1, 0, 2).copy(),
                             self.out_im.transpose(1, 0, 2).copy())


def _batched(m: ComplexMatrix):
    if m.re.ndim == 2:
        return m.re[None], m.im[None]
    return m.re, m.im


def _encode(ar, ai, xr, xi):
    n, b, m = xr.shape
    l = ar.shape[0]
    xr2 = xr.reshape(n, b * m)
    xi2 = xi.reshape(n, b * m)
    return ((ar @ xr2 - ai @ xi2).reshape(l, b, m),
            (ai @ xr2 + ar @ xi2).reshape(l, b, m))


def _draw_noise(shape, noise: NoiseModel, rng):
    if noise.sigma2 == 0.0:
        return np.zeros(shape), np.zeros(shape)
    if rng is None:
        raise ValueError("an rng is required when sigma2 > 0")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    std = np.sqrt(noise.sigma2 / 2.0)
    return std * gen.standard_normal(shape), std * gen.standard_normal(shape)


def encoder_forward(params: NetworkParams, x: ComplexMatrix, noise: NoiseModel,
                    rng=None) -> ComplexMatrix:
    """Noisy measurements of ``x`` (shape ``(N, M)`` or ``(B, N, M)``)."""
    if x.shape[-2] != params.arch.N:
        raise ValueError(f"x must have {params.arch.N} rows, got shape {x.shape}")
    xr, xi = _batched(x)
    yr = params.a_re @ xr - params.a_im @ xi
    yi = params.a_im @ xr + params.a_re @ xi
    zr, zi = _draw_noise(yr.shape, noise, rng)
    y = ComplexMatrix(yr + zr, yi + zi)
    return y if x.re.ndim == 3 else y[0]


def _layer(ar, ai, c, lam, state: LayerState, yr, yi, gamma, k, cache=None):
    xr, xi = state.x_re, state.x_im
    # residual A X - Y
    rr, ri = _encode(ar, ai, xr, xi)
    rr -= yr
    ri -= yi
    # A^H R
    l, b, m = rr.shape
    n = ar.shape[1]
    rr2 = rr.reshape(l, b * m)
    ri2 = ri.reshape(l, b * m)
    gr = (ar.T @ rr2 + ai.T @ ri2).reshape(n, b, m)
    gi = (ar.T @ ri2 - ai.T @ rr2).reshape(n, b, m)
    wr = c[:, None, None] * xr - gr
    wi = c[:, None, None] * xi - gi
    wn = np.sqrt(np.sum(wr * wr + wi * wi, axis=2))
    cc = c[:, None]
    f = soft_threshold(wn / cc, 1.0 / cc, lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(wn > 0, f / wn, 0.0)
    cand_r = scale[:, :, None] * wr
    cand_i = scale[:, :, None] * wi
    out = LayerState(gamma * cand_r + (1.0 - gamma) * xr, gamma * cand_i + (1.0 - gamma) * xi)
    if not (np.all(np.isfinite(out.x_re)) and np.all(np.isfinite(out.x_im))):
        raise NumericError(f"non-finite state at unrolled layer {k}")
    if cache is not None:
        cache.append(LayerCache(xr, xi, rr, ri, wr, wi, wn, scale, gamma))
    return out


def pcd_layer_forward(params: NetworkParams, state: LayerState, y: ComplexMatrix,
                      k: int) -> LayerState:
    """One unrolled parallel coordinate descent iteration (layer ``k >= 1``).

    ``y`` is ``(L, M)`` or ``(B, L, M)``; ``state`` uses the internal layout.
    """
    if k < 1:
        raise ValueError("layer index starts at 1")
    ar, ai = params.a_re, params.a_im
    c = np.sum(ar * ar + ai * ai, axis=0)
    yr, yi = _internal_y(y)
    return _layer(ar, ai, c, params.arch.lam, state, yr, yi, params.arch.schedule(k), k)


def _internal_y(y: ComplexMatrix):
    yr, yi = _batched(y)
    return (np.ascontiguousarray(yr.transpose(1, 0, 2)),
            np.ascontiguousarray(yi.transpose(1, 0, 2)))


def _approximate(params, yr, yi, cache=None, keep_states=False):
    ar, ai = params.a_re, params.a_im
    c = np.sum(ar * ar + ai * ai, axis=0)
    _, b, m = yr.shape
    state = LayerState.zeros(params.arch.N, b, m)
    states = [state] if keep_states else None
    for k in range(1, params.arch.U + 1):
        state = _layer(ar, ai, c, params.arch.lam, state, yr, yi, params.arch.schedule(k), k,
                       cache)
        if keep_states:
            states.append(state)
    return state, states


def approximation_forward(params: NetworkParams, y: ComplexMatrix,
                          keep_states: bool = False):
    """``X^(U)`` from ``X^(0) = 0``. With ``keep_states`` returns the list of
    all ``U + 1`` states instead."""
    yr, yi = _internal_y(y)
    state, states = _approximate(params, yr, yi, keep_states=keep_states)
    return states if keep_states else state


def _mlp(branch, h, cache=None):
    last = len(branch) - 1
    for j, (W, b) in enumerate(branch):
        z = h @ W.T + b
        if cache is not None:
            cache.append((h, z))
        h = z if j == last else np.maximum(z, 0.0)
    return h


def _correct(params, state: LayerState, trace: ForwardTrace | None = None):
    if params.arch.V == 0:
        return state.x_re, state.x_im
    n, b, m = state.x_re.shape
    feats = np.concatenate([state.x_re, state.x_im], axis=2).reshape(n * b, 2 * m)
    out_r = _mlp(params.layers_re, feats, trace.mlp_re if trace else None)
    out_i = _mlp(params.layers_im, feats, trace.mlp_im if trace else None)
    return out_r.reshape(n, b, m), out_i.reshape(n, b, m)


def correction_forward(params: NetworkParams, state: LayerState) -> ComplexMatrix:
    """Row-wise correction of the approximation output; identity when V = 0."""
    out_r, out_i = _correct(params, state)
    return LayerState(out_r, out_i).to_matrix()


def decode(params: NetworkParams, y: ComplexMatrix) -> ComplexMatrix:
    """Decoder alone: measurements ``(B, L, M)`` (or ``(L, M)``) to estimates."""
    yr, yi = _internal_y(y)
    state, _ = _approximate(params, yr, yi)
    out = LayerState(*_correct(params, state)).to_matrix()
    return out if y.re.ndim == 3 else out[0]


def autoencoder_forward(params: NetworkParams, x: ComplexMatrix, noise: NoiseModel,
                        rng=None, trace: bool = False, noise_draw=None):
    """Full pass ``x -> Y -> X^(U) -> X_hat``.

    ``noise_draw`` fixes the noise realization as an ``(re, im)`` pair of
    ``(B, L, M)`` arrays instead of sampling it. Returns ``X_hat``, or the
    :class:`ForwardTrace` when ``trace`` is set.
    """
    arch = params.arch
    xr, xi = _batched(x)
    if xr.shape[1:] != (arch.N, arch.M):
        raise ValueError(f"x must be {(arch.N, arch.M)} per sample, got {xr.shape}")
    b = xr.shape[0]
    xr_i = np.ascontiguousarray(xr.transpose(1, 0, 2))
    xi_i = np.ascontiguousarray(xi.transpose(1, 0, 2))
    if noise_draw is None:
        zr, zi = _draw_noise((b, arch.L, arch.M), noise, rng)
    else:
        zr, zi = (np.asarray(z, dtype=np.float64).reshape(b, arch.L, arch.M) for z in noise_draw)
    zr_i = np.ascontiguousarray(zr.transpose(1, 0, 2))
    zi_i = np.ascontiguousarray(zi.transpose(1, 0, 2))
    yr, yi = _encode(params.a_re, params.a_im, xr_i, xi_i)
    yr += zr_i
    yi += zi_i
    cache = [] if trace else None
    state, _ = _approximate(params, yr, yi, cache)
    tr = None
    if trace:
        tr = ForwardTrace(xr_i, xi_i, zr_i, zi_i, yr, yi, cache, state)
    out_r, out_i = _correct(params, state, tr)
    if trace:
        tr.out_re, tr.out_im = out_r, out_i
        return tr
    out = LayerState(out_r, out_i).to_matrix()
    return out if x.re.ndim == 3 else out[0]


# -- serialization -----------------------------------------------------------

def _matrix_rows(arr: np.ndarray) -> list[str]:
    """Real matrix in the textual matrix format (imaginary parts zero)."""
    arr = np.atleast_2d(arr)
    return format_matrix(ComplexMatrix(arr, np.zeros_like(arr))).splitlines()


def _rows_matrix(lines: list[str]) -> np.ndarray:
    return parse_matrix("\n".join(lines)).re


def params_to_dict(params: NetworkParams) -> dict:
    def branch(layers):
        return [{"weight": _matrix_rows(W), "bias": _matrix_rows(b[None, :])}
                for W, b in layers]

    return {
        "format": FORMAT_VERSION,
        "arch": params.arch.to_dict(),
        "encoder": format_matrix(params.a).splitlines(),
        "correction_re": branch(params.layers_re),
        "correction_im": branch(params.layers_im),
    }


def params_from_dict(doc: dict) -> NetworkParams:
    if doc.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported params format {doc.get('format')!r}")
    arch = NetworkArch.from_dict(doc["arch"])
    a = parse_matrix("\n".join(doc["encoder"]))

    def branch(layers):
        return [(_rows_matrix(d["weight"]), _rows_matrix(d["bias"])[0]) for d in layers]

    return NetworkParams(arch, a.re, a.im, branch(doc["correction_re"]),
                         branch(doc["correction_im"]))


def save_params(path, params: NetworkParams) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params), indent=1))


def load_params(path) -> NetworkParams:
    return params_from_dict(json.loads(Path(path).read_text()))


def project_encoder(params: NetworkParams) -> None:
    """Rescale every encoder column to joint norm sqrt(L), in place.

    Columns already at the target norm up to rounding are left bit-for-bit
    alone, which makes the projection exactly idempotent.
    """
    target = np.sqrt(params.arch.L)
    moved = np.abs(params.a.column_norms() - target) > 4 * np.finfo(float).eps * target
    if not moved.any():
        return
    a = normalize_columns(ComplexMatrix(params.a_re[:, moved], params.a_im[:, moved]), target)
    params.a_re[:, moved] = a.re
    params.a_im[:, moved] = a.im
