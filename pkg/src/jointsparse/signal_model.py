"""Jointly sparse MMV signals, their noisy linear measurements, and the
complex-over-real matrix arithmetic shared by the rest of the package.

Every complex quantity is carried as a pair of float64 arrays ``(re, im)``.
Arrays may carry a leading batch axis: a batch of ``B`` signal matrices is
stored with shape ``(B, N, M)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ComplexMatrix",
    "SparsityMode",
    "SparsityConfig",
    "NoiseModel",
    "RngStream",
    "complex_matmul",
    "gen_support",
    "gen_supports",
    "gen_signals",
    "gen_measurement_matrix",
    "normalize_columns",
    "measure",
    "write_matrix",
    "read_matrix",
    "format_matrix",
    "parse_matrix",
    "gen_sample_set",
    "measure_set",
]


@dataclass(frozen=True)
class ComplexMatrix:
    """Complex matrix stored as real and imaginary float64 parts."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.re, dtype=np.float64)
        im = np.asarray(self.im, dtype=np.float64)
        if re.shape != im.shape:
            raise ValueError(f"re/im shape mismatch: {re.shape} vs {im.shape}")
        if re.ndim < 2:
            raise ValueError(f"expected at least 2 dimensions, got shape {re.shape}")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def zeros(cls, *shape: int) -> "ComplexMatrix":
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_complex(cls, z) -> "ComplexMatrix":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    def __add__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        return ComplexMatrix(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        return ComplexMatrix(self.re - other.re, self.im - other.im)

    def scale(self, s: float) -> "ComplexMatrix":
        return ComplexMatrix(s * self.re, s * self.im)

    def abs2(self) -> np.ndarray:
        """Entrywise squared magnitude."""
        return self.re * self.re + self.im * self.im

    def frobenius_sq(self) -> float:
        return float(np.sum(self.abs2()))

    def column_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.abs2(), axis=-2))

    def row_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.abs2(), axis=-1))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.re)) and np.all(np.isfinite(self.im)))

    def __getitem__(self, idx) -> "ComplexMatrix":
        return ComplexMatrix(self.re[idx], self.im[idx])


class SparsityMode(str, enum.Enum):
    IID = "iid"
    GROUPED = "grouped"


@dataclass(frozen=True)
class SparsityConfig:
    """Activity model for the N signal coordinates.

    In ``IID`` mode every coordinate is active independently with
    probability ``p``. In ``GROUPED`` mode the coordinates are split into
    ``G`` contiguous blocks of size ``N // G`` and exactly one block, chosen
    uniformly, is active.
    """

    mode: SparsityMode
    N: int
    p: float = 0.1
    G: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", SparsityMode(self.mode))
        if self.N < 1:
            raise ValueError(f"N must be positive, got {self.N}")
        if self.mode is SparsityMode.IID:
            if not 0.0 <= self.p <= 1.0:
                raise ValueError(f"p must lie in [0, 1], got {self.p}")
        else:
            if self.G < 1 or self.N % self.G != 0:
                raise ValueError(f"G={self.G} must be >= 1 and divide N={self.N}")

    @property
    def group_size(self) -> int:
        return self.N // self.G

    @property
    def activity(self) -> float:
        """Per-coordinate activation probability (p, or 1/G when grouped)."""
        return self.p if self.mode is SparsityMode.IID else 1.0 / self.G


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float = 0.0

    def __post_init__(self):
        if not self.sigma2 >= 0.0:
            raise ValueError(f"sigma2 must be non-negative, got {self.sigma2}")


# stream ids are namespaced by purpose so that samples, noise, pilots and
# weight init never share draws
_PURPOSE_SHIFT = 48


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Draws come from a Philox generator whose 128-bit key is the pair, so a
    given stream reproduces the same numbers regardless of what other streams
    are consumed or in which order.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, purpose: int, index: int = 0) -> "RngStream":
        """Derive an independent stream for ``(purpose, index)``."""
        if not 0 <= index < (1 << _PURPOSE_SHIFT):
            raise ValueError(f"stream index out of range: {index}")
        mixed = (self.stream * 0x9E3779B97F4A7C15 + (purpose << _PURPOSE_SHIFT) + index)
        return RngStream(self.seed, mixed & 0xFFFFFFFFFFFFFFFF)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


def complex_matmul(a: ComplexMatrix, x: ComplexMatrix) -> ComplexMatrix:
    """Product ``A X`` in real arithmetic.

    ``x`` may be a batch with shape ``(B, N, M)``; ``a`` is broadcast.
    """
    if a.shape[-1] != x.shape[-2]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {x.shape}")
    re = a.re @ x.re - a.im @ x.im
    im = a.im @ x.re + a.re @ x.im
    return ComplexMatrix(re, im)


def gen_support(cfg: SparsityConfig, rng) -> np.ndarray:
    """Draw a common support; returns a boolean mask of length N."""
    gen = _as_generator(rng)
    if cfg.mode is SparsityMode.IID:
        return gen.random(cfg.N) < cfg.p
    g = int(gen.integers(cfg.G))
    mask = np.zeros(cfg.N, dtype=bool)
    mask[g * cfg.group_size:(g + 1) * cfg.group_size] = True
    return mask


def gen_supports(cfg: SparsityConfig, count: int, rng) -> np.ndarray:
    """Draw ``count`` independent supports at once, shape ``(count, N)``."""
    gen = _as_generator(rng)
    if cfg.mode is SparsityMode.IID:
        return gen.random((count, cfg.N)) < cfg.p
    groups = gen.integers(cfg.G, size=count)
    block = np.arange(cfg.N) // cfg.group_size
    return block[None, :] == groups[:, None]


def gen_signals(support: np.ndarray, N: int, M: int, rng) -> ComplexMatrix:
    """Signals with a shared row support and CN(0, 1) nonzero entries.

    ``support`` is a boolean mask (or index array) of length ``N``, or a
    boolean array of shape ``(B, N)`` for a batch; the result has shape
    ``(N, M)`` or ``(B, N, M)``.
    """
    gen = _as_generator(rng)
    support = np.asarray(support)
    if support.dtype != bool:
        mask = np.zeros(N, dtype=bool)
        mask[support.astype(int)] = True
        support = mask
    if support.shape[-1] != N:
        raise ValueError(f"support length {support.shape[-1]} != N={N}")
    shape = support.shape + (M,)
    scale = np.sqrt(0.5)
    re = gen.standard_normal(shape) * scale
    im = gen.standard_normal(shape) * scale
    keep = support[..., None]
    return ComplexMatrix(np.where(keep, re, 0.0), np.where(keep, im, 0.0))


def normalize_columns(a: ComplexMatrix, target: float) -> ComplexMatrix:
    """Rescale every column to Euclidean norm ``target``."""
    norms = a.column_norms()
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero column")
    s = target / norms
    return ComplexMatrix(a.re * s, a.im * s)


def gen_measurement_matrix(L: int, N: int, rng, normalize: bool = False) -> ComplexMatrix:
    """Pilot matrix with i.i.d. CN(0, 1) entries, optionally column-normalized
    to norm ``sqrt(L)``."""
    if L < 1 or N < 1:
        raise ValueError(f"L and N must be positive, got L={L}, N={N}")
    gen = _as_generator(rng)
    scale = np.sqrt(0.5)
    a = ComplexMatrix(gen.standard_normal((L, N)) * scale, gen.standard_normal((L, N)) * scale)
    if normalize:
        a = normalize_columns(a, np.sqrt(L))
    return a


def measure(a: ComplexMatrix, x: ComplexMatrix, noise: NoiseModel, rng=None) -> ComplexMatrix:
    """Noisy measurements ``Y = A X + Z`` with Z entries i.i.d. CN(0, sigma2)."""
    y = complex_matmul(a, x)
    if noise.sigma2 == 0.0:
        return y
    if rng is None:
        raise ValueError("an rng is required when sigma2 > 0")
    gen = _as_generator(rng)
    std = np.sqrt(noise.sigma2 / 2.0)
    return ComplexMatrix(y.re + std * gen.standard_normal(y.shape),
                         y.im + std * gen.standard_normal(y.shape))


# -- textual matrix format ---------------------------------------------------

def format_matrix(m: ComplexMatrix) -> str:
    if m.re.ndim != 2:
        raise ValueError("only 2-D matrices can be written")
    rows, cols = m.shape
    inter = np.empty((rows, 2 * cols))
    inter[:, 0::2] = m.re
    inter[:, 1::2] = m.im
    lines = [f"{rows} {cols}"]
    lines.extend(" ".join(f"{v:.17g}" for v in row) for row in inter)
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> ComplexMatrix:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    try:
        rows, cols = (int(t) for t in lines[0].split())
    except (IndexError, ValueError) as exc:
        raise ValueError("matrix header must be 'rows cols'") from exc
    if len(lines) - 1 != rows:
        raise ValueError(f"expected {rows} data rows, found {len(lines) - 1}")
    data = np.array([[float(t) for t in ln.split()] for ln in lines[1:]], dtype=np.float64)
    if data.size and data.shape[1] != 2 * cols:
        raise ValueError(f"expected {2 * cols} values per row, found {data.shape[1]}")
    data = data.reshape(rows, 2 * cols)
    return ComplexMatrix(data[:, 0::2].copy(), data[:, 1::2].copy())


def write_matrix(path, m: ComplexMatrix) -> None:
    Path(path).write_text(format_matrix(m))


def read_matrix(path) -> ComplexMatrix:
    return parse_matrix(Path(path).read_text())


# -- sample sets ---------------------------------------------------------------
# each sample draws from its own stream so a set can be generated in any order
# or in pieces and still be identical

PURPOSE_SIGNAL = 1
PURPOSE_NOISE = 2


def gen_sample_set(cfg: SparsityConfig, M: int, count: int, rng: RngStream,
                   offset: int = 0) -> ComplexMatrix:
    """``count`` jointly sparse signal matrices, shape ``(count, N, M)``.

    Sample ``t`` uses stream ``rng.child(PURPOSE_SIGNAL, offset + t)``.
    """
    re = np.zeros((count, cfg.N, M))
    im = np.zeros((count, cfg.N, M))
    for t in range(count):
        gen = rng.child(PURPOSE_SIGNAL, offset + t).generator()
        x = gen_signals(gen_support(cfg, gen), cfg.N, M, gen)
        re[t] = x.re
        im[t] = x.im
    return ComplexMatrix(re, im)


def measure_set(a: ComplexMatrix, x: ComplexMatrix, noise: NoiseModel, rng: RngStream,
                offset: int = 0) -> ComplexMatrix:
    """Measurements of a ``(B, N, M)`` stack; sample ``t`` takes its noise from
    ``rng.child(PURPOSE_NOISE, offset + t)``."""
    y = complex_matmul(a, x)
    if noise.sigma2 == 0.0:
        return y
    std = np.sqrt(noise.sigma2 / 2.0)
    re = y.re.copy()
    im = y.im.copy()
    for t in range(x.shape[0]):
        gen = rng.child(PURPOSE_NOISE, offset + t).generator()
        re[t] += std * gen.standard_normal(re.shape[1:])
        im[t] += std * gen.standard_normal(im.shape[1:])
    return ComplexMatrix(re, im)
