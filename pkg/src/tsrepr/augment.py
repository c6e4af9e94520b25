"""Teacher/student view construction and augmentation families.

The wavelet pipeline builds a "clean" teacher view by soft-thresholding
detail coefficients and a "hard" student view by injecting coefficient
noise and zeroing a fraction of the finest band.  Daubechies filters are
generated by spectral factorization; the transform uses periodized
circular convolution, which makes the analysis operator orthogonal and
the round trip exact to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tensor import DomainError, ShapeError

# ---------------------------------------------------------------------------
# Daubechies filters


@lru_cache(maxsize=None)
def daubechies_filter(order: int) -> np.ndarray:
    """Orthonormal db-N scaling filter (length 2N), sum = sqrt(2)."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if order == 1:
        return np.array([1.0, 1.0]) / math.sqrt(2.0)
    p = order
    # P(y) = sum_k C(p-1+k, k) y^k with y = (2 - z - 1/z)/4; roots of
    # z^(p-1) P(y(z)) come in reciprocal pairs -- keep those inside the circle.
    coeffs_y = [math.comb(p - 1 + k, k) for k in range(p)]
    poly = np.zeros(2 * p - 1)
    y_pow = np.array([1.0])  # y^0 in z, centered at degree p-1
    base = np.array([-0.25, 0.5, -0.25])  # (2 - z - 1/z)/4 times z
    for k, c in enumerate(coeffs_y):
        offset = (p - 1) - k
        poly[offset : offset + len(y_pow)] += c * y_pow
        y_pow = np.convolve(y_pow, base)
    roots = np.roots(poly[::-1])
    inside = roots[np.abs(roots) < 1.0]
    h = np.array([1.0], dtype=complex)
    for _ in range(p):
        h = np.convolve(h, [1.0, 1.0])  # (1 + z)^p
    for r in inside:
        h = np.convolve(h, [1.0, -r])
    h = np.real(h)
    h *= math.sqrt(2.0) / h.sum()
    return h


def wavelet_filters(family: str) -> tuple[np.ndarray, np.ndarray]:
    """(scaling, wavelet) decomposition filters for a 'dbN' family name."""
    if not family.startswith("db"):
        raise ValueError(f"unsupported wavelet family {family!r}")
    order = int(family[2:])
    h = daubechies_filter(order)
    g = (h[::-1] * np.power(-1.0, np.arange(len(h)))).copy()
    return h, g


# ---------------------------------------------------------------------------
# periodized DWT


@dataclass
class DwtConfig:
    family: str = "db4"
    level: int = 3
    teacher_sigma: float = 0.3
    student_noise_range: tuple[float, float] = (0.1, 0.3)
    zero_out_fraction: float = 0.0

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("level must be >= 1")
        if not 0.0 <= self.zero_out_fraction <= 1.0:
            raise ValueError("zero_out_fraction must be in [0, 1]")


@dataclass
class Pyramid:
    """Multi-level coefficients: details[0] is the coarsest band,
    details[-1] the finest."""

    approx: np.ndarray
    details: list[np.ndarray]
    family: str

    @property
    def level(self) -> int:
        return len(self.details)

    @property
    def length(self) -> int:
        return len(self.approx) * (2 ** self.level)

    def copy(self) -> "Pyramid":
        return Pyramid(self.approx.copy(), [d.copy() for d in self.details],
                       self.family)


def _analysis_step(x: np.ndarray, h: np.ndarray, g: np.ndarray):
    n = x.shape[0]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(h))[None, :]) % n
    win = x[idx]
    return win @ h, win @ g


def _synthesis_step(a: np.ndarray, d: np.ndarray, h: np.ndarray,
                    g: np.ndarray) -> np.ndarray:
    n = 2 * a.shape[0]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(h))[None, :]) % n
    x = np.zeros(n)
    np.add.at(x, idx, a[:, None] * h + d[:, None] * g)
    return x


def dwt_forward(signal: np.ndarray, cfg: DwtConfig) -> Pyramid:
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ShapeError("dwt_forward expects a 1-D signal")
    h, g = wavelet_filters(cfg.family)
    n = signal.shape[0]
    if n < len(h):
        raise ShapeError(f"signal length {n} < filter length {len(h)}")
    if n % (2 ** cfg.level) != 0:
        raise ShapeError(
            f"signal length {n} not divisible by 2^level = {2 ** cfg.level}"
        )
    details: list[np.ndarray] = []
    a = signal
    for _ in range(cfg.level):
        a, d = _analysis_step(a, h, g)
        details.append(d)
    details.reverse()  # coarsest first
    return Pyramid(a, details, cfg.family)


def dwt_inverse(pyr: Pyramid) -> np.ndarray:
    h, g = wavelet_filters(pyr.family)
    a = pyr.approx
    for d in pyr.details:
        if d.shape[0] != a.shape[0]:
            raise ShapeError("inconsistent band lengths in pyramid")
        a = _synthesis_step(a, d, h, g)
    return a


def max_dwt_level(length: int, requested: int) -> int:
    """Deepest level <= requested for which ``length`` splits evenly."""
    lvl = 0
    while lvl < requested and length % 2 == 0 and length >= 2:
        length //= 2
        lvl += 1
    if lvl == 0:
        raise ShapeError("signal length does not admit even one DWT level")
    return lvl


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def teacher_view(signal: np.ndarray, cfg: DwtConfig) -> np.ndarray:
    """Clean view: MAD-scaled soft threshold on all detail bands.

    tau = teacher_sigma * median(|finest detail|) / 0.6745 (universal
    threshold convention); the approximation band is untouched.
    """
    pyr = dwt_forward(signal, cfg)
    finest = pyr.details[-1]
    tau = cfg.teacher_sigma * np.median(np.abs(finest)) / 0.6745
    pyr.details = [soft_threshold(d, tau) for d in pyr.details]
    return dwt_inverse(pyr).astype(np.float32)


def student_view(signal: np.ndarray, cfg: DwtConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Hard view: uniform coefficient noise plus finest-band zero-out."""
    pyr = dwt_forward(signal, cfg)
    lo, hi = cfg.student_noise_range
    amp = rng.uniform(lo, hi)
    if amp > 0.0:
        pyr.details = [d + rng.uniform(-amp, amp, size=d.shape)
                       for d in pyr.details]
    if cfg.zero_out_fraction > 0.0:
        finest = pyr.details[-1]
        k = int(round(cfg.zero_out_fraction * finest.shape[0]))
        if k > 0:
            kill = rng.choice(finest.shape[0], size=k, replace=False)
            finest[kill] = 0.0
    return dwt_inverse(pyr).astype(np.float32)


# ---------------------------------------------------------------------------
# view pairs


@dataclass
class ViewPair:
    teacher_view: np.ndarray
    student_view: np.ndarray
    provenance: dict = field(default_factory=dict)


def make_view_pair(batch: np.ndarray, cfg: DwtConfig, rng: np.random.Generator,
                   extra: "list[TransformSpec] | None" = None) -> ViewPair:
    """Build (teacher, student) views for a (B, T) batch.

    The teacher view is the soft-thresholded reconstruction; the student
    view carries coefficient noise and zero-out.  ``extra`` stochastic
    transforms are applied to the teacher/global view only.
    """
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim != 2:
        raise ShapeError("make_view_pair expects a (B, T) batch")
    lvl = max_dwt_level(batch.shape[1], cfg.level)
    eff = DwtConfig(cfg.family, lvl, cfg.teacher_sigma,
                    cfg.student_noise_range, cfg.zero_out_fraction)
    teacher = np.stack([teacher_view(row, eff) for row in batch])
    student = np.stack([student_view(row, eff, rng) for row in batch])
    prov = {"family": cfg.family, "level": lvl,
            "teacher_sigma": cfg.teacher_sigma,
            "zero_out_fraction": cfg.zero_out_fraction, "extra": []}
    if extra:
        for spec in extra:
            teacher = stochastic_suite(teacher, spec, rng)
            prov["extra"].append((spec.family, spec.magnitude))
    return ViewPair(teacher, student, prov)


# ---------------------------------------------------------------------------
# stochastic and physics transform families


STOCHASTIC_FAMILIES = ("jitter", "amp_scale", "channel_dropout", "fft_mask")
PHYSICS_FAMILIES = ("galilean", "drift", "rotation", "lorentz", "polar",
                    "tanh_compress", "moebius")


@dataclass
class TransformSpec:
    family: str
    magnitude: float

    def __post_init__(self):
        if self.family not in STOCHASTIC_FAMILIES + PHYSICS_FAMILIES:
            raise ValueError(f"unknown transform family {self.family!r}")


DEFAULT_STOCHASTIC = [
    TransformSpec("jitter", 0.05),
    TransformSpec("amp_scale", 0.2),       # u ~ U[0.8, 1.2]
    TransformSpec("channel_dropout", 0.2),
    TransformSpec("fft_mask", 0.3),
]


def stochastic_suite(batch: np.ndarray, spec: TransformSpec,
                     rng: np.random.Generator) -> np.ndarray:
    """Apply one stochastic family to a (B, T) batch of flattened channels."""
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim != 2:
        raise ShapeError("stochastic_suite expects a (B, T) batch")
    m = spec.magnitude
    if m == 0.0:
        return batch.copy()
    if spec.family == "jitter":
        return batch + rng.normal(0.0, m, size=batch.shape).astype(np.float32)
    if spec.family == "amp_scale":
        u = rng.uniform(1.0 - m, 1.0 + m, size=(batch.shape[0], 1))
        return (batch * u).astype(np.float32)
    if spec.family == "channel_dropout":
        keep = rng.random(batch.shape[0]) >= m
        return (batch * keep[:, None]).astype(np.float32)
    if spec.family == "fft_mask":
        spectrum = np.fft.rfft(batch, axis=-1)
        n_bins = spectrum.shape[-1]
        out = spectrum.copy()
        for i in range(batch.shape[0]):
            k = int(round(m * n_bins))
            if k > 0:
                kill = rng.choice(n_bins, size=k, replace=False)
                out[i, kill] = 0.0
        return np.fft.irfft(out, n=batch.shape[1], axis=-1).astype(np.float32)
    raise ValueError(f"{spec.family} is not a stochastic family")


def physics_suite(series: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Deterministic physics/geometry warp of one series or a (B, T) batch."""
    series = np.asarray(series, dtype=np.float32)
    if series.ndim == 2:
        return np.stack([physics_suite(row, spec) for row in series])
    t_len = series.shape[0]
    t_norm = np.arange(t_len, dtype=np.float64) / max(t_len - 1, 1)
    x = series.astype(np.float64)
    m = float(spec.magnitude)
    fam = spec.family

    if fam == "galilean":
        # time axis stretched by (1 + m): x'(t) = x(t / (1 + m))
        src = np.arange(t_len) / (1.0 + m)
        src = np.clip(src, 0.0, t_len - 1)
        out = np.interp(src, np.arange(t_len), x)
    elif fam == "drift":
        out = x + m * np.arange(t_len) / t_len
    elif fam == "rotation":
        out = np.sin(m) * t_norm + np.cos(m) * x
    elif fam == "lorentz":
        if abs(m) >= 1.0:
            raise DomainError("lorentz velocity |v| must be < 1")
        gamma = 1.0 / math.sqrt(1.0 - m * m)
        out = gamma * (x - m * t_norm)
    elif fam == "polar":
        # swirl: rotate each (t_norm, x) point by an angle m * radius
        r = np.hypot(t_norm, x)
        theta = np.arctan2(x, t_norm)
        out = r * np.sin(theta + m * r)
    elif fam == "tanh_compress":
        out = np.tanh(m * x) / m if m != 0.0 else x
    elif fam == "moebius":
        # real Moebius shift on the clamped value coordinate; the clamp
        # residual is carried through so m=0 is the exact identity
        u = np.clip(x, -0.999, 0.999)
        out = (u + m) / (1.0 + m * u) + (x - u)
    else:
        raise ValueError(f"{fam} is not a physics family")
    return out.astype(np.float32)
