"""Synthetic corpus generation from kernel-composition GP priors.

Univariate series are single draws from a Gaussian process whose
covariance is a random left-folded add/multiply composition of atoms
from a fixed kernel bank.  Multivariate series mix latent univariate
factors through simplex weights (linear coregionalization).
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tsb

KERNEL_FAMILIES = ("exp_sine_squared", "rbf", "rational_quadratic",
                   "dot_product", "white_noise", "constant")


@dataclass(frozen=True)
class KernelAtom:
    family: str
    params: tuple  # family-specific, scale parameters in sample units

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")


def default_kernel_bank() -> list[KernelAtom]:
    """The 33-atom bank: periodicities cover hourly/daily/weekly/yearly
    style resolutions; all length-type parameters are in sample units and
    are normalized by the series length at evaluation time."""
    bank: list[KernelAtom] = []
    for period in (24, 168, 8766, 96, 672, 7, 365, 52, 12, 4, 30):
        bank.append(KernelAtom("exp_sine_squared", (float(period), 1.0)))
    for ls in (0.5, 1, 2, 5, 10, 20, 50):
        bank.append(KernelAtom("rbf", (float(ls),)))
    for ls in (1, 5, 20):
        for alpha in (0.5, 2.0):
            bank.append(KernelAtom("rational_quadratic", (float(ls), alpha)))
    for sigma0 in (0.0, 1.0, 2.0):
        bank.append(KernelAtom("dot_product", (sigma0,)))
    for level in (0.01, 0.1, 1.0):
        bank.append(KernelAtom("white_noise", (level,)))
    for value in (0.5, 1.0, 5.0):
        bank.append(KernelAtom("constant", (value,)))
    assert len(bank) == 33
    return bank


@dataclass
class KernelComposition:
    atoms: list[KernelAtom]
    operators: list[str]  # K-1 entries, each "add" | "multiply"

    def __post_init__(self):
        if not 1 <= len(self.atoms) <= 5:
            raise ValueError("composition size must be in [1, 5]")
        if len(self.operators) != len(self.atoms) - 1:
            raise ValueError("need exactly K-1 operators")
        if any(op not in ("add", "multiply") for op in self.operators):
            raise ValueError("operators must be add|multiply")


@dataclass
class LcmConfig:
    n_channels: int = 160
    series_length: int = 2500
    series_count: int = 4000
    weibull_shape: float = 1.5
    weibull_scale: float = 4.0
    latent_clip: tuple[int, int] = (1, 10)
    dirichlet_alpha_range: tuple[float, float] = (0.1, 1.0)

    def __post_init__(self):
        if self.n_channels < 1 or self.latent_clip[0] < 1:
            raise ValueError("need n_channels >= 1 and latent clip >= 1")


def sample_kernel_composition(rng: np.random.Generator,
                              bank: list[KernelAtom] | None = None
                              ) -> KernelComposition:
    bank = default_kernel_bank() if bank is None else bank
    if not bank:
        raise ValueError("kernel bank is empty")
    k = int(rng.integers(1, 6))
    atoms = [bank[int(i)] for i in rng.integers(0, len(bank), size=k)]
    ops = ["add" if rng.random() < 0.5 else "multiply" for _ in range(k - 1)]
    return KernelComposition(atoms, ops)


def _atom_gram(atom: KernelAtom, grid: np.ndarray, t: int) -> np.ndarray:
    """Evaluate one atom on the normalized grid; sample-unit parameters
    are divided by the series length."""
    x = grid[:, None]
    dist = np.abs(x - grid[None, :])
    fam = atom.family
    if fam == "exp_sine_squared":
        period, ls = atom.params
        arg = np.sin(np.pi * dist / (period / t))
        val = np.exp(-2.0 * (arg / ls) ** 2)
    elif fam == "rbf":
        (ls,) = atom.params
        val = np.exp(-0.5 * (dist / (ls / t)) ** 2)
    elif fam == "rational_quadratic":
        ls, alpha = atom.params
        val = (1.0 + dist ** 2 / (2.0 * alpha * (ls / t) ** 2)) ** (-alpha)
    elif fam == "dot_product":
        (sigma0,) = atom.params
        val = sigma0 ** 2 + x * grid[None, :]
    elif fam == "white_noise":
        (level,) = atom.params
        val = level * np.eye(grid.shape[0])
    elif fam == "constant":
        (value,) = atom.params
        val = np.full((grid.shape[0], grid.shape[0]), value)
    else:  # pragma: no cover
        raise ValueError(fam)
    if not np.all(np.isfinite(val)):
        raise ValueError(f"non-finite kernel value for {atom}")
    return val


def gram_matrix(comp: KernelComposition, t: int) -> np.ndarray:
    """T x T covariance on the uniform grid 0..T-1 normalized to [0, 1]."""
    if t < 2:
        raise ValueError("grid needs at least 2 points")
    grid = np.arange(t, dtype=np.float64) / t
    gram = _atom_gram(comp.atoms[0], grid, t)
    for op, atom in zip(comp.operators, comp.atoms[1:]):
        nxt = _atom_gram(atom, grid, t)
        gram = gram + nxt if op == "add" else gram * nxt
    return 0.5 * (gram + gram.T)


def sample_gp(gram: np.ndarray, rng: np.random.Generator,
              jitter: float = 1e-6) -> np.ndarray:
    """One realization x = L xi with L the Cholesky factor of gram+jitter."""
    t = gram.shape[0]
    scale = max(1.0, float(np.max(np.diag(gram))))
    j = jitter
    while j <= 1e-4 * scale:
        try:
            chol = np.linalg.cholesky(gram + j * scale * np.eye(t))
            return chol @ rng.standard_normal(t)
        except np.linalg.LinAlgError:
            j *= 10.0
    raise FloatingPointError("Cholesky failed after jitter escalation")


def sample_univariate(rng: np.random.Generator, t: int,
                      bank: list[KernelAtom] | None = None) -> np.ndarray:
    comp = sample_kernel_composition(rng, bank)
    return sample_gp(gram_matrix(comp, t), rng)


def sample_multivariate_lcm(cfg: LcmConfig, rng: np.random.Generator,
                            bank: list[KernelAtom] | None = None
                            ) -> np.ndarray:
    """(C, T) channels mixed from J latent GP factors via simplex weights."""
    lo, hi = cfg.latent_clip
    j = int(np.clip(round(rng.weibull(cfg.weibull_shape) * cfg.weibull_scale),
                    lo, hi))
    factors = np.stack([sample_univariate(rng, cfg.series_length, bank)
                        for _ in range(j)])  # (J, T)
    alpha = rng.uniform(*cfg.dirichlet_alpha_range)
    weights = rng.dirichlet(np.full(j, alpha), size=cfg.n_channels)  # (C, J)
    return weights @ factors


def _standardize(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    return ((x - mu) / np.maximum(sd, eps)).astype(np.float32)


@dataclass
class CorpusManifest:
    shards: list[str]
    shard_counts: list[int]
    seed: int
    univariate: bool
    series_count: int
    series_length: int
    n_channels: int
    config_digest: str

    def write(self, path) -> None:
        lines = [
            f"seed={self.seed}",
            f"univariate={int(self.univariate)}",
            f"series_count={self.series_count}",
            f"series_length={self.series_length}",
            f"n_channels={self.n_channels}",
            f"config_digest={self.config_digest}",
        ]
        for shard, count in zip(self.shards, self.shard_counts):
            lines.append(f"shard={shard}:{count}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "CorpusManifest":
        kv: dict[str, str] = {}
        shards, counts = [], []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key == "shard":
                name, _, count = value.rpartition(":")
                shards.append(name)
                counts.append(int(count))
            else:
                kv[key] = value
        return cls(shards, counts, int(kv["seed"]), bool(int(kv["univariate"])),
                   int(kv["series_count"]), int(kv["series_length"]),
                   int(kv["n_channels"]), kv["config_digest"])


def _config_digest(cfg: LcmConfig, univariate: bool) -> str:
    text = repr((cfg, univariate))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def generate_corpus(cfg: LcmConfig, univariate: bool, out_dir,
                    n_workers: int = 1, seed: int = 0,
                    shard_size: int = 512,
                    bank: list[KernelAtom] | None = None) -> CorpusManifest:
    """Write N standardized series as sharded TSB1 plus a manifest.

    Per-series RNG streams derive from (seed, index), so shard bytes are
    independent of worker count and schedule.  The manifest is written
    last as the commit point.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = cfg.series_count

    def make(i: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        if univariate:
            return _standardize(sample_univariate(rng, cfg.series_length, bank))
        return _standardize(sample_multivariate_lcm(cfg, rng, bank))

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            series = list(pool.map(make, range(n)))
    else:
        series = [make(i) for i in range(n)]

    shards, counts = [], []
    for start in range(0, n, shard_size):
        chunk = np.stack(series[start : start + shard_size])
        name = f"shard_{start // shard_size:05d}.tsb"
        tsb.write_tensor(out_dir / name, chunk)
        shards.append(name)
        counts.append(chunk.shape[0])
    manifest = CorpusManifest(shards, counts, seed, univariate, n,
                              cfg.series_length, 1 if univariate else
                              cfg.n_channels, _config_digest(cfg, univariate))
    manifest.write(out_dir / "manifest.txt")
    return manifest


def load_corpus(out_dir) -> tuple[CorpusManifest, np.ndarray]:
    out_dir = Path(out_dir)
    manifest = CorpusManifest.read(out_dir / "manifest.txt")
    arrays = [tsb.read_tensor(out_dir / s) for s in manifest.shards]
    return manifest, np.concatenate(arrays, axis=0)
