"""Problem instances for corrupted sensing: y = Phi x + v + z.

Generators here are pure functions of ``(spec, seed)``.  Each instance draws
its sensing matrix, signal, corruption and noise from independent streams
derived from one 64-bit seed, so changing e.g. the noise level does not
perturb the matrix or the signal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DimensionMismatchError, InvalidSpecError

# psi_2 norm of a standard normal variable: E exp(X^2/t^2) = (1 - 2/t^2)^(-1/2) = 2
GAUSSIAN_PSI2 = float(np.sqrt(8.0 / 3.0))

_STREAM_SENSING = 1
_STREAM_SIGNAL = 2
_STREAM_CORRUPTION = 3
_STREAM_NOISE = 4

ENSEMBLES = ("gaussian", "rademacher", "uniform")
NOISE_KINDS = ("none", "bounded", "subgaussian")
STRUCTURES = ("sparse", "block-sparse")
AMPLITUDES = ("rademacher", "gaussian", "const")


def rng_for(seed, *keys: int) -> np.random.Generator:
    """Generator keyed by ``(seed, *keys)``; independent across key tuples."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def trial_seed(base_seed: int, trial: int) -> int:
    """Deterministic 64-bit per-trial seed derived from a base seed."""
    ss = np.random.SeedSequence([int(base_seed), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- specs -------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSpec:
    """Entry law of the sensing matrix; entries are i.i.d. with variance 1/m.

    ``subgaussian_K`` is the psi_2 budget of an unscaled row.  All three
    laws are dominated in moment generating function by N(0, 1), so the
    row psi_2 norm is the Gaussian value sqrt(8/3) in every case.
    """

    kind: str = "gaussian"
    subgaussian_K: float = GAUSSIAN_PSI2

    def __post_init__(self):
        if self.kind not in ENSEMBLES:
            raise InvalidSpecError(f"unknown ensemble {self.kind!r}; expected one of {ENSEMBLES}")
        if not self.subgaussian_K > 0:
            raise InvalidSpecError("subgaussian_K must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "K": self.subgaussian_K}

    @classmethod
    def from_dict(cls, d) -> "EnsembleSpec":
        if isinstance(d, str):
            return cls(d)
        return cls(d.get("kind", "gaussian"), float(d.get("K", GAUSSIAN_PSI2)))


@dataclass(frozen=True)
class NoiseSpec:
    """Observation noise.

    ``bounded`` draws uniformly from the l2 ball of radius ``delta``;
    ``subgaussian`` draws i.i.d. unit-variance entries from ``dist`` with
    psi_2 budget ``L``.
    """

    kind: str = "none"
    delta: float = 0.0
    L: float = 1.0
    dist: str = "gaussian"

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidSpecError(f"unknown noise kind {self.kind!r}")
        if self.delta < 0:
            raise InvalidSpecError(f"delta must be nonnegative, got {self.delta}")
        if self.kind == "subgaussian" and not self.L > 0:
            raise InvalidSpecError("L must be positive")
        if self.dist not in ENSEMBLES:
            raise InvalidSpecError(f"unknown noise entry law {self.dist!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "delta": self.delta, "L": self.L, "dist": self.dist}

    @classmethod
    def from_dict(cls, d) -> "NoiseSpec":
        if isinstance(d, str):
            return cls(d)
        return cls(
            d.get("kind", "none"),
            float(d.get("delta", 0.0)),
            float(d.get("L", 1.0)),
            d.get("dist", "gaussian"),
        )


@dataclass(frozen=True)
class StructureSpec:
    """Sparse or block-sparse vector law.

    ``sparsity`` counts nonzero entries (sparse) or active blocks
    (block-sparse).  Nonzero amplitudes are ``scale`` times a Rademacher
    sign, a standard normal, or the constant 1.
    """

    kind: str = "sparse"
    sparsity: int = 0
    block_size: int = 1
    amplitude: str = "rademacher"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in STRUCTURES:
            raise InvalidSpecError(f"unknown structure {self.kind!r}")
        if self.sparsity < 0 or self.block_size < 1:
            raise InvalidSpecError("sparsity must be >= 0 and block_size >= 1")
        if self.kind == "sparse" and self.block_size != 1:
            raise InvalidSpecError("sparse structure has block_size 1")
        if self.amplitude not in AMPLITUDES:
            raise InvalidSpecError(f"unknown amplitude law {self.amplitude!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "sparsity": self.sparsity,
            "block_size": self.block_size,
            "amplitude": self.amplitude,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d) -> "StructureSpec":
        return cls(
            d.get("kind", "sparse"),
            int(d.get("sparsity", 0)),
            int(d.get("block_size", 1)),
            d.get("amplitude", "rademacher"),
            float(d.get("scale", 1.0)),
        )


# -- generators --------------------------------------------------------------


def _amplitudes(rng, size, spec: StructureSpec) -> np.ndarray:
    if spec.amplitude == "rademacher":
        vals = rng.choice([-1.0, 1.0], size=size)
    elif spec.amplitude == "gaussian":
        vals = rng.standard_normal(size)
    else:
        vals = np.ones(size)
    return spec.scale * vals


def _structured(dim: int, spec: StructureSpec, rng) -> np.ndarray:
    if spec.kind == "sparse":
        if spec.sparsity > dim:
            raise InvalidSpecError(f"sparsity {spec.sparsity} exceeds dimension {dim}")
        out = np.zeros(dim)
        support = rng.choice(dim, size=spec.sparsity, replace=False)
        out[np.sort(support)] = _amplitudes(rng, spec.sparsity, spec)
        return out
    b = spec.block_size
    if dim % b:
        raise InvalidSpecError(f"dimension {dim} is not a multiple of block size {b}")
    nblocks = dim // b
    if spec.sparsity > nblocks:
        raise InvalidSpecError(f"{spec.sparsity} active blocks exceed {nblocks} blocks")
    out = np.zeros((nblocks, b))
    active = np.sort(rng.choice(nblocks, size=spec.sparsity, replace=False))
    out[active] = _amplitudes(rng, (spec.sparsity, b), spec)
    return out.ravel()


def gen_signal(n: int, spec: StructureSpec, seed) -> np.ndarray:
    if n < 1:
        raise InvalidSpecError("n must be >= 1")
    return _structured(n, spec, rng_for(seed, _STREAM_SIGNAL))


def gen_corruption(m: int, spec: StructureSpec, seed) -> np.ndarray:
    if m < 1:
        raise InvalidSpecError("m must be >= 1")
    return _structured(m, spec, rng_for(seed, _STREAM_CORRUPTION))


def _unit_variance_entries(rng, shape, kind: str) -> np.ndarray:
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "rademacher":
        return rng.choice([-1.0, 1.0], size=shape)
    return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)


def gen_sensing_matrix(m: int, n: int, spec: EnsembleSpec, seed) -> np.ndarray:
    """m x n matrix with i.i.d. mean-zero, variance-1/m entries."""
    if m < 1 or n < 1:
        raise InvalidSpecError(f"invalid dimensions m={m}, n={n}")
    rng = rng_for(seed, _STREAM_SENSING)
    return _unit_variance_entries(rng, (m, n), spec.kind) / np.sqrt(m)


def gen_noise(m: int, spec: NoiseSpec, seed) -> np.ndarray:
    if m < 1:
        raise InvalidSpecError("m must be >= 1")
    rng = rng_for(seed, _STREAM_NOISE)
    if spec.kind == "none" or (spec.kind == "bounded" and spec.delta == 0.0):
        return np.zeros(m)
    if spec.kind == "bounded":
        direction = rng.standard_normal(m)
        direction /= np.linalg.norm(direction)
        radius = spec.delta * rng.uniform() ** (1.0 / m)
        return radius * direction
    return _unit_variance_entries(rng, m, spec.dist)


# -- instance ----------------------------------------------------------------


@dataclass(frozen=True)
class ProblemInstance:
    sensing: np.ndarray
    signal: np.ndarray
    corruption: np.ndarray
    noise: np.ndarray
    observation: np.ndarray
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    noise_model: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    signal_spec: StructureSpec | None = None
    corruption_spec: StructureSpec | None = None

    @property
    def m(self) -> int:
        return self.sensing.shape[0]

    @property
    def n(self) -> int:
        return self.sensing.shape[1]

    def residual_norm(self) -> float:
        """||y - (Phi x + v + z)||_2, recomputed from the stored fields."""
        y = self.sensing @ self.signal + self.corruption + self.noise
        return float(np.linalg.norm(self.observation - y))

    # -- serialization ------------------------------------------------------

    def to_dict(self, phi_by_seed: bool = False) -> dict[str, Any]:
        d: dict[str, Any] = {
            "n": self.n,
            "m": self.m,
            "ensemble": self.ensemble.to_dict(),
            "noise": self.noise_model.to_dict(),
            "seed": int(self.seed),
            "signal": self.signal.tolist(),
            "corruption": self.corruption.tolist(),
            "noise_vec": self.noise.tolist(),
            "y": self.observation.tolist(),
        }
        if self.signal_spec is not None:
            d["signal_spec"] = self.signal_spec.to_dict()
        if self.corruption_spec is not None:
            d["corruption_spec"] = self.corruption_spec.to_dict()
        if phi_by_seed:
            d["phi_by_seed"] = True
        else:
            d["phi"] = self.sensing.ravel().tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ProblemInstance":
        n, m = int(d["n"]), int(d["m"])
        ensemble = EnsembleSpec.from_dict(d["ensemble"])
        seed = int(d["seed"])
        if d.get("phi_by_seed"):
            phi = gen_sensing_matrix(m, n, ensemble, seed)
        else:
            phi = np.asarray(d["phi"], dtype=float).reshape(m, n)
        sig = d.get("signal_spec")
        cor = d.get("corruption_spec")
        return cls(
            sensing=phi,
            signal=np.asarray(d["signal"], dtype=float),
            corruption=np.asarray(d["corruption"], dtype=float),
            noise=np.asarray(d["noise_vec"], dtype=float),
            observation=np.asarray(d["y"], dtype=float),
            ensemble=ensemble,
            noise_model=NoiseSpec.from_dict(d["noise"]),
            seed=seed,
            signal_spec=StructureSpec.from_dict(sig) if sig else None,
            corruption_spec=StructureSpec.from_dict(cor) if cor else None,
        )

    def to_json(self, path=None, phi_by_seed: bool = False) -> str:
        text = json.dumps(self.to_dict(phi_by_seed), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "ProblemInstance":
        p = Path(text_or_path) if not str(text_or_path).lstrip().startswith("{") else None
        text = p.read_text() if p is not None else str(text_or_path)
        return cls.from_dict(json.loads(text))


def assemble(sensing, signal, corruption, noise, **meta) -> ProblemInstance:
    """Form y = sensing @ signal + corruption + noise and validate shapes."""
    phi = np.atleast_2d(np.asarray(sensing, dtype=float))
    x = np.asarray(signal, dtype=float).ravel()
    v = np.asarray(corruption, dtype=float).ravel()
    z = np.asarray(noise, dtype=float).ravel()
    m, n = phi.shape
    if x.size != n or v.size != m or z.size != m:
        raise DimensionMismatchError(
            f"sensing is {m}x{n} but signal/corruption/noise have sizes "
            f"{x.size}/{v.size}/{z.size}"
        )
    for name, arr in (("sensing", phi), ("signal", x), ("corruption", v), ("noise", z)):
        if not np.all(np.isfinite(arr)):
            raise InvalidSpecError(f"{name} contains non-finite values")
    y = phi @ x + v + z
    return ProblemInstance(phi, x, v, z, y, **meta)


def make_instance(
    n: int,
    m: int,
    signal: StructureSpec,
    corruption: StructureSpec,
    ensemble: EnsembleSpec = EnsembleSpec(),
    noise: NoiseSpec = NoiseSpec(),
    seed: int = 0,
) -> ProblemInstance:
    return assemble(
        gen_sensing_matrix(m, n, ensemble, seed),
        gen_signal(n, signal, seed),
        gen_corruption(m, corruption, seed),
        gen_noise(m, noise, seed),
        ensemble=ensemble,
        noise_model=noise,
        seed=int(seed),
        signal_spec=signal,
        corruption_spec=corruption,
    )


def write_vector_csv(path, vec) -> None:
    """One value per line, shortest round-trip repr."""
    lines = [repr(float(v)) for v in np.asarray(vec).ravel()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vector_csv(path) -> np.ndarray:
    return np.array([float(s) for s in Path(path).read_text().split()])


# -- diagnostics -------------------------------------------------------------


def estimate_psi2(samples, lo: float = 1e-6, hi: float = 1e3, iters: int = 60) -> float:
    """Empirical sub-Gaussian norm inf{t : mean(exp(X^2/t^2)) <= 2}.

    Bisection on t over ``[lo, hi]``; returns the upper end of the final
    bracket, i.e. the smallest grid value known to satisfy the criterion.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise InvalidSpecError(f"need at least 100 samples, got {x.size}")
    if not np.any(x):
        return 0.0
    x2 = x * x

    def ok(t):
        with np.errstate(over="ignore"):
            return np.mean(np.exp(x2 / (t * t))) <= 2.0

    if not ok(hi):
        return float("inf")
    a, b = lo, hi
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if ok(mid):
            b = mid
        else:
            a = mid
    return float(b)


@dataclass(frozen=True)
class EnsembleReport:
    diag_deviation: float
    offdiag_max: float
    tol: float
    passed: bool


def verify_ensemble(sensing, tol: float) -> EnsembleReport:
    """Compare the row-averaged second moment Phi^T Phi / m with I_n / m."""
    phi = np.atleast_2d(np.asarray(sensing, dtype=float))
    m = phi.shape[0]
    second = phi.T @ phi / m
    diag_dev = float(np.max(np.abs(np.diag(second) - 1.0 / m)))
    off = second - np.diag(np.diag(second))
    off_max = float(np.max(np.abs(off))) if off.size > 1 else 0.0
    return EnsembleReport(diag_dev, off_max, tol, diag_dev <= tol and off_max <= tol)
