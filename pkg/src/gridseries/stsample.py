"""Mean-one spatio-temporal volatility multipliers.

A Gaussian field with separable covariance ``spatial ⊗ temporal`` is drawn
as ``A @ X @ B`` (with ``spatial = A Aᵀ`` and ``temporal = Bᵀ B``), never
materializing the Kronecker product, and mapped through a shifted
exponential so every multiplier has expectation one.

Bit-identical panels are guaranteed for a fixed seed on one platform; across
platforms ``exp`` and the LAPACK Cholesky may differ in the last ulp.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import math

import numpy as np

from .errors import SolverError, ValidationError

log = logging.getLogger(__name__)

KRON_MAX = 10_000


@dataclasses.dataclass(frozen=True)
class KernelConfig:
    alpha: float = 0.01  # marginal log-variance
    sigma: float = 1.0  # spatial length scale, km
    theta: float = 1.0  # temporal decay per period
    floor: float = 1e-6

    def __post_init__(self):
        if not (self.alpha > 0 and self.sigma > 0 and self.theta > 0):
            raise ValidationError(f"alpha, sigma, theta must be positive: {self}")
        if self.floor < 0:
            raise ValidationError("clip floor must be nonnegative")


@dataclasses.dataclass(frozen=True)
class VolatilityPanel:
    values: np.ndarray  # (N, T)
    seed: int
    config: KernelConfig | None = None
    clip_fraction: float = 0.0


def derive_seed(master: int, *labels) -> int:
    """Stable 64-bit seed from a master seed and any labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for lab in labels:
        h.update(b"\x1f" + str(lab).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def marginal_std(alpha: float) -> float:
    """Standard deviation of ``exp(Z) + 1 - exp(alpha/2)`` with ``Z ~ N(0, alpha)``."""
    return math.sqrt(math.exp(alpha) * math.expm1(alpha))


def alpha_for_std(std: float) -> float:
    """Inverse of :func:`marginal_std`."""
    if std <= 0:
        raise ValueError("std must be positive")
    return math.log((1 + math.sqrt(1 + 4 * std * std)) / 2)


def spatial_kernel(D: np.ndarray, alpha: float, sigma: float) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValidationError(f"distance matrix must be square, got {D.shape}")
    if not np.allclose(D, D.T, rtol=0, atol=1e-9 * max(1.0, float(np.abs(D).max(initial=0)))):
        raise ValidationError("distance matrix is not symmetric")
    if np.any(D < 0) or np.any(np.diag(D) != 0):
        raise ValidationError("distance matrix must be nonnegative with zero diagonal")
    return alpha * np.exp(-(D ** 2) / (2 * sigma ** 2))


def temporal_kernel(T: int, theta: float, times=None) -> np.ndarray:
    """Exponential kernel over ``T`` periods (or explicit ``times``, in periods)."""
    t = np.arange(T, dtype=float) if times is None else np.asarray(times, dtype=float)
    return np.exp(-theta * np.abs(t[:, None] - t[None, :]))


def cholesky_jitter(S: np.ndarray, *, tries: int = 8) -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter when S is only semidefinite.

    Jitter starts at ``1e-10 * trace / n`` and doubles up to ``tries`` times.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    eps = 1e-10 * np.trace(S) / max(n, 1)
    if eps <= 0:
        raise SolverError("cannot factor a matrix with nonpositive trace")
    for _ in range(tries + 1):
        try:
            L = np.linalg.cholesky(S + eps * np.eye(n))
            log.debug("cholesky needed jitter %.3g", eps)
            return L
        except np.linalg.LinAlgError:
            eps *= 2
    raise SolverError(f"Cholesky failed after {tries} jitter doublings")


def kron_covariance(spatial: np.ndarray, temporal: np.ndarray) -> np.ndarray:
    """Dense ``spatial ⊗ temporal``; matches row-major ``vec`` of an (N, T) panel."""
    n = spatial.shape[0] * temporal.shape[0]
    if n > KRON_MAX:
        raise MemoryError(f"refusing to build a {n}x{n} Kronecker covariance")
    return np.kron(spatial, temporal)


class PanelSampler:
    """Factored sampler for one (spatial, temporal) covariance pair."""

    def __init__(self, spatial: np.ndarray, temporal: np.ndarray):
        self.A = cholesky_jitter(spatial)
        # temporal = Bᵀ B with B upper triangular
        self.B = cholesky_jitter(temporal).T
        var_s = np.einsum("ij,ij->i", self.A, self.A)
        var_t = np.einsum("ij,ij->j", self.B, self.B)
        # variance of each Gaussian cell under the factors actually used
        self.variance = np.outer(var_s, var_t)
        self.shift = 1.0 - np.exp(0.5 * self.variance)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape[0], self.B.shape[0]

    def gaussian(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        N, T = self.shape
        X = rng.standard_normal((N, T) if size is None else (size, N, T))
        return self.A @ X @ self.B

    def lognormal(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Unclipped mean-one multipliers."""
        return np.exp(self.gaussian(rng, size)) + self.shift


def sample_panel(
    spatial: np.ndarray,
    temporal: np.ndarray,
    seed: int,
    *,
    floor: float = 1e-6,
    config: KernelConfig | None = None,
) -> VolatilityPanel:
    sampler = PanelSampler(spatial, temporal)
    Y = sampler.lognormal(make_rng(seed))
    clipped = Y < floor
    frac = float(clipped.mean()) if Y.size else 0.0
    if frac:
        log.info("clipped %.3g%% of multipliers at floor %g", 100 * frac, floor)
    Y = np.where(clipped, floor, Y)
    return VolatilityPanel(Y, int(seed), config, frac)


def panel_for(distances: np.ndarray, n_periods: int, config: KernelConfig, seed: int) -> VolatilityPanel:
    """Convenience wrapper: kernels from a distance matrix and a config."""
    return sample_panel(
        spatial_kernel(distances, config.alpha, config.sigma),
        temporal_kernel(n_periods, config.theta),
        seed,
        floor=config.floor,
        config=config,
    )


def write_panel_csv(panel: VolatilityPanel, component_ids, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component_id", "period", "multiplier"])
        for cid, row in zip(component_ids, panel.values):
            for t, v in enumerate(row):
                w.writerow([cid, t, repr(float(v))])
