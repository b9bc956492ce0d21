"""Design-path simulation and response generation for the functional linear model.

Reproducibility contract: every replicate row gets its own counter-derived
seed, so parallel generation is bit-identical to serial generation and the
output depends only on (seed, inputs).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .grids import Grid, GridFunction, OracleSpec, pairing
from .kernels import GramModel

__all__ = [
    "RegressionSample",
    "sample_design",
    "sample_response",
    "simulate",
    "save_sample_binary",
    "load_sample_binary",
    "save_sample_csv",
    "load_sample_csv",
]

_MAGIC = b"FLXS1"

# sub-stream tags under the master seed: rows of X, then the noise vector
_DESIGN_STREAM = 0
_NOISE_STREAM = 1


@dataclass(frozen=True)
class RegressionSample:
    """n i.i.d. design paths on the grid plus responses."""

    X: np.ndarray            # (n, N)
    Y: np.ndarray            # (n,)
    seed: int
    gram: GramModel | None = None
    oracle: OracleSpec | None = None

    def __post_init__(self):
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X rows and Y length must match")
        self.X.setflags(write=False)
        self.Y.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_points(self) -> int:
        return self.X.shape[1]


def _row_rngs(seed: int, stream: int, n: int):
    root = np.random.SeedSequence((int(seed), stream))
    return [np.random.Generator(np.random.PCG64(s)) for s in root.spawn(n)]


def sample_design(gram: GramModel, n: int, driver: str = "gaussian", seed: int = 0) -> np.ndarray:
    """Draw n rows X_i = mean + L z_i with i.i.d. standard-normal or Rademacher drivers."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if driver not in ("gaussian", "rademacher"):
        raise ValueError(f"unknown driver {driver!r}")
    N = gram.size
    Z = np.empty((n, N))
    for i, rng in enumerate(_row_rngs(seed, _DESIGN_STREAM, n)):
        if driver == "gaussian":
            Z[i] = rng.standard_normal(N)
        else:
            Z[i] = rng.integers(0, 2, size=N) * 2.0 - 1.0
    return gram.mean[None, :] + Z @ gram.chol.T


def sample_response(X: np.ndarray, grid: Grid, oracle: OracleSpec, seed: int = 0) -> np.ndarray:
    """Y_i = a* + sum_t mu_t lambda*_t X_i(t) + xi_i, noise independent of X."""
    lam = oracle.slope.values
    if lam.shape[0] != X.shape[1] or X.shape[1] != grid.size:
        raise ValueError("oracle slope, design columns and grid size must agree")
    signal = oracle.intercept + X @ (grid.weights * lam)
    n = X.shape[0]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), _NOISE_STREAM))))
    if oracle.noise_sd == 0.0:
        return signal
    if oracle.noise_kind == "gaussian":
        xi = oracle.noise_sd * rng.standard_normal(n)
    else:  # scaled-rademacher
        xi = oracle.noise_sd * (rng.integers(0, 2, size=n) * 2.0 - 1.0)
    return signal + xi


def simulate(gram: GramModel, oracle: OracleSpec, n: int, driver: str = "gaussian",
             seed: int = 0) -> RegressionSample:
    X = sample_design(gram, n, driver=driver, seed=seed)
    Y = sample_response(X, gram.grid, oracle, seed=seed)
    return RegressionSample(X=X, Y=Y, seed=int(seed), gram=gram, oracle=oracle)


def population_variance_y(gram: GramModel, oracle: OracleSpec) -> float:
    """sigma_Y^2 = Var(f*(X)) + sigma_xi^2 computed exactly from the Gram model."""
    lam = oracle.slope.values
    theta = gram.grid.weights * lam
    return float(theta @ gram.K @ theta + oracle.noise_sd ** 2)


def save_sample_binary(sample: RegressionSample, path) -> None:
    """Compact layout: magic FLXS1, uint64 LE n and N, row-major float64 LE X, then Y."""
    n, N = sample.X.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", n, N))
        fh.write(np.ascontiguousarray(sample.X, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(sample.Y, dtype="<f8").tobytes())


def load_sample_binary(path) -> RegressionSample:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise ValueError(f"not a {_MAGIC.decode()} sample file")
        n, N = struct.unpack("<QQ", fh.read(16))
        X = np.frombuffer(fh.read(8 * n * N), dtype="<f8").reshape(n, N).astype(float)
        Y = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(float)
    return RegressionSample(X=X, Y=Y, seed=0)


def save_sample_csv(sample: RegressionSample, x_path, y_path, replicate: int = 0) -> None:
    """CSV pair: rows `replicate,i,t_index,x` and `replicate,i,y`."""
    with open(x_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["replicate", "i", "t_index", "x"])
        for i in range(sample.n):
            for j in range(sample.n_points):
                wr.writerow([replicate, i, j, repr(float(sample.X[i, j]))])
    with open(y_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["replicate", "i", "y"])
        for i in range(sample.n):
            wr.writerow([replicate, i, repr(float(sample.Y[i]))])


def load_sample_csv(x_path, y_path, replicate: int = 0) -> RegressionSample:
    xs = {}
    with open(x_path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        next(rd)
        for rep, i, j, x in rd:
            if int(rep) != replicate:
                continue
            xs[(int(i), int(j))] = float(x)
    if not xs:
        raise ValueError(f"no rows for replicate {replicate} in {x_path}")
    n = max(i for i, _ in xs) + 1
    N = max(j for _, j in xs) + 1
    X = np.zeros((n, N))
    for (i, j), x in xs.items():
        X[i, j] = x
    Y = np.zeros(n)
    with open(y_path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        next(rd)
        for rep, i, y in rd:
            if int(rep) == replicate:
                Y[int(i)] = float(y)
    return RegressionSample(X=X, Y=Y, seed=0)
