"""Independent brute-force oracles used by the acceptance tests.

None of these share a code path with the operations they check: the
quadrature here is kink-aligned trapezoid (the transform module uses
Gauss-Hermite or closed forms), eigenvalues come from a hand-rolled
Jacobi sweep (the Gram checks use LAPACK), and gradients are central
finite differences. All randomness is seeded.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .netgraph import Parameters, Skeleton, forward


@dataclass(frozen=True)
class OracleReport:
    quantity: str
    oracle_value: float
    artifact_value: float
    tolerance: float
    runtime_s: float

    @property
    def abs_error(self) -> float:
        return abs(self.oracle_value - self.artifact_value)

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.oracle_value), 1e-300)
        return self.abs_error / denom

    @property
    def passed(self) -> bool:
        return self.abs_error <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "oracle": self.oracle_value,
            "artifact": self.artifact_value,
            "abs_error": self.abs_error,
            "rel_error": self.rel_error,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "runtime_s": self.runtime_s,
        }


def compare(quantity: str, oracle_value: float, artifact_value: float,
            tolerance: float, t0: float = None) -> OracleReport:
    dt = 0.0 if t0 is None else time.perf_counter() - t0
    return OracleReport(quantity, float(oracle_value), float(artifact_value),
                        float(tolerance), dt)


def reports_to_json(reports: Sequence[OracleReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2)


def reports_to_csv(reports: Sequence[OracleReport]) -> str:
    lines = ["quantity,oracle,artifact,abs_error,rel_error,tolerance,pass,runtime_s"]
    for r in reports:
        d = r.to_dict()
        lines.append(",".join(str(d[k]) for k in
                              ("quantity", "oracle", "artifact", "abs_error",
                               "rel_error", "tolerance", "pass", "runtime_s")))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Ground truth for all delta-f claims
# ---------------------------------------------------------------------------

def brute_delta_f(sk: Skeleton, params: Parameters, delta: Parameters,
                  x: np.ndarray) -> np.ndarray:
    shifted = params.plus(delta)
    f1 = forward(sk, shifted, x, warn_norm=False).output
    f0 = forward(sk, params, x, warn_norm=False).output
    return f1 - f0


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def finite_diff(fn: Callable, point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    point = np.asarray(point, dtype=float)
    grad = np.zeros_like(point)
    for i in range(point.size):
        hi = point.copy()
        lo = point.copy()
        hi[i] += step
        lo[i] -= step
        fp, fm = fn(hi), fn(lo)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("non-finite evaluation in finite differences")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad


def flatten_params(params: Parameters) -> np.ndarray:
    return np.concatenate([W.ravel() for W in params.weights]
                          + [b.ravel() for b in params.biases])


def unflatten_params(sk: Skeleton, flat: np.ndarray) -> Parameters:
    Ws, bs = [], []
    off = 0
    for j in range(sk.D):
        nw = sk.fan_in(j) * sk.fanout[j]
        Ws.append(flat[off:off + nw].reshape(sk.fan_in(j), sk.fanout[j]).copy())
        off += nw
    for j in range(sk.D):
        bs.append(flat[off:off + sk.fanout[j]].copy())
        off += sk.fanout[j]
    return Parameters(tuple(Ws), tuple(bs))


def fd_param_gradient(sk: Skeleton, params: Parameters, x: np.ndarray,
                      out_index: int = 0, step: float = 1e-5) -> np.ndarray:
    """d f_out / d theta_k for every parameter, by central differences."""
    flat0 = flatten_params(params)

    def f_of(flat):
        p = unflatten_params(sk, flat)
        return float(forward(sk, p, x, warn_norm=False).output[out_index])

    return finite_diff(f_of, flat0, step=step)


def ntk_contraction_fd(sk: Skeleton, params: Parameters, x: np.ndarray,
                       x2: np.ndarray, step: float = 1e-5) -> float:
    """sum_k (df(x)/dtheta_k)(df(x')/dtheta_k) for scalar-output nets."""
    if sk.m != 1:
        raise ValueError("parameter-gradient contraction oracle needs m=1")
    g1 = fd_param_gradient(sk, params, x, 0, step)
    g2 = fd_param_gradient(sk, params, x2, 0, step)
    return float(g1 @ g2)


def fd_loss_gradient(sk: Skeleton, params: Parameters, xs: np.ndarray,
                     ys: np.ndarray, step: float = 1e-5) -> Parameters:
    """Gradient of sum_l 0.5 ||f(x_l) - y_l||^2 by central differences."""
    flat0 = flatten_params(params)

    def loss(flat):
        p = unflatten_params(sk, flat)
        total = 0.0
        for xl, yl in zip(xs, ys):
            r = forward(sk, p, xl, warn_norm=False).output - yl
            total += 0.5 * float(r @ r)
        return total

    return unflatten_params(sk, finite_diff(loss, flat0, step=step))


# ---------------------------------------------------------------------------
# Trapezoid Hermite-coefficient quadrature (kink-aligned, step-halved)
# ---------------------------------------------------------------------------

def quadrature_coeff(act, xi: float, k: int, half_width: float = 13.0,
                     rtol: float = 1e-10, n0: int = 1 << 14) -> float:
    """a_(xi)k by trapezoid on a truncated domain, grid aligned to the kink."""

    def he(kk, z):
        h_prev = np.ones_like(z)
        if kk == 0:
            return h_prev
        h = z.copy()
        for j in range(1, kk):
            h_prev, h = h, z * h - j * h_prev
        return h

    def estimate(n):
        zs = np.linspace(-half_width, half_width, n + 1)
        kink = -xi
        if -half_width < kink < half_width:
            zs = np.sort(np.unique(np.concatenate([zs, [kink]])))
        tbar = act(xi + zs) - act(np.array(xi))
        f = tbar * he(k, zs) * np.exp(-zs * zs / 2.0)
        return float(np.trapezoid(f, zs)) / (
            math.sqrt(2.0 * math.pi) * math.exp(math.lgamma(k + 1)))

    prev = estimate(n0)
    for n in (n0 * 2, n0 * 4, n0 * 8):
        cur = estimate(n)
        if abs(cur - prev) <= rtol * max(1.0, abs(cur)):
            return cur
        prev = cur
    return prev


def rectified_double_loop(coeffs1, coeffs2, eta: float, zeta: float) -> float:
    """Naive double-loop rectified-activation sum in 50-digit arithmetic."""
    import mpmath as mp

    with mp.workdps(50):
        total = mp.mpf(0)
        z = mp.mpf(zeta)
        K = len(coeffs1) - 1
        hen = [mp.mpf(0)] * (K + 1)
        hen[0] = mp.mpf(1)
        for i in range(2, K + 1, 2):
            hen[i] = -(i - 1) * hen[i - 2]
        for k in range(1, K + 1):
            a = mp.mpf(float(coeffs1[k])) * mp.mpf(float(coeffs2[k]))
            if a == 0:
                continue
            a /= mp.mpf(eta) ** (2 * k)
            inner = mp.mpf(0)
            for l in range(1, k + 1):
                inner += mp.binomial(k, l) ** 2 * hen[k - l] ** 2 * z ** l
            total += a * inner
        return float(total)


# ---------------------------------------------------------------------------
# Jacobi eigensolver (symmetric) and the SVD-style spectral oracle
# ---------------------------------------------------------------------------

def dense_eig(M: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    A = np.array(M, dtype=float)
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12):
        raise ValueError("dense_eig expects a symmetric matrix")
    n = A.shape[0]
    scale = max(1.0, float(np.abs(A).max()))
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.tril(A, -1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= 1e-300:
                    continue
                theta = 0.5 * math.atan2(2.0 * A[p, q], A[q, q] - A[p, p])
                c, s = math.cos(theta), math.sin(theta)
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                A = rot.T @ A @ rot
    return np.sort(np.diag(A))


def spectral_norm_oracle(M: np.ndarray) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.sqrt(max(dense_eig(M.T @ M).max(), 0.0)))


# ---------------------------------------------------------------------------
# Monte-Carlo Rademacher estimation
# ---------------------------------------------------------------------------

def empirical_rademacher(fn_pool_values: np.ndarray, trials: int = 1000,
                         seed: int = 0) -> tuple:
    """Sampling lower-bound estimate of the Rademacher complexity.

    fn_pool_values has shape (S, N): the s-th candidate function evaluated
    on the N inputs. The inner sup over the class is replaced by a max
    over the pool, which under-estimates the true sup -- exactly what a
    dominance test against a theoretical upper bound needs. Returns
    (mean, stderr).
    """
    F = np.asarray(fn_pool_values, dtype=float)
    S, N = F.shape
    if trials < 100:
        raise ValueError("need at least 100 sign draws")
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(trials, N))
    sups = np.max(signs @ F.T / N, axis=1)
    mean = float(np.mean(sups))
    stderr = float(np.std(sups, ddof=1) / math.sqrt(trials))
    return mean, stderr


def network_pool_values(sk: Skeleton, sampler: Callable[[int], Parameters],
                        inputs: np.ndarray, pool: int = 200,
                        seed: int = 0) -> np.ndarray:
    """Evaluate a pool of sampled scalar-output networks on the inputs."""
    if sk.m != 1:
        raise ValueError("Rademacher estimation is for scalar-output classes")
    vals = np.zeros((pool, len(inputs)))
    for s in range(pool):
        params = sampler(seed + s)
        for i, x in enumerate(inputs):
            vals[s, i] = float(forward(sk, params, x, warn_norm=False).output[0])
    return vals
