"""Probabilist's Hermite machinery for neural activations.

Everything downstream (feature-map bound ledgers, local kernels, the
representor sum) is driven by Hermite transforms of *centered* activations
tau_bar(z; xi) = tau(xi + z) - tau(xi), plus three derived one-dimensional
objects:

* the magnitude function  sbar(z) = sum_k |a_k| ((1+z)^k - 1),
* the rectified activation  tauhat_eta(z; xi, xi') with its estimated
  convergence radius rho^2 and bound T^2,
* the closed-form geometric majorant absT_eta with radius rocT^2 and
  maximum absTmax^2.

All scalars are float64; series tolerances default to 1e-10 absolute.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import (
    DerivativeOrderError,
    OrderOverflowError,
    QuadratureConvergenceError,
    SeriesDivergenceError,
    SeriesDomainError,
)

SQRT_2PI = math.sqrt(2.0 * math.pi)
MAX_HERMITE_ORDER = 128
SERIES_ATOL = 1e-10

# rocT^2 is only constrained to be strictly below 1; fixed here once.
ROC_T_SQ = 0.99


# ---------------------------------------------------------------------------
# Hermite polynomials and numbers
# ---------------------------------------------------------------------------

def hermite_poly(k: int, zeta, max_order: int = MAX_HERMITE_ORDER):
    """He_k(zeta) by the stable three-term recurrence.

    Accepts scalars or arrays. Raises OrderOverflowError above max_order.
    """
    if k < 0:
        raise ValueError("Hermite order must be nonnegative")
    if k > max_order:
        raise OrderOverflowError(f"order {k} exceeds limit {max_order}")
    z = np.asarray(zeta, dtype=float)
    h_prev = np.ones_like(z)
    if k == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = z.copy()
    for j in range(1, k):
        h_prev, h = h, z * h - j * h_prev
    return h if h.ndim else float(h)


def hermite_poly_explicit(k: int, zeta: float, max_order: int = MAX_HERMITE_ORDER) -> float:
    """He_k by the explicit alternating sum; reference path for tests."""
    if k > max_order:
        raise OrderOverflowError(f"order {k} exceeds limit {max_order}")
    total = 0.0
    for p in range(k // 2 + 1):
        total += (
            (-1.0) ** p
            * zeta ** (k - 2 * p)
            / (2.0**p * math.factorial(p) * math.factorial(k - 2 * p))
        )
    return math.factorial(k) * total


def hermite_numbers(k_max: int) -> np.ndarray:
    """Hen_0..Hen_k_max, Hen_k = He_k(0); zero at odd k."""
    out = np.zeros(k_max + 1)
    out[0] = 1.0
    for k in range(2, k_max + 1, 2):
        # Hen_k = -(k-1) Hen_{k-2}
        out[k] = -(k - 1) * out[k - 2]
    return out


def hermite_number(k: int) -> float:
    if k % 2 == 1:
        return 0.0
    return float(hermite_numbers(k)[k])


def ln_abs_hermite_number(k: int) -> float:
    """ln |Hen_k|; -inf at odd k. Stable for large k."""
    if k % 2 == 1:
        return -math.inf
    m = k // 2
    return math.lgamma(k + 1) - math.lgamma(m + 1) - m * math.log(2.0)


def _ln_binom(k: int, l) -> np.ndarray:
    l = np.asarray(l, dtype=float)
    return special.gammaln(k + 1) - special.gammaln(l + 1) - special.gammaln(k - l + 1)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Activation:
    """A scalar activation with derivatives up to n_max.

    kind is one of 'relu', 'linear', 'polynomial', 'smooth'. For
    polynomials, coefficients are monomial (c[i] multiplies zeta^i) and
    derivatives vanish identically above the degree. ReLU's first
    derivative is fixed to 0 at the kink so backprop tests are
    deterministic.
    """

    kind: str
    fn: Callable = field(repr=False)
    deriv: Callable = field(repr=False)  # deriv(n, zeta)
    degree: Optional[int] = None
    n_max: int = 64
    coefficients: Optional[tuple] = None

    def __call__(self, zeta):
        return self.fn(np.asarray(zeta, dtype=float))

    def d(self, n: int, zeta):
        if n < 0:
            raise ValueError("derivative order must be nonnegative")
        if n == 0:
            return self(zeta)
        if n > self.n_max:
            raise DerivativeOrderError(
                f"derivative order {n} unavailable for kind={self.kind}"
            )
        return self.deriv(n, np.asarray(zeta, dtype=float))

    def at_zero(self) -> float:
        return float(self(0.0))

    def finite_energy(self, nodes: int = 160) -> bool:
        """Numerical check of the square-integrability assumption."""
        x, w = np.polynomial.hermite.hermgauss(nodes)
        val = float(np.sum(w * self(x) ** 2))
        return math.isfinite(val)


def _relu():
    def deriv(n, z):
        if n == 1:
            return (z > 0).astype(float)
        return np.zeros_like(z)

    return Activation(kind="relu", fn=lambda z: np.maximum(z, 0.0), deriv=deriv)


def _linear():
    def deriv(n, z):
        if n == 1:
            return np.ones_like(z)
        return np.zeros_like(z)

    return Activation(kind="linear", fn=lambda z: z, deriv=deriv,
                      degree=1, coefficients=(0.0, 1.0))


def polynomial_activation(coefficients) -> Activation:
    coeffs = tuple(float(c) for c in coefficients)
    deg = max((i for i, c in enumerate(coeffs) if c != 0.0), default=0)

    def fn(z):
        return np.polynomial.polynomial.polyval(z, coeffs)

    def deriv(n, z):
        d = np.polynomial.polynomial.polyder(coeffs, n) if n <= deg else [0.0]
        return np.polynomial.polynomial.polyval(z, d)

    return Activation(kind="polynomial", fn=fn, deriv=deriv,
                      degree=deg, coefficients=coeffs)


def smooth_activation(fn, deriv, n_max: int = 8) -> Activation:
    """Wrap user-supplied tau and tau^(n) evaluators (n <= n_max)."""
    return Activation(kind="smooth", fn=fn, deriv=deriv, n_max=n_max)


_CATALOG_CACHE: dict = {}


def get_activation(spec_id: str) -> Activation:
    """Resolve a catalog id: 'relu', 'linear', or 'poly:[c0,c1,...]'."""
    if spec_id in _CATALOG_CACHE:
        return _CATALOG_CACHE[spec_id]
    if spec_id == "relu":
        act = _relu()
    elif spec_id == "linear":
        act = _linear()
    elif spec_id.startswith("poly:"):
        act = polynomial_activation(json.loads(spec_id[len("poly:"):]))
    else:
        raise ValueError(f"unknown activation id {spec_id!r}")
    _CATALOG_CACHE[spec_id] = act
    return act


# ---------------------------------------------------------------------------
# Hermite transforms of centered activations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HermiteExpansion:
    """Truncated Hermite coefficients of tau_bar(.; xi) with tail estimate."""

    center: float
    coefficients: np.ndarray
    order: int
    tail_l2: float

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=float)
        if not np.all(np.isfinite(a)):
            raise SeriesDivergenceError("non-finite Hermite coefficient")
        a.setflags(write=False)
        object.__setattr__(self, "coefficients", a)


def _hermite_monomial_table(d: int) -> np.ndarray:
    """T[k, j] = coefficient of zeta^j in He_k, for k, j <= d."""
    T = np.zeros((d + 1, d + 1))
    T[0, 0] = 1.0
    if d >= 1:
        T[1, 1] = 1.0
    for k in range(1, d):
        # He_{k+1} = z He_k - k He_{k-1}
        T[k + 1, 1:] += T[k, :-1]
        T[k + 1, :] -= k * T[k - 1, :]
    return T


def monomials_to_hermite(mono: np.ndarray) -> np.ndarray:
    """Convert monomial coefficients to He-basis coefficients exactly."""
    d = len(mono) - 1
    T = _hermite_monomial_table(d)
    a = np.zeros(d + 1)
    residual = np.array(mono, dtype=float)
    for k in range(d, -1, -1):
        a[k] = residual[k]  # He_k is monic
        residual -= a[k] * T[k]
    return a


def _poly_centered_coeffs(act: Activation, xi: float, K: int) -> np.ndarray:
    """Exact coefficients of tau_bar(.; xi) for a polynomial activation."""
    c = np.asarray(act.coefficients, dtype=float)
    d = act.degree
    mono = np.zeros(d + 1)
    for i in range(1, d + 1):
        if c[i] == 0.0:
            continue
        for l in range(1, i + 1):
            mono[l] += c[i] * math.comb(i, l) * xi ** (i - l)
    a = monomials_to_hermite(mono)
    out = np.zeros(K + 1)
    out[: min(K, d) + 1] = a[: min(K, d) + 1]
    return out


def _relu_centered_coeffs(xi: float, K: int) -> np.ndarray:
    """Closed-form ReLU coefficients at center xi, valid for either sign.

    k=0,1 via erfc; k>=2 via the integrated-by-parts form with the
    normalized physicist-Hermite recurrence c_k = H_k(x) / (sqrt(2)^k k!).
    """
    x = -xi / math.sqrt(2.0)
    a = np.zeros(K + 1)
    a[0] = (
        math.exp(-xi * xi / 2.0) / SQRT_2PI
        + (xi / 2.0) * special.erfc(x)
        - max(xi, 0.0)
    )
    if K >= 1:
        a[1] = 0.5 * special.erfc(x)
    if K >= 2:
        c = np.zeros(K + 1)
        c[0] = 1.0
        c[1] = math.sqrt(2.0) * x
        for k in range(1, K):
            c[k + 1] = (math.sqrt(2.0) * x * c[k] - c[k - 1]) / (k + 1)
        pref = math.exp(-xi * xi / 2.0) / SQRT_2PI
        for k in range(2, K + 1):
            a[k] = pref * (c[k] + c[k - 2] / (k - 1) + xi * c[k - 1] / k)
    return a


def _quadrature_coeffs(act: Activation, xi: float, K: int,
                       nodes: int = 200, rtol: float = 1e-9) -> np.ndarray:
    """Gauss-Hermite transform with node-doubling convergence check."""

    def compute(n):
        u, w = np.polynomial.hermite.hermgauss(n)
        z = math.sqrt(2.0) * u
        tbar = act(xi + z) - act(np.array(xi))
        vals = np.zeros(K + 1)
        he_prev = np.ones_like(z)
        he = z.copy()
        for k in range(K + 1):
            hk = he_prev if k == 0 else he
            vals[k] = math.sqrt(2.0) * float(np.sum(w * tbar * hk)) / (
                SQRT_2PI * math.exp(math.lgamma(k + 1))
            )
            if k >= 1:
                he_prev, he = he, z * he - k * he_prev
        return vals

    a1 = compute(nodes)
    a2 = compute(2 * nodes)
    scale = np.maximum(1.0, np.abs(a2))
    if np.max(np.abs(a1 - a2) / scale) > rtol:
        raise QuadratureConvergenceError(
            f"Gauss-Hermite transform not converged at {nodes}->{2*nodes} nodes"
        )
    return a2


def _tail_l2(coeffs: np.ndarray) -> float:
    """Weighted-L2 proxy for the dropped tail from the last computed terms."""
    K = len(coeffs) - 1
    lo = max(1, K - max(3, K // 10))
    total = 0.0
    for k in range(lo, K + 1):
        if coeffs[k] != 0.0:
            total += math.exp(math.lgamma(k + 1) + 2.0 * math.log(abs(coeffs[k])))
    return math.sqrt(total)


def hermite_transform(act: Activation, xi: float, K: int,
                      nodes: int = 200) -> HermiteExpansion:
    """Coefficients a_(xi)k of the centered activation, k = 0..K."""
    if K < 1:
        raise ValueError("truncation order must be >= 1")
    if act.kind == "linear":
        a = np.zeros(K + 1)
        a[1] = 1.0
    elif act.kind == "polynomial":
        a = _poly_centered_coeffs(act, xi, K)
    elif act.kind == "relu":
        a = _relu_centered_coeffs(xi, K)
    else:
        a = _quadrature_coeffs(act, xi, K, nodes=nodes)
    return HermiteExpansion(center=float(xi), coefficients=a, order=K,
                            tail_l2=_tail_l2(a))


def relu_coeffs_at_centers(xis: np.ndarray, K: int) -> np.ndarray:
    """Vectorized closed-form ReLU coefficients; shape (len(xis), K+1)."""
    xis = np.asarray(xis, dtype=float)
    x = -xis / math.sqrt(2.0)
    a = np.zeros((xis.size, K + 1))
    a[:, 0] = np.exp(-xis**2 / 2) / SQRT_2PI + (xis / 2) * special.erfc(x) \
        - np.maximum(xis, 0.0)
    if K >= 1:
        a[:, 1] = 0.5 * special.erfc(x)
    if K >= 2:
        c = np.zeros((xis.size, K + 1))
        c[:, 0] = 1.0
        c[:, 1] = math.sqrt(2.0) * x
        for k in range(1, K):
            c[:, k + 1] = (math.sqrt(2.0) * x * c[:, k] - c[:, k - 1]) / (k + 1)
        pref = np.exp(-xis**2 / 2) / SQRT_2PI
        for k in range(2, K + 1):
            a[:, k] = pref * (c[:, k] + c[:, k - 2] / (k - 1) + xis * c[:, k - 1] / k)
    return a


def poly_coeffs_at_centers(act: Activation, xis: np.ndarray, K: int) -> np.ndarray:
    """Vectorized exact centered coefficients for polynomial activations."""
    xis = np.asarray(xis, dtype=float)
    c = np.asarray(act.coefficients, dtype=float)
    d = act.degree
    mono = np.zeros((xis.size, d + 1))
    for i in range(1, d + 1):
        if c[i] == 0.0:
            continue
        for l in range(1, i + 1):
            mono[:, l] += c[i] * math.comb(i, l) * xis ** (i - l)
    T = _hermite_monomial_table(d)
    a = np.zeros((xis.size, d + 1))
    residual = mono.copy()
    for k in range(d, -1, -1):
        a[:, k] = residual[:, k]
        residual -= np.outer(a[:, k], T[k])
    out = np.zeros((xis.size, K + 1))
    out[:, : min(K, d) + 1] = a[:, : min(K, d) + 1]
    return out


def coeffs_at_centers(act: Activation, xis: np.ndarray, K: int) -> np.ndarray:
    """Centered-transform coefficients for a batch of centers."""
    if act.kind in ("linear", "polynomial"):
        return poly_coeffs_at_centers(act if act.kind == "polynomial" else
                                      polynomial_activation((0.0, 1.0)), xis, K)
    if act.kind == "relu":
        return relu_coeffs_at_centers(xis, K)
    return np.stack([
        hermite_transform(act, float(x), K).coefficients for x in np.asarray(xis)
    ])


# ---------------------------------------------------------------------------
# Series evaluation
# ---------------------------------------------------------------------------

def reconstruct(exp: HermiteExpansion, zeta) -> float:
    """Truncated series sum_{k<=K} a_k He_k(zeta)."""
    z = np.asarray(zeta, dtype=float)
    a = exp.coefficients
    total = a[0] * np.ones_like(z)
    h_prev = np.ones_like(z)
    h = z.copy()
    for k in range(1, exp.order + 1):
        total = total + a[k] * h
        h_prev, h = h, z * h - k * h_prev
    return total if total.ndim else float(total)


def polynomial_form_eval(coeffs: np.ndarray, zeta) -> np.ndarray:
    """sum_{k>=1} a_k sum_{l=1}^k C(k,l) Hen_{k-l} zeta^l for batched a.

    coeffs has shape (..., K+1); the polynomial form of the centered
    expansion (He additivity) used by the delta recursions.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    K = coeffs.shape[-1] - 1
    hen = hermite_numbers(K)
    # poly[..., l] = sum_k a_k C(k,l) Hen_{k-l}
    ks = np.arange(K + 1)
    C = np.zeros((K + 1, K + 1))
    for k in range(1, K + 1):
        ls = np.arange(1, k + 1)
        C[k, 1:k + 1] = np.exp(_ln_binom(k, ls)) * hen[(k - ls)]
    poly = coeffs @ C  # (..., l)
    z = np.asarray(zeta, dtype=float)
    out = np.zeros(np.broadcast_shapes(poly.shape[:-1], z.shape))
    zp = np.ones_like(z)
    for l in range(1, K + 1):
        zp = zp * z
        out = out + poly[..., l] * zp
    return out


def centered_series_eval(coeffs, v, return_tail: bool = False):
    """sum_{k>=1} a_k (He_k(v) - Hen_k), batched over leading axes.

    This is the He-ordered evaluation of the centered expansion at v
    (identical, by Hermite additivity, to the double sum over (k,l) --
    but the double sum must not be rearranged into powers of v, whose
    coefficients diverge for kink activations). coeffs has shape
    (..., K+1) broadcastable against v.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    K = coeffs.shape[-1] - 1
    v = np.asarray(v, dtype=float)
    hen = hermite_numbers(K)
    total = np.zeros(np.broadcast_shapes(coeffs.shape[:-1], v.shape))
    h_prev = np.ones_like(v)
    h = v.copy()
    tail = np.zeros_like(total)
    for k in range(1, K + 1):
        term = coeffs[..., k] * (h - hen[k])
        total = total + term
        if k > K - 4:
            tail = np.maximum(tail, np.abs(term))
        h_prev, h = h, v * h - k * h_prev
    if return_tail:
        return total, tail
    return total


def derivative_series_eval(exp: HermiteExpansion, n: int, x) -> float:
    """n-th derivative of the expansion via the index-shift identity.

    f^(n)(x) = sum_k ((k+n)!/k!) a_{k+n} He_k(x).
    """
    a = exp.coefficients
    K = exp.order
    if n > K:
        return 0.0 * np.asarray(x, dtype=float)
    shifted = np.array([
        a[k + n] * math.exp(math.lgamma(k + n + 1) - math.lgamma(k + 1))
        for k in range(K - n + 1)
    ])
    sub = HermiteExpansion(center=exp.center, coefficients=shifted,
                           order=K - n, tail_l2=0.0)
    return reconstruct(sub, x)


# ---------------------------------------------------------------------------
# Magnitude function
# ---------------------------------------------------------------------------

def magnitude_fn(exp: HermiteExpansion, zeta) -> float:
    """sbar(zeta) = sum_k |a_k| ((1+zeta)^k - 1), zeta >= 0."""
    z = np.asarray(zeta, dtype=float)
    if np.any(z < 0):
        raise SeriesDomainError("magnitude function requires zeta >= 0")
    a = np.abs(exp.coefficients)
    lp = np.log1p(z)  # (1+z)^k - 1 = expm1(k log1p(z)), exact for tiny z
    total = np.zeros_like(z)
    for k in range(1, exp.order + 1):
        if a[k] != 0.0:
            total = total + a[k] * np.expm1(k * lp)
    return total if total.ndim else float(total)


def magnitude_relu_closed(zeta) -> float:
    """Closed form of the ReLU magnitude function (erfi expression)."""
    z = np.asarray(zeta, dtype=float)
    r2 = math.sqrt(2.0)
    out = (
        0.5 * z * (special.erfi((1.0 + z) / r2) + 1.0)
        + (np.exp(0.5) - np.exp(0.5 * (1.0 + z) ** 2)) / SQRT_2PI
        + 0.5 * (special.erfi((1.0 + z) / r2) - special.erfi(1.0 / r2))
    )
    return out if out.ndim else float(out)


def magnitude_fn_inverse(exp: HermiteExpansion, y: float,
                         tol: float = SERIES_ATOL) -> float:
    """The unique zeta >= 0 with sbar(zeta) = y, by bracketed bisection."""
    if y < 0:
        raise SeriesDomainError("magnitude inverse requires y >= 0")
    if y == 0.0:
        return 0.0
    hi = 1.0
    for _ in range(200):
        if magnitude_fn(exp, hi) >= y:
            break
        hi *= 2.0
    else:
        raise SeriesDomainError(
            f"target {y} unreachable by truncated magnitude function")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = magnitude_fn(exp, mid)
        if abs(val - y) <= tol:
            return mid
        if val < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Rectified activation, envelope, profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RectifiedProfile:
    """Estimated convergence radius and bound of a rectified activation."""

    eta: float
    radius_sq: float
    bound_sq: float
    center: Optional[float] = None
    center2: Optional[float] = None
    omega: Optional[float] = None

    def __post_init__(self):
        if not (self.radius_sq > 0):
            raise SeriesDomainError("profile radius must be positive")


def _ln_abs(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(values))


def rectified_series(coeffs1: np.ndarray, coeffs2: np.ndarray,
                     eta: float, zeta: float, absolute: bool = False) -> float:
    """tauhat_eta(zeta; xi, xi') by the truncated double sum.

    Terms are assembled in log space; binomials and Hermite numbers
    overflow float64 well before the assembled terms do. With
    absolute=True all terms enter with positive sign (the majorant used
    for profile bounds of sign-mixed center pairs).
    """
    K = len(coeffs1) - 1
    hen_ln = np.array([ln_abs_hermite_number(i) for i in range(K + 1)])
    ln_eta = math.log(eta)
    z = float(zeta)
    ln_z = -math.inf if z == 0.0 else math.log(abs(z))
    sign_z = 1.0 if z >= 0 else -1.0
    la1, la2 = _ln_abs(coeffs1), _ln_abs(coeffs2)
    total = 0.0
    for k in range(1, K + 1):
        if coeffs1[k] == 0.0 or coeffs2[k] == 0.0:
            continue
        sign_a = math.copysign(1.0, coeffs1[k]) * math.copysign(1.0, coeffs2[k])
        ls = np.arange(1, k + 1)
        lt = (la1[k] + la2[k] - 2 * k * ln_eta
              + 2 * _ln_binom(k, ls) + 2 * hen_ln[k - ls] + ls * ln_z)
        if np.any(lt > 700.0):
            raise SeriesDivergenceError(
                "rectified series term overflow; argument outside radius")
        if absolute:
            signs = 1.0
        else:
            signs = sign_a * np.where(ls % 2 == 0, 1.0, sign_z)
        total += float(np.sum(signs * np.exp(lt)))
    return total


def rectified_activation(exp1: HermiteExpansion, exp2: HermiteExpansion,
                         eta: float, zeta: float,
                         radius_check: bool = True) -> float:
    """tauhat_eta(zeta; xi, xi') with a per-call radius check."""
    if not (0.0 < eta < 1.0):
        raise ValueError("eta must lie in (0,1)")
    if radius_check:
        rho_sq = pair_radius_sq(exp1.coefficients, exp2.coefficients, eta)
        if abs(zeta) > rho_sq * (1 + 1e-12):
            raise SeriesDomainError(
                f"zeta={zeta} outside estimated radius {rho_sq}")
    return rectified_series(exp1.coefficients, exp2.coefficients, eta, zeta)


def radius_estimate(coeffs: np.ndarray, eta: float) -> float:
    """Window-min estimate of the convergence scale L for one center.

    min over k in [K/2, K] (nonzero a_k; falls back to all nonzero k) of
    -(1/sqrt(2k+1)) ln(|a_k| / eta^k). Returns +inf for the zero function.
    """
    K = len(coeffs) - 1
    nz = [k for k in range(1, K + 1) if coeffs[k] != 0.0]
    if not nz:
        return math.inf
    window = [k for k in nz if k >= (K + 1) // 2] or nz
    vals = [-(math.log(abs(coeffs[k])) - k * math.log(eta)) / math.sqrt(2 * k + 1)
            for k in window]
    return min(vals)


def pair_radius_sq(coeffs1: np.ndarray, coeffs2: np.ndarray, eta: float) -> float:
    l1 = radius_estimate(coeffs1, eta)
    l2 = radius_estimate(coeffs2, eta)
    L = min(l1, l2)
    if math.isinf(L):
        return math.inf
    return L * L


def _golden_max(fn, lo: float, hi: float, iters: int = 40):
    """Golden-section refinement of a 1-D maximum on [lo, hi]."""
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = fn(d)
    xm = 0.5 * (a + b)
    return xm, fn(xm)


def _grid_then_golden_max(fn, lo: float, hi: float, grid: int = 101):
    xs = np.linspace(lo, hi, grid)
    vals = np.array([fn(x) for x in xs])
    i = int(np.argmax(vals))
    a = xs[max(0, i - 1)]
    b = xs[min(grid - 1, i + 1)]
    if a == b:
        return xs[i], vals[i]
    xm, vm = _golden_max(fn, a, b)
    if vm >= vals[i]:
        return xm, vm
    return xs[i], vals[i]


def estimate_profile(act: Activation, eta: float, xi: float = None,
                     xi2: float = None, omega: float = None,
                     K: int = 60) -> RectifiedProfile:
    """Radius/bound estimate for a center pair or an envelope half-width."""
    if not (0.0 < eta < 1.0):
        raise ValueError("eta must lie in (0,1)")
    if omega is None:
        if xi is None:
            raise ValueError("supply either (xi, xi2) or omega")
        xi2 = xi if xi2 is None else xi2
        c1 = hermite_transform(act, xi, K).coefficients
        c2 = hermite_transform(act, xi2, K).coefficients
        rho_sq = pair_radius_sq(c1, c2, eta)
        if math.isinf(rho_sq):
            return RectifiedProfile(eta=eta, radius_sq=math.inf, bound_sq=0.0,
                                    center=xi, center2=xi2)
        t_sq = rectified_series(c1, c2, eta, rho_sq, absolute=True)
        return RectifiedProfile(eta=eta, radius_sq=rho_sq, bound_sq=t_sq,
                                center=xi, center2=xi2)
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    if omega == 0.0:
        p = estimate_profile(act, eta, xi=0.0, xi2=0.0, K=K)
        return RectifiedProfile(eta=eta, radius_sq=p.radius_sq,
                                bound_sq=p.bound_sq, omega=0.0)
    coeff_cache: dict = {}

    def coeffs(x):
        key = round(float(x), 15)
        if key not in coeff_cache:
            coeff_cache[key] = hermite_transform(act, key, K).coefficients
        return coeff_cache[key]

    # envelope radius: infimum over centers of the per-center estimate
    def neg_radius(x):
        return -radius_estimate(coeffs(x), eta)

    xr, neg_l = _grid_then_golden_max(neg_radius, -omega, omega)
    L = -neg_l
    if math.isinf(L):
        return RectifiedProfile(eta=eta, radius_sq=math.inf, bound_sq=0.0,
                                omega=omega)
    rho_sq = L * L

    def value(x):
        return rectified_series(coeffs(x), coeffs(x), eta, rho_sq)

    _, t_sq = _grid_then_golden_max(value, -omega, omega)
    return RectifiedProfile(eta=eta, radius_sq=rho_sq, bound_sq=t_sq,
                            omega=omega)


def rectified_envelope(act: Activation, eta: float, omega: float, zeta: float,
                       K: int = 60) -> float:
    """sup over |xi| <= omega of tauhat_eta(zeta; xi, xi), by grid + golden."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    if omega == 0.0:
        e0 = hermite_transform(act, 0.0, K)
        return rectified_activation(e0, e0, eta, zeta, radius_check=False)

    def value(x):
        c = hermite_transform(act, float(x), K).coefficients
        return rectified_series(c, c, eta, zeta)

    _, v = _grid_then_golden_max(value, -omega, omega)
    return v


# ---------------------------------------------------------------------------
# absT family
# ---------------------------------------------------------------------------

def roc_t(eta: float) -> float:
    """Radius of the absT series (non-squared); rocT^2 = 0.99 by decision."""
    return math.sqrt(ROC_T_SQ)


def abs_t(eta: float, zeta: float) -> float:
    """absT_eta(zeta) = (z/(1-z)) (eta^2/(1-eta^2) - z eta^2/(1-z eta^2))."""
    if not (0.0 < eta < 1.0):
        raise ValueError("eta must lie in (0,1)")
    if abs(zeta) >= ROC_T_SQ:
        raise SeriesDomainError(f"|zeta|={abs(zeta)} outside rocT^2={ROC_T_SQ}")
    if zeta == 0.0:
        return 0.0
    e2 = eta * eta
    return (zeta / (1.0 - zeta)) * (e2 / (1.0 - e2) - zeta * e2 / (1.0 - zeta * e2))


def abs_t_max(eta: float) -> float:
    """absTmax_eta (non-squared): absT evaluated at the radius rocT^2."""
    e2 = eta * eta
    r = ROC_T_SQ
    val = (r / (1.0 - r)) * (e2 / (1.0 - e2) - e2 * r / (1.0 - e2 * r))
    return math.sqrt(val)


def abs_t_inverse(eta: float, y: float, tol: float = SERIES_ATOL) -> float:
    """Inverse of absT on [0, rocT^2) by bisection."""
    if y < 0 or y > abs_t_max(eta) ** 2:
        raise SeriesDomainError(
            f"target {y} outside [0, absTmax^2={abs_t_max(eta)**2}]")
    if y == 0.0:
        return 0.0
    lo, hi = 0.0, ROC_T_SQ * (1 - 1e-15)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = abs_t(eta, mid)
        if abs(val - y) <= tol:
            return mid
        if val < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def coefficient_table_csv(exp: HermiteExpansion) -> str:
    lines = ["k,a_k"]
    for k, a in enumerate(exp.coefficients):
        lines.append(f"{k},{float(a)!r}")
    return "\n".join(lines) + "\n"
