"""Finite-width NNGP, NTK and LiNK kernels over actual forward traces.

All expectations are empirical averages over units/antecedents of the
stored traces; nothing here takes an infinite-width limit. The LiNK comes
in two routes: the rectified-activation series (link_rect) and its
derivative power-series form (link_deriv), which agree as eta -> 1 on
low-degree polynomial networks.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import hermite
from .errors import DerivativeOrderError, SeriesDomainError
from .global_dual import _edge_order
from .local_dual import StepSpec, compute_local_ledger, edge_profiles
from .netgraph import Edge, Parameters, Skeleton, WeightBoundSpec, forward


@dataclass
class KernelContext:
    """Shared read-only state for kernel evaluations.

    The LiNK normalizers (profiles, psi_check) are built lazily so that
    NNGP/NTK evaluation never touches the local-ledger machinery, whose
    recursion only converges for small steps on shallow networks.
    """

    sk: Skeleton
    params: Parameters
    spec: WeightBoundSpec
    step: StepSpec
    K: Optional[int] = None
    Q: int = 8
    _profiles: Optional[Dict[Edge, hermite.RectifiedProfile]] = \
        field(default=None, repr=False)
    _psi_check_sq: Optional[Dict[Edge, float]] = field(default=None, repr=False)
    _trace_cache: dict = field(default_factory=dict, repr=False)

    @property
    def profiles(self) -> Dict[Edge, hermite.RectifiedProfile]:
        if self._profiles is None:
            self._profiles = edge_profiles(self.sk, self.step, self.K)
        return self._profiles

    @property
    def psi_check_sq(self) -> Dict[Edge, float]:
        if self._psi_check_sq is None:
            ledger = compute_local_ledger(self.sk, self.spec, self.step,
                                          self.K, profiles=self.profiles)
            vals = dict(ledger.edge_psi_delta_sq)
            for (a, j), v in vals.items():
                # the input edge's normalizer multiplies an identically-zero
                # term (K^[-1] = 0, tauhat(0) = 0), so 0 is fine there
                if a >= 0 and v <= 0.0:
                    raise ValueError(
                        f"edge {(a, j)}: psi_check_delta = 0 (zero step "
                        "spec); the LiNK normalizer is undefined")
            self._psi_check_sq = vals
        return self._psi_check_sq

    def trace(self, x: np.ndarray):
        key = np.asarray(x, dtype=float).tobytes()
        if key not in self._trace_cache:
            self._trace_cache[key] = forward(self.sk, self.params, x,
                                             warn_norm=False)
        return self._trace_cache[key]


# ---------------------------------------------------------------------------
# NNGP
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NngpResult:
    value: float
    per_node: Tuple[float, ...]
    per_edge: Dict[Edge, float]


def nngp(ctx: KernelContext, x: np.ndarray, x2: np.ndarray) -> NngpResult:
    """Empirical NNGP: Sigma^[a,j] = gamma^2 + mean_i xc_i xc'_i."""
    sk = ctx.sk
    t1, t2 = ctx.trace(x), ctx.trace(x2)
    g2 = sk.gamma ** 2
    per_edge = {}
    per_node = []
    for j in range(sk.D):
        vals = []
        for a in sk.antecedents[j]:
            e = (a, j)
            per_edge[e] = g2 + float(np.mean(t1.post[e] * t2.post[e]))
            vals.append(per_edge[e])
        per_node.append(sum(vals) / len(vals))
    return NngpResult(value=per_node[-1], per_node=tuple(per_node),
                      per_edge=per_edge)


# ---------------------------------------------------------------------------
# NTK
# ---------------------------------------------------------------------------

def ntk(ctx: KernelContext, x: np.ndarray, x2: np.ndarray) -> float:
    """K^[j] = mean_a [ Sigma^[a,j] + theta^[a,j] K^[a] ], K^[-1] = 0,
    theta^[a,j] = mean_i tau'(xhat_i) tau'(xhat'_i)."""
    sk = ctx.sk
    t1, t2 = ctx.trace(x), ctx.trace(x2)
    sig = nngp(ctx, x, x2).per_edge
    K_node = {-1: 0.0}
    for j in range(sk.D):
        total = 0.0
        for a in sk.antecedents[j]:
            act = sk.activation((a, j))
            th = float(np.mean(act.d(1, t1.pre_at(a)) * act.d(1, t2.pre_at(a))))
            total += sig[(a, j)] + th * K_node[a]
        K_node[j] = total / sk.in_degree(j)
    return K_node[sk.D - 1]


# ---------------------------------------------------------------------------
# LiNK
# ---------------------------------------------------------------------------

def link_rect(ctx: KernelContext, x: np.ndarray, x2: np.ndarray) -> float:
    """LiNK by the rectified-activation route with per-unit centers."""
    sk = ctx.sk
    t1, t2 = ctx.trace(x), ctx.trace(x2)
    sig = nngp(ctx, x, x2).per_edge
    g2 = sk.gamma ** 2
    eta = ctx.step.eta
    K_node = {-1: 0.0}
    for j in range(sk.D):
        total = 0.0
        for a in sk.antecedents[j]:
            e = (a, j)
            act = sk.activation(e)
            order = _edge_order(act, ctx.K)
            prof = ctx.profiles[e]
            arg = prof.radius_sq / (g2 + 1.0) * K_node[a]
            if not math.isfinite(arg) or abs(arg) > prof.radius_sq * (1 + 1e-12):
                raise SeriesDomainError(
                    f"edge {e}: recursive argument {arg} outside estimated "
                    f"radius {prof.radius_sq}")
            if K_node[a] == 0.0:
                rect_term = 0.0  # tauhat(0) = 0; no normalizer needed
            else:
                c1 = hermite.coeffs_at_centers(act, t1.pre_at(a), order)
                c2 = hermite.coeffs_at_centers(act, t2.pre_at(a), order)
                vals = [hermite.rectified_series(c1[i], c2[i], eta, arg)
                        for i in range(c1.shape[0])]
                rect_term = float(np.mean(vals)) / math.sqrt(ctx.psi_check_sq[e])
            total += sig[e] / ctx.step.omega[e] ** 2 + rect_term
        K_node[j] = g2 + total / sk.in_degree(j)
    return K_node[sk.D - 1]


def link_deriv(ctx: KernelContext, x: np.ndarray, x2: np.ndarray,
               Q: Optional[int] = None, unit_scales: bool = False) -> float:
    """LiNK by the derivative power series, truncated at order Q.

    theta_q = mean_i (1/q!) tau^(q)(xhat_i) (1/q!) tau^(q)(xhat'_i).
    With unit_scales=True the factors rho^2/(gamma^2+1), 1/omega^2 and
    1/psi_check are all replaced by 1, which reduces the q=1 truncation to
    the NTK recursion on the same traces.
    """
    sk = ctx.sk
    Q = ctx.Q if Q is None else Q
    t1, t2 = ctx.trace(x), ctx.trace(x2)
    sig = nngp(ctx, x, x2).per_edge
    g2 = sk.gamma ** 2
    K_node = {-1: 0.0}
    for j in range(sk.D):
        total = 0.0
        for a in sk.antecedents[j]:
            e = (a, j)
            act = sk.activation(e)
            q_hi = Q
            if act.kind in ("linear", "polynomial"):
                q_hi = min(Q, act.degree)
            elif Q > act.n_max:
                raise DerivativeOrderError(
                    f"edge {e}: derivative order {Q} beyond n_max={act.n_max}")
            scale = 1.0 if unit_scales else \
                ctx.profiles[e].radius_sq / (g2 + 1.0)
            series = 0.0
            if K_node[a] != 0.0:
                for q in range(1, q_hi + 1):
                    fq = math.factorial(q)
                    th = float(np.mean(act.d(q, t1.pre_at(a))
                                       * act.d(q, t2.pre_at(a)))) / (fq * fq)
                    series += th * (scale * K_node[a]) ** q
                psn = 1.0 if unit_scales else math.sqrt(ctx.psi_check_sq[e])
                series = series / psn
            om = 1.0 if unit_scales else ctx.step.omega[e] ** 2
            total += sig[e] / om + series
        K_node[j] = g2 + total / sk.in_degree(j)
    return K_node[sk.D - 1]


# ---------------------------------------------------------------------------
# Gram matrices
# ---------------------------------------------------------------------------

KERNEL_KINDS = ("nngp", "ntk", "link_rect", "link_deriv")


@dataclass(frozen=True)
class GramMatrix:
    kind: str
    values: np.ndarray
    min_eigenvalue: float
    psd_ok: bool
    notes: Tuple[str, ...] = ()

    def to_csv(self) -> str:
        lines = []
        for row in self.values:
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "n": int(self.values.shape[0]),
            "min_eigenvalue": self.min_eigenvalue,
            "psd_ok": self.psd_ok,
            "notes": list(self.notes),
            "values": [[float(v) for v in row] for row in self.values],
        }, sort_keys=True, indent=2)


def _kernel_fn(ctx: KernelContext, kind: str):
    if kind == "nngp":
        return lambda a, b: nngp(ctx, a, b).value
    if kind == "ntk":
        return lambda a, b: ntk(ctx, a, b)
    if kind == "link_rect":
        return lambda a, b: link_rect(ctx, a, b)
    if kind == "link_deriv":
        return lambda a, b: link_deriv(ctx, a, b)
    raise ValueError(f"unknown kernel kind {kind!r}")


def gram(ctx: KernelContext, kind: str, inputs, psd_tol: float = 1e-8) -> GramMatrix:
    """Pairwise kernel evaluation over the upper triangle (mirrored)."""
    inputs = [np.asarray(v, dtype=float) for v in inputs]
    if not inputs:
        raise ValueError("need at least one input")
    fn = _kernel_fn(ctx, kind)
    n = len(inputs)
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    threads = int(os.environ.get("NK_THREADS", "1"))
    G = np.zeros((n, n))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(lambda p: fn(inputs[p[0]], inputs[p[1]]), pairs))
    else:
        vals = [fn(inputs[i], inputs[j]) for i, j in pairs]
    for (i, j), v in zip(pairs, vals):
        G[i, j] = G[j, i] = v
    eigs = np.linalg.eigvalsh(G)
    min_eig = float(eigs[0])
    trace = float(np.trace(G))
    psd_ok = min_eig >= -psd_tol * max(trace, 1.0)
    notes = ()
    if not psd_ok:
        msg = (f"gram[{kind}] PSD violation: min eig {min_eig:.3e} vs trace "
               f"{trace:.3e}; truncation/radius issue likely")
        warnings.warn(msg, stacklevel=2)
        notes = (msg,)
    return GramMatrix(kind=kind, values=G, min_eigenvalue=min_eig,
                      psd_ok=psd_ok, notes=notes)
