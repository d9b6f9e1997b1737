"""Global feature-map bound recursion, exact dual evaluation, and the
global Rademacher bounds.

The ledger carries, per edge, the free parameter phi_check^2, the derived
lower value phi_check_down^2, the weight-side bound psi_check^2 and the
operator-norm-style bound psi_check_tilde^2; per node, the four hatted
analogues. The recursion is driven entirely by the magnitude function of
each edge activation and its inverse.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import hermite
from .errors import SeriesDivergenceError, SeriesDomainError
from .netgraph import Edge, Parameters, Skeleton, WeightBoundSpec

DEFAULT_ORDER = {"relu": 80, "linear": 8, "polynomial": 16, "smooth": 60}


def _edge_order(act: hermite.Activation, K: Optional[int]) -> int:
    if K is not None:
        return K
    if act.kind == "polynomial":
        return max(act.degree + 1, 2)
    return DEFAULT_ORDER.get(act.kind, 60)


@dataclass(frozen=True)
class GlobalBoundLedger:
    edge_phi_sq: Dict[Edge, float]
    edge_phi_down_sq: Dict[Edge, float]
    edge_psi_sq: Dict[Edge, float]
    edge_psi_tilde_sq: Dict[Edge, float]
    node_phi_sq: Tuple[float, ...]
    node_phi_down_sq: Tuple[float, ...]
    node_psi_sq: Tuple[float, ...]
    node_psi_tilde_sq: Tuple[float, ...]
    bias_offset: Tuple[float, ...]

    @property
    def phi_final(self) -> float:
        return math.sqrt(self.node_phi_sq[-1])

    @property
    def phi_down_final(self) -> float:
        return math.sqrt(self.node_phi_down_sq[-1])

    @property
    def psi_final(self) -> float:
        return math.sqrt(self.node_psi_sq[-1])

    @property
    def psi_tilde_final(self) -> float:
        return math.sqrt(self.node_psi_tilde_sq[-1])

    def to_json(self) -> str:
        def edge_map(d):
            return {f"{a}->{j}": v for (a, j), v in sorted(d.items())}

        return json.dumps({
            "edges": {
                "phi_sq": edge_map(self.edge_phi_sq),
                "phi_down_sq": edge_map(self.edge_phi_down_sq),
                "psi_sq": edge_map(self.edge_psi_sq),
                "psi_tilde_sq": edge_map(self.edge_psi_tilde_sq),
            },
            "nodes": {
                "phi_sq": list(self.node_phi_sq),
                "phi_down_sq": list(self.node_phi_down_sq),
                "psi_sq": list(self.node_psi_sq),
                "psi_tilde_sq": list(self.node_psi_tilde_sq),
                "bias_offset": list(self.bias_offset),
            },
            "final": {
                "phi": self.phi_final, "phi_down": self.phi_down_final,
                "psi": self.psi_final, "psi_tilde": self.psi_tilde_final,
            },
        }, sort_keys=True, indent=2)


def _psi_tilde_sup(act: hermite.Activation, exp: hermite.HermiteExpansion,
                   inv_phi: float, gamma: float, phi_lo: float, phi_hi: float,
                   psi_tilde_prev: float, grid: int = 41) -> float:
    """sup over the box [phi_lo,phi_hi] x [-pt,pt] of tau(phi t)^2 / sbar(...)

    evaluated on a grid with one golden-section refinement pass per axis.
    """
    scale = inv_phi / (gamma * gamma + 1.0)

    def ratio(phi: float, t: float) -> float:
        if phi <= 0.0:
            phi = 1e-9 * max(phi_hi, 1.0)
        num = float(act(np.array(phi * t))) ** 2
        den = hermite.magnitude_fn(exp, scale * phi * phi)
        return num / max(den, 1e-300)

    phis = np.linspace(phi_lo, phi_hi, grid)
    ts = np.linspace(-psi_tilde_prev, psi_tilde_prev, grid)
    best, best_pt = -math.inf, (phis[0], ts[0])
    for p in phis:
        for t in ts:
            v = ratio(p, t)
            if v > best:
                best, best_pt = v, (p, t)
    # one refinement pass per axis around the grid argmax
    p0, t0 = best_pt
    p_ref, v1 = hermite._golden_max(lambda p: ratio(p, t0),
                                    max(phi_lo, p0 - (phi_hi - phi_lo) / grid),
                                    min(phi_hi, p0 + (phi_hi - phi_lo) / grid))
    if v1 > best:
        best, p0 = v1, p_ref
    span = 2.0 * psi_tilde_prev / grid if psi_tilde_prev > 0 else 0.0
    if span > 0:
        t_ref, v2 = hermite._golden_max(lambda t: ratio(p0, t),
                                        max(-psi_tilde_prev, t0 - span),
                                        min(psi_tilde_prev, t0 + span))
        if v2 > best:
            best = v2
    return best


def _bias_offset_term(sk: Skeleton, spec: WeightBoundSpec, j: int) -> float:
    """(beta + mu |tau(0)|/gamma)^2 with the 0/0 convention at gamma=0."""
    taus0 = [abs(sk.activation((a, j)).at_zero()) for a in sk.antecedents[j]]
    total0 = sum(taus0)
    if sk.gamma == 0.0:
        if total0 > 0.0:
            raise SeriesDomainError(
                f"node {j}: tau(0) != 0 with gamma=0 makes the bias offset "
                "term 0/0-indeterminate")
        offset = 0.0
    else:
        offset = spec.mu[j] * total0 / sk.gamma
    return (spec.beta[j] + offset) ** 2


def compute_global_ledger(sk: Skeleton, spec: WeightBoundSpec,
                          phi_choices: Optional[Dict[Edge, float]] = None,
                          K: Optional[int] = None,
                          grid: int = 41) -> GlobalBoundLedger:
    """Topological evaluation of the global bound recursion."""
    phi_choices = dict(phi_choices or {})
    g2 = sk.gamma * sk.gamma
    exp_cache: Dict[str, hermite.HermiteExpansion] = {}

    def expansion(edge: Edge) -> hermite.HermiteExpansion:
        act_id = sk.activation_id(edge)
        if act_id not in exp_cache:
            act = sk.activation(edge)
            exp_cache[act_id] = hermite.hermite_transform(
                act, 0.0, _edge_order(act, K))
        return exp_cache[act_id]

    node_phi_sq = [0.0] * sk.D
    node_phi_down_sq = [0.0] * sk.D
    node_psi_sq = [0.0] * sk.D
    node_psi_tilde_sq = [0.0] * sk.D
    bias_offset = [0.0] * sk.D
    e_phi, e_phi_down, e_psi, e_psi_tilde = {}, {}, {}, {}

    def node_vals(a: int):
        if a == -1:
            return 0.0, 1.0, 1.0, 1.0  # phi_down^2, phi^2, psi^2, psi_tilde^2
        return (node_phi_down_sq[a], node_phi_sq[a],
                node_psi_sq[a], node_psi_tilde_sq[a])

    for j in range(sk.D):
        for a in sk.antecedents[j]:
            edge = (a, j)
            act = sk.activation(edge)
            exp = expansion(edge)
            phi_sq = float(phi_choices.get(edge, 1.0))
            if phi_sq <= 0.0:
                raise ValueError(f"phi choice on edge {edge} must be positive")
            pd_sq, p_sq, ps_sq, pt_sq = node_vals(a)
            try:
                inv_phi = hermite.magnitude_fn_inverse(exp, phi_sq)
            except SeriesDomainError as exc:
                raise SeriesDomainError(
                    f"magnitude inverse failed on edge {edge}: {exc}") from exc
            e_phi[edge] = phi_sq
            e_phi_down[edge] = hermite.magnitude_fn(
                exp, inv_phi / (g2 + 1.0) * pd_sq)
            e_psi[edge] = hermite.magnitude_fn(
                exp, (g2 + 1.0) / max(inv_phi, 1e-300) * ps_sq)
            e_psi_tilde[edge] = _psi_tilde_sup(
                act, exp, inv_phi, sk.gamma,
                math.sqrt(pd_sq), math.sqrt(p_sq), math.sqrt(pt_sq), grid=grid)
        ants = sk.antecedents[j]
        p = len(ants)
        node_phi_sq[j] = g2 + 1.0
        node_phi_down_sq[j] = g2 + sum(
            e_phi_down[(a, j)] / e_phi[(a, j)] for a in ants) / p
        bias_offset[j] = _bias_offset_term(sk, spec, j)
        phi_max_sq = max(e_phi[(a, j)] for a in ants)
        psi_max_sq = max(e_psi[(a, j)] for a in ants)
        pt_max_sq = max(e_psi_tilde[(a, j)] for a in ants)
        mu_sq = spec.mu[j] ** 2
        node_psi_sq[j] = bias_offset[j] + p * mu_sq * phi_max_sq * psi_max_sq
        node_psi_tilde_sq[j] = bias_offset[j] + p * mu_sq * phi_max_sq * pt_max_sq

    return GlobalBoundLedger(
        edge_phi_sq=e_phi, edge_phi_down_sq=e_phi_down, edge_psi_sq=e_psi,
        edge_psi_tilde_sq=e_psi_tilde,
        node_phi_sq=tuple(node_phi_sq), node_phi_down_sq=tuple(node_phi_down_sq),
        node_psi_sq=tuple(node_psi_sq),
        node_psi_tilde_sq=tuple(node_psi_tilde_sq),
        bias_offset=tuple(bias_offset))


# ---------------------------------------------------------------------------
# Exact dual evaluation
# ---------------------------------------------------------------------------

def dual_eval(sk: Skeleton, params: Parameters, x: np.ndarray,
              K: Optional[int] = None) -> np.ndarray:
    """Evaluate the network through the dual factorization.

    Tensor features never materialize: inner products of l-fold tensor
    powers collapse to l-th powers of the node bilinear value, so each
    edge contributes its truncated centered series at 0 plus tau(0), and
    each node contributes gamma b + sum_a W^T (edge value). Equals
    forward() exactly for polynomial activations once K >= degree.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (sk.n,):
        raise ValueError("input width mismatch")
    values = {}
    for j in range(sk.D):
        total = sk.gamma * params.biases[j]
        for a in sk.antecedents[j]:
            v = x if a == -1 else values[a]
            act = sk.activation((a, j))
            exp = hermite.hermite_transform(act, 0.0, _edge_order(act, K))
            series, tail = hermite.centered_series_eval(
                exp.coefficients, v, return_tail=True)
            _check_settled(exp.order, act, series, tail)
            edge_val = series + act.at_zero()
            total = total + params.block(sk, j, a).T @ edge_val
        values[j] = total
    return values[sk.D - 1]


def _check_settled(K: int, act: hermite.Activation, series: np.ndarray,
                   tail: np.ndarray):
    """Detect non-Cauchy truncated series (divergent bilinear arguments)."""
    if act.kind in ("linear", "polynomial") or K < 8:
        return  # finite series, exact
    scale = max(1.0, float(np.max(np.abs(series))))
    if float(np.max(tail)) > 1e-2 * scale:
        raise SeriesDivergenceError(
            f"dual series not settled at order {K} "
            f"(last-term size {float(np.max(tail)):.3e})")


# ---------------------------------------------------------------------------
# Rademacher bounds
# ---------------------------------------------------------------------------

def rademacher_global(ledger: GlobalBoundLedger, N: int) -> float:
    if N < 1:
        raise ValueError("need N >= 1 samples")
    return ledger.phi_final * ledger.psi_tilde_final / math.sqrt(N)


def rademacher_lipschitz(sk: Skeleton, L: float, spec: WeightBoundSpec) -> float:
    """Max over input-output paths of prod_j L^2 p_check^[j] mu^[j].

    Dynamic programming over the DAG (max-product); requires an unbiased
    network. Returns the raw path product (no 1/sqrt(N) factor).
    """
    if any(b != 0.0 for b in spec.beta):
        raise ValueError("Lipschitz path bound applies to unbiased networks")
    best = {-1: 1.0}
    for j in range(sk.D):
        w = L * L * sk.in_degree(j) * spec.mu[j]
        best[j] = w * max(best[a] for a in sk.antecedents[j])
    return best[sk.D - 1]


def enumerate_path_products(sk: Skeleton, L: float, spec: WeightBoundSpec):
    """Explicit path enumeration (oracle for the DP), small graphs only."""
    paths = []

    def walk(j, prod):
        prod = prod * L * L * sk.in_degree(j) * spec.mu[j]
        succ = [t for t in range(j + 1, sk.D) if j in sk.antecedents[t]]
        if j == sk.D - 1:
            paths.append(prod)
            return
        for t in succ:
            walk(t, prod)

    for j0 in range(sk.D):
        if -1 in sk.antecedents[j0]:
            walk(j0, 1.0)
    return paths
