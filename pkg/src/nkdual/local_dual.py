"""Local (weight-step) feature-map bounds, step admissibility, and the
exact delta evaluation.

The local ledger mirrors the global one but tracks the change in network
operation: per edge it needs the rectified-activation profile (radius
rho^2 and bound T^2) at the step spec's activation bound omega_tilde, and
the absT majorant drives the weight-side norms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import hermite
from .errors import SeriesDivergenceError, StepBoundDomainError
from .global_dual import GlobalBoundLedger, _check_settled, _edge_order
from .netgraph import Edge, Parameters, Skeleton, WeightBoundSpec, forward


@dataclass(frozen=True)
class StepSpec:
    """Bounds on a weight/bias step plus the edge activation bounds."""

    mu_delta: Tuple[float, ...]
    beta_delta: Tuple[float, ...]
    omega: Dict[Edge, float]
    eta: float

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0,1)")
        if any(m < 0 for m in self.mu_delta) or any(b < 0 for b in self.beta_delta):
            raise ValueError("step bounds must be nonnegative")
        if any(w <= 0 for w in self.omega.values()):
            raise ValueError("omega bounds must be positive")

    def omega_node(self, sk: Skeleton, j: int) -> float:
        return max(self.omega[(a, j)] for a in sk.antecedents[j])

    def scaled(self, t: float) -> "StepSpec":
        return StepSpec(tuple(t * m for m in self.mu_delta),
                        tuple(t * b for b in self.beta_delta),
                        dict(self.omega), self.eta)

    def to_json(self) -> str:
        return json.dumps({
            "eta": self.eta,
            "mu_delta": list(self.mu_delta),
            "beta_delta": list(self.beta_delta),
            "omega": {f"{a}->{j}": w for (a, j), w in sorted(self.omega.items())},
        }, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "StepSpec":
        doc = json.loads(text)
        omega = {}
        for key, w in doc["omega"].items():
            a, j = key.split("->")
            omega[(int(a), int(j))] = float(w)
        return StepSpec(tuple(doc["mu_delta"]), tuple(doc["beta_delta"]),
                        omega, float(doc["eta"]))


def step_spec_empirical(sk: Skeleton, params: Parameters, inputs,
                        mu_delta, beta_delta, eta: float,
                        inflate: float = 1.05) -> StepSpec:
    """omega_tilde from the max post-activation norm over supplied inputs."""
    omega = {e: 0.0 for e in sk.edges()}
    for x in inputs:
        tr = forward(sk, params, x, warn_norm=False)
        for e in sk.edges():
            omega[e] = max(omega[e], float(np.linalg.norm(tr.post[e])))
    omega = {e: inflate * w if w > 0 else 1e-6 for e, w in omega.items()}
    return StepSpec(tuple(mu_delta), tuple(beta_delta), omega, eta)


def step_spec_from_ledger(sk: Skeleton, ledger: GlobalBoundLedger,
                          mu_delta, beta_delta, eta: float) -> StepSpec:
    """omega_tilde = phi_check * psi_tilde_check from the global ledger."""
    omega = {}
    for e in sk.edges():
        omega[e] = math.sqrt(ledger.edge_phi_sq[e] * ledger.edge_psi_tilde_sq[e])
    return StepSpec(tuple(mu_delta), tuple(beta_delta), omega, eta)


@dataclass(frozen=True)
class LocalBoundLedger:
    edge_phi_delta_sq: Dict[Edge, float]    # T_(omega)eta^2
    edge_psi_delta_sq: Dict[Edge, float]    # absT((g^2+1)/rho^2 psi_hat^2)
    edge_radius_sq: Dict[Edge, float]
    node_phi_delta_sq: Tuple[float, ...]    # gamma^2 + 1
    node_psi_delta_sq: Tuple[float, ...]

    @property
    def phi_delta_final(self) -> float:
        return math.sqrt(self.node_phi_delta_sq[-1])

    @property
    def psi_delta_final(self) -> float:
        return math.sqrt(self.node_psi_delta_sq[-1])

    def to_json(self) -> str:
        def edge_map(d):
            return {f"{a}->{j}": v for (a, j), v in sorted(d.items())}

        return json.dumps({
            "edges": {
                "phi_delta_sq": edge_map(self.edge_phi_delta_sq),
                "psi_delta_sq": edge_map(self.edge_psi_delta_sq),
                "radius_sq": edge_map(self.edge_radius_sq),
            },
            "nodes": {
                "phi_delta_sq": list(self.node_phi_delta_sq),
                "psi_delta_sq": list(self.node_psi_delta_sq),
            },
        }, sort_keys=True, indent=2)


def edge_profiles(sk: Skeleton, step: StepSpec,
                  K: Optional[int] = None) -> Dict[Edge, hermite.RectifiedProfile]:
    """Rectified-activation envelope profiles at each edge's omega_tilde."""
    profiles = {}
    for e in sk.edges():
        act = sk.activation(e)
        profiles[e] = hermite.estimate_profile(
            act, step.eta, omega=step.omega[e], K=_edge_order(act, K))
    return profiles


def compute_local_ledger(sk: Skeleton, spec: WeightBoundSpec, step: StepSpec,
                         K: Optional[int] = None,
                         profiles: Optional[Dict] = None) -> LocalBoundLedger:
    """Topological evaluation of the local bound recursion."""
    g2 = sk.gamma * sk.gamma
    profiles = profiles if profiles is not None else edge_profiles(sk, step, K)
    e_phi, e_psi, e_rho = {}, {}, {}
    node_psi = [0.0] * sk.D

    def node_psi_sq(a: int) -> float:
        return 0.0 if a == -1 else node_psi[a]

    roc_sq = hermite.ROC_T_SQ
    for j in range(sk.D):
        for a in sk.antecedents[j]:
            edge = (a, j)
            prof = profiles[edge]
            e_phi[edge] = prof.bound_sq
            e_rho[edge] = prof.radius_sq
            arg = (g2 + 1.0) / prof.radius_sq * node_psi_sq(a)
            if arg >= roc_sq:
                raise StepBoundDomainError(edge, arg)
            e_psi[edge] = hermite.abs_t(step.eta, arg)
        p = sk.in_degree(j)
        omega_sq = step.omega_node(sk, j) ** 2
        psi_check_sq = max(e_psi[(a, j)] for a in sk.antecedents[j])
        node_psi[j] = (step.beta_delta[j] ** 2
                       + 3.0 * p * (step.mu_delta[j] ** 2 * omega_sq
                                    + 2.0 * spec.mu[j] ** 2 * psi_check_sq))
    return LocalBoundLedger(
        edge_phi_delta_sq=e_phi, edge_psi_delta_sq=e_psi, edge_radius_sq=e_rho,
        node_phi_delta_sq=tuple(g2 + 1.0 for _ in range(sk.D)),
        node_psi_delta_sq=tuple(node_psi))


# ---------------------------------------------------------------------------
# Step admissibility (reverse recursion from the output)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepBoundReport:
    admissible: bool
    u_sq: Tuple[float, ...]
    margin: Tuple[float, ...]

    def to_json(self) -> str:
        return json.dumps({
            "admissible": self.admissible,
            "u_sq": list(self.u_sq),
            "margin": list(self.margin),
        }, sort_keys=True, indent=2)


def check_step_bound(sk: Skeleton, spec: WeightBoundSpec, step: StepSpec,
                     K: Optional[int] = None,
                     profiles: Optional[Dict] = None) -> StepBoundReport:
    """Admissibility of a step spec per the reverse u-recursion.

    u at the output node is absTmax^2, which is precisely the value that
    makes the forward cap psi_hat_delta^2 <= absTmax^2 provable. The split
    parameter d is fixed at 1/2 throughout.
    """
    profiles = profiles if profiles is not None else edge_profiles(sk, step, K)
    eta = step.eta
    roc_sq = hermite.ROC_T_SQ
    tmax_sq = hermite.abs_t_max(eta) ** 2
    u_sq = [0.0] * sk.D
    for j in range(sk.D - 1, -1, -1):
        succ = [(j, t) for t in range(j + 1, sk.D) if j in sk.antecedents[t]]
        if not succ:
            u_sq[j] = tmax_sq
            continue
        candidates = []
        for (a, t) in succ:
            rho_sq = profiles[(a, t)].radius_sq
            y = u_sq[t] / (12.0 * sk.in_degree(t) * spec.mu[t] ** 2)
            if y >= tmax_sq:
                inner = roc_sq
            else:
                inner = min(roc_sq, hermite.abs_t_inverse(eta, y))
            candidates.append(rho_sq / (sk.gamma ** 2 + 1.0) * inner)
        u_sq[j] = min(candidates)
    margins = []
    admissible = True
    for j in range(sk.D):
        p = sk.in_degree(j)
        omega_sq = step.omega_node(sk, j) ** 2
        lhs = step.mu_delta[j] ** 2 + step.beta_delta[j] ** 2 / (3.0 * p * omega_sq)
        rhs = u_sq[j] / (6.0 * p * omega_sq)
        margins.append(rhs - lhs)
        if lhs > rhs:
            admissible = False
    return StepBoundReport(admissible=admissible, u_sq=tuple(u_sq),
                           margin=tuple(margins))


# ---------------------------------------------------------------------------
# Exact local dual evaluation
# ---------------------------------------------------------------------------

def local_dual_eval(sk: Skeleton, params: Parameters, delta: Parameters,
                    x: np.ndarray, K: Optional[int] = None) -> np.ndarray:
    """Delta f by the scalar-collapsed delta recursion.

    Node case: dxhat = gamma db + sum_a (dW^T xc + W^T dxc + dW^T dxc);
    edge case: dxc_i = truncated centered expansion of the edge activation
    about the actual per-unit pre-activation, evaluated at dxhat_i. Exact
    for polynomial activations once K >= degree.
    """
    x = np.asarray(x, dtype=float)
    trace = forward(sk, params, x, warn_norm=False)
    dpre: Dict[int, np.ndarray] = {-1: np.zeros(sk.n)}
    for j in range(sk.D):
        total = sk.gamma * delta.biases[j]
        for a in sk.antecedents[j]:
            act = sk.activation((a, j))
            order = _edge_order(act, K)
            centers = trace.pre_at(a)
            dv = dpre[a]
            coeffs = hermite.coeffs_at_centers(act, centers, order)
            dxc, tail = hermite.centered_series_eval(coeffs, dv, return_tail=True)
            _check_settled(order, act, dxc, tail)
            xc = trace.post[(a, j)]
            W = params.block(sk, j, a)
            dW = delta.block(sk, j, a)
            total = total + dW.T @ xc + (W + dW).T @ dxc
        dpre[j] = total
    return dpre[sk.D - 1]


def rademacher_local(ledger: LocalBoundLedger, N: int) -> float:
    if N < 1:
        raise ValueError("need N >= 1 samples")
    return ledger.phi_delta_final * ledger.psi_delta_final / math.sqrt(N)
