"""Weighted trees, the tree-indexed kernel, and the representor sum for a
gradient-descent step on a layer-wise network.

Index conventions (documented here because the tensor notation leaves
room for interpretation; the exactness test against brute-force delta-f
is the arbiter):

* All activation values and derivatives are evaluated on *base* traces
  (weights before the step). Warping enters only through the probe-side
  weight contractions, which use W + dW.
* Sigma^[j](x', x) inside this module is the unnormalized inner product
  gamma^2 + <xc^[j-1,j](x'), xc^[j-1,j](x)> of base traces (not the
  unit-averaged NNGP).
* In the tree kernel, each probe subtree appears in e'_j consecutive
  pairing slots sharing its row indices (the tensor power of one feature);
  each data subtree likewise with e_j slots. Every leaf carries one
  diag(tau^(order)) W factor lifting its index one layer up, with order
  e'_j on the probe side and e_j on the data side.
* The uniform per-layer tree sum underweights repeated higher-order
  branches and omits mixed-order branches for three or more layers; the
  representor sum therefore evaluates the completed enumeration (the
  per-branch Taylor recursion), which reproduces the tree sum exactly for
  two layers and is machine-exact for polynomial activations at any depth.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NotLayerwiseError, TermBudgetError
from .netgraph import Parameters, Skeleton, forward

SENTINEL = None  # leaf label of the probe-point tree


@dataclass(frozen=True)
class WeightedTree:
    """Height-M labeled tree: per-layer edge weights, fan-outs, leaf labels.

    Layer M-1 is the root; subtree k drops the root layer and takes the
    k-th slice of the leaf labels. leaves=None is the sentinel probe-point
    tree (all fan-outs 1)."""

    e: Tuple[int, ...]
    f: Tuple[int, ...]
    leaves: Optional[Tuple[int, ...]] = SENTINEL

    def __post_init__(self):
        if len(self.e) != len(self.f):
            raise ValueError("edge-weight and fan-out profiles differ in length")
        if any(v < 1 for v in self.e) or any(v < 1 for v in self.f):
            raise ValueError("edge weights and fan-outs are positive integers")
        count = self.leaf_count
        if self.leaves is SENTINEL:
            if count != 1:
                raise ValueError("sentinel trees need all fan-outs = 1")
        elif len(self.leaves) != count:
            raise ValueError(
                f"leaf labels ({len(self.leaves)}) != fan-out product ({count})")

    @property
    def height(self) -> int:
        return len(self.e)

    @property
    def leaf_count(self) -> int:
        return int(np.prod(self.f)) if self.f else 1

    @property
    def is_trivial(self) -> bool:
        return all(v == 1 for v in self.e) and all(v == 1 for v in self.f)

    def subtree(self, k: int) -> "WeightedTree":
        if not (0 <= k < self.f[-1]):
            raise ValueError(f"subtree index {k} out of range")
        if self.height == 1:
            raise ValueError("height-1 trees have no subtrees")
        if self.leaves is SENTINEL:
            return WeightedTree(self.e[:-1], self.f[:-1], SENTINEL)
        m = self.leaf_count // self.f[-1]
        return WeightedTree(self.e[:-1], self.f[:-1],
                            tuple(self.leaves[k * m:(k + 1) * m]))

    def key(self):
        return (self.e, self.f, self.leaves)


def probe_tree(k: Sequence[int]) -> WeightedTree:
    """{x}^<k,1,-> : the probe-point tree with edge weights k."""
    k = tuple(int(v) for v in k)
    return WeightedTree(e=k, f=tuple(1 for _ in k), leaves=SENTINEL)


def data_tree(k: Sequence[int], p: Sequence[int]) -> WeightedTree:
    """D^<1,k,p> : unit edge weights, fan-outs k, leaf labels p."""
    k = tuple(int(v) for v in k)
    return WeightedTree(e=tuple(1 for _ in k), f=k,
                        leaves=tuple(int(v) for v in p))


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    loss: str = "squared"

    def __post_init__(self):
        if self.loss != "squared":
            raise ValueError("only squared loss is implemented")
        if len(self.xs) != len(self.ys):
            raise ValueError("inputs/targets length mismatch")

    @property
    def N(self) -> int:
        return len(self.xs)


@dataclass(frozen=True)
class AlphaStack:
    """Backpropagated loss-gradient vectors per node and training index."""

    alphas: Tuple[np.ndarray, ...]  # alphas[j] has shape (N, H_j)

    def at(self, j: int) -> np.ndarray:
        return self.alphas[j]


def _require_layerwise(sk: Skeleton):
    if not sk.is_chain():
        raise NotLayerwiseError(
            "representor operations need a chain skeleton (in-degree 1)")


def backprop_alphas(sk: Skeleton, params: Parameters, data: Dataset) -> AlphaStack:
    """Reverse recursion of the alpha vectors; the learning rate is NOT
    folded in (it rides in the representor prefactor)."""
    _require_layerwise(sk)
    N = data.N
    alphas = [np.zeros((N, sk.fanout[j])) for j in range(sk.D)]
    traces = [forward(sk, params, x, warn_norm=False) for x in data.xs]
    for l in range(N):
        alphas[sk.D - 1][l] = traces[l].output - data.ys[l]
    for j in range(sk.D - 1, 0, -1):
        act = sk.activation((j - 1, j))
        W = params.weights[j]
        for l in range(N):
            tprime = act.d(1, traces[l].pre[j - 1])
            alphas[j - 1][l] = tprime * (W @ alphas[j][l])
    return AlphaStack(alphas=tuple(alphas))


def gd_step(sk: Skeleton, params: Parameters, data: Dataset,
            lr: float) -> Parameters:
    """-lr x the unregularized-risk gradient, by the alpha outer products."""
    _require_layerwise(sk)
    stack = backprop_alphas(sk, params, data)
    traces = [forward(sk, params, x, warn_norm=False) for x in data.xs]
    Ws, bs = [], []
    for j in range(sk.D):
        a = sk.antecedents[j][0]
        dW = np.zeros((sk.fan_in(j), sk.fanout[j]))
        db = np.zeros(sk.fanout[j])
        for l in range(data.N):
            dW += np.outer(traces[l].post[(a, j)], stack.at(j)[l])
            db += sk.gamma * stack.at(j)[l]
        Ws.append(-lr * dW)
        bs.append(-lr * db)
    return Parameters(tuple(Ws), tuple(bs))


# ---------------------------------------------------------------------------
# Shared context: base traces for the probe point and the dataset
# ---------------------------------------------------------------------------

@dataclass
class LenkContext:
    sk: Skeleton
    params: Parameters
    data: Dataset
    probe: np.ndarray

    def __post_init__(self):
        _require_layerwise(self.sk)
        self.probe = np.asarray(self.probe, dtype=float)
        self._probe_trace = forward(self.sk, self.params, self.probe,
                                    warn_norm=False)
        self._data_traces = [forward(self.sk, self.params, x, warn_norm=False)
                             for x in self.data.xs]

    def trace(self, label: Optional[int]):
        return self._probe_trace if label is SENTINEL else self._data_traces[label]

    def sigma(self, j: int, label1: Optional[int], label2: Optional[int]) -> float:
        """gamma^2 + <xc^[j-1,j](input1), xc^[j-1,j](input2)>, base traces."""
        e = (j - 1, j)
        t1, t2 = self.trace(label1), self.trace(label2)
        return self.sk.gamma ** 2 + float(t1.post[e] @ t2.post[e])


# ---------------------------------------------------------------------------
# Tree-indexed kernel (literal recursion)
# ---------------------------------------------------------------------------

def lenk_kernel(tree_p: WeightedTree, tree_d: WeightedTree,
                params_prime: Parameters, params: Parameters,
                ctx: LenkContext) -> np.ndarray:
    """K^[D-1](tree', tree; Theta', Theta) as an ndarray.

    Shape: (H,)*L' + (H,)*L with H the output width and L', L the two leaf
    counts; for trivial single-leaf trees this is the usual H x H matrix.
    Theta' weights the probe-side contractions, Theta the data side; all
    trace evaluations use the context's base parameters.
    """
    sk = ctx.sk
    D = sk.D
    if tree_p.height != D or tree_d.height != D:
        raise ValueError(
            f"trees must have height D={D}; got {tree_p.height}, {tree_d.height}")
    for act_check in (tree_p, tree_d):
        for j in range(1, D):
            act = sk.activation((j - 1, j))
            order = act_check.e[j]
            if act.kind == "smooth" and order > act.n_max:
                raise ValueError(
                    f"edge ({j-1},{j}): derivative order {order} beyond n_max")
    memo: dict = {}
    letters = string.ascii_letters

    def leaf_labels(tree: WeightedTree) -> list:
        if tree.leaves is SENTINEL:
            return [SENTINEL] * tree.leaf_count
        return list(tree.leaves)

    def lift_matrix(j: int, order: int, label, W: np.ndarray) -> np.ndarray:
        act = sk.activation((j - 1, j))
        tau = act.d(order, ctx.trace(label).pre_at(j - 1))
        return tau[:, None] * W

    def recurse(j: int, tp: WeightedTree, td: WeightedTree) -> np.ndarray:
        key = (j, tp.key(), td.key())
        if key in memo:
            return memo[key]
        H = sk.fanout[j]
        Lp, Ld = tp.leaf_count, td.leaf_count
        out = np.zeros((H,) * (Lp + Ld))
        if tp.is_trivial and td.is_trivial:
            out = out + np.eye(H) * ctx.sigma(j, leaf_labels(tp)[0],
                                              leaf_labels(td)[0])
        if j >= 1:
            ep, fp = tp.e[j], tp.f[j]
            ed, fd = td.e[j], td.f[j]
            if fp * ep != fd * ed:
                raise ValueError(
                    f"layer {j}: feature powers f'e'={fp*ep} != fe={fd*ed}; "
                    "the tree pair does not define an inner product")
            subs_p = [tp.subtree(k) for k in range(fp)]
            subs_d = [td.subtree(k) for k in range(fd)]
            # pairing slots: probe subtree k' fills e' consecutive slots
            slot_p = [k for k in range(fp) for _ in range(ep)]
            slot_d = [k for k in range(fd) for _ in range(ed)]
            # letters per subtree leaf (shared across that subtree's slots)
            pos = 0
            p_axes, d_axes = [], []
            for t in subs_p:
                p_axes.append(letters[pos:pos + t.leaf_count])
                pos += t.leaf_count
            for t in subs_d:
                d_axes.append(letters[pos:pos + t.leaf_count])
                pos += t.leaf_count
            if pos > len(letters):
                raise ValueError("tree too large for the einsum assembly")
            operands, subscripts = [], []
            for s in range(len(slot_p)):
                kp, kd = slot_p[s], slot_d[s]
                operands.append(recurse(j - 1, subs_p[kp], subs_d[kd]))
                subscripts.append(p_axes[kp] + d_axes[kd])
            out_sub = "".join(p_axes) + "".join(d_axes)
            T = np.einsum(",".join(subscripts) + "->" + out_sub, *operands)
            # lift every leaf index one layer up
            Wp = params_prime.weights[j]
            Wd = params.weights[j]
            for label in leaf_labels(tp):
                T = np.tensordot(T, lift_matrix(j, ep, label, Wp), axes=(0, 0))
            for label in leaf_labels(td):
                T = np.tensordot(T, lift_matrix(j, ed, label, Wd), axes=(0, 0))
            out = out + T
        memo[key] = out
        return out

    return recurse(D - 1, tree_p, tree_d)


def contract_kernel_with_alphas(kernel: np.ndarray, stack: AlphaStack,
                                p: Sequence[int]) -> np.ndarray:
    """Contract the kernel's data axes against the top-level alphas of p."""
    top = stack.alphas[-1]
    T = kernel
    for r in range(len(p)):
        # data axes sit after the single probe axis; contract the first of them
        T = np.tensordot(T, top[p[r]], axes=(1, 0))
    return T


# ---------------------------------------------------------------------------
# Term budget
# ---------------------------------------------------------------------------

def _check_term_budget(D: int, k_max: int, N: int, cap: int):
    total = 0
    for k in _k_vectors(D, k_max):
        total += N ** int(np.prod(k))
        if total > cap:
            raise TermBudgetError(cap, k)


def _k_vectors(D: int, k_max: int):
    ks = [1] * D
    while True:
        yield tuple(ks)
        i = D - 1
        while i >= 0:
            ks[i] += 1
            if ks[i] <= k_max:
                break
            ks[i] = 1
            i -= 1
        if i < 0:
            return


# ---------------------------------------------------------------------------
# Representor sum (completed enumeration) and approximations
# ---------------------------------------------------------------------------

def representor_sum(sk: Skeleton, params: Parameters, delta: Parameters,
                    data: Dataset, x: np.ndarray, k_max: int, lr: float,
                    term_cap: int = 10**6) -> np.ndarray:
    """Delta f from the kernel-contracted alpha expansion, Taylor orders
    capped at k_max per layer. Exact for polynomial activations at
    k_max >= degree when delta is the gd_step for (data, lr)."""
    _require_layerwise(sk)
    _check_term_budget(sk.D, k_max, data.N, term_cap)
    return _contracted_expansion(sk, params, delta, data, x, k_max, lr,
                                 warped=True)


def lenk_fixed(sk: Skeleton, params: Parameters, delta: Parameters,
               data: Dataset, x: np.ndarray, k_max: int, lr: float,
               term_cap: int = 10**6) -> np.ndarray:
    """The fixed-kernel approximation: warping dropped (Theta' = Theta)."""
    _require_layerwise(sk)
    _check_term_budget(sk.D, k_max, data.N, term_cap)
    return _contracted_expansion(sk, params, delta, data, x, k_max, lr,
                                 warped=False)


def _contracted_expansion(sk, params, delta, data, x, k_max, lr, warped):
    ctx = LenkContext(sk=sk, params=params, data=data, probe=x)
    stack = backprop_alphas(sk, params, data)
    N = data.N

    def sigma_vec(j):
        return np.array([ctx.sigma(j, SENTINEL, l) for l in range(N)])

    # gamma * db^[j] insertions are the gamma^2 part of sigma: for the
    # gd_step delta, gamma db = -lr gamma^2 sum_l alpha_l exactly.
    dpre = (-lr) * sigma_vec(0) @ stack.at(0)
    for j in range(1, sk.D):
        act = sk.activation((j - 1, j))
        xhat = ctx.trace(SENTINEL).pre[j - 1]
        dxc = np.zeros_like(dpre)
        power = np.ones_like(dpre)
        for q in range(1, k_max + 1):
            power = power * dpre
            dxc = dxc + act.d(q, xhat) * power / math.factorial(q)
        W = params.weights[j] + (delta.weights[j] if warped else 0.0)
        dpre = (-lr) * sigma_vec(j) @ stack.at(j) + W.T @ dxc
    return dpre


def lenk_nct(sk: Skeleton, params: Parameters, data: Dataset, x: np.ndarray,
             k_max: int, lr: float, term_cap: int = 10**6,
             diag_only: bool = False) -> np.ndarray:
    """No-cross-terms scalar recursion with Hadamard alpha contraction."""
    _require_layerwise(sk)
    _check_term_budget(sk.D, k_max, data.N, term_cap)
    ctx = LenkContext(sk=sk, params=params, data=data, probe=x)
    stack = backprop_alphas(sk, params, data)
    N = data.N
    W_sq = [params.weights[j] ** 2 for j in range(sk.D)]
    tau_probe: Dict[Tuple[int, int], np.ndarray] = {}
    tau_data: Dict[Tuple[int, int], np.ndarray] = {}
    for j in range(1, sk.D):
        act = sk.activation((j - 1, j))
        for q in range(1, k_max + 1):
            tau_probe[(j, q)] = act.d(q, ctx.trace(SENTINEL).pre[j - 1])
        for l in range(N):
            tau_data[(j, l)] = act.d(1, ctx.trace(l).pre[j - 1])

    def kappa(j: int, kvec: Tuple[int, ...], labels: Tuple[int, ...]) -> np.ndarray:
        H = sk.fanout[j]
        if j == 0:
            if kvec[0] != 1:
                return np.zeros(H)
            return ctx.sigma(0, SENTINEL, labels[0]) * np.ones(H)
        out = np.zeros(H)
        if all(v == 1 for v in kvec[: j + 1]):
            out = out + ctx.sigma(j, SENTINEL, labels[0])
        kj = kvec[j]
        m = len(labels) // kj
        prod = np.ones(H)
        for r in range(kj):
            sub = labels[r * m:(r + 1) * m]
            child = kappa(j - 1, kvec, sub)
            weight = tau_probe[(j, kj)].copy()
            for s in sub:
                weight = weight * tau_data[(j, s)]
            prod = prod * (W_sq[j].T @ (weight * child))
        return out + prod

    total = np.zeros(sk.m)
    for kvec in _k_vectors(sk.D, k_max):
        P = int(np.prod(kvec))
        pref = (-lr) ** P / math.prod(math.factorial(v) for v in kvec)
        if diag_only:
            p_iter = ((l,) * P for l in range(N))
        else:
            p_iter = np.ndindex(*(N,) * P)
        for p in p_iter:
            p = tuple(int(v) for v in p)
            alpha_prod = np.ones(sk.m)
            for l in p:
                alpha_prod = alpha_prod * stack.alphas[-1][l]
            total = total + pref * kappa(sk.D - 1, kvec, p) * alpha_prod
    return total


def lenk_diag(sk: Skeleton, params: Parameters, data: Dataset, x: np.ndarray,
              k_max: int, lr: float, term_cap: int = 10**6) -> np.ndarray:
    """Single-training-vector restriction of the no-cross-terms sum."""
    return lenk_nct(sk, params, data, x, k_max, lr, term_cap, diag_only=True)


# ---------------------------------------------------------------------------
# Verification report
# ---------------------------------------------------------------------------

def representor_report(sk: Skeleton, params: Parameters, data: Dataset,
                       x: np.ndarray, k_max: int, lr: float,
                       brute: np.ndarray, term_cap: int = 10**6) -> dict:
    """Per-k literal tree terms, cumulative error vs brute force, and the
    completed-enumeration value with its mixed-order remainder."""
    _require_layerwise(sk)
    _check_term_budget(sk.D, k_max, data.N, term_cap)
    delta = gd_step(sk, params, data, lr)
    ctx = LenkContext(sk=sk, params=params, data=data, probe=x)
    stack = backprop_alphas(sk, params, data)
    warped = params.plus(delta)
    N = data.N
    rows = []
    cumulative = np.zeros(sk.m)
    for kvec in _k_vectors(sk.D, k_max):
        P = int(np.prod(kvec))
        pref = (-lr) ** P / math.prod(math.factorial(v) for v in kvec)
        term = np.zeros(sk.m)
        if kvec[0] == 1:  # the input edge admits no higher-order insertions
            tp = probe_tree(kvec)
            for p in np.ndindex(*(N,) * P):
                td = data_tree(kvec, tuple(int(v) for v in p))
                kern = lenk_kernel(tp, td, warped, params, ctx)
                term = term + pref * contract_kernel_with_alphas(
                    kern, stack, tuple(int(v) for v in p))
        cumulative = cumulative + term
        rows.append({
            "k": list(kvec),
            "tree_term": [float(v) for v in term],
            "cumulative_error": float(np.max(np.abs(cumulative - brute))),
        })
    exact = representor_sum(sk, params, delta, data, x, k_max, lr, term_cap)
    return {
        "k_max": k_max,
        "rows": rows,
        "uniform_tree_sum": [float(v) for v in cumulative],
        "mixed_order_remainder": [float(v) for v in (exact - cumulative)],
        "exact_sum": [float(v) for v in exact],
        "brute_delta_f": [float(v) for v in brute],
        "final_error_exact": float(np.max(np.abs(exact - brute))),
        "final_error_uniform": float(np.max(np.abs(cumulative - brute))),
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
