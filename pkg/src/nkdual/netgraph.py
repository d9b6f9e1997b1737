"""DAG computational skeletons, forward passes, initializers and norm bounds.

A skeleton has D nodes indexed 0..D-1 with a virtual input node -1; node j
receives the concatenated per-edge activations of its antecedents and
applies W^[j]^T (.) + gamma b^[j]. Edge activations are per-edge, so the
builders can follow the convention that the first and last edges are
linear while the interior is ReLU.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import hermite
from .errors import NonConvergenceError

Edge = Tuple[int, int]


@dataclass(frozen=True)
class Skeleton:
    """Topology of a network: fan-outs, antecedent sets, edge activations."""

    input_width: int
    fanout: Tuple[int, ...]
    antecedents: Tuple[Tuple[int, ...], ...]
    activations: Tuple[Tuple[Edge, str], ...]
    gamma: float = 0.0
    skip_identity: frozenset = frozenset()

    def __post_init__(self):
        D = len(self.fanout)
        if len(self.antecedents) != D:
            raise ValueError("antecedents and fanout length mismatch")
        for j, ants in enumerate(self.antecedents):
            if len(ants) == 0:
                raise ValueError(f"node {j} has empty antecedent set")
            if len(set(ants)) != len(ants):
                raise ValueError(f"node {j} repeats an antecedent")
            if any(a >= j or a < -1 for a in ants):
                raise ValueError(f"node {j} has invalid antecedent (need -1 <= a < j)")
            if tuple(sorted(ants)) != tuple(ants):
                raise ValueError(f"node {j} antecedents must be sorted ascending")
        act_edges = {e for e, _ in self.activations}
        if act_edges != set(self.edges()):
            raise ValueError("activation map must cover exactly the edge set")
        self._check_reachability()

    def _check_reachability(self):
        D = self.D
        fwd = {j: set() for j in range(-1, D)}
        for j in range(D):
            for a in self.antecedents[j]:
                fwd[a].add(j)
        seen = {-1}
        stack = [-1]
        while stack:
            u = stack.pop()
            for v in fwd[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if seen != set(range(-1, D)):
            raise ValueError("some node is unreachable from the input")
        back = {D - 1}
        stack = [D - 1]
        while stack:
            u = stack.pop()
            if u == -1:
                continue
            for a in self.antecedents[u]:
                if a not in back:
                    back.add(a)
                    stack.append(a)
        if back != set(range(-1, D)):
            raise ValueError("some node does not reach the output")

    # -- structure ---------------------------------------------------------
    @property
    def D(self) -> int:
        return len(self.fanout)

    @property
    def n(self) -> int:
        return self.input_width

    @property
    def m(self) -> int:
        return self.fanout[-1]

    def width(self, j: int) -> int:
        return self.input_width if j == -1 else self.fanout[j]

    def fan_in(self, j: int) -> int:
        return sum(self.width(a) for a in self.antecedents[j])

    def in_degree(self, j: int) -> int:
        return len(self.antecedents[j])

    def edges(self):
        return [(a, j) for j in range(self.D) for a in self.antecedents[j]]

    def activation(self, edge: Edge) -> hermite.Activation:
        return hermite.get_activation(dict(self.activations)[edge])

    def activation_id(self, edge: Edge) -> str:
        return dict(self.activations)[edge]

    def block_rows(self, j: int, a: int) -> slice:
        """Row slice of antecedent a's block inside W^[j]."""
        off = 0
        for b in self.antecedents[j]:
            w = self.width(b)
            if b == a:
                return slice(off, off + w)
            off += w
        raise KeyError(f"{a} is not an antecedent of {j}")

    def is_chain(self) -> bool:
        return all(self.antecedents[j] == (j - 1,) for j in range(self.D))

    # -- serialization -----------------------------------------------------
    def to_json(self) -> str:
        doc = {
            "gamma": self.gamma,
            "widths": {"input": self.input_width},
            "nodes": [
                {
                    "fanout": self.fanout[j],
                    "antecedents": list(self.antecedents[j]),
                    "activations": [dict(self.activations)[(a, j)]
                                    for a in self.antecedents[j]],
                    "skip_identity": [a for a in self.antecedents[j]
                                      if (a, j) in self.skip_identity],
                }
                for j in range(self.D)
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "Skeleton":
        doc = json.loads(text)
        nodes = doc["nodes"]
        fanout = tuple(int(nd["fanout"]) for nd in nodes)
        ants = tuple(tuple(sorted(int(a) for a in nd["antecedents"])) for nd in nodes)
        acts = []
        skips = set()
        for j, nd in enumerate(nodes):
            order = sorted(range(len(nd["antecedents"])),
                           key=lambda i: nd["antecedents"][i])
            for rank, i in enumerate(order):
                acts.append(((ants[j][rank], j), nd["activations"][i]))
            for a in nd.get("skip_identity", []):
                skips.add((int(a), j))
        return Skeleton(
            input_width=int(doc["widths"]["input"]),
            fanout=fanout,
            antecedents=ants,
            activations=tuple(acts),
            gamma=float(doc.get("gamma", 0.0)),
            skip_identity=frozenset(skips),
        )


@dataclass(frozen=True)
class Parameters:
    """Weights and biases for a skeleton (also used for step deltas)."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        for W in self.weights:
            if not np.all(np.isfinite(W)):
                raise ValueError("non-finite weight entry")
        for b in self.biases:
            if not np.all(np.isfinite(b)):
                raise ValueError("non-finite bias entry")

    def block(self, sk: Skeleton, j: int, a: int) -> np.ndarray:
        return self.weights[j][sk.block_rows(j, a), :]

    def scaled(self, c: float) -> "Parameters":
        return Parameters(tuple(c * W for W in self.weights),
                          tuple(c * b for b in self.biases))

    def plus(self, other: "Parameters") -> "Parameters":
        return Parameters(
            tuple(W + V for W, V in zip(self.weights, other.weights)),
            tuple(b + c for b, c in zip(self.biases, other.biases)),
        )

    @staticmethod
    def zeros(sk: Skeleton) -> "Parameters":
        return Parameters(
            tuple(np.zeros((sk.fan_in(j), sk.fanout[j])) for j in range(sk.D)),
            tuple(np.zeros(sk.fanout[j]) for j in range(sk.D)),
        )

    def validate_shapes(self, sk: Skeleton):
        for j in range(sk.D):
            if self.weights[j].shape != (sk.fan_in(j), sk.fanout[j]):
                raise ValueError(f"weight block {j} has wrong shape")
            if self.biases[j].shape != (sk.fanout[j],):
                raise ValueError(f"bias block {j} has wrong shape")

    # flat binary: row-major float64 little-endian per block, W then b per node
    def to_bytes(self) -> bytes:
        out = bytearray()
        for W, b in zip(self.weights, self.biases):
            out += np.ascontiguousarray(W, dtype="<f8").tobytes()
            out += np.ascontiguousarray(b, dtype="<f8").tobytes()
        return bytes(out)

    def manifest(self, sk: Skeleton) -> str:
        return json.dumps({
            "dtype": "<f8",
            "order": "row-major",
            "blocks": [
                {"node": j, "weight_shape": [sk.fan_in(j), sk.fanout[j]],
                 "bias_shape": [sk.fanout[j]]}
                for j in range(sk.D)
            ],
        }, sort_keys=True, indent=2)

    @staticmethod
    def from_bytes(sk: Skeleton, raw: bytes) -> "Parameters":
        Ws, bs = [], []
        off = 0
        for j in range(sk.D):
            nw = sk.fan_in(j) * sk.fanout[j]
            W = np.frombuffer(raw, dtype="<f8", count=nw, offset=off)
            off += nw * 8
            b = np.frombuffer(raw, dtype="<f8", count=sk.fanout[j], offset=off)
            off += sk.fanout[j] * 8
            Ws.append(W.reshape(sk.fan_in(j), sk.fanout[j]).copy())
            bs.append(b.copy())
        if off != len(raw):
            raise ValueError("trailing bytes in parameter blob")
        return Parameters(tuple(Ws), tuple(bs))


@dataclass(frozen=True)
class ForwardTrace:
    """Complete forward pass record: per-edge posts, per-node pres, output."""

    x: np.ndarray
    pre: Tuple[np.ndarray, ...]        # xhat^[j] per node
    post: Dict[Edge, np.ndarray]       # xcheck^[a,j] per edge
    output: np.ndarray

    def pre_at(self, j: int) -> np.ndarray:
        return self.x if j == -1 else self.pre[j]


def forward(sk: Skeleton, params: Parameters, x: np.ndarray,
            warn_norm: bool = True) -> ForwardTrace:
    """Topological-order evaluation; ||x||>1 only warns (oracles need probes)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sk.n,):
        raise ValueError(f"input has shape {x.shape}, expected ({sk.n},)")
    params.validate_shapes(sk)
    if warn_norm and float(np.linalg.norm(x)) > 1.0 + 1e-12:
        warnings.warn("input norm exceeds 1; bound assumptions may not apply",
                      stacklevel=2)
    pre = []
    post: Dict[Edge, np.ndarray] = {}
    for j in range(sk.D):
        pieces = []
        for a in sk.antecedents[j]:
            src = x if a == -1 else pre[a]
            act = sk.activation((a, j))
            xc = act(src)
            post[(a, j)] = xc
            pieces.append(xc)
        stacked = np.concatenate(pieces)
        pre.append(params.weights[j].T @ stacked + sk.gamma * params.biases[j])
    return ForwardTrace(x=x, pre=tuple(pre), post=post, output=pre[-1])


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_feedforward_relu(widths: Sequence[int], input_width: Optional[int] = None,
                           gamma: float = 0.0) -> Skeleton:
    """Fully-connected unbiased chain; linear first/last edges, ReLU between."""
    widths = tuple(int(w) for w in widths)
    D = len(widths)
    if D < 1:
        raise ValueError("need at least one node")
    n = int(input_width) if input_width is not None else widths[0]
    acts = []
    for j in range(D):
        if j == 0 or j == D - 1:
            acts.append(((j - 1, j), "linear"))
        else:
            acts.append(((j - 1, j), "relu"))
    return Skeleton(input_width=n, fanout=widths,
                    antecedents=tuple((j - 1,) for j in range(D)),
                    activations=tuple(acts), gamma=gamma)


def build_resnet(widths: Sequence[int], input_width: Optional[int] = None,
                 gamma: float = 0.0) -> Skeleton:
    """Alternating ReLU/skip blocks: odd nodes take {j-1, j-2} with a linear
    identity skip edge; W^[j] is constrained to [W_C; I] there."""
    widths = tuple(int(w) for w in widths)
    D = len(widths)
    if D % 2 != 0:
        raise ValueError("ResNet builder needs an even node count")
    n = int(input_width) if input_width is not None else widths[0]
    ants, acts, skips = [], [], set()
    for j in range(D):
        relu_or_edge = "linear" if (j == 0 or j == D - 1) else "relu"
        if j % 2 == 0:
            ants.append((j - 1,))
            acts.append(((j - 1, j), relu_or_edge))
        else:
            skip_src = j - 2
            skip_w = n if skip_src == -1 else widths[skip_src]
            if skip_w != widths[j]:
                raise ValueError(
                    f"skip at node {j}: width {skip_w} != fanout {widths[j]}")
            ants.append(tuple(sorted((j - 1, skip_src))))
            acts.append(((j - 1, j), relu_or_edge))
            acts.append(((skip_src, j), "linear"))
            skips.add((skip_src, j))
    return Skeleton(input_width=n, fanout=widths, antecedents=tuple(ants),
                    activations=tuple(acts), gamma=gamma,
                    skip_identity=frozenset(skips))


# ---------------------------------------------------------------------------
# Initializers and norm bounds
# ---------------------------------------------------------------------------

SCHEMES = ("lecun", "he", "glorot")


def _sigma_sq(sk: Skeleton, j: int, scheme: str) -> float:
    H, Hin = sk.fanout[j], sk.fan_in(j)
    if scheme == "lecun":
        return 1.0 / H
    if scheme == "he":
        return 1.0 / Hin
    if scheme == "glorot":
        return 1.0 / (H + Hin)
    raise ValueError(f"unknown scheme {scheme!r}")


def initialize(sk: Skeleton, scheme: str, seed: int) -> Parameters:
    """Gaussian weights at the scheme's variance; zero biases; ResNet skip
    blocks are overwritten with the identity and never touched again."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for j in range(sk.D):
        W = rng.normal(0.0, np.sqrt(_sigma_sq(sk, j, scheme)),
                       size=(sk.fan_in(j), sk.fanout[j]))
        bs.append(np.zeros(sk.fanout[j]))
        Ws.append(W)
    params = Parameters(tuple(Ws), tuple(bs))
    return enforce_skip_identity(sk, params)


def enforce_skip_identity(sk: Skeleton, params: Parameters) -> Parameters:
    if not sk.skip_identity:
        return params
    Ws = [W.copy() for W in params.weights]
    for (a, j) in sk.skip_identity:
        rows = sk.block_rows(j, a)
        Ws[j][rows, :] = np.eye(sk.width(a), sk.fanout[j])
    return Parameters(tuple(Ws), params.biases)


def glorot_mu_sq_cap(D: int, epsilon: float) -> float:
    """Width-independent cap on the Glorot spectral-norm bound."""
    return 1.0 + ((5.0 / 3.0) * np.sqrt(epsilon / D)
                  + np.sqrt(D / epsilon) * np.log(2.0)) \
        * np.sqrt(2.0) * np.exp(-2.0 * epsilon / (3.0 * D))


@dataclass(frozen=True)
class WeightBoundSpec:
    """Per-node spectral/bias bounds with the confidence they hold at."""

    mu: Tuple[float, ...]
    beta: Tuple[float, ...]
    epsilon: float
    scheme: str
    glorot_cap: Optional[float] = None

    def __post_init__(self):
        if any(m < 0 for m in self.mu) or any(b < 0 for b in self.beta):
            raise ValueError("norm bounds must be nonnegative")


def norm_bounds(sk: Skeleton, scheme: str, epsilon: float,
                params: Optional[Parameters] = None) -> WeightBoundSpec:
    """mu/beta per node: the scheme's high-probability formula, or measured."""
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0,1)")
    D = sk.D
    if scheme == "measured":
        if params is None:
            raise ValueError("measured bounds need parameters")
        mu = tuple(spectral_norm(params.weights[j]) for j in range(D))
        beta = tuple(float(np.linalg.norm(params.biases[j])) for j in range(D))
        return WeightBoundSpec(mu=mu, beta=beta, epsilon=epsilon, scheme="measured")
    mus = []
    for j in range(D):
        H, Hin = sk.fanout[j], sk.fan_in(j)
        logs = np.log(D * H / (2.0 * epsilon)) + np.log(D * H / epsilon)
        if scheme == "lecun":
            mu_sq = Hin / H + (2.0 * np.sqrt(Hin) / H) * logs
        elif scheme == "he":
            mu_sq = 1.0 + (2.0 / np.sqrt(Hin)) * logs
        elif scheme == "glorot":
            mu_sq = Hin / (H + Hin) + (2.0 * np.sqrt(Hin) / (H + Hin)) * logs
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        mus.append(float(np.sqrt(mu_sq)))
    cap = float(np.sqrt(glorot_mu_sq_cap(D, epsilon))) if scheme == "glorot" else None
    return WeightBoundSpec(mu=tuple(mus), beta=tuple(0.0 for _ in range(D)),
                           epsilon=epsilon, scheme=scheme, glorot_cap=cap)


def spectral_norm(M: np.ndarray, rtol: float = 1e-10, max_iter: int = 10000) -> float:
    """Largest singular value by power iteration on M^T M."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.size == 0 or not M.any():
        return 0.0
    G = M.T @ M
    rng = np.random.default_rng(0)
    v = rng.normal(size=G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v_new = w / norm
        lam_new = float(v_new @ (G @ v_new))
        if abs(lam_new - lam) <= rtol * max(1.0, abs(lam_new)):
            return float(np.sqrt(max(lam_new, 0.0)))
        v, lam = v_new, lam_new
    raise NonConvergenceError("power iteration did not converge", last_iterate=v)


def batched_spectral_norms(Ws: np.ndarray, iters: int = 20, seed: int = 0) -> np.ndarray:
    """Power-iteration estimates for a (B, n, m) stack of matrices."""
    rng = np.random.default_rng(seed)
    B, n, m = Ws.shape
    v = rng.normal(size=(B, m))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(iters):
        w = np.einsum("bnm,bm->bn", Ws, v)
        u = np.einsum("bnm,bn->bm", Ws, w)
        nrm = np.linalg.norm(u, axis=1, keepdims=True)
        v = u / np.maximum(nrm, 1e-300)
    w = np.einsum("bnm,bm->bn", Ws, v)
    return np.linalg.norm(w, axis=1)
