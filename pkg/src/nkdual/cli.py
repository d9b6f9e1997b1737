"""Command-line front end.

Subcommands: hermite, bounds, kernels, lenk-verify, rademacher. One JSON
config file plus flag overrides; CSV for matrices/series, JSON for
structured reports. Outputs are reproducible: identical config + seed
give byte-identical files. On failure, partial outputs are removed and
the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import global_dual, hermite, kernels, lenk, local_dual, netgraph, oracle


@dataclass
class ExperimentConfig:
    network: Optional[str] = None        # path to a network JSON
    dataset: Optional[str] = None        # path to a dataset JSON
    activation: str = "relu"
    epsilon: float = 0.05
    eta: float = 0.75
    eta_lr: float = 0.05
    k_max: int = 2
    K: int = 40
    Q: int = 6
    kernel: str = "ntk"
    seed: int = 0
    term_cap: int = 10**6
    scheme: str = "glorot"
    mu_delta: float = 0.05
    beta_delta: float = 0.0
    phi_choices: dict = field(default_factory=dict)
    out: str = "out"

    @staticmethod
    def load(path: Optional[str]) -> "ExperimentConfig":
        cfg = ExperimentConfig()
        if path:
            with open(path) as fh:
                doc = json.load(fh)
            for key, val in doc.items():
                if not hasattr(cfg, key):
                    raise ValueError(f"unknown config key {key!r}")
                setattr(cfg, key, val)
        return cfg

    def apply_overrides(self, args):
        for key in ("epsilon", "eta", "eta_lr", "k_max", "kernel", "seed",
                    "term_cap", "out", "activation", "K"):
            val = getattr(args, key.replace("-", "_"), None)
            if val is not None:
                setattr(self, key, val)
        if getattr(args, "phi_choices", None):
            self.phi_choices = json.loads(args.phi_choices)


class OutputSet:
    """Track written files so failures can clean up partial output."""

    def __init__(self, out_dir: str):
        self.dir = Path(out_dir)
        self.written: List[Path] = []

    def write(self, name: str, text: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        path.write_text(text)
        self.written.append(path)

    def cleanup(self):
        for p in self.written:
            try:
                p.unlink()
            except OSError:
                pass


def _load_network(cfg: ExperimentConfig) -> netgraph.Skeleton:
    if cfg.network:
        return netgraph.Skeleton.from_json(Path(cfg.network).read_text())
    return netgraph.build_feedforward_relu([3, 3, 1], input_width=3)


def _load_dataset(cfg: ExperimentConfig, sk: netgraph.Skeleton) -> lenk.Dataset:
    if cfg.dataset:
        doc = json.loads(Path(cfg.dataset).read_text())
        return lenk.Dataset(xs=np.array(doc["xs"], dtype=float),
                            ys=np.array(doc["ys"], dtype=float))
    rng = np.random.default_rng(cfg.seed)
    xs = rng.normal(0.0, 0.5, size=(2, sk.n))
    ys = rng.normal(0.0, 0.5, size=(2, sk.m))
    return lenk.Dataset(xs=xs, ys=ys)


def _series_csv(header: str, columns) -> str:
    lines = [header]
    for row in zip(*columns):
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_hermite(cfg: ExperimentConfig, out: OutputSet) -> bool:
    act = hermite.get_activation(cfg.activation)
    K = cfg.K
    exp = hermite.hermite_transform(act, 0.0, K)
    out.write("coefficients.csv", hermite.coefficient_table_csv(exp))

    zs = np.linspace(-3.0, 3.0, 121)
    out.write("activation.csv", _series_csv("zeta,tau", (zs, act(zs))))

    zpos = np.linspace(0.0, 3.0, 61)
    mags = np.array([hermite.magnitude_fn(exp, z) for z in zpos])
    cols = [zpos, mags]
    header = "zeta,magnitude_series"
    if cfg.activation == "relu":
        header += ",magnitude_closed"
        cols.append(hermite.magnitude_relu_closed(zpos))
    out.write("magnitude.csv", _series_csv(header, cols))

    # rectified activations for a few center pairs, plus the envelope
    pairs = [(0.0, 0.0), (0.5, 0.5), (-1.0, -1.0), (0.5, -0.5)]
    prof = hermite.estimate_profile(act, cfg.eta, omega=2.0, K=K)
    r = prof.radius_sq if math.isfinite(prof.radius_sq) else 1.0
    zgrid = np.linspace(0.0, min(r, 2.0), 41)
    cols = [zgrid]
    names = ["zeta"]
    for (a, b) in pairs:
        e1 = hermite.hermite_transform(act, a, K)
        e2 = hermite.hermite_transform(act, b, K)
        cols.append(np.array([
            hermite.rectified_activation(e1, e2, cfg.eta, z, radius_check=False)
            for z in zgrid]))
        names.append(f"rect_{a}_{b}")
    out.write("rectified.csv", _series_csv(",".join(names), cols))
    env = np.array([hermite.rectified_envelope(act, cfg.eta, 2.0, z, K=K)
                    for z in zgrid])
    out.write("envelope.csv", _series_csv(
        "zeta,envelope", (zgrid, env)))
    out.write("profile.json", json.dumps({
        "eta": cfg.eta, "omega": 2.0,
        "radius_sq": prof.radius_sq, "bound_sq": prof.bound_sq,
    }, sort_keys=True, indent=2))
    return True


def cmd_bounds(cfg: ExperimentConfig, out: OutputSet) -> bool:
    sk = _load_network(cfg)
    spec = netgraph.norm_bounds(sk, cfg.scheme, cfg.epsilon)
    phi = {}
    for key, val in cfg.phi_choices.items():
        a, j = key.split("->")
        phi[(int(a), int(j))] = float(val)
    ledger = global_dual.compute_global_ledger(sk, spec, phi_choices=phi)
    out.write("global_ledger.json", ledger.to_json())

    rng = np.random.default_rng(cfg.seed)
    params = netgraph.initialize(sk, cfg.scheme if cfg.scheme != "measured"
                                 else "glorot", cfg.seed)
    probes = rng.normal(0.0, 0.5, size=(4, sk.n))
    step = local_dual.step_spec_empirical(
        sk, params, probes,
        mu_delta=[cfg.mu_delta] * sk.D, beta_delta=[cfg.beta_delta] * sk.D,
        eta=cfg.eta)
    local_ledger = local_dual.compute_local_ledger(sk, spec, step)
    out.write("local_ledger.json", local_ledger.to_json())
    report = local_dual.check_step_bound(sk, spec, step)
    out.write("admissibility.json", report.to_json())
    return True


def cmd_kernels(cfg: ExperimentConfig, out: OutputSet) -> bool:
    sk = _load_network(cfg)
    params = netgraph.initialize(sk, "glorot", cfg.seed)
    spec = netgraph.norm_bounds(sk, "glorot", cfg.epsilon)
    rng = np.random.default_rng(cfg.seed)
    inputs = rng.normal(0.0, 0.5, size=(6, sk.n))
    step = local_dual.step_spec_empirical(
        sk, params, inputs, mu_delta=[max(cfg.mu_delta, 1e-3)] * sk.D,
        beta_delta=[cfg.beta_delta] * sk.D, eta=cfg.eta)
    ctx = kernels.KernelContext(sk=sk, params=params, spec=spec, step=step,
                                K=cfg.K, Q=cfg.Q)
    kind = cfg.kernel.replace("-", "_")
    G = kernels.gram(ctx, kind, inputs)
    out.write("gram.csv", G.to_csv())
    out.write("gram.json", G.to_json())
    return bool(G.psd_ok)


def cmd_lenk_verify(cfg: ExperimentConfig, out: OutputSet) -> bool:
    if cfg.network:
        sk = _load_network(cfg)
    else:
        sk = netgraph.Skeleton(
            input_width=2, fanout=(3, 1), antecedents=((-1,), (0,)),
            activations=(((-1, 0), "linear"), ((0, 1), "poly:[0,0,1]")),
            gamma=0.0)
    rng = np.random.default_rng(cfg.seed)
    params = netgraph.Parameters(
        tuple(rng.normal(0.0, 0.4, (sk.fan_in(j), sk.fanout[j]))
              for j in range(sk.D)),
        tuple(np.zeros(sk.fanout[j]) for j in range(sk.D)))
    data = _load_dataset(cfg, sk)
    x = rng.normal(0.0, 0.5, size=sk.n)
    delta = lenk.gd_step(sk, params, data, cfg.eta_lr)
    brute = oracle.brute_delta_f(sk, params, delta, x)
    report = lenk.representor_report(sk, params, data, x, cfg.k_max,
                                     cfg.eta_lr, brute, cfg.term_cap)
    out.write("lenk_report.json", lenk.report_to_json(report))
    fixed = lenk.lenk_fixed(sk, params, delta, data, x, cfg.k_max, cfg.eta_lr)
    nct = lenk.lenk_nct(sk, params, data, x, cfg.k_max, cfg.eta_lr)
    diag = lenk.lenk_diag(sk, params, data, x, cfg.k_max, cfg.eta_lr)
    exact = np.array(report["exact_sum"])
    ladder = {
        "exact": float(np.max(np.abs(exact - brute))),
        "fixed": float(np.max(np.abs(fixed - brute))),
        "nct": float(np.max(np.abs(nct - brute))),
        "diag": float(np.max(np.abs(diag - brute))),
    }
    out.write("ladder.json", json.dumps(ladder, sort_keys=True, indent=2))
    return report["final_error_exact"] <= 1e-8


def cmd_rademacher(cfg: ExperimentConfig, out: OutputSet) -> bool:
    sk = _load_network(cfg)
    spec = netgraph.norm_bounds(sk, cfg.scheme, cfg.epsilon)
    ledger = global_dual.compute_global_ledger(sk, spec)
    rng = np.random.default_rng(cfg.seed)
    N = 8
    inputs = rng.normal(0.0, 1.0, size=(N, sk.n))
    inputs /= np.maximum(np.linalg.norm(inputs, axis=1, keepdims=True), 1.0)

    def sampler(seed):
        for trial in range(64):
            params = netgraph.initialize(sk, cfg.scheme, seed + 7919 * trial)
            ok = all(netgraph.spectral_norm(params.weights[j]) <= spec.mu[j]
                     for j in range(sk.D))
            if ok:
                return params
        return netgraph.initialize(sk, cfg.scheme, seed).scaled(0.0)

    pool_vals = oracle.network_pool_values(sk, sampler, inputs, pool=200,
                                           seed=cfg.seed)
    est, se = oracle.empirical_rademacher(pool_vals, trials=1000, seed=cfg.seed)
    bound = global_dual.rademacher_global(ledger, N)
    rows = {
        "N": N,
        "empirical": est,
        "stderr": se,
        "bound_global": bound,
        "dominated": bool(est <= bound + 3 * se),
    }
    if all(b == 0.0 for b in spec.beta):
        path = global_dual.rademacher_lipschitz(sk, 1.0, spec)
        rows["bound_lipschitz_over_sqrtN"] = path / math.sqrt(N)
        rows["dominated_lipschitz"] = bool(est <= path / math.sqrt(N) + 3 * se)
    out.write("rademacher.json", json.dumps(rows, sort_keys=True, indent=2))
    return rows["dominated"]


COMMANDS = {
    "hermite": cmd_hermite,
    "bounds": cmd_bounds,
    "kernels": cmd_kernels,
    "lenk-verify": cmd_lenk_verify,
    "rademacher": cmd_rademacher,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nkdual")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--kernel", default=None,
                    choices=["nngp", "ntk", "link-rect", "link-deriv"])
    ap.add_argument("--k-max", dest="k_max", type=int, default=None)
    ap.add_argument("--k", dest="K", type=int, default=None)
    ap.add_argument("--eta", type=float, default=None)
    ap.add_argument("--eta-lr", dest="eta_lr", type=float, default=None)
    ap.add_argument("--epsilon", type=float, default=None)
    ap.add_argument("--term-cap", dest="term_cap", type=int, default=None)
    ap.add_argument("--activation", default=None)
    ap.add_argument("--phi-choices", dest="phi_choices", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        cfg.apply_overrides(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"nkdual: invalid config: {exc}", file=sys.stderr)
        return 2
    out = OutputSet(cfg.out)
    try:
        ok = COMMANDS[args.command](cfg, out)
    except Exception as exc:  # partial outputs must not survive
        out.cleanup()
        print(f"nkdual: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
