"""Command-line entry point: ``compsketch <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .decoder import DecodeConfig, decode, decode_gmm
from .errors import SketchError
from .frequencies import FREQ_VERSION, load_frequencies, sample_frequencies, save_frequencies
from .harness import ExperimentConfig, generate_synthetic, load_toml, phase_diagram
from .mixtures import hypothesis_from_json, hypothesis_to_json
from .models import Family, KernelParams
from .risk import clustering_risk, gmm_nll
from .sketching import SKETCH_VERSION, finalize, load_sketch, merge, save_sketch, sketch_stream

EXIT_BUDGET = 2


def _read_matrix(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def _sigma_chol(path, d):
    if path is None:
        return None
    L = _read_matrix(path)
    if L.shape != (d, d):
        raise SketchError(f"Cholesky factor file must hold a {d}x{d} matrix")
    return L


def cmd_freq(a):
    fam = Family.parse(a.family)
    L = _sigma_chol(a.sigma_chol, a.d)
    if a.eps is None:
        p = KernelParams.for_separation(fam, a.d, a.k, a.s, L)
    else:
        p = KernelParams(fam, a.d, a.s, a.eps, L)
    fs = sample_frequencies(p, a.m, a.seed)
    save_frequencies(fs, a.out)
    print(json.dumps({"out": a.out, "m": fs.m, "d": fs.d, "family": fam.label, "eps": p.eps,
                      "seed": fs.seed, "sha256": fs.content_hash.hex()}))
    return 0


def cmd_sketch(a):
    fs = load_frequencies(a.freq)
    sk = None
    for path in a.data or []:
        part = sketch_stream(fs, _read_matrix(path), a.chunk)
        sk = part if sk is None else merge(sk, part)
    for path in a.merge or []:
        part = load_sketch(path)
        sk = part if sk is None else merge(sk, part)
    if sk is None:
        raise SketchError("nothing to sketch: give --input and/or --merge")
    save_sketch(sk, a.out)
    print(json.dumps({"out": a.out, "n": sk.n, "m": sk.m, "freq_sha256": sk.freq_hash.hex()}))
    return 0


def cmd_decode(a):
    fs = load_frequencies(a.freq)
    sk = load_sketch(a.sketch)
    if sk.freq_hash != fs.content_hash:
        raise SketchError("sketch was not built with this frequency file")
    y = finalize(sk)
    p = fs.params
    cfg = DecodeConfig(a.k, a.eps, a.radius, seed=a.seed, restarts=a.restarts,
                       enforce_separation=a.enforce_separation)
    if a.gmm:
        res = decode_gmm(fs, p, y, cfg)
    else:
        res = decode(fs, p, y, cfg)
    Path(a.out).write_text(hypothesis_to_json(res.hypothesis, p.family, a.eps, a.radius) + "\n")
    print(json.dumps({"out": a.out, "residual_norm": res.residual_norm, "converged": res.converged,
                      "seed": a.seed, "freq_sha256": fs.content_hash.hex()}))
    return 0 if res.converged else EXIT_BUDGET


def cmd_eval(a):
    X = _read_matrix(a.data)
    h, _ = hypothesis_from_json(Path(a.hypothesis).read_text())
    if a.task == "gmm":
        L = _sigma_chol(a.sigma_chol, h.d)
        Sigma = np.eye(h.d) if L is None else L @ L.T
        rep = gmm_nll(X, h, Sigma)
    else:
        rep = clustering_risk(X, h, 2 if a.task == "kmeans" else 1)
    print(json.dumps(rep.to_dict()))
    return 0


def _section(cfg: dict, kind: str) -> dict:
    return dict(cfg.get(kind, {k: v for k, v in cfg.items() if not isinstance(v, dict)}))


def cmd_verify(a):
    from . import theory

    cfg = _section(load_toml(a.config), a.kind)
    seed = a.seed
    fam = Family.parse(cfg.get("family", "dirac"))
    d = int(cfg.get("d", 2))
    k = int(cfg.get("k", 1))
    s = float(cfg.get("s", 1.0))
    if a.kind == "rip":
        p = KernelParams.for_separation(fam, d, k, s)
        fs = sample_frequencies(p, int(cfg.get("m", 1024)), seed)
        rep = theory.empirical_rip(p, fs, k, int(cfg.get("trials", 100)), seed, cfg.get("R"))
        out = {"kind": "rip", "min_ratio": rep.min_ratio, "max_ratio": rep.max_ratio, "trials": rep.trials,
               "skipped": rep.skipped, "m": rep.m, "k": k, "d": d, "s": s, "eps": rep.eps, "seed": seed,
               "freq_sha256": fs.content_hash.hex()}
    elif a.kind == "moments":
        p = KernelParams.for_separation(fam, d, k, s)
        out = {"kind": "moments", "results": []}
        for q in cfg.get("q", [2, 3]):
            rep = theory.moment_bound_check(p, int(q), int(cfg.get("mc_samples", 10**5)), seed)
            out["results"].append({"q": rep.q, "lhs": rep.lhs_mc, "stderr": rep.stderr, "rhs": rep.rhs,
                                   "pass": rep.passed})
    elif a.kind == "separation":
        from .frequencies import sample_dirac_frequencies

        fs = sample_dirac_frequencies(d, int(cfg.get("m", 1000)), s, seed)
        rows = theory.separation_witness(cfg.get("eps_list", [1.0, 0.5, 0.25, 0.125]), float(cfg.get("R", 1.0)),
                                         int(cfg.get("p", 1)), fs)
        out = {"kind": "separation", "rows": [vars(r) for r in rows], "seed": seed}
    else:
        p = KernelParams(Family.GAUSS, d, s, 1.0)
        theta = np.zeros(d)
        theta[0] = float(cfg.get("shift", 0.5))
        rep = theory.pinsker_check(p, theta, np.zeros(d), int(cfg.get("m", 1000)), int(cfg.get("trials", 100)), seed)
        out = {"kind": "pinsker", "passed": rep.passed, "trials": int(rep.lhs.size), "rhs": rep.rhs,
               "mmd": rep.mmd, "max_lhs": float(rep.lhs.max()), "seed": seed}
    text = json.dumps(out, indent=2)
    if a.out:
        Path(a.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_gen(a):
    data = generate_synthetic(a.task, a.k, a.d, a.n, a.eps, a.radius, balance=a.balance, noise=a.noise, seed=a.seed)
    np.savetxt(a.out, data.X, delimiter=",", fmt="%.17g", header=f"seed={a.seed} task={a.task} k={a.k} d={a.d}")
    if a.truth:
        fam = Family.GAUSS if a.task == "gmm" else Family.DIRAC
        Path(a.truth).write_text(hypothesis_to_json(data.truth, fam, a.eps, a.radius) + "\n")
    print(json.dumps({"out": a.out, "n": a.n, "seed": a.seed}))
    return 0


def cmd_phase(a):
    raw = load_toml(a.config) if a.config else {}
    raw["seed"] = a.seed
    if a.out:
        raw["out"] = a.out
    if a.timings_out:
        raw["timings_out"] = a.timings_out
    cfg = ExperimentConfig.from_mapping(raw)
    res = phase_diagram(cfg, stop_after=None if a.full else 2)
    print(json.dumps({"out": cfg.out, "slope": res.slope, "intercept": res.intercept, "r2": res.r2,
                      "transitions": {f"{k},{d}": v for (k, d), v in res.transitions.items()}}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="compsketch", description="Compressive clustering and mixture fitting.")
    ap.add_argument("--version", action="version",
                    version=f"compsketch {__version__} (frequency format {FREQ_VERSION}, sketch format {SKETCH_VERSION})")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("freq", help="draw a frequency set")
    f.add_argument("--family", default="dirac")
    f.add_argument("--d", type=int, required=True)
    f.add_argument("--m", type=int, required=True)
    f.add_argument("--s", type=float, required=True)
    f.add_argument("--eps", type=float)
    f.add_argument("--k", type=int, default=1, help="component budget used to derive eps when --eps is absent")
    f.add_argument("--sigma-chol")
    f.add_argument("--seed", type=int, required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_freq)

    s = sub.add_parser("sketch", help="sketch CSV data and/or merge sketches")
    s.add_argument("--freq", required=True)
    s.add_argument("--input", "--data", dest="data", nargs="*", help="headerless CSV files, one sample per row")
    s.add_argument("--merge", nargs="*")
    s.add_argument("--chunk", type=int, default=4096)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sketch)

    d = sub.add_parser("decode", help="fit a hypothesis to a sketch")
    d.add_argument("--freq", required=True)
    d.add_argument("--sketch", required=True)
    d.add_argument("--k", type=int, required=True)
    d.add_argument("--eps", type=float, required=True)
    d.add_argument("--radius", type=float, required=True)
    d.add_argument("--gmm", action="store_true")
    d.add_argument("--restarts", type=int, default=3)
    d.add_argument("--enforce-separation", action="store_true")
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="risk of a hypothesis on CSV data")
    e.add_argument("--task", choices=["kmeans", "kmedians", "gmm"], required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--hypothesis", required=True)
    e.add_argument("--sigma-chol")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="empirical checks of the theory")
    v.add_argument("kind", choices=["rip", "moments", "separation", "pinsker"])
    v.add_argument("--config", required=True)
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gen", help="generate synthetic data")
    g.add_argument("--task", choices=["kmeans", "kmedians", "gmm"], default="kmeans")
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--eps", type=float, required=True)
    g.add_argument("--radius", type=float, required=True)
    g.add_argument("--balance", default="uniform", choices=["uniform", "random"])
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--truth")
    g.set_defaults(func=cmd_gen)

    ph = sub.add_parser("phase", help="phase-transition sweep")
    ph.add_argument("--config")
    ph.add_argument("--seed", type=int, required=True)
    ph.add_argument("--out")
    ph.add_argument("--timings-out")
    ph.add_argument("--full", action="store_true", help="run every cell instead of stopping columns early")
    ph.set_defaults(func=cmd_phase)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SketchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
