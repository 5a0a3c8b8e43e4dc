"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 finished with a
convergence warning (results are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import __version__, detect, fredholm, hormander, kernel, kernels, model, simulate

EXIT_OK, EXIT_ERROR, EXIT_CONVERGENCE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(float(x), ".17g")


def _digest_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    argv: list
    flags: dict
    spec: Optional[dict]
    config_text: Optional[str]
    seed: Optional[int]
    versions: dict
    wall_time: float = 0.0
    outputs: dict = field(default_factory=dict)  # path -> sha256
    exit_code: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _versions() -> dict:
    import scipy

    return {"quickdetect": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "backend": kernels.BACKEND}


# subcommands ------------------------------------------------------------------------


def _spec(args) -> model.ProblemSpec:
    if not args.config:
        raise model.ConfigError("--config is required")
    return model.load_config(args.config)


def _emit(args, text: str, payload=None):
    if args.json and payload is not None:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        sys.stdout.write(text)


def cmd_family(args, ctx):
    spec = _spec(args)
    ov = spec.family.overlap_matrix()
    rows = [{"index": i + 1, "subset": list(s), "p": p, "k": len(s)} for i, (s, p) in enumerate(spec.family.entries())]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "subset", "p_i", "k_i"])
    for r in rows:
        w.writerow([r["index"], " ".join(map(str, r["subset"])), fmt(r["p"]), r["k"]])
    _emit(args, buf.getvalue(), {"n": spec.n, "N": spec.N, "subsets": rows, "overlap": ov.tolist()})
    return EXIT_OK


def cmd_hormander(args, ctx):
    spec = _spec(args)
    check = hormander.check_parabolic if args.parabolic else hormander.check_hormander
    point = [Fraction(x) for x in args.point.split(",")] if args.point else None
    cert = check(spec, point=point, depth=args.depth, full=args.full_search, seed=args.seed)
    d = cert.to_dict()
    lines = [f"rank {cert.rank} of {cert.N}{' (parabolic)' if cert.parabolic else ''}",
             f"spot-check ranks {cert.spot_ranks}"]
    lines += [f"  e_{j}: {w}" for j, w in d["witnesses"].items()]
    if cert.unreached:
        lines.append(f"unreached coordinates: {cert.unreached}")
    _emit(args, "\n".join(lines) + "\n", d)
    return EXIT_OK if cert.full and all(r == cert.N for r in cert.spot_ranks) else EXIT_ERROR


def cmd_solve1d(args, ctx):
    spec = _spec(args)
    kappa, _ = kernel.effective_params(spec, args.literal)
    phi_star = kernel.phi_star_all(spec, literal=args.literal)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "subset", "p_i", "kappa_i", "phi_star_i"])
    rows = []
    for i, (s, p) in enumerate(spec.family.entries()):
        w.writerow([i + 1, " ".join(map(str, s)), fmt(p), fmt(kappa[i]), fmt(phi_star[i])])
        rows.append({"index": i + 1, "subset": list(s), "p": p, "kappa": kappa[i], "phi_star": phi_star[i]})
    text = buf.getvalue()
    if args.out:
        _write(ctx, args.out, text)
    _emit(args, text, {"rows": [{k: (float(v) if isinstance(v, np.floating) else v) for k, v in r.items()}
                                for r in rows]})
    return EXIT_OK


def cmd_solve(args, ctx):
    spec = _spec(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", fredholm.ConvergenceWarning)
        b, report = fredholm.picard_solve(spec, grid_nodes=args.grid_nodes, n_samples=args.mc_samples,
                                          tol=args.tol, seed=args.seed, max_sweeps=args.max_sweeps,
                                          workers=args.workers)
    res = fredholm.residual_report(spec, b, args.mc_samples, seed=args.seed)
    b.meta["residual"] = res.to_dict()
    b.meta["spec"] = spec.to_dict()
    # wall time varies between runs; keep the data files byte-stable
    b.meta["report"].pop("wall_time", None)
    if args.out:
        csv_path, side = b.save(args.out)
        ctx.outputs += [csv_path, side]
    summary = {"iterations": report.iterations, "converged": report.converged, "sup_change": report.sup_change,
               "residual": res.to_dict(), "b_origin": float(b.values[0]), "wall_time": report.wall_time}
    text = (f"sweeps {report.iterations} converged {report.converged}\n"
            f"b at origin {fmt(b.values[0])}\n"
            f"residual max {fmt(res.max_abs)} mean {fmt(res.mean_abs)} stderr {fmt(res.max_stderr)}\n")
    _emit(args, text, summary)
    converged = report.converged and not any(issubclass(w.category, fredholm.ConvergenceWarning) for w in caught)
    return EXIT_OK if converged else EXIT_CONVERGENCE


def cmd_simulate(args, ctx):
    spec = _spec(args)
    scen = simulate.ScenarioConfig(measure=args.scenario)
    ens = simulate.simulate_paths(spec, scen, args.horizon, args.dt, args.paths, args.seed)
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "t"] + [f"X{i}" for i in range(1, spec.n + 1)]
                   + [f"Phi{i}" for i in range(1, spec.N + 1)] + ["Pi"])
        for p in range(ens.n_paths):
            for j, t in enumerate(ens.times):
                w.writerow([p, fmt(t)] + [fmt(x) for x in ens.X[p, j]] + [fmt(x) for x in ens.phi[p, j]]
                           + [fmt(ens.pi[p, j])])
        _write(ctx, args.out, buf.getvalue())
    summary = {"paths": ens.n_paths, "steps": ens.steps, "mean_pi_end": float(ens.pi[:, -1].mean()),
               "changed_by_horizon": float(np.mean(ens.theta <= ens.times[-1]))}
    _emit(args, f"paths {ens.n_paths} steps {ens.steps} mean Pi at horizon {fmt(summary['mean_pi_end'])}\n", summary)
    return EXIT_OK


def cmd_evaluate(args, ctx):
    spec = _spec(args)
    pi = spec.pi0 if args.pi is None else args.pi
    if args.threshold is not None:
        policy = detect.scalar_threshold_policy(args.threshold)
    elif args.boundary:
        b = fredholm.BoundaryGrid.load(args.boundary)
        policy = detect.BoundaryPolicy(b)
    else:
        raise model.ConfigError("evaluate needs --boundary or --threshold")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", detect.HorizonWarning)
        res = detect.evaluate_policy(spec, policy, args.horizon, None, args.paths, args.seed, pi)
    if args.out:
        fa, delay, _ = res.per_path(spec.c)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "theta", "beta", "tau", "falseAlarm", "delay"])
        for k in range(res.n_paths):
            w.writerow([k, fmt(res.theta[k]), int(res.beta[k]) + 1, fmt(res.stop_times[k]), int(fa[k]),
                        fmt(delay[k])])
        _write(ctx, args.out, buf.getvalue())
    print(json.dumps(res.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export(args, ctx):
    b = fredholm.BoundaryGrid.load(args.boundary)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if b.dim > 2:
        buf.write("# not plot-ready: more than two grid axes, raw node table follows\n")
    w.writerow([f"phi_{i}" for i in range(1, b.dim + 1)] + ["b"])
    for node, v in zip(b.nodes(), b.values):
        w.writerow([fmt(x) for x in node] + [fmt(v)])
    if args.out:
        _write(ctx, args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _write(ctx, path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    ctx.outputs.append(path)


# parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="problem config file (key=value)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--out", help="output file")

    p = _Parser(prog="quickdetect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("family", parents=[common], help="list the subset family")

    h = sub.add_parser("hormander", parents=[common], help="bracket rank check")
    h.add_argument("--parabolic", action="store_true")
    h.add_argument("--depth", type=int)
    h.add_argument("--full-search", action="store_true")
    h.add_argument("--point", help="comma-separated rational coordinates")

    s1 = sub.add_parser("solve1d", parents=[common], help="per-coordinate stopping points")
    s1.add_argument("--literal", action="store_true", help="unscaled kappa = 2 lam / mu^2")

    s = sub.add_parser("solve", parents=[common], help="solve for the boundary surface")
    s.add_argument("--grid-nodes", type=int, default=21)
    s.add_argument("--mc-samples", type=int, default=20000)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--max-sweeps", type=int, default=60)

    sm = sub.add_parser("simulate", parents=[common], help="simulate observation paths")
    sm.add_argument("--paths", type=int, default=100)
    sm.add_argument("--dt", type=float, default=1e-2)
    sm.add_argument("--horizon", type=float, default=1.0)
    sm.add_argument("--scenario", choices=[simulate.PRIOR, simulate.NO_CHANGE], default=simulate.PRIOR)

    e = sub.add_parser("evaluate", parents=[common], help="risk of a detection rule")
    e.add_argument("--boundary")
    e.add_argument("--threshold", type=float)
    e.add_argument("--pi", type=float)
    e.add_argument("--paths", type=int, default=10000)
    e.add_argument("--horizon", type=float, default=20.0)

    x = sub.add_parser("export", parents=[common], help="plot-ready surface CSV")
    x.add_argument("--boundary", required=True)

    r = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out-dir")
    return p


COMMANDS = {"family": cmd_family, "hormander": cmd_hormander, "solve1d": cmd_solve1d, "solve": cmd_solve,
            "simulate": cmd_simulate, "evaluate": cmd_evaluate, "export": cmd_export}


@dataclass
class _Context:
    outputs: list = field(default_factory=list)


def replay(manifest_path, out_dir=None) -> int:
    """Rerun a recorded command, writing outputs under ``out_dir`` (default: original paths)."""
    with open(manifest_path, encoding="utf-8") as fh:
        m = json.load(fh)
    argv = list(m["argv"])
    if m.get("config_text") is not None and out_dir is not None:
        cfg = os.path.join(out_dir, "replay.cfg")
        with open(cfg, "w", encoding="utf-8") as fh:
            fh.write(m["config_text"])
        argv = _replace_flag(argv, "--config", cfg)
    if out_dir is not None and m["flags"].get("out"):
        argv = _replace_flag(argv, "--out", os.path.join(out_dir, os.path.basename(m["flags"]["out"])))
    return dispatch(argv)


def _replace_flag(argv, flag, value):
    out = list(argv)
    for i, a in enumerate(out):
        if a == flag and i + 1 < len(out):
            out[i + 1] = value
            return out
        if a.startswith(flag + "="):
            out[i] = f"{flag}={value}"
            return out
    return out + [flag, value]


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    if args.command == "replay":
        return replay(args.manifest, args.out_dir)
    ctx = _Context()
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, ctx)
    except (model.ModelError, ValueError, OSError, kernel.BracketError, kernel.QuadratureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if getattr(args, "out", None):
        config_text = None
        spec_dict = None
        if getattr(args, "config", None):
            with open(args.config, encoding="utf-8") as fh:
                config_text = fh.read()
            spec_dict = model.parse_config(config_text).to_dict()
        flags = {k: v for k, v in vars(args).items() if k != "command"}
        manifest = RunManifest(args.command, argv, flags, spec_dict, config_text, args.seed, _versions(),
                               time.perf_counter() - t0, {p: _digest_file(p) for p in ctx.outputs}, code)
        manifest.write(args.out + ".manifest.json")
    return code


def main():  # pragma: no cover - thin wrapper
    sys.exit(dispatch())


if __name__ == "__main__":  # pragma: no cover
    main()
