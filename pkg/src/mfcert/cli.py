"""``mfcert`` command line front end.

Every command writes its JSON artifact to ``--out`` and a ``summary.txt`` and
``manifest.json`` next to it. Artifacts are deterministic given the inputs and
seed; timestamps and versions live only in the manifest.

Exit codes: 0 ok, 1 error, 2 gate failure, 3 acceptance failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, _accel, specs
from .errors import InvalidModel, MfcertError

log = logging.getLogger("mfcert")

EXIT_OK, EXIT_ERROR, EXIT_GATE, EXIT_ACCEPT = 0, 1, 2, 3

DEFAULT_OUT = {
    "solve": "qstar.json",
    "certify": "cert.json",
    "brute": "truth.json",
    "limit": "limit.json",
    "sample": "samples.bin",
    "control": "report.json",
    "tilt": "tilt.json",
    "accept": "acceptance-report.json",
}


class Run:
    """Bookkeeping for one invocation: inputs, seeds, gates and errors for the manifest."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out or DEFAULT_OUT[args.command])
        self.dir = self.out.parent
        self.inputs: dict[str, str] = {}
        self.seeds: dict[str, int] = {}
        self.errors: list[dict] = []
        self.gates: dict = {}
        self.started = datetime.now(timezone.utc).isoformat()
        self.t0 = time.perf_counter()

    def read(self, path, what="model"):
        spec = specs.read_json(path, what)
        self.inputs[str(path)] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        return spec

    def write_json(self, obj, path: Path | None = None):
        path = path or self.out
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")

    def write_summary(self, rows: list[tuple[str, object]], headline: str | None = None):
        width = max((len(k) for k, _ in rows), default=0)
        lines = [headline] if headline else []
        lines += [f"{k.ljust(width)}  {_fmt(v)}" for k, v in rows]
        (self.dir / "summary.txt").write_text("\n".join(lines) + "\n")
        if headline:
            print(headline)

    def write_csv(self, name: str, header: list[str], rows):
        with open(self.dir / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    def write_manifest(self, code: int):
        import numba
        import scipy

        manifest = {
            "command": self.args.command,
            "argv": sys.argv[1:],
            "exit_code": code,
            "versions": {
                "mfcert": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "numba": numba.__version__,
            },
            "numba_kernels": _accel.USE_NUMBA,
            "threads": self.args.threads,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "gates": self.gates,
            "errors": self.errors,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "elapsed_s": round(time.perf_counter() - self.t0, 3),
        }
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.7g}"
    return str(v)


def _solve_opts(run: Run):
    from .mfsolver import SolveOptions

    d = run.read(run.args.opts, "opts") if run.args.opts else {}
    if run.args.seed is not None:
        d["seed"] = run.args.seed
    opts = SolveOptions.from_dict(d)
    run.seeds["solve"] = opts.seed
    return opts


def _load_qstar(run: Run, path):
    from .grid1d import ProductMeasure

    return ProductMeasure.from_dict(run.read(path, "qstar"))


# ---------------------------------------------------------------------------
# commands
def cmd_solve(run: Run) -> int:
    from .mfsolver import cavi_solve

    model = specs.build_model(run.read(run.args.model))
    res = cavi_solve(model, run.args.init, _solve_opts(run))
    run.write_json(res.to_dict())
    run.write_csv("elbo_trace.csv", ["update", "elbo"], enumerate(res.elbo_trace.tolist()))
    run.write_summary([
        ("elbo", res.elbo),
        ("sweeps", res.sweeps_used),
        ("residual", res.residual),
        ("fixed point residual", res.fixed_point_residual),
        ("means", np.round(res.qstar.means, 7).tolist()),
        ("variances", np.round(res.qstar.variances, 7).tolist()),
    ], headline=f"mean-field optimum: elbo = {res.elbo:.7f}")
    return EXIT_OK


def cmd_certify(run: Run) -> int:
    from .certify import certify
    from .mfsolver import cavi_solve

    model = specs.build_model(run.read(run.args.model))
    if run.args.qstar:
        q = _load_qstar(run, run.args.qstar)
        if q.n != model.n:
            raise InvalidModel(f"qstar has {q.n} marginals, model has n = {model.n}")
    else:
        q = cavi_solve(model, "default", _solve_opts(run)).qstar
    cert = certify(model, q)
    run.gates.update(cert.gates)
    run.write_json(cert.to_dict())
    run.write_summary([
        ("elbo", cert.elbo),
        ("var_bound", cert.var_bound),
        ("cross_bound", cert.cross_bound),
        ("trJ2_bound", cert.trJ2_bound),
        ("bound_source", cert.bound_source),
        ("kappa", cert.kappa),
        ("n", cert.n),
    ], headline=f"certified: logZ ∈ [{cert.logZ_lo:.7f}, {cert.logZ_hi:.7f}]")
    failed = [k for k, v in cert.gates.items() if str(v).startswith("fail")]
    if failed:
        for k in failed:
            run.errors.append({"code": "E_SYMMETRY_GATE", "gate": k, "message": cert.gates[k]})
        return EXIT_GATE
    return EXIT_OK


def cmd_brute(run: Run) -> int:
    from .oracle import truth_report

    model = specs.build_model(run.read(run.args.model))
    rep = truth_report(model)
    run.write_json(rep)
    run.write_summary([("logZ", rep["logZ"]), ("points per axis", rep["m"]), ("refinement change", rep["refinement_change"])],
                      headline=f"brute force: logZ = {rep['logZ']:.9f}")
    return EXIT_OK


def cmd_limit(run: Run) -> int:
    from .limits import LimitOptions, block_limit, scalar_limit

    V, K, W = specs.build_limit(run.read(run.args.model, "model"))
    d = run.read(run.args.opts, "opts") if run.args.opts else {}
    if run.args.seed is not None:
        d["seed"] = run.args.seed
    opts = LimitOptions.from_dict(d)
    run.seeds["limit"] = opts.seed
    res = scalar_limit(V, K, opts) if W is None else block_limit(V, K, W, opts)
    out = {"kind": "scalar" if W is None else "block", **res.to_dict()}
    run.write_json(out)
    run.write_summary([("value", res.value), ("residual", res.residual), ("iterations", res.iterations)],
                      headline=f"limit value = {res.value:.9f}")
    return EXIT_OK


def cmd_sample(run: Run) -> int:
    from .mfsolver import cavi_solve
    from .sampler import ChainOptions, sample_p, sample_q, write_samples

    model = specs.build_model(run.read(run.args.model))
    d = run.read(run.args.opts, "opts") if run.args.opts else {}
    if run.args.seed is not None:
        d["seed"] = run.args.seed
    copts = ChainOptions.from_dict(d)
    run.seeds["sample"] = copts.seed
    if run.args.target == "p":
        s = sample_p(model, copts)
    else:
        q = _load_qstar(run, run.args.qstar) if run.args.qstar else cavi_solve(model).qstar
        s = sample_q(q, (copts.steps - copts.burnin) * copts.n_chains, copts.seed)
    run.out.parent.mkdir(parents=True, exist_ok=True)
    write_samples(run.out, s.draws)
    summ = s.summary()
    (run.dir / "samples.json").write_text(json.dumps(_plain(summ), indent=2, sort_keys=True) + "\n")
    run.write_summary([(k, v) for k, v in summ.items() if k != "ess"] + [("mean", np.round(s.draws.mean(axis=0), 5).tolist())],
                      headline=f"{s.n_draws} draws from {run.args.target.upper()}")
    return EXIT_OK


def cmd_control(run: Run) -> int:
    from .control import run_control

    spec = run.read(run.args.problem, "problem")
    prob, sde = specs.build_control(spec)
    opts = _solve_opts(run)
    if sde is not None:
        sde = dict(sde)
        if run.args.seed is not None:
            sde["seed"] = run.args.seed
        run.seeds["sde"] = int(sde.get("seed", 0))
    rep = run_control(prob, opts, sde)
    run.gates.update(rep.gates)
    out = rep.to_dict()
    if rep.solve is not None:
        out["certificate"] = _control_cert(prob, rep)
        run.write_csv("elbo_trace.csv", ["update", "elbo"], enumerate(rep.solve.elbo_trace.tolist()))
    run.write_json(out)
    rows = [("v_orig", rep.v_orig if isinstance(rep.v_orig, float) else f"[{rep.v_orig.lo:.7g}, {rep.v_orig.hi:.7g}]"),
            ("v_dstr", rep.v_dstr), ("v_det", rep.v_det), ("gap_bound", rep.gap_bound), ("det_gap_bound", rep.det_gap_bound)]
    if rep.sim is not None:
        rows += [("simulated", rep.sim.mean), ("simulated stderr", rep.sim.stderr)]
    rows += [("flags", "; ".join(rep.flags) or "none")]
    run.write_summary(rows, headline=f"control values for n={prob.n}, T={prob.T:g}")
    return EXIT_OK


def _control_cert(prob, rep):
    from .certify import certify
    from .models import ReferenceModel

    q = rep.solve.qstar
    ref = prob.reference(q[0].grid.m, [qi.grid.center for qi in q])
    c = certify(ReferenceModel(prob.ng, ref), q)
    return {"bound_source": c.bound_source, "gates": c.gates, "logZ_lo": c.logZ_lo, "logZ_hi": c.logZ_hi}


def cmd_tilt(run: Run) -> int:
    from .mfsolver import tilt_solve

    model = specs.build_model(run.read(run.args.model))
    res = tilt_solve(model, run.args.t, _solve_opts(run))
    run.write_json(res.to_dict())
    run.write_summary([("value", res.value), ("iterations", res.iterations), ("ystar", np.round(res.ystar, 9).tolist())],
                      headline=f"gaussian tilt at t={run.args.t:g}: value = {res.value:.9f}")
    return EXIT_OK


def cmd_accept(run: Run) -> int:
    from . import acceptance

    extra = None
    if run.args.model:
        extra = [(Path(run.args.model).stem, specs.build_model(run.read(run.args.model)))]
        if run.args.suite not in ("brute", "all"):
            raise InvalidModel("--model fixtures are only used by the brute and all suites")
    run.seeds["acceptance"] = acceptance.SEED
    checks = acceptance.run_suite(run.args.suite, extra)
    verdict = acceptance.summarize(checks)
    run.write_json({"suite": run.args.suite, "criteria": {str(k): v for k, v in verdict.items()},
                    "checks": [c.to_dict() for c in checks], "passed": all(verdict.values())})
    rows = [(f"criterion {k}", "pass" if v else "FAIL") for k, v in verdict.items()]
    run.write_summary(rows, headline=f"acceptance suite {run.args.suite}: {'pass' if all(verdict.values()) else 'FAIL'}")
    for k, v in verdict.items():
        print(f"criterion {k}: {'pass' if v else 'FAIL'}")
    return EXIT_OK if all(verdict.values()) else EXIT_ACCEPT


COMMANDS = {
    "solve": cmd_solve,
    "certify": cmd_certify,
    "brute": cmd_brute,
    "limit": cmd_limit,
    "sample": cmd_sample,
    "control": cmd_control,
    "tilt": cmd_tilt,
    "accept": cmd_accept,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="primary output file; summary.txt and manifest.json go next to it")
    common.add_argument("--opts", help="options JSON for the command")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads (default: $MFCERT_THREADS)")
    common.add_argument("--seed", type=int, default=None, help="override the seed in the options")
    common.add_argument("--log", choices=("error", "info", "debug"), default="error")

    p = argparse.ArgumentParser(prog="mfcert", description="Certified mean-field approximations of log-concave Gibbs measures.")
    p.add_argument("--version", action="version", version=f"mfcert {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="run coordinate ascent to the mean-field optimum")
    s.add_argument("--model", required=True)
    s.add_argument("--init", choices=("default", "random"), default="default")

    s = sub.add_parser("certify", parents=[common], help="certified interval for log Z")
    s.add_argument("--model", required=True)
    s.add_argument("--qstar", help="product measure from `mfcert solve`; solved on the fly if absent")

    s = sub.add_parser("brute", parents=[common], help="tensor-quadrature log Z for n <= 4")
    s.add_argument("--model", required=True)

    s = sub.add_parser("limit", parents=[common], help="scalar or block mean-field limit")
    s.add_argument("--model", required=True, help="limit spec with V, K and 'scalar' or 'weights'")

    s = sub.add_parser("sample", parents=[common], help="draw from P (MALA) or from Q* (exact)")
    s.add_argument("--model", required=True)
    s.add_argument("--target", choices=("p", "q"), default="p")
    s.add_argument("--qstar")

    s = sub.add_parser("control", parents=[common], help="values of the cooperative control problem")
    s.add_argument("--problem", required=True)

    s = sub.add_parser("tilt", parents=[common], help="Gaussian tilt fixed point y = t E grad f")
    s.add_argument("--model", required=True)
    s.add_argument("--t", type=float, required=True)

    s = sub.add_parser("accept", parents=[common], help="run an acceptance suite")
    s.add_argument("suite", choices=("gaussian", "brute", "gibbs", "limits", "bayes", "control", "sampler", "all"))
    s.add_argument("--model", help="extra brute-force fixture (n <= 4)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log.upper()), format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None and os.environ.get("MFCERT_THREADS"):
        args.threads = int(os.environ["MFCERT_THREADS"])
    _accel.set_threads(args.threads)
    run = Run(args)
    try:
        code = COMMANDS[args.command](run)
    except MfcertError as exc:
        run.errors.append({"code": exc.code, "message": str(exc)})
        print(f"mfcert: error [{exc.code}]: {exc}", file=sys.stderr)
        code = EXIT_GATE if exc.gate else EXIT_ERROR
    except OSError as exc:
        run.errors.append({"code": "E_IO", "message": str(exc)})
        print(f"mfcert: error [E_IO]: {exc}", file=sys.stderr)
        code = EXIT_ERROR
    try:
        run.write_manifest(code)
    except OSError as exc:
        print(f"mfcert: could not write manifest: {exc}", file=sys.stderr)
        code = code or EXIT_ERROR
    return code


if __name__ == "__main__":
    sys.exit(main())
