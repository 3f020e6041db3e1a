"""Command-line surface: config parsing, orchestration, persistence, reporting.

Subcommands: validate | simulate | meanfield | chaos | lfpe | report.
Configs are INI-style documents with sections [objective], [cutoff],
[params], [experiment], [output]; unknown keys are rejected.  Every run
writes a RunRecord JSON whose id is a content hash of the resolved config,
the seed, and the package version, plus '#'-headed CSV artifacts carrying
that id.  Exit codes: 0 success, 1 usage or parse error, 2 gate failure,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import datetime
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .measures import GridDensity, QuadratureSpec, make_test_dictionary
from .model import (
    CboParams,
    CertificationError,
    certify_objective,
    kappa,
    make_cutoff,
    quadratic_objective,
    required_lambda,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_GATE = 2
EXIT_RUNTIME = 3


_SCHEMA = {
    "objective": {"kind": str, "minimizer": float, "scale": float},
    "cutoff": {"center": float, "inner_radius": float},
    "params": {
        "dim": int,
        "lambda": float,
        "sigma": float,
        "alpha": float,
        "r_cut": float,
        "c0": float,
        "dt": float,
        "horizon": float,
        "n_particles": int,
        "n_snapshots": int,
    },
    "experiment": {
        "kind": str,
        "n_list": str,
        "replicas": int,
        "n_cells": int,
        "init_lo": float,
        "init_hi": float,
        "metric": str,
        "functional": str,
        "s": float,
        "xi_max": float,
        "n_nodes": int,
        "z1": float,
        "z2": float,
        "flow_kind": str,
        "slack": float,
    },
    "output": {"label": str},
}

_DEFAULTS = {
    "objective": {"kind": "quadratic", "minimizer": 0.0, "scale": 1.0},
    "cutoff": {"center": 0.0, "inner_radius": 0.5},
    "params": {
        "dim": 1,
        "lambda": 5.0,
        "sigma": 0.3,
        "alpha": 0.5,
        "r_cut": 0.5,
        "c0": 0.0,
        "dt": 2e-4,
        "horizon": 1.0,
        "n_particles": 32,
        "n_snapshots": 41,
    },
    "experiment": {
        "kind": "simulate",
        "n_list": "16,32,64,128,256",
        "replicas": 200,
        "n_cells": 512,
        "init_lo": -0.4,
        "init_hi": 0.4,
        "metric": "w2",
        "functional": "variance",
        "s": 4.5,
        "xi_max": 64.0,
        "n_nodes": 1024,
        "z1": 0.3,
        "z2": -0.05,
        "flow_kind": "m1",
        "slack": 0.15,
    },
    "output": {"label": "run"},
}


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    """Parse and schema-validate a config file; apply defaults."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    resolved = {sec: dict(vals) for sec, vals in _DEFAULTS.items()}
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            typ = _SCHEMA[sec][key]
            try:
                resolved[sec][key] = typ(raw) if typ is not str else raw
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {raw!r} ({exc})") from exc
    return resolved


def _build(config: dict):
    o = config["objective"]
    if o["kind"] != "quadratic":
        raise ConfigError(f"unsupported objective kind {o['kind']!r}")
    pd = config["params"]
    dim = pd["dim"]
    obj = quadratic_objective(np.full(dim, o["minimizer"]), scale=o["scale"])
    c = config["cutoff"]
    bump = make_cutoff(center=np.full(dim, c["center"]), inner_radius=c["inner_radius"])
    snaps = tuple(np.linspace(0.0, pd["horizon"], pd["n_snapshots"]))
    p = CboParams(
        dim=dim,
        lambda_=pd["lambda"],
        sigma=pd["sigma"],
        alpha=pd["alpha"],
        r_cut=pd["r_cut"],
        c0=np.full(dim, pd["c0"]),
        dt=pd["dt"],
        horizon=pd["horizon"],
        snapshot_times=snaps,
        n_particles=pd["n_particles"],
    )
    return p, obj, bump


@dataclass
class RunRecord:
    run_id: str
    config: dict
    seed: int
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def save(self, out_dir: str) -> str:
        path = os.path.join(out_dir, f"{self.run_id}.json")
        with open(path, "w") as fh:
            json.dump(
                {
                    "run_id": self.run_id,
                    "config": self.config,
                    "seed": self.seed,
                    "started": self.started,
                    "finished": self.finished,
                    "outputs": self.outputs,
                    "summary": self.summary,
                },
                fh,
                indent=2,
                sort_keys=True,
            )
        return path


def make_run_id(config: dict, seed: int) -> str:
    blob = json.dumps({"config": config, "seed": seed, "version": __version__}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_csv(out_dir: str, run_id: str, name: str, columns, rows) -> str:
    """CSV with one '#' header line carrying run id and column names."""
    path = os.path.join(out_dir, f"{run_id}_{name}.csv")
    with open(path, "w") as fh:
        fh.write(f"# run_id={run_id} columns={','.join(columns)}\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")
    return path


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _out_dir(args) -> str:
    d = args.out or os.environ.get("CBO_OUT_DIR", "./runs")
    os.makedirs(d, exist_ok=True)
    return d


def cmd_validate(args) -> int:
    config = load_config(args.config)
    p, obj, bump = _build(config)
    req = required_lambda(p, obj)
    kap = kappa(p, obj)
    try:
        certify_objective(obj, np.asarray(p.c0), 2.0 * p.r_cut, n_samples=20000)
        cert = "ok"
    except CertificationError as exc:
        cert = f"failed: {exc}"
    print(f"required_lambda = {req:.6g}")
    print(f"lambda          = {p.lambda_:.6g}")
    print(f"kappa           = {float(kap):.12g}")
    print(f"objective certification: {cert}")
    gate_ok = (not kap.below_gate) and cert == "ok"
    print(f"gate: {'pass' if gate_ok else 'FAIL'}")
    if not gate_ok and not args.override_lambda_gate:
        return EXIT_GATE
    return EXIT_OK


def _prepare_record(args, config):
    seed = args.seed
    run_id = make_run_id(config, seed)
    out_dir = _out_dir(args)
    path = os.path.join(out_dir, f"{run_id}.json")
    if os.path.exists(path) and not args.force:
        print(f"run {run_id} already recorded at {path}; skipping (use --force to rerun)")
        return None, run_id, out_dir
    rec = RunRecord(run_id=run_id, config=config, seed=seed, started=_now())
    return rec, run_id, out_dir


def cmd_simulate(args) -> int:
    from .dynamics import simulate
    from .measures import EmpiricalMeasure

    config = load_config(args.config)
    p, obj, bump = _build(config)
    rec, run_id, out_dir = _prepare_record(args, config)
    if rec is None:
        return EXIT_OK
    e = config["experiment"]
    rng = np.random.default_rng(args.seed)
    pts = rng.uniform(e["init_lo"], e["init_hi"], size=(p.n_particles, p.dim))
    init = EmpiricalMeasure.from_points(pts)
    path = simulate(p, obj, bump, init, seed=args.seed)
    rows = []
    for t, snap in path.snapshots:
        for i, x in enumerate(snap.points):
            rows.append((float(t), i, *map(float, x)))
    csv1 = write_csv(out_dir, run_id, "snapshots", ["t", "particle"] + [f"x{j}" for j in range(p.dim)], rows)
    from .measures import consensus

    cons_rows = [
        (float(t), float(np.atleast_1d(snap.mean())[0]), float(consensus(snap, obj, p.alpha)[0]))
        for t, snap in path.snapshots
    ]
    csv2 = write_csv(out_dir, run_id, "consensus", ["t", "mean", "consensus"], cons_rows)
    rec.outputs = [os.path.basename(csv1), os.path.basename(csv2)]
    rec.summary = {"clamp_events": path.clamp_events, "n_snapshots": len(path.snapshots)}
    rec.finished = _now()
    print(rec.save(out_dir))
    return EXIT_OK


def _grid_init(config, p):
    e = config["experiment"]
    c0 = float(np.asarray(p.c0).ravel()[0])
    return GridDensity.uniform(
        c0 - 2.0 * p.r_cut, c0 + 2.0 * p.r_cut, e["n_cells"],
        support=(e["init_lo"], e["init_hi"]),
    )


def cmd_meanfield(args) -> int:
    from .meanfield import NoSignalError, decay_diagnostics, estimate_limit_point, fpe_solve_1d

    config = load_config(args.config)
    p, obj, bump = _build(config)
    rec, run_id, out_dir = _prepare_record(args, config)
    if rec is None:
        return EXIT_OK
    flow = fpe_solve_1d(_grid_init(config, p), p, obj, bump)
    xt = estimate_limit_point(flow)
    kap = kappa(p, obj)
    rows = [
        (float(t), float(m), float(c))
        for t, m, c in zip(flow.times, flow.mean_path, flow.consensus_path)
    ]
    csv1 = write_csv(out_dir, run_id, "meanfield_paths", ["t", "mean", "consensus"], rows)
    rec.outputs = [os.path.basename(csv1)]
    summary = {
        "x_tilde": float(xt),
        "x_tilde_converged": xt.converged,
        "kappa_theory": float(kap),
    }
    try:
        rep = decay_diagnostics(flow, float(xt), float(kap), slack=config["experiment"]["slack"])
        summary.update(
            decay_rate_mean=rep.fitted_rate_mean,
            decay_rate_consensus=rep.fitted_rate_consensus,
            decay_pass=rep.passed,
        )
    except NoSignalError as exc:
        summary["decay_warning"] = str(exc)
        print(f"warning: {exc}")
    rec.summary = summary
    rec.finished = _now()
    print(rec.save(out_dir))
    return EXIT_OK


def cmd_chaos(args) -> int:
    from .chaos import joint_decay_study, uniform_sampler, weak_error_study
    from .functionals import FunctionalSpec
    from .meanfield import fpe_solve_1d

    config = load_config(args.config)
    p, obj, bump = _build(config)
    rec, run_id, out_dir = _prepare_record(args, config)
    if rec is None:
        return EXIT_OK
    e = config["experiment"]
    n_list = [int(v) for v in e["n_list"].split(",")]
    sampler = uniform_sampler(e["init_lo"], e["init_hi"], p.dim)
    kap = float(kappa(p, obj))
    summary = {"kappa_theory": kap}
    outputs = []
    if e["kind"] == "weak_error":
        if e["functional"] == "variance":
            phi = FunctionalSpec.variance()
        else:
            phi = FunctionalSpec.centered_fw(e["s"], QuadratureSpec(e["xi_max"], e["n_nodes"]))
        ref = fpe_solve_1d(_grid_init(config, p), p, obj, bump)
        st = weak_error_study(p, obj, bump, sampler, phi, n_list, e["replicas"], args.seed, ref)
        rows = [
            (int(n), float(t), float(st.errors[i, j]), float(st.stderrs[i, j]), st.replicas)
            for i, n in enumerate(st.n_list)
            for j, t in enumerate(st.t_grid)
        ]
        outputs.append(write_csv(out_dir, run_id, "weak_error",
                                 ["N", "t", "estimate", "stderr", "n_replicas"], rows))
        summary.update(
            slope=st.slope, slope_ci=st.slope_ci, inconclusive=st.inconclusive,
            sup_errors={int(n): float(v) for n, v in zip(st.n_list, st.sup_errors)},
        )
    else:
        metric = e["metric"]
        theory = kap if metric == "w2" else 2.0 * kap
        jd = joint_decay_study(
            p, obj, bump, sampler, metric, n_list, e["replicas"], args.seed, theory,
            s=e["s"], quad=QuadratureSpec(e["xi_max"], e["n_nodes"]), slack=e["slack"],
        )
        rows = [
            (int(n), float(t), float(jd.values[i, j]), float(jd.stderrs[i, j]), e["replicas"])
            for i, n in enumerate(jd.n_list)
            for j, t in enumerate(jd.t_grid)
        ]
        outputs.append(write_csv(out_dir, run_id, f"joint_{metric}",
                                 ["N", "t", "estimate", "stderr", "n_replicas"], rows))
        summary.update(
            metric=metric, early_rate=jd.early_rate, theory_rate=jd.theory_rate,
            plateau_slope=jd.plateau_slope, pass_rate=jd.pass_rate,
            pass_plateau=jd.pass_plateau, fit_c=jd.fit_c, fit_rate=jd.fit_rate,
        )
    rec.outputs = [os.path.basename(x) for x in outputs]
    rec.summary = summary
    rec.finished = _now()
    print(rec.save(out_dir))
    return EXIT_OK


def cmd_lfpe(args) -> int:
    from .functionals import FunctionalSpec
    from .lfpe import compose_dU2, d1_flow, d2_flow, m1_flow, m2_flow, projection_decay
    from .meanfield import estimate_limit_point, fpe_solve_1d

    config = load_config(args.config)
    p, obj, bump = _build(config)
    rec, run_id, out_dir = _prepare_record(args, config)
    if rec is None:
        return EXIT_OK
    e = config["experiment"]
    bg = fpe_solve_1d(_grid_init(config, p), p, obj, bump)
    xt = float(estimate_limit_point(bg))
    kind = e["flow_kind"]
    summary = {"x_tilde": xt, "flow_kind": kind}
    if kind in ("m1", "d1"):
        flow = (m1_flow if kind == "m1" else d1_flow)(bg, e["z1"], p, obj, bump)
        g0 = bg.densities[0]
        rep = projection_decay(flow, xt, make_test_dictionary(g0.lo, g0.hi, 48, 7))
        rows = [(float(t), float(r)) for t, r in zip(rep.times, rep.residual_curve)]
        csv1 = write_csv(out_dir, run_id, f"{kind}_projection", ["t", "residual"], rows)
        rec.outputs = [os.path.basename(csv1)]
        summary.update(
            q_infty=rep.q_infty, fitted_rate=rep.fitted_rate, uniform_bound=rep.uniform_bound,
        )
    elif kind in ("m2", "d2"):
        if kind == "m2":
            q1 = m1_flow(bg, e["z1"], p, obj, bump)
            q2 = m1_flow(bg, e["z2"], p, obj, bump)
            second = m2_flow(bg, e["z1"], e["z2"], p, obj, bump)
        else:
            second, q1, q2 = d2_flow(bg, e["z1"], e["z2"], p, obj, bump)
        curve = compose_dU2(q1, q2, second, FunctionalSpec.variance())
        rows = [(float(t), float(v)) for t, v in zip(q1.times, curve)]
        csv1 = write_csv(out_dir, run_id, f"{kind}_curve", ["t", "value"], rows)
        rec.outputs = [os.path.basename(csv1)]
        summary.update(curve_max=float(np.abs(curve).max()), curve_final=float(curve[-1]))
    else:
        raise ConfigError(f"unknown flow_kind {kind!r}")
    rec.summary = summary
    rec.finished = _now()
    print(rec.save(out_dir))
    return EXIT_OK


_CLAIM_KEYS = [
    ("weak-error rate O(1/N)", "slope", None),
    ("mean-field decay", "decay_rate_mean", None),
    ("joint decay (w2)", "early_rate", ("metric", "w2")),
    ("joint decay (fw)", "early_rate", ("metric", "fw")),
    ("perturbation projection", "fitted_rate", None),
    ("composed-curve decay", "curve_final", None),
]


def cmd_report(args) -> int:
    out_dir = args.out or os.environ.get("CBO_OUT_DIR", "./runs")
    records = []
    bad = False
    if os.path.isdir(out_dir):
        for name in sorted(os.listdir(out_dir)):
            if not name.endswith(".json"):
                continue
            path = os.path.join(out_dir, name)
            try:
                with open(path) as fh:
                    records.append(json.load(fh))
            except (json.JSONDecodeError, OSError):
                print(f"{name}: invalid")
                bad = True
    print(f"{'claim':35s} {'status':10s} headline")
    for label, key, require in _CLAIM_KEYS:
        hits = [r for r in records if key in r.get("summary", {})]
        if require is not None:
            hits = [r for r in hits if r["summary"].get(require[0]) == require[1]]
        if not hits:
            print(f"{label:35s} {'not run':10s} -")
            continue
        latest = max(hits, key=lambda r: r.get("finished", ""))
        val = latest["summary"][key]
        flags = [v for k, v in latest["summary"].items() if k.endswith("pass") or k == "decay_pass"]
        status = "pass" if all(bool(f) for f in flags) or not flags else "FAIL"
        print(f"{label:35s} {status:10s} {key}={val}")
    return EXIT_RUNTIME if bad else EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cbolab", description=__doc__)
    parser.add_argument("command", choices=["validate", "simulate", "meanfield", "chaos", "lfpe", "report"])
    parser.add_argument("--config", default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None)
    parser.add_argument("--force", action="store_true")
    parser.add_argument("--override-lambda-gate", action="store_true")
    parser.add_argument("--threads", type=int, default=0)
    args = parser.parse_args(argv)
    if args.threads > 0:
        os.environ["OMP_NUM_THREADS"] = str(args.threads)
    try:
        if args.command == "report":
            return cmd_report(args)
        if args.config is None:
            print("error: --config is required for this command", file=sys.stderr)
            return EXIT_USAGE
        handler = {
            "validate": cmd_validate,
            "simulate": cmd_simulate,
            "meanfield": cmd_meanfield,
            "chaos": cmd_chaos,
            "lfpe": cmd_lfpe,
        }[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - surface as runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
