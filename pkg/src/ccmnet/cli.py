"""Command-line entry point: ``ccmnet {synth,verify,decompose,simulate,report}``.

Exit codes
----------
0  success (certificate verified, closed loop passed the decay check)
1  configuration or usage error
2  synthesis failed (infeasible, solver failure or budget exceeded)
3  verification failed
4  decay check failed (or the closed loop diverged)
5  certificate does not belong to the configured model
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, equilibrium_target, load_config
from .errors import CCMError, ConfigError, DivergenceError, SynthesisFailed
from .geodesic import DEFAULT_SEGMENTS, DistributedController, admissibility_audit
from .scenarios import PlatoonTarget, scenario_platoon_tracking, synthesize_platoon
from .simulate import EquilibriumTarget, SimulationTrace, decay_check, integrate_closed_loop
from .synthesis.ansatz import GainAnsatz, MetricAnsatz, ParamRegistry
from .synthesis.ccm import corollary_R_synthesis, decomposition, solve_ccm, verify_certificate
from .synthesis.certificate import CCMCertificate
from .synthesis.lmi import CliqueLMI, chordal_split, synthesis_blocks

log = logging.getLogger("ccmnet")

EXIT_OK, EXIT_CONFIG, EXIT_SYNTH, EXIT_VERIFY, EXIT_DECAY, EXIT_FINGERPRINT = range(6)

TIMING_FILE = "timing.json"
CERT_FILE = "certificate.json"


# ----------------------------------------------------------------- helpers


def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("CCMNET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"CCMNET_THREADS must be an integer, got {env!r}") from None
    return 1


def _out_dir(args, run: RunConfig):
    if args.out_dir:
        return Path(args.out_dir)
    if "dir" in run.output:
        return Path(run.output["dir"])
    return Path("runs") / run.name


def _cert_path(args, run, out):
    if getattr(args, "cert", None):
        return Path(args.cert)
    return out / run.output.get("certificate", CERT_FILE)


def _load(args):
    run = load_config(args.config, seed=args.seed)
    run.synthesis.threads = _threads(args)
    return run


def _load_cert(path, run):
    try:
        cert = CCMCertificate.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read certificate ({exc.strerror})") from None
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: malformed certificate ({exc})") from None
    return cert


def _print(text=""):
    sys.stdout.write(text + "\n")


# -------------------------------------------------------------- subcommands


def synthesize(run: RunConfig, stats=None):
    """Run the configured synthesis; returns the certificate."""
    if run.form == "rho":
        return corollary_R_synthesis(run.model, run.synthesis, run.rho_degree, stats=stats)
    if run.anchor is not None:
        cert, _ = synthesize_platoon(run.model, run.platoon, run.synthesis,
                                     anchor_decay=run.anchor.get("decay"), stats=stats)
        return cert
    return solve_ccm(run.model, run.synthesis, stats=stats)


def cmd_synth(args):
    run = _load(args)
    out = _out_dir(args, run)
    stats = {}
    record = {"name": run.name, "N": run.model.N, "structure": run.structure,
              "lambda": run.synthesis.lam, "use_chordal": run.synthesis.use_chordal}
    cert, code = None, EXIT_OK
    t0 = time.perf_counter()
    try:
        cert = synthesize(run, stats)
        record["status"] = "verified"
    except SynthesisFailed as exc:
        log.error("synthesis failed: %s", exc)
        record["status"] = exc.status
        record["message"] = str(exc)
        if exc.certificate is not None:
            cert = exc.certificate
            code = EXIT_VERIFY
            record["status"] = "verify_failed"
        else:
            code = EXIT_SYNTH
    stats.setdefault("seconds", time.perf_counter() - t0)
    record.update({k: stats[k] for k in ("seconds", "rounds", "samples", "decisions", "cliques")
                   if k in stats})
    write_atomic(out / TIMING_FILE, json.dumps(record, indent=1, sort_keys=True) + "\n")
    if cert is not None:
        name = run.output.get("certificate", CERT_FILE)
        if code != EXIT_OK:
            name = "failed_" + name
        path = out / name
        write_atomic(path, cert.dumps(run.model))
        rep = cert.report
        _print(f"certificate: {path}")
        _print(f"worst eigenvalue {rep['worst_eigenvalue']:.6e} on {rep['points_checked']} points "
               f"(lambda={rep['lambda']:g}, density {rep['density']})")
    _print(f"synthesis: {record['status']} in {stats['seconds']:.3f} s")
    return code


def cmd_verify(args):
    run = _load(args)
    out = _out_dir(args, run)
    cert = _load_cert(_cert_path(args, run, out), run)
    if not cert.check_model(run.model):
        log.error("certificate fingerprint does not match the configured model")
        return EXIT_FINGERPRINT
    rep = verify_certificate(run.model, cert, threads=run.synthesis.threads)
    _print(json.dumps(rep, indent=1, sort_keys=True))
    return EXIT_OK if rep["pass"] else EXIT_VERIFY


def decomposition_report(run: RunConfig):
    """Clique structure of the synthesis matrix as a list of text lines."""
    model, cfg = run.model, run.synthesis
    tree, fill = decomposition(model, cfg.use_chordal)
    registry = ParamRegistry()
    metric = MetricAnsatz.build(model, registry, cfg.metric_degree, cfg.w_low, cfg.w_high)
    gain = GainAnsatz.build(model, registry, cfg.max_degree_Y, cfg.region)
    blocks = synthesis_blocks(model, metric.blocks, gain.blocks, cfg.lam)
    pieces = chordal_split(blocks.keys(), tree)
    lines = [f"model {model.name}: N={model.N}, n={model.n}, m={model.m}",
             f"cliques: {len(tree.cliques)}",
             f"sizes: {' '.join(str(len(c)) for c in tree.selectors)}",
             f"fill edges: {len(fill)}" + (" " + " ".join(f"{a}-{b}" for a, b in fill) if fill else "")]
    for k, piece in enumerate(pieces):
        lmi = CliqueLMI(model, blocks, piece, k)
        names = " ".join(str(v) for v in lmi.variables) or "-"
        lines.append(f"clique {k}: nodes {list(piece.nodes)} dim {lmi.size} variables {names}")
    return lines


def cmd_decompose(args):
    run = _load(args)
    for line in decomposition_report(run):
        _print(line)
    return EXIT_OK


def initial_states(run: RunConfig, x_star):
    spec = run.scenario.get("x0", {"policy": "random"})
    policy = spec["policy"]
    if policy == "target":
        return [np.array(x_star, dtype=float)]
    if policy == "explicit":
        vals = [np.asarray(v, dtype=float) for v in spec.get("values", [])]
        if not vals or any(v.size != run.model.n for v in vals):
            raise ConfigError(f"scenario.x0.values: need lists of {run.model.n} numbers")
        return vals
    rng = np.random.default_rng(spec.get("seed", 0))
    region = run.synthesis.region
    out = []
    for _ in range(spec.get("count", 10)):
        x = np.array(x_star, dtype=float)
        for k, v in enumerate(run.model.state_vars()):
            lo, hi = region.interval(v)
            if np.isfinite(lo) and np.isfinite(hi):
                x[k] = rng.uniform(lo, hi)
        out.append(x)
    return out


def _sidecar(trace, run, cert, extra):
    meta = dict(trace.meta)
    meta.update(extra)
    meta["config"] = run.name
    meta["certificate_fingerprint"] = None if cert is None else cert.fingerprints.get("model")
    return json.dumps(meta, indent=1, sort_keys=True, default=float) + "\n"


def cmd_simulate(args):
    run = _load(args)
    out = _out_dir(args, run)
    model = run.model
    cert = ctrl = None
    S = run.scenario.get("quadrature", DEFAULT_SEGMENTS)
    if not args.open_loop:
        cert = _load_cert(_cert_path(args, run, out), run)
        if not cert.check_model(model):
            log.error("certificate fingerprint does not match the configured model")
            return EXIT_FINGERPRINT
        ctrl = DistributedController.from_certificate(model, cert, S=S)
        ok, bad = admissibility_audit(ctrl.controllers, model.g_c, model)
        if not ok:
            raise ConfigError(f"controller violates the communication graph: {bad}")
    lam = cert.lam if cert is not None else run.synthesis.lam
    prefix = run.output.get("trace_prefix", "trace")
    name = run.scenario.get("name", "equilibrium")
    results = []
    if name == "platoon_tracking":
        results.append(_simulate_platoon(run, ctrl, lam, out, prefix, cert))
    else:
        results.extend(_simulate_equilibrium(run, ctrl, lam, out, prefix, cert))
    summary = {"scenario": name, "open_loop": bool(args.open_loop), "lambda": lam,
               "runs": results, "pass": all(r["pass"] for r in results)}
    write_atomic(out / ("decay_open_loop.json" if args.open_loop else "decay.json"),
                 json.dumps(summary, indent=1, sort_keys=True, default=float) + "\n")
    for r in results:
        _print(f"{r['trace']}: rate_fit={r['rate_fit']:.6g} C_fit={r['C_fit']:.6g} "
               f"{'pass' if r['pass'] else 'FAIL'}")
    _print(f"decay check: {'pass' if summary['pass'] else 'FAIL'} ({len(results)} runs)")
    return EXIT_OK if summary["pass"] else EXIT_DECAY


def _run_one(fn, path_stem, run, cert, extra):
    try:
        trace, diverged = fn(), False
    except DivergenceError as exc:
        log.error("%s", exc)
        trace, diverged = exc.trace, True
    write_atomic(path_stem.with_suffix(".csv"), trace.to_csv())
    write_atomic(path_stem.with_suffix(".json"), _sidecar(trace, run, cert, extra))
    return trace, diverged


def _simulate_equilibrium(run, ctrl, lam, out, prefix, cert):
    model = run.model
    x_star, u_star = equilibrium_target(run)
    target = EquilibriumTarget(x_star, u_star)
    T_end = run.scenario.get("T_end", 60.0)
    dt = run.scenario.get("dt", 0.02)
    results = []
    for k, x0 in enumerate(initial_states(run, x_star)):
        stem = out / f"{prefix}_{k:03d}"

        def go(x0=x0):
            return integrate_closed_loop(model, ctrl, x0, target, T_end, dt,
                                         region=run.synthesis.region,
                                         meta={"scenario": "equilibrium", "run": k,
                                               "seed": run.scenario.get("x0", {}).get("seed", 0)})

        trace, diverged = _run_one(go, stem, run, cert, {"open_loop": ctrl is None})
        chk = decay_check(trace, lam) if not diverged else {
            "pass": False, "rate_fit": float("-inf"), "C_fit": float("inf")}
        results.append(dict(chk, trace=stem.name + ".csv", diverged=diverged))
    return results


def _simulate_platoon(run, ctrl, lam, out, prefix, cert):
    sc = run.scenario
    info = run.platoon
    stem = out / f"{prefix}_000"
    holder = {}

    def go():
        res = scenario_platoon_tracking(
            run.model, info, ctrl, T_end=sc.get("T_end", 250.0), dt=sc.get("dt", 0.01),
            step=sc.get("step", True), disturbance=sc.get("disturbance", True),
            region=run.synthesis.region)
        holder["res"] = res
        return res.trace

    trace, diverged = _run_one(go, stem, run, cert, {"open_loop": ctrl is None})
    if diverged:
        return {"pass": False, "rate_fit": float("-inf"), "C_fit": float("inf"),
                "trace": stem.name + ".csv", "diverged": True}
    res = holder["res"]
    chk = platoon_decay(trace, lam, PlatoonTarget(info).t_step)
    return dict(chk, trace=stem.name + ".csv", diverged=False, peaks=res.peaks)


def platoon_decay(trace, lam, t_step=5.0, t_disturb=95.0):
    """Decay check on the window between the reference step and the first disturbance."""
    mask = (trace.t >= t_step) & (trace.t < t_disturb)
    if not mask.any():
        return decay_check(trace, lam)
    idx = np.nonzero(mask)[0]
    sub = SimulationTrace(trace.t[idx] - trace.t[idx[0]], trace.x[idx], trace.u[idx],
                          trace.xstar[idx], dict(trace.meta))
    return decay_check(sub, lam)


# ------------------------------------------------------------------ report


def collect_records(run_dir):
    """Timing records (and decay summaries) below ``run_dir``.

    Directories holding a certificate or trace but no timing record are
    skipped with a warning.
    """
    run_dir = Path(run_dir)
    rows = []
    for d in sorted({p.parent for p in run_dir.rglob("*") if p.is_file()}):
        timing = d / TIMING_FILE
        if not timing.exists():
            if any(d.glob("*.json")) or any(d.glob("*.csv")):
                log.warning("%s: no timing record, skipped", d)
            continue
        try:
            rec = json.loads(timing.read_text())
        except ValueError:
            log.warning("%s: unreadable timing record, skipped", timing)
            continue
        decay = d / "decay.json"
        if decay.exists():
            try:
                runs = json.loads(decay.read_text())["runs"]
                rec["decay_pass"] = all(r["pass"] for r in runs)
                rec["rate_fit_min"] = min(r["rate_fit"] for r in runs)
            except (ValueError, KeyError):
                log.warning("%s: unreadable decay summary", decay)
        rec["dir"] = str(d.relative_to(run_dir))
        rows.append(rec)
    return rows


REPORT_COLUMNS = ["N", "structure", "runs", "seconds_mean", "seconds_min", "seconds_max",
                  "status", "decay_pass", "rate_fit_min"]


def aggregate(rows):
    """One line per ``(N, structure)``, sorted ascending by N then structure."""
    groups = {}
    for r in rows:
        groups.setdefault((int(r.get("N", 0)), str(r.get("structure", ""))), []).append(r)
    table = []
    for (N, structure) in sorted(groups):
        g = groups[(N, structure)]
        secs = [float(r["seconds"]) for r in g if "seconds" in r]
        statuses = sorted({r.get("status", "?") for r in g})
        decays = [r["decay_pass"] for r in g if "decay_pass" in r]
        rates = [r["rate_fit_min"] for r in g if "rate_fit_min" in r]
        table.append({
            "N": N, "structure": structure, "runs": len(g),
            "seconds_mean": float(np.mean(secs)) if secs else None,
            "seconds_min": min(secs) if secs else None,
            "seconds_max": max(secs) if secs else None,
            "status": "/".join(statuses),
            "decay_pass": all(decays) if decays else None,
            "rate_fit_min": min(rates) if rates else None,
        })
    return table


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def render_table(table):
    cells = [REPORT_COLUMNS] + [[_fmt(r[c]) for c in REPORT_COLUMNS] for r in table]
    widths = [max(len(row[k]) for row in cells) for k in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells) + "\n"


def render_csv(table):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in table:
        w.writerow(["" if r[c] is None else r[c] for c in REPORT_COLUMNS])
    return buf.getvalue()


def cmd_report(args):
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"{run_dir}: not a directory")
    rows = collect_records(run_dir)
    if not rows:
        raise ConfigError(f"{run_dir}: no timing records found")
    table = aggregate(rows)
    out = Path(args.out_dir) if args.out_dir else run_dir
    text = render_table(table)
    write_atomic(out / "summary.txt", text)
    write_atomic(out / "summary.csv", render_csv(table))
    sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="ccmnet", description=__doc__.splitlines()[0],
                                epilog="\n".join(__doc__.splitlines()[2:]),
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, cert=False, open_loop=False):
        sp.add_argument("--config", required=True, help="run configuration (JSON)")
        sp.add_argument("--out-dir", help="output directory (default: config output.dir)")
        sp.add_argument("--seed", type=int, help="override synthesis and scenario seeds")
        sp.add_argument("--threads", type=int,
                        help="worker threads for grid sweeps (default: $CCMNET_THREADS or 1)")
        if cert:
            sp.add_argument("--cert", help="certificate path (default: <out-dir>/certificate.json)")
        if open_loop:
            sp.add_argument("--open-loop", action="store_true", help="apply u = u* without feedback")

    common(sub.add_parser("synth", help="synthesize and verify a certificate"))
    common(sub.add_parser("verify", help="re-verify a certificate on its refined grid"), cert=True)
    common(sub.add_parser("decompose", help="print the clique decomposition"))
    common(sub.add_parser("simulate", help="simulate the closed loop and run the decay check"),
           cert=True, open_loop=True)
    rp = sub.add_parser("report", help="aggregate timing records and decay summaries")
    rp.add_argument("run_dir")
    rp.add_argument("--out-dir", help="where to write summary.txt / summary.csv")
    return p


COMMANDS = {"synth": cmd_synth, "verify": cmd_verify, "decompose": cmd_decompose,
            "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except CCMError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_CONFIG
    log.info("%s finished in %.3f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
