"""Command-line entry point.

Subcommands: verify (certificate tables), eval (one evaluation from a
config document or flags), suite (experiment suites with the regression
gate), serve-env (host the environment for external agents).

Exit codes: 0 success, 1 verification/gate failure, 2 usage or
configuration error, 3 I/O failure. STCLAB_OUT and STCLAB_PARALLEL
override the output directory and worker count.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

from .config import ExperimentConfig
from .engine import write_trace_csv
from .errors import ConfigError, DomainError, ProtocolFault
from .harness import (
    SUITE_IDS,
    EvalConfig,
    compare_report,
    evaluate,
    load_reference,
    run_suite,
    SuiteSpec,
)
from .plants import PLANT_IDS
from .policies import make_policy
from .presets import build_cert_report

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _envelope(results: dict, kind: str) -> dict:
    return {
        "kind": kind,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        **results,
    }


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(arg_out: str | None) -> Path | None:
    out = os.environ.get("STCLAB_OUT", arg_out)
    return Path(out) if out else None


def _parallelism(arg: int) -> int:
    env = os.environ.get("STCLAB_PARALLEL")
    return int(env) if env else arg


def cmd_verify(args) -> int:
    plants = args.plant or list(PLANT_IDS)
    reference = load_reference()
    expect_certified = {
        e["path"].split("/")[0]: e["expected"]
        for e in reference["entries"]
        if e["suite"] == "verify" and e["path"].endswith("/certified")
    }
    results = {}
    failed = False
    for plant in plants:
        report = build_cert_report(plant)
        results[plant] = report.to_dict()
        status = "certified" if report.certified else "uncertified"
        if expect_certified.get(plant, False) and not report.certified:
            status += " (EXPECTED CERTIFIED: FAIL)"
            failed = True
        elif not report.certified:
            status += " (expected per reference)"
        tc = "none" if report.tau_critical is None else f"{report.tau_critical:.4f}"
        print(
            f"{plant:12s} decay={report.decay:8.4f} v_scale={report.v_scale:8.3f} "
            f"lmin(M_Q)={report.lambda_min_mq:7.4f} lmax(P)={report.lambda_max_p:8.3f} "
            f"theta_sat={report.theta_sat_deg:5.2f}deg theta_shield={report.theta_rta_deg:5.2f}deg "
            f"lmin(M_disc)={report.lambda_min_mdisc:8.5f} r*={report.r_star:7.4f} "
            f"tau_c={tc} [{status}]"
        )
    out = _out_dir(args.out)
    if out is not None:
        _write_json(out / "verify.json", _envelope({"suite": "verify", "results": results}, "verify"))
    return EXIT_FAIL if failed else EXIT_OK


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    else:
        if not args.plant or not args.policy:
            raise ConfigError("either a config file or --plant and --policy are required")
        doc = {"plant": args.plant, "policy": _policy_from_flag(args.policy)}
    # flag overrides
    if args.plant and args.config:
        doc["plant"] = args.plant
    if args.policy and args.config:
        doc["policy"] = _policy_from_flag(args.policy)
    if args.shield:
        doc["shield"] = args.shield
    if args.wc is not None:
        doc["w_c"] = args.wc
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.n_eval is not None:
        doc["n_eval"] = args.n_eval
    if args.mass_scale is not None:
        doc["mass_scale"] = args.mass_scale
    if args.disturbance:
        doc["disturbance"] = _disturbance_from_flag(args.disturbance)
    if args.dr:
        doc["domain_randomization"] = True
    if args.traces:
        doc["traces"] = args.traces
    return ExperimentConfig.from_dict(doc)


def _policy_from_flag(flag: str) -> dict:
    # "b1" | "b2" | "b3" | "lqr:TAU" | "fixed_tau:TAU"
    parts = flag.split(":")
    kind = parts[0]
    if kind in ("b1", "b2", "b3", "classical_stc") and len(parts) == 1:
        return {"kind": kind}
    if kind == "lqr" and len(parts) == 2:
        return {"kind": "lqr", "tau": float(parts[1])}
    if kind == "fixed_tau" and len(parts) <= 2:
        cfg = {"kind": "fixed_tau", "inner": {"kind": "b1"}}
        if len(parts) == 2:
            cfg["tau"] = float(parts[1])
        return cfg
    raise ConfigError(f"cannot parse policy flag {flag!r}")


def _disturbance_from_flag(flag: str) -> dict:
    # "kind:amplitude[:frequency]", e.g. "constant:0.5" or "periodic:0.8:1"
    parts = flag.split(":")
    spec: dict = {"kind": parts[0]}
    if len(parts) > 1:
        spec["amplitude"] = float(parts[1])
    if len(parts) > 2:
        spec["frequency"] = float(parts[2])
    return spec


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    setup = cfg.build_setup()
    policy = make_policy(setup, cfg.policy)
    try:
        result = evaluate(EvalConfig(
            setup=setup,
            policy=policy,
            n_eval=cfg.n_eval,
            base_seed=cfg.seed,
            parallelism=_parallelism(cfg.parallelism),
            traces=cfg.traces,
        ))
    finally:
        policy.close()
    report = {
        "config": cfg.to_dict(),
        "summary": result.summary.to_dict(),
    }
    print(json.dumps(report["summary"], indent=2, sort_keys=True))
    out = _out_dir(args.out or cfg.out)
    if out is not None:
        _write_json(out / "eval.json", _envelope(report, "eval"))
        if cfg.traces != "none":
            _write_json(out / "episodes.json", _envelope(
                {"episodes": result.episode_summaries}, "episodes"))
        if cfg.traces == "full" and result.traces is not None:
            for trace in result.traces:
                write_trace_csv(trace, out / f"trace_ep{trace.episode:04d}.csv")
    return EXIT_OK


def cmd_suite(args) -> int:
    spec = SuiteSpec(
        suite=args.suite,
        plants=tuple(args.plant) if args.plant else PLANT_IDS,
        n_eval=args.n_eval if args.n_eval is not None else 100,
        base_seed=args.seed if args.seed is not None else 0,
        parallelism=_parallelism(args.parallelism),
        domain_randomization=args.dr,
    )
    report = run_suite(spec)
    out = _out_dir(args.out)
    if out is not None:
        _write_json(out / f"suite_{spec.suite}.json", _envelope(report, "suite"))
        if args.csv:
            import csv as csv_mod

            from .harness import flatten_report

            with open(out / f"suite_{spec.suite}.csv", "w", newline="") as fh:
                writer = csv_mod.writer(fh)
                writer.writerow(["metric", "value"])
                writer.writerows(flatten_report(report))
    if args.no_gate:
        print(json.dumps(report, indent=2, sort_keys=True))
        return EXIT_OK
    reference = load_reference()
    # gate only the plants this run covers
    reference = {"entries": [e for e in reference["entries"]
                             if e.get("path", "").split("/")[0] in spec.plants]}
    rows, ok = compare_report({spec.suite: report}, reference)
    gated = rows
    for row in gated:
        mark = "PASS" if row["pass"] else "FAIL"
        print(f"[{mark}] {row['id']}: observed={_fmt(row['observed'])} "
              f"expected={_fmt(row['expected'])} ({row['kind']}, tol={row['tol']})")
    ok = all(r["pass"] for r in gated)
    if out is not None:
        _write_json(out / f"gate_{spec.suite}.json", _envelope({"rows": gated, "pass": ok}, "gate"))
    print(f"suite {spec.suite}: {'PASS' if ok else 'FAIL'} "
          f"({sum(r['pass'] for r in gated)}/{len(gated)} checks)")
    return EXIT_OK if ok else EXIT_FAIL


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_serve_env(args) -> int:
    from .server import serve_socket, serve_stdio

    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = ExperimentConfig.from_dict(json.loads(path.read_text()))
    if args.socket is not None:
        serve_socket(cfg, args.socket, max_connections=args.max_connections)
    else:
        serve_stdio(cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stclab",
        description="Self-triggered control laboratory: certificates, shielded "
                    "episodes, baselines, and robustness suites.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="compute and check the certificate tables")
    p.add_argument("--plant", action="append", choices=PLANT_IDS,
                   help="plant to verify (repeatable; default: all)")
    p.add_argument("--out", help="output directory for verify.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="run one evaluation")
    p.add_argument("config", nargs="?", help="experiment config JSON")
    p.add_argument("--plant", choices=PLANT_IDS)
    p.add_argument("--policy", help="b1 | b2 | b3 | lqr:TAU | fixed_tau[:TAU]")
    p.add_argument("--shield", choices=("hard", "soft", "off"))
    p.add_argument("--wc", type=float, help="communication reward weight")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-eval", type=int, dest="n_eval")
    p.add_argument("--mass-scale", type=float, dest="mass_scale")
    p.add_argument("--disturbance", help="kind:amplitude[:frequency]")
    p.add_argument("--dr", action="store_true", help="randomize mass per episode")
    p.add_argument("--traces", choices=("none", "summary", "full"))
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("suite", help="run an experiment suite and gate it")
    p.add_argument("suite", choices=SUITE_IDS)
    p.add_argument("--plant", action="append", choices=PLANT_IDS)
    p.add_argument("--n-eval", type=int, dest="n_eval")
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--dr", action="store_true")
    p.add_argument("--no-gate", action="store_true", dest="no_gate",
                   help="skip the reference-values gate")
    p.add_argument("--csv", action="store_true",
                   help="also write the report flattened to CSV (with --out)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("serve-env", help="host the environment for an external agent")
    p.add_argument("config", help="experiment config JSON")
    p.add_argument("--socket", type=int, help="listen on this TCP port instead of stdio")
    p.add_argument("--max-connections", type=int, dest="max_connections",
                   help="stop after serving this many connections (socket mode)")
    p.set_defaults(func=cmd_serve_env)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, ProtocolFault) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
