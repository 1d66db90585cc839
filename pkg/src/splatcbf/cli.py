"""splatcbf command line: simulate, batch, nbv, validate, gen-field, defaults.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
Log level comes from the SPLATCBF_LOG environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from splatcbf import __version__
from splatcbf.config import Config, ConfigError, apply_overrides, defaults_document, load_config, parse_override
from splatcbf.info_gain import masked_splats, rank_views, ring_candidates
from splatcbf.sim import RunMetrics, batch, format_table, run, write_table_csv
from splatcbf.splat_field import SCENE_KINDS, SplatMapError, generate_field, save_field

log = logging.getLogger("splatcbf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="YAML config file (defaults apply to every missing key)")
    p.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. risk.epsilon=0.9 (repeatable; flags win over the file)")
    p.add_argument("--seed", type=int, help="scenario seed (synthetic field and start jitter)")
    p.add_argument("--out", "-o", help="output directory (default: output.dir from config)")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splatcbf", description="Conflict-aware CBF control over Gaussian splat maps.")
    parser.add_argument("--version", action="version", version=f"splatcbf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one scenario and write trace, metrics and figures")
    _common(p)

    p = sub.add_parser("batch", help="run seeded scenarios per config group and emit the aggregate table")
    _common(p)
    p.add_argument("--n", type=int, help="number of seeds per group (seeds start at the scenario seed)")
    p.add_argument("--seeds", help="explicit comma-separated seed list (overrides --n)")
    p.add_argument("--jobs", "-j", type=int, help="worker processes (default: available CPUs)")

    p = sub.add_parser("nbv", help="rank ring candidate views around a pose by expected information gain")
    _common(p)
    p.add_argument("--pose", help="camera position x,y,z (default nbv.pose)")
    p.add_argument("--heading", help="current heading x,y,z used for the planned path (default nbv.heading)")
    p.add_argument("--radius", type=float, help="ring radius [m] (default nbv.ring_radius or camera.max_range / 5)")
    p.add_argument("--candidates", type=int, help="number of ring candidates (default nbv.candidates)")
    p.add_argument("--top", type=int, help="rows to print (default nbv.top)")

    p = sub.add_parser("validate", help="run the invariant suite and print one line per check")
    p.add_argument("--only", action="append", default=[], help="run only the named check (repeatable)")
    p.add_argument("--corrupt-beta", action="store_true", help="negative control: flip the soft-min temperature sign")

    p = sub.add_parser("gen-field", help="write a synthetic splat map")
    p.add_argument("kind", choices=SCENE_KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o", required=True, help="output .jsonl path")
    p.add_argument("--param", "-p", action="append", default=[], metavar="KEY=VALUE", help="scene parameter (YAML value, repeatable)")

    sub.add_parser("defaults", help="print every config key with its default value")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("SPLATCBF_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load(args) -> Config:
    cfg = load_config(args.config)
    overrides = dict(parse_override(s) for s in args.set)
    if args.seed is not None:
        overrides["scenario.seed"] = args.seed
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _outdir(args, cfg: Config) -> Path:
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, command: str, cfg: Config, seeds, extra: dict | None = None) -> None:
    doc = {
        "tool": "splatcbf",
        "version": __version__,
        "command": command,
        "seeds": list(seeds),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
        "control_dev_definition": RunMetrics.__dataclass_fields__["control_dev_definition"].default,
    }
    doc.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _figures(args, cfg: Config) -> bool:
    return cfg.output.figures and not getattr(args, "no_figures", False)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    scen = cfg.build_scenario()
    (out / "config.yaml").write_text(cfg.snapshot(), encoding="utf-8")
    rec, metrics = run(scen)
    meta = {"seed": scen.seed, "field": scen.field if not isinstance(scen.field, Path) else str(scen.field), "model": scen.model}
    rec.write_jsonl(out / "trace.jsonl", meta)
    rec.write_timing(out / "timing.csv")
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2) + "\n", encoding="utf-8")
    if _figures(args, cfg):
        from splatcbf.plotting import plot_barriers, plot_trajectory

        fld = scen.build_field()
        _, goal = scen.resolve_endpoints(fld)
        plot_trajectory(rec, fld, out / "trajectory.png", goal)
        plot_barriers(rec, out / "barriers.png")
    _manifest(out, "simulate", cfg, [scen.seed])
    print("metric,value")
    for k, v in metrics.to_dict().items():
        print(f"{k},{v}")
    return 0


def _batch_scenarios(cfg: Config, seeds):
    groups = cfg.batch.groups or []
    scenarios = []
    if not groups:
        for s in seeds:
            scenarios.append(cfg.build_scenario(seed=s))
    for g in groups:
        overrides = dict(g.set)
        overrides["scenario.group"] = g.name
        for s in seeds:
            scenarios.append(cfg.build_scenario(seed=s, overrides=overrides))
    return scenarios


def cmd_batch(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise UsageError("--seeds must be a comma-separated list of integers") from None
    else:
        n = args.n if args.n is not None else cfg.batch.n
        if n < 1:
            raise UsageError("--n must be >= 1")
        base = cfg.build_scenario().seed
        seeds = cfg.batch.seed_list(base) if args.n is None else [base + k for k in range(n)]
    jobs = args.jobs if args.jobs is not None else cfg.batch.jobs
    scenarios = _batch_scenarios(cfg, seeds)
    (out / "config.yaml").write_text(cfg.snapshot(), encoding="utf-8")
    t0 = time.perf_counter()
    metrics, rows = batch(scenarios, jobs)
    log.info("batch of %d runs took %.1f s", len(scenarios), time.perf_counter() - t0)
    with open(out / "runs.csv", "w", encoding="utf-8") as fh:
        names = [f.name for f in dataclasses.fields(RunMetrics) if f.name != "control_dev_definition"]
        fh.write(",".join(names) + "\n")
        for m in metrics:
            d = m.to_dict()
            fh.write(",".join(str(d[k]) for k in names) + "\n")
    write_table_csv(rows, out / "table.csv")
    (out / "table.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    if _figures(args, cfg):
        from splatcbf.plotting import plot_batch

        plot_batch(rows, out / "batch.png")
    _manifest(out, "batch", cfg, seeds, {"groups": [r["group"] for r in rows]})
    print(format_table(rows))
    return 0


def _vec(text: str | None, default, n: int = 3) -> np.ndarray:
    if text is None:
        v = np.asarray(default, dtype=float)
    else:
        try:
            v = np.array([float(t) for t in text.split(",")])
        except ValueError:
            raise UsageError(f"expected {n} comma-separated numbers, got '{text}'") from None
    if v.shape != (n,):
        raise UsageError(f"expected {n} comma-separated numbers, got {v.tolist()}")
    return v


def cmd_nbv(args) -> int:
    cfg = _load(args)
    scen = cfg.build_scenario()
    fld = scen.build_field()
    pose_p = _vec(args.pose, cfg.nbv.pose)
    heading = _vec(args.heading, cfg.nbv.heading)
    if np.linalg.norm(heading) == 0:
        raise UsageError("heading must be non-zero")
    heading = heading / np.linalg.norm(heading)
    radius = args.radius or cfg.nbv.ring_radius or scen.camera.max_range / 5
    count = args.candidates or cfg.nbv.candidates
    top = args.top or cfg.nbv.top
    if scen.goal is not None or "goal" in fld.meta:
        _, goal = scen.resolve_endpoints(fld)
    else:
        # no declared goal: look ahead along the heading
        goal = pose_p + scen.camera.max_range * heading
    path = pose_p + np.linspace(0.0, 1.0, 16)[:, None] * (goal - pose_p)
    ids = masked_splats(path, fld, scen.risk, scen.mask)
    cands = ring_candidates(pose_p, radius, count, cfg.nbv.facing, cfg.nbv.seed)
    scores = rank_views(cands, fld, ids, scen.camera)
    order = sorted(range(len(cands)), key=lambda i: (-scores[i], i))
    print(f"# masked_splats={len(ids)} candidates={len(cands)} radius={radius:g}")
    print("rank,index,x,y,z,hx,hy,hz,eig")
    for r, i in enumerate(order[:top]):
        p, h = cands[i].position, cands[i].heading3
        print(f"{r},{i},{p[0]:.6f},{p[1]:.6f},{p[2]:.6f},{h[0]:.6f},{h[1]:.6f},{h[2]:.6f},{scores[i]:.9g}")
    if args.out:
        out = _outdir(args, cfg)
        with open(out / "nbv.csv", "w", encoding="utf-8") as fh:
            fh.write("rank,index,x,y,z,hx,hy,hz,eig\n")
            for r, i in enumerate(order):
                p, h = cands[i].position, cands[i].heading3
                fh.write(f"{r},{i},{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},{h[0]:.9g},{h[1]:.9g},{h[2]:.9g},{scores[i]:.9g}\n")
        if _figures(args, cfg):
            from splatcbf.plotting import plot_nbv

            plot_nbv(fld, cands, scores, out / "nbv.png")
        _manifest(out, "nbv", cfg, [scen.seed], {"masked_splats": int(len(ids))})
    return 0


def cmd_validate(args) -> int:
    from splatcbf.validation import CHECKS, run_all

    unknown = [n for n in args.only if n not in CHECKS]
    if unknown:
        raise UsageError(f"unknown check(s) {unknown}; available: {sorted(CHECKS)}")
    results = run_all(args.only or None, corrupt_beta=args.corrupt_beta)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"# {len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 2


def cmd_gen_field(args) -> int:
    params = {}
    for item in args.param:
        if "=" not in item:
            raise UsageError(f"--param '{item}' must look like key=value")
        k, v = item.split("=", 1)
        params[k.strip()] = yaml.safe_load(v)
    try:
        fld = generate_field(args.kind, args.seed, **params)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_field(fld, args.out)
    print(f"wrote {len(fld)} splats to {args.out}")
    return 0


def cmd_defaults(args) -> int:
    print(yaml.safe_dump(defaults_document(), sort_keys=False), end="")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "batch": cmd_batch,
    "nbv": cmd_nbv,
    "validate": cmd_validate,
    "gen-field": cmd_gen_field,
    "defaults": cmd_defaults,
}


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"splatcbf: error: {exc}", file=sys.stderr)
        return 1
    except (SplatMapError, OSError) as exc:
        print(f"splatcbf: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure inside a run
        log.debug("traceback", exc_info=True)
        print(f"splatcbf: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
