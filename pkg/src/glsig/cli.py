"""Command-line entry point.

    glsig run SCENARIO [--seed N | --seeds LIST] [--ablation NAME] [--out FILE]
                       [--override key=value ...] [--figures DIR]
    glsig signature SCENE [--seed N] [--keypoint L] [--polylines FILE]

SCENARIO may be a path or the name of a bundled scenario (pulling,
untangle, threading, two_loops).
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from glsig.grasp_graph import signature_details
from glsig.report import render_figures, summarize
from glsig.scenario import (
    ABLATIONS,
    ScenarioError,
    load_scenario_file,
    read_results,
    result_record,
    run_trial,
    write_result,
)
from glsig.topology import TopologyError


def parse_seeds(text: str) -> list[int]:
    """``"0,1,5"`` or ``"0-24"`` or a mix: ``"0-3,7"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if m:
            seeds.extend(range(int(m[1]), int(m[2]) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return seeds


def parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"override {item!r} is not of the form key=value")
        out[key.strip()] = value
    return out


def _load(path, overrides=None, ablation=None):
    sc = load_scenario_file(path)
    ov = dict(overrides or {})
    if ablation is not None:
        ov["ablation"] = ablation
    return sc.with_overrides(ov) if ov else sc


def cmd_run(args) -> int:
    try:
        overrides = parse_overrides(args.override)
        sc = _load(args.scenario, overrides, args.ablation)
        if args.seed is not None:
            seeds = [args.seed]
        elif args.seeds is not None:
            seeds = parse_seeds(args.seeds)
        else:
            seeds = list(sc.seeds)
    except (OSError, ScenarioError, ValueError) as exc:
        print(f"error: cannot load {args.scenario}: {exc}", file=sys.stderr)
        return 1

    out = Path(args.out) if args.out else None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("")  # one file per invocation, records in seed order
    print(f"scenario {sc.name}  ablation {sc.ablation}  seeds {len(seeds)}")
    records = []
    for seed in seeds:
        res = run_trial(sc, seed)
        if out is not None:
            write_result(res, out)
        records.append(result_record(res))
        print(
            f"  seed {seed:3d}  {'ok  ' if res.success else 'FAIL'}  iterations {res.iterations:4d}  "
            f"regrasps {res.regrasps:2d}  wall {res.wall_time:6.2f} s  sim {res.sim_time:6.2f} s  "
            f"final signature {res.signature_history[-1][1] if res.signature_history else '-'}",
            flush=True,
        )
    summary = summarize(records)
    print(summary.text())
    print(f"success {summary.successes}/{summary.n}")
    if args.figures:
        recs = read_results(out) if out is not None else records
        for p in render_figures(recs, args.figures):
            print(f"figure {p}")
    return 0


def cmd_signature(args) -> int:
    try:
        sc = load_scenario_file(args.scene)
        state = sc.initial_state(args.seed)
    except (OSError, ScenarioError, ValueError) as exc:
        print(f"error: cannot load {args.scene}: {exc}", file=sys.stderr)
        return 1
    skel = sc.world.skeleton
    try:
        rep = signature_details(state, skel, sc.world.base, args.keypoint)
    except TopologyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    gg = rep.graph
    print(f"skeleton loops: {', '.join(skel.names) if len(skel) else '(none)'}")
    print("vertices:")
    for name, v in sorted(gg.vertices.items(), key=lambda kv: (kv[1].kind != "base", kv[0])):
        loc = "" if v.loc is None else f"  l={v.loc:.3f}"
        print(f"  {name:4s} {v.kind:8s} at ({v.anchor[0]:.3f}, {v.anchor[1]:.3f}, {v.anchor[2]:.3f}){loc}")
    print("edges:")
    for u, w in gg.edges():
        print(f"  {u}-{w}")
    if rep.removed:
        print(f"redundant grippers removed: {', '.join(f'g{i}' for i in rep.removed)}")
    print("loops:")
    for cyc, hv in zip(rep.cycles, rep.hvecs):
        print(f"  {'-'.join(cyc):12s} h = [{', '.join(str(h) for h in hv)}]")
    if not rep.cycles:
        print("  (none)")
    print(f"signature {rep.signature.text()}")

    if args.polylines:
        doc = {
            "signature": rep.signature.text(),
            "loops": [{"cycle": list(c), "h": list(h), "points": lp.tolist()}
                      for c, h, lp in zip(rep.cycles, rep.hvecs, rep.loops)],
            "skeleton": [{"name": n, "points": lp.tolist()} for n, lp in skel],
            "rope": state.rope.points.tolist(),
        }
        text = json.dumps(doc, indent=1)
        if args.polylines == "-":
            print(text)
        else:
            Path(args.polylines).write_text(text)
            print(f"polylines written to {args.polylines}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glsig", description="GL-signature rope manipulation trials")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the seeded trials of a scenario")
    run.add_argument("scenario", help="scenario file or bundled scenario name")
    seeds = run.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, help="run a single seed")
    seeds.add_argument("--seeds", help="seed list such as 0-24 or 0,3,5 (default: the scenario's seeds)")
    run.add_argument("--ablation", choices=ABLATIONS, help="override the scenario's ablation")
    run.add_argument("--out", help="JSON-lines result file (overwritten)")
    run.add_argument("--override", action="append", metavar="KEY=VALUE",
                     help="dotted scenario setting, value parsed as YAML (repeatable)")
    run.add_argument("--figures", metavar="DIR", help="also render summary figures into DIR")
    run.set_defaults(func=cmd_run)

    sig = sub.add_parser("signature", help="print the grasp-loop graph and GL-signature of a scene")
    sig.add_argument("scene", help="scenario file or bundled scenario name")
    sig.add_argument("--seed", type=int, default=0, help="seed of the initial configuration")
    sig.add_argument("--keypoint", type=float, default=1.0, help="keypoint l_k for redundant-gripper removal")
    sig.add_argument("--polylines", metavar="FILE", help="write loop polylines as JSON ('-' for stdout)")
    sig.set_defaults(func=cmd_signature)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
