"""Command line entry point: ``dloplan <subcommand> ...``.

Exit codes: 0 success, 2 validation failure, 3 planning failure, 4 tracking failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path as FsPath

import numpy as np

from dloplan import dlo_sim, mpc, neural_dm, pipeline
from dloplan.passage import detect_passages, traversed_passages
from dloplan.pathset import PathSetError
from dloplan.pivot_planner import PlanningError
from dloplan.scenario import ScenarioError, load_scenario
from dloplan.svg import Frame, emit_svg

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PLANNING = 3
EXIT_TRACKING = 4

log = logging.getLogger("dloplan")


def _scenario(args):
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc.seed = args.seed
        sc.planner = dataclasses.replace(sc.planner, rng_seed=args.seed)
    return sc


def _out(args) -> FsPath:
    out = FsPath(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


def cmd_passages(args):
    sc = _scenario(args)
    ps = detect_passages(sc.workspace)
    rows = [{"id": k, "a": p.endpoint_a.tolist(), "b": p.endpoint_b.tolist(), "width": p.width,
             "obstacles": list(p.obstacle_ids)} for k, p in enumerate(ps)]
    out = _out(args)
    _dump(rows, out / "passages.json")
    emit_svg([Frame("passages", [sc.start, sc.goal])], sc.workspace, out / "passages.svg", passages=ps)
    for r in rows:
        print(f"passage {r['id']}: obstacles {r['obstacles']} width {r['width']:.4f} m")
    return EXIT_OK


def cmd_plan(args):
    sc = _scenario(args)
    passages, res = pipeline.plan_stage(sc)
    out = _out(args)
    trav = traversed_passages(res.path, passages)
    _dump({"waypoints": res.path.waypoints.tolist(), "cost": res.cost, "iterations": res.iterations,
           "traversed": [[int(p), float(s)] for p, s in trav]}, out / "pivot.json")
    emit_svg([Frame("pivot path", [sc.start, sc.goal])], sc.workspace, out / "plan.svg", passages=passages,
             paths=[res.path.waypoints])
    print(f"pivot path: {len(res.path.waypoints)} waypoints, cost {res.cost:.4f}, traverses {[p for p, _ in trav]}")
    return EXIT_OK


def cmd_pathset(args):
    sc = _scenario(args)
    passages, res = pipeline.plan_stage(sc)
    ps_res = pipeline.pathset_stage(sc, res.path, passages)
    out = _out(args)
    np.save(out / "pathset.npy", ps_res.path_set.waypoint_array())
    emit_svg([Frame("path set", [sc.start, sc.goal])], sc.workspace, out / "pathset.svg", passages=passages,
             paths=[p.waypoints for p in ps_res.path_set.paths])
    print(f"path set: {len(ps_res.path_set)} paths, gamma {ps_res.gamma}, min clearance "
          f"{min(ps_res.report.min_clearance):.4f} m")
    return EXIT_OK


def cmd_optimize(args):
    sc = _scenario(args)
    passages, res = pipeline.plan_stage(sc)
    ps_res = pipeline.pathset_stage(sc, res.path, passages)
    seq = pipeline.optimize_stage(sc, ps_res.path_set)
    out = _out(args)
    np.savez(out / "sequence.npz", shapes=seq.shapes, sigmas=seq.sigmas)
    picks = np.linspace(0, seq.T, 5).round().astype(int)
    emit_svg([Frame(f"t={t}", [], [seq.shapes[t]]) for t in picks], sc.workspace, out / "sequence.svg",
             passages=passages, paths=[p.waypoints for p in ps_res.path_set.paths])
    print(f"deformation sequence: J={seq.energy:.6g} (uniform {seq.baseline_energy:.6g}), "
          f"{seq.iterations} iterations")
    return EXIT_OK


def cmd_collect(args):
    sc = _scenario(args)
    data = neural_dm.collect_dataset(sc.cable, args.num, seed=sc.seed)
    out = _out(args)
    path = FsPath(args.output) if args.output else out / "dataset.npz"
    data.save(path)
    print(f"collected {len(data)} transitions -> {path}")
    return EXIT_OK


def cmd_train(args):
    data = neural_dm.Dataset.load(args.dataset)
    n = data.s.shape[1]
    arch = neural_dm.ModelArch(embed_dim=args.embed_dim, num_heads=args.heads, num_keypoints=n)
    cfg = neural_dm.TrainConfig(epochs=args.epochs, seed=args.seed or 0)
    params = neural_dm.init_params(arch, seed=args.seed or 0)
    params, hist = neural_dm.train(params, data, cfg)
    out = _out(args)
    ckpt = FsPath(args.out) if args.out else out / "model.npz"
    neural_dm.save_checkpoint(params, ckpt)
    _dump(hist, out / "loss_curve.json")
    print(f"trained {len(hist) - 1} epochs, best val {min(h['val'] for h in hist):.4g} -> {ckpt}")
    return EXIT_OK


def _tracking_inputs(args):
    sc = _scenario(args)
    passages, res = pipeline.plan_stage(sc)
    ps_res = pipeline.pathset_stage(sc, res.path, passages)
    seq = pipeline.optimize_stage(sc, ps_res.path_set)
    params = pipeline.model_stage(sc, args.model, _out(args))
    return sc, seq, params


def cmd_track(args):
    sc, seq, params = _tracking_inputs(args)
    out = _out(args)
    state = dlo_sim.sim_from_shape(sc.cable, sc.start, seed=sc.seed)
    tr = mpc.track(state, seq.shapes, params, sc.workspace, sc.cable, sc.mpc)
    mpc.write_metrics_csv(tr.metrics, out / "metrics.csv")
    emit_svg(pipeline.snapshot_frames(tr, seq.shapes), sc.workspace, out / "track.svg")
    print(f"tracking: {tr.steps} steps, final error {tr.final_error:.4f} m, min clearance "
          f"{tr.min_clearance:.4f} m ({tr.reason})")
    return EXIT_OK if tr.success else EXIT_TRACKING


def cmd_run(args):
    sc = _scenario(args)
    rep = pipeline.run_pipeline(sc, args.out_dir, model_path=args.model)
    print(f"{sc.name}: success={rep.success} final error {rep.final_error:.4f} m, min clearance "
          f"{rep.min_clearance:.4f} m, steps {rep.steps}")
    if rep.success:
        return EXIT_OK
    if rep.failed_stage in ("plan", "pathset", "optimize"):
        print(f"failed at {rep.failed_stage}: {rep.diagnostics}", file=sys.stderr)
        return EXIT_PLANNING
    print(f"failed at {rep.failed_stage}: {rep.diagnostics}", file=sys.stderr)
    return EXIT_TRACKING


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="out", help="directory for artifacts")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--verbose", "-v", action="count", default=0)

    p = argparse.ArgumentParser(prog="dloplan", description="Deformable linear object planning and tracking")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, hlp in (("passages", cmd_passages, "detect passages"), ("plan", cmd_plan, "plan the pivot path"),
                          ("pathset", cmd_pathset, "generate the keypoint path set"),
                          ("optimize", cmd_optimize, "optimise the deformation sequence")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("scenario")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("collect", parents=[common], help="collect simulator transitions")
    sp.add_argument("scenario")
    sp.add_argument("--num", type=int, default=10000)
    sp.add_argument("--output", default=None, help="dataset file (default <out-dir>/dataset.npz)")
    sp.set_defaults(func=cmd_collect)
    sp = sub.add_parser("train", parents=[common], help="train the deformation model")
    sp.add_argument("dataset")
    sp.add_argument("--out", default=None, help="checkpoint file (default <out-dir>/model.npz)")
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--embed-dim", type=int, default=64)
    sp.add_argument("--heads", type=int, default=4)
    sp.set_defaults(func=cmd_train)
    for name, fn, hlp in (("track", cmd_track, "track the optimised sequence"),
                          ("run", cmd_run, "run the full pipeline")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("scenario")
        sp.add_argument("--model", default=None, help="checkpoint; trained from scratch when omitted")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (PlanningError, PathSetError) as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_PLANNING
    except (dlo_sim.SimError, mpc.TrackingError) as exc:
        print(f"tracking failed: {exc}", file=sys.stderr)
        return EXIT_TRACKING


if __name__ == "__main__":
    sys.exit(main())
