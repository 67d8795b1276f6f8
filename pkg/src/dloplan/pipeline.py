"""End-to-end run: passages, pivot plan, path set, deformation sequence, model, closed-loop tracking."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from dloplan import dlo_sim, mpc, neural_dm
from dloplan.deform_opt import MSModelParams, optimize_deformation
from dloplan.passage import detect_passages, traversed_passages
from dloplan.pathset import PathSetError, generate_path_set, pivot_index_for
from dloplan.pivot_planner import PlanningError, plan_pivot
from dloplan.scenario import Scenario
from dloplan.svg import Frame, emit_svg

log = logging.getLogger(__name__)

STAGES = ("validate", "plan", "pathset", "optimize", "model", "track")


@dataclass
class RunReport:
    scenario: str
    stage_reached: str
    failed_stage: str | None = None
    diagnostics: str = ""
    passages: int = 0
    traversed: list = field(default_factory=list)
    pivot_cost: float = float("nan")
    pathset_gamma: float = float("nan")
    energy: float = float("nan")
    baseline_energy: float = float("nan")
    final_error: float = float("nan")
    min_clearance: float = float("nan")
    steps: int = 0
    tolerance: float = 0.02
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return (self.failed_stage is None and self.final_error < self.tolerance and self.min_clearance > 0)

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["success"] = self.success
        return d


def plan_stage(sc: Scenario):
    passages = detect_passages(sc.workspace)
    p = pivot_index_for(sc.cable.num_keypoints)
    res = plan_pivot(sc.start[p], sc.goal[p], sc.workspace, sc.weights, sc.planner)
    if res.path is None:
        raise PlanningError(f"no pivot path found in {res.iterations} iterations")
    return passages, res


def pathset_stage(sc: Scenario, pivot, passages):
    return generate_path_set(pivot, sc.start, sc.goal, passages, sc.workspace, sc.pathset,
                             cable_len=sc.cable.length)


def optimize_stage(sc: Scenario, path_set):
    ms = MSModelParams.from_shape(sc.start, sc.springs.k1, sc.springs.k2)
    return optimize_deformation(path_set, ms, sc.deform)


def model_stage(sc: Scenario, model_path=None, out_dir=None):
    if model_path is not None:
        params = neural_dm.load_checkpoint(model_path)
        if params.arch.num_keypoints != sc.cable.num_keypoints:
            raise ValueError("checkpoint was trained for a different keypoint count")
        return params
    data = neural_dm.collect_dataset(sc.cable, sc.model.dataset_size, seed=sc.seed)
    params = neural_dm.init_params(sc.model.arch, seed=sc.seed)
    params, hist = neural_dm.train(params, data, sc.model.train)
    if out_dir is not None:
        neural_dm.save_checkpoint(params, FsPath(out_dir) / "model.npz")
        with open(FsPath(out_dir) / "loss_curve.json", "w") as fh:
            json.dump(hist, fh, indent=2)
    return params


def snapshot_frames(track: mpc.TrackResult, sequence):
    """Start, quartiles and end of the executed run with the reference in force at each."""
    m = len(track.shapes) - 1
    picks = sorted({0, m // 4, m // 2, (3 * m) // 4, m})
    frames = []
    for k in picks:
        frames.append(Frame(f"step {k}", [track.shapes[k]], [track.references[k]]))
    frames[-1].reference.append(sequence[-1])
    return frames


def run_pipeline(sc: Scenario, out_dir, model_path=None, params=None) -> RunReport:
    """Execute every stage; the first failing stage is recorded and later stages are skipped."""
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = RunReport(sc.name, "validate")
    t = time.perf_counter()

    def lap(name):
        nonlocal t
        now = time.perf_counter()
        rep.timings[name] = round(now - t, 3)
        t = now

    try:
        rep.stage_reached = "plan"
        passages, plan = plan_stage(sc)
        rep.passages = len(passages)
        rep.pivot_cost = plan.cost
        rep.traversed = [int(pid) for pid, _ in traversed_passages(plan.path, passages)]
        lap("plan")

        rep.stage_reached = "pathset"
        ps_res = pathset_stage(sc, plan.path, passages)
        rep.pathset_gamma = ps_res.gamma
        lap("pathset")

        rep.stage_reached = "optimize"
        seq = optimize_stage(sc, ps_res.path_set)
        rep.energy, rep.baseline_energy = seq.energy, seq.baseline_energy
        lap("optimize")

        rep.stage_reached = "model"
        if params is None:
            params = model_stage(sc, model_path, out)
        lap("model")

        rep.stage_reached = "track"
        state = dlo_sim.sim_from_shape(sc.cable, sc.start, seed=sc.seed)
        tr = mpc.track(state, seq.shapes, params, sc.workspace, sc.cable, sc.mpc)
        rep.final_error, rep.min_clearance, rep.steps = tr.final_error, tr.min_clearance, tr.steps
        lap("track")
        csv_path = out / "metrics.csv"
        mpc.write_metrics_csv(tr.metrics, csv_path)
        svg_path = out / "run.svg"
        emit_svg(snapshot_frames(tr, seq.shapes), sc.workspace, svg_path, passages=passages,
                 paths=[p.waypoints for p in ps_res.path_set.paths])
        rep.artifacts = {"metrics_csv": str(csv_path), "svg": str(svg_path)}
        if not tr.success:
            rep.failed_stage = "track"
            rep.diagnostics = tr.reason
    except PlanningError as exc:
        rep.failed_stage, rep.diagnostics = "plan", str(exc)
    except PathSetError as exc:
        rep.failed_stage, rep.diagnostics = "pathset", str(exc)
    except dlo_sim.SimError as exc:
        rep.failed_stage, rep.diagnostics = rep.stage_reached, str(exc)
    with open(out / "report.json", "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2, default=float)
    log.info("run %s: stage %s, success %s, error %.4f, clearance %.4f", sc.name, rep.stage_reached, rep.success,
             rep.final_error, rep.min_clearance)
    return rep
