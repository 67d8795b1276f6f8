"""Scenario files: YAML documents describing a workspace, a cable, start/goal shapes and hyperparameters.

Units are meters and radians.  Obstacles are listed as counter-clockwise
vertex lists.  Start and goal may be given as keypoint lists or as grasp
poses (``left``/``right`` as ``[x, y, theta]``), in which case the shape is
the simulator equilibrium for that grasp.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path as FsPath

import numpy as np
import yaml

from dloplan import dlo_sim
from dloplan.deform_opt import DeformOptConfig
from dloplan.geom2d import GeometryError, Workspace, clearance_many, polyline_clearance
from dloplan.mpc import MPCConfig
from dloplan.neural_dm import ModelArch, TrainConfig
from dloplan.pathset import PathSetParams
from dloplan.pivot_planner import PivotCostWeights, PlannerConfig

CANONICAL_DIR = FsPath(__file__).with_name("scenarios")
CANONICAL = ("single_obstacle", "narrow_gap", "maze")


class ScenarioError(ValueError):
    """Schema or invariant violation; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class SpringParams:
    k1: float = 2.0
    k2: float = 1.0


@dataclass(frozen=True)
class ModelSettings:
    dataset_size: int = 10000
    arch: ModelArch = field(default_factory=ModelArch)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10))


@dataclass(eq=False)
class Scenario:
    workspace: Workspace
    cable: dlo_sim.CableParams
    start: np.ndarray
    goal: np.ndarray
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    weights: PivotCostWeights = field(default_factory=PivotCostWeights)
    pathset: PathSetParams = field(default_factory=PathSetParams)
    deform: DeformOptConfig = field(default_factory=DeformOptConfig)
    springs: SpringParams = field(default_factory=SpringParams)
    mpc: MPCConfig = field(default_factory=MPCConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    seed: int = 0
    name: str = "scenario"

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return scenario_to_dict(self) == scenario_to_dict(other)


# --------------------------------------------------------------------------
# dict <-> dataclass helpers
# --------------------------------------------------------------------------

def _build(cls, data, path, **extra):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(path, f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ScenarioError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    kwargs = dict(extra)
    for k, v in data.items():
        default = getattr(cls(), k) if not extra else None
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ScenarioError(f"{path}.{k}", f"expected a number, got {v!r}")
            v = type(default)(v) if isinstance(default, float) or float(v).is_integer() else v
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(path, str(exc)) from None


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _shape(data, cable, path, seed):
    if isinstance(data, dict):
        if set(data) == {"keypoints"}:
            data = data["keypoints"]
        elif set(data) == {"left", "right"}:
            try:
                robot = dlo_sim.robot_config(data["left"], data["right"])
                return dlo_sim.init_sim(cable, robot, seed=seed).shape.copy()
            except (ValueError, dlo_sim.SimError) as exc:
                raise ScenarioError(path, f"grasp poses not reachable: {exc}") from None
        else:
            raise ScenarioError(path, "expected 'keypoints' or 'left'/'right' grasp poses")
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ScenarioError(path, f"expected a list of [x, y] points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(path, "non-finite coordinates")
    return arr


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "expected a mapping")
    allowed = {"name", "seed", "workspace", "cable", "start", "goal", "planner", "pathset", "deform", "mpc", "model"}
    unknown = set(doc) - allowed
    if unknown:
        raise ScenarioError(sorted(unknown)[0], "unknown field")
    for req in ("workspace", "start", "goal"):
        if req not in doc:
            raise ScenarioError(req, "required field missing")

    ws = doc["workspace"]
    if not isinstance(ws, dict) or "width" not in ws or "height" not in ws:
        raise ScenarioError("workspace", "needs width and height")
    obstacles = ws.get("obstacles", []) or []
    for k, o in enumerate(obstacles):
        if not isinstance(o, (list, tuple)) or len(o) < 3:
            raise ScenarioError(f"workspace.obstacles[{k}]", "an obstacle needs at least 3 vertices")
    try:
        workspace = Workspace(float(ws["width"]), float(ws["height"]), tuple(np.asarray(o, float) for o in obstacles))
    except GeometryError as exc:
        raise ScenarioError("workspace", str(exc)) from None

    cable = _build(dlo_sim.CableParams, doc.get("cable"), "cable")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ScenarioError("seed", "expected an integer")
    start = _shape(doc["start"], cable, "start", seed)
    goal = _shape(doc["goal"], cable, "goal", seed)

    planner_doc = dict(doc.get("planner") or {})
    weights = _build(PivotCostWeights, {k: planner_doc.pop(k) for k in ("k_len", "k_clear") if k in planner_doc},
                     "planner")
    planner = _build(PlannerConfig, planner_doc, "planner")
    pathset = _build(PathSetParams, doc.get("pathset"), "pathset")
    deform_doc = dict(doc.get("deform") or {})
    springs = _build(SpringParams, {k: deform_doc.pop(k) for k in ("k1", "k2") if k in deform_doc}, "deform")
    deform = _build(DeformOptConfig, deform_doc, "deform")

    mpc_doc = dict(doc.get("mpc") or {})
    for key in ("a_min", "a_max", "Q", "R"):
        if key in mpc_doc and mpc_doc[key] is not None:
            mpc_doc[key] = np.asarray(mpc_doc[key], dtype=np.float64)
    try:
        mpc = MPCConfig(**mpc_doc)
    except TypeError as exc:
        raise ScenarioError("mpc", str(exc)) from None
    except ValueError as exc:
        raise ScenarioError("mpc", str(exc)) from None

    model_doc = dict(doc.get("model") or {})
    arch = _build(ModelArch, model_doc.pop("arch", None), "model.arch")
    arch = dataclasses.replace(arch, num_keypoints=cable.num_keypoints)
    train = _build(TrainConfig, model_doc.pop("train", None) or {"epochs": 10}, "model.train")
    size = model_doc.pop("dataset_size", 10000)
    if model_doc:
        raise ScenarioError(f"model.{sorted(model_doc)[0]}", "unknown field")
    if not isinstance(size, int) or size < 1:
        raise ScenarioError("model.dataset_size", "expected a positive integer")

    sc = Scenario(workspace, cable, start, goal, planner, weights, pathset, deform, springs, mpc,
                  ModelSettings(size, arch, train), seed, str(doc.get("name", "scenario")))
    validate_scenario(sc)
    return sc


def validate_scenario(sc: Scenario):
    n = sc.cable.num_keypoints
    for label, s in (("start", sc.start), ("goal", sc.goal)):
        if len(s) != n:
            raise ScenarioError(label, f"has {len(s)} keypoints but cable.num_keypoints is {n}")
        chord = float(np.hypot(*(s[-1] - s[0])))
        if chord > sc.cable.length + 1e-9:
            raise ScenarioError(label, f"end-to-end distance {chord:.4f} m exceeds the cable length")
        clear = min(float(clearance_many(s, sc.workspace)[0].min()), polyline_clearance(s, sc.workspace))
        if clear <= 0:
            raise ScenarioError(label, "shape is not collision-free")
    return sc


def scenario_to_dict(sc: Scenario) -> dict:
    planner = _plain(sc.planner)
    planner.update(_plain(sc.weights))
    deform = _plain(sc.deform)
    deform.update(_plain(sc.springs))
    mpc = _plain(sc.mpc)
    return {
        "name": sc.name,
        "seed": sc.seed,
        "workspace": {"width": sc.workspace.width, "height": sc.workspace.height,
                      "obstacles": [o.vertices.tolist() for o in sc.workspace.obstacles]},
        "cable": _plain(sc.cable),
        "start": sc.start.tolist(),
        "goal": sc.goal.tolist(),
        "planner": planner,
        "pathset": _plain(sc.pathset),
        "deform": deform,
        "mpc": mpc,
        "model": {"dataset_size": sc.model.dataset_size, "arch": _plain(sc.model.arch),
                  "train": _plain(sc.model.train)},
    }


def load_scenario(path) -> Scenario:
    path = FsPath(path)
    if not path.exists() and (CANONICAL_DIR / f"{path}.yaml").exists():
        path = CANONICAL_DIR / f"{path}.yaml"
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ScenarioError(str(path), f"not valid YAML: {exc}") from None
    return scenario_from_dict(doc)


def save_scenario(sc: Scenario, path):
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(sc), fh, sort_keys=False, default_flow_style=None)


def canonical_path(name: str) -> FsPath:
    return CANONICAL_DIR / f"{name}.yaml"
