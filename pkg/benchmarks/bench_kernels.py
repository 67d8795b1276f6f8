"""Compare the numba kernels with their pure-numpy fallbacks.

Kernel timings run in this process (both variants are importable side by
side).  Workload timings run in two subprocesses, one of them with
DLOPLAN_DISABLE_NUMBA=1, so every hot loop takes the fallback path.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

WORKLOAD = r"""
import json, time
import numpy as np
from dloplan import _accel, dlo_sim
from dloplan.pivot_planner import PivotCostWeights, PlannerConfig, plan_pivot
from dloplan.scenario import load_scenario
from dloplan import pipeline

out = {"numba": _accel.USE_NUMBA}
cable = dlo_sim.CableParams()
st = dlo_sim.init_sim(cable, [[0.2, 0.3, 0.5], [0.45, 0.3, -0.5]])
dlo_sim.step(st, np.zeros(6), cable)          # compile outside the timed region
rng = np.random.default_rng(0)
acts = rng.uniform(-1, 1, (200, 6)) * np.tile([0.01, 0.01, 0.05], 2)
t = time.perf_counter()
for a in acts:
    try:
        st = dlo_sim.step(st, a, cable)
    except dlo_sim.SimError:
        pass
out["sim_200_steps_s"] = time.perf_counter() - t

sc = load_scenario("maze")
p = sc.cable.num_keypoints // 2
plan_pivot(sc.start[p], sc.goal[p], sc.workspace, sc.weights, PlannerConfig(max_iterations=50))
t = time.perf_counter()
res = plan_pivot(sc.start[p], sc.goal[p], sc.workspace, sc.weights, sc.planner)
out["rrt_star_s"] = time.perf_counter() - t
passages, plan = pipeline.plan_stage(sc)
ps = pipeline.pathset_stage(sc, plan.path, passages)
t = time.perf_counter()
pipeline.optimize_stage(sc, ps.path_set)
out["deform_opt_s"] = time.perf_counter() - t
print(json.dumps(out))
"""


def kernel_table(repeat):
    from dloplan import kernels
    from dloplan.scenario import load_scenario

    w = load_scenario("maze").workspace
    verts, starts = w.packed
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 0.7, (2000, 2))
    segs = rng.uniform(0, 0.7, (500, 4))
    wps = np.cumsum(rng.normal(scale=0.01, size=(60, 2)), axis=0)
    sig = np.linspace(0, 1, 60)
    q = rng.uniform(0, 1, 2000)

    cases = {
        "polygon_sd (2000 pts)": (lambda: kernels.polygon_sd_numpy(pts, verts[:4]),
                                  lambda: kernels.polygon_sd_numba(pts, verts[:4])),
        "clearance (2000 pts)": (lambda: kernels.clearance_numpy(pts, verts, starts, 0.7, 0.7, True),
                                 lambda: kernels.clearance_numba(pts, verts, starts, 0.7, 0.7, True)),
        "segment_clearance (500 segs)": (
            lambda: [kernels.segment_clearance_numpy(s[:2], s[2:], verts, starts, 0.7, 0.7, True) for s in segs],
            lambda: [kernels.segment_clearance_numba(s[0], s[1], s[2], s[3], verts, starts, 0.7, 0.7, True)
                     for s in segs]),
        "sigmoid_interp (60 wps x 2000 q)": (lambda: kernels.sigmoid_interp_numpy(wps, sig, 50.0, q),
                                             lambda: kernels.sigmoid_interp_numba(wps, sig, 50.0, q)),
    }
    rows = []
    for name, (f_np, f_nb) in cases.items():
        f_nb()  # compile
        t_np = min(timeit.repeat(f_np, number=1, repeat=repeat))
        t_nb = min(timeit.repeat(f_nb, number=1, repeat=repeat))
        rows.append((name, t_np, t_nb))
    return rows


def workload(disable):
    env = dict(os.environ)
    if disable:
        env["DLOPLAN_DISABLE_NUMBA"] = "1"
    else:
        env.pop("DLOPLAN_DISABLE_NUMBA", None)
    proc = subprocess.run([sys.executable, "-c", WORKLOAD], env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    print(f"{'kernel':36s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, t_np, t_nb in kernel_table(args.repeat):
        print(f"{name:36s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.1f}")

    fast, slow = workload(False), workload(True)
    print()
    print(f"{'workload':36s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for key in ("sim_200_steps_s", "rrt_star_s", "deform_opt_s"):
        print(f"{key:36s} {slow[key]:10.2f} {fast[key]:10.2f} {slow[key] / fast[key]:8.1f}")


if __name__ == "__main__":
    main()
