"""Scratch: full baseline grid to calibrate acceptance criterion 1."""
import json
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from lbsim.engine import Topology, run_episode
from lbsim.policies import BASELINE_POLICIES
from lbsim import traffic


def one(args):
    pol_name, tie, rate, seed = args
    topo = Topology(1, ((4, 8), (2, 4)))
    pol = BASELINE_POLICIES[pol_name](tie_break=tie).bind(
        topo, 0, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, 0))))
    spec = traffic.TrafficSpec(rate, "identical", 0.1, seed)
    fi = None
    for ep in range(20):
        dur = 60.0 + 5 * ep
        tasks = traffic.generate(spec, topo, dur, episode=ep)
        tr = run_episode(topo, [pol], tasks, dur)
        fi = float(np.mean(tr.fairness_per_boundary))
    return (pol_name, tie, rate, seed, fi)


if __name__ == "__main__":
    jobs = []
    for rate in (0.6, 0.7, 0.8, 0.9, 1.0):
        for seed in range(10):
            for pol in ("ecmp", "wcmp"):
                jobs.append((pol, "lowest", rate, seed))
            for pol in ("lsq", "sed"):
                for tie in ("lowest", "random"):
                    jobs.append((pol, tie, rate, seed))
    t0 = time.time()
    with ProcessPoolExecutor(2) as ex:
        results = list(ex.map(one, jobs, chunksize=4))
    print(f"grid done in {time.time()-t0:.0f}s")
    with open("/tmp/grid.json", "w") as fh:
        json.dump(results, fh)
