"""Scratch: criterion-2 calibration - rlb-sac at 90%, identical tasks."""
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from lbsim.harness import ExperimentConfig, run_experiment

BASE = ExperimentConfig(
    lbs=1, servers=((4, 8), (2, 4)), rate_fraction=0.9,
    distribution="identical", mean_workload=0.1,
    policy="rlb-sac", episodes=20,
)


def one(seed):
    t0 = time.time()
    res = run_experiment(BASE, seed=seed, write_files=False)
    fis = [s.fairness_index for s in res.summaries]
    rewards = [s.mean_reward for s in res.summaries]
    return seed, fis, rewards, time.time() - t0


if __name__ == "__main__":
    out = {}
    with ProcessPoolExecutor(2) as ex:
        for seed, fis, rewards, wall in ex.map(one, [2, 3, 4]):
            out[seed] = (fis, rewards)
            print(f"seed {seed} [{wall:.0f}s]: last FI={fis[-1]:.3f} "
                  f"first5R={statistics.mean(rewards[:5]):.4f} "
                  f"last5R={statistics.mean(rewards[-5:]):.4f}")
            print("   FI curve:", " ".join(f"{f:.2f}" for f in fis))
    med = statistics.median(out[s][0][-1] for s in out)
    print(f"median last-episode FI over seeds 2,3,4: {med:.3f}")
    json.dump({str(k): v for k, v in out.items()}, open("/tmp/rlb90.json", "w"))
