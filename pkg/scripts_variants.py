"""Scratch: criterion-2 hyperparameter variants within design freedom."""
import math
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from lbsim.harness import ExperimentConfig, run_experiment
from lbsim.agent import SacConfig

BASE = ExperimentConfig(
    lbs=1, servers=((4, 8), (2, 4)), rate_fraction=0.9,
    distribution="identical", mean_workload=0.1,
    policy="rlb-sac", episodes=20,
)

VARIANTS = {
    "A_alpha02": dict(log_alpha_init=math.log(0.02)),
    "B_alpha02_u2": dict(log_alpha_init=math.log(0.02), updates_per_step=2),
    "C_alpha02_u2_g95": dict(log_alpha_init=math.log(0.02), updates_per_step=2,
                             gamma=0.95),
    "D_u4": dict(updates_per_step=4),
    "E_alpha02_ls1": dict(log_alpha_init=math.log(0.02), log_std_init=-1.0),
    "F_alpha02_u2_ls1": dict(log_alpha_init=math.log(0.02), updates_per_step=2,
                             log_std_init=-1.0),
    "G_alpha02_u2_ls15_g95": dict(log_alpha_init=math.log(0.02),
                                  updates_per_step=2, log_std_init=-1.5,
                                  gamma=0.95),
    "H_alpha02_ls15_alr": dict(log_alpha_init=math.log(0.02), log_std_init=-1.5,
                               alpha_learning_rate=1e-2),
    "I_alpha02_ls15": dict(log_alpha_init=math.log(0.02), log_std_init=-1.5),
    "J_alpha02_g90": dict(log_alpha_init=math.log(0.02), gamma=0.9),
    "K_alpha02_g95_u2": dict(log_alpha_init=math.log(0.02), gamma=0.95,
                             updates_per_step=2),
    "L_alpha02_g90_u2_ls15": dict(log_alpha_init=math.log(0.02), gamma=0.9,
                                  updates_per_step=2, log_std_init=-1.5),
    "M1_guiding": dict(log_alpha_init=math.log(0.02), gamma=0.95,
                       updates_per_step=2, value_target_uses_guiding_actor=True),
    "M2_alr": dict(log_alpha_init=math.log(0.02), gamma=0.95,
                   updates_per_step=2, alpha_learning_rate=1e-2),
    "N_h16": dict(log_alpha_init=math.log(0.02), gamma=0.95,
                  updates_per_step=2, hidden=16),
    "O_h24": dict(log_alpha_init=math.log(0.02), gamma=0.95,
                  updates_per_step=2, hidden=24),
    "P_h16_u1": dict(log_alpha_init=math.log(0.02), gamma=0.95, hidden=16),
    "Q_h16_g80": dict(log_alpha_init=math.log(0.02), gamma=0.8, hidden=16),
    "R_h16_g90": dict(log_alpha_init=math.log(0.02), gamma=0.9, hidden=16),
    "S_h16_tight": dict(log_alpha_init=math.log(0.02), gamma=0.95, hidden=16,
                        log_std_bounds=(-3.0, -1.2)),
    "T_h16_g90_tight": dict(log_alpha_init=math.log(0.02), gamma=0.9, hidden=16,
                            log_std_bounds=(-3.0, -1.2)),
    "U_h16_g90_u2": dict(log_alpha_init=math.log(0.02), gamma=0.9, hidden=16,
                         updates_per_step=2),
    "V_h16_g97_u2": dict(log_alpha_init=math.log(0.02), gamma=0.97, hidden=16,
                         updates_per_step=2),
    "W_h16_g98_u2": dict(log_alpha_init=math.log(0.02), gamma=0.98, hidden=16,
                         updates_per_step=2),
    "X_h16_g99_u2": dict(log_alpha_init=math.log(0.02), gamma=0.99, hidden=16,
                         updates_per_step=2),
    "V2_g96_u2": dict(log_alpha_init=math.log(0.02), gamma=0.96, hidden=16,
                      updates_per_step=2),
    "V3_g97_u3": dict(log_alpha_init=math.log(0.02), gamma=0.97, hidden=16,
                      updates_per_step=3),
    "V4_g97_u2_tight": dict(log_alpha_init=math.log(0.02), gamma=0.97, hidden=16,
                            updates_per_step=2, log_std_bounds=(-3.0, -1.2)),
    "V5_g97_u2_guid": dict(log_alpha_init=math.log(0.02), gamma=0.97, hidden=16,
                           updates_per_step=2, value_target_uses_guiding_actor=True),
    "WD1_g97_wd01": dict(log_alpha_init=math.log(0.02), gamma=0.97, hidden=16,
                         updates_per_step=2, actor_weight_decay=0.1),
    "WD2_g97_wd03": dict(log_alpha_init=math.log(0.02), gamma=0.97, hidden=16,
                         updates_per_step=2, actor_weight_decay=0.3),
    "WD3_g95_wd03": dict(log_alpha_init=math.log(0.02), gamma=0.95, hidden=16,
                         updates_per_step=2, actor_weight_decay=0.3),
    "WD4_g97_wd1": dict(log_alpha_init=math.log(0.02), gamma=0.97, hidden=16,
                        updates_per_step=2, actor_weight_decay=1.0),
}


def one(args):
    name, seed = args
    cfg = replace(BASE, sac=SacConfig(**VARIANTS[name]))
    t0 = time.time()
    res = run_experiment(cfg, seed=seed, write_files=False)
    fis = [s.fairness_index for s in res.summaries]
    rewards = [s.mean_reward for s in res.summaries]
    return name, seed, fis, rewards, time.time() - t0


if __name__ == "__main__":
    names = sys.argv[1:] or list(VARIANTS)
    jobs = [(n, s) for n in names for s in (2, 3, 4)]
    results = {}
    with ProcessPoolExecutor(2) as ex:
        for name, seed, fis, rewards, wall in ex.map(one, jobs):
            results.setdefault(name, []).append((seed, fis, rewards))
            print(f"{name} seed {seed} [{wall:.0f}s]: last FI={fis[-1]:.3f} "
                  f"r_first5={statistics.mean(rewards[:5]):.4f} "
                  f"r_last5={statistics.mean(rewards[-5:]):.4f}", flush=True)
            print("   FI:", " ".join(f"{f:.2f}" for f in fis), flush=True)
    for name, rows in results.items():
        med = statistics.median(r[1][-1] for r in rows)
        print(f"== {name}: median last FI = {med:.3f}")
