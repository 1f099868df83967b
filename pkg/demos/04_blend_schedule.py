"""Which attention features the editing stream receives at each step of a 50-step grid.

Early (noisy) steps average the editing and reconstruction features; a middle window
mixes in the null-text stream too; late steps keep the editing stream's own features.
"""
from regionblend.blend import BlendConfig, blend_branch
from regionblend.schedule import make_schedule

cfg = BlendConfig()
sched = make_schedule()
ts = [int(t) for t in sched.timesteps[::-1]]
print(f"tau_a={cfg.tau_a} tau_b={cfg.tau_b} alpha={cfg.alpha} beta={cfg.beta} gamma={cfg.gamma}")
runs, current = [], None
for t in ts:
    branch = blend_branch(t, 999, cfg)
    if current and current[0] == branch:
        current[2] = t
    else:
        current = [branch, t, t]
        runs.append(current)
for branch, first, last in runs:
    print(f"t {first:4d} .. {last:4d}: {branch}")
