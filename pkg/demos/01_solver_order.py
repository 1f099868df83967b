"""How fast DDIM and DPM-Solver++(2M) approach the exact probability-flow solution.

With a linear noise predictor the ODE has a closed form, so the sampling error can be
measured directly. Doubling N should roughly halve the DDIM error and quarter the
second-order solver's error.
"""
import numpy as np

from regionblend.schedule import LinearDenoiser, make_schedule, run_trajectory

lin = LinearDenoiser(1.0)
z = np.array([1.0, -0.5, 0.25, 2.0])
ns = [10, 20, 40, 80, 160]
print(f"{'N':>5} {'ddim error':>12} {'dpmpp2m error':>14}")
errors = {"ddim": [], "dpmpp2m": []}
for n in ns:
    sched = make_schedule(N=n)
    exact = lin.exact(z, 999, 0, sched)
    row = []
    for kind in errors:
        err = np.max(np.abs(run_trajectory(z, None, lin, sched, kind, "denoise") - exact))
        errors[kind].append(err)
        row.append(err)
    print(f"{n:>5} {row[0]:>12.3e} {row[1]:>14.3e}")
for kind, errs in errors.items():
    print(f"{kind}: log-log slope {np.polyfit(np.log(ns), np.log(errs), 1)[0]:.2f}")
