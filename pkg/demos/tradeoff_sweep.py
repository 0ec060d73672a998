"""Momentum buys speed, staleness taxes it: map the tradeoff on a small grid.

Runs a miniature sweep (short horizon, tau grid capped at 60) so it finishes
in a minute or two on one core, then prints the estimated largest harmless
delay per momentum value next to the calibrated staleness budget and draws
the error curves.  Both quantities scale like (1-mu)^2; their coefficients
answer different questions (see the note printed with the table).

Output lands in demos/out/.
"""

import pathlib
import time

import numpy as np

from asyncpca import (
    DelayModel,
    RunConfig,
    SweepGrid,
    build_spectral_model,
    predict_optimal_delay,
    run_sweep,
)
from asyncpca.svg import Series, line_chart

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

SPECTRUM = (4.0, 3.0, 2.0, 1.0)
ETA = 5e-4
MUS = [0.5, 0.8, 0.9]
TAUS = list(range(0, 70, 10))
HORIZON = 60_000
REPLICAS = 200
# Start slightly tilted off the saddle so every replica escapes early and
# the final error measures the stationary floor, not a leftover transient.
INIT = np.array([0.05, 1.0, 0.0, 0.0]) / np.sqrt(1.0 + 0.05**2)

model = build_spectral_model(SPECTRUM)
grid = SweepGrid(
    mus=MUS,
    taus=TAUS,
    base=RunConfig(eta=ETA, mu=0.0, delay=DelayModel.fixed(0),
                   horizon=HORIZON, seed=7, init=INIT),
    replicas=REPLICAS,
)

print(f"sweeping {grid.cell_count} cells "
      f"({REPLICAS} replicas x {HORIZON} steps each) ...")
t0 = time.perf_counter()
curve = run_sweep(grid, model, progress=lambda msg: print("  " + msg))
print(f"done in {time.perf_counter() - t0:.1f}s")

curve.to_csv(OUT / "tradeoff_sweep.csv")

print()
print("error inflation vs the same-row tau=0 floor:")
print("  mu \\ tau " + "".join(f"{t:>7d}" for t in TAUS))
for mu in MUS:
    base = curve.cell(mu, 0).mean_err
    row = ""
    for t in TAUS:
        ratio = curve.cell(mu, t).mean_err / base
        mark = "*" if ratio <= 1.0 + grid.rho else " "
        row += f"{ratio:6.2f}{mark}"
    print(f"  mu={mu:.2f} " + row)
med_se = float(np.median(
    [c.std_err / (c.mean_err * np.sqrt(c.replicas)) for c in curve.cells]))
print(f"  (* = within 10%, the tau_hat rule.  The snapshot error is heavy")
print(f"   tailed, so one cell mean carries a relative SE near {med_se:.0%}:")
print(f"   flat rows are resolved only up to that noise, while steep rows")
print(f"   pin the knee sharply.)")

print()
print("  mu    tau_hat   staleness budget")
for mu in MUS:
    hat = curve.tau_hat[mu]
    pred = predict_optimal_delay(mu, ETA, model)
    shown = "none" if hat is None else f"{hat:.0f}"
    print(f"  {mu:.2f}  {shown:>7}   {pred:9.1f}")
print()
print("tau_hat: largest grid delay (cap 60) whose mean final error stays")
print("within 10% of the tau=0 floor at the same momentum.  The budget is")
print("the calibrated delay below which the trajectory tracks its small-eta")
print("limit; it shares the (1-mu)^2 scaling but not the coefficient, so")
print("compare trends across rows, not the two columns directly.")

series = []
for mu in MUS:
    cells = [curve.cell(mu, t) for t in TAUS]
    # half-width of the t interval on the mean, as a visual band
    half = [1.96 * c.std_err / np.sqrt(c.replicas) for c in cells]
    mean = [c.mean_err for c in cells]
    series.append(Series(
        label=f"mu={mu}",
        x=TAUS,
        y=mean,
        band_lo=[m - h for m, h in zip(mean, half)],
        band_hi=[m + h for m, h in zip(mean, half)],
    ))
line_chart(
    series,
    title="Mean final error vs staleness",
    xlabel="fixed delay tau",
    ylabel="1 - alignment at K",
    path=OUT / "tradeoff_sweep.svg",
)
print(f"\nwrote {OUT / 'tradeoff_sweep.csv'} and {OUT / 'tradeoff_sweep.svg'}")
