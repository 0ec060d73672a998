"""How fast does the stochastic path collapse onto the deterministic flow?

One replica per step size, all started from the same tilted vector, compared
against the closed-form solution of the rescaled mean flow.  The sup gap over
the whole window should shrink roughly like sqrt(eta) (the CLT scale), and
the mean-field engine run should sit on the flow to within O(eta).
"""

import pathlib

import numpy as np

from asyncpca import (
    DelayModel,
    RunConfig,
    build_spectral_model,
    ode_solution,
    run_trajectory,
)
from asyncpca.svg import Series, line_chart


def alignment_gap(traj, model, mu):
    pred = ode_solution(traj.config.init, traj.times, model, mu)
    return float(np.max(np.abs(traj.alignments[:, 0] - pred[:, 0] ** 2)))


def main():
    out = pathlib.Path(__file__).parent / "out"
    out.mkdir(exist_ok=True)

    model = build_spectral_model((4.0, 3.0, 2.0, 1.0))
    mu = 0.6
    t_end = 4.0
    init = np.array([0.1, np.sqrt(1 - 0.01), 0.0, 0.0])

    print("stochastic vs closed-form flow, sup gap over t in [0, 4]:")
    series = []
    for eta in (4e-3, 1e-3, 2.5e-4):
        cfg = RunConfig(eta=eta, mu=mu, delay=DelayModel.fixed(0),
                        horizon=int(round(t_end / eta)), seed=3, init=init)
        traj = run_trajectory(model, cfg, stride=max(1, cfg.horizon // 400))
        gap = alignment_gap(traj, model, mu)
        print(f"  eta={eta:7.1e}  sup|a1 - flow| = {gap:.4f}"
              f"   gap/sqrt(eta) = {gap / np.sqrt(eta):4.1f}")
        series.append(Series(label=f"eta={eta:g}",
                             x=traj.times.tolist(),
                             y=traj.alignments[:, 0].tolist()))
    print("  (the ratio staying O(1) while eta drops 16x is the sqrt(eta)")
    print("   collapse; the constant is set by the steep crossing, where a")
    print("   small random time shift reads as a large vertical gap)")

    # the noise-free engine should track the flow at discretization accuracy
    cfg = RunConfig(eta=1e-3, mu=mu, delay=DelayModel.fixed(0),
                    horizon=int(round(t_end / 1e-3)), seed=0, init=init)
    mf = run_trajectory(model, cfg, stride=10, mean_field=True)
    print(f"  mean-field engine at eta=1e-3: sup gap = "
          f"{alignment_gap(mf, model, mu):.2e}")

    t_grid = np.linspace(0.0, t_end, 401)
    flow = ode_solution(init, t_grid, model, mu)
    series.append(Series(label="closed form",
                         x=t_grid.tolist(),
                         y=(flow[:, 0] ** 2).tolist()))
    line_chart(series,
               title=f"Leading alignment vs time (mu={mu})",
               xlabel="t = k eta",
               ylabel="a1",
               path=out / "ode_limit.svg")
    print(f"wrote {out / 'ode_limit.svg'}")


if __name__ == "__main__":
    main()
