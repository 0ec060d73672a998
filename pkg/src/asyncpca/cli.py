"""Command-line front end.

Configuration is a flat key-value set: defaults, then a JSON config file
(--config FILE), then --key value flags, later sources winning.  Unknown
keys are hard errors.  The fully resolved values are echoed to
resolved_config.json next to the outputs, which together with the seed
reproduces every artifact byte for byte.

Exit codes: 0 all requested outputs written, 2 usage or configuration
error, 1 runtime failure.  Progress goes to stderr; stdout carries only
machine-readable summaries.
"""

from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .core import (
    AsyncPcaError,
    IoFailure,
    MissingRequired,
    StepTooLarge,
    TypeMismatch,
    UnknownKey,
    build_spectral_model,
)
from .diagnostics import async_error, decompose, momentum_error_profile, write_diagnostics_csv
from .dynamics import DelayModel, RunConfig, Trajectory, run_trajectory
from .experiments import (
    CellStats,
    SweepGrid,
    TradeoffCurve,
    Z_95,
    run_phase_experiment,
    run_sweep,
)
from .svg import Series, line_chart
from .theory import (
    CALIBRATED_GAMMA,
    CALIBRATED_ODE_COEFF,
    PhaseParams,
    delay_budget,
    effective_complexity,
    phase1_time,
    phase2_time,
    phase2_transit_time,
    phase3_time,
)

COMMANDS = ("simulate", "sweep", "phases", "diagnose", "theory")

USAGE = """usage: asyncpca COMMAND [--key value ...] [--config FILE.json]

commands:
  simulate  run one trajectory; writes trajectory.csv (and trajectory.svg with --svg true)
  sweep     momentum x staleness grid; writes sweep.csv (and tradeoff.svg with --svg true)
  phases    phase-timing experiment vs closed-form predictions; writes phases.csv
  diagnose  stride-1 run with update decomposition; writes diagnostics.csv
  theory    print phase times, delay budgets, and effective step counts

common keys: --eta F (required)  --mu F  --tau N  --horizon N  --seed N
             --eigenvalues 4,3,2,1  --init 0,1,0,0  --out DIR  --svg true|false
             --delay-kind fixed|uniform|geometric|poisson  --delay-cap N
sweep keys:  --mus 0.7,0.8,0.85,0.9,0.95  --taus 0:130:10  --replicas N  --rho F
phase keys:  --eps F  --nu F  --c-delta F  --delta F  --gamma F  --variant main|alt
config file: flat JSON object with the same keys; flags override it
"""


def _type_name(v: Any) -> str:
    return type(v).__name__


def _to_float(key: str, v: Any) -> float:
    if isinstance(v, bool):
        raise TypeMismatch(f"key '{key}' expects a number, got {_type_name(v)}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            raise TypeMismatch(f"key '{key}' expects a number, got '{v}'") from None
    raise TypeMismatch(f"key '{key}' expects a number, got {_type_name(v)}")


def _to_int(key: str, v: Any) -> int:
    if isinstance(v, bool):
        raise TypeMismatch(f"key '{key}' expects an integer, got {_type_name(v)}")
    if isinstance(v, int):
        return v
    if isinstance(v, float) and v == int(v):
        return int(v)
    if isinstance(v, str):
        try:
            return int(v, 10)
        except ValueError:
            raise TypeMismatch(f"key '{key}' expects an integer, got '{v}'") from None
    raise TypeMismatch(f"key '{key}' expects an integer, got {_type_name(v)}")


def _to_bool(key: str, v: Any) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str):
        low = v.strip().lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
    raise TypeMismatch(f"key '{key}' expects true/false, got '{v}'")


def _to_str(key: str, v: Any) -> str:
    if isinstance(v, str):
        return v
    raise TypeMismatch(f"key '{key}' expects a string, got {_type_name(v)}")


def _to_floats(key: str, v: Any) -> List[float]:
    if isinstance(v, str):
        parts = [p for p in v.split(",") if p.strip() != ""]
        return [_to_float(key, p) for p in parts]
    if isinstance(v, (list, tuple)):
        return [_to_float(key, x) for x in v]
    raise TypeMismatch(f"key '{key}' expects a number list, got {_type_name(v)}")


def _to_taus(key: str, v: Any) -> List[int]:
    """Delay grids: a list, a comma list, or an inclusive start:stop:step."""
    if isinstance(v, str) and ":" in v:
        parts = v.split(":")
        if len(parts) != 3:
            raise TypeMismatch(f"key '{key}' range must be start:stop:step, got '{v}'")
        start, stop, step = (_to_int(key, p) for p in parts)
        if step <= 0 or stop < start:
            raise TypeMismatch(f"key '{key}' range '{v}' is empty or descending")
        return list(range(start, stop + 1, step))
    vals = _to_floats(key, v)
    out = []
    for x in vals:
        if x != int(x) or x < 0:
            raise TypeMismatch(f"key '{key}' expects non-negative integers, got {x}")
        out.append(int(x))
    return out


_REQUIRED = object()

# key -> (parser, default). _REQUIRED keys raise MissingRequired when absent.
SCHEMA: Dict[str, tuple] = {
    "eta": (_to_float, _REQUIRED),
    "mu": (_to_float, 0.9),
    "mus": (_to_floats, [0.7, 0.8, 0.85, 0.9, 0.95]),
    "tau": (_to_int, 0),
    "taus": (_to_taus, list(range(0, 131, 10))),
    "delay_kind": (_to_str, "fixed"),
    "delay_cap": (_to_int, None),
    "horizon": (_to_int, 200_000),
    "seed": (_to_int, 0),
    "replicas": (_to_int, 100),
    "eigenvalues": (_to_floats, [4.0, 3.0, 2.0, 1.0]),
    "init": (_to_floats, None),
    "stride": (_to_int, 100),
    "eps": (_to_float, 1e-3),
    "nu": (_to_float, 0.5),
    "c_delta": (_to_float, 1.0),
    "delta": (_to_float, None),
    "gamma": (_to_float, None),
    "rho": (_to_float, 0.1),
    "variant": (_to_str, "main"),
    "svg": (_to_bool, False),
    "workers": (_to_int, None),
    "out": (_to_str, None),
    "sampler": (_to_str, "rademacher"),
    "trunc_radius": (_to_float, 3.0),
    "mean_field": (_to_bool, False),
    "success_metric": (_to_str, "final_error_mean"),
}


@dataclass
class ExperimentSpec:
    """One resolved CLI invocation: the command plus every schema value."""

    command: str
    values: Dict[str, Any]

    @property
    def out_dir(self) -> Path:
        out = self.values.get("out")
        return Path(out) if out is not None else Path(".")


class _UsageExit(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message


def parse_spec(argv: Sequence[str], config_text: Optional[str] = None) -> ExperimentSpec:
    """Resolve defaults, config file, and flags into an ExperimentSpec.

    config_text, when given, stands in for the --config file (tests use
    this); an explicit --config flag still wins over it.
    """
    argv = list(argv)
    if not argv:
        raise _UsageExit(2, USAGE)
    if argv[0] in ("-h", "--help", "help"):
        raise _UsageExit(0, USAGE)
    command = argv[0]
    if command not in COMMANDS:
        raise _UsageExit(2, f"unknown command '{command}'\n\n{USAGE}")

    flags: Dict[str, Any] = {}
    config_path: Optional[str] = None
    i = 1
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--"):
            raise _UsageExit(2, f"expected --key, got '{tok}'\n\n{USAGE}")
        key = tok[2:].replace("-", "_")
        if i + 1 >= len(argv):
            raise TypeMismatch(f"flag '--{tok[2:]}' is missing its value")
        val = argv[i + 1]
        i += 2
        if key == "config":
            config_path = val
            continue
        if key not in SCHEMA:
            raise UnknownKey(f"unknown key '{key}'")
        flags[key] = val

    file_vals: Dict[str, Any] = {}
    raw = config_text
    if config_path is not None:
        try:
            raw = Path(config_path).read_text()
        except OSError as exc:
            raise IoFailure(f"cannot read config {config_path}: {exc}") from exc
    if raw is not None:
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TypeMismatch(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise TypeMismatch("config file must hold a flat JSON object")
        for key, val in doc.items():
            norm = str(key).replace("-", "_")
            if norm not in SCHEMA:
                raise UnknownKey(f"unknown key '{key}' in config file")
            file_vals[norm] = val

    values: Dict[str, Any] = {}
    for key, (parser, default) in SCHEMA.items():
        if key in flags:
            values[key] = parser(key, flags[key])
        elif key in file_vals:
            values[key] = parser(key, file_vals[key])
        elif default is _REQUIRED:
            raise MissingRequired(f"required key '{key}' was not provided")
        else:
            values[key] = default
    return ExperimentSpec(command=command, values=values)


def _write_resolved(spec: ExperimentSpec, out_dir: Path) -> None:
    doc: Dict[str, Any] = {"command": spec.command}
    for key in sorted(spec.values):
        doc[key] = spec.values[key]
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.json").write_text(
            json.dumps(doc, indent=2) + "\n"
        )
    except OSError as exc:
        raise IoFailure(f"cannot write into {out_dir}: {exc}") from exc


def _build_model(v: Dict[str, Any]):
    return build_spectral_model(
        v["eigenvalues"], sampler=v["sampler"], trunc_radius=v["trunc_radius"],
    )


def _build_delay(v: Dict[str, Any]) -> DelayModel:
    kind = v["delay_kind"]
    tau, cap = v["tau"], v["delay_cap"]
    if kind == "fixed":
        return DelayModel.fixed(tau)
    if kind == "uniform":
        return DelayModel.uniform_bounded(tau)
    if kind == "geometric":
        return DelayModel.geometric(float(tau), cap)
    if kind == "poisson":
        return DelayModel.poisson(float(tau), cap)
    raise TypeMismatch(f"key 'delay_kind' expects fixed|uniform|geometric|poisson, got '{kind}'")


def _build_init(v: Dict[str, Any], dim: int) -> np.ndarray:
    if v["init"] is not None:
        init = np.asarray(v["init"], dtype=np.float64)
        if init.shape != (dim,):
            raise TypeMismatch(f"key 'init' expects {dim} components, got {init.size}")
        return init
    init = np.zeros(dim)
    init[1 if dim > 1 else 0] = 1.0
    return init


def _build_phase_params(v: Dict[str, Any], model) -> PhaseParams:
    return PhaseParams(
        model=model,
        eta=v["eta"],
        mu=v["mu"],
        eps=v["eps"],
        nu=v["nu"],
        delta=v["delta"],
        c_delta=v["c_delta"],
        gamma=v["gamma"] if v["gamma"] is not None else CALIBRATED_GAMMA,
    )


def _workers(v: Dict[str, Any]) -> Optional[int]:
    """Requested worker count, capped by ASYNC_LAB_THREADS when that is set."""
    requested = v["workers"]
    env = os.environ.get("ASYNC_LAB_THREADS")
    cap = None
    if env is not None:
        try:
            cap = max(1, int(env))
        except ValueError as exc:
            raise TypeMismatch(f"ASYNC_LAB_THREADS must be an integer, got '{env}'") from exc
    if requested is None:
        return cap
    return min(requested, cap) if cap is not None else requested


def emit_plot(obj: Union[TradeoffCurve, Trajectory], path: Union[str, Path]) -> str:
    """Write the standard chart for a sweep result or a single trajectory."""
    if isinstance(obj, TradeoffCurve):
        series = []
        for mu in obj.grid.mus:
            cells = [c for c in obj.cells if c.mu == mu]
            xs = [c.tau for c in cells]
            ys = [c.mean_err for c in cells]
            half = [Z_95 * c.std_err / math.sqrt(c.replicas) for c in cells]
            series.append(Series(
                label=f"mu={mu:g}",
                x=xs,
                y=ys,
                band_lo=[y - h for y, h in zip(ys, half)],
                band_hi=[y + h for y, h in zip(ys, half)],
            ))
        return line_chart(
            series,
            title="Final error vs staleness",
            xlabel="staleness tau",
            ylabel="final error 1 - a1",
            path=path,
        )
    if isinstance(obj, Trajectory):
        t = obj.times
        a = obj.alignments
        series = [
            Series(label=f"a{i + 1}", x=t, y=a[:, i]) for i in range(obj.dim)
        ]
        return line_chart(
            series,
            title="Alignment trajectory",
            xlabel="time (steps x eta)",
            ylabel="squared alignment",
            path=path,
        )
    raise TypeMismatch(f"cannot plot a {_type_name(obj)}")


def _resolve_simulate(spec: ExperimentSpec) -> Dict[str, Any]:
    v = spec.values
    model = _build_model(v)
    config = RunConfig(
        eta=v["eta"], mu=v["mu"], delay=_build_delay(v), horizon=v["horizon"],
        seed=v["seed"], init=_build_init(v, model.dim),
    )
    if v["stride"] < 1:
        raise TypeMismatch(f"key 'stride' must be >= 1, got {v['stride']}")
    return {"model": model, "config": config}


def _run_simulate(spec: ExperimentSpec, objs, out_dir: Path, stdout, stderr) -> int:
    v = spec.values
    traj = run_trajectory(
        objs["model"], objs["config"], stride=v["stride"], mean_field=v["mean_field"],
    )
    traj.to_csv(out_dir / "trajectory.csv")
    if v["svg"]:
        emit_plot(traj, out_dir / "trajectory.svg")
    print(f"final_alignment={float(traj.final_h[0] ** 2):.10g}", file=stdout)
    print(f"final_error={1.0 - float(traj.final_h[0] ** 2):.10g}", file=stdout)
    print(f"max_jump={traj.max_jump:.10g}", file=stdout)
    print(f"max_norm_sq={traj.max_norm_sq:.10g}", file=stdout)
    print(f"clip_count={traj.clip_count}", file=stdout)
    print(f"diverged={'true' if traj.diverged else 'false'}", file=stdout)
    return 0


def _resolve_sweep(spec: ExperimentSpec) -> Dict[str, Any]:
    v = spec.values
    model = _build_model(v)
    for mu in v["mus"]:
        if not 0.0 <= mu < 1.0:
            raise TypeMismatch(f"key 'mus' values must lie in [0, 1), got {mu}")
    base = RunConfig(
        eta=v["eta"], mu=0.0, delay=DelayModel.fixed(0), horizon=v["horizon"],
        seed=v["seed"], init=_build_init(v, model.dim),
    )
    grid = SweepGrid(
        mus=list(v["mus"]), taus=list(v["taus"]), base=base, replicas=v["replicas"],
        success_metric=v["success_metric"], rho=v["rho"],
    )
    return {"model": model, "grid": grid, "workers": _workers(v)}


def _run_sweep_cmd(spec: ExperimentSpec, objs, out_dir: Path, stdout, stderr) -> int:
    v = spec.values
    grid: SweepGrid = objs["grid"]
    done: List[CellStats] = []
    csv_path = out_dir / "sweep.csv"
    try:
        curve = run_sweep(
            grid, objs["model"],
            workers=objs["workers"],
            progress=lambda msg: print(msg, file=stderr),
            on_group=lambda j, cells: done.extend(cells),
        )
    except KeyboardInterrupt:
        partial = TradeoffCurve(
            grid=grid,
            cells=sorted(done, key=lambda c: (grid.mus.index(c.mu), c.tau)),
            tau_hat={},
        )
        partial.to_csv(csv_path)
        print(f"interrupted: flushed {len(done)} of {grid.cell_count} cells to {csv_path}",
              file=stderr)
        return 1
    curve.to_csv(csv_path)
    if v["svg"]:
        emit_plot(curve, out_dir / "tradeoff.svg")
    for mu in grid.mus:
        tau_hat = curve.tau_hat.get(mu)
        shown = "none" if tau_hat is None else f"{tau_hat:g}"
        print(f"tau_hat mu={mu:g} tau={shown}", file=stdout)
    return 0


def _resolve_phases(spec: ExperimentSpec) -> Dict[str, Any]:
    v = spec.values
    model = _build_model(v)
    if v["replicas"] < 1:
        raise TypeMismatch(f"key 'replicas' must be >= 1, got {v['replicas']}")
    params = _build_phase_params(v, model)
    # Evaluate every prediction now so an eta too large for the eps/mu
    # combination is reported as a configuration error, not mid-run.
    for variant in ("main", "alt"):
        phase1_time(params, variant=variant)
        phase3_time(params, variant=variant)
    phase2_transit_time(params)
    return {
        "model": model,
        "params": params,
        "delay": _build_delay(v),
    }


def _run_phases(spec: ExperimentSpec, objs, out_dir: Path, stdout, stderr) -> int:
    v = spec.values
    report = run_phase_experiment(
        objs["model"], objs["params"], objs["delay"], v["horizon"],
        replicas=v["replicas"], seed=v["seed"],
    )
    report.to_csv(out_dir / "phases.csv")
    print(report.summary(), file=stdout)
    return 0


def _resolve_diagnose(spec: ExperimentSpec) -> Dict[str, Any]:
    v = spec.values
    if v["mean_field"]:
        raise TypeMismatch("diagnose replays sample noise; mean_field must stay false")
    return _resolve_simulate(spec)


def _run_diagnose(spec: ExperimentSpec, objs, out_dir: Path, stdout, stderr) -> int:
    model = objs["model"]
    print("running stride-1 trajectory for replay diagnostics", file=stderr)
    traj = run_trajectory(model, objs["config"], stride=1)
    dec = decompose(traj, model)
    asy = async_error(traj, model)
    write_diagnostics_csv(dec, asy, out_dir / "diagnostics.csv")
    profile = momentum_error_profile(dec)
    print(f"momentum_err_max={profile.max_err:.10g}", file=stdout)
    print(f"momentum_err_bound={profile.bound:.10g}", file=stdout)
    print(f"momentum_err_ok={'true' if profile.within_bound else 'false'}", file=stdout)
    print(f"recon_gap_max={float(dec.recon_gap.max()):.10g}", file=stdout)
    print(f"drift_step_max={float(asy.step_norms.max(initial=0.0)):.10g}", file=stdout)
    print(f"drift_step_bound={asy.step_bound:.10g}", file=stdout)
    print(f"drift_step_ok={'true' if asy.within_step_bound else 'false'}", file=stdout)
    print(f"drift_sup={asy.sup_norm:.10g}", file=stdout)
    return 0


def _resolve_theory(spec: ExperimentSpec) -> Dict[str, Any]:
    v = spec.values
    model = _build_model(v)
    return {"model": model, "params": _build_phase_params(v, model)}


def _run_theory(spec: ExperimentSpec, objs, out_dir: Path, stdout, stderr) -> int:
    v = spec.values
    model, p = objs["model"], objs["params"]

    def show(key: str, fn: Callable[[], float]) -> None:
        try:
            print(f"{key}={fn():.10g}", file=stdout)
        except StepTooLarge as exc:
            print(f"{key}=nan", file=stdout)
            print(f"note: {key}: {exc}", file=stderr)

    show("T1_main", lambda: phase1_time(p, variant="main"))
    show("T1_alt", lambda: phase1_time(p, variant="alt"))
    show("T2_statement", lambda: phase2_time(p))
    show("T2_traverse", lambda: phase2_transit_time(p))
    show("T3_main", lambda: phase3_time(p, variant="main"))
    show("T3_alt", lambda: phase3_time(p, variant="alt"))
    print(f"delta={p.delta:.10g}", file=stdout)
    print(f"gamma={p.gamma:.10g}", file=stdout)
    show("budget_ode", lambda: delay_budget(
        p.mu, p.eta, p.gamma, model, regime="ode", c_tau=CALIBRATED_ODE_COEFF))
    gamma_sde = min(p.gamma, 0.5)
    show("budget_sde", lambda: delay_budget(
        p.mu, p.eta, gamma_sde, model, regime="sde", c_tau=CALIBRATED_ODE_COEFF))
    tau_eff = max(v["tau"], 1)
    print(f"tau_for_counts={tau_eff}", file=stdout)
    for phase in (1, 2, 3):
        for variant in ("main", "alt"):
            show(f"N{phase}_{variant}",
                 lambda ph=phase, vr=variant: effective_complexity(ph, p, tau_eff, variant=vr))
    return 0


_COMMANDS = {
    "simulate": (_resolve_simulate, _run_simulate),
    "sweep": (_resolve_sweep, _run_sweep_cmd),
    "phases": (_resolve_phases, _run_phases),
    "diagnose": (_resolve_diagnose, _run_diagnose),
    "theory": (_resolve_theory, _run_theory),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    stdout, stderr = sys.stdout, sys.stderr
    try:
        spec = parse_spec(argv)
    except _UsageExit as u:
        print(u.message, file=stdout if u.code == 0 else stderr)
        return u.code
    except AsyncPcaError as exc:
        print(f"config error: {exc}", file=stderr)
        return 2

    resolver, runner = _COMMANDS[spec.command]
    out_dir = spec.out_dir
    try:
        if spec.values["eta"] <= 0.0:
            raise TypeMismatch(f"key 'eta' must be positive, got {spec.values['eta']}")
        objs = resolver(spec)
        # theory prints to stdout only; skip the record unless a directory
        # was asked for explicitly.
        if spec.command != "theory" or spec.values["out"] is not None:
            _write_resolved(spec, out_dir)
    except AsyncPcaError as exc:
        print(f"config error: {exc}", file=stderr)
        return 2

    try:
        return runner(spec, objs, out_dir, stdout, stderr)
    except KeyboardInterrupt:
        print("interrupted", file=stderr)
        return 1
    except AsyncPcaError as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
