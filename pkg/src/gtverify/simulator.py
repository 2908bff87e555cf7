"""Linearized closed-loop simulation with a runtime ellipsoid monitor.

All signals are deviations from the active operating point. Each step
evaluates the plant outputs, the controller error inputs, the controller
command, the Butee limiter and then advances plant, pump and controller.
A second mode drives a controller alone with seeded bounded inputs, which is
what the invariance certificate speaks about.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ellipsoid import LIMITER_HI, LIMITER_LO, Ellipsoid, saturate
from .model import (
    NH_REF,
    NL_REF,
    FeedbackWiring,
    OperatingPoint,
    Scalings,
    StateSpace,
    controller_schedule,
    load_fixture,
    pla_to_command,
    pump_statespace,
)

DEFAULT_SAMPLE_PERIOD = 0.02
BUTEE_MID = 0.5 * (LIMITER_LO + LIMITER_HI)
OVERFLOW = 1e150
N_PLANT, N_PUMP, N_CTRL = 4, 1, 11

STATE_COLUMNS = (
    tuple(f"xp{i}" for i in range(N_PLANT)) + ("xq",) + tuple(f"xc{i}" for i in range(N_CTRL))
)
COLUMNS = (
    "step", "time", "pla", "point", "nh_cmd", "nl_cmd", "nh_pct", "nl_pct", "wf", "u_pre", "u_post",
) + STATE_COLUMNS


class SimulationError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class Monitor:
    """Ellipsoid over a subset of trace columns."""

    ellipsoid: Ellipsoid
    vars: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        if len(self.vars) != self.ellipsoid.n:
            raise ValueError(f"monitor has {len(self.vars)} variables for a {self.ellipsoid.n}-dim ellipsoid")

    def to_json(self) -> dict:
        return {"ellipsoid": self.ellipsoid.to_json(), "vars": list(self.vars)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Monitor":
        return cls(Ellipsoid.from_json(obj["ellipsoid"]), tuple(obj["vars"]))


@dataclass(frozen=True)
class SimConfig:
    """Closed-loop run description.

    ``equilibrium`` names an operating point whose linearization is used
    throughout, or ``"scheduled"``: the plant linearization follows the
    operating point nearest to the current PLA and the controller is
    interpolated in measured NH percent.
    """

    duration: int
    pla_profile: tuple[tuple[int, float], ...] = ((0, 0.0),)
    equilibrium: str = "scheduled"
    seed: int = 0
    initial_state: tuple[float, ...] | None = None
    butee: bool = True
    sample_period: float = DEFAULT_SAMPLE_PERIOD
    monitor: Monitor | None = None

    def __post_init__(self):
        prof = tuple((int(k), float(v)) for k, v in self.pla_profile)
        object.__setattr__(self, "pla_profile", prof)
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if not prof:
            raise ValueError("PLA profile is empty")
        steps = [k for k, _ in prof]
        if steps != sorted(steps) or len(set(steps)) != len(steps):
            raise ValueError("PLA profile steps must be strictly ascending")
        for _, v in prof:
            if not 0.0 <= v <= 40.0:
                raise ValueError(f"PLA {v} outside [0, 40]")
        if self.initial_state is not None:
            x = tuple(float(v) for v in self.initial_state)
            if len(x) != len(STATE_COLUMNS):
                raise ValueError(f"initial state needs {len(STATE_COLUMNS)} entries")
            object.__setattr__(self, "initial_state", x)

    def pla_at(self, step: int) -> float:
        value = self.pla_profile[0][1]
        for k, v in self.pla_profile:
            if k <= step:
                value = v
        return value

    def to_json(self) -> dict:
        return {
            "duration": self.duration,
            "pla_profile": [list(p) for p in self.pla_profile],
            "equilibrium": self.equilibrium,
            "seed": self.seed,
            "initial_state": None if self.initial_state is None else list(self.initial_state),
            "butee": self.butee,
            "sample_period": self.sample_period,
            "monitor": None if self.monitor is None else self.monitor.to_json(),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SimConfig":
        known = {"duration", "pla_profile", "equilibrium", "seed", "initial_state", "butee", "sample_period", "monitor"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown simulation keys {sorted(unknown)}")
        kw = dict(obj)
        if kw.get("monitor") is not None:
            kw["monitor"] = Monitor.from_json(kw["monitor"])
        if "pla_profile" in kw:
            kw["pla_profile"] = tuple(tuple(p) for p in kw["pla_profile"])
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Per-step records, one row per step, columns in :data:`COLUMNS` or custom."""

    columns: tuple[str, ...]
    data: np.ndarray
    margins: np.ndarray | None = None
    point_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        if name == "margin":
            if self.margins is None:
                raise KeyError("no monitor configured")
            return self.margins
        return self.data[:, self.columns.index(name)]

    def values(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.columns.index(v) for v in names]
        return self.data[:, idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        head = list(self.columns) + (["margin"] if self.margins is not None else [])
        buf.write(",".join(head) + "\n")
        for k, row in enumerate(self.data):
            cells = []
            for name, v in zip(self.columns, row):
                if name in ("step", "point"):
                    cells.append(str(int(v)) if name == "step" else self.point_names[int(v)])
                else:
                    cells.append(format(float(v), ".17g"))
            if self.margins is not None:
                cells.append(format(float(self.margins[k]), ".17g"))
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()


@dataclass(frozen=True)
class MonitorReport:
    margins: np.ndarray
    first_violation: int | None

    @property
    def violated(self) -> bool:
        return self.first_violation is not None

    def to_json(self) -> dict:
        return {
            "first_violation": "none" if self.first_violation is None else self.first_violation,
            "min_margin": float(np.min(self.margins)) if self.margins.size else None,
        }


def monitor_margins(values: np.ndarray, e: Ellipsoid) -> np.ndarray:
    """``level - (x - c)^T Q^-1 (x - c)`` row by row."""
    d = np.atleast_2d(values) - e.center
    L = np.linalg.cholesky(e.Q.array)
    z = np.linalg.solve(L, d.T)
    return e.level - np.sum(z * z, axis=0)


def monitor_invariant(trace: SimTrace, e: Ellipsoid, vars: Sequence[str], tol: float = 1e-9) -> MonitorReport:
    """Margins of ``trace`` against ``e`` over ``vars`` and the first step below ``-tol * level``."""
    m = monitor_margins(trace.values(vars), e)
    bad = np.nonzero(m < -tol * e.level)[0]
    return MonitorReport(m, int(bad[0]) if bad.size else None)


def _check_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > OVERFLOW:
        raise SimulationError("state overflow or NaN", step)


def butee(u: float) -> float:
    """The limiter interval centred on the equilibrium command."""
    return saturate(u + BUTEE_MID) - BUTEE_MID


def simulate(
    config: SimConfig,
    models: Mapping[str, OperatingPoint] | None = None,
    scalings: Scalings = Scalings(),
    wiring: FeedbackWiring = FeedbackWiring(),
) -> SimTrace:
    """Step the engine loop for ``config.duration`` steps.

    Row ``k`` of the trace records the state at the start of step ``k``
    together with the signals computed during that step.

    Raises
    ------
    SimulationError
        When the state becomes non-finite or exceeds ``1e150``.
    """
    models = load_fixture() if models is None else models
    names = tuple(sorted(models, key=lambda k: models[k].equilibrium.PLA_eq))
    if config.equilibrium != "scheduled" and config.equilibrium not in models:
        raise ValueError(f"unknown equilibrium {config.equilibrium!r}; expected one of {names} or 'scheduled'")
    schedule = controller_schedule(models)
    pump = pump_statespace()
    k_chain = scalings.chain_gain

    x = np.zeros(len(STATE_COLUMNS)) if config.initial_state is None else np.array(config.initial_state)
    xp, xq, xc = x[:N_PLANT].copy(), x[N_PLANT:N_PLANT + N_PUMP].copy(), x[N_PLANT + N_PUMP:].copy()
    rows = []
    for step in range(config.duration):
        _check_finite(np.concatenate([xp, xq, xc]), step)
        pla = config.pla_at(step)
        if config.equilibrium == "scheduled":
            name = min(names, key=lambda n: (abs(models[n].equilibrium.PLA_eq - pla), models[n].equilibrium.PLA_eq))
        else:
            name = config.equilibrium
        op = models[name]
        eq = op.equilibrium
        plant = op.plant
        nh_cmd, nl_cmd = pla_to_command(pla, models)

        y = plant.C @ xp + plant.D @ (pump.C @ xq)
        nh_pct = eq.NH_pct + 100.0 * y[0] / NH_REF
        nl_pct = eq.NL_pct + 100.0 * y[1] / NL_REF
        ctrl = schedule.at(nh_pct) if config.equilibrium == "scheduled" else op.controller

        F = wiring.matrix(ctrl.m, plant.p)
        ref = np.zeros(ctrl.m)
        for ci, po in wiring.measured:
            target = (nh_cmd - eq.NH_pct) * NH_REF / 100.0 if po == 0 else (nl_cmd - eq.NL_pct) * NL_REF / 100.0
            ref[ci] = target
        e = ref + F @ y
        u = float((ctrl.C @ xc + ctrl.D @ e)[0])
        u_hat = butee(u) if config.butee else u
        wf = eq.Wf_eq + float((pump.C @ xq)[0])

        rows.append(
            [step, step * config.sample_period, pla, names.index(name), nh_cmd, nl_cmd, nh_pct, nl_pct, wf, u, u_hat]
            + list(xp) + list(xq) + list(xc)
        )
        u_plant = pump.C @ xq
        xp = plant.A @ xp + plant.B @ u_plant
        xq = pump.A @ xq + pump.B @ np.array([k_chain * u_hat])
        xc = ctrl.A @ xc + ctrl.B @ e
    data = np.array(rows, dtype=float).reshape(config.duration, len(COLUMNS))
    trace = SimTrace(COLUMNS, data, None, names)
    if config.monitor is not None:
        margins = monitor_margins(trace.values(config.monitor.vars), config.monitor.ellipsoid)
        trace = SimTrace(COLUMNS, data, margins, names)
    return trace


def ball_inputs(steps: int, m: int, bound: float, seed: int, on_sphere: bool = True) -> np.ndarray:
    """Seeded input sequence with ``|u| <= bound``; on the sphere by default."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((steps, m))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    u = g / norms
    if not on_sphere:
        u *= rng.random((steps, 1)) ** (1.0 / m)
    return bound * u


def simulate_controller(
    controller: StateSpace,
    x0,
    steps: int,
    inputs: np.ndarray | None = None,
    input_bound: float = 1.0,
    seed: int = 0,
    monitor: Monitor | None = None,
) -> SimTrace:
    """Drive ``x+ = A x + B u`` with bounded inputs.

    Columns are ``step`` followed by ``x0..x{n-1}`` and ``u0..u{m-1}``.
    """
    n, m = controller.n, controller.m
    x = np.asarray(x0, dtype=float).reshape(n)
    u_seq = ball_inputs(steps, m, input_bound, seed) if inputs is None else np.asarray(inputs, dtype=float)
    if u_seq.shape != (steps, m):
        raise ValueError(f"inputs must have shape {(steps, m)}")
    data = np.empty((steps, 1 + n + m))
    for k in range(steps):
        _check_finite(x, k)
        data[k, 0] = k
        data[k, 1:1 + n] = x
        data[k, 1 + n:] = u_seq[k]
        x = controller.A @ x + controller.B @ u_seq[k]
    cols = ("step",) + tuple(f"x{i}" for i in range(n)) + tuple(f"u{j}" for j in range(m))
    margins = None
    if monitor is not None:
        margins = monitor_margins(data[:, [cols.index(v) for v in monitor.vars]], monitor.ellipsoid)
    return SimTrace(cols, data, margins)


def write_svg(trace: SimTrace, path: str | Path) -> None:
    """Static plot of NH/NL against command, fuel flow and the monitor margin."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = trace.column("time")
    panels = 3 if trace.margins is not None else 2
    fig, ax = plt.subplots(panels, 1, figsize=(7, 2.4 * panels), sharex=True)
    ax[0].plot(t, trace.column("nh_pct"), label="NH")
    ax[0].plot(t, trace.column("nh_cmd"), "--", label="NH cmd")
    ax[0].plot(t, trace.column("nl_pct"), label="NL")
    ax[0].plot(t, trace.column("nl_cmd"), "--", label="NL cmd")
    ax[0].set_ylabel("%")
    ax[0].legend(fontsize=7)
    ax[1].plot(t, trace.column("wf"))
    ax[1].set_ylabel("W_f [kg/hr]")
    if trace.margins is not None:
        ax[2].plot(t, trace.margins)
        ax[2].axhline(0.0, color="k", lw=0.5)
        ax[2].set_ylabel("margin")
    ax[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(str(path), format="svg", metadata={"Date": None})
    plt.close(fig)


def load_config(path: str | Path) -> SimConfig:
    return SimConfig.from_json(json.loads(Path(path).read_text()))
