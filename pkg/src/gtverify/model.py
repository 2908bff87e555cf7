"""Plants, controllers, schedules and the engine loop interconnection.

All signals are deviations from an equilibrium, so affine offsets such as the
pump voltage map ``v = 3883 Wp - 244.06`` cancel and the loop is linear.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .numerics import NumericsError

NH_REF = 507.19
NL_REF = 436.36
POINT_NAMES = ("idle", "MCR", "MCM", "TOP")

# Controller state ordering and the matching memory names of the generated code.
CONTROLLER_STATES = ("b0", "b1", "eps0", "eps1", "c0", "c1", "f0", "f1", "b2", "eps2", "c2")
CONTROLLER_CODE_NAMES = (
    "_state_->delay_aw0_memory",
    "_state_->delay_aw1_memory",
    "_state_->delay_E0_memory",
    "_state_->delay_E1_memory",
    "_state_->delay_D0_memory",
    "_state_->delay_D1_memory",
    "_state_->delay_x1_memory",
    "_state_->delay_x2_memory",
    "_state_->delay_aw2_memory",
    "_state_->delay_E2_memory",
    "_state_->delay_D2_memory",
)
ANTI_WINDUP_STATES = (4, 5, 10)


class FixtureError(ValueError):
    """Schema or dimension problem in a fixture, with its location."""


def _matrix(value, name: str) -> np.ndarray:
    a = np.array(value, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1) if a.size else a.reshape(0, 0)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got {a.ndim} dimensions")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Discrete-time linear system ``x+ = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    sample_period: float | None = None

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, _matrix(getattr(self, name), name))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n}")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError(f"D has shape {self.D.shape}, expected {(self.C.shape[0], self.B.shape[1])}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateSpace):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "ABCD") and (
            self.sample_period == other.sample_period
        )

    def stacked(self) -> np.ndarray:
        """The ``[A B]`` matrix."""
        return np.hstack([self.A, self.B])

    def dc_gain(self) -> np.ndarray:
        return self.C @ np.linalg.solve(np.eye(self.n) - self.A, self.B) + self.D

    def to_json(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in "ABCD"}
        if self.sample_period is not None:
            out["sample_period"] = self.sample_period
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "StateSpace":
        return cls(obj["A"], obj["B"], obj["C"], obj["D"], obj.get("sample_period"))


@dataclass(frozen=True)
class GainPoint:
    """Gain vector ``theta = [Kp, Ki, Kd, Td]`` at scheduling value ``alpha`` (NH percent)."""

    alpha: float
    theta: tuple[float, float, float, float]
    alpha_min: float = 85.0
    alpha_max: float = 106.0

    def __post_init__(self):
        if not self.alpha_min <= self.alpha <= self.alpha_max:
            raise ValueError(f"alpha {self.alpha} outside [{self.alpha_min}, {self.alpha_max}]")
        if len(self.theta) != 4:
            raise ValueError("theta must hold Kp, Ki, Kd, Td")
        if self.theta[3] <= 0:
            raise ValueError("Td must be positive")


@dataclass(frozen=True)
class ScheduledModel:
    """Systems sampled at increasing scheduling values.

    ``at(alpha)`` interpolates every matrix linearly in ``alpha`` and holds
    the end systems outside the sampled range.
    """

    points: tuple[tuple[float, StateSpace], ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        pts = tuple((float(a), s) for a, s in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", tuple(self.labels))
        if not pts:
            raise ValueError("ScheduledModel needs at least one point")
        alphas = [a for a, _ in pts]
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("alphas must be strictly increasing")
        shapes = {tuple(getattr(s, k).shape for k in "ABCD") for _, s in pts}
        if len(shapes) != 1:
            raise ValueError("all scheduled systems must share dimensions")
        if self.labels and len(self.labels) != pts[0][1].n:
            raise ValueError("one label per state required")

    @property
    def alphas(self) -> list[float]:
        return [a for a, _ in self.points]

    def at(self, alpha: float) -> StateSpace:
        alphas = self.alphas
        systems = [s for _, s in self.points]
        if alpha <= alphas[0]:
            return systems[0]
        if alpha >= alphas[-1]:
            return systems[-1]
        k = int(np.searchsorted(alphas, alpha, side="right")) - 1
        w = (alpha - alphas[k]) / (alphas[k + 1] - alphas[k])
        lo, hi = systems[k], systems[k + 1]
        mix = {name: (1 - w) * getattr(lo, name) + w * getattr(hi, name) for name in "ABCD"}
        return StateSpace(sample_period=lo.sample_period, **mix)

    def trimmed(self, keep: Sequence[int]) -> "ScheduledModel":
        return ScheduledModel(tuple(self.points[i] for i in keep), self.labels)


@dataclass(frozen=True)
class EquilibriumPoint:
    name: str
    NH_eq: float
    NL_eq: float
    Wf_eq: float
    PLA_eq: float
    NH_pct: float
    NL_pct: float

    def __post_init__(self):
        for label, rpm, pct, ref in (("NH", self.NH_eq, self.NH_pct, NH_REF), ("NL", self.NL_eq, self.NL_pct, NL_REF)):
            if abs(rpm / ref - pct) > 1e-3 * abs(pct):
                raise ValueError(f"{label}_pct {pct} disagrees with {label}_eq/{label}_ref = {rpm / ref:.4f}")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("NH_eq", "NL_eq", "Wf_eq", "PLA_eq", "NH_pct", "NL_pct")}


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    """One operating-point linearization.

    The open and closed loop matrices are kept as printed, with their scale
    factors, so a load/serialize cycle is exact. The scaled matrices are
    available through :attr:`open_loop` and :attr:`closed_loop_A`.
    """

    name: str
    equilibrium: EquilibriumPoint
    plant: StateSpace
    controller: StateSpace
    open_loop_printed: StateSpace
    gamma: float
    open_loop_scale: float
    open_loop_B_scale: float
    closed_loop_printed: np.ndarray
    closed_loop_scale: float

    @property
    def open_loop(self) -> StateSpace:
        ol = self.open_loop_printed
        return StateSpace(ol.A * self.open_loop_scale, ol.B * self.open_loop_B_scale, ol.C, ol.D)

    @property
    def closed_loop_A(self) -> np.ndarray:
        return self.closed_loop_printed * self.closed_loop_scale

    @property
    def closed_loop(self) -> StateSpace:
        n = self.closed_loop_printed.shape[0]
        return StateSpace(self.closed_loop_A, np.zeros((n, 0)), np.zeros((0, n)), np.zeros((0, 0)))

    def to_json(self) -> dict:
        ol = self.open_loop_printed.to_json()
        ol.update(gamma=self.gamma, scale=self.open_loop_scale, B_scale=self.open_loop_B_scale)
        return {
            "point": self.name,
            "equilibrium": self.equilibrium.to_json(),
            "plant": self.plant.to_json(),
            "controller": self.controller.to_json(),
            "open_loop": ol,
            "closed_loop": {"A": self.closed_loop_printed.tolist(), "scale": self.closed_loop_scale},
        }


_EXPECTED = {"plant": 4, "controller": 11, "open_loop": 16, "closed_loop": 16}


def parse_operating_point(obj: Mapping, source: str = "<fixture>") -> OperatingPoint:
    """Build an :class:`OperatingPoint` from a fixture object.

    Raises
    ------
    FixtureError
        With the offending key path when the schema or dimensions are wrong.
    """

    def where(*keys):
        return source + ":" + ".".join(keys)

    def get(mapping, *keys):
        cur = mapping
        for i, k in enumerate(keys):
            if not isinstance(cur, Mapping) or k not in cur:
                raise FixtureError(f"{where(*keys[:i + 1])}: missing key")
            cur = cur[k]
        return cur

    def system(key) -> StateSpace:
        try:
            ss = StateSpace(*(get(obj, key, m) for m in "ABCD"))
        except ValueError as exc:
            raise FixtureError(f"{where(key)}: {exc}") from exc
        if ss.n != _EXPECTED[key]:
            raise FixtureError(f"{where(key)}: state dimension {ss.n}, expected {_EXPECTED[key]}")
        return ss

    name = get(obj, "point")
    try:
        eq = EquilibriumPoint(name=name, **{k: float(v) for k, v in get(obj, "equilibrium").items()})
    except (TypeError, ValueError) as exc:
        raise FixtureError(f"{where('equilibrium')}: {exc}") from exc
    plant = system("plant")
    controller = system("controller")
    ol = system("open_loop")
    try:
        acl = _matrix(get(obj, "closed_loop", "A"), "closed_loop.A")
    except ValueError as exc:
        raise FixtureError(f"{where('closed_loop', 'A')}: {exc}") from exc
    if acl.shape != (16, 16):
        raise FixtureError(f"{where('closed_loop', 'A')}: shape {acl.shape}, expected (16, 16)")
    return OperatingPoint(
        name=name,
        equilibrium=eq,
        plant=plant,
        controller=controller,
        open_loop_printed=ol,
        gamma=float(get(obj, "open_loop", "gamma")),
        open_loop_scale=float(get(obj, "open_loop", "scale")),
        open_loop_B_scale=float(obj["open_loop"].get("B_scale", get(obj, "open_loop", "scale"))),
        closed_loop_printed=acl,
        closed_loop_scale=float(get(obj, "closed_loop", "scale")),
    )


def data_path(*parts: str) -> Path:
    """Location of a shipped data file."""
    return Path(str(resources.files("gtverify").joinpath("data", *parts)))


def load_fixture(path: str | Path | None = None) -> dict[str, OperatingPoint]:
    """Load the operating points.

    Parameters
    ----------
    path : path-like, optional
        A single fixture file or a directory of them. Defaults to the shipped
        operating-point data.

    Returns
    -------
    dict
        Operating points keyed by name, ordered by NH.
    """
    path = data_path("appendix_d") if path is None else Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    if not files:
        raise FixtureError(f"{path}: no fixture files")
    out = {}
    for f in files:
        try:
            obj = json.loads(f.read_text())
        except json.JSONDecodeError as exc:
            raise FixtureError(f"{f}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        op = parse_operating_point(obj, str(f))
        out[op.name] = op
    return dict(sorted(out.items(), key=lambda kv: kv[1].equilibrium.NH_pct))


def dump_fixture(op: OperatingPoint, path: str | Path) -> None:
    Path(path).write_text(json.dumps(op.to_json(), indent=1))


def controller_schedule(points: Mapping[str, OperatingPoint] | None = None) -> ScheduledModel:
    """Controllers of the operating points scheduled on NH percent."""
    points = load_fixture() if points is None else points
    pairs = sorted((op.equilibrium.NH_pct, op.controller) for op in points.values())
    return ScheduledModel(tuple(pairs), CONTROLLER_STATES)


def pump_statespace() -> StateSpace:
    """One-state fuel pump ``0.21756 / (z - 0.8187)``."""
    return StateSpace([[0.8187]], [[1.0]], [[0.21756]], [[0.0]])


@dataclass(frozen=True)
class Scalings:
    """Gain chain from controller output to pump input.

    The controller output is multiplied by ``gain_wp`` and then by
    ``gain_v``. ``offset_v`` only shifts the equilibrium and is unused in
    deviation variables.
    """

    gain_wp: float = 4100.0 / 160.0
    gain_v: float = 3883.0
    offset_v: float = -244.06

    @property
    def chain_gain(self) -> float:
        return self.gain_wp * self.gain_v


@dataclass(frozen=True)
class FeedbackWiring:
    """How plant outputs reach the controller inputs.

    ``measured`` maps a controller input index to the plant output it
    compares against. ``sign`` multiplies the measurement: -1 gives
    command minus measurement. Controller inputs not listed are exogenous.
    """

    measured: tuple[tuple[int, int], ...] = ((0, 0), (1, 1))
    sign: float = -1.0

    def matrix(self, n_inputs: int, n_outputs: int) -> np.ndarray:
        f = np.zeros((n_inputs, n_outputs))
        for ci, po in self.measured:
            if not (0 <= ci < n_inputs and 0 <= po < n_outputs):
                raise ValueError(f"wiring ({ci}, {po}) outside {n_inputs} inputs / {n_outputs} outputs")
            f[ci, po] = self.sign
        return f


def interconnect_closed_loop(
    plant: StateSpace,
    controller: StateSpace,
    pump: StateSpace | None = None,
    scalings: Scalings = Scalings(),
    wiring: FeedbackWiring = FeedbackWiring(),
) -> StateSpace:
    """Close the engine loop in deviation variables.

    State order is plant, pump, controller, the ordering of the printed
    closed-loop matrices. Inputs of the result are the controller inputs
    (references); outputs are the plant outputs.

    Raises
    ------
    ValueError
        On incompatible dimensions or a pump with direct feedthrough.
    """
    pump = pump_statespace() if pump is None else pump
    if controller.p != 1 or pump.m != 1 or pump.p != 1 or plant.m != 1:
        raise ValueError("expected a single fuel command path controller -> pump -> plant")
    if np.any(pump.D != 0):
        raise ValueError("pump feedthrough would create an algebraic loop")
    np_, nq, nc = plant.n, pump.n, controller.n
    F = wiring.matrix(controller.m, plant.p)
    k = scalings.chain_gain
    n = np_ + nq + nc
    ip, iq, ic = slice(0, np_), slice(np_, np_ + nq), slice(np_ + nq, n)

    # controller input e = r + F y, y = Cp xp + Dp Cq xq
    y_x = np.zeros((plant.p, n))
    y_x[:, ip] = plant.C
    y_x[:, iq] = plant.D @ pump.C
    e_x = F @ y_x
    u_x = np.zeros((1, n))
    u_x[:, ic] = controller.C
    u_x += controller.D @ e_x

    A = np.zeros((n, n))
    A[ip, ip] = plant.A
    A[ip, iq] = plant.B @ pump.C
    A[iq, iq] = pump.A
    A[iq, :] += k * pump.B @ u_x
    A[ic, ic] = controller.A
    A[ic, :] += controller.B @ e_x

    B = np.zeros((n, controller.m))
    B[iq, :] = k * pump.B @ controller.D
    B[ic, :] = controller.B
    return StateSpace(A, B, y_x, np.zeros((plant.p, controller.m)), controller.sample_period)


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    a = np.asarray(A, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"square matrix required, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    try:
        w = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"nonsymmetric eigensolver failed: {exc}") from exc
    return float(np.max(np.abs(w))) if w.size else 0.0


@dataclass(frozen=True, eq=False)
class DelayedChannel:
    """A signal fed back into the controller state update.

    ``B`` maps the channel into the state update. A ``feedback`` channel is
    ``w = C x + D y``; an ``external`` channel is an outside signal such as the
    limiter output and becomes an extra input once the delay is removed.
    """

    name: str
    B: np.ndarray
    kind: str = "feedback"
    C: np.ndarray | None = None
    D: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("feedback", "external"):
            raise ValueError(f"channel kind must be feedback or external, got {self.kind!r}")
        b = np.asarray(self.B, dtype=float)
        object.__setattr__(self, "B", _matrix(b.reshape(-1, 1) if b.ndim == 1 else b, "B"))
        if self.kind == "feedback":
            if self.C is None:
                raise ValueError(f"feedback channel {self.name} needs C")
            object.__setattr__(self, "C", _matrix(self.C, "C"))
            if self.D is not None:
                object.__setattr__(self, "D", _matrix(self.D, "D"))

    @property
    def width(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class DelayedController:
    """Controller ``x+ = A x + B y + sum_k B_k w_k`` with feedback channels.

    Channels named in ``delayed`` enter with a one-sample delay.
    """

    system: StateSpace
    channels: tuple[DelayedChannel, ...] = ()
    delayed: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "delayed", frozenset(self.delayed))
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")
        unknown = self.delayed - set(names)
        if unknown:
            raise ValueError(f"delay flags reference unknown channels: {sorted(unknown)}")
        n, m = self.system.n, self.system.m
        for c in self.channels:
            if c.B.shape[0] != n:
                raise ValueError(f"channel {c.name}: B has {c.B.shape[0]} rows, expected {n}")
            if c.kind == "feedback":
                if c.C.shape != (c.width, n):
                    raise ValueError(f"channel {c.name}: C shape {c.C.shape}, expected {(c.width, n)}")
                if c.D is not None and c.D.shape != (c.width, m):
                    raise ValueError(f"channel {c.name}: D shape {c.D.shape}, expected {(c.width, m)}")


def remove_sample_delay(model: DelayedController | StateSpace) -> StateSpace:
    """Remove the one-sample feedback delays by evaluating every channel at
    the current sample.

    Feedback channels are substituted into the dynamics; external channels
    become extra inputs appended after ``y``, so ``u_hat = [y; u1]`` and
    ``B_hat = [B  B_u1]``. The state dimension is unchanged.
    """
    if isinstance(model, StateSpace):
        return model
    ss = model.system
    if not model.channels:
        return ss
    A = ss.A.copy()
    B = ss.B.copy()
    extra = []
    for c in model.channels:
        if c.kind == "feedback":
            A += c.B @ c.C
            if c.D is not None:
                B += c.B @ c.D
        else:
            extra.append(c.B)
    B_hat = np.hstack([B] + extra)
    D_hat = np.hstack([ss.D, np.zeros((ss.p, B_hat.shape[1] - ss.m))])
    return StateSpace(A, B_hat, ss.C, D_hat, ss.sample_period)


def delayed_realization(model: DelayedController) -> StateSpace:
    """State-space form with one memory state per delayed channel entry.

    States are ``[x; w_delayed]``; inputs are ``[y; external channels]``.
    """
    ss = model.system
    n, m = ss.n, ss.m
    ext = [c for c in model.channels if c.kind == "external"]
    n_ext = sum(c.width for c in ext)
    mem = [c for c in model.channels if c.name in model.delayed]
    n_mem = sum(c.width for c in mem)
    N = n + n_mem
    A = np.zeros((N, N))
    B = np.zeros((N, m + n_ext))
    A[:n, :n] = ss.A
    B[:n, :m] = ss.B
    ext_col = {}
    col = m
    for c in ext:
        ext_col[c.name] = col
        col += c.width
    row = n
    for c in model.channels:
        # current value of the channel as a function of (x, inputs)
        wx = np.zeros((c.width, N))
        wu = np.zeros((c.width, m + n_ext))
        if c.kind == "feedback":
            wx[:, :n] = c.C
            if c.D is not None:
                wu[:, :m] = c.D
        else:
            j = ext_col[c.name]
            wu[:, j:j + c.width] = np.eye(c.width)
        if c.name in model.delayed:
            A[:n, row:row + c.width] += c.B
            A[row:row + c.width, :] = wx
            B[row:row + c.width, :] = wu
            row += c.width
        else:
            A[:n, :] += c.B @ wx
            B[:n, :] += c.B @ wu
    C = np.hstack([ss.C, np.zeros((ss.p, n_mem))])
    D = np.hstack([ss.D, np.zeros((ss.p, n_ext))])
    return StateSpace(A, B, C, D, ss.sample_period)


def pla_to_command(pla: float, points: Mapping[str, OperatingPoint] | None = None) -> tuple[float, float]:
    """Piecewise-linear throttle map PLA -> (NH %, NL %) through the equilibria."""
    points = load_fixture() if points is None else points
    eqs = sorted((op.equilibrium for op in points.values()), key=lambda e: e.PLA_eq)
    plas = [e.PLA_eq for e in eqs]
    if not plas[0] <= pla <= plas[-1]:
        raise ValueError(f"PLA {pla} outside [{plas[0]}, {plas[-1]}]")
    nh = float(np.interp(pla, plas, [e.NH_pct for e in eqs]))
    nl = float(np.interp(pla, plas, [e.NL_pct for e in eqs]))
    return nh, nl


def stack_systems(systems: Iterable[StateSpace]) -> list[np.ndarray]:
    return [s.stacked() for s in systems]
