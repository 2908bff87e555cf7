"""Four-corner matrix polytopes over a scheduling range and entry-wise
membership of sampled parameter-varying matrices."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ALPHA_MIN = 85.0
ALPHA_MAX = 106.0
DEFAULT_GRID = 211
MAX_INFLATIONS = 50


def default_grid(alpha_min: float = ALPHA_MIN, alpha_max: float = ALPHA_MAX, count: int = DEFAULT_GRID) -> np.ndarray:
    return np.linspace(alpha_min, alpha_max, count)


@dataclass(frozen=True, eq=False)
class MatrixPolytope:
    """Convex hull of equally shaped vertex matrices."""

    vertices: tuple[np.ndarray, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        verts = tuple(np.array(v, dtype=float, ndmin=2) for v in self.vertices)
        if not verts:
            raise ValueError("a polytope needs at least one vertex")
        if len({v.shape for v in verts}) != 1:
            raise ValueError("all vertices must share one shape")
        for v in verts:
            v.setflags(write=False)
        labels = tuple(self.labels) or tuple(f"v{i}" for i in range(len(verts)))
        if len(labels) != len(verts):
            raise ValueError("one label per vertex required")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.vertices[0].shape

    def lower(self) -> np.ndarray:
        return np.min(self.vertices, axis=0)

    def upper(self) -> np.ndarray:
        return np.max(self.vertices, axis=0)

    def split(self, n_states: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split stacked ``[A B]`` vertices into ``(A, B)`` pairs."""
        return [(v[:, :n_states], v[:, n_states:]) for v in self.vertices]


@dataclass(frozen=True)
class EntryEnvelope:
    entry: tuple[int, int]
    vertex_values: tuple[float, ...]
    curve: tuple[tuple[float, float], ...] = ()

    def to_json(self) -> dict:
        return {
            "entry": list(self.entry),
            "vertex_values": list(self.vertex_values),
            "curve": [list(p) for p in self.curve],
        }


@dataclass(frozen=True)
class MembershipReport:
    """Outcome of :func:`check_membership`.

    ``violations`` maps each failing entry to its worst distance outside the
    vertex interval.
    """

    violations: dict = field(default_factory=dict)
    n_samples: int = 0

    @property
    def passes(self) -> bool:
        return not self.violations

    @property
    def worst(self) -> float:
        return max(self.violations.values(), default=0.0)

    def to_json(self) -> dict:
        return {
            "passes": self.passes,
            "n_samples": self.n_samples,
            "worst": self.worst,
            "violations": [{"entry": list(k), "magnitude": v} for k, v in sorted(self.violations.items())],
        }


def _check_shapes(*mats: np.ndarray) -> None:
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def build_corners(m_min, m_max, deltas: Sequence) -> MatrixPolytope:
    """Corners ``min + D1, min - D2, max + D3, max - D4``."""
    lo = np.array(m_min, dtype=float, ndmin=2)
    hi = np.array(m_max, dtype=float, ndmin=2)
    if len(deltas) != 4:
        raise ValueError("exactly four perturbation matrices required")
    d = [np.array(x, dtype=float, ndmin=2) for x in deltas]
    _check_shapes(lo, hi, *d)
    return MatrixPolytope(
        (lo + d[0], lo - d[1], hi + d[2], hi - d[3]),
        ("min+D1", "min-D2", "max+D3", "max-D4"),
    )


def check_membership(polytope: MatrixPolytope, samples: Sequence) -> MembershipReport:
    """Entry-wise interval containment of every sample in the vertex range."""
    if len(samples) == 0:
        raise ValueError("no samples to check")
    s = np.array([np.array(x, dtype=float, ndmin=2) for x in samples])
    if s.shape[1:] != polytope.shape:
        raise ValueError(f"sample shape {s.shape[1:]} differs from polytope shape {polytope.shape}")
    lo, hi = polytope.lower(), polytope.upper()
    excess = np.maximum(np.max(s - hi, axis=0), np.max(lo - s, axis=0))
    bad = np.argwhere(excess > 0)
    return MembershipReport({(int(i), int(j)): float(excess[i, j]) for i, j in bad}, len(s))


@dataclass(frozen=True)
class Census:
    varying: int
    constant_nonzero: int
    zero: int

    @property
    def total(self) -> int:
        return self.varying + self.constant_nonzero + self.zero

    def to_json(self) -> dict:
        return {"varying": self.varying, "constant_nonzero": self.constant_nonzero, "zero": self.zero, "total": self.total}


def varying_mask(samples: Sequence, rel_tol: float = 1e-12) -> np.ndarray:
    s = np.array([np.array(x, dtype=float, ndmin=2) for x in samples])
    spread = s.max(axis=0) - s.min(axis=0)
    size = np.max(np.abs(s), axis=0)
    return spread > rel_tol * np.maximum(size, np.finfo(float).tiny)


def varying_entry_census(samples: Sequence, rel_tol: float = 1e-12) -> Census:
    """Classify entries as varying, constant nonzero, or zero over the samples."""
    if len(samples) < 2:
        raise ValueError("at least two samples required")
    s = np.array([np.array(x, dtype=float, ndmin=2) for x in samples])
    vary = varying_mask(s, rel_tol)
    zero = ~vary & np.all(s == 0, axis=0)
    return Census(int(vary.sum()), int((~vary & ~zero).sum()), int(zero.sum()))


class InflationError(RuntimeError):
    def __init__(self, message: str, worst: float, iterations: int):
        super().__init__(message)
        self.worst = worst
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class InflationResult:
    polytope: MatrixPolytope
    deltas: tuple[np.ndarray, ...]
    iterations: int
    report: MembershipReport


def inflate_until_member(
    m_min,
    m_max,
    samples: Sequence,
    initial_deltas: Sequence,
    growth: float = 2.0,
    max_iter: int = MAX_INFLATIONS,
) -> InflationResult:
    """Grow the perturbations by ``growth`` until every sample is a member.

    Returns the first passing polytope. ``iterations`` counts the growth
    steps taken, so a polytope that passes at once reports zero.

    Raises
    ------
    InflationError
        When ``max_iter`` growth steps do not suffice, or when the deltas are
        zero where growth is needed.
    """
    if growth <= 1:
        raise ValueError("growth factor must exceed 1")
    deltas = tuple(np.array(d, dtype=float, ndmin=2) for d in initial_deltas)
    for it in range(max_iter + 1):
        poly = build_corners(m_min, m_max, deltas)
        rep = check_membership(poly, samples)
        if rep.passes:
            return InflationResult(poly, deltas, it, rep)
        stuck = [k for k in rep.violations if all(d[k] == 0 for d in deltas)]
        if stuck:
            raise InflationError(
                f"entries {stuck[:5]} violate the hull but have zero perturbation", rep.worst, it
            )
        if it < max_iter:
            deltas = tuple(growth * d for d in deltas)
    raise InflationError(
        f"membership still fails after {max_iter} inflations (worst violation {rep.worst:.3g})", rep.worst, max_iter
    )


def spread_deltas(samples: Sequence, fraction: float = 0.05) -> tuple[np.ndarray, ...]:
    """Four equal starting perturbations, ``fraction`` of each entry's sample spread."""
    s = np.array([np.array(x, dtype=float, ndmin=2) for x in samples])
    d = fraction * (s.max(axis=0) - s.min(axis=0))
    return (d, d.copy(), d.copy(), d.copy())


def envelopes(polytope: MatrixPolytope, alphas: Sequence[float], samples: Sequence, entries=None) -> list[EntryEnvelope]:
    """Plotting data per entry: vertex values and the sampled curve."""
    s = np.array([np.array(x, dtype=float, ndmin=2) for x in samples])
    if entries is None:
        entries = [tuple(map(int, e)) for e in np.argwhere(varying_mask(s))]
    out = []
    for i, j in entries:
        out.append(
            EntryEnvelope(
                (i, j),
                tuple(float(v[i, j]) for v in polytope.vertices),
                tuple((float(a), float(x[i, j])) for a, x in zip(alphas, s)),
            )
        )
    return out


def interpolated_family(schedule, count: int = DEFAULT_GRID) -> tuple[np.ndarray, list[np.ndarray]]:
    """Stacked ``[A B]`` of a scheduled model on an even grid over its own range."""
    alphas = np.linspace(schedule.alphas[0], schedule.alphas[-1], count)
    return alphas, [schedule.at(float(a)).stacked() for a in alphas]


def write_envelope_svgs(envs: Sequence[EntryEnvelope], directory) -> list[str]:
    """One plot per entry: the sampled curve against the vertex interval."""
    from pathlib import Path

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for env in envs:
        i, j = env.entry
        a = [p[0] for p in env.curve]
        v = [p[1] for p in env.curve]
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(a, v, label="samples")
        ax.axhline(min(env.vertex_values), color="k", ls="--", lw=0.8)
        ax.axhline(max(env.vertex_values), color="k", ls="--", lw=0.8, label="vertex range")
        ax.set_title(f"entry ({i}, {j})")
        ax.set_xlabel("alpha")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"entry_{i}_{j}.svg"
        fig.savefig(str(path), format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(str(path))
    return written
