"""Forward simulation of the controlled state equation.

Paths are generated by the Euler scheme on a uniform grid with Gaussian
increments from a counter-based generator keyed by the seed; the (path, node)
position indexes the counter layout, so ensembles are reproducible and
per-path streams are independent by construction.  Ensembles are immutable
once built and shared freely by the backward solvers.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, SimulationError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid r_0 = start < ... < r_steps = end."""

    start: float
    end: float
    steps: int

    def __post_init__(self):
        if not (0.0 <= self.start < self.end):
            raise ConfigError(f"need 0 <= start < end, got [{self.start}, {self.end}]")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")

    @property
    def dt(self):
        return (self.end - self.start) / self.steps

    @property
    def nodes(self):
        return np.linspace(self.start, self.end, self.steps + 1)


@dataclass(frozen=True)
class OpenLoopControl:
    """Control applied on each interval [r_i, r_{i+1}).

    Three flavours: a constant, a deterministic function of time, or a
    per-path per-node table.  Tables are adapted by construction as long as
    the node-i entry only uses noise up to node i; callers supplying tables
    own that guarantee.
    """

    kind: str
    value: float = 0.0
    fn: Optional[Callable] = None
    table: Optional[np.ndarray] = None

    @classmethod
    def constant(cls, value):
        return cls(kind="constant", value=float(value))

    @classmethod
    def from_function(cls, fn):
        return cls(kind="time", fn=fn)

    @classmethod
    def from_table(cls, table):
        arr = np.asarray(table, dtype=float)
        if arr.ndim != 2:
            raise ConfigError("control table must be (paths, steps)")
        return cls(kind="table", table=arr)

    def values_at(self, i, t, n_paths):
        if self.kind == "constant":
            return np.full(n_paths, self.value)
        if self.kind == "time":
            return np.full(n_paths, float(self.fn(t)))
        return self.table[:, i]

    def all_values(self, grid, n_paths):
        """Every value the control will take on this grid (admissibility sweep)."""
        if self.kind == "table":
            if self.table.shape != (n_paths, grid.steps):
                raise ConfigError(
                    f"control table shape {self.table.shape} does not match "
                    f"({n_paths}, {grid.steps})")
            return self.table
        return np.array([self.values_at(i, t, 1)[0]
                         for i, t in enumerate(grid.nodes[:-1])])


@dataclass(frozen=True)
class PathEnsemble:
    """Euler paths of the controlled state on a shared grid.

    ``states`` has shape (paths, steps+1) for scalar models and
    (paths, steps+1, n) otherwise; ``increments`` is (paths, steps) or
    (paths, steps, d); ``controls`` is (paths, steps).
    """

    grid: TimeGrid
    states: np.ndarray
    increments: np.ndarray
    controls: np.ndarray
    seed: int
    start_state: np.ndarray

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def scalar(self):
        return self.states.ndim == 2


def _draw_increments(seed, n_paths, steps, noise_dim, dt):
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    shape = (n_paths, steps) if noise_dim == 1 else (n_paths, steps, noise_dim)
    return gen.standard_normal(shape) * math.sqrt(dt)


def _check_finite(x, i):
    if not np.all(np.isfinite(x)):
        flat = np.argwhere(~np.isfinite(np.atleast_2d(x)))
        m = int(flat[0][0])
        raise SimulationError(f"non-finite state at path {m}, node {i}")


def simulate_paths(model, start_time, start_state, control, grid, n_paths, seed):
    """Euler scheme for the controlled state equation under an open-loop control.

    Deterministic given the seed.  Controls outside the model's control set
    are rejected before any path is generated.
    """
    if abs(grid.start - start_time) > 1e-12:
        raise ConfigError("grid.start must equal the initial time")
    if grid.end > model.horizon + 1e-12:
        raise ConfigError("grid.end exceeds the model horizon")
    if not model.control_set.contains(control.all_values(grid, n_paths)):
        raise SimulationError("control takes values outside the control set")

    scalar = model.state_dim == 1 and model.noise_dim == 1
    dt = grid.dt
    dW = _draw_increments(seed, n_paths, grid.steps, model.noise_dim, dt)

    if scalar:
        states = np.empty((n_paths, grid.steps + 1))
        states[:, 0] = float(np.asarray(start_state).reshape(()))
    else:
        x0 = np.asarray(start_state, dtype=float).reshape(model.state_dim)
        states = np.empty((n_paths, grid.steps + 1, model.state_dim))
        states[:, 0, :] = x0

    controls = np.empty((n_paths, grid.steps))
    nodes = grid.nodes
    for i in range(grid.steps):
        u = control.values_at(i, nodes[i], n_paths)
        controls[:, i] = u
        x = states[:, i]
        if scalar:
            nxt = x + np.asarray(model.drift(nodes[i], x, u)) * dt \
                + np.asarray(model.diffusion(nodes[i], x, u)) * dW[:, i]
        else:
            b = np.asarray(model.drift(nodes[i], x, u), dtype=float)
            sig = np.asarray(model.diffusion(nodes[i], x, u), dtype=float)
            nxt = x + b * dt + np.einsum("mnd,md->mn", sig, np.atleast_2d(dW[:, i]).reshape(n_paths, -1))
        _check_finite(nxt, i + 1)
        states[:, i + 1] = nxt

    return PathEnsemble(grid=grid, states=states, increments=dW,
                        controls=controls, seed=int(seed),
                        start_state=np.asarray(start_state, dtype=float))


def simulate_closed_loop(model, law, start_time, start_state, grid, n_paths, seed):
    """Euler scheme with the control chosen per node from a feedback law.

    ``law`` is any callable (t, states) -> control values; values are
    projected onto the control set.  The induced per-path control table is
    recorded on the ensemble, so downstream solvers treat the result exactly
    like an open-loop run.
    """
    if abs(grid.start - start_time) > 1e-12:
        raise ConfigError("grid.start must equal the initial time")
    if grid.end > model.horizon + 1e-12:
        raise ConfigError("grid.end exceeds the model horizon")

    scalar = model.state_dim == 1 and model.noise_dim == 1
    dt = grid.dt
    dW = _draw_increments(seed, n_paths, grid.steps, model.noise_dim, dt)

    if scalar:
        states = np.empty((n_paths, grid.steps + 1))
        states[:, 0] = float(np.asarray(start_state).reshape(()))
    else:
        x0 = np.asarray(start_state, dtype=float).reshape(model.state_dim)
        states = np.empty((n_paths, grid.steps + 1, model.state_dim))
        states[:, 0, :] = x0

    controls = np.empty((n_paths, grid.steps))
    nodes = grid.nodes
    for i in range(grid.steps):
        x = states[:, i]
        u = np.broadcast_to(np.asarray(law(nodes[i], x), dtype=float), (n_paths,)).copy()
        u = model.control_set.clip(u)
        controls[:, i] = u
        if scalar:
            nxt = x + np.asarray(model.drift(nodes[i], x, u)) * dt \
                + np.asarray(model.diffusion(nodes[i], x, u)) * dW[:, i]
        else:
            b = np.asarray(model.drift(nodes[i], x, u), dtype=float)
            sig = np.asarray(model.diffusion(nodes[i], x, u), dtype=float)
            nxt = x + b * dt + np.einsum("mnd,md->mn", sig, np.atleast_2d(dW[:, i]).reshape(n_paths, -1))
        _check_finite(nxt, i + 1)
        states[:, i + 1] = nxt

    return PathEnsemble(grid=grid, states=states, increments=dW,
                        controls=controls, seed=int(seed),
                        start_state=np.asarray(start_state, dtype=float))


@dataclass(frozen=True)
class MomentReport:
    order: int
    sup_moment: float
    growth_ratio: float


def moment_check(ensemble, order=2):
    """Empirical sup-moment of the paths against (1 + |x0|^k).

    A sanity gate for the standard moment growth of the state process, not a
    proof: the ratio should stay bounded as the ensemble grows.
    """
    if order not in (2, 4):
        raise ConfigError("order must be 2 or 4")
    if ensemble.scalar:
        sup = np.abs(ensemble.states).max(axis=1)
        x0 = float(np.abs(ensemble.start_state.reshape(())))
    else:
        sup = np.linalg.norm(ensemble.states, axis=2).max(axis=1)
        x0 = float(np.linalg.norm(ensemble.start_state))
    sup_moment = float(np.mean(sup ** order))
    return MomentReport(order=order, sup_moment=sup_moment,
                        growth_ratio=sup_moment / (1.0 + x0 ** order))


def write_ensemble_csv(ensemble, path):
    """Dump paths as CSV with a header documenting grid and seed."""
    nodes = ensemble.grid.nodes
    n_state = 1 if ensemble.scalar else ensemble.states.shape[2]
    state_cols = ",".join(f"state{k}" for k in range(n_state)) if n_state > 1 else "state"
    with open(path, "w") as fh:
        fh.write(f"# grid start={ensemble.grid.start!r} end={ensemble.grid.end!r} "
                 f"steps={ensemble.grid.steps} seed={ensemble.seed}\n")
        fh.write(f"path,node,time,{state_cols},control\n")
        for m in range(ensemble.n_paths):
            for i in range(ensemble.grid.steps + 1):
                if ensemble.scalar:
                    sv = repr(float(ensemble.states[m, i]))
                else:
                    sv = ",".join(repr(float(v)) for v in ensemble.states[m, i])
                u = repr(float(ensemble.controls[m, i])) if i < ensemble.grid.steps else ""
                fh.write(f"{m},{i},{nodes[i]!r},{sv},{u}\n")
