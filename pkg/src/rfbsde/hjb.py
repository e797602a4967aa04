"""Finite-difference solver for the obstacle HJB equation.

The equation is the variational inequality

    max{ W(t,x) - h(t,x),  -dW/dt - inf_u H(t, x, W, W_x, W_xx, u) } = 0,
    W(T, x) = terminal(x),

with the generator-plus-driver Hamiltonian

    H(r, x, y, p, P, u) = tr[(1/2) sigma sigma^T P] + p . b + f(r, x, y, p . sigma, u).

Space is truncated to a box (the continuous problem lives on the whole line);
edge columns carry no artificial boundary data and are refilled from interior
values by one-sided extrapolation after each step.  The explicit scheme is
monotone under the parabolic step-size bound; requested time steps above the
bound are split into internal substeps unless strict mode is selected, in
which case the solver refuses and reports the required step.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, EvaluationError, KinkColumnError, StabilityError, BackwardSolverError


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform time grid on [0, horizon] times a uniform state box."""

    horizon: float
    x_min: float
    x_max: float
    t_steps: int
    x_steps: int

    def __post_init__(self):
        if self.t_steps < 2 or self.x_steps < 2:
            raise ConfigError("need at least 2 steps per axis")
        if not (self.x_min < self.x_max):
            raise ConfigError("state box must be nondegenerate")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")

    @property
    def dt(self):
        return self.horizon / self.t_steps

    @property
    def dx(self):
        return (self.x_max - self.x_min) / self.x_steps

    @property
    def times(self):
        return np.linspace(0.0, self.horizon, self.t_steps + 1)

    @property
    def xs(self):
        return np.linspace(self.x_min, self.x_max, self.x_steps + 1)


@dataclass(frozen=True)
class ValueSurface:
    """Value function samples on a space-time grid with derivative access.

    ``exact_form`` is set for closed-form candidates imported from the
    catalog; when present, off-grid evaluation uses the form itself instead
    of bilinear interpolation.  ``kink_columns`` are state columns where the
    surface is declared non-differentiable: the second space derivative is
    refused there and callers fall back to one-sided slopes.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    provenance: str
    kink_columns: tuple = ()
    exact_form: Optional[Callable] = None
    model_name: str = ""

    def __post_init__(self):
        expect = (self.grid.t_steps + 1, self.grid.x_steps + 1)
        if self.values.shape != expect:
            raise ConfigError(f"values shape {self.values.shape} != {expect}")
        self.values.setflags(write=False)

    def value_at(self, t, x):
        """Surface value at (t, x); constant extrapolation outside the box."""
        if self.exact_form is not None:
            return self.exact_form(t, x)
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.grid.horizon)
        x = np.clip(np.asarray(x, dtype=float), self.grid.x_min, self.grid.x_max)
        ti = np.clip((t / self.grid.dt).astype(int), 0, self.grid.t_steps - 1)
        xi = np.clip(((x - self.grid.x_min) / self.grid.dx).astype(int),
                     0, self.grid.x_steps - 1)
        at = (t - ti * self.grid.dt) / self.grid.dt
        ax = (x - (self.grid.x_min + xi * self.grid.dx)) / self.grid.dx
        v = self.values
        out = ((1 - at) * (1 - ax) * v[ti, xi] + (1 - at) * ax * v[ti, xi + 1]
               + at * (1 - ax) * v[ti + 1, xi] + at * ax * v[ti + 1, xi + 1])
        return out if out.shape else float(out)

    def derivative_rows(self, i):
        """(w_t, w_x, w_xx) along the state axis at time index i.

        Central differences at interior nodes, one-sided second-order at the
        edges; kink columns are reported as NaN in the space derivatives.
        """
        v, dt, dx = self.values, self.grid.dt, self.grid.dx
        w = v[i]
        wt = np.empty_like(w)
        if 0 < i < self.grid.t_steps:
            wt[:] = (v[i + 1] - v[i - 1]) / (2 * dt)
        elif i == 0:
            wt[:] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * dt)
        else:
            wt[:] = (3 * v[i] - 4 * v[i - 1] + v[i - 2]) / (2 * dt)
        wx = np.empty_like(w)
        wx[1:-1] = (w[2:] - w[:-2]) / (2 * dx)
        wx[0] = (-3 * w[0] + 4 * w[1] - w[2]) / (2 * dx)
        wx[-1] = (3 * w[-1] - 4 * w[-2] + w[-3]) / (2 * dx)
        wxx = np.empty_like(w)
        wxx[1:-1] = (w[2:] - 2 * w[1:-1] + w[:-2]) / dx ** 2
        wxx[0] = (2 * w[0] - 5 * w[1] + 4 * w[2] - w[3]) / dx ** 2
        wxx[-1] = (2 * w[-1] - 5 * w[-2] + 4 * w[-3] - w[-4]) / dx ** 2
        for j in self.kink_columns:
            wx[j] = np.nan
            wxx[j] = np.nan
        return wt, wx, wxx

    def derivatives(self, i, j):
        """(w_t, w_x, w_xx) at one grid node; refuses kink columns."""
        if j in self.kink_columns:
            raise KinkColumnError(
                f"state column {j} is a declared kink; use one_sided_slopes "
                "and the superdifferential machinery instead")
        wt, wx, wxx = self.derivative_rows(i)
        return float(wt[j]), float(wx[j]), float(wxx[j])

    def one_sided_slopes(self, i, j):
        """(left, right) first differences at a node, for kink handling."""
        w, dx = self.values[i], self.grid.dx
        left = (w[j] - w[j - 1]) / dx if j > 0 else (w[j + 1] - w[j]) / dx
        right = (w[j + 1] - w[j]) / dx if j < len(w) - 1 else left
        return float(left), float(right)


@dataclass(frozen=True)
class HamiltonianQuery:
    time: float
    state: float
    value: float
    gradient: float
    curvature: float
    control: float


def _finite(tag, arr):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"non-finite {tag} evaluation")
    return arr


def hamiltonian(model, query):
    """Generator-plus-driver value at one (time, state, expansion, control)."""
    r, x, u = query.time, query.state, query.control
    if not model.control_set.contains(u):
        raise ConfigError(f"control {u} outside the control set")
    sig = _finite("diffusion", model.diffusion(r, x, u))
    b = _finite("drift", model.drift(r, x, u))
    if model.state_dim == 1:
        second = 0.5 * float(sig) ** 2 * query.curvature
        first = query.gradient * float(b)
        zslot = query.gradient * float(sig)
    else:
        a = 0.5 * sig @ sig.T
        second = float(np.trace(a @ np.asarray(query.curvature)))
        first = float(np.dot(query.gradient, b))
        zslot = np.asarray(query.gradient) @ sig
    f = _finite("driver", model.driver(r, x, query.value, zslot, u))
    return float(second + first + f)


def _hamiltonian_grid(model, t, x_row, y_row, p_row, pp_row, u_grid):
    """H on (controls x states); broadcast when coefficients allow, else loop."""
    x_row = np.asarray(x_row, dtype=float)
    shape = (len(u_grid), len(x_row))
    try:
        ucol = np.asarray(u_grid, dtype=float)[:, None]
        sig = np.broadcast_to(np.asarray(
            model.diffusion(t, x_row[None, :], ucol), dtype=float), shape)
        b = np.broadcast_to(np.asarray(
            model.drift(t, x_row[None, :], ucol), dtype=float), shape)
        f = np.broadcast_to(np.asarray(
            model.driver(t, x_row[None, :], y_row[None, :],
                         p_row[None, :] * sig, ucol), dtype=float), shape)
        return 0.5 * sig * sig * pp_row[None, :] + b * p_row[None, :] + f
    except (ValueError, TypeError):
        rows = []
        for u in np.asarray(u_grid, dtype=float):
            sig = np.broadcast_to(np.asarray(
                model.diffusion(t, x_row, u), dtype=float), x_row.shape)
            b = np.broadcast_to(np.asarray(
                model.drift(t, x_row, u), dtype=float), x_row.shape)
            f = np.broadcast_to(np.asarray(
                model.driver(t, x_row, y_row, p_row * sig, u), dtype=float),
                x_row.shape)
            rows.append(0.5 * sig * sig * pp_row + b * p_row + f)
        return np.stack(rows)


def inf_hamiltonian(model, t, x, y, p, pp):
    """Grid infimum of the Hamiltonian over controls, with the argmin set.

    Ties within 1e-12 * (1 + |minimum|) are kept; the canonical minimizer is
    the smallest control (lexicographic for product sets, which is the grid
    order produced by the control set).
    """
    u_grid = np.atleast_1d(model.control_set.points())
    if u_grid.ndim > 1:
        values = np.array([hamiltonian(model, HamiltonianQuery(t, x, y, p, pp, u))
                           for u in u_grid])
    else:
        values = _hamiltonian_grid(model, t, np.array([x]), np.array([y]),
                                   np.array([p]), np.array([pp]), u_grid)[:, 0]
    if not np.all(np.isfinite(values)):
        raise EvaluationError("non-finite Hamiltonian on the control grid")
    vmin = float(values.min())
    tol = 1e-12 * (1.0 + abs(vmin))
    mask = values <= vmin + tol
    return vmin, u_grid[mask]


def _coefficient_bounds(model, grid):
    """Sampled sup of sigma^2 and |b| over the box, for the step-size bound."""
    u_grid = np.atleast_1d(model.control_set.points())
    if u_grid.ndim > 1:
        u_grid = u_grid[:, 0]
    s2max, bmax = 0.0, 0.0
    for t in (0.0, 0.5 * grid.horizon, grid.horizon):
        for u in u_grid:
            sig = np.asarray(model.diffusion(t, grid.xs, u), dtype=float)
            b = np.asarray(model.drift(t, grid.xs, u), dtype=float)
            s2max = max(s2max, float(np.max(sig * sig)))
            bmax = max(bmax, float(np.max(np.abs(b))))
    return s2max, bmax


def _fill_edges(w, boundary):
    if boundary == "extrap2":
        w[0] = 3 * w[1] - 3 * w[2] + w[3]
        w[-1] = 3 * w[-2] - 3 * w[-3] + w[-4]
    elif boundary == "extrap1":
        w[0] = 2 * w[1] - w[2]
        w[-1] = 2 * w[-2] - w[-3]
    else:
        raise ConfigError(f"unknown boundary rule '{boundary}'")


def _kink_columns_for(model, grid):
    cols = []
    for kink in model.value_kinks:
        j = int(round((kink - grid.x_min) / grid.dx))
        if 0 <= j <= grid.x_steps and abs(grid.xs[j] - kink) <= 0.5 * grid.dx:
            cols.append(j)
    return tuple(cols)


def solve_obstacle_hjb(model, grid, scheme="explicit", cfl="auto",
                       boundary="extrap2", penalty_level=None,
                       policy_tol=1e-9, policy_budget=80):
    """Backward solve of the obstacle equation on the grid.

    ``scheme='explicit'`` steps with central differences and an exhaustive
    control-grid infimum; steps above the parabolic bound are split into
    substeps (``cfl='strict'`` refuses instead).  ``scheme='implicit'`` runs
    policy iteration with a banded implicit generator per time step.  With
    ``penalty_level`` set, the hard projection onto the barrier is replaced
    by the soft penalty resolve, which is how the penalty approximation of
    the variational inequality is exposed for convergence studies.
    """
    if model.state_dim != 1:
        raise ConfigError("the PDE solver supports scalar state only")
    if abs(grid.horizon - model.horizon) > 1e-12:
        raise ConfigError("grid horizon must match the model horizon")
    if scheme == "explicit":
        values, meta = _solve_explicit(model, grid, cfl, boundary, penalty_level)
    elif scheme == "implicit":
        values, meta = _solve_policy_iteration(model, grid, boundary,
                                               penalty_level, policy_tol,
                                               policy_budget)
    else:
        raise ConfigError("scheme must be 'explicit' or 'implicit'")
    return ValueSurface(grid=grid, values=values,
                        provenance=f"computed({meta})",
                        kink_columns=_kink_columns_for(model, grid),
                        model_name=model.name)


def _project(w, barrier, penalty_level, dt):
    if penalty_level is None:
        return np.minimum(w, barrier)
    over = w - barrier
    return np.where(over <= 0.0, w, barrier + over / (1.0 + penalty_level * dt))


def _solve_explicit(model, grid, cfl, boundary, penalty_level):
    xs, dt, dx = grid.xs, grid.dt, grid.dx
    s2max, bmax = _coefficient_bounds(model, grid)
    stable_dt = dx * dx / max(s2max + bmax * dx, 1e-300)
    substeps = max(1, int(math.ceil(dt / stable_dt)))
    if substeps > 1 and cfl == "strict":
        raise StabilityError(
            f"explicit step dt={dt:.6g} violates the stability bound; "
            f"required dt <= {stable_dt:.6g}", required_dt=stable_dt)
    if cfl not in ("auto", "strict"):
        raise ConfigError("cfl must be 'auto' or 'strict'")

    u_grid = np.atleast_1d(model.control_set.points())
    if u_grid.ndim > 1:
        raise ConfigError("the PDE solver supports one control coordinate")
    times = grid.times
    values = np.empty((grid.t_steps + 1, grid.x_steps + 1))
    values[-1] = np.asarray(model.terminal(xs), dtype=float)
    sub_dt = dt / substeps
    x_int = xs[1:-1]

    w = values[-1].copy()
    for i in range(grid.t_steps - 1, -1, -1):
        for k in range(substeps):
            t_lvl = times[i + 1] - k * sub_dt
            t_new = t_lvl - sub_dt
            wx = (w[2:] - w[:-2]) / (2 * dx)
            wxx = (w[2:] - 2 * w[1:-1] + w[:-2]) / dx ** 2
            h_rows = _hamiltonian_grid(model, t_lvl, x_int, w[1:-1], wx, wxx, u_grid)
            w_new = np.empty_like(w)
            w_new[1:-1] = w[1:-1] + sub_dt * h_rows.min(axis=0)
            _fill_edges(w_new, boundary)
            barrier = np.asarray(model.obstacle(t_new, xs), dtype=float)
            w = _project(w_new, barrier, penalty_level, sub_dt)
            if not np.all(np.isfinite(w)):
                raise BackwardSolverError(
                    f"explicit scheme produced non-finite values near t={t_new:.4g}")
        values[i] = w
    meta = f"scheme=explicit, substeps={substeps}, boundary={boundary}"
    if penalty_level is not None:
        meta += f", penalty={penalty_level:g}"
    return values, meta


def _solve_policy_iteration(model, grid, boundary, penalty_level,
                            policy_tol, policy_budget):
    xs, dt, dx = grid.xs, grid.dt, grid.dx
    u_grid = np.atleast_1d(model.control_set.points())
    if u_grid.ndim > 1:
        raise ConfigError("the PDE solver supports one control coordinate")
    times = grid.times
    n = grid.x_steps + 1
    values = np.empty((grid.t_steps + 1, n))
    values[-1] = np.asarray(model.terminal(xs), dtype=float)
    x_int = xs[1:-1]

    for i in range(grid.t_steps - 1, -1, -1):
        target = values[i + 1]
        w = target.copy()
        t_new = times[i]
        barrier = np.asarray(model.obstacle(t_new, xs), dtype=float)
        converged = False
        for _ in range(policy_budget):
            wx = (w[2:] - w[:-2]) / (2 * dx)
            wxx = (w[2:] - 2 * w[1:-1] + w[:-2]) / dx ** 2
            h_rows = _hamiltonian_grid(model, t_new, x_int, w[1:-1], wx, wxx, u_grid)
            u_star = u_grid[np.argmin(h_rows, axis=0)]
            sig = np.broadcast_to(np.asarray(
                model.diffusion(t_new, x_int, u_star), dtype=float), x_int.shape)
            b = np.broadcast_to(np.asarray(
                model.drift(t_new, x_int, u_star), dtype=float), x_int.shape)
            f = np.broadcast_to(np.asarray(
                model.driver(t_new, x_int, w[1:-1], wx * sig, u_star),
                dtype=float), x_int.shape)
            a = 0.5 * sig * sig
            # banded system, bandwidths (2,2): interior rows implicit in the
            # generator, edge rows impose linear extrapolation
            ab = np.zeros((5, n))
            ab[2, 1:-1] = 1.0 + 2.0 * dt * a / dx ** 2
            ab[1, 2:] = -dt * (a / dx ** 2 + b / (2 * dx))
            ab[3, :-2] = -dt * (a / dx ** 2 - b / (2 * dx))
            rhs = np.empty(n)
            rhs[1:-1] = target[1:-1] + dt * f
            ab[2, 0] = 1.0
            ab[1, 1] = -2.0
            ab[0, 2] = 1.0
            rhs[0] = 0.0
            ab[2, -1] = 1.0
            ab[3, -2] = -2.0
            ab[4, -3] = 1.0
            rhs[-1] = 0.0
            w_new = solve_banded((2, 2), ab, rhs)
            w_new = _project(w_new, barrier, penalty_level, dt)
            shift = float(np.max(np.abs(w_new - w)))
            w = w_new
            if shift <= policy_tol * (1.0 + float(np.max(np.abs(w)))):
                converged = True
                break
        if not converged:
            raise BackwardSolverError(
                f"policy iteration not converged at time index {i}")
        values[i] = w
    return values, f"scheme=implicit, boundary={boundary}"


def residual(surface, model):
    """max{W - h, -W_t - inf_u H} at interior nodes; NaN elsewhere.

    For a valid solution the field is nonpositive up to discretization error,
    with the PDE branch vanishing wherever the barrier is slack.
    """
    grid = surface.grid
    out = np.full_like(surface.values, np.nan)
    u_grid = np.atleast_1d(model.control_set.points())
    xs = grid.xs
    for i in range(1, grid.t_steps):
        wt, wx, wxx = surface.derivative_rows(i)
        h_rows = _hamiltonian_grid(model, grid.times[i], xs[1:-1],
                                   surface.values[i, 1:-1], wx[1:-1], wxx[1:-1],
                                   u_grid)
        barrier = np.asarray(model.obstacle(grid.times[i], xs[1:-1]), dtype=float)
        pde = -wt[1:-1] - h_rows.min(axis=0)
        out[i, 1:-1] = np.maximum(surface.values[i, 1:-1] - barrier, pde)
        for j in surface.kink_columns:
            out[i, j] = np.nan
    return out


# ---------------------------------------------------------------------------
# Closed-form candidate surfaces
# ---------------------------------------------------------------------------

def _classical_form(horizon):
    def form(t, x):
        return np.asarray(x, dtype=float) * np.exp(2.0 * (horizon - np.asarray(t, dtype=float)))
    return form


def _viscosity_form(horizon):
    def form(t, x):
        x = np.asarray(x, dtype=float)
        grown = x * np.exp(3.0 * (horizon - np.asarray(t, dtype=float)))
        out = np.where(x > 0.0, x, grown)
        return out if out.shape else float(out)
    return form


CANDIDATE_CATALOG = {
    "candidate-classical": (_classical_form, ()),
    "candidate-viscosity": (_viscosity_form, (0.0,)),
}


def candidate_surface(name, grid):
    """Sample a catalog closed form onto a grid, keeping the exact form."""
    try:
        factory, kinks = CANDIDATE_CATALOG[name]
    except KeyError:
        raise ConfigError(
            f"unknown candidate '{name}'; known: {sorted(CANDIDATE_CATALOG)}") from None
    form = factory(grid.horizon)
    tt, xx = np.meshgrid(grid.times, grid.xs, indexing="ij")
    values = np.asarray(form(tt, xx), dtype=float)
    cols = []
    for kink in kinks:
        j = int(round((kink - grid.x_min) / grid.dx))
        if 0 <= j <= grid.x_steps and abs(grid.xs[j] - kink) <= 0.5 * grid.dx:
            cols.append(j)
    return ValueSurface(grid=grid, values=values,
                        provenance=f"closed-form candidate '{name}'",
                        kink_columns=tuple(cols), exact_form=form,
                        model_name=name)


def write_surface_csv(surface, path):
    """Matrix dump: one row per time node, one column per state node."""
    grid = surface.grid
    with open(path, "w") as fh:
        fh.write(f"# provenance: {surface.provenance}\n")
        fh.write(f"# model: {surface.model_name}\n")
        fh.write(f"# horizon={grid.horizon!r} x_min={grid.x_min!r} "
                 f"x_max={grid.x_max!r} t_steps={grid.t_steps} x_steps={grid.x_steps}\n")
        fh.write(f"# kink_columns: {list(surface.kink_columns)}\n")
        fh.write("time," + ",".join(repr(float(x)) for x in grid.xs) + "\n")
        for i, t in enumerate(grid.times):
            fh.write(repr(float(t)) + "," +
                     ",".join(repr(float(v)) for v in surface.values[i]) + "\n")
