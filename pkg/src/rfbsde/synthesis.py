"""Feedback-law extraction from a value surface and closed-loop evaluation.

The candidate law at each grid node is the canonical minimizer of the
Hamiltonian evaluated with the surface's finite-difference expansion.  At
declared kink columns the gradient slot takes the midpoint of the one-sided
slopes and the curvature slot zero, which keeps extraction total; rigor at
those columns is the verification module's job.

Extracted laws are looked up by nearest grid node (not interpolated) so every
evaluation returns a member of the discrete argmin set; values are projected
onto the control set either way.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .hjb import _hamiltonian_grid
from .rbsde import SolverConfig, _node0_estimate
from .simulate import simulate_closed_loop


@dataclass(frozen=True)
class FeedbackLaw:
    """Grid-aligned control table with a lookup rule.

    ``rule`` is one of ``nearest`` (default for extracted laws), ``bilinear``
    (interpolate then project onto the control set) or ``constant`` (ignore
    the table, return ``value``).
    """

    table: Optional[np.ndarray]
    grid: Optional[object]
    control_set: object
    rule: str = "nearest"
    tie_break: str = "smallest"
    provenance: str = ""
    value: float = 0.0

    @classmethod
    def constant(cls, value, control_set):
        return cls(table=None, grid=None, control_set=control_set,
                   rule="constant", provenance=f"constant({value})",
                   value=float(value))

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.rule == "constant":
            out = np.full_like(x, self.value, dtype=float)
        else:
            g = self.grid
            tc = min(max(float(t), 0.0), g.horizon)
            xc = np.clip(x, g.x_min, g.x_max)
            if self.rule == "nearest":
                i = int(round(tc / g.dt))
                j = np.rint((xc - g.x_min) / g.dx).astype(int)
                out = self.table[i, np.clip(j, 0, g.x_steps)]
            elif self.rule == "bilinear":
                i = min(int(tc / g.dt), g.t_steps - 1)
                j = np.clip(((xc - g.x_min) / g.dx).astype(int), 0, g.x_steps - 1)
                at = (tc - i * g.dt) / g.dt
                ax = (xc - (g.x_min + j * g.dx)) / g.dx
                v = self.table
                out = ((1 - at) * (1 - ax) * v[i, j] + (1 - at) * ax * v[i, j + 1]
                       + at * (1 - ax) * v[i + 1, j] + at * ax * v[i + 1, j + 1])
            else:
                raise ConfigError(f"unknown law rule '{self.rule}'")
        out = self.control_set.clip(out)
        return out if out.shape else float(out)


def extract_feedback(surface, model):
    """Canonical Hamiltonian minimizer at every surface node.

    Ties within 1e-12 * (1 + |min|) resolve to the smallest control on the
    grid, so the table is deterministic.
    """
    grid = surface.grid
    u_grid = np.atleast_1d(model.control_set.points())
    if u_grid.ndim > 1:
        raise ConfigError("feedback extraction supports one control coordinate")
    table = np.empty_like(surface.values)
    xs = grid.xs
    for i in range(grid.t_steps + 1):
        _, wx, wxx = surface.derivative_rows(i)
        for j in surface.kink_columns:
            left, right = surface.one_sided_slopes(i, j)
            wx[j] = 0.5 * (left + right)
            wxx[j] = 0.0
        rows = _hamiltonian_grid(model, grid.times[i], xs, surface.values[i],
                                 wx, wxx, u_grid)
        vmin = rows.min(axis=0)
        tol = 1e-12 * (1.0 + np.abs(vmin))
        first = np.argmax(rows <= vmin + tol, axis=0)
        table[i] = u_grid[first]
    return FeedbackLaw(table=table, grid=grid, control_set=model.control_set,
                       rule="nearest", tie_break="smallest",
                       provenance=f"extracted from {surface.provenance} "
                                  f"({len(u_grid)} grid controls)")


@dataclass(frozen=True)
class LawRegularityReport:
    lipschitz_constant: float
    worst_jump: float
    member: bool


def check_law_regularity(law):
    """Measured state-Lipschitz constant of the table and a jump detector.

    The verdict fails when some time slice jumps by more than half the
    control range across one grid cell, the heuristic signature of an argmin
    switch that breaks the Lipschitz feedback class.
    """
    if law.rule == "constant" or law.table is None:
        return LawRegularityReport(0.0, 0.0, True)
    dx = law.grid.dx
    jumps = np.abs(np.diff(law.table, axis=1))
    worst = float(jumps.max()) if jumps.size else 0.0
    lip = worst / dx
    lo, hi = law.control_set.bounds[0]
    span = max(hi - lo, 1e-300)
    return LawRegularityReport(lipschitz_constant=lip, worst_jump=worst,
                               member=bool(worst <= 0.5 * span))


def evaluate_feedback(model, law, start_time, start_state, grid, n_paths, seed,
                      config=SolverConfig(), allow_irregular=False):
    """Closed-loop cost of a feedback law from one initial pair.

    Refuses laws that fail the regularity check unless explicitly overridden;
    an irregular law may still be evaluable, but the smooth-case guarantees
    no longer apply and the caller should know it.
    """
    report = check_law_regularity(law)
    if not report.member and not allow_irregular:
        raise ConfigError(
            "feedback law fails the regularity check "
            f"(worst jump {report.worst_jump:.3g}); pass allow_irregular=True "
            "to evaluate anyway")
    ensemble = simulate_closed_loop(model, law, start_time, start_state, grid,
                                    n_paths, seed)
    return _node0_estimate(model, ensemble, config, seed)


def write_law_csv(law, path):
    """Control table dump with the lookup rule recorded in the header."""
    with open(path, "w") as fh:
        fh.write(f"# provenance: {law.provenance}\n")
        fh.write(f"# rule: {law.rule} tie_break: {law.tie_break}\n")
        if law.table is None:
            fh.write(f"# constant: {law.value!r}\n")
            return
        g = law.grid
        fh.write("time," + ",".join(repr(float(x)) for x in g.xs) + "\n")
        for i, t in enumerate(g.times):
            fh.write(repr(float(t)) + "," +
                     ",".join(repr(float(v)) for v in law.table[i]) + "\n")
