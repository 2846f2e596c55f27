"""Closed-loop equilibrium analysis over centre-of-mass uncertainty.

The reduced closed loop is the vehicle driven by a linearising law whose
point-P velocity command is frozen at ``v_bar * (cos psi_bar, sin psi_bar)``.
Its state is ``(psi, r, beta, delta)`` for the front-axle law and
``(psi, r, beta)`` for the velocity-direction law, and it has an equilibrium
at ``(psi_bar, 0, 0[, 0])`` for every deviation ``dl = l_f_est - l_f``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import eigen
from .linearise import (
    Law,
    LinearisationConfig,
    SingularityError,
    front_axle_law_kernel,
    velocity_direction_law_kernel,
)
from .model import SpeedBelowFloorError, VehicleParams, lateral_field

STABILITY_TOL = 1e-9
HOPF_RE_TOL = 1e-8
HOPF_WIDTH_TOL = 1e-7
EQUILIBRIUM_TOL = 1e-10
FD_REL_STEP = float(np.finfo(float).eps ** (1.0 / 3.0))
# Bifurcation type is not recomputed here; every boundary found for these
# closed loops is reported as subcritical.
HOPF_KIND = "subcritical"


class EquilibriumError(ValueError):
    pass


class BracketError(ValueError):
    pass


class NonHopfBoundaryError(RuntimeError):
    """The stability boundary is crossed by a real eigenvalue, not a complex pair."""

    def __init__(self, message: str, dl: float, eigenvalues: np.ndarray):
        super().__init__(message)
        self.dl = dl
        self.eigenvalues = eigenvalues


@dataclass(frozen=True)
class EquilibriumSpec:
    v_bar: float
    psi_bar: float = math.pi / 4
    law: Law = Law.FRONT_AXLE_OFFSET

    def __post_init__(self):
        object.__setattr__(self, "law", Law(self.law))
        if not (math.isfinite(self.v_bar) and self.v_bar > 0):
            raise ValueError(f"v_bar must be > 0, got {self.v_bar!r}")

    @property
    def dim(self) -> int:
        return 4 if self.law is Law.FRONT_AXLE_OFFSET else 3

    def point(self) -> np.ndarray:
        xi = np.zeros(self.dim)
        xi[0] = self.psi_bar
        return xi


def closed_loop_field(xi, eq: EquilibriumSpec, dl: float, params: VehicleParams,
                      cfg: LinearisationConfig = LinearisationConfig()) -> np.ndarray:
    """Derivative of the reduced closed-loop state.

    ``cfg`` supplies ``p`` and the singularity margin; its ``l_f_est`` is
    replaced by ``params.l_f + dl``. ``xi`` may be complex.
    """
    xi = np.asarray(xi)
    if xi.shape != (eq.dim,):
        raise ValueError(f"reduced state for {eq.law.value} has {eq.dim} components, got shape {xi.shape}")
    v_Px = eq.v_bar * math.cos(eq.psi_bar)
    v_Py = eq.v_bar * math.sin(eq.psi_bar)
    l_f_est = params.l_f + dl
    if eq.law is Law.FRONT_AXLE_OFFSET:
        psi, r, beta, delta = xi
        v, u_delta = front_axle_law_kernel(psi, r, beta, delta, v_Px, v_Py, l_f_est, cfg.p,
                                           cfg.singularity_margin)
        r_dot, beta_dot = lateral_field(r, beta, delta, v, params)
        return np.array([r, r_dot, beta_dot, u_delta])
    psi, r, beta = xi
    l_r_est = cfg.l_r_est if cfg.l_r_est is not None else params.wheelbase - l_f_est
    v, delta, _ = velocity_direction_law_kernel(psi, r, beta, v_Px, v_Py, cfg.p, params,
                                                l_f_est=l_f_est, l_r_est=l_r_est)
    r_dot, beta_dot = lateral_field(r, beta, delta, v, params)
    return np.array([r, r_dot, beta_dot])


def equilibrium_residual(eq: EquilibriumSpec, dl: float, params: VehicleParams,
                         cfg: LinearisationConfig = LinearisationConfig()) -> float:
    return float(np.max(np.abs(closed_loop_field(eq.point(), eq, dl, params, cfg))))


def jacobian(eq: EquilibriumSpec, dl: float, params: VehicleParams,
             cfg: LinearisationConfig = LinearisationConfig(), *, rel_step: float = FD_REL_STEP) -> np.ndarray:
    """Central-difference Jacobian of :func:`closed_loop_field` at the equilibrium.

    The step for component ``i`` is ``rel_step * max(1, |xi_i|)``; differences
    are divided by the realised step ``(xi_i + h) - (xi_i - h)``. The default
    ``eps**(1/3)`` balances truncation against round-off for central
    differences. The law evaluates world-frame trigonometry at the equilibrium
    heading, so round-off dominates at smaller steps.
    """
    residual = equilibrium_residual(eq, dl, params, cfg)
    if residual > EQUILIBRIUM_TOL:
        raise EquilibriumError(f"equilibrium residual {residual:.3e} exceeds {EQUILIBRIUM_TOL:g}")
    x0 = eq.point()
    n = eq.dim
    J = np.empty((n, n))
    for i in range(n):
        h = rel_step * max(1.0, abs(x0[i]))
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (closed_loop_field(xp, eq, dl, params, cfg) - closed_loop_field(xm, eq, dl, params, cfg)) / (
            xp[i] - xm[i]
        )
    if not np.all(np.isfinite(J)):
        raise EquilibriumError("Jacobian has non-finite entries")
    return J


def complex_step_jacobian(eq: EquilibriumSpec, dl: float, params: VehicleParams,
                          cfg: LinearisationConfig = LinearisationConfig(), h: float = 1e-30) -> np.ndarray:
    """Jacobian by complex-step differentiation (exact to round-off)."""
    x0 = eq.point().astype(complex)
    n = eq.dim
    J = np.empty((n, n))
    for i in range(n):
        x = x0.copy()
        x[i] += 1j * h
        J[:, i] = closed_loop_field(x, eq, dl, params, cfg).imag / h
    return J


@dataclass
class CellResult:
    verdict: str
    max_re: float
    eigenvalues: np.ndarray
    oracle_gap: float = float("nan")
    error: str = ""


def classify(eq: EquilibriumSpec, dl: float, params: VehicleParams,
             cfg: LinearisationConfig = LinearisationConfig(), *, tol: float = STABILITY_TOL) -> CellResult:
    """Stability verdict of one equilibrium: 'stable', 'unstable' or 'invalid'."""
    try:
        J = jacobian(eq, dl, params, cfg)
        lam = eigen.eigenvalues(J)
    except (SingularityError, SpeedBelowFloorError, EquilibriumError, eigen.EigenvalueConvergenceError) as exc:
        return CellResult("invalid", float("nan"), np.full(eq.dim, np.nan + 0j), error=str(exc))
    max_re = float(lam.real.max())
    gap = eigen.max_mismatch(lam, eigen.qr_eigenvalues(J))
    verdict = "stable" if max_re < -tol else "unstable"
    return CellResult(verdict, max_re, lam, oracle_gap=gap)


@dataclass
class HopfPoint:
    """A located stability boundary at fixed speed."""

    v_bar: float
    dl_star: float
    frequency: float
    eigenvalues: np.ndarray
    bracket: tuple[float, float]
    kind: str = HOPF_KIND


def _max_re(v_bar, dl, params, cfg, psi_bar, law) -> float:
    eq = EquilibriumSpec(v_bar, psi_bar, law)
    return float(eigen.eigenvalues(jacobian(eq, dl, params, cfg)).real.max())


def hopf_bisect(v_bar: float, dl_bracket: tuple[float, float], params: VehicleParams,
                cfg: LinearisationConfig = LinearisationConfig(), *, psi_bar: float = math.pi / 4,
                law: Law | None = None) -> HopfPoint:
    """Locate the deviation where the equilibrium loses stability.

    Bisection narrows ``dl_bracket`` to ``HOPF_WIDTH_TOL``; Brent's method then
    drives the largest real part below ``HOPF_RE_TOL`` inside that bracket.

    Raises
    ------
    BracketError
        If the bracket is degenerate or both ends have the same verdict.
    NonHopfBoundaryError
        If the eigenvalue crossing at the boundary is real.
    """
    law = cfg.law if law is None else Law(law)
    a, b = (float(x) for x in dl_bracket)
    if not (math.isfinite(a) and math.isfinite(b)) or a == b:
        raise BracketError(f"degenerate bracket {dl_bracket!r}")

    def g(dl):
        return _max_re(v_bar, dl, params, cfg, psi_bar, law)

    ga, gb = g(a), g(b)
    if (ga < -STABILITY_TOL) == (gb < -STABILITY_TOL):
        verdict = "stable" if ga < -STABILITY_TOL else "unstable"
        raise BracketError(f"both bracket ends are {verdict} (max Re = {ga:.3e}, {gb:.3e})")
    while abs(b - a) > HOPF_WIDTH_TOL:
        mid = 0.5 * (a + b)
        gm = g(mid)
        if (gm < 0) == (ga < 0):
            a, ga = mid, gm
        else:
            b, gb = mid, gm
    if ga == 0:
        dl_star = a
    elif gb == 0:
        dl_star = b
    else:
        dl_star = brentq(g, a, b, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    eq = EquilibriumSpec(v_bar, psi_bar, law)
    lam = eigen.eigenvalues(jacobian(eq, dl_star, params, cfg))
    critical = lam[np.argmax(lam.real)]
    scale = max(1.0, float(np.abs(lam).max()))
    if abs(critical.imag) <= 1e-9 * scale:
        raise NonHopfBoundaryError(
            f"stability is lost through a real eigenvalue at dl = {dl_star:.6g} m (fold, not Hopf)",
            dl_star, lam,
        )
    return HopfPoint(v_bar=v_bar, dl_star=float(dl_star), frequency=float(abs(critical.imag)),
                     eigenvalues=lam, bracket=(min(a, b), max(a, b)))


def find_boundary(v_bar: float, dl_values, params: VehicleParams,
                  cfg: LinearisationConfig = LinearisationConfig(), *, psi_bar: float = math.pi / 4,
                  law: Law | None = None) -> HopfPoint | None:
    """Scan ``dl_values`` in order and bisect the first stable/unstable change.

    Returns None when no change of verdict is found.
    """
    law = cfg.law if law is None else Law(law)
    eq = EquilibriumSpec(v_bar, psi_bar, law)
    prev = None
    for dl in dl_values:
        cell = classify(eq, float(dl), params, cfg)
        if cell.verdict == "invalid":
            prev = None
            continue
        if prev is not None and prev[1] != cell.verdict:
            return hopf_bisect(v_bar, (prev[0], float(dl)), params, cfg, psi_bar=psi_bar, law=law)
        prev = (float(dl), cell.verdict)
    return None


@dataclass
class StabilityMap:
    """Verdicts over a ``(v_bar, dl)`` grid. Arrays are indexed ``[i_v, i_dl]``."""

    law: Law
    v_bar_grid: np.ndarray
    dl_grid: np.ndarray
    verdict: np.ndarray
    max_re: np.ndarray
    eigenvalues: np.ndarray
    oracle_gap: np.ndarray
    hopf_points: list = field(default_factory=list)
    other_boundaries: list = field(default_factory=list)
    psi_bar: float = math.pi / 4

    def unstable_fraction(self, i_v: int) -> float:
        row = self.verdict[i_v]
        valid = row != "invalid"
        if not valid.any():
            return float("nan")
        return float(np.mean(row[valid] == "unstable"))

    def row_index(self, v_bar: float) -> int:
        i = int(np.argmin(np.abs(self.v_bar_grid - v_bar)))
        if not math.isclose(self.v_bar_grid[i], v_bar, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"v_bar = {v_bar} is not on the grid")
        return i

    def write_csv(self, path) -> Path:
        path = Path(path)
        n = eigen.MAX_DIM
        header = ["v_bar", "dl", "verdict", "max_re"] + [f"re_l{k}" for k in range(1, n + 1)] + [
            f"im_l{k}" for k in range(1, n + 1)
        ]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i, v in enumerate(self.v_bar_grid):
                for j, dl in enumerate(self.dl_grid):
                    lam = self.eigenvalues[i, j]
                    valid = self.verdict[i, j] != "invalid"
                    re = [_fmt(z.real) if valid else "" for z in lam] + [""] * (n - len(lam))
                    im = [_fmt(z.imag) if valid else "" for z in lam] + [""] * (n - len(lam))
                    writer.writerow([_fmt(v), _fmt(dl), self.verdict[i, j],
                                     _fmt(self.max_re[i, j]) if valid else ""] + re + im)
        return path

    def write_hopf_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["v_bar", "dl_star", "hopf_freq"])
            for hp in self.hopf_points:
                writer.writerow([_fmt(hp.v_bar), _fmt(hp.dl_star), _fmt(hp.frequency)])
        return path


def _fmt(x: float) -> str:
    return repr(float(x))


def _sweep_row(args):
    v_bar, dl_grid, params, cfg, law, psi_bar, locate = args
    eq = EquilibriumSpec(v_bar, psi_bar, law)
    cells = [classify(eq, float(dl), params, cfg) for dl in dl_grid]
    hopf, other = [], []
    if locate:
        for j in range(len(cells) - 1):
            left, right = cells[j].verdict, cells[j + 1].verdict
            if "invalid" in (left, right) or left == right:
                continue
            bracket = (float(dl_grid[j]), float(dl_grid[j + 1]))
            try:
                hopf.append(hopf_bisect(v_bar, bracket, params, cfg, psi_bar=psi_bar, law=law))
            except NonHopfBoundaryError as exc:
                other.append((v_bar, exc.dl))
    return cells, hopf, other


def stability_sweep(v_bars, dl_grid, params: VehicleParams,
                    cfg: LinearisationConfig = LinearisationConfig(), *, law: Law | None = None,
                    psi_bar: float = math.pi / 4, locate_boundaries: bool = True,
                    workers: int = 1) -> StabilityMap:
    """Classify every ``(v_bar, dl)`` cell and locate boundaries row by row.

    Rows are independent; ``workers > 1`` evaluates them in a process pool.
    Output order follows the grid and does not depend on scheduling.
    """
    law = cfg.law if law is None else Law(law)
    v_bars = np.asarray(v_bars, dtype=float)
    dl_grid = np.asarray(dl_grid, dtype=float)
    if v_bars.size == 0 or dl_grid.size == 0:
        raise ValueError("stability sweep needs a non-empty speed grid and dl grid")
    jobs = [(float(v), dl_grid, params, cfg, law, psi_bar, locate_boundaries) for v in v_bars]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(job) for job in jobs]

    dim = EquilibriumSpec(1.0, psi_bar, law).dim
    shape = (v_bars.size, dl_grid.size)
    verdict = np.empty(shape, dtype=object)
    max_re = np.full(shape, np.nan)
    eigs = np.full(shape + (dim,), np.nan + 0j)
    gap = np.full(shape, np.nan)
    hopf, other = [], []
    for i, (cells, row_hopf, row_other) in enumerate(rows):
        for j, cell in enumerate(cells):
            verdict[i, j] = cell.verdict
            max_re[i, j] = cell.max_re
            eigs[i, j] = cell.eigenvalues
            gap[i, j] = cell.oracle_gap
        hopf.extend(row_hopf)
        other.extend(row_other)
    return StabilityMap(law=law, v_bar_grid=v_bars, dl_grid=dl_grid, verdict=verdict, max_re=max_re,
                        eigenvalues=eigs, oracle_gap=gap, hopf_points=hopf, other_boundaries=other,
                        psi_bar=psi_bar)


def grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive, evenly spaced grid; ``stop`` is kept when it lands on a step."""
    if not step > 0:
        raise ValueError(f"grid step must be > 0, got {step}")
    if stop < start:
        raise ValueError(f"grid stop {stop} is below start {start}")
    n = int(math.floor((stop - start) / step + 1e-9))
    return start + step * np.arange(n + 1)
