"""Operating characteristics via collocation on the statistic's [0, A] interval.

Every run-length quantity of the generic detection recursion solves a
second-kind integral equation driven by the statistic's transition kernel.
The interval [0, A] is split into N equal panels with midpoint nodes.  The
kernel is integrated exactly against the continuous piecewise-linear
interpolant of the nodal values: each matrix entry combines closed-form CDF
increments and closed-form partial first moments of the likelihood ratio, so
the density's inverse-square-root edge is never evaluated and transition mass
narrower than a panel is still placed correctly.  Nodal solves are second
order in the panel width; table-level scalars can additionally be Richardson
extrapolated from an (N, 2N) pair, which doubles as the grid-convergence
check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import model as _model
from .detectors import DetectorKind, QuasiStationaryDistribution, XiMap, xi_map
from .exceptions import NonConvergenceError


@dataclass(frozen=True)
class CollocationGrid:
    """N equal panels of [0, A] with midpoint nodes."""

    threshold_a: float
    n_panels: int

    def __post_init__(self) -> None:
        if not self.threshold_a > 0:
            raise ValueError("threshold_a must be positive")
        if self.n_panels < 1:
            raise ValueError("n_panels must be >= 1")

    @property
    def panel_width(self) -> float:
        return self.threshold_a / self.n_panels

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.n_panels) + 0.5) * self.panel_width

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.n_panels + 1) * self.panel_width


def _kernel_rows(model: _model.GaussianChangeModel, xi: XiMap, grid: CollocationGrid,
                 states, hypothesis: str) -> np.ndarray:
    """Rows of the discretized transition operator from the given states.

    Row entries are the weights w_j such that sum_j w_j u(node_j) equals
    int K(x, y) u(y) dy exactly whenever u is the clamped piecewise-linear
    interpolant of its nodal values.
    """
    nodes = grid.nodes
    n = grid.n_panels
    h = grid.panel_width
    scale = np.atleast_1d(np.asarray(xi(np.asarray(states, dtype=float)), dtype=float))
    if np.any(scale <= 0.0):
        raise ValueError("xi must be positive on [0, A]")
    pts = np.concatenate([nodes, [grid.threshold_a]])
    args = pts[None, :] / scale[:, None]
    cdf = _model._lr_cdf_array(model, args, hypothesis)
    mom = _model.lr_partial_moment(model, args, hypothesis) * scale[:, None]
    rows = np.zeros((len(scale), n))
    # mass below the first node and above the last one sees the nearest node
    rows[:, 0] += cdf[:, 0]
    rows[:, n - 1] += cdf[:, n] - cdf[:, n - 1]
    d_cdf = cdf[:, 1:n] - cdf[:, : n - 1]
    d_mom = mom[:, 1:n] - mom[:, : n - 1]
    lo = nodes[: n - 1][None, :]
    hi = nodes[1:n][None, :]
    rows[:, : n - 1] += (hi * d_cdf - d_mom) / h
    rows[:, 1:n] += (d_mom - lo * d_cdf) / h
    return rows


def kernel_row(model: _model.GaussianChangeModel, xi: XiMap, grid: CollocationGrid,
               x: float, hypothesis: str) -> np.ndarray:
    """Discretized transition-operator row from a single state x."""
    return _kernel_rows(model, xi, grid, [x], hypothesis)[0]


def build_kernel_matrices(model: _model.GaussianChangeModel, xi: XiMap,
                          grid: CollocationGrid) -> tuple[np.ndarray, np.ndarray]:
    """(pre-change, post-change) discretized transition operators.

    Row i of the pre-change matrix sums exactly to the LR CDF at
    A/xi(node_i), the probability of not alarming in one step from node i.
    """
    k_pre = _kernel_rows(model, xi, grid, grid.nodes, "pre")
    k_post = _kernel_rows(model, xi, grid, grid.nodes, "post")
    return k_pre, k_post


def _solve_second_kind(kernel: np.ndarray, source: np.ndarray) -> np.ndarray:
    system = np.eye(kernel.shape[0]) - kernel
    try:
        lu, piv = lu_factor(system)
        out = lu_solve((lu, piv), source)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise NonConvergenceError("collocation system is singular to working precision") from exc
    if not np.all(np.isfinite(out)):
        raise NonConvergenceError("collocation solve produced non-finite values")
    return out


def solve_arl(grid: CollocationGrid, k_pre: np.ndarray) -> np.ndarray:
    """Expected run length to a (false) alarm from each node."""
    return _solve_second_kind(k_pre, np.ones(grid.n_panels))


def solve_add0(grid: CollocationGrid, k_post: np.ndarray) -> np.ndarray:
    """Expected run length under the post-change regime from each node."""
    return _solve_second_kind(k_post, np.ones(grid.n_panels))


def solve_iadd(grid: CollocationGrid, k_pre: np.ndarray, delta0: np.ndarray) -> np.ndarray:
    """Integral average detection delay accumulator from each node."""
    return _solve_second_kind(k_pre, np.asarray(delta0, dtype=float))


def extend_arl(model, xi, grid, ell: np.ndarray, x0: float) -> float:
    """ARL at an arbitrary start, via one application of its defining equation."""
    return 1.0 + float(kernel_row(model, xi, grid, x0, "pre") @ ell)


def extend_add0(model, xi, grid, delta0: np.ndarray, x0: float) -> float:
    return 1.0 + float(kernel_row(model, xi, grid, x0, "post") @ delta0)


def extend_iadd(model, xi, grid, psi: np.ndarray, delta0: np.ndarray, x0: float) -> float:
    row = kernel_row(model, xi, grid, x0, "pre")
    return extend_add0(model, xi, grid, delta0, x0) + float(row @ psi)


def stadd(model, xi, grid, ell: np.ndarray, delta0: np.ndarray, psi: np.ndarray,
          x0: float) -> float:
    """Stationary average detection delay started from x0."""
    return extend_iadd(model, xi, grid, psi, delta0, x0) / extend_arl(model, xi, grid, ell, x0)


def lower_bound(model, grid, ell: np.ndarray, delta0: np.ndarray, psi: np.ndarray,
                r: float) -> float:
    """Lower bound on the minimal supremum ADD over the false-alarm class.

    Defined for the SR-type map (1 + x); evaluates the three solution
    functions at the head start r.
    """
    if not 0.0 <= r < grid.threshold_a:
        raise ValueError("r must satisfy 0 <= r < A")
    xi = xi_map(DetectorKind.SR)
    num = r * extend_add0(model, xi, grid, delta0, r) + extend_iadd(model, xi, grid, psi, delta0, r)
    den = r + extend_arl(model, xi, grid, ell, r)
    return num / den


@dataclass
class DelayProfile:
    """Conditional expected delays ADD_nu for nu = 0, 1, ..."""

    add: np.ndarray
    add_inf: float
    sup_add: float
    converged: bool
    n_steps: int

    def at(self, nu: int) -> float:
        if nu < len(self.add):
            return float(self.add[nu])
        return self.add_inf


def delay_profile(model, xi, grid, k_pre: np.ndarray, delta0: np.ndarray, x0: float,
                  nu_max: int = 5000, tail_tolerance: float = 1e-4,
                  nu_min: int = 0, raise_on_nonconvergence: bool = False) -> DelayProfile:
    """ADD_nu sequence from start x0, with the tail value as the nu -> inf limit.

    Iterates the pre-change operator on the delay and survival functions.
    Stops once consecutive values differ by less than ``tail_tolerance``
    (relative), but never before ``nu_min`` values are available.
    """
    row_pre = kernel_row(model, xi, grid, x0, "pre")
    d = np.asarray(delta0, dtype=float).copy()
    rho = np.ones(grid.n_panels)
    values = [extend_add0(model, xi, grid, delta0, x0)]
    converged = False
    for _ in range(nu_max):
        num = float(row_pre @ d)
        den = float(row_pre @ rho)
        if den <= 0.0:
            raise NonConvergenceError("survival probability vanished in the delay recursion")
        values.append(num / den)
        if len(values) - 1 >= max(nu_min, 1):
            prev, cur = values[-2], values[-1]
            if abs(cur - prev) < tail_tolerance * abs(cur):
                converged = True
                break
        d = k_pre @ d
        rho = k_pre @ rho
    add = np.asarray(values)
    if not converged:
        message = (
            f"delay profile not converged after {len(values) - 1} steps "
            f"at tail tolerance {tail_tolerance:g}"
        )
        if raise_on_nonconvergence:
            raise NonConvergenceError(message)
        warnings.warn(message, RuntimeWarning, stacklevel=2)
    return DelayProfile(
        add=add,
        add_inf=float(add[-1]),
        sup_add=float(add.max()),
        converged=converged,
        n_steps=len(values) - 1,
    )


def quasi_stationary(grid: CollocationGrid, k_pre: np.ndarray, tol: float = 1e-12,
                     max_iter: int = 200_000) -> tuple[float, np.ndarray]:
    """Leading left eigenpair of the pre-change operator by power iteration.

    Returns (lambda_A, q) with q the quasi-stationary density at the nodes,
    normalized so that panel_width * sum(q) = 1.
    """
    h = grid.panel_width
    q = np.full(grid.n_panels, 1.0 / grid.threshold_a)
    lam = 0.0
    for _ in range(max_iter):
        w = q @ k_pre
        lam_new = float(np.sum(w) * h)
        if lam_new <= 0.0:
            raise NonConvergenceError("power iteration collapsed to zero mass")
        w /= lam_new
        if abs(lam_new - lam) < tol:
            return lam_new, w
        q = w
        lam = lam_new
    raise NonConvergenceError(
        f"power iteration did not converge within {max_iter} iterations"
    )


def quasi_mean(grid: CollocationGrid, q: np.ndarray) -> float:
    return float(np.sum(grid.nodes * q) * grid.panel_width)


def srp_characteristics(grid: CollocationGrid, q: np.ndarray, ell: np.ndarray,
                        delta0: np.ndarray) -> tuple[float, float]:
    """(ARL, delay) of the quasi-stationary-start procedure.

    The ARL quadrature agrees with 1/(1 - lambda_A) up to discretization; the
    delay is flat in the change point because the start is an equalizer.
    """
    h = grid.panel_width
    arl_bar = float(np.sum(ell * q) * h)
    add_bar = float(np.sum(delta0 * q) * h)
    return arl_bar, add_bar


def quasi_distribution(grid: CollocationGrid, q: np.ndarray,
                       eigenvalue: float | None = None) -> QuasiStationaryDistribution:
    """Package the node density for head-start sampling."""
    return QuasiStationaryDistribution(
        nodes=grid.nodes,
        density=q / (float(np.sum(q)) * grid.panel_width),
        panel_width=grid.panel_width,
        upper=grid.threshold_a,
        eigenvalue=eigenvalue,
    )


def default_x0(kind: DetectorKind, head_start: float | None) -> float:
    if head_start is not None:
        return float(head_start)
    return 1.0 if DetectorKind(kind) is DetectorKind.CUSUM else 0.0


@dataclass
class OcSolution:
    """Solved operating characteristics of one procedure at one threshold.

    Scalar attributes refer to the start ``x0`` (the procedure's head start
    unless overridden).  When solved with ``richardson=True`` the scalars are
    (N, 2N) extrapolations and ``convergence_gap`` records the relative N vs
    2N change, the built-in grid check.
    """

    model: _model.GaussianChangeModel
    kind: DetectorKind
    grid: CollocationGrid
    x0: float
    ell: np.ndarray
    delta0: np.ndarray
    psi: np.ndarray
    arl: float
    add0: float
    stadd: float
    profile: Optional[DelayProfile] = None
    lambda_a: Optional[float] = None
    q_nodes: Optional[np.ndarray] = None
    mu_q: Optional[float] = None
    srp_arl: Optional[float] = None
    srp_add: Optional[float] = None
    convergence_gap: Optional[float] = None
    k_pre: Optional[np.ndarray] = field(default=None, repr=False)
    k_post: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def sup_add(self) -> float:
        if self.kind is DetectorKind.SRP:
            return self.srp_add
        if self.profile is None:
            raise ValueError("delay profile was not requested")
        return self.profile.sup_add

    def lower_bound_at(self, r: float) -> float:
        if self.kind is DetectorKind.CUSUM:
            raise ValueError("the lower bound is defined for the SR-type map")
        return lower_bound(self.model, self.grid, self.ell, self.delta0, self.psi, r)

    def quasi_distribution(self) -> QuasiStationaryDistribution:
        if self.q_nodes is None:
            raise ValueError("quasi-stationary pair was not requested")
        return quasi_distribution(self.grid, self.q_nodes, self.lambda_a)


def _solve_oc_single(model, kind, threshold_a, n_panels, head_start,
                     with_profile, nu_max, tail_tolerance, nu_min,
                     with_quasi, keep_matrices) -> OcSolution:
    grid = CollocationGrid(threshold_a=threshold_a, n_panels=n_panels)
    xi = xi_map(kind)
    k_pre, k_post = build_kernel_matrices(model, xi, grid)
    ell = solve_arl(grid, k_pre)
    delta0 = solve_add0(grid, k_post)
    psi = solve_iadd(grid, k_pre, delta0)
    x0 = default_x0(kind, head_start)

    lambda_a = q_nodes = mu_q = srp_arl = srp_add = None
    if with_quasi:
        lambda_a, q_nodes = quasi_stationary(grid, k_pre)
        mu_q = quasi_mean(grid, q_nodes)
        srp_arl, srp_add = srp_characteristics(grid, q_nodes, ell, delta0)

    if kind is DetectorKind.SRP:
        arl = 1.0 / (1.0 - lambda_a)
        add0 = srp_add
        stadd_value = srp_add  # equalizer: the stationary delay equals the flat delay
    else:
        arl = extend_arl(model, xi, grid, ell, x0)
        add0 = extend_add0(model, xi, grid, delta0, x0)
        stadd_value = stadd(model, xi, grid, ell, delta0, psi, x0)

    profile = None
    if with_profile and kind is not DetectorKind.SRP:
        profile = delay_profile(
            model, xi, grid, k_pre, delta0, x0,
            nu_max=nu_max, tail_tolerance=tail_tolerance, nu_min=nu_min,
        )

    return OcSolution(
        model=model, kind=kind, grid=grid, x0=x0,
        ell=ell, delta0=delta0, psi=psi,
        arl=arl, add0=add0, stadd=stadd_value,
        profile=profile, lambda_a=lambda_a, q_nodes=q_nodes, mu_q=mu_q,
        srp_arl=srp_arl, srp_add=srp_add,
        k_pre=k_pre if keep_matrices else None,
        k_post=k_post if keep_matrices else None,
    )


def solve_oc(model: _model.GaussianChangeModel, kind: DetectorKind, threshold_a: float,
             n_panels: int = 2000, head_start: float | None = None,
             with_profile: bool = False, nu_max: int = 5000,
             tail_tolerance: float = 1e-4, nu_min: int = 0,
             with_quasi: bool | None = None, keep_matrices: bool = False,
             richardson: bool = False) -> OcSolution:
    """Solve the operating-characteristic bundle for one procedure.

    With ``richardson=True`` the scalars (ARL, delay at x0, stationary delay,
    quasi-stationary mean and the SRP characteristics) are extrapolated from
    solves at n_panels and 2*n_panels, assuming the second-order error of the
    nodal scheme; node arrays, profiles and matrices come from the fine grid.
    """
    kind = DetectorKind(kind)
    if with_quasi is None:
        with_quasi = kind is DetectorKind.SRP
    coarse = None
    if richardson:
        coarse = _solve_oc_single(
            model, kind, threshold_a, n_panels, head_start,
            False, nu_max, tail_tolerance, nu_min, with_quasi, False,
        )
        n_panels = 2 * n_panels
    fine = _solve_oc_single(
        model, kind, threshold_a, n_panels, head_start,
        with_profile, nu_max, tail_tolerance, nu_min, with_quasi, keep_matrices,
    )
    if coarse is None:
        return fine

    def extrapolate(f: float, c: float) -> float:
        return (4.0 * f - c) / 3.0

    gaps = []
    for name in ("arl", "add0", "stadd", "mu_q", "srp_arl", "srp_add"):
        f = getattr(fine, name)
        c = getattr(coarse, name)
        if f is None or c is None:
            continue
        gaps.append(abs(f - c) / abs(f))
        setattr(fine, name, extrapolate(f, c))
    if fine.lambda_a is not None and kind is DetectorKind.SRP:
        # keep the geometric-law identity ARL = 1/(1 - lambda) after extrapolation
        fine.lambda_a = 1.0 - 1.0 / fine.arl
    fine.convergence_gap = max(gaps) if gaps else None
    return fine
