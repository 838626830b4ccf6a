"""Direct transcription of the continuous-time control problem.

The horizon is split into mesh segments; on each segment the states are
degree-(N-1) polynomials pinned at Legendre-Gauss-Lobatto nodes and the
inputs are linear.  Forcing the polynomial derivative to equal the model
dynamics at the interior and terminal nodes turns the ODE into algebraic
defect constraints; the running cost becomes a Lobatto quadrature.  Segment
continuity is by shared variables: node values at segment boundaries are
single decision variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError

__all__ = [
    "lobatto_nodes", "LobattoBasis", "build_basis", "Mesh", "uniform_mesh",
    "refined_mesh", "DecisionLayout", "TranscribedNLP", "transcribe",
    "quadrature_cost", "eval_trajectory", "sample_trajectory",
]


# ---------------------------------------------------------------------------
# nodes and basis
# ---------------------------------------------------------------------------

def _legendre(m: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Legendre polynomial P_m with first and second derivatives on (-1, 1)."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(1, m):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    if m == 0:
        p, p_prev = np.ones_like(x), np.zeros_like(x)
    dp = m * (x * p - p_prev) / (x * x - 1.0)
    d2p = (2.0 * x * dp - m * (m + 1) * p) / (1.0 - x * x)
    return p, dp, d2p


def lobatto_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Legendre-Gauss-Lobatto nodes and quadrature weights mapped to [0, 1].

    Interior nodes are Newton-refined roots of the derivative of the
    Legendre polynomial of degree n-1 (residual below 1e-14); the weights
    sum to one.
    """
    if n < 2:
        raise DomainError(f"need at least 2 collocation nodes, got {n}")
    m = n - 1
    if n == 2:
        x = np.array([-1.0, 1.0])
    else:
        x_int = -np.cos(np.pi * np.arange(1, m) / m)
        for _ in range(100):
            _, dp, d2p = _legendre(m, x_int)
            step = dp / d2p
            x_int = x_int - step
            if np.max(np.abs(step)) < 1e-15:
                break
        x = np.concatenate([[-1.0], np.sort(x_int), [1.0]])
    p_end = _legendre_values(m, x)
    w = 2.0 / (n * m * p_end**2)
    return (x + 1.0) / 2.0, w / 2.0


def _legendre_values(m: int, x: np.ndarray) -> np.ndarray:
    """P_m values only (safe at x = +-1 where the derivative forms divide by zero)."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(1, m):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    if m == 0:
        p = np.ones_like(x)
    return p


@dataclass(frozen=True)
class LobattoBasis:
    """Collocation nodes on [0,1] with the matrices of the defect map.

    ``powers_matrix`` holds tau_z^j and ``derivative_matrix`` j*tau_z^(j-1)
    for the nodes tau_1..tau_{N-1} (the zero node contributes no row), with
    columns j = 1..N-1.  ``defect_matrix`` is their ratio, computed by a
    linear solve rather than explicit inversion; with it the N=2 defect map
    reduces to implicit Euler.

    ``augmented_defect_matrix`` is the (N-1) x N map of the degree-N
    collocation variant that also enforces the dynamics at tau_0; it is an
    order 2N-2 scheme (trapezoidal at N=2) and the default in
    :func:`transcribe` because of its far smaller per-segment error.
    """

    n: int
    nodes: np.ndarray
    weights: np.ndarray
    powers_matrix: np.ndarray
    derivative_matrix: np.ndarray
    defect_matrix: np.ndarray
    augmented_defect_matrix: np.ndarray
    condition_number: float


def build_basis(nodes: np.ndarray | int) -> LobattoBasis:
    """Build the collocation basis from nodes on [0,1] (or a node count)."""
    if isinstance(nodes, (int, np.integer)):
        nodes, weights = lobatto_nodes(int(nodes))
    else:
        nodes = np.asarray(nodes, dtype=float)
        _, weights = lobatto_nodes(len(nodes))
    n = len(nodes)
    if n < 2:
        raise DomainError("basis needs at least two nodes")
    if np.min(np.diff(np.sort(nodes))) < 1e-14:
        raise DomainError("duplicate collocation nodes")
    tau = nodes[1:]
    j = np.arange(1, n)
    powers = tau[:, None] ** j[None, :]
    derivs = j[None, :] * tau[:, None] ** (j[None, :] - 1)
    defect = np.linalg.solve(derivs.T, powers.T).T
    cond = float(np.linalg.cond(derivs))

    # degree-N variant collocated at every node including tau_0
    ja = np.arange(1, n + 1)
    powers_a = tau[:, None] ** ja[None, :]                          # (N-1, N)
    derivs_a = ja[None, :] * nodes[:, None] ** (ja[None, :] - 1)    # (N, N)
    defect_a = np.linalg.solve(derivs_a.T, powers_a.T).T            # (N-1, N)
    return LobattoBasis(n, nodes, weights, powers, derivs, defect, defect_a, cond)


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mesh:
    """Strictly increasing segment boundaries in seconds."""

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or len(b) < 2:
            raise DomainError("mesh needs at least two boundaries")
        if np.any(np.diff(b) <= 0):
            raise DomainError("mesh boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def t0(self) -> float:
        return float(self.boundaries[0])

    @property
    def tf(self) -> float:
        return float(self.boundaries[-1])

    @property
    def n_segments(self) -> int:
        return len(self.boundaries) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)


def uniform_mesh(t0: float, tf: float, segments: int) -> Mesh:
    return Mesh(np.linspace(t0, tf, segments + 1))


def refined_mesh(t0: float, tf: float, segments: int, refine_times=(),
                 window: float = 2520.0, pieces: int = 4) -> Mesh:
    """Uniform mesh with extra short segments after fast-transition instants.

    After each time in ``refine_times`` the window is split into ``pieces``
    geometric-ish short segments so piecewise-linear inputs can follow a
    filtered step; boundaries are deduplicated against the uniform grid.
    """
    base = list(np.linspace(t0, tf, segments + 1))
    extra: list[float] = []
    frac = np.linspace(0.0, 1.0, pieces + 1)[1:-1]
    for ts in refine_times:
        if not (t0 <= ts < tf):
            continue
        extra.append(ts)
        for fr in frac:
            tt = ts + fr**1.5 * window
            if tt < tf:
                extra.append(tt)
        if ts + window < tf:
            extra.append(ts + window)
    merged = np.array(sorted(set(base) | set(extra)))
    # drop boundaries that crowd each other (keep refinement resolution)
    keep = [merged[0]]
    min_gap = min(window / (4 * pieces), (tf - t0) / (20 * segments))
    for t in merged[1:]:
        if t - keep[-1] >= min_gap or t == merged[-1]:
            keep.append(t)
    return Mesh(np.array(keep))


# ---------------------------------------------------------------------------
# decision layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecisionLayout:
    """Bijective map between (segment, node, component) and the flat vector.

    States live at the global collocation points (segment boundaries are
    shared), inputs at segment boundaries with linear interpolation inside
    each segment.
    """

    n_states: int
    n_inputs: int
    n_segments: int
    n_nodes: int

    @property
    def points_per_segment(self) -> int:
        return self.n_nodes - 1

    @property
    def n_points(self) -> int:
        return self.n_segments * (self.n_nodes - 1) + 1

    @property
    def n_boundaries(self) -> int:
        return self.n_segments + 1

    @property
    def n_dec(self) -> int:
        return self.n_points * self.n_states + self.n_boundaries * self.n_inputs

    def point_index(self, segment: int, node: int) -> int:
        return segment * (self.n_nodes - 1) + node

    def state_index(self, segment: int, node: int, comp: int) -> int:
        return self.point_index(segment, node) * self.n_states + comp

    def input_index(self, boundary: int, comp: int) -> int:
        return self.n_points * self.n_states + boundary * self.n_inputs + comp

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(n_points, nx) states and (n_boundaries, nu) inputs views of z."""
        ns = self.n_points * self.n_states
        x = z[:ns].reshape(self.n_points, self.n_states)
        u = z[ns:].reshape(self.n_boundaries, self.n_inputs)
        return x, u

    def join(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(x, float).ravel(), np.asarray(u, float).ravel()])


def make_layout(mesh: Mesh, basis: LobattoBasis, n_states: int, n_inputs: int) -> DecisionLayout:
    return DecisionLayout(n_states, n_inputs, mesh.n_segments, basis.n)


# ---------------------------------------------------------------------------
# transcription
# ---------------------------------------------------------------------------

@dataclass
class TranscribedNLP:
    """Cost/constraint callbacks and bounds for one optimization horizon."""

    layout: DecisionLayout
    mesh: Mesh
    basis: LobattoBasis
    n_dec: int
    cost: Callable[[np.ndarray], float]
    cost_grad: Callable[[np.ndarray], np.ndarray]
    cons: Callable[[np.ndarray], np.ndarray]
    cons_jac: Callable[[np.ndarray], np.ndarray]
    cons_jac_rmatvec: Callable[[np.ndarray, np.ndarray], np.ndarray] | None
    cons_lb: np.ndarray
    cons_ub: np.ndarray
    var_lb: np.ndarray
    var_ub: np.ndarray
    var_scale: np.ndarray
    con_scale: np.ndarray
    cost_scale: float
    slices: dict = field(default_factory=dict)
    point_times: np.ndarray | None = None

    def margins(self, z: np.ndarray) -> dict:
        """Signed distance to the nearest bound per constraint family (scaled)."""
        c = self.cons(z)
        out = {}
        for name, sl in self.slices.items():
            if sl.stop == sl.start:
                continue
            lo = (c[sl] - self.cons_lb[sl]) / self.con_scale[sl]
            hi = (self.cons_ub[sl] - c[sl]) / self.con_scale[sl]
            out[name] = float(min(lo.min(), hi.min()))
        return out


def _fd_dynamics_jacobian(f, x, u, eps=1e-6):
    """Central per-node finite differences of f; used when no Jacobian is supplied."""
    n, nx = x.shape
    nu = u.shape[1]
    jx = np.empty((n, nx, nx))
    ju = np.empty((n, nx, nu))
    for c in range(nx):
        h = eps * np.maximum(1.0, np.abs(x[:, c]))
        xp = x.copy(); xp[:, c] += h
        xm = x.copy(); xm[:, c] -= h
        jx[:, :, c] = (f(xp, u) - f(xm, u)) / (2 * h)[:, None]
    for c in range(nu):
        h = eps * np.maximum(1.0, np.abs(u[:, c]))
        up = u.copy(); up[:, c] += h
        um = u.copy(); um[:, c] -= h
        ju[:, :, c] = (f(x, up) - f(x, um)) / (2 * h)[:, None]
    return jx, ju


def transcribe(f, mesh: Mesh, basis: LobattoBasis, layout: DecisionLayout, *,
               x_init: np.ndarray,
               state_bounds: tuple[np.ndarray, np.ndarray],
               input_bounds: tuple[np.ndarray, np.ndarray],
               rate_limits: tuple[np.ndarray, np.ndarray] | None = None,
               terminal: tuple[int, float, float] | None = None,
               power_fn=None, power_jac=None, power_target=None, power_band: float = 0.0,
               cost_integrand=None, cost_gradient=None,
               dynamics_jac=None, scheme: str = "lobatto",
               state_scale=None, input_scale=None, cost_scale: float = 1.0) -> TranscribedNLP:
    """Assemble the nonlinear program for one horizon.

    ``f(x, u)`` maps (n, nx) states and (n, nu) inputs to (n, nx) time
    derivatives.  Box bounds apply at every collocation point, rate limits
    to the per-segment linear input slopes, ``terminal`` pins component
    ``terminal[0]`` at the final point inside a two-sided window around its
    initial value, and the optional power band constrains ``power_fn(u)``
    at every collocation point.  The initial state is fixed by equating the
    first point's variable bounds.

    ``scheme`` selects the defect map: ``"lobatto"`` (default) collocates a
    degree-N polynomial at every node, ``"shifted"`` the degree-(N-1)
    polynomial at the nonzero nodes only (implicit Euler at N=2).
    """
    nx, nu = layout.n_states, layout.n_inputs
    M, N = layout.n_segments, layout.n_nodes
    npts = layout.n_points
    nb = layout.n_boundaries
    h = mesh.widths
    tau = basis.nodes
    if scheme == "lobatto":
        B = basis.augmented_defect_matrix  # (N-1, N)
        z_eval0 = 0
    elif scheme == "shifted":
        B = basis.defect_matrix            # (N-1, N-1)
        z_eval0 = 1
    else:
        raise DomainError(f"unknown defect scheme {scheme!r}")

    if dynamics_jac is None:
        dynamics_jac = lambda x, u: _fd_dynamics_jacobian(f, x, u)

    # interpolation of boundary inputs to collocation points
    pt_seg = np.minimum(np.arange(npts) // (N - 1), M - 1)
    pt_node = np.arange(npts) - pt_seg * (N - 1)
    pt_tau = tau[pt_node]
    w_hi = pt_tau
    w_lo = 1.0 - pt_tau
    t_pts = mesh.boundaries[pt_seg] + h[pt_seg] * pt_tau

    # quadrature weight accumulated per point
    omega = np.zeros(npts)
    for k in range(M):
        idx = k * (N - 1) + np.arange(N)
        omega[idx] += h[k] * basis.weights

    def point_inputs(u_b: np.ndarray) -> np.ndarray:
        return u_b[pt_seg] * w_lo[:, None] + u_b[pt_seg + 1] * w_hi[:, None]

    # constraint block layout
    n_def = M * (N - 1) * nx
    n_rate = M * nu if rate_limits is not None else 0
    n_term = 1 if terminal is not None else 0
    n_pow = npts if power_target is not None else 0
    n_con = n_def + n_rate + n_term + n_pow
    sl_def = slice(0, n_def)
    sl_rate = slice(n_def, n_def + n_rate)
    sl_term = slice(n_def + n_rate, n_def + n_rate + n_term)
    sl_pow = slice(n_def + n_rate + n_term, n_con)

    cons_lb = np.zeros(n_con)
    cons_ub = np.zeros(n_con)
    if rate_limits is not None:
        rl_lb, rl_ub = (np.asarray(a, float) for a in rate_limits)
        cons_lb[sl_rate] = np.tile(rl_lb, M)
        cons_ub[sl_rate] = np.tile(rl_ub, M)
    if terminal is not None:
        comp, lo, hi = terminal
        cons_lb[sl_term] = x_init[comp] + lo
        cons_ub[sl_term] = x_init[comp] + hi
    if power_target is not None:
        tgt = np.asarray([power_target(t) for t in t_pts], dtype=float)
        cons_lb[sl_pow] = tgt - power_band
        cons_ub[sl_pow] = tgt + power_band

    # variable bounds: state boxes at every point, input boxes at boundaries
    s_lb, s_ub = (np.asarray(a, float) for a in state_bounds)
    u_lb, u_ub = (np.asarray(a, float) for a in input_bounds)
    var_lb = np.concatenate([np.tile(s_lb, npts), np.tile(u_lb, nb)])
    var_ub = np.concatenate([np.tile(s_ub, npts), np.tile(u_ub, nb)])
    var_lb[:nx] = x_init  # pin the initial state
    var_ub[:nx] = x_init

    # gather matrix: SEG_PTS[k, z] = global point index of node z in segment k
    seg_pts = (np.arange(M)[:, None] * (N - 1) + np.arange(N)[None, :])
    n_eval = N - z_eval0
    ns = npts * nx

    def cons(z: np.ndarray) -> np.ndarray:
        x, u_b = layout.split(z)
        u_pts = point_inputs(u_b)
        fx = f(x, u_pts)
        out = np.empty(n_con)
        f_seg = fx[seg_pts[:, z_eval0:]]                        # (M, n_eval, nx)
        res = x[seg_pts[:, 1:]] - x[seg_pts[:, :1]] \
            - h[:, None, None] * np.einsum("rc,kcs->krs", B, f_seg)
        out[sl_def] = res.ravel()
        if n_rate:
            out[sl_rate] = ((u_b[1:] - u_b[:-1]) / h[:, None]).ravel()
        if n_term:
            out[sl_term] = x[-1, terminal[0]]
        if n_pow:
            out[sl_pow] = power_fn(u_pts)
        return out

    # constant part of the Jacobian: identities of the defect map, rate rows,
    # terminal row
    J_const = np.zeros((n_con, layout.n_dec))
    row_def = (np.arange(M)[:, None, None] * (N - 1) * nx
               + np.arange(N - 1)[None, :, None] * nx
               + np.arange(nx)[None, None, :])               # (M, N-1, nx)
    col_start = seg_pts[:, 0, None, None] * nx + np.arange(nx)[None, None, :]
    J_const[row_def.ravel(), np.broadcast_to(col_start, row_def.shape).ravel()] -= 1.0
    col_self = seg_pts[:, 1:, None] * nx + np.arange(nx)[None, None, :]
    J_const[row_def.ravel(), col_self.ravel()] += 1.0
    if n_rate:
        for k in range(M):
            for j in range(nu):
                r = sl_rate.start + k * nu + j
                J_const[r, ns + k * nu + j] = -1.0 / h[k]
                J_const[r, ns + (k + 1) * nu + j] = 1.0 / h[k]
    if n_term:
        J_const[sl_term.start, (npts - 1) * nx + terminal[0]] = 1.0

    # scatter indices for the dynamics-dependent defect blocks
    # rows (k, zr, a) x cols (k, zc, b): unique positions, safe for flat add
    rr = np.broadcast_to(row_def[:, :, None, :, None], (M, N - 1, n_eval, nx, nx))
    cc = np.broadcast_to((seg_pts[:, z_eval0:, None] * nx + np.arange(nx))[:, None, :, None, :],
                         (M, N - 1, n_eval, nx, nx))
    flat_x = (rr * layout.n_dec + cc).ravel()
    # input columns per segment (lo/hi boundary)
    col_u_lo = ns + (np.arange(M) * nu)[:, None] + np.arange(nu)[None, :]   # (M, nu)
    col_u_hi = col_u_lo + nu
    rr_u = np.broadcast_to(row_def[:, :, :, None], (M, N - 1, nx, nu))
    flat_u_lo = (rr_u * layout.n_dec
                 + np.broadcast_to(col_u_lo[:, None, None, :], rr_u.shape)).ravel()
    flat_u_hi = (rr_u * layout.n_dec
                 + np.broadcast_to(col_u_hi[:, None, None, :], rr_u.shape)).ravel()
    w_lo_eval = 1.0 - tau[z_eval0:]
    w_hi_eval = tau[z_eval0:]
    hB = -h[:, None, None] * B[None, :, :]                   # (M, N-1, n_eval)

    if n_pow:
        row_pow = sl_pow.start + np.arange(npts)
        colp_lo = ns + pt_seg[:, None] * nu + np.arange(nu)[None, :]
        colp_hi = colp_lo + nu
        flat_p_lo = (row_pow[:, None] * layout.n_dec + colp_lo).ravel()
        flat_p_hi = (row_pow[:, None] * layout.n_dec + colp_hi).ravel()

    def cons_jac(z: np.ndarray) -> np.ndarray:
        x, u_b = layout.split(z)
        u_pts = point_inputs(u_b)
        jx, ju = dynamics_jac(x, u_pts)
        J = J_const.copy()
        jx_seg = jx[seg_pts[:, z_eval0:]]                    # (M, n_eval, nx, nx)
        vals_x = hB[:, :, :, None, None] * jx_seg[:, None, :, :, :]
        J.ravel()[flat_x] += vals_x.ravel()
        ju_seg = ju[seg_pts[:, z_eval0:]]                    # (M, n_eval, nx, nu)
        # accumulate over evaluation nodes before scattering (shared columns)
        vals_lo = np.einsum("krc,c,kcaj->kraj", hB, w_lo_eval, ju_seg)
        vals_hi = np.einsum("krc,c,kcaj->kraj", hB, w_hi_eval, ju_seg)
        J.ravel()[flat_u_lo] += vals_lo.ravel()
        J.ravel()[flat_u_hi] += vals_hi.ravel()
        if n_pow:
            dp = power_jac(u_pts)                            # (npts, nu)
            J.ravel()[flat_p_lo] += (dp * w_lo[:, None]).ravel()
            J.ravel()[flat_p_hi] += (dp * w_hi[:, None]).ravel()
        return J

    def cons_jac_rmatvec(z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """J(z)^T v without materializing the Jacobian."""
        x, u_b = layout.split(z)
        u_pts = point_inputs(u_b)
        jx, ju = dynamics_jac(x, u_pts)
        out = np.zeros(layout.n_dec)
        out_x = out[:ns].reshape(npts, nx)
        out_u = out[ns:].reshape(nb, nu)

        v_def = v[sl_def].reshape(M, N - 1, nx)
        np.add.at(out_x, seg_pts[:, 0], -v_def.sum(axis=1))
        np.add.at(out_x, seg_pts[:, 1:].ravel(), v_def.reshape(-1, nx))
        # dynamics blocks: w[k,c,a] = sum_r hB[k,r,c] v[k,r,a]
        w = np.einsum("krc,kra->kca", hB, v_def)
        jx_seg = jx[seg_pts[:, z_eval0:]]
        np.add.at(out_x, seg_pts[:, z_eval0:].ravel(),
                  np.einsum("kca,kcab->kcb", w, jx_seg).reshape(-1, nx))
        ju_seg = ju[seg_pts[:, z_eval0:]]
        add_lo = np.einsum("kca,c,kcaj->kj", w, w_lo_eval, ju_seg)
        add_hi = np.einsum("kca,c,kcaj->kj", w, w_hi_eval, ju_seg)
        np.add.at(out_u, np.arange(M), add_lo)
        np.add.at(out_u, np.arange(M) + 1, add_hi)
        if n_rate:
            v_rate = v[sl_rate].reshape(M, nu)
            np.add.at(out_u, np.arange(M), -v_rate / h[:, None])
            np.add.at(out_u, np.arange(M) + 1, v_rate / h[:, None])
        if n_term:
            out_x[npts - 1, terminal[0]] += v[sl_term.start]
        if n_pow:
            dp = power_jac(u_pts)
            v_pow = v[sl_pow]
            np.add.at(out_u, pt_seg, dp * (v_pow * w_lo)[:, None])
            np.add.at(out_u, pt_seg + 1, dp * (v_pow * w_hi)[:, None])
        return out

    if cost_integrand is None:
        cost = lambda z: 0.0
        cost_grad = lambda z: np.zeros(layout.n_dec)
    else:
        def cost(z: np.ndarray) -> float:
            x, u_b = layout.split(z)
            u_pts = point_inputs(u_b)
            return float(np.sum(omega * cost_integrand(t_pts, x, u_pts)))

        def cost_grad(z: np.ndarray) -> np.ndarray:
            x, u_b = layout.split(z)
            u_pts = point_inputs(u_b)
            gx, gu = cost_gradient(t_pts, x, u_pts)  # (npts,nx), (npts,nu)
            g = np.zeros(layout.n_dec)
            g[:npts * nx] = (omega[:, None] * gx).ravel()
            gu_w = omega[:, None] * gu
            gb = np.zeros((layout.n_boundaries, layout.n_inputs))
            np.add.at(gb, pt_seg, gu_w * w_lo[:, None])
            np.add.at(gb, pt_seg + 1, gu_w * w_hi[:, None])
            g[npts * nx:] = gb.ravel()
            return g

    # scaling
    s_scale = np.ones(nx) if state_scale is None else np.asarray(state_scale, float)
    u_scale = np.ones(nu) if input_scale is None else np.asarray(input_scale, float)
    var_scale = np.concatenate([np.tile(s_scale, npts), np.tile(u_scale, nb)])
    con_scale = np.ones(n_con)
    con_scale[sl_def] = np.tile(np.tile(s_scale, N - 1), M)
    if n_rate and rate_limits is not None:
        rl_mag = np.maximum(np.abs(rl_lb), np.abs(rl_ub))
        con_scale[sl_rate] = np.tile(np.where(rl_mag > 0, rl_mag, 1.0), M)
    if n_term:
        con_scale[sl_term] = s_scale[terminal[0]]
    if n_pow:
        con_scale[sl_pow] = max(power_band, 1.0)

    return TranscribedNLP(
        layout=layout, mesh=mesh, basis=basis, n_dec=layout.n_dec,
        cost=cost, cost_grad=cost_grad, cons=cons, cons_jac=cons_jac,
        cons_jac_rmatvec=cons_jac_rmatvec,
        cons_lb=cons_lb, cons_ub=cons_ub, var_lb=var_lb, var_ub=var_ub,
        var_scale=var_scale, con_scale=con_scale, cost_scale=cost_scale,
        slices={"defect": sl_def, "rate": sl_rate, "terminal": sl_term, "power": sl_pow},
        point_times=t_pts)


# ---------------------------------------------------------------------------
# quadrature and evaluation
# ---------------------------------------------------------------------------

def quadrature_cost(integrand, mesh: Mesh, basis: LobattoBasis) -> float:
    """Lobatto quadrature of a time function over the mesh.

    Exact for polynomials up to degree 2N-3 on each segment.
    """
    total = 0.0
    for k in range(mesh.n_segments):
        t = mesh.boundaries[k] + mesh.widths[k] * basis.nodes
        vals = np.asarray([integrand(ti) for ti in t], dtype=float)
        total += mesh.widths[k] * float(np.dot(basis.weights, vals))
    return total


def eval_trajectory(solution: np.ndarray, layout: DecisionLayout, mesh: Mesh,
                    basis: LobattoBasis, t: float) -> tuple[np.ndarray, np.ndarray]:
    """States and inputs at time ``t`` from a solution vector.

    States come from the segment polynomial reconstructed through the node
    values; inputs from linear interpolation of the boundary values.
    """
    if not (mesh.t0 - 1e-9 <= t <= mesh.tf + 1e-9):
        raise DomainError(f"t={t} outside the horizon [{mesh.t0}, {mesh.tf}]")
    t = min(max(t, mesh.t0), mesh.tf)
    k = int(np.searchsorted(mesh.boundaries, t, side="right") - 1)
    k = min(max(k, 0), mesh.n_segments - 1)
    tau = (t - mesh.boundaries[k]) / mesh.widths[k]

    x, u_b = layout.split(np.asarray(solution, dtype=float))
    N = basis.n
    g0 = k * (N - 1)
    x0 = x[g0]
    seg = x[g0 + 1: g0 + N]
    coeffs = np.linalg.solve(basis.powers_matrix, seg - x0)  # (N-1, nx)
    powers = tau ** np.arange(1, N)
    xt = x0 + powers @ coeffs
    ut = u_b[k] * (1 - tau) + u_b[k + 1] * tau
    return xt, ut


def sample_trajectory(solution: np.ndarray, layout: DecisionLayout, mesh: Mesh,
                      basis: LobattoBasis, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`eval_trajectory` over an array of times."""
    xs, us = [], []
    for t in np.asarray(times, dtype=float):
        xt, ut = eval_trajectory(solution, layout, mesh, basis, t)
        xs.append(xt)
        us.append(ut)
    return np.array(xs), np.array(us)
