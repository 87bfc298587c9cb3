"""Independent reference computations used by the tests.

Everything here deliberately avoids the code paths under test: binomial
tails are evaluated in arbitrary precision with mpmath, QP optima come from
exhaustive active-set enumeration, discretization is cross-checked with a
fine-step Euler integrator built directly from the config dictionary, and
true violation probabilities are computed by enumerating a truncated
Poisson support.
"""

from __future__ import annotations

import itertools

import mpmath as mp
import numpy as np

mp.mp.dps = 50


# ---------------------------------------------------------------------------
# binomial tails in arbitrary precision
# ---------------------------------------------------------------------------

def mp_binomial_tail(n: int, k_max: int, eps: float):
    """sum_{j=0}^{k_max} C(n,j) eps^j (1-eps)^(n-j) as an mpmath float."""
    e = mp.mpf(eps)
    return mp.fsum(mp.binomial(n, j) * e**j * (1 - e) ** (n - j) for j in range(min(k_max, n) + 1))


def mp_log_binomial_tail(n: int, k_max: int, eps: float) -> float:
    return float(mp.log(mp_binomial_tail(n, k_max, eps)))


def mp_log_beta_j(eps: float, beta: float, d: int, j: int, M_j: int) -> float:
    e = mp.mpf(eps)
    s = mp.fsum(mp.binomial(m, j) * (1 - e) ** (m - j) for m in range(j, M_j + 1))
    return float(mp.log(mp.mpf(beta)) - mp.log(d + 1) - mp.log(M_j + 1) + mp.log(s))


# ---------------------------------------------------------------------------
# exhaustive QP optimum by active-set enumeration
# ---------------------------------------------------------------------------

def brute_force_qp(quad: np.ndarray, lin: np.ndarray, A: np.ndarray, b: np.ndarray,
                   feas_tol: float = 1e-9):
    """Global optimum of min x'quad x + lin'x s.t. A x <= b by projecting the
    objective onto every candidate active set of size <= d.

    For a strictly convex QP the optimum satisfies the KKT system of some
    linearly independent subset of rows; enumerating all subsets and keeping
    the feasible, dual-feasible candidates is exact. Returns (cost, x) or
    (None, None) when no candidate is feasible (infeasible program).
    """
    d = quad.shape[0]
    n = A.shape[0]
    P = 2.0 * quad
    best_cost, best_x = None, None
    for k in range(0, d + 1):
        subsets = list(itertools.combinations(range(n), k))
        if not subsets:
            continue
        idx = np.array(subsets, dtype=int)  # (n_sub, k)
        n_sub = idx.shape[0]
        kkt = np.zeros((n_sub, d + k, d + k))
        kkt[:, :d, :d] = P
        if k:
            A_S = A[idx]  # (n_sub, k, d)
            kkt[:, :d, d:] = np.transpose(A_S, (0, 2, 1))
            kkt[:, d:, :d] = A_S
        rhs = np.concatenate(
            [np.tile(-lin, (n_sub, 1)), b[idx] if k else np.zeros((n_sub, 0))], axis=1
        )
        dets = np.linalg.det(kkt)
        ok = np.abs(dets) > 1e-10 * max(1.0, float(np.abs(kkt).max()) ** (d + k))
        if not ok.any():
            continue
        sol = np.linalg.solve(kkt[ok], rhs[ok][..., None])[..., 0]
        xs = sol[:, :d]
        lams = sol[:, d:]
        feas = (xs @ A.T - b[None, :] <= feas_tol).all(axis=1)
        dual_ok = (lams >= -1e-9).all(axis=1) if k else np.ones(xs.shape[0], dtype=bool)
        for x in xs[feas & dual_ok]:
            cost = float(x @ quad @ x + lin @ x)
            if best_cost is None or cost < best_cost - 1e-15:
                best_cost, best_x = cost, x
    return best_cost, best_x


# ---------------------------------------------------------------------------
# fine-step Euler discretization of the RC network
# ---------------------------------------------------------------------------

def euler_discretize(config_dict: dict, n_substeps: int = 50_000):
    """Discretize the RC network by integrating the continuous ODE with
    `n_substeps` forward-Euler steps over one step length, Richardson-
    extrapolated with a half-step pass to kill the O(h) error.

    The continuous system is assembled directly from the raw config dict,
    independent of the package's construction code. Returns
    (A, B_u, B_delta, forcing) of the one-step map
    x+ = A x + B_u u + B_delta delta + forcing.
    """
    zones = config_dict["zones"]
    walls = config_dict["resistances"]["exterior_walls"]
    pairs = config_dict["resistances"]["interzone"]
    nz, nw = len(zones), len(walls)
    n = nz + nw
    name_to_i = {z["name"]: i for i, z in enumerate(zones)}
    cap = np.array([z["capacitance"] for z in zones] + [w["capacitance"] for w in walls])

    A_c = np.zeros((n, n))
    forcing_c = np.zeros(n)
    for p in pairs:
        ia, ib = name_to_i[p["zone_a"]], name_to_i[p["zone_b"]]
        g = 1.0 / p["r"]
        A_c[ia, ia] -= g / cap[ia]
        A_c[ia, ib] += g / cap[ia]
        A_c[ib, ib] -= g / cap[ib]
        A_c[ib, ia] += g / cap[ib]
    for k, w in enumerate(walls):
        iw, iz = nz + k, name_to_i[w["zone"]]
        g_in, g_out = 1.0 / w["r_inner"], 1.0 / w["r_outer"]
        A_c[iz, iz] -= g_in / cap[iz]
        A_c[iz, iw] += g_in / cap[iz]
        A_c[iw, iw] -= (g_in + g_out) / cap[iw]
        A_c[iw, iz] += g_in / cap[iw]
        forcing_c[iw] += g_out * config_dict["ambient_temp_c"] / cap[iw]

    areas = np.array([z["floor_area_m2"] for z in zones])
    windows = np.array([z["window_area_m2"] for z in zones])
    solar = config_dict["solar_flux_w_m2"]
    forcing_c[:nz] += solar * windows / cap[:nz]

    B_u_c = np.zeros((n, 3))
    B_u_c[:nz, 0] = -solar * windows / cap[:nz]
    B_u_c[:nz, 1] = areas / cap[:nz]
    B_u_c[:nz, 2] = -areas / cap[:nz]
    B_d_c = np.zeros((n, nz))
    B_d_c[:nz, :] = np.diag(areas / cap[:nz])

    dt = config_dict["step_minutes"] * 60.0

    def integrate(substeps: int) -> np.ndarray:
        # probe columns: n states, 3 inputs, nz disturbances, 1 forcing
        X = np.hstack([np.eye(n), np.zeros((n, 3 + nz + 1))])
        drive = np.hstack(
            [np.zeros((n, n)), B_u_c, B_d_c, forcing_c[:, None]]
        )
        h = dt / substeps
        for _ in range(substeps):
            X = X + h * (A_c @ X + drive)
        return X

    coarse = integrate(n_substeps)
    fine = integrate(2 * n_substeps)
    X = 2.0 * fine - coarse
    return X[:, :n], X[:, n : n + 3], X[:, n + 3 : n + 3 + nz], X[:, -1]


# ---------------------------------------------------------------------------
# exhaustive truncated-Poisson violation probability
# ---------------------------------------------------------------------------

def true_violation_probability(
    U: np.ndarray,
    lifted,
    t_max_c: float,
    flux_per_person: np.ndarray,
    lam: float,
    k_max: int = 16,
) -> float:
    """Exact violation probability of schedule U for constant-over-horizon
    per-zone Poisson occupancy, by enumerating all count combinations up to
    k_max per zone. The neglected tail mass is added (worst case: every
    neglected realization violates), which is negligible for k_max >> lam.
    """
    nz = lifted.n_zones
    M = lifted.horizon_M
    counts = np.arange(k_max + 1)
    log_p = counts * np.log(lam) - lam - np.array([float(mp.log(mp.factorial(k))) for k in counts])
    p = np.exp(log_p)
    tail = 1.0 - p.sum()

    grids = np.array(list(itertools.product(counts, repeat=nz)))  # (n_combo, nz)
    probs = np.prod(p[grids], axis=1)
    flux_steps = grids * flux_per_person[None, :]  # (n_combo, nz) W/m^2 held over horizon
    fluxes = np.tile(flux_steps, (1, M))
    zr = lifted.zone_rows()
    temps = (lifted.F @ lifted.x0 + lifted.offset + lifted.G @ U)[zr][None, :] + fluxes @ lifted.H[
        zr, :
    ].T
    violated = (temps > t_max_c + 1e-9).any(axis=1)
    # any zone exceeding k_max counts as a violation (upper bound)
    return float(probs[violated].sum() + (1.0 - (1.0 - tail) ** nz))
