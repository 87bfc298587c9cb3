"""Stylized multi-zone building: RC thermal network, exact discretization,
and horizon-lifted prediction matrices.

The building is a first-order RC network with one air node per zone and one
lumped wall node per exterior wall. Zones exchange heat through fixed
inter-zone resistances; each exterior wall couples its zone to the ambient
node through an inner and an outer resistance. Three building-wide inputs
act on every zone air node:

    u1  blind position (fraction, reduces the constant solar gain),
    u2  heating flux in W/m^2 (applied over the zone floor area),
    u3  cooling flux magnitude in W/m^2 (enters with a negative sign).

The uncertain disturbance is one occupancy heat-flux channel per zone
(W/m^2 over the floor area). Ambient temperature and solar flux are known
constants; they are kept out of the uncertain channels and folded into a
fixed affine forcing term instead.

Discretization is exact (matrix exponential of the augmented system) at the
configured step length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .errors import StabilityError, ValidationError

N_INPUTS = 3  # blind fraction, heating flux, cooling flux


@dataclass(frozen=True)
class ZoneSpec:
    name: str
    floor_area_m2: float
    capacitance: float  # J/K, air node plus fast-responding contents
    window_area_m2: float


@dataclass(frozen=True)
class ExteriorWallSpec:
    zone: str
    r_inner: float  # K/W, zone air to wall node
    r_outer: float  # K/W, wall node to ambient
    capacitance: float  # J/K


@dataclass(frozen=True)
class InterzoneSpec:
    zone_a: str
    zone_b: str
    r: float  # K/W, direct air-to-air coupling


@dataclass(frozen=True)
class BuildingConfig:
    zones: tuple[ZoneSpec, ...]
    exterior_walls: tuple[ExteriorWallSpec, ...]
    interzone: tuple[InterzoneSpec, ...]
    step_minutes: float
    ambient_temp_c: float
    solar_flux_w_m2: float

    @staticmethod
    def from_dict(raw: dict) -> "BuildingConfig":
        """Parse and validate the documented JSON schema; unknown fields are
        rejected so that typos fail loudly."""
        known_top = {
            "zones",
            "resistances",
            "step_minutes",
            "ambient_temp_c",
            "solar_flux_w_m2",
        }
        _reject_unknown(raw, known_top, "building config")
        for key in known_top:
            if key not in raw:
                raise ValidationError(f"building config missing field '{key}'")

        zones = []
        for i, z in enumerate(raw["zones"]):
            _reject_unknown(
                z, {"name", "floor_area_m2", "capacitance", "window_area_m2"}, f"zones[{i}]"
            )
            zones.append(
                ZoneSpec(
                    name=str(z["name"]),
                    floor_area_m2=_positive(z, "floor_area_m2", f"zones[{i}]"),
                    capacitance=_positive(z, "capacitance", f"zones[{i}]"),
                    window_area_m2=_positive(z, "window_area_m2", f"zones[{i}]"),
                )
            )
        names = [z.name for z in zones]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate zone names in building config: {names}")

        res = raw["resistances"]
        _reject_unknown(res, {"exterior_walls", "interzone"}, "resistances")
        walls = []
        for i, w in enumerate(res.get("exterior_walls", [])):
            _reject_unknown(
                w,
                {"zone", "r_inner", "r_outer", "capacitance"},
                f"resistances.exterior_walls[{i}]",
            )
            walls.append(
                ExteriorWallSpec(
                    zone=str(w["zone"]),
                    r_inner=_positive(w, "r_inner", f"exterior_walls[{i}]"),
                    r_outer=_positive(w, "r_outer", f"exterior_walls[{i}]"),
                    capacitance=_positive(w, "capacitance", f"exterior_walls[{i}]"),
                )
            )
        pairs = []
        for i, p in enumerate(res.get("interzone", [])):
            _reject_unknown(p, {"zone_a", "zone_b", "r"}, f"resistances.interzone[{i}]")
            pairs.append(
                InterzoneSpec(
                    zone_a=str(p["zone_a"]),
                    zone_b=str(p["zone_b"]),
                    r=_positive(p, "r", f"interzone[{i}]"),
                )
            )
        for w in walls:
            if w.zone not in names:
                raise ValidationError(f"exterior wall references unknown zone '{w.zone}'")
        for p in pairs:
            for z in (p.zone_a, p.zone_b):
                if z not in names:
                    raise ValidationError(f"interzone coupling references unknown zone '{z}'")
            if p.zone_a == p.zone_b:
                raise ValidationError(f"interzone coupling connects '{p.zone_a}' to itself")

        step_minutes = raw["step_minutes"]
        if not step_minutes > 0:
            raise ValidationError(f"step_minutes must be positive, got {step_minutes}")
        return BuildingConfig(
            zones=tuple(zones),
            exterior_walls=tuple(walls),
            interzone=tuple(pairs),
            step_minutes=float(step_minutes),
            ambient_temp_c=float(raw["ambient_temp_c"]),
            solar_flux_w_m2=float(raw["solar_flux_w_m2"]),
        )

    @staticmethod
    def from_json(path: str | Path) -> "BuildingConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return BuildingConfig.from_dict(json.load(fh))


def _positive(obj: dict, field: str, where: str) -> float:
    if field not in obj:
        raise ValidationError(f"{where} missing field '{field}'")
    value = float(obj[field])
    if not value > 0:
        raise ValidationError(f"{where}.{field} must be positive, got {value}")
    return value


def _reject_unknown(obj: dict, known: set, where: str) -> None:
    unknown = set(obj) - known
    if unknown:
        raise ValidationError(f"unknown field(s) {sorted(unknown)} in {where}")


@dataclass(frozen=True)
class BuildingModel:
    """Discrete-time model x+ = A x + B_u u + B_delta delta (+ known forcing).

    `B_delta` has one column per uncertain occupancy channel (one per zone).
    The constant ambient/solar drive is kept separate in `known_forcing`,
    the per-step state increment at u = 0, so the pure-linear map sends
    zero to zero.
    """

    A: np.ndarray
    B_u: np.ndarray
    B_delta: np.ndarray
    known_forcing: np.ndarray
    state_dim: int
    zone_state_indices: tuple[int, ...]
    n_inputs: int
    ambient_temp: float
    solar_flux: float
    zone_names: tuple[str, ...]
    zone_floor_areas: tuple[float, ...]
    step_minutes: float

    @property
    def n_zones(self) -> int:
        return len(self.zone_state_indices)


@dataclass(frozen=True)
class LiftedDynamics:
    """Horizon-stacked affine map X = F x0 + G U + H delta + offset.

    X stacks x_1 .. x_M; U stacks the M per-step input vectors and delta
    the M per-step occupancy-flux vectors. `offset` is the accumulated
    known ambient/solar forcing. G and H are block lower-triangular.
    """

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    offset: np.ndarray
    x0: np.ndarray
    horizon_M: int
    step_minutes: float
    state_dim: int
    zone_state_indices: tuple[int, ...]
    n_inputs: int

    @property
    def n_zones(self) -> int:
        return len(self.zone_state_indices)

    @property
    def n_decisions(self) -> int:
        return self.n_inputs * self.horizon_M

    def zone_rows(self) -> np.ndarray:
        """Indices into stacked X of the zone air temperatures, ordered
        step-major then zone: row k * n_zones + z is (step k, zone z)."""
        k = np.arange(self.horizon_M)
        zi = np.asarray(self.zone_state_indices)
        return (k[:, None] * self.state_dim + zi[None, :]).ravel()

    def zone_trajectories(self, X: np.ndarray) -> np.ndarray:
        """Extract per-zone temperature series from a stacked trajectory;
        returns shape (n_zones, M)."""
        X = np.asarray(X, dtype=float)
        if X.shape != (self.state_dim * self.horizon_M,):
            raise ValidationError(
                f"trajectory must have length {self.state_dim * self.horizon_M}, got {X.shape}"
            )
        return X[self.zone_rows()].reshape(self.horizon_M, self.n_zones).T


def build_stylized_building(config: BuildingConfig) -> BuildingModel:
    """Assemble and exactly discretize the RC network described by `config`."""
    zones = config.zones
    nz = len(zones)
    nw = len(config.exterior_walls)
    n = nz + nw
    zone_index = {z.name: i for i, z in enumerate(zones)}

    cap = np.array([z.capacitance for z in zones] + [w.capacitance for w in config.exterior_walls])
    A_c = np.zeros((n, n))
    # inter-zone couplings
    for p in config.interzone:
        ia, ib = zone_index[p.zone_a], zone_index[p.zone_b]
        g = 1.0 / p.r
        A_c[ia, ia] -= g / cap[ia]
        A_c[ia, ib] += g / cap[ia]
        A_c[ib, ib] -= g / cap[ib]
        A_c[ib, ia] += g / cap[ib]
    # exterior walls: zone <-> wall <-> ambient
    amb_col = np.zeros(n)  # multiplies the ambient temperature (degC)
    for k, w in enumerate(config.exterior_walls):
        iw = nz + k
        iz = zone_index[w.zone]
        g_in = 1.0 / w.r_inner
        g_out = 1.0 / w.r_outer
        A_c[iz, iz] -= g_in / cap[iz]
        A_c[iz, iw] += g_in / cap[iz]
        A_c[iw, iw] -= (g_in + g_out) / cap[iw]
        A_c[iw, iz] += g_in / cap[iw]
        amb_col[iw] += g_out / cap[iw]

    areas = np.array([z.floor_area_m2 for z in zones])
    windows = np.array([z.window_area_m2 for z in zones])
    sol_col = np.zeros(n)  # multiplies the solar flux (W/m^2)
    sol_col[:nz] = windows / cap[:nz]

    B_u_c = np.zeros((n, N_INPUTS))
    B_u_c[:nz, 0] = -config.solar_flux_w_m2 * windows / cap[:nz]  # blinds cut solar gain
    B_u_c[:nz, 1] = areas / cap[:nz]  # heating flux
    B_u_c[:nz, 2] = -areas / cap[:nz]  # cooling flux magnitude
    B_delta_c = np.zeros((n, nz))
    B_delta_c[:nz, :] = np.diag(areas / cap[:nz])

    # exact zero-order-hold discretization of the augmented system
    dt = config.step_minutes * 60.0
    B_all_c = np.hstack([B_u_c, B_delta_c, amb_col[:, None], sol_col[:, None]])
    m = B_all_c.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_all_c
    phi = expm(aug * dt)
    A = phi[:n, :n]
    B_all = phi[:n, n:]
    B_u = B_all[:, :N_INPUTS]
    B_delta = B_all[:, N_INPUTS : N_INPUTS + nz]
    known_forcing = B_all[:, N_INPUTS + nz] * config.ambient_temp_c
    known_forcing = known_forcing + B_all[:, N_INPUTS + nz + 1] * config.solar_flux_w_m2

    rho = max(abs(np.linalg.eigvals(A)))
    if rho >= 1.0:
        raise StabilityError(
            f"discretized state matrix has spectral radius {rho:.6f} >= 1; "
            "check resistances and capacitances"
        )

    return BuildingModel(
        A=A,
        B_u=B_u,
        B_delta=B_delta,
        known_forcing=known_forcing,
        state_dim=n,
        zone_state_indices=tuple(range(nz)),
        n_inputs=N_INPUTS,
        ambient_temp=config.ambient_temp_c,
        solar_flux=config.solar_flux_w_m2,
        zone_names=tuple(z.name for z in zones),
        zone_floor_areas=tuple(areas),
        step_minutes=config.step_minutes,
    )


def step_dynamics(
    model: BuildingModel,
    x: np.ndarray,
    u: np.ndarray,
    delta: np.ndarray,
    include_known_forcing: bool = False,
) -> np.ndarray:
    """One dynamics step A x + B_u u + B_delta delta.

    The constant ambient/solar drive is added only when
    `include_known_forcing` is set; the default map is purely linear.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if x.shape != (model.state_dim,):
        raise ValidationError(f"state must have shape ({model.state_dim},), got {x.shape}")
    if u.shape != (model.n_inputs,):
        raise ValidationError(f"input must have shape ({model.n_inputs},), got {u.shape}")
    if delta.shape != (model.n_zones,):
        raise ValidationError(f"disturbance must have shape ({model.n_zones},), got {delta.shape}")
    x_next = model.A @ x + model.B_u @ u + model.B_delta @ delta
    if include_known_forcing:
        x_next = x_next + model.known_forcing
    return x_next


def lift_dynamics(model: BuildingModel, M: int, x0: np.ndarray) -> LiftedDynamics:
    """Stack M steps of the dynamics into X = F x0 + G U + H delta + offset."""
    if M < 1:
        raise ValidationError(f"horizon must be >= 1, got {M}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.state_dim,):
        raise ValidationError(f"x0 must have shape ({model.state_dim},), got {x0.shape}")

    n = model.state_dim
    nu = model.n_inputs
    nd = model.n_zones
    F = np.zeros((n * M, n))
    G = np.zeros((n * M, nu * M))
    H = np.zeros((n * M, nd * M))
    offset = np.zeros(n * M)

    powers = [np.eye(n)]
    for _ in range(M):
        powers.append(model.A @ powers[-1])

    acc = np.zeros(n)
    for k in range(M):
        F[k * n : (k + 1) * n, :] = powers[k + 1]
        acc = model.A @ acc + model.known_forcing
        offset[k * n : (k + 1) * n] = acc
        for l in range(k + 1):
            G[k * n : (k + 1) * n, l * nu : (l + 1) * nu] = powers[k - l] @ model.B_u
            H[k * n : (k + 1) * n, l * nd : (l + 1) * nd] = powers[k - l] @ model.B_delta

    return LiftedDynamics(
        F=F,
        G=G,
        H=H,
        offset=offset,
        x0=x0,
        horizon_M=M,
        step_minutes=model.step_minutes,
        state_dim=n,
        zone_state_indices=model.zone_state_indices,
        n_inputs=nu,
    )


def simulate_trajectory(lifted: LiftedDynamics, U: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Evaluate the lifted map for stacked inputs and disturbances."""
    U = np.asarray(U, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if U.shape != (lifted.G.shape[1],):
        raise ValidationError(f"U must have shape ({lifted.G.shape[1]},), got {U.shape}")
    if delta.shape != (lifted.H.shape[1],):
        raise ValidationError(f"delta must have shape ({lifted.H.shape[1]},), got {delta.shape}")
    return lifted.F @ lifted.x0 + lifted.G @ U + lifted.H @ delta + lifted.offset


def default_building_config() -> BuildingConfig:
    """The shipped three-zone building (two identical bedrooms, one living
    room), 15-minute step, summer ambient."""
    return BuildingConfig.from_json(default_config_path())


def default_config_path() -> Path:
    return Path(__file__).parent / "configs" / "building_default.json"
