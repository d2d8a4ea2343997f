"""
Platoon Stability Module
Car-following (FVD/MOV) dynamics with a feedback delay, the critical delay for
non-oscillatory headway convergence, and the gap-acceptance model that sets the
rate of safety-critical packets
"""

import logging
import math
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import optimize, special

from app.core.errors import DivergenceError, DomainError
from app.models.results import PlatoonTrajectory, StabilityResult
from app.models.scenario import FvdParams, GapAcceptanceModel, PlatoonConfig

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
DEFAULT_KAPPA = 0.1
KAPPA_STDDEV = 0.1

LeadProfile = Callable[[float], Tuple[float, float, float]]


def bovf(y, p: FvdParams):
    """Bando optimal velocity V(y) = V0 (tanh((y - y_m)/y~) + tanh(y_m/y~))"""
    return p.v0 * (np.tanh((np.asarray(y) - p.y_m) / p.y_tilde) + math.tanh(p.y_m / p.y_tilde))


def bovf_slope(y, p: FvdParams):
    """V'(y) = (V0 / y~) sech^2((y - y_m) / y~)"""
    return p.v0 / p.y_tilde / np.cosh((np.asarray(y) - p.y_m) / p.y_tilde) ** 2


def equilibrium_speed(y_star: float, p: FvdParams) -> float:
    return float(bovf(y_star, p))


def equilibrium_headway(speed: float, p: FvdParams) -> float:
    """Headway at which the optimal velocity equals `speed`"""
    offset = math.tanh(p.y_m / p.y_tilde)
    level = speed / p.v0 - offset
    if not -1.0 < level < 1.0:
        raise DomainError(f"speed {speed} m/s is outside the range of the optimal velocity function")
    headway = p.y_m + p.y_tilde * math.atanh(level)
    if headway < 0:
        raise DomainError(f"speed {speed} m/s corresponds to a negative headway")
    return headway


def contending_stations(y_star: float, comm_range: float) -> int:
    """Vehicles within contention range of a platoon with headway y_star"""
    if y_star <= 0:
        raise DomainError(f"headway must be positive, got {y_star}")
    return int(math.floor(comm_range / y_star)) + 1


def critical_delay(p: FvdParams, y_star: float) -> StabilityResult:
    """
    Largest feedback delay for which the linearized platoon still has a real root at sigma

    Args:
        p: Car-following parameters
        y_star: Equilibrium headway in m

    Returns:
        StabilityResult: d~, both candidate roots, the log argument and tau_C (seconds);
        tau_C is non-positive when the log argument does not exceed 1

    Raises:
        DomainError: V'(y*) <= 0, a + l <= 0 or a non-positive log argument
    """
    gain = p.a + p.l
    if gain <= 0:
        raise DomainError(f"a + l must be positive, got {gain}")
    v_prime = float(bovf_slope(y_star, p))
    if v_prime <= 0:
        raise DomainError(f"V'(y*) must be positive, got {v_prime} at y*={y_star}")

    d_tilde = p.a * v_prime / gain
    sigma = d_tilde * (-2.0 - SQRT2)
    other = d_tilde * (-2.0 + SQRT2)
    # e^{-sigma tau} = -sigma^2 / ((a + l) sigma + a V') at the real root s = sigma
    log_argument = -sigma ** 2 / (gain * sigma + p.a * v_prime)
    if log_argument <= 0:
        raise DomainError(f"log argument {log_argument:.6g} of the critical delay is not positive")
    tau_c = math.log(log_argument) / (d_tilde * (2.0 + SQRT2))
    if tau_c <= 0:
        logger.warning(f"Non-positive critical delay {tau_c:.4g}s at y*={y_star} m "
                       f"(log argument {log_argument:.4g})")
    return StabilityResult(y_star=y_star, v_prime=v_prime, d_tilde=d_tilde, sigma_root=sigma,
                           sigma_other=other, log_argument=log_argument, tau_c=tau_c)


def draw_kappa(kappa_mode: str, rng: Optional[np.random.Generator] = None) -> float:
    """
    Communication share of the feedback delay budget

    Deterministic mode gives 0.1; sampled mode draws from a normal law with mean 0.1
    and variance 0.01, rejecting draws outside (0, 1].
    """
    if kappa_mode == "deterministic":
        return DEFAULT_KAPPA
    if kappa_mode != "sampled":
        raise DomainError(f"unknown kappa mode '{kappa_mode}'")
    rng = rng or np.random.default_rng()
    while True:
        kappa = float(rng.normal(DEFAULT_KAPPA, KAPPA_STDDEV))
        if 0.0 < kappa <= 1.0:
            return kappa


def comm_delay_budget(tau_c: float, kappa_mode: str = "deterministic", seed: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> float:
    """tau_cr = kappa * tau_C"""
    if tau_c <= 0:
        raise DomainError(f"critical delay must be positive, got {tau_c}")
    if rng is None and seed is not None:
        rng = np.random.default_rng(seed)
    return draw_kappa(kappa_mode, rng) * tau_c


def gap_acceptance(y_star: float, speed: float, g: GapAcceptanceModel) -> float:
    """
    Probability that a two-wheeler accepts the gap in front of a platoon car

    Args:
        y_star: Equilibrium headway in m
        speed: Car speed in m/s
        g: Gap-acceptance parameters

    Returns:
        float: Logistic e^u / (1 + e^u) with u = alpha + gamma y*/speed, or the
        expression exactly as printed when `strict_printed` is set
    """
    if speed <= 0:
        raise DomainError(f"speed must be positive, got {speed}")
    time_gap = y_star / speed
    u = g.alpha + g.gamma * time_gap
    if not g.strict_printed:
        return float(special.expit(u))
    probability = math.exp(g.alpha + g.gamma * time_gap * special.expit(-u))
    if probability > 1.0:
        raise DomainError(f"printed gap-acceptance expression gives {probability:.4g} > 1")
    return probability


def lambda0_from_gap(p_accept: float, g: GapAcceptanceModel) -> float:
    """AC0 packet rate from the gap-acceptance probability (linear or logarithmic mapping)"""
    if not 0.0 <= p_accept <= 1.0:
        raise DomainError(f"acceptance probability {p_accept} is not a probability")
    eta = g.effective_eta
    if g.mapping == "linear":
        return eta * p_accept
    if p_accept >= 1.0:
        raise DomainError("logarithmic rate mapping is undefined for acceptance probability 1")
    return 1.0 - eta * math.log1p(-p_accept)


def stability_analysis(config: PlatoonConfig, y_star: float,
                       rng: Optional[np.random.Generator] = None) -> StabilityResult:
    """Critical delay, communication budget and packet rate for one headway"""
    result = critical_delay(config.fvd, y_star)
    kappa = draw_kappa(config.kappa_mode, rng)
    tau_cr = kappa * result.tau_c if result.tau_c > 0 else 0.0
    p_accept = gap_acceptance(y_star, equilibrium_speed(y_star, config.fvd), config.gap)
    return StabilityResult(**{**result.to_dict(), "tau_cr": tau_cr, "kappa": kappa,
                              "p_accept": p_accept, "lambda0": lambda0_from_gap(p_accept, config.gap)})


def characteristic_function(s, p: FvdParams, y_star: float, tau: float):
    """s^2 + (a + l) s e^{-s tau} + a V'(y*) e^{-s tau}"""
    s = np.asarray(s)
    v_prime = float(bovf_slope(y_star, p))
    return s ** 2 + ((p.a + p.l) * s + p.a * v_prime) * np.exp(-s * tau)


def characteristic_roots(p: FvdParams, y_star: float, tau: float, count: int = 6,
                         seeds: int = 48) -> np.ndarray:
    """
    Rightmost roots of the characteristic equation of the linearized platoon

    Real roots come from a sign-change scan of s^2 e^{s tau} + (a + l) s + a V' on the
    negative axis refined with brentq; complex roots from Newton iterations started on a
    grid of seeds in the upper half plane. Roots are returned by decreasing real part,
    one representative per conjugate pair.
    """
    gain = p.a + p.l
    stiffness = p.a * float(bovf_slope(y_star, p))
    if tau == 0:
        roots = np.roots([1.0, gain, stiffness]).astype(complex)
        roots = roots[roots.imag >= 0] if np.any(roots.imag > 0) else roots
        return roots[np.argsort(-roots.real, kind="stable")]

    def scaled(s):
        return s ** 2 * np.exp(s * tau) + gain * s + stiffness

    def scaled_prime(s):
        return (2 * s + tau * s ** 2) * np.exp(s * tau) + gain

    reach = 10.0 * max(gain, math.sqrt(stiffness), 1.0 / tau, 1.0)
    found = []

    grid = np.linspace(-reach, 0.0, 20001)
    values = scaled(grid)
    found.extend(complex(s) for s in grid[values == 0])
    for i in np.flatnonzero(values[:-1] * values[1:] < 0):
        found.append(complex(optimize.brentq(scaled, grid[i], grid[i + 1], xtol=1e-14)))

    height = max(reach, 6.0 * math.pi / tau)
    re, im = np.meshgrid(np.linspace(-reach, 1.0, seeds), np.linspace(1e-3, height, seeds))
    s = re + 1j * im
    with np.errstate(all="ignore"):
        for _ in range(100):
            step = scaled(s) / scaled_prime(s)
            s = s - step
        residual = np.abs(scaled(s)) / np.maximum(1.0, np.abs(s) ** 2)
    good = np.isfinite(s) & (residual < 1e-9) & (s.imag > 1e-7)
    for root in s[good]:
        found.append(complex(root.real, abs(root.imag)))

    unique = []
    for root in sorted(found, key=lambda r: (-r.real, r.imag)):
        if all(abs(root - kept) > 1e-6 * max(1.0, abs(root)) for kept in unique):
            unique.append(root)
    return np.array(unique[:count], dtype=complex)


def is_non_oscillatory(p: FvdParams, y_star: float, tau: float) -> bool:
    """True when the rightmost characteristic root is real"""
    roots = characteristic_roots(p, y_star, tau)
    if roots.size == 0:
        raise DomainError(f"no characteristic root found for tau={tau}")
    dominant = roots[0]
    return abs(dominant.imag) <= 1e-7 * max(1.0, abs(dominant))


def count_sign_changes(series, threshold: float = 0.0) -> int:
    """Sign changes of a series, ignoring samples within `threshold` of zero"""
    values = np.asarray(series, dtype=float)
    signs = np.sign(values[np.abs(values) > threshold])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def _constant_lead(speed: float) -> LeadProfile:
    return lambda t: (speed * t, speed, 0.0)


def _integrate(p: FvdParams, y_star: float, horizon: float, dt: Optional[float],
               lead_profile: Optional[LeadProfile], perturbation, velocity) -> PlatoonTrajectory:
    if horizon <= 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    n = p.n_vehicles
    tau = p.tau
    if dt is None:
        dt = min(tau / 20.0, 1e-3) if tau > 0 else 1e-3
    if tau > 0:
        if dt >= tau / 10.0:
            raise DomainError(f"step {dt} must be smaller than tau/10 = {tau / 10.0}")
        dt = tau / math.ceil(tau / dt)
        lag = int(round(tau / dt))
    else:
        lag = 0
    lead_profile = lead_profile or _constant_lead(equilibrium_speed(y_star, p))
    steps = int(math.ceil(horizon / dt))

    headways = np.full((steps + 1, n), float(y_star))
    if perturbation is not None:
        headways[0] += np.broadcast_to(np.asarray(perturbation, dtype=float), (n,))
    rel_velocities = np.zeros((steps + 1, n))
    times = np.arange(steps + 1) * dt

    def delayed(index: int, fraction: float, y_stage, v_stage):
        if lag == 0:
            return y_stage, v_stage
        k = index - lag
        if k < 0:
            return headways[0], rel_velocities[0]
        if fraction == 0.0:
            return headways[k], rel_velocities[k]
        upper = min(k + 1, index)
        return (headways[k] + fraction * (headways[upper] - headways[k]),
                rel_velocities[k] + fraction * (rel_velocities[upper] - rel_velocities[k]))

    def rhs(t: float, index: int, fraction: float, y, v):
        y_d, v_d = delayed(index, fraction, y, v)
        _, lead_speed, lead_accel = lead_profile(t)
        optimal = velocity(y_d)
        dv = np.empty(n)
        dv[0] = lead_accel + p.a * (lead_speed - optimal[0] - v_d[0]) - p.l * v_d[0]
        dv[1:] = p.a * (optimal[:-1] - optimal[1:] - v_d[1:]) + p.l * (v_d[:-1] - v_d[1:])
        return v, dv

    for i in range(steps):
        t = times[i]
        y, v = headways[i], rel_velocities[i]
        k1y, k1v = rhs(t, i, 0.0, y, v)
        k2y, k2v = rhs(t + dt / 2, i, 0.5, y + dt / 2 * k1y, v + dt / 2 * k1v)
        k3y, k3v = rhs(t + dt / 2, i, 0.5, y + dt / 2 * k2y, v + dt / 2 * k2v)
        k4y, k4v = rhs(t + dt, i, 1.0, y + dt * k3y, v + dt * k3v)
        headways[i + 1] = y + dt / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        rel_velocities[i + 1] = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(headways[i + 1])) and np.all(np.isfinite(rel_velocities[i + 1]))):
            raise DivergenceError(f"platoon state became non-finite at t={times[i + 1]:.6g}s",
                                  quantity="state", timestamp=float(times[i + 1]))

    return PlatoonTrajectory(times=times, headways=headways, rel_velocities=rel_velocities, y_star=y_star)


def integrate_platoon(p: FvdParams, y_star: float, horizon: float, dt: Optional[float] = None,
                      lead_profile: Optional[LeadProfile] = None, perturbation=None) -> PlatoonTrajectory:
    """
    Fixed-step RK4 integration of the delayed FVD platoon

    Args:
        p: Car-following parameters, including the feedback delay tau and the number of followers
        y_star: Equilibrium headway in m; the history before t = 0 is the equilibrium
            plus `perturbation`
        horizon: Simulated time in seconds
        dt: Step size; defaults to min(tau/20, 1 ms) and is shrunk so tau is a whole number of steps
        lead_profile: t -> (x0, x0', x0''); constant equilibrium speed by default
        perturbation: Initial headway offset, scalar or one per follower

    Returns:
        PlatoonTrajectory: Headways and relative velocities of every follower

    Raises:
        DivergenceError: The state became non-finite
    """
    return _integrate(p, y_star, horizon, dt, lead_profile, perturbation, lambda y: bovf(y, p))


def integrate_linear_platoon(p: FvdParams, y_star: float, horizon: float, dt: Optional[float] = None,
                             lead_profile: Optional[LeadProfile] = None, perturbation=None) -> PlatoonTrajectory:
    """Same integration with V linearized around y*"""
    speed = equilibrium_speed(y_star, p)
    slope = float(bovf_slope(y_star, p))
    return _integrate(p, y_star, horizon, dt, lead_profile, perturbation,
                      lambda y: speed + slope * (np.asarray(y) - y_star))
