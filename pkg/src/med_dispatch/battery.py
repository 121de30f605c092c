"""EV battery dynamics: tractive power demand and charge bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class VehicleBodyParams:
    mass: float = 1500.0            # kg
    rolling_coeff: float = 0.01
    drag_coeff: float = 0.3
    frontal_area: float = 2.2       # m^2
    rotate_compensation: float = 1.05  # rotating-inertia factor on accel

    def __post_init__(self):
        if self.mass <= 0 or self.frontal_area <= 0:
            raise ValueError("mass and frontal_area must be > 0")
        if min(self.rolling_coeff, self.drag_coeff,
               self.rotate_compensation) < 0:
            raise ValueError("coefficients must be >= 0")


@dataclass(frozen=True)
class AmbientParams:
    air_density: float = 1.2   # kg/m^3
    gravity: float = 9.81      # m/s^2
    slope: float = 0.0         # rad

    def __post_init__(self):
        if self.air_density <= 0 or self.gravity <= 0:
            raise ValueError("air_density and gravity must be > 0")


@dataclass(frozen=True)
class BatteryState:
    capacity: float            # J
    charge: float              # J
    depleted_flag: bool = False

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("capacity must be > 0")
        if not 0.0 <= self.charge <= self.capacity:
            raise ValueError("charge must lie in [0, capacity]")

    @property
    def soc(self) -> float:
        return self.charge / self.capacity


def tractive_power(v_prev: float, v_curr: float, t_inc: float,
                   body: VehicleBodyParams,
                   ambient: AmbientParams = AmbientParams()) -> float:
    """Mechanical power (W) to move the vehicle over one step.

    Rolling + aerodynamic + inertial + grade terms evaluated at the midpoint
    speed. Negative demand (braking, downhill) is clamped to zero: no
    regenerative recovery.
    """
    if t_inc <= 0:
        raise ValueError("t_inc must be > 0")
    if v_prev < 0 or v_curr < 0:
        raise ValueError("speeds must be >= 0")
    v_mid = 0.5 * (v_prev + v_curr)
    force = (body.mass * ambient.gravity * body.rolling_coeff
             + 0.5 * ambient.air_density * body.drag_coeff
             * body.frontal_area * v_mid ** 2
             + body.mass * body.rotate_compensation
             * (v_curr - v_prev) / t_inc
             + body.mass * ambient.gravity * math.sin(ambient.slope))
    return max(force * v_mid, 0.0)


def consume(b: BatteryState, power: float, t_inc: float) -> BatteryState:
    """Drain power * t_inc joules, saturating at empty (sets depleted_flag)."""
    if power < 0:
        raise ValueError("power must be >= 0")
    if t_inc <= 0:
        raise ValueError("t_inc must be > 0")
    new_charge = b.charge - power * t_inc
    if new_charge <= 0.0:
        return replace(b, charge=0.0, depleted_flag=True)
    return replace(b, charge=new_charge)


def charge(b: BatteryState, delivered_power: float, eta: float,
           t_inc: float) -> BatteryState:
    """Credit eta * delivered_power * t_inc joules, saturating at capacity."""
    if not 0.0 <= eta < 1.0:
        raise ValueError("eta must be in [0, 1)")
    if delivered_power < 0:
        raise ValueError("delivered_power must be >= 0")
    new_charge = min(b.charge + eta * delivered_power * t_inc, b.capacity)
    return replace(b, charge=new_charge)
