"""MED slot booking and charging state machine.

Each MED carries four charging panels (front, rear, left, right). An EV whose
state of charge falls below the request threshold books a slot on the nearest
eligible MED, performs a mandatory maneuver to the slot anchor pose, attaches,
and receives energy through the misalignment-dependent wireless link until it
reaches the target SoC or the MED hits its reserve floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from .battery import BatteryState, charge as charge_battery, consume as consume_battery
from .physics import (CircuitParams, CoilSpec, MisalignmentState,
                      QuadratureConfig, mutual_inductance, transfer_efficiency)
from .traffic import Vehicle, VehicleKind, World


class Anchor(IntEnum):
    FRONT = 0
    REAR = 1
    LEFT = 2
    RIGHT = 3


# booking preference among free slots
SLOT_ORDER = (Anchor.REAR, Anchor.LEFT, Anchor.RIGHT, Anchor.FRONT)


@dataclass(frozen=True)
class ProtocolConfig:
    request_threshold: float = 0.30   # EV SoC below which it requests
    target_soc: float = 0.80          # detach once reached
    reserve_floor: float = 0.10       # MED dissemination SoC floor
    charge_power: float = 5.0e4       # W expended per active slot
    detection_radius: float = 450.0   # units, request reach toward a MED ahead
    rear_detection_radius: float = 150.0  # units, reach toward a MED behind
    booking_timeout: int = 90         # steps without attach
    service_lane: int = 1
    slot_offset: float = 18.0         # units, front/rear anchor offset
    attach_tol_x: float = 2.0         # units
    attach_tol_v: float = 1.5         # m/s speed match required to attach
    mount_gap: float = 0.25           # m, fixed lateral coil separation
    theta_max: float = 0.3            # rad, clamp on angular misalignment
    eta_min: float = 0.05             # below this the link is treated as decoupled
    med_capacity: float = 4.0e7       # J, dissemination battery
    closing_speed: float = 5.0        # m/s, assumed rendezvous closing rate
    chase_power: float = 1.1e4        # W, assumed EV draw during rendezvous

    def __post_init__(self):
        if not 0 < self.request_threshold < self.target_soc <= 1:
            raise ValueError("need 0 < request_threshold < target_soc <= 1")
        if not 0 <= self.reserve_floor < 1:
            raise ValueError("reserve_floor must be in [0, 1)")
        if self.charge_power <= 0 or self.med_capacity <= 0:
            raise ValueError("charge_power and med_capacity must be > 0")


@dataclass
class ChargingSlot:
    anchor: Anchor
    is_booked: bool = False
    is_charging: bool = False
    occupant: Optional[int] = None    # EV vid
    booking_age: int = 0

    def check(self):
        assert not (self.is_charging and not self.is_booked)
        assert self.is_booked == (self.occupant is not None)

    def release(self):
        self.is_booked = False
        self.is_charging = False
        self.occupant = None
        self.booking_age = 0


@dataclass
class MedUnit:
    vehicle: Vehicle
    dissemination_battery: BatteryState
    in_service: bool = False
    slots: list = field(default_factory=lambda: [ChargingSlot(a) for a in Anchor])

    @property
    def med_id(self) -> int:
        return self.vehicle.vid

    def free_slots(self, lanes_total: int):
        out = []
        for a in SLOT_ORDER:
            slot = self.slots[a]
            if slot.is_booked:
                continue
            if a is Anchor.LEFT and self.vehicle.lane == 0:
                continue
            if a is Anchor.RIGHT and self.vehicle.lane == lanes_total - 1:
                continue
            out.append(slot)
        return out


@dataclass(frozen=True)
class ChargingRequest:
    ev_id: int
    med_id: int
    issued_step: int


def formation_targets(med: MedUnit, cfg: ProtocolConfig, lanes_total: int) -> dict:
    """Anchor pose (x units, lane) per slot; edge-lane side slots are omitted.

    The full platoon spans the MED lane plus both adjacent lanes.
    """
    v = med.vehicle
    targets = {
        Anchor.FRONT: (v.x + cfg.slot_offset, v.lane),
        Anchor.REAR: (v.x - cfg.slot_offset, v.lane),
    }
    if v.lane - 1 >= 0:
        targets[Anchor.LEFT] = (v.x, v.lane - 1)
    if v.lane + 1 < lanes_total:
        targets[Anchor.RIGHT] = (v.x, v.lane + 1)
    return targets


def _available_energy(med: MedUnit, cfg: ProtocolConfig) -> float:
    b = med.dissemination_battery
    return max(0.0, b.charge - cfg.reserve_floor * b.capacity)


def _energy_needed(ev: Vehicle, cfg: ProtocolConfig, eta_ceiling: float) -> float:
    deficit = max(0.0, cfg.target_soc - ev.soc) * ev.battery.capacity
    return deficit / max(eta_ceiling, 1e-9)


def handle_request(ev: Vehicle, meds: list, cfg: ProtocolConfig,
                   circuit: CircuitParams, lanes_total: int,
                   mpu: float = 1.0) -> Optional[tuple]:
    """Book a slot on the nearest eligible MED; returns (med_id, slot anchor)
    or None when no MED can serve the request."""
    if ev.booked_med is not None or ev.battery is None:
        return None
    if ev.soc >= cfg.request_threshold:
        return None
    eta_ceiling = circuit.efficiency_ceiling
    candidates = []
    for med in meds:
        if not med.in_service:
            continue
        ahead = med.vehicle.x >= ev.x
        dist = abs(med.vehicle.x - ev.x)
        # catching a MED ahead is cheap; dropping back to one behind costs
        # corridor progress, so the rear reach is shorter
        if dist > (cfg.detection_radius if ahead else cfg.rear_detection_radius):
            continue
        chase_cost = dist * mpu / cfg.closing_speed * cfg.chase_power
        if ev.soc * ev.battery.capacity <= chase_cost:
            continue
        if _available_energy(med, cfg) < _energy_needed(ev, cfg, eta_ceiling):
            continue
        free = med.free_slots(lanes_total)
        if not free:
            continue
        candidates.append((dist, med.med_id, med, free[0]))
    if not candidates:
        return None
    _, _, med, slot = min(candidates, key=lambda t: (t[0], t[1]))
    slot.is_booked = True
    slot.occupant = ev.vid
    slot.booking_age = 0
    ev.booked_med = med.med_id
    ev.booked_slot = int(slot.anchor)
    return med.med_id, int(slot.anchor)


def attach(ev: Vehicle, med: MedUnit, slot: ChargingSlot, cfg: ProtocolConfig,
           lanes_total: int) -> bool:
    """Set is_charging once the EV holds the anchor pose within tolerance."""
    if not slot.is_booked or slot.occupant != ev.vid:
        return False
    targets = formation_targets(med, cfg, lanes_total)
    if slot.anchor not in targets:
        return False
    tx, tlane = targets[slot.anchor]
    if ev.lane != tlane or abs(ev.x - tx) > cfg.attach_tol_x:
        return False
    if abs(ev.speed - med.vehicle.speed) > cfg.attach_tol_v:
        return False
    slot.is_charging = True
    ev.charging = True
    if ev.pre_charge_speed is None:
        ev.pre_charge_speed = ev.desired_speed
    return True


def detach(ev: Optional[Vehicle], med: MedUnit, slot: ChargingSlot):
    """Clear the slot and hand the EV back to normal driving."""
    slot.release()
    if ev is not None:
        ev.charging = False
        ev.booked_med = None
        ev.booked_slot = None
        ev.forced_target_lane = None
        ev.follow_target = None
        if ev.pre_charge_speed is not None:
            ev.desired_speed = ev.pre_charge_speed
            ev.pre_charge_speed = None


def misalignment_from_kinematics(ev: Vehicle, med: MedUnit, anchor_x: float,
                                 cfg: ProtocolConfig, mpu: float) -> MisalignmentState:
    """Map relative platoon kinematics to the coil misalignment triple."""
    d = abs(ev.x - anchor_x) * mpu
    speed_ref = max(med.vehicle.speed, 5.0)
    theta = min(math.atan(abs(ev.speed - med.vehicle.speed) / speed_ref),
                cfg.theta_max)
    return MisalignmentState(horizontal_d=d, angular_theta=theta,
                             lateral_c=cfg.mount_gap)


def charging_step(med: MedUnit, world: World, cfg: ProtocolConfig,
                  med_coil: CoilSpec, ev_coil: CoilSpec, circuit: CircuitParams,
                  quad: QuadratureConfig, dt: float) -> list:
    """Transfer energy to every attached EV for one step.

    Returns ledger rows (med_id, ev_id, anchor, expended J, received J, eta).
    Detaches EVs that reached the target SoC and cascades a full detach when
    the MED reserve floor is hit.
    """
    rows = []
    lanes_total = world.network.lanes
    targets = formation_targets(med, cfg, lanes_total)
    for slot in med.slots:
        if not slot.is_charging:
            continue
        ev = world.vehicles.get(slot.occupant)
        if ev is None:
            slot.release()
            continue
        available = _available_energy(med, cfg)
        if available <= 0.0:
            break
        anchor_x = targets.get(slot.anchor, (med.vehicle.x, med.vehicle.lane))[0]
        mis = misalignment_from_kinematics(ev, med, anchor_x, cfg,
                                           world.network.meters_per_unit)
        m = mutual_inductance(med_coil, ev_coil, mis, quad)
        eta = transfer_efficiency(max(m, 0.0), circuit)
        if eta < cfg.eta_min:
            continue  # momentarily decoupled: transmitter does not drive power
        expended = min(cfg.charge_power * dt, available)
        received = eta * expended
        headroom = ev.battery.capacity - ev.battery.charge
        if received > headroom:
            # pro-rata: only expend what the EV can still absorb
            expended = min(headroom / eta, available) if eta > 0 else 0.0
            received = eta * expended
        if expended > 0:
            med.dissemination_battery = consume_battery(
                med.dissemination_battery, expended / dt, dt)
            ev.battery = charge_battery(ev.battery, expended / dt, eta, dt)
            rows.append((med.med_id, ev.vid, int(slot.anchor), expended,
                         received, eta))
        if ev.soc >= cfg.target_soc:
            detach(ev, med, slot)
    if _available_energy(med, cfg) <= 0.0:
        for slot in med.slots:
            if slot.is_charging:
                detach(world.vehicles.get(slot.occupant), med, slot)
    return rows


class ProtocolManager:
    """Drives the booking lifecycle for all deployed MEDs each step."""

    def __init__(self, cfg: ProtocolConfig, med_coil: CoilSpec,
                 ev_coil: CoilSpec, circuit: CircuitParams,
                 quad: QuadratureConfig):
        self.cfg = cfg
        self.med_coil = med_coil
        self.ev_coil = ev_coil
        self.circuit = circuit
        self.quad = quad
        self.meds: dict[int, MedUnit] = {}

    def register_med(self, vehicle: Vehicle) -> MedUnit:
        unit = MedUnit(
            vehicle=vehicle,
            dissemination_battery=BatteryState(capacity=self.cfg.med_capacity,
                                               charge=self.cfg.med_capacity))
        self.meds[vehicle.vid] = unit
        return unit

    def remove_med(self, med_id: int, world: World):
        unit = self.meds.pop(med_id, None)
        if unit is None:
            return
        for slot in unit.slots:
            if slot.is_booked:
                detach(world.vehicles.get(slot.occupant), unit, slot)

    def drop_vehicle(self, ev: Vehicle):
        """Release any booking held by a vehicle leaving the simulation."""
        if ev.booked_med is None:
            return
        unit = self.meds.get(ev.booked_med)
        if unit is not None:
            unit.slots[ev.booked_slot].release()
        ev.booked_med = None
        ev.booked_slot = None
        ev.charging = False

    def pre_advance(self, world: World):
        """Booking upkeep before the traffic step: service-lane tracking for
        MEDs, new requests, attach checks, timeouts, maneuver targets."""
        lanes_total = world.network.lanes
        for unit in self._ordered_meds():
            veh = unit.vehicle
            if veh.lane != self.cfg.service_lane:
                veh.forced_target_lane = self.cfg.service_lane
            else:
                veh.forced_target_lane = None
                unit.in_service = True

        meds = self._ordered_meds()
        for ev in world.ordered():
            if ev.kind is not VehicleKind.EV:
                continue
            if ev.booked_med is None:
                handle_request(ev, meds, self.cfg, self.circuit, lanes_total,
                               world.network.meters_per_unit)
            if ev.booked_med is None:
                continue
            unit = self.meds[ev.booked_med]
            slot = unit.slots[ev.booked_slot]
            targets = formation_targets(unit, self.cfg, lanes_total)
            if slot.anchor not in targets:
                # MED drifted to an edge lane: side anchor vanished
                detach(ev, unit, slot)
                continue
            tx, tlane = targets[slot.anchor]
            mx = unit.vehicle.x
            if tlane == unit.vehicle.lane and (ev.x - mx) * (tx - mx) < 0:
                # the MED sits between the EV and a same-lane anchor: overtake
                # (or drop back) in an adjacent lane, merge once clear
                ev.forced_target_lane = tlane + 1 if tlane + 1 < lanes_total \
                    else tlane - 1
            else:
                ev.forced_target_lane = tlane
            ev.follow_target = (tx, unit.vehicle.speed)
            if slot.is_charging and (ev.lane != tlane
                                     or abs(ev.x - tx) > 6 * self.cfg.attach_tol_x):
                # formation broken: drop back to booked until re-attached
                slot.is_charging = False
                ev.charging = False
            if not slot.is_charging:
                attach(ev, unit, slot, self.cfg, lanes_total)
            if not slot.is_charging:
                slot.booking_age += 1
                if slot.booking_age > self.cfg.booking_timeout:
                    detach(ev, unit, slot)

    def charging_phase(self, world: World, dt: float) -> list:
        rows = []
        for unit in self._ordered_meds():
            if any(s.is_charging for s in unit.slots):
                rows.extend(charging_step(unit, world, self.cfg, self.med_coil,
                                          self.ev_coil, self.circuit,
                                          self.quad, dt))
        return rows

    def _ordered_meds(self) -> list:
        return [self.meds[k] for k in sorted(self.meds)]
