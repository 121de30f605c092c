"""Microscopic traffic on a 4-lane, 4-ramp highway corridor.

Longitudinal control is the Intelligent Driver Model; discretionary lane
changes follow the MOBIL incentive/safety criterion. Vehicles attached to or
approaching a charging slot run a station-keeping controller that is always
bounded above by the IDM acceleration toward the actual leader, so the
collision-free property carries over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .battery import AmbientParams, BatteryState, VehicleBodyParams, consume, tractive_power

EMERGENCY_DECEL = 9.0  # m/s^2, physical braking limit used when the gap is gone
SPEED_CAP_FACTOR = 1.05  # hard per-vehicle cap relative to base desired speed


class VehicleKind(Enum):
    MED = "med"
    EV = "ev"
    GAS = "gas"


class DriverKind(Enum):
    HUMAN = "human"
    AUTONOMOUS = "autonomous"


@dataclass(frozen=True)
class RoadNetwork:
    length: float = 4000.0
    lanes: int = 4
    ramp_positions: tuple = (100.0, 1200.0, 2100.0, 3200.0)
    meters_per_unit: float = 1.0

    def __post_init__(self):
        if self.lanes < 3:
            raise ValueError("at least 3 lanes required for the platoon layout")
        for r in self.ramp_positions:
            if not 0 < r < self.length:
                raise ValueError(f"ramp position {r} outside (0, {self.length})")
        if self.meters_per_unit <= 0:
            raise ValueError("meters_per_unit must be > 0")


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 25.0     # m/s
    time_headway: float = 1.5       # s
    min_gap: float = 2.0            # m
    max_accel: float = 1.5          # m/s^2
    comfortable_decel: float = 2.0  # m/s^2
    accel_exponent: float = 4.0

    def __post_init__(self):
        for name in ("desired_speed", "time_headway", "min_gap", "max_accel",
                     "comfortable_decel", "accel_exponent"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.3
    changing_threshold: float = 0.1  # m/s^2
    safe_decel: float = 4.0          # m/s^2

    def __post_init__(self):
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must be in [0, 1]")
        if self.changing_threshold < 0 or self.safe_decel < 0:
            raise ValueError("thresholds must be >= 0")


@dataclass(frozen=True)
class TrafficConfig:
    main_rate: float = 0.12        # arrivals per step at the left end
    ramp_rate: float = 0.04        # arrivals per step per ramp
    ev_fraction: float = 0.5
    human_fraction: float = 0.6    # share of EVs driven by humans
    desired_speed: float = 25.0    # m/s for EVs/gas vehicles
    med_desired_speed: float = 22.0
    speed_noise: float = 0.02      # relative desired-speed jitter for humans
    init_speed_band: tuple = (0.7, 1.0)   # fraction of desired speed at spawn
    init_soc_band: tuple = (0.15, 0.6)
    ev_capacity: float = 4.0e6     # J
    spawn_gap: float = 20.0        # units kept clear around an entry point
    substeps: int = 2
    vehicle_length: float = 5.0    # m
    med_length: float = 10.0       # m
    platoon_headway: float = 0.3   # s, short headway inside a charging platoon
    platoon_min_gap: float = 1.0   # m

    def __post_init__(self):
        if not 0.0 <= self.ev_fraction <= 1.0:
            raise ValueError("ev_fraction must be in [0, 1]")
        if not 0.0 <= self.human_fraction <= 1.0:
            raise ValueError("human_fraction must be in [0, 1]")
        if self.main_rate < 0 or self.ramp_rate < 0:
            raise ValueError("arrival rates must be >= 0")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass
class Vehicle:
    vid: int
    kind: VehicleKind
    driver: DriverKind
    x: float                    # units, vehicle center
    lane: int
    speed: float                # m/s
    length: float               # m
    desired_speed: float        # m/s, base value
    body: VehicleBodyParams
    battery: Optional[BatteryState] = None
    spawn_step: int = 0
    # charging-protocol hooks, written by the protocol layer
    booked_med: Optional[int] = None
    booked_slot: Optional[int] = None
    charging: bool = False
    pre_charge_speed: Optional[float] = None
    forced_target_lane: Optional[int] = None
    follow_target: Optional[tuple] = None   # (x units, speed m/s)
    # per-step scratch
    noise_factor: float = 1.0
    lane_change: int = 0
    distance_travelled: float = 0.0  # units

    @property
    def soc(self) -> float:
        return self.battery.soc if self.battery is not None else 0.0


@dataclass
class Neighborhood:
    """Vehicles surrounding an ego on its own and adjacent lanes."""
    leader: Optional[Vehicle] = None
    follower: Optional[Vehicle] = None
    left_leader: Optional[Vehicle] = None
    left_follower: Optional[Vehicle] = None
    right_leader: Optional[Vehicle] = None
    right_follower: Optional[Vehicle] = None
    left_exists: bool = False
    right_exists: bool = False
    meters_per_unit: float = 1.0


def bumper_gap(follower: Vehicle, leader: Vehicle, mpu: float) -> float:
    """Clear distance in meters between two same-lane vehicles."""
    return (leader.x - follower.x) * mpu - 0.5 * (leader.length + follower.length)


def _idm_accel(v: float, v0: float, gap: Optional[float], dv: Optional[float],
               p: IdmParams) -> float:
    free = p.max_accel * (1.0 - (v / v0) ** p.accel_exponent) if v0 > 0 else -p.max_accel
    if gap is None:
        return free
    if gap <= 0:
        return -EMERGENCY_DECEL
    s_star = p.min_gap + max(
        0.0, v * p.time_headway
        + v * dv / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel)))
    a = p.max_accel * (1.0 - (v / v0) ** p.accel_exponent - (s_star / gap) ** 2)
    return max(a, -EMERGENCY_DECEL)


def idm_acceleration(ego: Vehicle, leader: Optional[Vehicle], params: IdmParams,
                     meters_per_unit: float = 1.0) -> float:
    """IDM acceleration for ego given its (optional) same-lane leader."""
    v0 = ego.desired_speed * ego.noise_factor
    if leader is None:
        return _idm_accel(ego.speed, v0, None, None, params)
    gap = bumper_gap(ego, leader, meters_per_unit)
    return _idm_accel(ego.speed, v0, gap, ego.speed - leader.speed, params)


def _accel_pair(ego: Vehicle, leader: Optional[Vehicle], p: IdmParams,
                mpu: float) -> float:
    return idm_acceleration(ego, leader, p, mpu)


def mobil_decision(ego: Vehicle, nb: Neighborhood, idm: IdmParams,
                   mobil: MobilParams) -> str:
    """MOBIL lane-change decision: 'stay', 'left' or 'right'.

    A change is proposed only if the target-lane follower is not forced beyond
    the safe braking limit and the politeness-weighted acceleration gain
    clears the changing threshold. Ties resolve to stay.
    """
    mpu = nb.meters_per_unit
    a_self = _accel_pair(ego, nb.leader, idm, mpu)
    a_old_follower = (_accel_pair(nb.follower, nb.leader, idm, mpu)
                      - _accel_pair(nb.follower, ego, idm, mpu)
                      if nb.follower is not None else 0.0)

    best = ("stay", 0.0)
    for side, exists, t_leader, t_follower in (
            ("left", nb.left_exists, nb.left_leader, nb.left_follower),
            ("right", nb.right_exists, nb.right_leader, nb.right_follower)):
        if not exists:
            continue
        # no room: reject if ego would overlap either target-lane vehicle
        if t_leader is not None and bumper_gap(ego, t_leader, mpu) <= 0:
            continue
        if t_follower is not None and bumper_gap(t_follower, ego, mpu) <= 0:
            continue
        a_new_follower_after = (_accel_pair(t_follower, ego, idm, mpu)
                                if t_follower is not None else 0.0)
        if t_follower is not None and a_new_follower_after < -mobil.safe_decel:
            continue  # safety veto
        a_self_after = _accel_pair(ego, t_leader, idm, mpu)
        if a_self_after < -mobil.safe_decel:
            continue
        a_new_follower_before = (_accel_pair(t_follower, t_leader, idm, mpu)
                                 if t_follower is not None else 0.0)
        gain = (a_self_after - a_self
                + mobil.politeness * ((a_new_follower_after - a_new_follower_before)
                                      + a_old_follower))
        if gain > mobil.changing_threshold and gain > best[1]:
            best = (side, gain)
    return best[0]


class World:
    """Mutable corridor state advanced by a single caller."""

    def __init__(self, network: RoadNetwork, idm: IdmParams, mobil: MobilParams,
                 cfg: TrafficConfig, body: VehicleBodyParams,
                 med_body: VehicleBodyParams, ambient: AmbientParams,
                 rng: np.random.Generator):
        self.network = network
        self.idm = idm
        self.mobil = mobil
        self.cfg = cfg
        self.body = body
        self.med_body = med_body
        self.ambient = ambient
        self.rng = rng
        self._elapsed = 0.0  # seconds into the current advance() step
        self.platoon_idm = IdmParams(
            desired_speed=idm.desired_speed,
            time_headway=cfg.platoon_headway, min_gap=cfg.platoon_min_gap,
            max_accel=idm.max_accel, comfortable_decel=idm.comfortable_decel,
            accel_exponent=idm.accel_exponent)
        self.vehicles: dict[int, Vehicle] = {}
        self.step_count = 0
        self._next_vid = 0
        # one FIFO of deferred arrivals per entry point (main + each ramp)
        self._pending: list[list] = [[] for _ in range(1 + len(network.ramp_positions))]
        self.guard_hits = 0

    # -- queries ---------------------------------------------------------

    def ordered(self) -> list:
        return [self.vehicles[k] for k in sorted(self.vehicles)]

    def lane_sorted(self) -> dict[int, list]:
        lanes: dict[int, list] = {i: [] for i in range(self.network.lanes)}
        for v in self.ordered():
            lanes[v.lane].append(v)
        for seq in lanes.values():
            seq.sort(key=lambda v: (v.x, v.vid))
        return lanes

    def leader_of(self, veh: Vehicle, lanes=None) -> Optional[Vehicle]:
        seq = (lanes or self.lane_sorted())[veh.lane]
        idx = seq.index(veh)
        return seq[idx + 1] if idx + 1 < len(seq) else None

    def neighborhood(self, veh: Vehicle, lanes=None) -> Neighborhood:
        lanes = lanes or self.lane_sorted()
        nb = Neighborhood(meters_per_unit=self.network.meters_per_unit)

        def around(lane):
            leader = follower = None
            for other in lanes[lane]:
                if other is veh:
                    continue
                if other.x >= veh.x and (leader is None or other.x < leader.x):
                    leader = other
                if other.x < veh.x and (follower is None or other.x > follower.x):
                    follower = other
            return leader, follower

        nb.leader, nb.follower = around(veh.lane)
        if veh.lane - 1 >= 0:
            nb.left_exists = True
            nb.left_leader, nb.left_follower = around(veh.lane - 1)
        if veh.lane + 1 < self.network.lanes:
            nb.right_exists = True
            nb.right_leader, nb.right_follower = around(veh.lane + 1)
        return nb

    # -- spawning --------------------------------------------------------

    def add_vehicle(self, kind: VehicleKind, driver: DriverKind, x: float,
                    lane: int, speed: float, desired_speed: float,
                    battery: Optional[BatteryState]) -> Vehicle:
        body = self.med_body if kind is VehicleKind.MED else self.body
        length = (self.cfg.med_length if kind is VehicleKind.MED
                  else self.cfg.vehicle_length)
        veh = Vehicle(vid=self._next_vid, kind=kind, driver=driver, x=x,
                      lane=lane, speed=speed, length=length,
                      desired_speed=desired_speed, body=body, battery=battery,
                      spawn_step=self.step_count)
        self._next_vid += 1
        self.vehicles[veh.vid] = veh
        return veh

    def _draw_arrival(self) -> dict:
        kind = (VehicleKind.EV if self.rng.random() < self.cfg.ev_fraction
                else VehicleKind.GAS)
        human = (kind is VehicleKind.GAS
                 or self.rng.random() < self.cfg.human_fraction)
        lo, hi = self.cfg.init_speed_band
        speed_frac = self.rng.uniform(lo, hi)
        s_lo, s_hi = self.cfg.init_soc_band
        soc = self.rng.uniform(s_lo, s_hi)
        lane = int(self.rng.integers(self.network.lanes))
        return {"kind": kind, "human": human, "speed_frac": speed_frac,
                "soc": soc, "main_lane": lane}

    def _entry_clear(self, x: float, lane: int) -> bool:
        gap = self.cfg.spawn_gap
        for v in self.vehicles.values():
            if v.lane == lane and abs(v.x - x) < gap:
                return False
        return True

    def spawn(self) -> list:
        """One Bernoulli arrival draw per entry point; blocked arrivals are
        queued and placed as soon as the entry clears."""
        entries = [(0.0, None, self.cfg.main_rate)]
        entries += [(rp, self.network.lanes - 1, self.cfg.ramp_rate)
                    for rp in self.network.ramp_positions]
        spawned = []
        for i, (x, fixed_lane, rate) in enumerate(entries):
            if rate > 0 and self.rng.random() < rate:
                self._pending[i].append(self._draw_arrival())
            if not self._pending[i]:
                continue
            spec = self._pending[i][0]
            lane = fixed_lane if fixed_lane is not None else spec["main_lane"]
            if not self._entry_clear(x, lane):
                continue
            speed = spec["speed_frac"] * self.cfg.desired_speed
            battery = None
            if spec["kind"] is VehicleKind.EV:
                battery = BatteryState(capacity=self.cfg.ev_capacity,
                                       charge=spec["soc"] * self.cfg.ev_capacity)
            veh = self.add_vehicle(
                kind=spec["kind"],
                driver=DriverKind.HUMAN if spec["human"] else DriverKind.AUTONOMOUS,
                x=x, lane=lane, speed=speed,
                desired_speed=self.cfg.desired_speed, battery=battery)
            self._pending[i].pop(0)
            spawned.append(veh)
        return spawned

    # -- dynamics --------------------------------------------------------

    def _lateral_phase(self):
        for veh in self.ordered():
            veh.lane_change = 0
            if veh.forced_target_lane is not None:
                if veh.lane != veh.forced_target_lane:
                    self._try_forced_change(veh)
                continue
            if veh.kind is VehicleKind.MED:
                continue  # MEDs hold the service lane, no discretionary changes
            nb = self.neighborhood(veh)
            move = mobil_decision(veh, nb, self.idm, self.mobil)
            if move == "left":
                veh.lane -= 1
                veh.lane_change = -1
            elif move == "right":
                veh.lane += 1
                veh.lane_change = 1

    def _try_forced_change(self, veh: Vehicle):
        step = -1 if veh.forced_target_lane < veh.lane else 1
        target = veh.lane + step
        nb = self.neighborhood(veh)
        leader = nb.left_leader if step < 0 else nb.right_leader
        follower = nb.left_follower if step < 0 else nb.right_follower
        mpu = self.network.meters_per_unit
        if leader is not None and bumper_gap(veh, leader, mpu) <= self.idm.min_gap:
            return
        if follower is not None:
            if bumper_gap(follower, veh, mpu) <= self.idm.min_gap:
                return
            if _accel_pair(follower, veh, self.idm, mpu) < -self.mobil.safe_decel:
                return
        veh.lane = target
        veh.lane_change = step

    def _longitudinal_accel(self, veh: Vehicle, leader: Optional[Vehicle]) -> float:
        mpu = self.network.meters_per_unit
        # platoon members (and MEDs leading them) drive with short headways
        platoon = veh.follow_target is not None or veh.kind is VehicleKind.MED
        params = self.platoon_idm if platoon else self.idm
        if veh.follow_target is None:
            return idm_acceleration(veh, leader, params, mpu)
        # approach/station-keeping: safety-bounded tracking of the anchor,
        # with the overtaking speed allowance as the free-flow target
        v0 = SPEED_CAP_FACTOR * veh.desired_speed * veh.noise_factor
        if leader is None:
            a_safe = _idm_accel(veh.speed, v0, None, None, params)
        else:
            a_safe = _idm_accel(veh.speed, v0, bumper_gap(veh, leader, mpu),
                                veh.speed - leader.speed, params)
        tx, tv = veh.follow_target
        # the anchor was sampled at step start; extrapolate it to now
        dx = (tx - veh.x) * mpu + tv * self._elapsed
        if veh.charging:
            # station keeping at the anchor
            dv = tv * veh.noise_factor - veh.speed
            a_track = 2.2 * dx + 3.0 * dv
        else:
            # approach: close on the anchor at a bounded relative speed
            v_des = tv + max(-6.0, min(0.5 * dx, 6.0))
            a_track = 1.0 * (v_des * veh.noise_factor - veh.speed)
        a_track = max(-self.idm.comfortable_decel * 2.0,
                      min(a_track, self.idm.max_accel))
        return min(a_track, a_safe)

    def advance(self, dt: float) -> dict:
        """Advance every vehicle one step; returns per-step events."""
        if dt <= 0:
            raise ValueError("dt must be > 0")
        mpu = self.network.meters_per_unit
        # per-step desired-speed jitter for human drivers
        for veh in self.ordered():
            if veh.driver is DriverKind.HUMAN and self.cfg.speed_noise > 0:
                veh.noise_factor = 1.0 + self.rng.uniform(
                    -self.cfg.speed_noise, self.cfg.speed_noise)
            else:
                veh.noise_factor = 1.0

        start_speeds = {v.vid: v.speed for v in self.vehicles.values()}
        self._lateral_phase()

        h = dt / self.cfg.substeps
        self._elapsed = 0.0
        for _ in range(self.cfg.substeps):
            lanes = self.lane_sorted()
            accels = {}
            for seq in lanes.values():
                for i, veh in enumerate(seq):
                    leader = seq[i + 1] if i + 1 < len(seq) else None
                    accels[veh.vid] = self._longitudinal_accel(veh, leader)
            for veh in self.vehicles.values():
                cap = SPEED_CAP_FACTOR * veh.desired_speed
                new_speed = min(max(veh.speed + accels[veh.vid] * h, 0.0), cap)
                veh.x += new_speed * h / mpu
                veh.distance_travelled += new_speed * h / mpu
                veh.speed = new_speed
            # last-resort anti-overlap guard, front to back per lane
            for seq in lanes.values():
                for i in range(len(seq) - 2, -1, -1):
                    ego, leader = seq[i], seq[i + 1]
                    min_center = 0.5 * (ego.length + leader.length) / mpu + 0.1
                    if leader.x - ego.x < min_center:
                        ego.x = leader.x - min_center
                        ego.speed = min(ego.speed, leader.speed)
                        self.guard_hits += 1
            self._elapsed += h

        depleted, exited = [], []
        for veh in self.ordered():
            if veh.kind is VehicleKind.EV and veh.battery is not None:
                p = tractive_power(start_speeds[veh.vid], veh.speed, dt,
                                   veh.body, self.ambient)
                veh.battery = consume(veh.battery, p, dt)
                if veh.battery.depleted_flag:
                    depleted.append(veh)
            if veh.x > self.network.length:
                exited.append(veh)
        for veh in depleted:
            self.vehicles.pop(veh.vid, None)
        for veh in exited:
            if veh.vid in self.vehicles:
                self.vehicles.pop(veh.vid)
        self.step_count += 1
        return {"depleted": depleted, "exited": exited}
