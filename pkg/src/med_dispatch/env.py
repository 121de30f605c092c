"""Episodic dispatch environment.

Discrete action per step: 0 holds, 1..4 releases a pooled MED at the matching
ramp, subject to a cooldown. The observation is a fixed-length flattened
vector of per-MED and per-EV blocks; the reward combines a depletion penalty
with SoC, distance and speed terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .battery import AmbientParams, BatteryState, VehicleBodyParams
from .physics import CircuitParams, CoilSpec, QuadratureConfig
from .protocol import ProtocolConfig, ProtocolManager
from .traffic import (SPEED_CAP_FACTOR, DriverKind, IdmParams, MobilParams,
                      RoadNetwork, TrafficConfig, Vehicle, VehicleKind, World)

MED_BLOCK = 14
EV_BLOCK = 8

N_ACTIONS = 5


class LifecycleError(RuntimeError):
    """step() called on a finished episode."""


@dataclass(frozen=True)
class RewardConfig:
    w_depletion: float = 1.0
    w_soc: float = 1.0
    w_distance: float = 1.0
    w_speed: float = 1.0
    depletion_penalty: float = 10.0

    def __post_init__(self):
        for name in ("w_depletion", "w_soc", "w_distance", "w_speed",
                     "depletion_penalty"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class EnvConfig:
    network: RoadNetwork = field(default_factory=RoadNetwork)
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    ev_body: VehicleBodyParams = field(default_factory=VehicleBodyParams)
    med_body: VehicleBodyParams = field(
        default_factory=lambda: VehicleBodyParams(mass=12000.0, frontal_area=8.0,
                                                  drag_coeff=0.6))
    ambient: AmbientParams = field(default_factory=AmbientParams)
    med_coil: CoilSpec = field(default_factory=CoilSpec)
    ev_coil: CoilSpec = field(default_factory=CoilSpec)
    circuit: CircuitParams = field(default_factory=CircuitParams)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    max_meds: int = 15
    max_evs: int = 50
    horizon: int = 1000
    cooldown: int = 40
    dt: float = 1.0
    med_turnaround: int = 50
    initial_vehicles: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.max_meds < 1:
            raise ValueError("max_meds must be >= 1")
        if self.max_evs < 1:
            raise ValueError("max_evs must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.cooldown < 0:
            raise ValueError("cooldown must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.protocol.service_lane >= self.network.lanes:
            raise ValueError("service_lane outside the road")

    @property
    def observation_size(self) -> int:
        return MED_BLOCK * self.max_meds + EV_BLOCK * self.max_evs


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class DispatchEnv:
    """Single-caller mutable environment; one instance per rollout worker."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.world: Optional[World] = None
        self.protocol: Optional[ProtocolManager] = None
        self._done = True

    # -- lifecycle -------------------------------------------------------

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        cfg = self.config
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.world = World(cfg.network, cfg.idm, cfg.mobil, cfg.traffic,
                           cfg.ev_body, cfg.med_body, cfg.ambient, self.rng)
        self.protocol = ProtocolManager(cfg.protocol, cfg.med_coil, cfg.ev_coil,
                                        cfg.circuit, cfg.quadrature)
        self.pool = cfg.max_meds
        self.pending_returns: list[int] = []
        self.steps_since_dispatch = cfg.cooldown
        self.step_idx = 0
        self._done = False
        self.stats = {"evs_spawned": 0, "depleted": 0, "ranges": [],
                      "soc_sum": 0.0, "soc_steps": 0, "dispatches": 0,
                      "episode_reward": 0.0}
        self._seed_background()
        return self.build_observation()

    def _seed_background(self):
        cfg = self.config
        for _ in range(cfg.initial_vehicles):
            spec = self.world._draw_arrival()
            x = float(self.rng.uniform(0.0, cfg.network.length))
            lane = spec["main_lane"]
            clear = all(abs(v.x - x) > cfg.traffic.spawn_gap
                        for v in self.world.vehicles.values() if v.lane == lane)
            if not clear:
                continue
            battery = None
            if spec["kind"] is VehicleKind.EV:
                battery = BatteryState(capacity=cfg.traffic.ev_capacity,
                                       charge=spec["soc"] * cfg.traffic.ev_capacity)
                self.stats["evs_spawned"] += 1
            self.world.add_vehicle(
                kind=spec["kind"],
                driver=(DriverKind.HUMAN if spec["human"]
                        else DriverKind.AUTONOMOUS),
                x=x, lane=lane,
                speed=spec["speed_frac"] * cfg.traffic.desired_speed,
                desired_speed=cfg.traffic.desired_speed, battery=battery)

    def step(self, action: int) -> StepResult:
        if self._done or self.world is None:
            raise LifecycleError("environment must be reset before stepping")
        action = int(action)
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action must be in [0, {N_ACTIONS - 1}], got {action}")
        cfg = self.config

        # MED pool turnaround
        self.pending_returns = [t - 1 for t in self.pending_returns]
        returned = sum(1 for t in self.pending_returns if t <= 0)
        self.pool += returned
        self.pending_returns = [t for t in self.pending_returns if t > 0]

        accepted = False
        if action != 0:
            accepted = self._dispatch(action)
        self.steps_since_dispatch += 1

        ev_dist_before = {v.vid: v.distance_travelled
                          for v in self.world.vehicles.values()
                          if v.kind is VehicleKind.EV}

        self.protocol.pre_advance(self.world)
        events = self.world.advance(cfg.dt)

        depletions = 0
        for veh in events["depleted"]:
            self.protocol.drop_vehicle(veh)
            depletions += 1
            self.stats["depleted"] += 1
            self.stats["ranges"].append(veh.distance_travelled)
        for veh in events["exited"]:
            if veh.kind is VehicleKind.MED:
                self.protocol.remove_med(veh.vid, self.world)
                self.pending_returns.append(cfg.med_turnaround)
            else:
                self.protocol.drop_vehicle(veh)
                if veh.kind is VehicleKind.EV:
                    self.stats["ranges"].append(veh.distance_travelled)

        ledger = self.protocol.charging_phase(self.world, cfg.dt)
        reward, components = self.compute_reward(depletions, ev_dist_before)

        spawned = self.world.spawn()
        self.stats["evs_spawned"] += sum(
            1 for v in spawned if v.kind is VehicleKind.EV)

        self.step_idx += 1
        self._done = self.step_idx >= cfg.horizon
        if self._done:
            for v in self.world.vehicles.values():
                if v.kind is VehicleKind.EV:
                    self.stats["ranges"].append(v.distance_travelled)
        self.stats["episode_reward"] += reward

        obs = self.build_observation()
        info = {
            "dispatch_accepted": accepted,
            "dispatch_requested": action != 0,
            "depletions": depletions,
            "meds_deployed": len(self.protocol.meds),
            "med_pool": self.pool,
            "ev_count": sum(1 for v in self.world.vehicles.values()
                            if v.kind is VehicleKind.EV),
            "charging_ledger": ledger,
            "obs_truncated": self._obs_truncated,
            **components,
        }
        return StepResult(observation=obs, reward=reward, done=self._done,
                          info=info)

    def _dispatch(self, action: int) -> bool:
        cfg = self.config
        if self.steps_since_dispatch < cfg.cooldown or self.pool < 1:
            return False
        ramp_x = cfg.network.ramp_positions[action - 1]
        entry_lane = cfg.network.lanes - 1
        if not self.world._entry_clear(ramp_x, entry_lane):
            return False
        veh = self.world.add_vehicle(
            kind=VehicleKind.MED, driver=DriverKind.AUTONOMOUS, x=ramp_x,
            lane=entry_lane, speed=cfg.traffic.med_desired_speed,
            desired_speed=cfg.traffic.med_desired_speed, battery=None)
        self.protocol.register_med(veh)
        self.pool -= 1
        self.steps_since_dispatch = 0
        self.stats["dispatches"] += 1
        return True

    # -- observation and reward -----------------------------------------

    def build_observation(self) -> np.ndarray:
        cfg = self.config
        obs = np.zeros(cfg.observation_size, dtype=np.float64)
        v_max = SPEED_CAP_FACTOR * cfg.traffic.desired_speed
        length = cfg.network.length
        lane_span = max(cfg.network.lanes - 1, 1)

        med_units = self.protocol._ordered_meds() if self.protocol else []
        med_units = med_units[:cfg.max_meds]
        med_index = {u.med_id: i for i, u in enumerate(med_units)}
        for i, unit in enumerate(med_units):
            v = unit.vehicle
            base = i * MED_BLOCK
            obs[base:base + 6] = (
                v.x / length, v.lane / lane_span, v.speed / v_max,
                float(v.lane_change), unit.dissemination_battery.soc,
                float(unit.in_service))
            for j, slot in enumerate(unit.slots):
                obs[base + 6 + j] = float(slot.is_booked)
                obs[base + 10 + j] = float(slot.is_charging)

        evs = sorted((v for v in self.world.vehicles.values()
                      if v.kind is VehicleKind.EV), key=lambda v: v.vid)
        self._obs_truncated = len(evs) > cfg.max_evs
        if self._obs_truncated:
            evs = evs[-cfg.max_evs:]  # oldest beyond capacity excluded
        ev_base = cfg.max_meds * MED_BLOCK
        for i, v in enumerate(evs):
            base = ev_base + i * EV_BLOCK
            target = 0.0
            if v.booked_med is not None and v.booked_med in med_index:
                target = (med_index[v.booked_med] + 1) / cfg.max_meds
            obs[base:base + EV_BLOCK] = (
                v.x / length, v.lane / lane_span, v.speed / v_max,
                float(v.lane_change), v.soc,
                float(v.driver is DriverKind.HUMAN), float(v.charging), target)
        np.clip(obs, -1.0, 1.0, out=obs)
        return obs

    def compute_reward(self, depletions: int, ev_dist_before: dict):
        cfg = self.config
        w = cfg.reward
        v_max = SPEED_CAP_FACTOR * cfg.traffic.desired_speed
        evs = [v for v in self.world.vehicles.values()
               if v.kind is VehicleKind.EV]
        r_dep = -w.w_depletion * depletions * w.depletion_penalty
        if evs:
            mean_soc = sum(v.soc for v in evs) / len(evs)
            mean_speed = sum(v.speed for v in evs) / len(evs) / v_max
        else:
            mean_soc = 0.0
            mean_speed = 0.0
        if ev_dist_before:
            disp = 0.0
            for vid, before in ev_dist_before.items():
                veh = self.world.vehicles.get(vid)
                if veh is not None:
                    disp += veh.distance_travelled - before
            step_units = v_max * cfg.dt / cfg.network.meters_per_unit
            dist_norm = disp / (step_units * len(ev_dist_before))
        else:
            dist_norm = 0.0
        r_soc = w.w_soc * mean_soc
        r_dist = w.w_distance * dist_norm
        r_speed = w.w_speed * mean_speed
        if evs:
            self.stats["soc_sum"] += mean_soc
            self.stats["soc_steps"] += 1
        total = r_dep + r_soc + r_dist + r_speed
        return total, {"r_depletion": r_dep, "r_soc": r_soc,
                       "r_distance": r_dist, "r_speed": r_speed}

    # -- episode statistics ---------------------------------------------

    def summary(self) -> dict:
        s = self.stats
        return {
            "episode_reward": s["episode_reward"],
            "evs_spawned": s["evs_spawned"],
            "depleted": s["depleted"],
            "depletion_proportion": (s["depleted"] / s["evs_spawned"]
                                     if s["evs_spawned"] else 0.0),
            "avg_range_units": (float(np.mean(s["ranges"]))
                                if s["ranges"] else 0.0),
            "avg_soc": (s["soc_sum"] / s["soc_steps"]
                        if s["soc_steps"] else 0.0),
            "dispatches": s["dispatches"],
        }
