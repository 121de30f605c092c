"""Traffic module: IDM, MOBIL, spawning and the advance loop."""

import math

import numpy as np
import pytest

from med_dispatch.battery import AmbientParams, BatteryState, VehicleBodyParams
from med_dispatch.traffic import (EMERGENCY_DECEL, SPEED_CAP_FACTOR,
                                  DriverKind, IdmParams, MobilParams,
                                  RoadNetwork, TrafficConfig, Vehicle,
                                  VehicleKind, World, bumper_gap,
                                  idm_acceleration, mobil_decision)

IDM = IdmParams()
MOBIL = MobilParams()


def make_vehicle(vid=0, x=0.0, lane=0, speed=20.0, desired=25.0,
                 kind=VehicleKind.GAS, length=5.0):
    return Vehicle(vid=vid, kind=kind, driver=DriverKind.AUTONOMOUS, x=x,
                   lane=lane, speed=speed, length=length,
                   desired_speed=desired, body=VehicleBodyParams())


def make_world(net=None, cfg=None, seed=0):
    return World(net or RoadNetwork(), IDM, MOBIL, cfg or TrafficConfig(),
                 VehicleBodyParams(), VehicleBodyParams(mass=12000.0),
                 AmbientParams(), np.random.default_rng(seed))


# -- IDM -----------------------------------------------------------------------

def test_idm_free_flow_equilibrium():
    ego = make_vehicle(speed=25.0, desired=25.0)
    assert idm_acceleration(ego, None, IDM) == pytest.approx(0.0, abs=1e-12)


def test_idm_standstill_max_accel():
    ego = make_vehicle(speed=0.0)
    assert idm_acceleration(ego, None, IDM) == pytest.approx(IDM.max_accel)


def test_idm_stationary_leader_oracle():
    # stationary leader at bumper gap 2*s0, ego at 10 m/s
    gap = 2 * IDM.min_gap
    ego = make_vehicle(vid=0, x=0.0, speed=10.0)
    leader = make_vehicle(vid=1, x=gap + ego.length, speed=0.0)
    assert bumper_gap(ego, leader, 1.0) == pytest.approx(gap)
    s_star = IDM.min_gap + 10.0 * IDM.time_headway + 10.0 * 10.0 / (
        2.0 * math.sqrt(IDM.max_accel * IDM.comfortable_decel))
    expected = IDM.max_accel * (1.0 - (10.0 / 25.0) ** 4 - (s_star / gap) ** 2)
    expected = max(expected, -EMERGENCY_DECEL)
    assert idm_acceleration(ego, leader, IDM) == pytest.approx(expected,
                                                               rel=1e-12)
    assert expected < -IDM.comfortable_decel  # strong braking


def test_idm_zero_gap_emergency():
    ego = make_vehicle(vid=0, x=0.0, speed=10.0)
    leader = make_vehicle(vid=1, x=5.0, speed=10.0)  # bumper gap 0
    assert idm_acceleration(ego, leader, IDM) == -EMERGENCY_DECEL


# -- MOBIL ----------------------------------------------------------------------

def _neighborhood(world, veh):
    return world.neighborhood(veh)


def test_mobil_identical_traffic_stays():
    world = make_world()
    vehicles = []
    for lane in range(3):
        for x in (100.0, 150.0, 200.0):
            v = world.add_vehicle(VehicleKind.GAS, DriverKind.AUTONOMOUS,
                                  x=x, lane=lane, speed=20.0,
                                  desired_speed=25.0, battery=None)
            vehicles.append(v)
    ego = vehicles[1]  # middle of lane 0
    assert mobil_decision(ego, world.neighborhood(ego), IDM, MOBIL) == "stay"


def test_mobil_changes_to_empty_lane():
    world = make_world()
    ego = world.add_vehicle(VehicleKind.GAS, DriverKind.AUTONOMOUS, x=100.0,
                            lane=0, speed=20.0, desired_speed=25.0,
                            battery=None)
    world.add_vehicle(VehicleKind.GAS, DriverKind.AUTONOMOUS, x=120.0,
                      lane=0, speed=5.0, desired_speed=25.0, battery=None)
    move = mobil_decision(ego, world.neighborhood(ego), IDM, MOBIL)
    assert move == "right"  # lane 1 is empty


def test_mobil_safety_veto():
    world = make_world()
    ego = world.add_vehicle(VehicleKind.GAS, DriverKind.AUTONOMOUS, x=100.0,
                            lane=0, speed=20.0, desired_speed=25.0,
                            battery=None)
    world.add_vehicle(VehicleKind.GAS, DriverKind.AUTONOMOUS, x=115.0,
                      lane=0, speed=2.0, desired_speed=25.0, battery=None)
    # fast target-lane follower right behind: forced braking beyond the limit
    world.add_vehicle(VehicleKind.GAS, DriverKind.AUTONOMOUS, x=94.0,
                      lane=1, speed=35.0, desired_speed=35.0, battery=None)
    move = mobil_decision(ego, world.neighborhood(ego), IDM, MOBIL)
    assert move == "stay"


# -- spawning ---------------------------------------------------------------------

def test_zero_rates_never_spawn():
    world = make_world(cfg=TrafficConfig(main_rate=0.0, ramp_rate=0.0))
    for _ in range(200):
        world.spawn()
        world.advance(1.0)
    assert not world.vehicles


def test_spawn_deterministic():
    def run(seed):
        world = make_world(seed=seed)
        log = []
        for _ in range(300):
            for v in world.spawn():
                log.append((v.vid, v.kind.value, v.x, v.lane, v.speed))
            world.advance(1.0)
        return log

    assert run(7) == run(7)
    assert run(7) != run(8)


def test_spawn_rate_binomial():
    cfg = TrafficConfig(main_rate=0.12, ramp_rate=0.0)
    world = make_world(cfg=cfg, seed=3)
    n = 2000
    arrivals = 0
    for _ in range(n):
        arrivals += len(world.spawn()) + 0
        world.advance(1.0)
    arrivals += len(world._pending[0])  # queued but not yet placed
    expected = cfg.main_rate * n
    sigma = math.sqrt(n * cfg.main_rate * (1 - cfg.main_rate))
    assert abs(arrivals - expected) <= 4 * sigma


# -- advance -----------------------------------------------------------------------

def test_single_vehicle_free_flow():
    world = make_world(cfg=TrafficConfig(main_rate=0.0, ramp_rate=0.0,
                                         speed_noise=0.0))
    v = world.add_vehicle(VehicleKind.EV, DriverKind.AUTONOMOUS, x=100.0,
                          lane=1, speed=25.0, desired_speed=25.0,
                          battery=BatteryState(capacity=4e6, charge=4e6))
    world.advance(1.0)
    assert v.speed == pytest.approx(25.0, abs=1e-9)
    assert v.x == pytest.approx(125.0, abs=1e-6)


def test_car_following_reaches_equilibrium_gap():
    # lane changes disabled so the follower cannot simply overtake
    world = World(RoadNetwork(), IDM, MobilParams(changing_threshold=1e9),
                  TrafficConfig(main_rate=0.0, ramp_rate=0.0,
                                speed_noise=0.0),
                  VehicleBodyParams(), VehicleBodyParams(mass=12000.0),
                  AmbientParams(), np.random.default_rng(0))
    world.add_vehicle(VehicleKind.GAS, DriverKind.AUTONOMOUS, x=300.0, lane=0,
                      speed=20.0, desired_speed=20.0, battery=None)
    ego = world.add_vehicle(VehicleKind.GAS, DriverKind.AUTONOMOUS, x=100.0,
                            lane=0, speed=20.0, desired_speed=25.0,
                            battery=None)
    for _ in range(150):
        world.advance(1.0)
        # keep the pair on the road: recentre when approaching the end
        lead = [v for v in world.vehicles.values() if v is not ego][0]
        if lead.x > 3000:
            shift = lead.x - 1000
            lead.x -= shift
            ego.x -= shift
    lead = [v for v in world.vehicles.values() if v is not ego][0]
    gap = bumper_gap(ego, lead, 1.0)
    # steady following at v < v0: gap = (s0 + vT) / sqrt(1 - (v/v0)^4)
    s_eq = (IDM.min_gap + ego.speed * IDM.time_headway) / math.sqrt(
        1.0 - (ego.speed / ego.desired_speed) ** 4)
    assert gap == pytest.approx(s_eq, rel=0.02)
    assert ego.speed == pytest.approx(20.0, rel=0.02)


def test_dense_traffic_no_overlap_and_speed_bounds():
    cfg = TrafficConfig(main_rate=0.4, ramp_rate=0.15)
    net = RoadNetwork(length=1200.0, ramp_positions=(100.0, 400.0, 700.0, 1000.0))
    world = make_world(net=net, cfg=cfg, seed=11)
    cap = SPEED_CAP_FACTOR * max(cfg.desired_speed, cfg.med_desired_speed)
    for _ in range(2000):
        world.spawn()
        world.advance(1.0)
        for lane, seq in world.lane_sorted().items():
            for a, b in zip(seq, seq[1:]):
                assert bumper_gap(a, b, 1.0) > 0.0, "same-lane overlap"
        for v in world.vehicles.values():
            assert 0.0 <= v.speed <= cap + 1e-9


def test_advance_rejects_bad_dt():
    with pytest.raises(ValueError):
        make_world().advance(0.0)


def test_network_validation():
    with pytest.raises(ValueError):
        RoadNetwork(lanes=2)
    with pytest.raises(ValueError):
        RoadNetwork(ramp_positions=(0.0,))
    with pytest.raises(ValueError):
        RoadNetwork(ramp_positions=(5000.0,))


def test_trajectory_determinism():
    def run(seed):
        world = make_world(seed=seed)
        for _ in range(200):
            world.spawn()
            world.advance(1.0)
        return [(v.vid, v.x, v.lane, v.speed)
                for v in world.ordered()]

    assert run(5) == run(5)
