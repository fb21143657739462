"""Deterministic kinematic highway simulator.

Straight multi-lane road, kinematic bicycle vehicles, IDM/MOBIL surrounding
traffic, oriented-box collisions and time-to-collision.

Coordinates: ``x`` grows toward the target, ``y`` grows toward the rightmost
lane, lane 0 is the leftmost lane and a positive heading points right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .actions import ActionId
from .errors import ConfigError, DomainError

VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 2.0
SPEED_CAP_FACTOR = 1.2
LANE_REACHED_TOL = 0.2


@dataclass(frozen=True)
class RoadGeometry:
    lane_count: int = 4
    lane_length: float = 1000.0
    lane_width: float = 4.0
    speed_limit: float = 30.0

    def __post_init__(self):
        if self.lane_count < 2:
            raise ConfigError(f"lane_count must be >= 2, got {self.lane_count}")
        for name in ("lane_length", "lane_width", "speed_limit"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def road_width(self) -> float:
        return self.lane_count * self.lane_width

    @property
    def max_speed(self) -> float:
        return SPEED_CAP_FACTOR * self.speed_limit

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        return min(max(int(math.floor(y / self.lane_width)), 0), self.lane_count - 1)

    def clamp_lane(self, lane: int) -> int:
        return min(max(lane, 0), self.lane_count - 1)


@dataclass
class VehicleState:
    x: float
    y: float
    v_x: float
    v_y: float = 0.0
    heading: float = 0.0
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    lane_index: int = 0

    @property
    def speed(self) -> float:
        return math.hypot(self.v_x, self.v_y)

    def as_tuple(self) -> tuple:
        return (self.x, self.y, self.v_x, self.v_y, self.heading)


@dataclass(frozen=True)
class LowLevelControl:
    acceleration: float = 0.0
    steering: float = 0.0


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 1.5
    b: float = 2.0
    s0: float = 2.0
    time_headway: float = 1.5
    delta: float = 4.0
    v0: float = 30.0
    b_max: float = 9.0


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.3
    threshold: float = 0.2
    safe_braking: float = 2.0
    period: float = 1.0


@dataclass(frozen=True)
class ControllerGains:
    k_speed: float = 2.0
    k_position: float = 1.5
    k_heading: float = 1.0
    max_steering: float = math.pi / 6
    max_acceleration: float = 5.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario sampler settings; defaults reproduce the 30-vehicle benchmark."""

    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    sv_count: int = 30
    spacing_min: float = 20.0
    spacing_max: float = 70.0
    sv_speed_min: float = 20.0
    sv_speed_max: float = 25.0
    ego_speed: float = 20.0
    target_distance: float = 500.0
    ego_x_min: float = 100.0
    ego_x_max: float = 300.0
    ego_clearance: float = 15.0
    dt: float = 0.05
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    gains: ControllerGains = field(default_factory=ControllerGains)

    def __post_init__(self):
        if self.sv_count < 0:
            raise ConfigError("sv_count must be >= 0")
        if not 0 < self.spacing_min <= self.spacing_max:
            raise ConfigError("need 0 < spacing_min <= spacing_max")
        if self.spacing_min < VEHICLE_LENGTH:
            raise ConfigError("spacing_min shorter than a vehicle")
        if not 0 <= self.sv_speed_min <= self.sv_speed_max:
            raise ConfigError("need 0 <= sv_speed_min <= sv_speed_max")
        if self.ego_x_min > self.ego_x_max:
            raise ConfigError("need ego_x_min <= ego_x_max")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")


@dataclass
class SvDriver:
    desired_speed: float
    target_lane: int
    next_lane_check: float


@dataclass
class World:
    geometry: RoadGeometry
    ego: VehicleState
    svs: list[VehicleState]
    drivers: list[SvDriver]
    target: tuple[float, int]
    ego_target_lane: int
    ego_target_speed: float
    dt: float = 0.05
    step_count: int = 0
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    gains: ControllerGains = field(default_factory=ControllerGains)
    # False removes the ego from traffic entirely (SV-only runs).
    ego_active: bool = True
    rng: np.random.Generator = field(default=None, compare=False, repr=False)

    @property
    def sim_time(self) -> float:
        return self.step_count * self.dt

    def copy(self) -> "World":
        return replace(
            self,
            ego=replace(self.ego),
            svs=[replace(v) for v in self.svs],
            drivers=[replace(d) for d in self.drivers],
        )


class MetaCommand(NamedTuple):
    control: LowLevelControl
    target_lane: int
    target_speed: float


# ---------------------------------------------------------------------------
# Spawning


def spawn_scenario(seed: int, config: ScenarioConfig = ScenarioConfig()) -> World:
    """Sample a fresh scenario; equal seeds give field-for-field equal worlds."""
    geo = config.geometry
    rng = np.random.default_rng(seed)
    n = config.sv_count
    per_lane_cap = int(geo.lane_length // config.spacing_min) + 1
    if n > per_lane_cap * geo.lane_count:
        raise ConfigError(
            f"{n} vehicles cannot fit on {geo.lane_count} lanes of {geo.lane_length} m "
            f"with spacing >= {config.spacing_min} m"
        )

    ego_x = float(rng.uniform(config.ego_x_min, config.ego_x_max))
    ego_lane = 0
    ego = VehicleState(
        x=ego_x, y=geo.lane_center(ego_lane), v_x=config.ego_speed, lane_index=ego_lane
    )

    lanes = rng.integers(0, geo.lane_count, size=n) if n else np.zeros(0, dtype=int)
    svs: list[VehicleState] = []
    drivers: list[SvDriver] = []
    for lane in range(geo.lane_count):
        count = int(np.sum(lanes == lane))
        if count == 0:
            continue
        xs = _sample_chain(rng, count, ego_x, lane == ego_lane, config)
        for x in xs:
            speed = float(rng.uniform(config.sv_speed_min, config.sv_speed_max))
            svs.append(VehicleState(x=float(x), y=geo.lane_center(lane), v_x=speed, lane_index=lane))
            drivers.append(
                SvDriver(
                    desired_speed=min(speed, geo.speed_limit),
                    target_lane=lane,
                    next_lane_check=float(rng.uniform(0.0, config.mobil.period)),
                )
            )

    return World(
        geometry=geo,
        ego=ego,
        svs=svs,
        drivers=drivers,
        target=(ego_x + config.target_distance, geo.lane_count - 1),
        ego_target_lane=ego_lane,
        ego_target_speed=config.ego_speed,
        dt=config.dt,
        idm=config.idm,
        mobil=config.mobil,
        gains=config.gains,
        rng=rng,
    )


def make_world(
    ego: VehicleState,
    svs: Sequence[VehicleState] = (),
    geometry: RoadGeometry = RoadGeometry(),
    target: Optional[tuple[float, int]] = None,
    dt: float = 0.05,
) -> World:
    """Hand-built world: SVs keep their lane and cruise at their current speed."""
    svs = list(svs)
    drivers = [SvDriver(desired_speed=v.v_x, target_lane=v.lane_index, next_lane_check=math.inf) for v in svs]
    if target is None:
        target = (ego.x + 500.0, geometry.lane_count - 1)
    return World(
        geometry=geometry,
        ego=ego,
        svs=svs,
        drivers=drivers,
        target=target,
        ego_target_lane=ego.lane_index,
        ego_target_speed=ego.v_x,
        dt=dt,
    )


def _sample_chain(rng, count, ego_x, shares_ego_lane, config, max_tries=200):
    geo = config.geometry
    for _ in range(max_tries):
        gaps = rng.uniform(config.spacing_min, config.spacing_max, size=count - 1)
        offsets = np.concatenate([[0.0], np.cumsum(gaps)])
        span = offsets[-1]
        if span > geo.lane_length:
            continue
        # chain straddles the ego, jittered by up to one maximal gap either way
        start = ego_x - rng.uniform(0.0, span) + rng.uniform(-config.spacing_max, config.spacing_max)
        xs = start + offsets
        if shares_ego_lane and np.any(np.abs(xs - ego_x) < config.ego_clearance):
            continue
        return xs
    raise ConfigError("could not place surrounding vehicles without overlapping the ego")


# ---------------------------------------------------------------------------
# Controllers


def idm_acceleration(
    gap: float,
    v: float,
    v_leader: float,
    params: IdmParams = IdmParams(),
    desired_speed: Optional[float] = None,
) -> float:
    """IDM car-following acceleration; ``gap`` is bumper to bumper (inf = free road)."""
    if not gap > 0:
        raise DomainError(f"IDM gap must be positive, got {gap}")
    v0 = params.v0 if desired_speed is None else desired_speed
    free = (max(v, 0.0) / v0) ** params.delta if v0 > 0 else 1.0
    interaction = 0.0
    if math.isfinite(gap):
        dv = v - v_leader
        dynamic = v * params.time_headway + v * dv / (2.0 * math.sqrt(params.a_max * params.b))
        s_star = params.s0 + max(0.0, dynamic)
        interaction = (s_star / gap) ** 2
    a = params.a_max * (1.0 - free - interaction)
    return min(max(a, -params.b_max), params.a_max)


def steering_toward(v: VehicleState, lane_y: float, gains: ControllerGains) -> float:
    # lateral error -> lateral speed command -> heading reference -> steering
    speed = max(v.speed, 1.0)
    lateral_speed = gains.k_position * (lane_y - v.y)
    heading_ref = math.asin(min(max(lateral_speed / speed, -1.0), 1.0))
    heading_ref = min(max(heading_ref, -math.pi / 4), math.pi / 4)
    steering = math.atan(gains.k_heading * (heading_ref - v.heading))
    return min(max(steering, -gains.max_steering), gains.max_steering)


def meta_action_controller(
    v: VehicleState,
    action: ActionId,
    target_lane: int,
    target_speed: float,
    geometry: RoadGeometry = RoadGeometry(),
    gains: ControllerGains = ControllerGains(),
) -> MetaCommand:
    """Translate a discrete decision into acceleration/steering.

    Lane changes retarget relative to the vehicle's current lane and fall back
    to keeping the lane at the road edges. The returned target lane and speed
    must be fed back on the next call (the lane target latches).
    """
    action = ActionId(action)
    if action == ActionId.LEFT_LANE_CHANGE:
        candidate = v.lane_index - 1
        if candidate >= 0:
            target_lane = candidate
    elif action == ActionId.RIGHT_LANE_CHANGE:
        candidate = v.lane_index + 1
        if candidate < geometry.lane_count:
            target_lane = candidate
    elif action == ActionId.ACCELERATE:
        target_speed = min(target_speed + 1.0, geometry.speed_limit)
    elif action == ActionId.DECELERATE:
        target_speed = max(target_speed - 1.0, 0.0)

    accel = gains.k_speed * (target_speed - v.v_x)
    accel = min(max(accel, -gains.max_acceleration), gains.max_acceleration)
    steering = steering_toward(v, geometry.lane_center(target_lane), gains)
    return MetaCommand(LowLevelControl(accel, steering), target_lane, target_speed)


# ---------------------------------------------------------------------------
# Dynamics


def integrate_vehicle(v: VehicleState, control: LowLevelControl, dt: float, geometry: RoadGeometry) -> None:
    """Kinematic bicycle step (explicit Euler, position uses the current velocity)."""
    speed = v.speed
    v.x += v.v_x * dt
    v.y += v.v_y * dt
    slip = math.atan(0.5 * math.tan(control.steering))
    v.heading += speed * math.sin(slip) / (v.length / 2.0) * dt
    speed = min(max(speed + control.acceleration * dt, 0.0), geometry.max_speed)
    v.v_x = speed * math.cos(v.heading + slip)
    v.v_y = speed * math.sin(v.heading + slip)
    v.lane_index = geometry.lane_of(v.y)


class _Traffic:
    """Per-step lane occupancy index used for leader/follower queries."""

    def __init__(self, world: World):
        self.vehicles: list[VehicleState] = list(world.svs)
        self.lanes: list[set[int]] = []
        for v, d in zip(world.svs, world.drivers):
            self.lanes.append({v.lane_index, d.target_lane})
        if world.ego_active:
            self.vehicles.append(world.ego)
            self.lanes.append({world.ego.lane_index, world.ego_target_lane})
        self.ego_slot = len(world.svs) if world.ego_active else None

    def neighbours(self, lane: int, x: float, exclude: int):
        leader = follower = None
        lx, fx = math.inf, -math.inf
        for j, v in enumerate(self.vehicles):
            if j == exclude or lane not in self.lanes[j]:
                continue
            if v.x >= x:
                if v.x < lx or (v.x == lx and j < leader):
                    leader, lx = j, v.x
            elif v.x > fx:
                follower, fx = j, v.x
        return leader, follower


def _gap(follower: VehicleState, leader: VehicleState) -> float:
    return leader.x - follower.x - 0.5 * (leader.length + follower.length)


def _follow_accel(world: World, traffic: _Traffic, i: Optional[int], j: Optional[int], desired: list[float]) -> float:
    """IDM acceleration of vehicle slot ``i`` behind slot ``j`` (None = no vehicle / free road)."""
    if i is None:
        return 0.0
    me = traffic.vehicles[i]
    if j is None:
        return idm_acceleration(math.inf, me.v_x, 0.0, world.idm, desired[i])
    gap = _gap(me, traffic.vehicles[j])
    if gap <= 0:
        return -world.idm.b_max
    return idm_acceleration(gap, me.v_x, traffic.vehicles[j].v_x, world.idm, desired[i])


def _mobil_choice(world: World, traffic: _Traffic, i: int, desired: list[float]) -> Optional[int]:
    me = traffic.vehicles[i]
    lane = me.lane_index
    p = world.mobil
    old_lead, old_follow = traffic.neighbours(lane, me.x, i)
    self_a = _follow_accel(world, traffic, i, old_lead, desired)
    old_follow_a = _follow_accel(world, traffic, old_follow, i, desired)
    old_follow_pred = _follow_accel(world, traffic, old_follow, old_lead, desired)
    best, best_gain = None, p.threshold
    for cand in (lane - 1, lane + 1):
        if not 0 <= cand < world.geometry.lane_count:
            continue
        new_lead, new_follow = traffic.neighbours(cand, me.x, i)
        if new_lead is not None and _gap(me, traffic.vehicles[new_lead]) <= 0:
            continue
        if new_follow is not None and _gap(traffic.vehicles[new_follow], me) <= 0:
            continue
        new_follow_pred = _follow_accel(world, traffic, new_follow, i, desired)
        if new_follow_pred < -p.safe_braking:
            continue
        self_pred = _follow_accel(world, traffic, i, new_lead, desired)
        if self_pred < -p.safe_braking:
            continue
        new_follow_a = _follow_accel(world, traffic, new_follow, new_lead, desired)
        gain = self_pred - self_a + p.politeness * (
            new_follow_pred - new_follow_a + old_follow_pred - old_follow_a
        )
        if gain > best_gain:
            best, best_gain = cand, gain
    return best


def step_world(w: World, ego_control: LowLevelControl) -> World:
    """Advance the world by one ``dt`` in place and return it."""
    geo = w.geometry
    traffic = _Traffic(w)
    desired = [d.desired_speed for d in w.drivers]
    if w.ego_active:
        desired.append(max(w.ego_target_speed, 1.0))
    t = w.sim_time

    # Lane-change decisions are sequential so later vehicles see earlier merges.
    for i, (v, d) in enumerate(zip(w.svs, w.drivers)):
        if t < d.next_lane_check:
            continue
        d.next_lane_check = t + w.mobil.period
        settled = d.target_lane == v.lane_index and abs(v.y - geo.lane_center(v.lane_index)) < LANE_REACHED_TOL
        if not settled:
            continue
        choice = _mobil_choice(w, traffic, i, desired)
        if choice is not None:
            d.target_lane = choice
            traffic.lanes[i] = {v.lane_index, choice}

    controls = []
    for i, (v, d) in enumerate(zip(w.svs, w.drivers)):
        accel = math.inf
        for lane in traffic.lanes[i]:
            leader, _ = traffic.neighbours(lane, v.x, i)
            accel = min(accel, _follow_accel(w, traffic, i, leader, desired))
        steering = steering_toward(v, geo.lane_center(d.target_lane), w.gains)
        controls.append(LowLevelControl(accel, steering))

    for v, c in zip(w.svs, controls):
        integrate_vehicle(v, c, w.dt, geo)
    if w.ego_active:
        integrate_vehicle(w.ego, ego_control, w.dt, geo)
    w.step_count += 1
    return w


# ---------------------------------------------------------------------------
# Geometry queries


def _corners(v: VehicleState) -> np.ndarray:
    c, s = math.cos(v.heading), math.sin(v.heading)
    hl, hw = v.length / 2.0, v.width / 2.0
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([v.x, v.y])


def check_collision(a: VehicleState, b: VehicleState) -> bool:
    """Separating-axis test on the two oriented rectangles (touching is not a hit)."""
    reach = 0.5 * (math.hypot(a.length, a.width) + math.hypot(b.length, b.width))
    if abs(a.x - b.x) > reach or abs(a.y - b.y) > reach:
        return False
    ca, cb = _corners(a), _corners(b)
    for h in (a.heading, b.heading):
        for axis in ((math.cos(h), math.sin(h)), (-math.sin(h), math.cos(h))):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() <= pb.min() or pb.max() <= pa.min():
                return False
    return True


def ttc(follower: VehicleState, leader: VehicleState) -> float:
    """Euclidean centre distance over longitudinal closing speed; inf when not closing."""
    if leader.x < follower.x:
        raise DomainError("leader is behind follower")
    closing = follower.v_x - leader.v_x
    if closing <= 0:
        return math.inf
    return math.hypot(leader.x - follower.x, leader.y - follower.y) / closing


def lane_members(w: World, lane: int) -> list[VehicleState]:
    """SVs occupying ``lane``, including ones merging into it."""
    return [v for v, d in zip(w.svs, w.drivers) if v.lane_index == lane or d.target_lane == lane]


def front_vehicle(w: World, lane: int) -> Optional[VehicleState]:
    ego = w.ego
    ahead = [v for v in lane_members(w, lane) if v.x >= ego.x]
    return min(ahead, key=lambda v: v.x) if ahead else None


def rear_vehicle(w: World, lane: int) -> Optional[VehicleState]:
    ego = w.ego
    behind = [v for v in lane_members(w, lane) if v.x < ego.x]
    return max(behind, key=lambda v: v.x) if behind else None


def front_rear_ttc(w: World, lane: int) -> tuple[float, float]:
    """(TTC to the front vehicle, TTC of the rear vehicle onto the ego) in ``lane``."""
    front = front_vehicle(w, lane)
    rear = rear_vehicle(w, lane)
    t_front = ttc(w.ego, front) if front is not None else math.inf
    t_rear = ttc(rear, w.ego) if rear is not None else math.inf
    return t_front, t_rear


def ego_collides(w: World) -> bool:
    return any(check_collision(w.ego, v) for v in w.svs)


def sv_collision_pairs(w: World) -> list[tuple[int, int]]:
    hits = []
    for i in range(len(w.svs)):
        for j in range(i + 1, len(w.svs)):
            if check_collision(w.svs[i], w.svs[j]):
                hits.append((i, j))
    return hits
