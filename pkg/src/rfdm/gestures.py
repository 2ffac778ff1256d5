"""Parametric hand-gesture scenes: labeled trajectories plus static clutter.

Seven gesture classes are realized as radial range templates, since a
range-Doppler pipeline only observes radial motion. Each template is an
offset trace added to the placement's base range, active over a centered
sub-window of the gesture so swipe pairs are exact time reversals of each
other and push/pull are exact range mirrors. Tangential motions (the four
swipes) project onto the radar line of sight with a cos(azimuth) factor.

A hand is modeled as 3..5 point scatterers with small static range offsets
and low-frequency positional jitter; environments contribute preset counts
of static clutter scatterers.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PlacementError
from .radar import DataCube, RadarConfig, Scatterer, synthesize_cube
from .seeding import child_seed, substream


class GestureClass(enum.Enum):
    SWIPE_LEFT = "SwipeLeft"
    SWIPE_RIGHT = "SwipeRight"
    SWIPE_UP = "SwipeUp"
    SWIPE_DOWN = "SwipeDown"
    PUSH = "Push"
    PULL = "Pull"
    CIRCLE = "Circle"

    @classmethod
    def from_name(cls, name: str) -> "GestureClass":
        for g in cls:
            if g.value == name:
                return g
        raise ConfigError(f"unknown gesture class {name!r}")


GESTURE_CLASSES = tuple(GestureClass)
N_CLASSES = len(GESTURE_CLASSES)


class Environment(enum.Enum):
    CLASSROOM = "Classroom"
    OFFICE = "Office"
    CONFERENCE_HALL = "ConferenceHall"

    @classmethod
    def from_name(cls, name: str) -> "Environment":
        for e in cls:
            if e.value == name:
                return e
        raise ConfigError(f"unknown environment {name!r}")


# clutter scatterer count and base reflectivity per environment
ENVIRONMENT_CLUTTER = {
    Environment.CLASSROOM: (8, 0.5),
    Environment.OFFICE: (12, 0.8),
    Environment.CONFERENCE_HALL: (4, 0.3),
}


@dataclass(frozen=True)
class ScenePlacement:
    base_range: float = 0.75      # m
    azimuth_deg: float = 0.0
    environment: Environment = Environment.CLASSROOM

    def validate(self) -> None:
        if not (0.3 <= self.base_range <= 2.0):
            raise ConfigError(f"base_range {self.base_range} outside [0.3, 2.0] m")
        if abs(self.azimuth_deg) > 60.0:
            raise ConfigError(f"|azimuth| {self.azimuth_deg} exceeds 60 deg")


@dataclass(frozen=True)
class UserProfile:
    speed_scale: float = 1.0      # multiplies trajectory velocity
    amplitude_scale: float = 1.0  # multiplies echo amplitude
    extent_scale: float = 1.0     # multiplies motion extent
    jitter_sigma: float = 0.002   # per-chirp positional jitter std [m]

    def validate(self) -> None:
        for name in ("speed_scale", "amplitude_scale", "extent_scale"):
            v = getattr(self, name)
            if not (0.5 <= v <= 1.5):
                raise ConfigError(f"{name} {v} outside [0.5, 1.5]")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be >= 0")


def _smoothstep(p):
    return p * p * (3.0 - 2.0 * p)


def _smoothstep_d(p):
    return 6.0 * p * (1.0 - p)


# (extent[m], active fraction of the gesture window, tangential?)
# short active windows keep peak radial speeds in the 0.5..1.2 m/s band,
# a few Doppler bins at the reference chirp timing
_TEMPLATE_SHAPE = {
    GestureClass.SWIPE_LEFT: (0.10, 0.35, True),
    GestureClass.SWIPE_RIGHT: (0.10, 0.35, True),
    GestureClass.SWIPE_UP: (0.05, 0.5, True),
    GestureClass.SWIPE_DOWN: (0.05, 0.5, True),
    GestureClass.PUSH: (0.15, 0.3, False),
    GestureClass.PULL: (0.15, 0.3, False),
    GestureClass.CIRCLE: (0.08, 0.5, False),
}


def template_trace(
    gesture: GestureClass,
    t,
    duration: float,
    extent_scale: float = 1.0,
    speed_scale: float = 1.0,
    cos_az: float = 1.0,
):
    """Radial offset [m] and velocity [m/s] of a gesture template.

    The active motion occupies a window of the gesture duration centered at
    duration/2 and shortened by speed_scale; outside it the hand holds its
    boundary position.
    """
    t = np.asarray(t, dtype=float)
    amp, frac, tangential = _TEMPLATE_SHAPE[gesture]
    amp = amp * extent_scale * (cos_az if tangential else 1.0)
    frac = min(frac / speed_scale, 1.0)
    u0 = 0.5 * (1.0 - frac)
    p = np.clip((t / duration - u0) / frac, 0.0, 1.0)
    dp_dt = np.where((p > 0.0) & (p < 1.0), 1.0 / (frac * duration), 0.0)

    if gesture is GestureClass.SWIPE_LEFT:
        off = amp * np.sin(2 * np.pi * p)
        d = amp * 2 * np.pi * np.cos(2 * np.pi * p)
    elif gesture is GestureClass.SWIPE_RIGHT:
        off = -amp * np.sin(2 * np.pi * p)
        d = -amp * 2 * np.pi * np.cos(2 * np.pi * p)
    elif gesture is GestureClass.SWIPE_UP:
        # one slow smooth drift toward the radar
        off = -amp * _smoothstep(p)
        d = -amp * _smoothstep_d(p)
    elif gesture is GestureClass.SWIPE_DOWN:
        # same net drift away, executed as two faster bursts
        p2 = np.clip(2.0 * p, 0.0, 1.0)
        p3 = np.clip(2.0 * p - 1.0, 0.0, 1.0)
        off = amp * 0.5 * (_smoothstep(p2) + _smoothstep(p3))
        d = amp * (_smoothstep_d(p2) * (p < 0.5) + _smoothstep_d(p3) * (p >= 0.5))
    elif gesture is GestureClass.PUSH:
        off = amp * (1.0 - 2.0 * p)
        d = amp * (-2.0) * np.ones_like(p)
    elif gesture is GestureClass.PULL:
        off = -amp * (1.0 - 2.0 * p)
        d = amp * 2.0 * np.ones_like(p)
    elif gesture is GestureClass.CIRCLE:
        off = -amp * (1.0 - np.cos(2 * np.pi * p))
        d = -amp * 2 * np.pi * np.sin(2 * np.pi * p)
    else:  # pragma: no cover
        raise ConfigError(f"no template for {gesture}")
    return off, d * dp_dt


@dataclass
class GestureScene:
    gesture: GestureClass
    placement: ScenePlacement
    user: UserProfile
    hand: list = field(default_factory=list)     # moving Scatterers
    clutter: list = field(default_factory=list)  # static Scatterers
    meta: dict = field(default_factory=dict)

    @property
    def scatterers(self) -> list:
        return list(self.hand) + list(self.clutter)


def _jitter_components(rng: np.random.Generator, sigma: float):
    """Three seeded sinusoids with total std == sigma (deterministic jitter)."""
    freqs = rng.uniform(2.0, 8.0, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    raw = rng.uniform(0.5, 1.0, size=3)
    if sigma <= 0.0:
        return freqs, phases, np.zeros(3)
    amps = raw * (sigma / math.sqrt(np.sum(raw**2) / 2.0))
    return freqs, phases, amps


def make_gesture_scene(
    gesture: GestureClass,
    placement: ScenePlacement,
    user: UserProfile,
    rng_seed: int,
    duration: float = 1.6,
    config: RadarConfig | None = None,
) -> GestureScene:
    """Build a deterministic scene for one gesture instance.

    Raises PlacementError if the realized hand motion would leave
    [0.3 m, max_range)."""
    placement.validate()
    user.validate()
    cfg = config or RadarConfig()
    rng = substream(rng_seed, "scene")
    cos_az = math.cos(math.radians(placement.azimuth_deg))

    n_points = int(rng.integers(3, 6))
    offsets = rng.uniform(-0.02, 0.02, size=n_points)
    amps = user.amplitude_scale * rng.uniform(0.2, 0.4, size=n_points)
    hand = []
    for i in range(n_points):
        jf, jp, ja = _jitter_components(rng, user.jitter_sigma)

        def traj(t, _off=offsets[i], _jf=jf, _jp=jp, _ja=ja):
            t = np.asarray(t, dtype=float)
            base_off, v = template_trace(
                gesture, t, duration, user.extent_scale, user.speed_scale, cos_az
            )
            arg = 2 * np.pi * np.multiply.outer(_jf, t) + _jp[:, None]
            jit = (_ja[:, None] * np.sin(arg)).sum(axis=0)
            jit_v = (_ja[:, None] * 2 * np.pi * _jf[:, None] * np.cos(arg)).sum(axis=0)
            return placement.base_range + _off + base_off + jit, v + jit_v

        hand.append(Scatterer(traj, float(amps[i]), label=f"hand{i}"))

    # verify realized hand motion stays inside the gesture zone
    probe = np.linspace(0.0, duration, 512)
    for sc in hand:
        r, v = sc.trajectory(probe)
        if r.min() < 0.3 or r.max() >= cfg.max_range:
            raise PlacementError(
                "%s at base %.2f m drives range to [%.3f, %.3f] m, outside [0.3, %.1f) m"
                % (gesture.value, placement.base_range, r.min(), r.max(), cfg.max_range)
            )
        if np.max(np.abs(v)) >= cfg.max_doppler_velocity:
            raise PlacementError(
                "%s exceeds the unambiguous velocity %.2f m/s"
                % (gesture.value, cfg.max_doppler_velocity)
            )

    return GestureScene(gesture, placement, user, hand, room_clutter(placement))


def room_clutter(placement: ScenePlacement) -> list:
    """Static clutter for a room, deterministic in (environment, location).

    Every scene recorded at the same placement sees the same furniture; the
    layout changes only across environments and positions."""
    n_clutter, base_amp = ENVIRONMENT_CLUTTER[placement.environment]
    room_key = f"{placement.environment.value}@{placement.base_range:.3f}/{placement.azimuth_deg:.2f}"
    rng = substream(_room_seed(room_key), "clutter")
    clutter = []
    for i in range(n_clutter):
        r = float(rng.uniform(0.4, 15.0))
        a = base_amp * float(rng.uniform(0.5, 1.5))

        def ctraj(t, _r=r):
            t = np.asarray(t, dtype=float)
            return np.full_like(t, _r), np.zeros_like(t)

        clutter.append(Scatterer(ctraj, a, label=f"clutter{i}"))
    return clutter


def _room_seed(room_key: str) -> int:
    import hashlib

    return int.from_bytes(hashlib.sha256(room_key.encode()).digest()[:8], "little") >> 1


@dataclass
class DatasetSpec:
    """Cartesian dataset layout: classes x users x placements x instances."""

    instances: int = 1
    users: tuple = (UserProfile(),)
    placements: tuple = (ScenePlacement(),)
    n_frames: int = 16
    noise_sigma: float = 1.0

    def validate(self) -> None:
        if self.instances < 1 or not self.users or not self.placements:
            raise ConfigError("dataset spec needs >= 1 instance, user and placement")
        for u in self.users:
            u.validate()
        for p in self.placements:
            p.validate()


def dataset_plan(spec: DatasetSpec, rng_seed: int) -> list:
    """Per-sample metadata for the full Cartesian product, without synthesis."""
    spec.validate()
    rows = []
    for ci, gesture in enumerate(GESTURE_CLASSES):
        for ui in range(len(spec.users)):
            for pi, placement in enumerate(spec.placements):
                for k in range(spec.instances):
                    rows.append(
                        {
                            "index": len(rows),
                            "class_name": gesture.value,
                            "class_id": ci,
                            "user_id": ui,
                            "location_id": pi,
                            "base_range": placement.base_range,
                            "azimuth_deg": placement.azimuth_deg,
                            "environment": placement.environment.value,
                            "instance": k,
                            "seed": child_seed(rng_seed, "sample", ci, ui, pi, k),
                        }
                    )
    return rows


def synthesize_sample(spec: DatasetSpec, row: dict, config: RadarConfig | None = None) -> DataCube:
    """Synthesize the cube for one `dataset_plan` row."""
    cfg = config or RadarConfig()
    gesture = GestureClass.from_name(row["class_name"])
    placement = spec.placements[row["location_id"]]
    user = spec.users[row["user_id"]]
    duration = spec.n_frames * cfg.t_frame
    scene = make_gesture_scene(gesture, placement, user, row["seed"], duration, cfg)
    try:
        return synthesize_cube(
            cfg, scene.scatterers, spec.n_frames, spec.noise_sigma, row["seed"]
        )
    except Exception as exc:
        raise type(exc)(
            f"{exc} (class={row['class_name']}, user={row['user_id']}, "
            f"location={row['location_id']}, instance={row['instance']})"
        ) from exc


def generate_dataset(spec: DatasetSpec, rng_seed: int, config: RadarConfig | None = None) -> list:
    """Synthesize the full dataset; returns [(DataCube, metadata), ...]."""
    plan = dataset_plan(spec, rng_seed)
    return [(synthesize_sample(spec, row, config), row) for row in plan]


def standard_benchmark_spec(instances: int = 30, noise_sigma: float = 1.0) -> DatasetSpec:
    """The stock desk-scale benchmark: 7 classes x instances x 3 users x 3 placements."""
    users = (
        UserProfile(speed_scale=0.90, amplitude_scale=0.90, extent_scale=0.95, jitter_sigma=0.0015),
        UserProfile(speed_scale=1.00, amplitude_scale=1.00, extent_scale=1.05, jitter_sigma=0.0020),
        UserProfile(speed_scale=1.15, amplitude_scale=1.10, extent_scale=1.20, jitter_sigma=0.0030),
    )
    placements = (
        ScenePlacement(0.75, 0.0, Environment.CLASSROOM),
        ScenePlacement(1.20, 20.0, Environment.OFFICE),
        ScenePlacement(0.60, -15.0, Environment.CONFERENCE_HALL),
    )
    return DatasetSpec(instances=instances, users=users, placements=placements,
                       n_frames=16, noise_sigma=noise_sigma)
