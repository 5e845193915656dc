"""
Synthetic sparse point-cloud generator.

Each activity is a Gaussian blob of points whose centre and extent follow a
simple trajectory inside a 3.5 m x 3.5 m x 2 m test area in front of the
radar. Per-frame point counts follow either the 30 Hz public-dataset profile
(``mmact``) or the 10 Hz robot-platform profile (``disc``).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import ParameterError
from pcloud import Frame, Recording, seconds_to_frames, window_count, window_label

logger = logging.getLogger(__name__)

# Test area, metres in radar coordinates
AREA_X = (-1.75, 1.75)
AREA_Y = (1.2, 4.7)
AREA_Z = (0.0, 2.0)
MARGIN = 0.3

PROFILE_MMACT = "mmact"
PROFILE_DISC = "disc"
PROFILE_RATES = {PROFILE_MMACT: 30.0, PROFILE_DISC: 10.0}

# mmact profile: a saturated share at the 25-point cap, the rest roughly normal
MMACT_MAX = 25
MMACT_SATURATED_SHARE = 0.15
MMACT_MEAN = 14.5
MMACT_STD = 4.0
MMACT_MIN = 7

DISC_MAX = 64
DISC_MODE = 32.0
DISC_STD = 12.0

BODY = (0.15, 0.15, 0.35)
FLAT = (0.45, 0.15, 0.08)
STAND_HEIGHT = 0.9
LIE_HEIGHT = 0.2


@dataclass(frozen=True)
class ActivityModel:
    """Blob trajectory of one activity. Height and extent move linearly from start to end."""
    name: str
    class_id: int
    z_start: float
    z_end: float
    extent_start: Tuple[float, float, float]
    extent_end: Tuple[float, float, float]
    duration_range: Tuple[float, float]
    speed_range: Tuple[float, float] = (0.0, 0.0)

    def height(self, u: float) -> float:
        return self.z_start + (self.z_end - self.z_start) * u

    def extent(self, u: float) -> np.ndarray:
        start = np.asarray(self.extent_start)
        return start + (np.asarray(self.extent_end) - start) * u


def _build_activities() -> Dict[str, ActivityModel]:
    ids = {name: i for i, name in enumerate(config.ACTIVITY_NAMES)}
    models = [
        ActivityModel("walking", ids["walking"], STAND_HEIGHT, STAND_HEIGHT, BODY, BODY, (4.0, 8.0), (0.8, 1.2)),
        ActivityModel("falling", ids["falling"], STAND_HEIGHT, LIE_HEIGHT, BODY, FLAT, (3.0, 4.0)),
        ActivityModel("standing", ids["standing"], STAND_HEIGHT, STAND_HEIGHT, BODY, BODY, (4.0, 8.0)),
        ActivityModel("rising", ids["rising"], LIE_HEIGHT, STAND_HEIGHT, FLAT, BODY, (3.0, 4.0)),
        ActivityModel("lying", ids["lying"], LIE_HEIGHT, LIE_HEIGHT, FLAT, FLAT, (4.0, 8.0)),
    ]
    return {model.name: model for model in models}


ACTIVITIES: Dict[str, ActivityModel] = _build_activities()
ACTIVITY_BY_ID: Dict[int, ActivityModel] = {model.class_id: model for model in ACTIVITIES.values()}

# Which activity may plausibly follow which in a continuous scenario
TRANSITIONS: Dict[str, Tuple[str, ...]] = {
    "walking": ("standing", "falling"),
    "standing": ("walking", "falling"),
    "falling": ("lying",),
    "lying": ("rising",),
    "rising": ("standing", "walking"),
}


@dataclass
class ScenarioScript:
    """Ordered events and the gap before each event after the first."""
    events: List[Tuple[int, float]] = field(default_factory=list)
    gaps: List[float] = field(default_factory=list)

    def validate(self) -> None:
        if self.events and len(self.gaps) != len(self.events) - 1:
            raise ParameterError(f"{len(self.events)} events need {len(self.events) - 1} gaps, got {len(self.gaps)}")
        if any(duration <= 0 for _, duration in self.events) or any(gap < 0 for gap in self.gaps):
            raise ParameterError("event durations must be positive and gaps non-negative")

    @property
    def duration(self) -> float:
        return sum(d for _, d in self.events) + sum(self.gaps)


# Point counts

def point_count_sampler(profile: str, rng: np.random.Generator) -> int:
    """Number of points in one frame for the given profile."""
    if profile == PROFILE_MMACT:
        if rng.random() < MMACT_SATURATED_SHARE:
            return MMACT_MAX
        while True:
            n = int(round(rng.normal(MMACT_MEAN, MMACT_STD)))
            if MMACT_MIN <= n < MMACT_MAX:
                return n
    if profile == PROFILE_DISC:
        while True:
            n = int(round(rng.normal(DISC_MODE, DISC_STD)))
            if 1 <= n <= DISC_MAX:
                return n
    raise ParameterError(f"unknown point-count profile: {profile}")


# Trajectories

@dataclass
class BlobState:
    """Where the subject is and how its point blob looks."""
    x: float
    y: float
    z: float
    extent: np.ndarray
    heading: float = 0.0


def _random_position(rng: np.random.Generator) -> Tuple[float, float]:
    return (
        float(rng.uniform(AREA_X[0] + MARGIN, AREA_X[1] - MARGIN)),
        float(rng.uniform(AREA_Y[0] + MARGIN, AREA_Y[1] - MARGIN)),
    )


def _reflect(value: float, velocity: float, bounds: Tuple[float, float]) -> Tuple[float, float]:
    low, high = bounds[0] + MARGIN, bounds[1] - MARGIN
    if value < low:
        return 2 * low - value, -velocity
    if value > high:
        return 2 * high - value, -velocity
    return value, velocity


def trajectory(model: ActivityModel, n_frames: int, rate: float, rng: np.random.Generator,
               start: Optional[BlobState] = None) -> List[BlobState]:
    """Blob state per frame for one event."""
    if start is None:
        x, y = _random_position(rng)
        heading = float(rng.uniform(0, 2 * math.pi))
    else:
        x, y, heading = start.x, start.y, start.heading
    speed = float(rng.uniform(*model.speed_range)) if model.speed_range[1] > 0 else 0.0
    vx, vy = speed * math.cos(heading), speed * math.sin(heading)

    states = []
    for i in range(n_frames):
        u = i / (n_frames - 1) if n_frames > 1 else 0.0
        if i > 0 and speed > 0:
            x, vx = _reflect(x + vx / rate, vx, AREA_X)
            y, vy = _reflect(y + vy / rate, vy, AREA_Y)
        states.append(BlobState(x=x, y=y, z=model.height(u), extent=model.extent(u),
                                heading=math.atan2(vy, vx) if speed > 0 else heading))
    return states


def sample_frame(state: BlobState, timestamp: float, label: Optional[int], profile: str,
                 rng: np.random.Generator) -> Frame:
    n = point_count_sampler(profile, rng)
    points = rng.normal(loc=(state.x, state.y, state.z), scale=state.extent, size=(n, 3))
    points[:, 0] = np.clip(points[:, 0], *AREA_X)
    points[:, 1] = np.clip(points[:, 1], *AREA_Y)
    points[:, 2] = np.clip(points[:, 2], *AREA_Z)
    return Frame(timestamp=timestamp, points=points, label=label)


# Generators

def gen_discrete(model: ActivityModel, duration: float, rate: float, rng: np.random.Generator,
                 profile: str = PROFILE_DISC, t0: float = 0.0) -> List[Frame]:
    """Labelled frames of one isolated activity event."""
    if duration < 1.0 / rate:
        raise ParameterError(f"duration {duration} s is shorter than one frame at {rate} Hz")
    n_frames = seconds_to_frames(duration, rate)
    states = trajectory(model, n_frames, rate, rng)
    return [sample_frame(s, t0 + i / rate, model.class_id, profile, rng) for i, s in enumerate(states)]


def gen_continuous(script: ScenarioScript, rate: float, rng: np.random.Generator,
                   profile: str = PROFILE_DISC, blank: Optional[int] = None) -> List[Frame]:
    """
    Frames of a scripted scenario.

    Gap frames carry the blank label (``blank``, default K) and their blob
    parameters are linearly interpolated between the two neighbouring events.
    """
    script.validate()
    blank = len(config.ACTIVITY_NAMES) if blank is None else blank
    frames: List[Frame] = []
    previous: Optional[BlobState] = None
    for index, (class_id, duration) in enumerate(script.events):
        model = ACTIVITY_BY_ID[class_id]
        gap_frames = seconds_to_frames(script.gaps[index - 1], rate) if index > 0 and script.gaps[index - 1] > 0 else 0
        states = trajectory(model, seconds_to_frames(duration, rate), rate, rng, start=previous)

        if previous is not None:
            target = states[0]
            for g in range(gap_frames):
                u = (g + 1) / (gap_frames + 1)
                mixed = BlobState(
                    x=previous.x + (target.x - previous.x) * u,
                    y=previous.y + (target.y - previous.y) * u,
                    z=previous.z + (target.z - previous.z) * u,
                    extent=previous.extent + (target.extent - previous.extent) * u,
                    heading=previous.heading,
                )
                frames.append(sample_frame(mixed, len(frames) / rate, blank, profile, rng))

        for state in states:
            frames.append(sample_frame(state, len(frames) / rate, class_id, profile, rng))
        previous = states[-1]
    return frames


def random_script(n_events: int, rng: np.random.Generator, gap_range: Tuple[float, float] = (0.5, 1.5),
                  first: Optional[str] = None) -> ScenarioScript:
    """A plausible random sequence of activities following ``TRANSITIONS``."""
    if n_events < 0:
        raise ParameterError("number of events must be non-negative")
    script = ScenarioScript()
    name = first or ("walking", "standing")[int(rng.integers(2))]
    for i in range(n_events):
        model = ACTIVITIES[name]
        script.events.append((model.class_id, float(rng.uniform(*model.duration_range))))
        if i > 0:
            script.gaps.append(float(rng.uniform(*gap_range)))
        choices = TRANSITIONS[name]
        name = choices[int(rng.integers(len(choices)))]
    return script


def gen_discrete_dataset(seconds_per_class: float = 60.0, rate: Optional[float] = None,
                         profile: str = PROFILE_DISC, seed: int = config.DEFAULT_SEED) -> List[Recording]:
    """One recording per event, events added per class until ``seconds_per_class`` is covered."""
    rate = rate or PROFILE_RATES[profile]
    rng = np.random.default_rng(seed)
    recordings = []
    for name in config.ACTIVITY_NAMES:
        model = ACTIVITIES[name]
        covered, index = 0.0, 0
        while covered < seconds_per_class:
            duration = float(rng.uniform(*model.duration_range))
            frames = gen_discrete(model, duration, rate, rng, profile)
            recordings.append(Recording(recording_id=f"{name}-{index:03d}", frames=frames))
            covered += len(frames) / rate
            index += 1
    logger.info(f"Generated {len(recordings)} discrete recordings at {rate} Hz ({profile} profile)")
    return recordings


def gen_continuous_dataset(n_scenarios: int = 4, events_per_scenario: int = 6, rate: Optional[float] = None,
                           profile: str = PROFILE_DISC, seed: int = config.DEFAULT_SEED,
                           gap_range: Tuple[float, float] = (0.5, 1.5)) -> List[Recording]:
    rate = rate or PROFILE_RATES[profile]
    rng = np.random.default_rng(seed)
    recordings = []
    for index in range(n_scenarios):
        script = random_script(events_per_scenario, rng, gap_range)
        recordings.append(Recording(recording_id=f"scenario-{index:03d}",
                                    frames=gen_continuous(script, rate, rng, profile)))
    logger.info(f"Generated {n_scenarios} continuous scenarios with {events_per_scenario} events each")
    return recordings


# Nearest-centroid baseline on hand-made window features

def window_features(frames: Sequence[Frame], rate: float) -> np.ndarray:
    """(mean height, height slope in m/s, horizontal speed in m/s) of a window of frames."""
    centres = np.array([frame.points.mean(axis=0) for frame in frames if len(frame) > 0])
    if len(centres) < 2:
        raise ParameterError("window features need at least two non-empty frames")
    t = np.arange(len(centres)) / rate
    slopes = np.polyfit(t, centres, 1)[0]
    return np.array([centres[:, 2].mean(), slopes[2], math.hypot(slopes[0], slopes[1])])


def recording_features(recordings: Sequence[Recording], length: int, stride: int,
                       rate: float) -> Tuple[np.ndarray, np.ndarray]:
    """Feature rows and majority labels of every window of every recording."""
    rows, labels = [], []
    for recording in recordings:
        for i in range(window_count(len(recording.frames), length, stride)):
            window = recording.frames[i * stride:i * stride + length]
            label = window_label(frame.label for frame in window)
            if label is None:
                continue
            rows.append(window_features(window, rate))
            labels.append(label)
    return np.array(rows).reshape(-1, 3), np.array(labels, dtype=np.int64)


def nearest_centroid_accuracy(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray,
                              test_y: np.ndarray) -> float:
    """Accuracy of a standardised nearest-class-mean classifier."""
    mean, std = train_x.mean(axis=0), train_x.std(axis=0) + 1e-9
    classes = np.unique(train_y)
    centroids = np.stack([((train_x[train_y == c] - mean) / std).mean(axis=0) for c in classes])
    distances = np.linalg.norm(((test_x - mean) / std)[:, None, :] - centroids[None], axis=-1)
    predicted = classes[np.argmin(distances, axis=1)]
    return float(np.mean(predicted == test_y))
