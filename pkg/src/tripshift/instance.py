"""Problem data, random instance generation and JSON instance files.

Times and costs are integer minutes throughout. Location ids are dense
integers: stations first, depots after them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

SCHEMA_VERSION = 1

STATION = "station"
DEPOT = "depot"

# arc kinds, shared with the network builder
TRIP = "trip"
DEADHEAD = "deadhead"
WAIT = "wait"
PULL_OUT = "pull_out"
PULL_IN = "pull_in"


class InstanceError(ValueError):
    """An instance violates one of its invariants."""


class InstanceParseError(InstanceError):
    """An instance file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


@dataclass(frozen=True)
class Location:
    id: int
    x: float
    y: float
    kind: str = STATION


@dataclass(frozen=True)
class Trip:
    id: int
    start_location: int
    end_location: int
    start_time: int
    end_time: int

    @property
    def duration(self) -> int:
        return self.end_time - self.start_time


@dataclass(frozen=True)
class Instance:
    locations: tuple[Location, ...]
    trips: tuple[Trip, ...]
    travel_time: tuple[tuple[int, ...], ...]
    pull_fixed_cost: int = 500
    horizon: tuple[int, int] = (0, 1800)
    _tt: np.ndarray = field(init=False, repr=False, compare=False)
    _trip_by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "locations", tuple(self.locations))
        object.__setattr__(self, "trips", tuple(self.trips))
        object.__setattr__(
            self, "travel_time", tuple(tuple(int(v) for v in row) for row in self.travel_time)
        )
        object.__setattr__(self, "horizon", (int(self.horizon[0]), int(self.horizon[1])))
        tt = np.array(self.travel_time, dtype=np.int64).reshape(len(self.locations), -1)
        tt.setflags(write=False)
        object.__setattr__(self, "_tt", tt)
        object.__setattr__(self, "_trip_by_id", {t.id: t for t in self.trips})
        self.validate()

    @property
    def depots(self) -> tuple[int, ...]:
        return tuple(loc.id for loc in self.locations if loc.kind == DEPOT)

    @property
    def stations(self) -> tuple[int, ...]:
        return tuple(loc.id for loc in self.locations if loc.kind == STATION)

    @property
    def tt(self) -> np.ndarray:
        """Read-only travel-time matrix."""
        return self._tt

    def trip(self, trip_id: int) -> Trip:
        return self._trip_by_id[trip_id]

    def travel(self, a: int, b: int) -> int:
        return int(self._tt[a, b])

    def validate(self) -> None:
        ids = [loc.id for loc in self.locations]
        if ids != list(range(len(ids))):
            raise InstanceError(f"location ids must be 0..{len(ids) - 1} in order, got {ids}")
        for loc in self.locations:
            if loc.kind not in (STATION, DEPOT):
                raise InstanceError(f"location {loc.id}: unknown kind {loc.kind!r}")
        if not self.depots:
            raise InstanceError("instance needs at least one depot")
        lo, hi = self.horizon
        if hi <= lo:
            raise InstanceError(f"empty horizon {self.horizon}")

        n = len(self.locations)
        tt = self._tt
        if tt.shape != (n, n):
            raise InstanceError(f"travel_time must be {n}x{n}, got {tt.shape}")
        if (tt < 0).any():
            l, k = np.argwhere(tt < 0)[0]
            raise InstanceError(f"negative travel_time at ({l},{k})")
        if (np.diag(tt) != 0).any():
            l = int(np.flatnonzero(np.diag(tt))[0])
            raise InstanceError(f"nonzero travel_time on diagonal at ({l},{l})")
        asym = np.argwhere(tt != tt.T)
        if len(asym):
            l, k = asym[0]
            raise InstanceError(f"asymmetric travel_time at ({l},{k}): {tt[l, k]} != {tt[k, l]}")
        # tt[l, k] > tt[l, j] + tt[j, k] for some j
        via = tt[:, :, None] + tt[None, :, :]  # via[l, j, k]
        bad = np.argwhere(tt[:, None, :] > via)
        if len(bad):
            l, j, k = (int(v) for v in bad[0])
            raise InstanceError(
                f"triangle inequality violated for ({l},{j},{k}): "
                f"{tt[l, k]} > {tt[l, j]} + {tt[j, k]}"
            )

        seen = set()
        kinds = {loc.id: loc.kind for loc in self.locations}
        for t in self.trips:
            if t.id in seen:
                raise InstanceError(f"duplicate trip id {t.id}")
            seen.add(t.id)
            for loc in (t.start_location, t.end_location):
                if loc not in kinds:
                    raise InstanceError(f"trip {t.id}: unknown location {loc}")
                if kinds[loc] != STATION:
                    raise InstanceError(f"trip {t.id}: location {loc} is not a station")
            if t.end_time <= t.start_time:
                raise InstanceError(
                    f"trip {t.id}: end_time {t.end_time} <= start_time {t.start_time}"
                )
            if t.duration < tt[t.start_location, t.end_location]:
                raise InstanceError(
                    f"trip {t.id}: trip time {t.duration} shorter than travel time "
                    f"{tt[t.start_location, t.end_location]}"
                )
            if t.start_time < lo or t.end_time > hi:
                raise InstanceError(f"trip {t.id} lies outside horizon {self.horizon}")

    def check_shift_fits(self, delta_max: int) -> None:
        """Raise if some trip shifted by up to ``delta_max`` leaves the horizon."""
        lo, hi = self.horizon
        for t in self.trips:
            if t.start_time - delta_max < lo:
                raise InstanceError(f"trip {t.id} with shift -{delta_max} starts before {lo}")
            if t.end_time + delta_max > hi:
                raise InstanceError(f"trip {t.id} with shift +{delta_max} ends after {hi}")

    def subset(self, trip_ids: Iterable[int]) -> "Instance":
        keep = set(trip_ids)
        return Instance(
            locations=self.locations,
            trips=tuple(t for t in self.trips if t.id in keep),
            travel_time=self.travel_time,
            pull_fixed_cost=self.pull_fixed_cost,
            horizon=self.horizon,
        )


def arc_cost(kind: str, tail_location: int | None, head_location: int | None, instance: Instance) -> int:
    """Cost of traversing an arc; trip and waiting arcs are free."""
    if kind in (TRIP, WAIT):
        return 0
    tau = instance.travel(tail_location, head_location)
    if kind == DEADHEAD:
        return tau
    if kind in (PULL_OUT, PULL_IN):
        return instance.pull_fixed_cost + tau
    raise ValueError(f"unknown arc kind {kind!r}")


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class GenParams:
    num_trips: int
    short_fraction: float = 0.4
    num_locations: int | None = None
    num_depots: int = 4
    seed: int = 0
    grid_side: int = 60
    speed: float = 1.0
    peak_probability: float = 0.5
    peaks: tuple[tuple[int, int], ...] = ((420, 480), (1020, 1080))
    day: tuple[int, int] = (360, 1320)
    short_slack_max: int = 45
    long_duration: tuple[int, int] = (180, 300)
    horizon: tuple[int, int] = (0, 1800)
    pull_fixed_cost: int = 500

    @property
    def stations(self) -> int:
        if self.num_locations is not None:
            return self.num_locations
        return max(2, self.num_trips // 10)

    def validate(self) -> None:
        if self.num_trips < 0:
            raise ValueError("num_trips must be >= 0")
        if not 0.0 <= self.short_fraction <= 1.0:
            raise ValueError(f"short_fraction {self.short_fraction} not in [0, 1]")
        if self.stations < 2:
            raise ValueError("need at least 2 stations so short trips have distinct endpoints")
        if self.num_depots < 1:
            raise ValueError("need at least one depot")
        if self.speed <= 0 or self.grid_side <= 0:
            raise ValueError("grid_side and speed must be positive")
        lo, hi = self.long_duration
        if not 0 < lo <= hi:
            raise ValueError(f"bad long_duration {self.long_duration}")
        d0, d1 = self.day
        if d1 - d0 < hi:
            raise ValueError(f"operating day {self.day} cannot contain a {hi}-minute long trip")
        h0, h1 = self.horizon
        if d0 < h0 or d1 > h1:
            raise ValueError(f"operating day {self.day} outside horizon {self.horizon}")
        for p0, p1 in self.peaks:
            if p1 <= p0:
                raise ValueError(f"empty peak window {(p0, p1)}")


def _travel_matrix(xy: np.ndarray, speed: float) -> np.ndarray:
    diff = xy[:, None, :] - xy[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    tt = np.rint(dist / speed).astype(np.int64)
    # distinct locations are never zero minutes apart
    off = ~np.eye(len(xy), dtype=bool)
    tt[off & (tt == 0)] = 1
    closed = shortest_path(tt.astype(float), method="FW", directed=False)
    return np.rint(closed).astype(np.int64)


def generate_instance(params: GenParams) -> Instance:
    params.validate()
    rng = np.random.default_rng(params.seed)
    n_st = params.stations
    side = params.grid_side

    station_xy = rng.integers(0, side + 1, size=(n_st, 2))
    corners = np.array([[0, 0], [side, 0], [side, side], [0, side]])
    depot_xy = corners[np.arange(params.num_depots) % 4]
    xy = np.vstack([station_xy, depot_xy])
    tt = _travel_matrix(xy, params.speed)

    locations = [Location(i, int(x), int(y), STATION) for i, (x, y) in enumerate(station_xy)]
    locations += [
        Location(n_st + i, int(x), int(y), DEPOT) for i, (x, y) in enumerate(depot_xy)
    ]

    n_short = int(round(params.num_trips * params.short_fraction))
    n_long = params.num_trips - n_short
    d0, d1 = params.day
    raw = []
    for _ in range(n_short):
        a, b = rng.choice(n_st, size=2, replace=False)
        duration = int(tt[a, b]) + int(rng.integers(0, params.short_slack_max + 1))
        if rng.random() < params.peak_probability:
            p0, p1 = params.peaks[int(rng.integers(len(params.peaks)))]
            start = int(rng.integers(p0, p1))
        else:
            start = int(rng.integers(d0, d1))
        raw.append((start, start + duration, int(a), int(b)))
    for _ in range(n_long):
        loc = int(rng.integers(n_st))
        lo, hi = params.long_duration
        duration = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(d0, d1 - duration + 1))
        raw.append((start, start + duration, loc, loc))
    raw.sort()
    trips = [Trip(i, a, b, s, e) for i, (s, e, a, b) in enumerate(raw)]

    return Instance(
        locations=tuple(locations),
        trips=tuple(trips),
        travel_time=tt.tolist(),
        pull_fixed_cost=params.pull_fixed_cost,
        horizon=params.horizon,
    )


# ---------------------------------------------------------------------------
# JSON files


def instance_to_dict(instance: Instance) -> dict[str, Any]:
    return {
        "version": SCHEMA_VERSION,
        "horizon": list(instance.horizon),
        "pull_fixed_cost": instance.pull_fixed_cost,
        "locations": [
            {"id": l.id, "x": l.x, "y": l.y, "kind": l.kind} for l in instance.locations
        ],
        "travel_time": [list(row) for row in instance.travel_time],
        "trips": [
            {"id": t.id, "from": t.start_location, "to": t.end_location,
             "dep": t.start_time, "arr": t.end_time}
            for t in instance.trips
        ],
    }


def dumps_instance(instance: Instance) -> str:
    d = instance_to_dict(instance)
    # one row of the matrix / one trip per line keeps diffs readable
    lines = ["{"]
    lines.append(f'  "version": {d["version"]},')
    lines.append(f'  "horizon": {json.dumps(d["horizon"])},')
    lines.append(f'  "pull_fixed_cost": {d["pull_fixed_cost"]},')
    lines.append('  "locations": [')
    lines.append(",\n".join("    " + json.dumps(l) for l in d["locations"]))
    lines.append("  ],")
    lines.append('  "travel_time": [')
    lines.append(",\n".join("    " + json.dumps(r) for r in d["travel_time"]))
    lines.append("  ],")
    lines.append('  "trips": [')
    if d["trips"]:
        lines.append(",\n".join("    " + json.dumps(t) for t in d["trips"]))
    lines.append("  ]")
    lines.append("}")
    return "\n".join(l for l in lines if l) + "\n"


def save_instance(instance: Instance, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_instance(instance), encoding="utf-8")
    return path


def _int(value: Any, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InstanceParseError(f"expected integer, got {value!r}", field=field)
    return value


def _num(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceParseError(f"expected number, got {value!r}", field=field)
    return value


def _get(obj: dict, key: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise InstanceParseError(f"expected object, got {type(obj).__name__}", field=where)
    if key not in obj:
        raise InstanceParseError("missing key", field=f"{where}.{key}" if where else key)
    return obj[key]


def instance_from_dict(d: dict[str, Any]) -> Instance:
    version = _int(_get(d, "version", ""), "version")
    if version != SCHEMA_VERSION:
        raise InstanceParseError(f"unsupported schema version {version}", field="version")
    horizon = _get(d, "horizon", "")
    if not isinstance(horizon, list) or len(horizon) != 2:
        raise InstanceParseError("expected [lo, hi]", field="horizon")
    horizon = (_int(horizon[0], "horizon[0]"), _int(horizon[1], "horizon[1]"))
    pull = _int(_get(d, "pull_fixed_cost", ""), "pull_fixed_cost")

    locations = []
    for i, loc in enumerate(_get(d, "locations", "")):
        where = f"locations[{i}]"
        kind = _get(loc, "kind", where)
        if kind not in (STATION, DEPOT):
            raise InstanceParseError(f"unknown kind {kind!r}", field=f"{where}.kind")
        locations.append(Location(
            _int(_get(loc, "id", where), f"{where}.id"),
            _num(_get(loc, "x", where), f"{where}.x"),
            _num(_get(loc, "y", where), f"{where}.y"),
            kind,
        ))

    matrix = _get(d, "travel_time", "")
    if not isinstance(matrix, list):
        raise InstanceParseError("expected list of rows", field="travel_time")
    tt = []
    for i, row in enumerate(matrix):
        if not isinstance(row, list) or len(row) != len(locations):
            raise InstanceParseError(
                f"expected {len(locations)} entries", field=f"travel_time[{i}]"
            )
        tt.append(tuple(_int(v, f"travel_time[{i}][{j}]") for j, v in enumerate(row)))
    if len(tt) != len(locations):
        raise InstanceParseError(f"expected {len(locations)} rows", field="travel_time")

    trips = []
    for i, t in enumerate(_get(d, "trips", "")):
        where = f"trips[{i}]"
        trips.append(Trip(
            _int(_get(t, "id", where), f"{where}.id"),
            _int(_get(t, "from", where), f"{where}.from"),
            _int(_get(t, "to", where), f"{where}.to"),
            _int(_get(t, "dep", where), f"{where}.dep"),
            _int(_get(t, "arr", where), f"{where}.arr"),
        ))
    return Instance(tuple(locations), tuple(trips), tuple(tt), pull, horizon)


def loads_instance(text: str) -> Instance:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceParseError(exc.msg, line=exc.lineno) from exc
    return instance_from_dict(data)


def load_instance(path: str | Path) -> Instance:
    return loads_instance(Path(path).read_text(encoding="utf-8"))


def instance_summary(instance: Instance) -> dict[str, Any]:
    short = sum(1 for t in instance.trips if t.start_location != t.end_location)
    return {
        "trips": len(instance.trips),
        "short": short,
        "long": len(instance.trips) - short,
        "stations": len(instance.stations),
        "depots": len(instance.depots),
        "max_travel": int(instance.tt.max()) if len(instance.locations) else 0,
    }


def is_peak(t: int, peaks: Sequence[tuple[int, int]] = GenParams.peaks) -> bool:
    return any(p0 <= t < p1 for p0, p1 in peaks)
