"""Cluster task traces: type mapping, CSV loading and synthetic generation.

The trace format is a 4-column CSV with header ``arrival_time,duration,cpu,mem``
(seconds, seconds, normalized CPU and memory in [0, 1]). A task's size is the
larger of its two normalized demands rounded up to a power of 1/2, with the
smallest size 2^-7, which gives 8 job types on unit-capacity servers.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

log = logging.getLogger(__name__)

N_TRACE_TYPES = 8
HEADER = ["arrival_time", "duration", "cpu", "mem"]


def map_type(cpu: float, mem: float) -> tuple[int, float]:
    """Return (type index i, size 2^-i) for a task with normalized demands."""
    m = max(cpu, mem)
    if m > 1 or cpu < 0 or mem < 0 or math.isnan(m):
        raise ValueError(f"normalized demand out of range: cpu={cpu}, mem={mem}")
    for i in range(N_TRACE_TYPES - 1, -1, -1):
        size = 2.0 ** -i
        if size >= m:
            return i, size
    return 0, 1.0


def type_demands() -> list[tuple[float]]:
    return [(2.0 ** -i,) for i in range(N_TRACE_TYPES)]


@dataclass
class TraceJobStream:
    times: list[float]
    types: list[int]
    durations: list[float]
    n_types: int = N_TRACE_TYPES
    dropped: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    def type_counts(self) -> list[int]:
        counts = [0] * self.n_types
        for j in self.types:
            counts[j] += 1
        return counts

    def mean_durations(self) -> list[float]:
        """Mean duration per type; 1.0 for types absent from the stream."""
        sums = [0.0] * self.n_types
        counts = self.type_counts()
        for j, d in zip(self.types, self.durations):
            sums[j] += d
        return [s / c if c else 1.0 for s, c in zip(sums, counts)]


Window = Union[None, int, tuple[float, float]]


def load_trace(path: Union[str, Path], window: Window = None, below_floor: str = "clamp") -> TraceJobStream:
    """Read a trace CSV into a time-ordered job stream.

    ``window`` is either the number of leading arrivals to keep or a
    ``(start, end)`` arrival-time range. Rows with a nonpositive duration,
    unparsable fields or demands above 1 are dropped and counted.
    With ``below_floor='drop'`` tasks smaller than 2^-7 are dropped too.
    """
    if below_floor not in ("clamp", "drop"):
        raise ValueError(f"below_floor must be 'clamp' or 'drop', got {below_floor!r}")
    path = Path(path)
    dropped = {"unparsable": 0, "duration": 0, "out_of_range": 0, "below_floor": 0}
    rows = []
    floor = 2.0 ** -(N_TRACE_TYPES - 1)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return TraceJobStream([], [], [], dropped=dropped)
        if [h.strip() for h in header] != HEADER:
            raise ValueError(f"{path}: expected header {','.join(HEADER)}, got {','.join(header)}")
        for row in reader:
            if not row:
                continue
            try:
                t, d, cpu, mem = (float(x) for x in row)
            except ValueError:
                dropped["unparsable"] += 1
                continue
            if not all(math.isfinite(x) for x in (t, d, cpu, mem)):
                dropped["unparsable"] += 1
                continue
            if d <= 0:
                dropped["duration"] += 1
                continue
            if max(cpu, mem) > 1 or min(cpu, mem) < 0:
                dropped["out_of_range"] += 1
                continue
            if below_floor == "drop" and max(cpu, mem) < floor:
                dropped["below_floor"] += 1
                continue
            rows.append((t, d, map_type(cpu, mem)[0]))
    bad = sum(dropped.values())
    if bad:
        log.warning("%s: dropped %d records %s", path, bad, dropped)
    rows.sort(key=lambda r: r[0])
    if isinstance(window, int):
        if window < 0:
            raise ValueError("window count must be nonnegative")
        rows = rows[:window]
    elif window is not None:
        lo, hi = window
        rows = [r for r in rows if lo <= r[0] < hi]
    return TraceJobStream(
        times=[r[0] for r in rows],
        types=[r[2] for r in rows],
        durations=[r[1] for r in rows],
        dropped=dropped,
    )


def synthetic_trace(path: Union[str, Path], n: int, seed: int = 0, rate: float = 3000.0,
                    mean_duration: float = 1.0, size_offset: float = 1.5, size_scale: float = 2.0,
                    duration_sigma: float = 0.0) -> None:
    """Write an ``n``-row synthetic trace in the CSV format above.

    Arrivals are Poisson with ``rate`` per second. Durations are exponential
    with mean ``mean_duration``, or log-normal with that mean and log-scale
    spread ``duration_sigma`` when it is positive (heavy-tailed task lengths).
    The larger normalized demand is ``2**-X`` where ``X - size_offset`` is
    exponential with mean ``size_scale``, redrawn until ``X < 8``; big tasks
    are rare, as in production clusters. The other demand is a uniform
    fraction of it.
    """
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.exponential(1.0 / rate, n))
    if duration_sigma > 0:
        mu = math.log(mean_duration) - 0.5 * duration_sigma ** 2
        durations = rng.lognormal(mu, duration_sigma, n)
    else:
        durations = rng.exponential(mean_duration, n)
    x = size_offset + rng.exponential(size_scale, n)
    while np.any(x >= 8.0):
        bad = x >= 8.0
        x[bad] = size_offset + rng.exponential(size_scale, int(bad.sum()))
    big = np.minimum(2.0 ** -x, 1.0)
    other = big * rng.random(n)
    cpu_is_big = rng.random(n) < 0.5
    cpu = np.where(cpu_is_big, big, other)
    mem = np.where(cpu_is_big, other, big)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for row in zip(times, durations, cpu, mem):
            writer.writerow([f"{v:.9g}" for v in row])


def offered_load(stream: TraceJobStream) -> float:
    """Average resource units in demand: arrival rate times mean duration times mean size."""
    if len(stream) < 2:
        return 0.0
    span = stream.times[-1] - stream.times[0]
    work = sum(d * 2.0 ** -j for d, j in zip(stream.durations, stream.types))
    return work / span if span > 0 else math.inf
