"""Entering-trajectory extraction through reviewed intersections.

For every (participant, drive, intersection, approach) the sensor points
inside the approach polygon are filtered to those heading with the entering
traffic, the surviving point closest to the intersection anchors the
window, and the window is cut from the whole drive by cumulative distance:
300 ft upstream to 200 ft downstream by default.
"""

from __future__ import annotations

import csv
from bisect import bisect_left, bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import IO

from .errors import DataError
from .geo import angular_difference_deg, haversine_distance_ft, initial_bearing_deg, point_in_polygon
from .ingest import SensorRecord, format_time_utc, parse_time_utc
from .review import ReviewedIntersection
from .storage import resolve_uri


@dataclass
class WindowParams:
    """Window geometry and heading gate for entering-trajectory extraction.

    ``pass_gap_s`` splits repeat passes through the same approach: in-polygon
    points separated by more than this gap are treated as separate visits.
    """

    upstream_ft: float = 300.0
    downstream_ft: float = 200.0
    heading_tol_deg: float = 45.0
    pass_gap_s: float = 30.0

    def __post_init__(self) -> None:
        if self.upstream_ft <= 0 or self.downstream_ft <= 0 or self.pass_gap_s <= 0:
            raise ValueError("window parameters must be positive")
        if not 0 < self.heading_tol_deg < 90:
            raise ValueError("heading_tol_deg must be in (0, 90)")


@dataclass
class TrajectoryCandidate:
    """One (participant, drive, intersection) entering pass."""

    traj_id: str
    subj: str
    drive: int
    intxn_id: int
    leg_id: int
    points: list[SensorRecord]
    ref_index: int
    ref_time_utc: datetime
    start_time_utc: datetime
    end_time_utc: datetime

    @property
    def ref_cum_dist_ft(self) -> float:
        return self.points[self.ref_index].cum_dist_ft


def assign_bearings(reviewed: list[ReviewedIntersection]) -> list[ReviewedIntersection]:
    """Fill each approach's entering bearing from its direction line.

    The bearing is the forward azimuth from the line's first vertex to its
    last; intermediate vertices are ignored since the endpoints define the
    reviewer's intent. Raises ValueError for a degenerate line.
    """
    for intxn in reviewed:
        for leg in intxn.approaches:
            first, last = leg.entering_line[0], leg.entering_line[-1]
            if first == last:
                raise ValueError(
                    f"degenerate entering line on intersection {intxn.intxn_id} leg {leg.leg_id}"
                )
            leg.entering_bearing = initial_bearing_deg(first, last)
    return reviewed


def _split_episodes(indices: list[int], times: list[float], gap_s: float) -> list[list[int]]:
    episodes = [[indices[0]]]
    for prev, cur in zip(indices, indices[1:]):
        if times[cur] - times[prev] > gap_s:
            episodes.append([])
        episodes[-1].append(cur)
    return episodes


def _extract_for_drive(
    recs: list[SensorRecord],
    reviewed: list[ReviewedIntersection],
    params: WindowParams,
) -> tuple[list[TrajectoryCandidate], int, int]:
    times = [r.t_utc.timestamp() for r in recs]
    cums = [r.cum_dist_ft for r in recs]
    subj, drive = recs[0].subj, recs[0].drive

    # (intxn_id, ref_time, leg_id, ref_drive_index) per approach visit
    picks: list[tuple[int, float, int, int]] = []
    for intxn in reviewed:
        for leg in intxn.approaches:
            if leg.entering_bearing is None:
                raise ValueError("entering bearings must be assigned before extraction")
            min_lat, min_lon, max_lat, max_lon = leg.polygon.bounds()
            surviving = [
                i
                for i, r in enumerate(recs)
                if min_lat - 1e-9 <= r.pos.lat_deg <= max_lat + 1e-9
                and min_lon - 1e-9 <= r.pos.lon_deg <= max_lon + 1e-9
                and angular_difference_deg(r.heading_deg, leg.entering_bearing)
                <= params.heading_tol_deg
                and point_in_polygon(r.pos, leg.polygon)
            ]
            if not surviving:
                continue
            for episode in _split_episodes(surviving, times, params.pass_gap_s):
                ref_i = min(
                    episode,
                    key=lambda i: (haversine_distance_ft(recs[i].pos, intxn.pos), times[i]),
                )
                picks.append((intxn.intxn_id, times[ref_i], leg.leg_id, ref_i))

    by_intxn: dict[int, list[tuple[int, float, int, int]]] = {}
    for pick in picks:
        by_intxn.setdefault(pick[0], []).append(pick)

    out: list[TrajectoryCandidate] = []
    duplicates = 0
    truncated = 0
    for intxn_id in sorted(by_intxn):
        visits = sorted(by_intxn[intxn_id], key=lambda p: (p[1], p[2], p[3]))
        duplicates += len(visits) - 1
        _, _, leg_id, ref_i = visits[0]
        lo = cums[ref_i] - params.upstream_ft
        hi = cums[ref_i] + params.downstream_ft
        left = bisect_left(cums, lo)
        right = bisect_right(cums, hi) - 1
        if cums[0] > lo or cums[-1] < hi:
            truncated += 1
        window = recs[left : right + 1]
        out.append(
            TrajectoryCandidate(
                traj_id=f"{subj}_{drive}_{intxn_id}",
                subj=subj,
                drive=drive,
                intxn_id=intxn_id,
                leg_id=leg_id,
                points=window,
                ref_index=ref_i - left,
                ref_time_utc=recs[ref_i].t_utc,
                start_time_utc=window[0].t_utc,
                end_time_utc=window[-1].t_utc,
            )
        )
    return out, duplicates, truncated


def extract_trajectories(
    sensor: list[SensorRecord],
    reviewed: list[ReviewedIntersection],
    params: WindowParams | None = None,
    jobs: int = 1,
) -> tuple[list[TrajectoryCandidate], dict[str, int]]:
    """Extract one entering trajectory per (subj, drive, intersection).

    Repeat visits (multiple approaches, or repeat passes within one drive)
    keep the earliest reference time and are tallied in the skip report as
    ``duplicate_pass``. Windows cut short by the start or end of the drive
    are kept and tallied as ``truncated``.
    """
    params = params or WindowParams()
    drives: dict[tuple[str, int], list[SensorRecord]] = {}
    for rec in sensor:
        drives.setdefault((rec.subj, rec.drive), []).append(rec)
    for recs in drives.values():
        recs.sort(key=SensorRecord.sort_key)

    keys = sorted(drives)

    def worker(key):
        return _extract_for_drive(drives[key], reviewed, params)

    if jobs > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(worker, keys))
    else:
        results = [worker(key) for key in keys]

    trajs: list[TrajectoryCandidate] = []
    skip_report = {"duplicate_pass": 0, "truncated": 0}
    for drive_trajs, duplicates, truncated in results:
        trajs.extend(drive_trajs)
        skip_report["duplicate_pass"] += duplicates
        skip_report["truncated"] += truncated
    trajs.sort(key=lambda t: (t.subj, t.drive, t.intxn_id))
    return trajs, skip_report


TRAJECTORY_COLUMNS = (
    "traj_id",
    "subj",
    "drive",
    "intxn_id",
    "leg_id",
    "ref_time_utc",
    "start_time_utc",
    "end_time_utc",
    "ref_cum_dist_ft",
    "n_points",
)


def write_trajectories_csv(trajs: list[TrajectoryCandidate], dest: str | Path | IO) -> None:
    handle, owned = (dest, False) if hasattr(dest, "write") else (resolve_uri(dest, "w"), True)
    try:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for t in trajs:
            w.writerow(
                [
                    t.traj_id,
                    t.subj,
                    t.drive,
                    t.intxn_id,
                    t.leg_id,
                    format_time_utc(t.ref_time_utc),
                    format_time_utc(t.start_time_utc),
                    format_time_utc(t.end_time_utc),
                    repr(t.ref_cum_dist_ft),
                    len(t.points),
                ]
            )
    finally:
        if owned:
            handle.close()


def load_trajectories_csv(
    source: str | Path | IO, sensor: list[SensorRecord]
) -> list[TrajectoryCandidate]:
    """Rebuild trajectory windows from the summary CSV plus the sensor table.

    The window is the time span [start, end] of the drive, which delimits
    the same contiguous point run the extractor produced.
    """
    drives: dict[tuple[str, int], list[SensorRecord]] = {}
    for rec in sensor:
        drives.setdefault((rec.subj, rec.drive), []).append(rec)
    for recs in drives.values():
        recs.sort(key=SensorRecord.sort_key)

    handle, owned = (source, False) if hasattr(source, "read") else (resolve_uri(source, "r"), True)
    try:
        reader = csv.DictReader(handle)
        have = set(reader.fieldnames or ())
        missing = [c for c in TRAJECTORY_COLUMNS if c not in have]
        if missing:
            raise DataError(f"trajectory table missing columns: {', '.join(missing)}")
        out = []
        for row in reader:
            subj = row["subj"]
            drive = int(row["drive"])
            recs = drives.get((subj, drive))
            if not recs:
                raise DataError(f"no sensor data for trajectory {row['traj_id']}")
            times = [r.t_utc for r in recs]
            start = parse_time_utc(row["start_time_utc"])
            end = parse_time_utc(row["end_time_utc"])
            ref_time = parse_time_utc(row["ref_time_utc"])
            left = bisect_left(times, start)
            right = bisect_right(times, end) - 1
            window = recs[left : right + 1]
            if not window:
                raise DataError(f"empty window for trajectory {row['traj_id']}")
            try:
                ref_index = [r.t_utc for r in window].index(ref_time)
            except ValueError as exc:
                raise DataError(
                    f"reference time not in window for trajectory {row['traj_id']}"
                ) from exc
            out.append(
                TrajectoryCandidate(
                    traj_id=row["traj_id"],
                    subj=subj,
                    drive=drive,
                    intxn_id=int(row["intxn_id"]),
                    leg_id=int(row["leg_id"]),
                    points=window,
                    ref_index=ref_index,
                    ref_time_utc=ref_time,
                    start_time_utc=start,
                    end_time_utc=end,
                )
            )
        return sorted(out, key=lambda t: (t.subj, t.drive, t.intxn_id))
    finally:
        if owned:
            handle.close()
