"""Intersection candidates from road networks and from detection clusters.

Road-network polylines yield intersection candidates where three or more
vertices coincide. Detection streams are reduced to last-in-run sightings,
clustered with DBSCAN under a haversine metric, and snapped to the nearest
network candidate to mark participant-visited intersections.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .errors import DataError
from .geo import EARTH_RADIUS_FT, FT_PER_DEG, GeoPoint, centroid
from .ingest import DetectionRecord
from .storage import resolve_uri

DEFAULT_COINCIDENCE_TOL_FT = 1.0
DEFAULT_RUN_GAP_S = 2.0
DEFAULT_EPS_FT = 100.0
DEFAULT_MIN_PTS = 2
DEFAULT_MAX_MATCH_FT = 200.0


@dataclass
class RoadNetwork:
    """Polyline road geometry: (line_id, ordered vertex list) pairs."""

    polylines: list[tuple[str, list[GeoPoint]]]


@dataclass(frozen=True)
class IntersectionCandidate:
    intxn_id: int
    pos: GeoPoint
    degree: int


@dataclass
class DetectionCluster:
    cluster_id: int
    members: list[DetectionRecord]
    center: GeoPoint


@dataclass
class VisitedCandidate:
    intxn_id: int
    pos: GeoPoint
    supporting_cluster_ids: list[int]
    match_dist_ft: float


@dataclass
class UnmatchedCluster:
    cluster_id: int
    center: GeoPoint
    nearest_intxn_id: int
    dist_ft: float


def _haversine_many(p: GeoPoint, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    phi1 = math.radians(p.lat_deg)
    phi2 = np.radians(lats)
    dphi = np.radians(lats - p.lat_deg)
    dlam = np.radians(lons - p.lon_deg)
    h = np.sin(dphi / 2.0) ** 2 + math.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_FT * np.arcsin(np.minimum(1.0, np.sqrt(h)))


class GridIndex:
    """Uniform lat/lon cell hash supporting radius queries up to the cell size.

    Cells are sized so any neighbor within ``cell_ft`` feet lies in the 3x3
    cell block around a query point; candidates are then verified with the
    exact haversine distance. Read-only after construction, so it can be
    probed from any number of workers.
    """

    def __init__(self, points: list[GeoPoint], cell_ft: float):
        if cell_ft <= 0:
            raise ValueError("cell_ft must be positive")
        self.points = points
        self.cell_ft = cell_ft
        self._lats = np.array([p.lat_deg for p in points], dtype=float)
        self._lons = np.array([p.lon_deg for p in points], dtype=float)
        if len(points):
            cos_min = max(1e-6, float(np.min(np.cos(np.radians(self._lats)))))
        else:
            cos_min = 1.0
        self._dlat = cell_ft / FT_PER_DEG
        self._dlon = cell_ft / (FT_PER_DEG * cos_min)
        self._cells: dict[tuple[int, int], list[int]] = {}
        for i, p in enumerate(points):
            self._cells.setdefault(self._cell_of(p), []).append(i)

    def _cell_of(self, p: GeoPoint) -> tuple[int, int]:
        return (math.floor(p.lat_deg / self._dlat), math.floor(p.lon_deg / self._dlon))

    def neighbors_within(self, p: GeoPoint, radius_ft: float) -> list[int]:
        """Indices of all points within radius_ft of p, ascending."""
        if radius_ft > self.cell_ft:
            raise ValueError("query radius exceeds the index cell size")
        ci, cj = self._cell_of(p)
        candidates: list[int] = []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                candidates.extend(self._cells.get((ci + di, cj + dj), ()))
        if not candidates:
            return []
        idx = np.array(sorted(candidates), dtype=int)
        dists = _haversine_many(p, self._lats[idx], self._lons[idx])
        return [int(i) for i in idx[dists <= radius_ft]]

    def neighbors_of(self, i: int, radius_ft: float) -> list[int]:
        return self.neighbors_within(self.points[i], radius_ft)


def extract_lrs_candidates(
    network: RoadNetwork, tol_ft: float = DEFAULT_COINCIDENCE_TOL_FT
) -> list[IntersectionCandidate]:
    """Intersection candidates where three or more polyline vertices coincide.

    All vertices are pooled and grouped by transitive closure of the
    within-``tol_ft`` neighbor relation; each group of size three or more
    becomes a candidate at the group centroid, with the group size as its
    degree. IDs are assigned in (lat, lon) order of the candidate positions
    so output is deterministic.
    """
    verts: list[GeoPoint] = []
    for _, points in network.polylines:
        verts.extend(points)
    if not verts:
        return []

    index = GridIndex(verts, cell_ft=max(tol_ft, 1e-6))
    parent = list(range(len(verts)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(verts)):
        for j in index.neighbors_of(i, tol_ft):
            if j > i:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[GeoPoint]] = {}
    for i, v in enumerate(verts):
        groups.setdefault(find(i), []).append(v)

    found = []
    for members in groups.values():
        if len(members) >= 3:
            members = sorted(members, key=lambda p: (p.lat_deg, p.lon_deg))
            found.append((centroid(members), len(members)))
    found.sort(key=lambda t: (t[0].lat_deg, t[0].lon_deg))
    return [
        IntersectionCandidate(i + 1, pos, degree) for i, (pos, degree) in enumerate(found)
    ]


def last_in_runs(
    detections: list[DetectionRecord], max_gap_s: float = DEFAULT_RUN_GAP_S
) -> list[DetectionRecord]:
    """Keep only the last detection of each consecutive-detection run.

    Traffic control devices start getting detected well before the vehicle
    reaches them; the last sighting of a run is the closest one. Runs are
    per (subj, drive, object_class), split where the inter-detection gap
    exceeds ``max_gap_s``.
    """
    by_stream: dict[tuple[str, int, str], list[DetectionRecord]] = {}
    for det in detections:
        by_stream.setdefault((det.subj, det.drive, det.object_class), []).append(det)

    kept: list[DetectionRecord] = []
    for key in sorted(by_stream):
        stream = sorted(by_stream[key], key=DetectionRecord.sort_key)
        for i, det in enumerate(stream):
            if i + 1 == len(stream):
                kept.append(det)
            else:
                gap = (stream[i + 1].t_utc - det.t_utc).total_seconds()
                if gap > max_gap_s:
                    kept.append(det)
    kept.sort(key=DetectionRecord.sort_key)
    return kept


def dbscan_labels(
    points: list[GeoPoint], eps_ft: float = DEFAULT_EPS_FT, min_pts: int = DEFAULT_MIN_PTS
) -> list[int]:
    """Classic DBSCAN over a haversine metric; -1 marks noise.

    A point is core when its eps-neighborhood (itself included) holds at
    least ``min_pts`` points. With min_pts = 2 the clusters are exactly the
    connected components of the eps-threshold graph.
    """
    n = len(points)
    labels: list[int | None] = [None] * n
    if n == 0:
        return []
    index = GridIndex(points, cell_ft=eps_ft)
    cluster = -1
    for i in range(n):
        if labels[i] is not None:
            continue
        neighborhood = index.neighbors_of(i, eps_ft)
        if len(neighborhood) < min_pts:
            labels[i] = -1
            continue
        cluster += 1
        labels[i] = cluster
        queue = deque(j for j in neighborhood if j != i)
        while queue:
            j = queue.popleft()
            if labels[j] == -1:
                labels[j] = cluster  # border point previously tagged as noise
            if labels[j] is not None:
                continue
            labels[j] = cluster
            reach = index.neighbors_of(j, eps_ft)
            if len(reach) >= min_pts:
                # Noise-labeled points stay eligible: they become border
                # points when a core point reaches them.
                queue.extend(k for k in reach if labels[k] is None or labels[k] == -1)
    return [lab if lab is not None else -1 for lab in labels]


def cluster_detections(
    detections: list[DetectionRecord],
    eps_ft: float = DEFAULT_EPS_FT,
    min_pts: int = DEFAULT_MIN_PTS,
) -> list[DetectionCluster]:
    """DBSCAN the detection positions into clusters with centroid centers.

    Noise detections are excluded. Cluster IDs are assigned by the (lat,
    lon) of each cluster's minimal member so output is stable under input
    permutation.
    """
    labels = dbscan_labels([d.pos for d in detections], eps_ft, min_pts)
    groups: dict[int, list[DetectionRecord]] = {}
    for det, lab in zip(detections, labels):
        if lab >= 0:
            groups.setdefault(lab, []).append(det)

    built = []
    for members in groups.values():
        members = sorted(members, key=DetectionRecord.sort_key)
        positions = sorted(
            (m.pos for m in members), key=lambda p: (p.lat_deg, p.lon_deg)
        )
        built.append((positions[0], members, centroid(positions)))
    built.sort(key=lambda t: ((t[0].lat_deg, t[0].lon_deg), t[1][0].sort_key()))
    return [
        DetectionCluster(i + 1, members, center)
        for i, (_, members, center) in enumerate(built)
    ]


def match_clusters(
    centers: list[tuple[int, GeoPoint]],
    candidates: list[IntersectionCandidate],
    max_match_ft: float = DEFAULT_MAX_MATCH_FT,
) -> tuple[list[VisitedCandidate], list[UnmatchedCluster]]:
    """Snap cluster centers to their nearest intersection candidates.

    Centers farther than ``max_match_ft`` from every candidate land in the
    unmatched report. Candidates matched by several centers are emitted
    once, carrying all supporting cluster IDs and the smallest match
    distance. Every input center appears in exactly one of the two outputs.
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    cands = sorted(candidates, key=lambda c: c.intxn_id)
    lats = np.array([c.pos.lat_deg for c in cands], dtype=float)
    lons = np.array([c.pos.lon_deg for c in cands], dtype=float)

    matched: dict[int, list[tuple[int, float]]] = {}
    unmatched: list[UnmatchedCluster] = []
    for cluster_id, center in sorted(centers, key=lambda t: t[0]):
        dists = _haversine_many(center, lats, lons)
        k = int(np.argmin(dists))  # ties resolve to the lowest intxn_id
        dist = float(dists[k])
        if dist > max_match_ft:
            unmatched.append(UnmatchedCluster(cluster_id, center, cands[k].intxn_id, dist))
        else:
            matched.setdefault(k, []).append((cluster_id, dist))

    visited = []
    for k in sorted(matched):
        support = matched[k]
        visited.append(
            VisitedCandidate(
                cands[k].intxn_id,
                cands[k].pos,
                sorted(cid for cid, _ in support),
                min(dist for _, dist in support),
            )
        )
    return visited, unmatched


# ---------------------------------------------------------------------------
# GeoJSON interchange

def load_network_geojson(source: str | Path | IO) -> RoadNetwork:
    """Read a WGS84 FeatureCollection of LineString/MultiLineString features."""
    handle, owned = (source, False) if hasattr(source, "read") else (resolve_uri(source, "r"), True)
    try:
        doc = json.load(handle)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid GeoJSON: {exc}") from exc
    finally:
        if owned:
            handle.close()
    if doc.get("type") != "FeatureCollection":
        raise DataError("road network must be a GeoJSON FeatureCollection")

    polylines: list[tuple[str, list[GeoPoint]]] = []

    def add_line(line_id: str, coords) -> None:
        if len(coords) < 2:
            raise DataError(f"polyline {line_id!r} has fewer than 2 vertices")
        polylines.append((line_id, [GeoPoint(lat, lon) for lon, lat, *_ in coords]))

    for i, feature in enumerate(doc.get("features", [])):
        geom = feature.get("geometry") or {}
        props = feature.get("properties") or {}
        line_id = str(feature.get("id", props.get("id", i)))
        gtype = geom.get("type")
        if gtype == "LineString":
            add_line(line_id, geom.get("coordinates", []))
        elif gtype == "MultiLineString":
            for k, part in enumerate(geom.get("coordinates", [])):
                add_line(f"{line_id}:{k}", part)
        else:
            raise DataError(f"unsupported geometry type {gtype!r} in feature {line_id!r}")
    return RoadNetwork(polylines)


def _point_feature(pos: GeoPoint, properties: dict) -> dict:
    return {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [pos.lon_deg, pos.lat_deg]},
        "properties": properties,
    }


def candidates_to_geojson(candidates: list[IntersectionCandidate]) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            _point_feature(c.pos, {"intxn_id": c.intxn_id, "degree": c.degree})
            for c in sorted(candidates, key=lambda c: c.intxn_id)
        ],
    }


def candidates_from_geojson(doc: dict) -> list[IntersectionCandidate]:
    out = []
    for feature in doc.get("features", []):
        coords = feature["geometry"]["coordinates"]
        props = feature["properties"]
        out.append(
            IntersectionCandidate(
                int(props["intxn_id"]), GeoPoint(coords[1], coords[0]), int(props["degree"])
            )
        )
    return sorted(out, key=lambda c: c.intxn_id)


def visited_to_geojson(visited: list[VisitedCandidate]) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            _point_feature(
                v.pos,
                {
                    "intxn_id": v.intxn_id,
                    "supporting_cluster_ids": v.supporting_cluster_ids,
                    "match_dist_ft": v.match_dist_ft,
                },
            )
            for v in sorted(visited, key=lambda v: v.intxn_id)
        ],
    }


def visited_from_geojson(doc: dict) -> list[VisitedCandidate]:
    out = []
    for feature in doc.get("features", []):
        coords = feature["geometry"]["coordinates"]
        props = feature["properties"]
        out.append(
            VisitedCandidate(
                int(props["intxn_id"]),
                GeoPoint(coords[1], coords[0]),
                [int(x) for x in props["supporting_cluster_ids"]],
                float(props["match_dist_ft"]),
            )
        )
    return sorted(out, key=lambda v: v.intxn_id)


def save_geojson(doc: dict, dest: str | Path | IO) -> None:
    handle, owned = (dest, False) if hasattr(dest, "write") else (resolve_uri(dest, "w"), True)
    try:
        json.dump(doc, handle, indent=2)
        handle.write("\n")
    finally:
        if owned:
            handle.close()


def load_geojson(source: str | Path | IO) -> dict:
    handle, owned = (source, False) if hasattr(source, "read") else (resolve_uri(source, "r"), True)
    try:
        return json.load(handle)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid GeoJSON: {exc}") from exc
    finally:
        if owned:
            handle.close()
