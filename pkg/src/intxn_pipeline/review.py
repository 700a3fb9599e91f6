"""File interchange with the human review loop.

Candidates go out as KML for inspection in an earth viewer; the reviewer
keeps true intersections (folder ``true``, or simply deletes false ones),
draws one polygon per controlled approach leg and one line per entering
direction, and the result comes back in here. The annotation side produces
a review-template CSV plus a JSON manifest of allowed values per custom
column, standing in for a spreadsheet with cell validation.
"""

from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

from .errors import DataError, KmlParseError
from .geo import (
    GeoPoint,
    PolygonRing,
    centroid,
    haversine_distance_ft,
    point_in_polygon,
    point_to_segment_ft,
    polyline_midpoint,
)
from .ingest import format_time_utc
from .storage import resolve_uri

KML_NS = "http://www.opengis.net/kml/2.2"

# Spatial-join gates for assembling reviewed geometry. Approach legs sit
# within ~300 ft of their junction, so these bounds are generous.
POLYGON_MATCH_FT = 500.0
LINE_EDGE_MATCH_FT = 100.0

CONTROL_TYPES = ("stop", "signal")

TRUE_FOLDER = "true"
CANDIDATES_FOLDER = "candidates"


@dataclass
class ApproachLeg:
    leg_id: int
    polygon: PolygonRing
    entering_line: list[GeoPoint]
    entering_bearing: float | None = None


@dataclass
class ReviewedIntersection:
    intxn_id: int
    pos: GeoPoint
    control_type: str = "stop"
    approaches: list[ApproachLeg] = field(default_factory=list)


@dataclass
class RejectEntry:
    kind: str  # intersection | polygon | line
    name: str
    reason: str


def _fmt_coord(value: float) -> str:
    return f"{value:.10g}"


def export_candidates_kml(candidates: list, dest: str | Path | IO) -> None:
    """Write one Placemark per candidate into a Folder named ``candidates``.

    Accepts any objects carrying ``intxn_id`` and ``pos``. Placemark names
    are the intersection IDs; coordinates follow KML lon,lat,alt order.
    """
    if not candidates:
        raise ValueError("no candidates to export")
    kml = ET.Element("kml", xmlns=KML_NS)
    doc = ET.SubElement(kml, "Document")
    folder = ET.SubElement(doc, "Folder")
    ET.SubElement(folder, "name").text = CANDIDATES_FOLDER
    for cand in sorted(candidates, key=lambda c: c.intxn_id):
        mark = ET.SubElement(folder, "Placemark")
        ET.SubElement(mark, "name").text = str(cand.intxn_id)
        point = ET.SubElement(mark, "Point")
        ET.SubElement(point, "coordinates").text = (
            f"{_fmt_coord(cand.pos.lon_deg)},{_fmt_coord(cand.pos.lat_deg)},0"
        )
    tree = ET.ElementTree(kml)
    ET.indent(tree)
    payload = ET.tostring(kml, encoding="unicode")
    handle, owned = (dest, False) if hasattr(dest, "write") else (resolve_uri(dest, "w"), True)
    try:
        handle.write('<?xml version="1.0" encoding="UTF-8"?>\n')
        handle.write(payload)
        handle.write("\n")
    finally:
        if owned:
            handle.close()


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _child_text(elem: ET.Element, name: str) -> str | None:
    for child in elem:
        if _local(child.tag) == name:
            return (child.text or "").strip()
    return None


def _find_descendants(elem: ET.Element, name: str) -> list[ET.Element]:
    return [e for e in elem.iter() if _local(e.tag) == name]


def _parse_coordinates(text: str, context: str) -> list[GeoPoint]:
    points = []
    for token in text.split():
        parts = token.split(",")
        if len(parts) < 2:
            raise KmlParseError(f"bad coordinate tuple {token!r} in {context}")
        try:
            lon, lat = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise KmlParseError(f"bad coordinate tuple {token!r} in {context}") from exc
        points.append(GeoPoint(lat, lon))
    return points


@dataclass
class KmlPlacemark:
    name: str
    folders: tuple[str, ...]
    geometry: str  # point | line | polygon
    coordinates: list[GeoPoint]
    extended: dict[str, str]


@dataclass
class KmlFeatures:
    points: list[KmlPlacemark] = field(default_factory=list)
    lines: list[KmlPlacemark] = field(default_factory=list)
    polygons: list[KmlPlacemark] = field(default_factory=list)
    folder_names: set[str] = field(default_factory=set)


def parse_kml_features(source: str | Path | IO) -> KmlFeatures:
    """Extract Point/LineString/Polygon placemarks with their folder context."""
    handle, owned = (source, False) if hasattr(source, "read") else (resolve_uri(source, "r"), True)
    try:
        tree = ET.parse(handle)
    except ET.ParseError as exc:
        raise KmlParseError(f"malformed KML: {exc}") from exc
    finally:
        if owned:
            handle.close()

    feats = KmlFeatures()

    def walk(elem: ET.Element, folders: tuple[str, ...]) -> None:
        for child in elem:
            tag = _local(child.tag)
            if tag == "Folder":
                name = _child_text(child, "name") or ""
                feats.folder_names.add(name)
                walk(child, folders + (name,))
            elif tag in ("Document", "kml"):
                walk(child, folders)
            elif tag == "Placemark":
                _read_placemark(child, folders)

    def _read_placemark(elem: ET.Element, folders: tuple[str, ...]) -> None:
        name = _child_text(elem, "name") or ""
        extended = {}
        for data in _find_descendants(elem, "Data"):
            key = data.get("name")
            if key is not None:
                extended[key] = _child_text(data, "value") or ""
        context = f"placemark {name!r}"
        points = _find_descendants(elem, "Point")
        lines = _find_descendants(elem, "LineString")
        polygons = _find_descendants(elem, "Polygon")
        if points:
            coords = _parse_coordinates(_coords_text(points[0], context), context)
            if len(coords) != 1:
                raise KmlParseError(f"{context}: Point must have exactly one coordinate")
            feats.points.append(KmlPlacemark(name, folders, "point", coords, extended))
        elif lines:
            coords = _parse_coordinates(_coords_text(lines[0], context), context)
            feats.lines.append(KmlPlacemark(name, folders, "line", coords, extended))
        elif polygons:
            rings = _find_descendants(polygons[0], "LinearRing")
            if not rings:
                raise KmlParseError(f"{context}: Polygon without a LinearRing")
            coords = _parse_coordinates(_coords_text(rings[0], context), context)
            # KML closes rings explicitly; our rings are open.
            if len(coords) > 1 and coords[0] == coords[-1]:
                coords = coords[:-1]
            feats.polygons.append(KmlPlacemark(name, folders, "polygon", coords, extended))
        # Placemarks without a recognized geometry are ignored.

    def _coords_text(geom: ET.Element, context: str) -> str:
        text = _child_text(geom, "coordinates")
        if text is None:
            raise KmlParseError(f"{context}: geometry without coordinates")
        return text

    walk(tree.getroot(), ())
    return feats


def _ring_edge_distance_ft(pt: GeoPoint, ring: PolygonRing) -> float:
    verts = ring.vertices
    return min(
        point_to_segment_ft(pt, verts[i], verts[(i + 1) % len(verts)])
        for i in range(len(verts))
    )


def import_reviewed_kml(
    source: str | Path | IO,
    polygon_match_ft: float = POLYGON_MATCH_FT,
    line_edge_match_ft: float = LINE_EDGE_MATCH_FT,
) -> tuple[list[ReviewedIntersection], list[RejectEntry]]:
    """Assemble reviewed intersections from a human-edited KML.

    Point placemarks under a folder named ``true`` (or all point placemarks
    when no such folder exists) become true intersections. Each polygon is
    assigned to the nearest true intersection within ``polygon_match_ft``
    (by polygon centroid); each line to the polygon containing its
    midpoint, else the polygon with the nearest edge within
    ``line_edge_match_ft``. Geometry that cannot be assigned, approaches
    without a direction line, and intersections without approaches all land
    in the rejects report rather than raising.
    """
    feats = parse_kml_features(source)
    rejects: list[RejectEntry] = []

    if TRUE_FOLDER in feats.folder_names:
        true_points = [p for p in feats.points if TRUE_FOLDER in p.folders]
    else:
        true_points = list(feats.points)

    intersections: dict[int, ReviewedIntersection] = {}
    for p in true_points:
        try:
            intxn_id = int(p.name)
        except ValueError:
            rejects.append(RejectEntry("intersection", p.name, "non_integer_name"))
            continue
        if intxn_id in intersections:
            rejects.append(RejectEntry("intersection", p.name, "duplicate_id"))
            continue
        control = p.extended.get("control", "stop")
        if control not in CONTROL_TYPES:
            rejects.append(RejectEntry("intersection", p.name, "invalid_control"))
            continue
        intersections[intxn_id] = ReviewedIntersection(intxn_id, p.coordinates[0], control)

    # (intxn_id, ring, polygon name, entering line or None)
    pending: list[dict] = []
    for poly in feats.polygons:
        try:
            ring = PolygonRing(tuple(poly.coordinates))
        except ValueError:
            rejects.append(RejectEntry("polygon", poly.name, "invalid_polygon"))
            continue
        if not intersections:
            rejects.append(RejectEntry("polygon", poly.name, "unassigned_polygon"))
            continue
        center = centroid(list(ring.vertices))
        best_id = min(
            intersections,
            key=lambda i: (haversine_distance_ft(center, intersections[i].pos), i),
        )
        dist = haversine_distance_ft(center, intersections[best_id].pos)
        if dist > polygon_match_ft:
            rejects.append(RejectEntry("polygon", poly.name, "unassigned_polygon"))
            continue
        pending.append({"intxn_id": best_id, "ring": ring, "name": poly.name, "line": None})

    for line in feats.lines:
        if len(line.coordinates) < 2:
            rejects.append(RejectEntry("line", line.name, "invalid_line"))
            continue
        mid = polyline_midpoint(line.coordinates)
        containing = [
            (i, leg) for i, leg in enumerate(pending) if point_in_polygon(mid, leg["ring"])
        ]
        if containing:
            idx = min(containing, key=lambda t: (_ring_edge_distance_ft(mid, t[1]["ring"]), t[0]))[0]
        else:
            ranked = sorted(
                ((_ring_edge_distance_ft(mid, leg["ring"]), i) for i, leg in enumerate(pending)),
            )
            if not ranked or ranked[0][0] > line_edge_match_ft:
                rejects.append(RejectEntry("line", line.name, "unassigned_line"))
                continue
            idx = ranked[0][1]
        if pending[idx]["line"] is not None:
            rejects.append(RejectEntry("line", line.name, "extra_line"))
            continue
        pending[idx]["line"] = line.coordinates

    for leg in pending:
        if leg["line"] is None:
            rejects.append(RejectEntry("polygon", leg["name"], "no_entering_line"))
            continue
        intxn = intersections[leg["intxn_id"]]
        intxn.approaches.append(
            ApproachLeg(len(intxn.approaches) + 1, leg["ring"], leg["line"])
        )

    reviewed = []
    for intxn_id in sorted(intersections):
        intxn = intersections[intxn_id]
        if not intxn.approaches:
            rejects.append(RejectEntry("intersection", str(intxn_id), "no_polygons"))
            continue
        reviewed.append(intxn)
    return reviewed, rejects


# ---------------------------------------------------------------------------
# Reviewed-intersection JSON (stage interchange)

def reviewed_to_json(reviewed: list[ReviewedIntersection]) -> dict:
    return {
        "intersections": [
            {
                "intxn_id": r.intxn_id,
                "lat": r.pos.lat_deg,
                "lon": r.pos.lon_deg,
                "control_type": r.control_type,
                "approaches": [
                    {
                        "leg_id": leg.leg_id,
                        "polygon": [[v.lat_deg, v.lon_deg] for v in leg.polygon.vertices],
                        "entering_line": [[v.lat_deg, v.lon_deg] for v in leg.entering_line],
                        "entering_bearing": leg.entering_bearing,
                    }
                    for leg in r.approaches
                ],
            }
            for r in sorted(reviewed, key=lambda r: r.intxn_id)
        ]
    }


def reviewed_from_json(doc: dict) -> list[ReviewedIntersection]:
    out = []
    for entry in doc["intersections"]:
        approaches = [
            ApproachLeg(
                int(leg["leg_id"]),
                PolygonRing(tuple(GeoPoint(lat, lon) for lat, lon in leg["polygon"])),
                [GeoPoint(lat, lon) for lat, lon in leg["entering_line"]],
                leg.get("entering_bearing"),
            )
            for leg in entry["approaches"]
        ]
        out.append(
            ReviewedIntersection(
                int(entry["intxn_id"]),
                GeoPoint(entry["lat"], entry["lon"]),
                entry["control_type"],
                approaches,
            )
        )
    return sorted(out, key=lambda r: r.intxn_id)


def save_reviewed_json(reviewed: list[ReviewedIntersection], dest: str | Path | IO) -> None:
    handle, owned = (dest, False) if hasattr(dest, "write") else (resolve_uri(dest, "w"), True)
    try:
        json.dump(reviewed_to_json(reviewed), handle, indent=2)
        handle.write("\n")
    finally:
        if owned:
            handle.close()


def load_reviewed_json(source: str | Path | IO) -> list[ReviewedIntersection]:
    handle, owned = (source, False) if hasattr(source, "read") else (resolve_uri(source, "r"), True)
    try:
        return reviewed_from_json(json.load(handle))
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"invalid reviewed-intersection JSON: {exc}") from exc
    finally:
        if owned:
            handle.close()


# ---------------------------------------------------------------------------
# Review template

REVIEW_COLUMNS = (
    "stop_traj_id",
    "subj",
    "drive",
    "intxn_id",
    "ref_time_utc",
    "primary_sub_age",
    "primary_subj_gender",
    "jump_to_ref",
    "video_url",
)


def read_demographics(source: str | Path | IO) -> dict[str, tuple[str, str]]:
    """Load the subj,age,gender table as a subj -> (age, gender) map."""
    handle, owned = (source, False) if hasattr(source, "read") else (resolve_uri(source, "r"), True)
    try:
        reader = csv.DictReader(handle)
        have = set(reader.fieldnames or ())
        missing = [c for c in ("subj", "age", "gender") if c not in have]
        if missing:
            raise DataError(f"demographics table missing columns: {', '.join(missing)}")
        return {
            row["subj"].strip(): (row["age"].strip(), row["gender"].strip())
            for row in reader
        }
    finally:
        if owned:
            handle.close()


def build_review_template(
    trajs: list,
    clips: list,
    participants: dict[str, tuple[str, str]],
    custom_fields: dict[str, list[str]] | None = None,
    video_base_url: str = "",
) -> tuple[list[dict], dict[str, list[str]], dict[str, int]]:
    """One review row per trajectory, plus the data-validation manifest.

    Returns (rows, manifest, warnings). Rows carry the standard columns in
    their fixed order followed by the custom columns, initially blank. The
    manifest maps each custom column to its allowed values so a data-entry
    front end can validate input. A trajectory without a clip is an error;
    a participant without demographics only costs a warning count.
    """
    custom_fields = custom_fields or {}
    by_traj = {c.traj_id: c for c in clips}
    warnings = {"missing_demographics": 0}
    rows = []
    for traj in sorted(trajs, key=lambda t: (t.subj, t.drive, t.intxn_id)):
        clip = by_traj.get(traj.traj_id)
        if clip is None:
            raise DataError(f"no clip for trajectory {traj.traj_id}")
        demo = participants.get(traj.subj)
        if demo is None:
            warnings["missing_demographics"] += 1
            age, gender = "", ""
        else:
            age, gender = demo
        row = {
            "stop_traj_id": traj.traj_id,
            "subj": traj.subj,
            "drive": traj.drive,
            "intxn_id": traj.intxn_id,
            "ref_time_utc": format_time_utc(traj.ref_time_utc),
            "primary_sub_age": age,
            "primary_subj_gender": gender,
            "jump_to_ref": clip.overlay_on_s,
            "video_url": video_base_url + clip.output_name,
        }
        for name in custom_fields:
            row[name] = ""
        rows.append(row)
    manifest = {name: list(values) for name, values in custom_fields.items()}
    return rows, manifest, warnings


def write_review_csv(
    rows: list[dict], custom_names: list[str], dest: str | Path | IO
) -> None:
    """Write review rows with the fixed column order, then custom columns."""
    header = list(REVIEW_COLUMNS) + list(custom_names)
    handle, owned = (dest, False) if hasattr(dest, "write") else (resolve_uri(dest, "w"), True)
    try:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            out = []
            for col in header:
                value = row.get(col, "")
                if col == "jump_to_ref":
                    value = f"{float(value):.3f}"
                out.append(value)
            w.writerow(out)
    finally:
        if owned:
            handle.close()


def write_validation_manifest(manifest: dict[str, list[str]], dest: str | Path | IO) -> None:
    handle, owned = (dest, False) if hasattr(dest, "write") else (resolve_uri(dest, "w"), True)
    try:
        json.dump(manifest, handle, indent=2)
        handle.write("\n")
    finally:
        if owned:
            handle.close()
