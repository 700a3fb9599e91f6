import io
import random
from datetime import datetime, timedelta, timezone

import pytest

from intxn_pipeline.errors import HeaderMismatchError, StorageNotFoundError
from intxn_pipeline.geo import FT_PER_DEG, GeoPoint, haversine_distance_ft
from intxn_pipeline.ingest import (
    SensorRecord,
    clean_cv,
    clean_sensor,
    compute_cum_dist,
    format_time_utc,
    parse_time_utc,
    write_sensor_csv,
)

SENSOR_HEADER = "subj,drive,time_utc,lat,lon,heading_deg,speed_fps"
CV_HEADER = "subj,drive,time_utc,object_class,confidence"


def sensor_csv(rows, header=SENSOR_HEADER):
    return io.StringIO(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))


def cv_csv(rows):
    return io.StringIO(CV_HEADER + "\n" + "\n".join(rows) + ("\n" if rows else ""))


def test_parse_format_time_roundtrip():
    t = parse_time_utc("2019-05-01T14:03:22.500Z")
    assert t == datetime(2019, 5, 1, 14, 3, 22, 500000, tzinfo=timezone.utc)
    assert format_time_utc(t) == "2019-05-01T14:03:22.500Z"


def test_clean_sensor_well_formed():
    src = sensor_csv(
        [
            "A,1,2019-05-01T12:00:00.000Z,41.0,-96.0,90.0,50.0",
            "A,1,2019-05-01T12:00:01.000Z,41.0,-95.9999,90.0,50.0",
            "A,1,2019-05-01T12:00:02.000Z,41.0,-95.9998,90.0,50.0",
        ]
    )
    records, drops = clean_sensor([src])
    assert len(records) == 3
    assert sum(drops.values()) == 0
    # Odometer column was absent, so it is recomputed from positions.
    assert records[0].cum_dist_ft == 0.0
    assert records[1].cum_dist_ft > 0.0


def test_clean_sensor_drops_out_of_range():
    src = sensor_csv(
        [
            "A,1,2019-05-01T12:00:00.000Z,95.0,-96.0,90.0,50.0",
            "A,1,2019-05-01T12:00:01.000Z,41.0,-96.0,90.0,50.0",
            "A,1,2019-05-01T12:00:02.000Z,41.0,-96.0,360.0,50.0",
            "A,1,2019-05-01T12:00:03.000Z,41.0,-96.0,90.0,-1.0",
        ]
    )
    records, drops = clean_sensor([src])
    assert len(records) == 1
    assert drops["out_of_range"] == 3


def test_clean_sensor_drops_unparseable():
    src = sensor_csv(["A,notanumber,2019-05-01T12:00:00.000Z,41.0,-96.0,90.0,50.0"])
    records, drops = clean_sensor([src])
    assert not records
    assert drops["unparseable"] == 1


def test_clean_sensor_merges_and_sorts_two_files():
    f_b = sensor_csv(["B,1,2019-05-01T12:00:00.000Z,41.0,-96.0,90.0,50.0"])
    f_a = sensor_csv(["A,2,2019-05-01T12:00:00.000Z,41.0,-96.0,90.0,50.0"])
    records, _ = clean_sensor([f_b, f_a])
    assert [(r.subj, r.drive) for r in records] == [("A", 2), ("B", 1)]


def test_clean_sensor_collapses_duplicates():
    src = sensor_csv(
        [
            "A,1,2019-05-01T12:00:00.000Z,41.0,-96.0,90.0,50.0",
            "A,1,2019-05-01T12:00:00.000Z,41.0,-96.0,90.0,50.0",
        ]
    )
    records, drops = clean_sensor([src])
    assert len(records) == 1
    assert drops["duplicate"] == 1


def test_clean_sensor_header_mismatch():
    bad = io.StringIO("subj,drive,time_utc,lat\nA,1,2019-05-01T12:00:00.000Z,41.0\n")
    with pytest.raises(HeaderMismatchError) as err:
        clean_sensor([bad])
    assert "lon" in str(err.value)


def test_clean_sensor_unreadable_file(tmp_path):
    with pytest.raises(StorageNotFoundError):
        clean_sensor([tmp_path / "nope.csv"])


def test_clean_sensor_trusts_supplied_cum_dist():
    src = sensor_csv(
        [
            "A,1,2019-05-01T12:00:00.000Z,41.0,-96.0,90.0,50.0,0.0",
            "A,1,2019-05-01T12:00:01.000Z,41.0,-96.0,90.0,50.0,50.0",
            "A,1,2019-05-01T12:00:02.000Z,41.0,-96.0,90.0,50.0,25.0",
            "A,1,2019-05-01T12:00:03.000Z,41.0,-96.0,90.0,50.0,100.0",
        ],
        header=SENSOR_HEADER + ",cum_dist_ft",
    )
    records, drops = clean_sensor([src])
    assert [r.cum_dist_ft for r in records] == [0.0, 50.0, 100.0]
    assert drops["cum_dist_regression"] == 1


def test_clean_sensor_output_invariant_to_file_order():
    rows = {
        "A": ["A,1,2019-05-01T12:00:00.000Z,41.0,-96.0,90.0,50.0"],
        "B": ["B,1,2019-05-01T12:00:00.000Z,41.1,-96.0,90.0,50.0"],
        "C": ["C,1,2019-05-01T12:00:00.000Z,41.2,-96.0,90.0,50.0"],
    }

    def run(order):
        records, _ = clean_sensor([sensor_csv(rows[k]) for k in order])
        out = io.StringIO()
        write_sensor_csv(records, out)
        return out.getvalue()

    baseline = run("ABC")
    for order in ("ACB", "BAC", "BCA", "CAB", "CBA"):
        assert run(order) == baseline


def _meridian_records(n, spacing_ft=50.0, subj="A", drive=1):
    t0 = datetime(2019, 5, 1, 12, 0, tzinfo=timezone.utc)
    return [
        SensorRecord(
            subj,
            drive,
            t0 + timedelta(seconds=i),
            GeoPoint(41.0 + i * spacing_ft / FT_PER_DEG, -96.0),
            0.0,
            spacing_ft,
            0.0,
        )
        for i in range(n)
    ]


def test_compute_cum_dist_single_record():
    recs = compute_cum_dist(_meridian_records(1))
    assert [r.cum_dist_ft for r in recs] == [0.0]


def test_compute_cum_dist_two_records_100ft_apart():
    t0 = datetime(2019, 5, 1, 12, 0, tzinfo=timezone.utc)
    a = GeoPoint(41.0, -96.0)
    b = GeoPoint(41.0 + 100.0 / FT_PER_DEG, -96.0)
    recs = compute_cum_dist(
        [
            SensorRecord("A", 1, t0, a, 0.0, 50.0, 0.0),
            SensorRecord("A", 1, t0 + timedelta(seconds=2), b, 0.0, 50.0, 0.0),
        ]
    )
    assert recs[0].cum_dist_ft == 0.0
    assert recs[1].cum_dist_ft == pytest.approx(100.0, abs=1e-6)


def test_compute_cum_dist_stationary():
    t0 = datetime(2019, 5, 1, 12, 0, tzinfo=timezone.utc)
    p = GeoPoint(41.0, -96.0)
    recs = compute_cum_dist(
        [SensorRecord("A", 1, t0 + timedelta(seconds=i), p, 0.0, 0.0, 0.0) for i in range(5)]
    )
    assert [r.cum_dist_ft for r in recs] == [0.0] * 5


def test_compute_cum_dist_nondecreasing_and_sums():
    rng = random.Random(5)
    t0 = datetime(2019, 5, 1, 12, 0, tzinfo=timezone.utc)
    raw = []
    lat, lon = 41.0, -96.0
    for i in range(100):
        lat += rng.uniform(-1e-4, 1e-4)
        lon += rng.uniform(-1e-4, 1e-4)
        raw.append(SensorRecord("A", 1, t0 + timedelta(seconds=i), GeoPoint(lat, lon), 0.0, 1.0, 0.0))
    recs = compute_cum_dist(raw)
    cums = [r.cum_dist_ft for r in recs]
    assert all(c1 <= c2 for c1, c2 in zip(cums, cums[1:]))
    total = sum(
        haversine_distance_ft(raw[i].pos, raw[i + 1].pos) for i in range(len(raw) - 1)
    )
    assert cums[-1] == pytest.approx(total, abs=1e-9)


def _sensor_for_join():
    src = sensor_csv(
        [
            "A,1,2019-05-01T12:00:10.000Z,41.0,-96.0,90.0,50.0",
            "A,1,2019-05-01T12:00:10.500Z,41.1,-96.0,90.0,50.0",
        ]
    )
    records, _ = clean_sensor([src])
    return records


def test_clean_cv_joins_nearest_in_time():
    detections, drops = clean_cv(
        [cv_csv(["A,1,2019-05-01T12:00:10.200Z,stop_sign,0.9"])], _sensor_for_join()
    )
    assert len(detections) == 1
    assert detections[0].pos.lat_deg == 41.0  # the 10.0s sample is nearer
    assert drops["no_sensor_match"] == 0


def test_clean_cv_drops_far_detection():
    detections, drops = clean_cv(
        [cv_csv(["A,1,2019-05-01T12:00:14.000Z,stop_sign,0.9"])], _sensor_for_join()
    )
    assert not detections
    assert drops["no_sensor_match"] == 1


def test_clean_cv_tie_breaks_to_earlier_sample():
    detections, _ = clean_cv(
        [cv_csv(["A,1,2019-05-01T12:00:10.250Z,stop_sign,0.9"])], _sensor_for_join()
    )
    assert detections[0].pos.lat_deg == 41.0


def test_clean_cv_drops_unknown_class_and_bad_confidence():
    detections, drops = clean_cv(
        [
            cv_csv(
                [
                    "A,1,2019-05-01T12:00:10.000Z,pedestrian,0.9",
                    "A,1,2019-05-01T12:00:10.000Z,stop_sign,1.5",
                ]
            )
        ],
        _sensor_for_join(),
    )
    assert not detections
    assert drops["unknown_class"] == 1
    assert drops["out_of_range"] == 1


def test_clean_tables_bundles_both_passes():
    from intxn_pipeline.ingest import clean_tables

    tables = clean_tables(
        [sensor_csv(["A,1,2019-05-01T12:00:10.000Z,41.0,-96.0,90.0,50.0"])],
        [cv_csv(["A,1,2019-05-01T12:00:10.100Z,stop_sign,0.9"])],
    )
    assert len(tables.sensor) == 1
    assert len(tables.detections) == 1
    assert set(tables.drop_report) == {"sensor", "detections"}


def test_clean_cv_all_outputs_within_tolerance():
    rng = random.Random(21)
    sensor = _sensor_for_join()
    rows = [
        f"A,1,2019-05-01T12:00:{rng.uniform(5, 15):06.3f}Z,stop_sign,0.9" for _ in range(50)
    ]
    detections, _ = clean_cv([cv_csv(rows)], sensor)
    times = [r.t_utc for r in sensor]
    for det in detections:
        assert min(abs((det.t_utc - t).total_seconds()) for t in times) <= 0.5
