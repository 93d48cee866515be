import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from boxfusion import (
    ConfigError,
    ParseError,
    ValidationError,
    parse_config,
    parse_detections,
    parse_ground_truth,
    write_detections,
    write_ground_truth,
    write_sliced_detections,
)

from helpers import det, gt

CATEGORIES = [{"id": 1, "name": "Car"}, {"id": 2, "name": "Bike"}]


def detection_payload(records, source_id="model_a", categories=CATEGORIES):
    payload = {"detections": records}
    if source_id is not None:
        payload["source_id"] = source_id
    if categories is not None:
        payload["categories"] = categories
    return payload


def write_json(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def record(image_id="cam1_0001", category_id=1, bbox=(100.0, 100.0, 50.0, 40.0), score=0.9, **extra):
    rec = {"image_id": image_id, "category_id": category_id, "bbox": list(bbox), "score": score}
    rec.update(extra)
    return rec


GT_PAYLOAD = {
    "images": [
        {"id": "cam1_0001", "width": 1280, "height": 1280, "file_name": "cam1_0001.jpg"},
        {"id": "cam1_0002", "width": 1280, "height": 1280, "file_name": "cam1_0002.jpg"},
    ],
    "annotations": [
        {"image_id": "cam1_0001", "category_id": 3, "bbox": [100, 100, 50, 40]},
        {"image_id": "cam1_0002", "category_id": 4, "bbox": [5, 5, 30, 60]},
    ],
    "categories": [
        {"id": 1, "name": "Bus"},
        {"id": 2, "name": "Bike"},
        {"id": 3, "name": "Car"},
        {"id": 4, "name": "Pedestrian"},
        {"id": 5, "name": "Truck"},
    ],
}


# --- detections ------------------------------------------------------------


def test_parse_detection_record(tmp_path):
    path = write_json(tmp_path / "model_a.json", detection_payload([record()]))
    parsed = parse_detections(path)
    (d,) = parsed.to_detections()
    assert d.box.corners() == (100, 100, 150, 140)
    assert d.label == "Car"
    assert d.score == 0.9
    assert d.image_id == "cam1_0001"
    assert d.source_id == "model_a"


def test_parse_rejects_out_of_range_score(tmp_path):
    path = write_json(tmp_path / "bad.json", detection_payload([record(score=1.5)]))
    with pytest.raises(ValidationError, match=r"detections\[0\]\.score"):
        parse_detections(path)


def test_parse_rejects_nonpositive_extent(tmp_path):
    path = write_json(tmp_path / "bad.json", detection_payload([record(bbox=(0, 0, 0, 5))]))
    with pytest.raises(ValidationError, match=r"detections\[0\]\.bbox"):
        parse_detections(path)


def test_parse_empty_detections_ok(tmp_path):
    path = write_json(tmp_path / "empty.json", detection_payload([]))
    assert parse_detections(path).entries == ()


def test_parse_bare_list_with_supplied_categories(tmp_path):
    path = write_json(tmp_path / "preds.json", [record(), record(category_id=2, score=0.5)])
    parsed = parse_detections(path, categories={1: "Car", 2: "Bike"})
    assert parsed.source_id == "preds"
    assert [d.label for d in parsed.to_detections()] == ["Car", "Bike"]


def test_parse_bare_list_without_categories_fails(tmp_path):
    path = write_json(tmp_path / "preds.json", [record()])
    with pytest.raises(ValidationError, match="category map"):
        parse_detections(path)


def test_parse_unknown_category_id(tmp_path):
    path = write_json(tmp_path / "preds.json", detection_payload([record(category_id=99)]))
    with pytest.raises(ValidationError, match=r"detections\[0\]\.category_id"):
        parse_detections(path)


def test_embedded_source_wins_over_argument(tmp_path):
    path = write_json(tmp_path / "file.json", detection_payload([record()], source_id="embedded"))
    assert parse_detections(path, source_id="arg").source_id == "embedded"


def test_field_order_does_not_matter(tmp_path):
    reordered = {"score": 0.9, "bbox": [100, 100, 50, 40], "category_id": 1, "image_id": "cam1_0001"}
    a = parse_detections(write_json(tmp_path / "a.json", detection_payload([record()])))
    b = parse_detections(write_json(tmp_path / "b.json", detection_payload([reordered])))
    assert a.entries == b.entries


def test_integer_image_ids_normalize_to_strings(tmp_path):
    path = write_json(tmp_path / "ints.json", detection_payload([record(image_id=7)]))
    assert parse_detections(path).entries[0].image_id == "7"


def test_malformed_json_reports_location(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"detections": [}', encoding="utf-8")
    with pytest.raises(ParseError) as excinfo:
        parse_detections(path)
    assert excinfo.value.line == 1
    assert excinfo.value.column is not None


def test_missing_file_is_validation_error(tmp_path):
    with pytest.raises(ValidationError):
        parse_detections(tmp_path / "absent.json")


def test_write_then_parse_round_trip(tmp_path):
    dets = [
        det(0.6667, 0, 10.6667, 10, 0.8, label="Car", image_id="a", source_id="m1"),
        det(5, 5, 9, 9, 0.25, label="Bike", image_id="b", source_id="m1"),
    ]
    path = tmp_path / "out.json"
    write_detections(dets, path, source_id="m1")
    back = parse_detections(path).to_detections()
    assert len(back) == len(dets)
    for orig, restored in zip(dets, back):
        assert restored.score == orig.score
        assert restored.label == orig.label
        assert restored.image_id == orig.image_id
        assert restored.source_id == orig.source_id
        assert restored.box.corners() == pytest.approx(orig.box.corners(), abs=1e-4)


def test_round_trip_preserves_mixed_sources(tmp_path):
    dets = [
        det(0, 0, 10, 10, 0.8, source_id="m1"),
        det(20, 20, 30, 30, 0.5, source_id="m2"),
    ]
    path = tmp_path / "mixed.json"
    write_detections(dets, path)
    back = parse_detections(path).to_detections()
    assert [d.source_id for d in back] == ["m1", "m2"]


labels = st.sampled_from(["Bus", "Bike", "Car", "Pedestrian", "Truck"])
coords = st.floats(min_value=0, max_value=2000, allow_nan=False)
extents = st.floats(min_value=0.01, max_value=500, allow_nan=False)
scores = st.floats(min_value=0, max_value=1, allow_nan=False)


@given(
    st.lists(
        st.builds(
            lambda x, y, w, h, s, label, img: det(
                x, y, x + w, y + h, s, label=label, image_id=img, source_id="m1"
            ),
            coords, coords, extents, extents, scores, labels,
            st.sampled_from(["img_0", "img_1"]),
        ),
        max_size=20,
    )
)
def test_round_trip_property(tmp_path_factory, dets):
    path = tmp_path_factory.mktemp("roundtrip") / "dets.json"
    write_detections(dets, path, source_id="m1")
    back = parse_detections(path).to_detections()
    assert len(back) == len(dets)
    for orig, restored in zip(dets, back):
        assert (restored.score, restored.label, restored.image_id, restored.source_id) == (
            orig.score, orig.label, orig.image_id, orig.source_id,
        )
        assert restored.box.corners() == pytest.approx(orig.box.corners(), abs=1e-4)


def test_sliced_write_and_group_round_trip(tmp_path):
    groups = [
        ((0, 0, 640, 640), [det(10, 10, 50, 50, 0.9, label="Car", image_id="img_0")]),
        ((480, 0, 1120, 640), [det(0, 0, 40, 40, 0.6, label="Car", image_id="img_0")]),
    ]
    path = tmp_path / "sliced.json"
    write_sliced_detections(groups, path, source_id="m1")
    parsed = parse_detections(path)
    assert parsed.has_windows
    regrouped = parsed.slice_groups()["img_0"]
    assert [w for w, _ in regrouped] == [(0, 0, 640, 640), (480, 0, 1120, 640)]
    assert regrouped[0][1][0].box.corners() == (10, 10, 50, 50)


# --- ground truth ------------------------------------------------------------


def test_parse_ground_truth_vocabulary(tmp_path):
    path = write_json(tmp_path / "gt.json", GT_PAYLOAD)
    parsed = parse_ground_truth(path)
    assert parsed.vocabulary == {"Bus", "Bike", "Car", "Pedestrian", "Truck"}
    boxes = parsed.to_ground_truth()
    assert len(boxes) == 2
    assert boxes[0].box.corners() == (100, 100, 150, 140)
    assert boxes[0].label == "Car"


def test_ground_truth_unknown_image_reference(tmp_path):
    payload = dict(GT_PAYLOAD, annotations=[{"image_id": "nope", "category_id": 3, "bbox": [0, 0, 5, 5]}])
    path = write_json(tmp_path / "gt.json", payload)
    with pytest.raises(ValidationError, match=r"annotations\[0\]\.image_id"):
        parse_ground_truth(path)


def test_ground_truth_zero_area_bbox(tmp_path):
    payload = dict(GT_PAYLOAD, annotations=[{"image_id": "cam1_0001", "category_id": 3, "bbox": [0, 0, 0, 5]}])
    path = write_json(tmp_path / "gt.json", payload)
    with pytest.raises(ValidationError, match=r"annotations\[0\]\.bbox"):
        parse_ground_truth(path)


def test_ground_truth_out_of_bounds_clipped_with_warning(tmp_path):
    payload = dict(
        GT_PAYLOAD,
        annotations=[{"image_id": "cam1_0001", "category_id": 3, "bbox": [1250.0, 100.0, 60.0, 40.0]}],
    )
    path = write_json(tmp_path / "gt.json", payload)
    with pytest.warns(UserWarning, match="clipping"):
        parsed = parse_ground_truth(path)
    assert parsed.annotations[0].bbox == (1250.0, 100.0, 30.0, 40.0)


def test_ground_truth_fully_outside_rejected(tmp_path):
    payload = dict(
        GT_PAYLOAD,
        annotations=[{"image_id": "cam1_0001", "category_id": 3, "bbox": [2000.0, 100.0, 60.0, 40.0]}],
    )
    path = write_json(tmp_path / "gt.json", payload)
    with pytest.warns(UserWarning):
        with pytest.raises(ValidationError, match="entirely outside"):
            parse_ground_truth(path)


def test_write_ground_truth_round_trip(tmp_path):
    gts = [gt(10, 10, 60, 50, label="Car", image_id="img_0"), gt(0, 0, 16, 34, label="Pedestrian", image_id="img_1")]
    path = tmp_path / "gt.json"
    write_ground_truth(gts, {"img_0": (1280, 1280), "img_1": (1280, 1280)}, path)
    parsed = parse_ground_truth(path)
    assert parsed.vocabulary == {"Car", "Pedestrian"}
    back = parsed.to_ground_truth()
    assert [(g.label, g.image_id) for g in back] == [(g.label, g.image_id) for g in gts]


# --- pipeline config ----------------------------------------------------------


def config_workspace(tmp_path, body):
    dets = write_json(tmp_path / "dets_a.json", detection_payload([record()]))
    dets_b = write_json(tmp_path / "dets_b.json", detection_payload([record()], source_id="model_b"))
    gt_path = write_json(tmp_path / "gt.json", GT_PAYLOAD)
    config_path = tmp_path / "run.toml"
    config_path.write_text(body, encoding="utf-8")
    return config_path


MINIMAL = """
[[sources]]
id = "model_a"
path = "dets_a.json"
"""


def test_minimal_config_defaults(tmp_path):
    config = parse_config(config_workspace(tmp_path, MINIMAL))
    assert config.name == "run"
    assert config.fusion.method == "wbf"
    assert config.fusion.iou_threshold == 0.55
    assert config.threshold.mode == "none"
    assert config.threshold.bins == 256
    assert config.eval is None
    assert config.sources[0].weight == 1.0
    assert config.sources[0].path.is_absolute()


FULL = """
name = "trio"

[[sources]]
id = "model_a"
path = "dets_a.json"
weight = 2.0

[[sources]]
id = "model_b"
path = "dets_b.json"
sliced = false

[fusion]
method = "nmw"
iou_threshold = 0.6

[threshold]
mode = "fixed"
value = 0.571

[eval]
ground_truth = "gt.json"
iou_threshold = 0.5
aggregate = "macro"
"""


def test_full_config(tmp_path):
    config = parse_config(config_workspace(tmp_path, FULL))
    assert config.name == "trio"
    assert [s.source_id for s in config.sources] == ["model_a", "model_b"]
    assert config.sources[0].weight == 2.0
    assert config.fusion.method == "nmw"
    assert config.threshold.mode == "fixed"
    assert config.threshold.value == 0.571
    assert config.eval.aggregate == "macro"


@pytest.mark.parametrize(
    "body,match",
    [
        (MINIMAL + "\n[[sources]]\nid = \"model_a\"\npath = \"dets_b.json\"\n", "duplicate source id"),
        (MINIMAL + "\nmystery = 1\n", "unknown keys"),
        (MINIMAL + "\n[fusion]\nspeed = 9\n", "unknown keys"),
        (MINIMAL + "\n[threshold]\nmode = \"fixed\"\n", "requires a 'value'"),
        (MINIMAL + "\n[threshold]\nmode = \"otsu\"\nvalue = 0.5\n", "conflicts"),
        (MINIMAL + "\n[threshold]\nmode = \"fixed\"\nvalue = 0.5\nbins = 128\n", "conflicts"),
        (MINIMAL + "\n[threshold]\nmode = \"warm\"\n", "threshold.mode"),
        (MINIMAL.replace("dets_a.json", "missing.json"), "file not found"),
        (MINIMAL + "\n[eval]\nground_truth = \"nope.json\"\n", "file not found"),
        (MINIMAL + "\n[fusion]\niou_threshold = 1.5\n", "iou_threshold"),
        (MINIMAL.replace('id = "model_a"', 'id = "model_a"\nweight = -1.0'), "weight"),
        (MINIMAL.replace('id = "model_a"', 'id = "model_a"\nslice_method = "nms"'), "sliced = true"),
        ("", "at least one"),
    ],
)
def test_config_validation_errors(tmp_path, body, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(config_workspace(tmp_path, body))


def test_config_toml_syntax_error(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[[sources]\nid=", encoding="utf-8")
    with pytest.raises(ParseError):
        parse_config(path)


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "absent.toml")
