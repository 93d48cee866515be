import random

import pytest

from boxfusion import (
    BoxCluster,
    ConfigError,
    FusionParams,
    ValidationError,
    apply_source_weights,
    fuse,
    fuse_images,
    fuse_nms,
    fuse_nmw,
    fuse_soft_nms,
    fuse_traced,
    fuse_wbf,
    group_clusters,
    iou,
)

from helpers import det, nms_subset_oracle

T5 = FusionParams(iou_threshold=0.5)


def random_dets(rng, n, image_id="img"):
    out = []
    for i in range(n):
        x1 = rng.uniform(0, 80)
        y1 = rng.uniform(0, 80)
        out.append(
            det(
                x1,
                y1,
                x1 + rng.uniform(5, 40),
                y1 + rng.uniform(5, 40),
                round(rng.random(), 3),
                label=rng.choice(["car", "bike"]),
                image_id=image_id,
                source_id=rng.choice(["m1", "m2", "m3"]),
            )
        )
    return out


def canonical(dets):
    return sorted(
        (d.box.corners(), d.score, d.label, d.source_id) for d in dets
    )


# --- WBF ---------------------------------------------------------------


def test_wbf_worked_example():
    a = det(0, 0, 10, 10, 0.8, source_id="m1")
    b = det(2, 0, 12, 10, 0.4, source_id="m2")
    (fused,) = fuse_wbf([a, b], T5)
    assert fused.box.x1 == pytest.approx(0.6667, abs=1e-4)
    assert fused.box.y1 == pytest.approx(0.0, abs=1e-9)
    assert fused.box.x2 == pytest.approx(10.6667, abs=1e-4)
    assert fused.box.y2 == pytest.approx(10.0, abs=1e-9)
    assert fused.score == 0.8
    assert fused.label == "car"


def test_wbf_singleton_identity():
    d = det(3, 4, 9, 11, 0.7)
    assert fuse_wbf([d], T5) == [d]


def test_wbf_label_gate():
    a = det(0, 0, 10, 10, 0.8, label="car")
    c = det(0, 0, 10, 10, 0.9, label="bike")
    assert canonical(fuse_wbf([a, c], T5)) == canonical([a, c])


def test_wbf_empty_input():
    assert fuse_wbf([], T5) == []


def test_wbf_score_is_cluster_max_and_convex_hull():
    rng = random.Random(7)
    for _ in range(50):
        dets = random_dets(rng, rng.randint(1, 10))
        for fused, members in fuse_traced(dets, FusionParams(method="wbf", iou_threshold=0.5)):
            assert fused.score == max(m.score for m in members)
            assert len({m.label for m in members}) == 1
            for axis in range(4):
                values = [m.box.corners()[axis] for m in members]
                assert min(values) - 1e-9 <= fused.box.corners()[axis] <= max(values) + 1e-9


def test_wbf_all_zero_scores_uses_uniform_mean():
    a = det(0, 0, 10, 10, 0.0)
    b = det(2, 0, 12, 10, 0.0)
    (fused,) = fuse_wbf([a, b], T5)
    assert fused.box.corners() == pytest.approx((1, 0, 11, 10))


# --- NMS ---------------------------------------------------------------


def test_nms_worked_example():
    a = det(0, 0, 10, 10, 0.8)
    b = det(2, 0, 12, 10, 0.4)
    assert fuse_nms([a, b], T5) == [a]


def test_nms_disjoint_all_kept():
    a = det(0, 0, 10, 10, 0.8)
    b = det(50, 50, 60, 60, 0.4)
    assert canonical(fuse_nms([a, b], T5)) == canonical([a, b])


def test_nms_singleton():
    d = det(0, 0, 5, 5, 0.3)
    assert fuse_nms([d], T5) == [d]


def test_nms_kept_boxes_are_inputs():
    rng = random.Random(3)
    dets = random_dets(rng, 12)
    pool = set(dets)
    assert all(kept in pool for kept in fuse_nms(dets, T5))


def test_nms_idempotent():
    rng = random.Random(11)
    for _ in range(30):
        dets = random_dets(rng, rng.randint(0, 10))
        once = fuse_nms(dets, T5)
        assert fuse_nms(once, T5) == once


def test_nms_matches_subset_oracle():
    rng = random.Random(23)
    for _ in range(200):
        dets = random_dets(rng, rng.randint(1, 8))
        threshold = rng.choice([0.3, 0.5, 0.7])
        params = FusionParams(method="nms", iou_threshold=threshold)
        assert canonical(fuse_nms(dets, params)) == canonical(nms_subset_oracle(dets, threshold))


# --- Soft-NMS ----------------------------------------------------------


def test_soft_nms_worked_example():
    a = det(0, 0, 10, 10, 0.8)
    b = det(2, 0, 12, 10, 0.4)
    out = fuse_soft_nms([a, b], T5)
    assert len(out) == 2
    by_score = sorted(out, key=lambda d: -d.score)
    assert by_score[0] == a
    assert by_score[1].score == pytest.approx(0.4 * (1 - 80 / 120), abs=1e-6)
    assert by_score[1].box == b.box


def test_soft_nms_disjoint_scores_unchanged():
    a = det(0, 0, 10, 10, 0.8)
    b = det(50, 50, 60, 60, 0.4)
    assert canonical(fuse_soft_nms([a, b], T5)) == canonical([a, b])


def test_soft_nms_singleton():
    d = det(0, 0, 5, 5, 0.0005)  # below the decay floor, but never decayed
    assert fuse_soft_nms([d], T5) == [d]


def test_soft_nms_duplicate_decays_to_nothing():
    a = det(0, 0, 10, 10, 0.8, source_id="m1")
    b = det(0, 0, 10, 10, 0.6, source_id="m2")  # IoU 1 -> factor 0 -> dropped
    assert fuse_soft_nms([a, b], T5) == [a]


def test_soft_nms_sub_threshold_overlap_not_decayed():
    a = det(0, 0, 10, 10, 0.8)
    b = det(6, 0, 16, 10, 0.4)  # IoU = 4/16 = 0.25 <= 0.5
    assert canonical(fuse_soft_nms([a, b], T5)) == canonical([a, b])


# --- NMW ---------------------------------------------------------------


def test_nmw_worked_example():
    a = det(0, 0, 10, 10, 0.8, source_id="m1")
    b = det(2, 0, 12, 10, 0.4, source_id="m2")
    (fused,) = fuse_nmw([a, b], T5)
    assert fused.box.x1 == pytest.approx(0.5, abs=1e-4)
    assert fused.box.x2 == pytest.approx(10.5, abs=1e-4)
    assert fused.box.y1 == pytest.approx(0.0, abs=1e-6)
    assert fused.box.y2 == pytest.approx(10.0, abs=1e-4)
    assert fused.score == 0.8
    assert fused.label == "car"


def test_nmw_singleton_identity():
    d = det(1, 1, 7, 8, 0.6)
    assert fuse_nmw([d], T5) == [d]


def test_nmw_label_gate():
    a = det(0, 0, 10, 10, 0.8, label="car")
    c = det(1, 0, 11, 10, 0.9, label="bike")
    assert canonical(fuse_nmw([a, c], T5)) == canonical([a, c])


# --- source weights ----------------------------------------------------


def test_apply_source_weights_scales_and_clamps():
    d1 = det(0, 0, 1, 1, 0.8, source_id="m1")
    d2 = det(0, 0, 1, 1, 0.9, source_id="m2")
    out = apply_source_weights([d1, d2], {"m1": 0.5, "m2": 2.0})
    assert out[0].score == pytest.approx(0.4)
    assert out[1].score == 1.0


def test_apply_source_weights_identity():
    dets = [det(0, 0, 1, 1, 0.8, source_id="m1"), det(2, 2, 3, 3, 0.3, source_id="m2")]
    assert apply_source_weights(dets, {"m1": 1.0, "m2": 1.0}) == dets


def test_apply_source_weights_missing_source():
    with pytest.raises(ConfigError):
        apply_source_weights([det(0, 0, 1, 1, 0.8, source_id="m9")], {"m1": 1.0})


def test_fusion_with_weights_unknown_source():
    params = FusionParams(iou_threshold=0.5, source_weights={"m1": 1.0})
    with pytest.raises(ConfigError):
        fuse_wbf([det(0, 0, 1, 1, 0.8, source_id="m2")], params)


def test_weights_applied_before_clustering():
    # Downweighting the nominally stronger source flips the seed choice.
    a = det(0, 0, 10, 10, 0.8, source_id="m1")
    b = det(2, 0, 12, 10, 0.7, source_id="m2")
    params = FusionParams(
        method="nms", iou_threshold=0.5, source_weights={"m1": 0.5, "m2": 1.0}
    )
    (kept,) = fuse_nms([a, b], params)
    assert kept.source_id == "m2"
    assert kept.score == 0.7


# --- shared contracts ---------------------------------------------------


@pytest.mark.parametrize("method", ["wbf", "nms", "soft_nms", "nmw"])
def test_permutation_determinism(method):
    rng = random.Random(int.from_bytes(method.encode(), "big") % 10000)
    dets = random_dets(rng, 12)
    params = FusionParams(method=method, iou_threshold=0.5)
    reference = fuse(dets, params)
    for _ in range(10):
        shuffled = dets[:]
        rng.shuffle(shuffled)
        assert fuse(shuffled, params) == reference


@pytest.mark.parametrize("method", ["wbf", "nmw"])
def test_refuse_fixed_point_on_separated_outputs(method):
    # Inputs built so fused outputs cannot newly overlap above T.
    dets = [
        det(0, 0, 10, 10, 0.9),
        det(1, 0, 11, 10, 0.5),
        det(40, 40, 50, 50, 0.8),
        det(41, 40, 51, 50, 0.4),
    ]
    params = FusionParams(method=method, iou_threshold=0.5)
    once = fuse(dets, params)
    for x, y in zip(once, once[1:]):
        assert x.label != y.label or iou(x.box, y.box) <= params.iou_threshold
    assert fuse(once, params) == once


def test_mixed_image_ids_rejected():
    a = det(0, 0, 10, 10, 0.8, image_id="img1")
    b = det(0, 0, 10, 10, 0.4, image_id="img2")
    with pytest.raises(ValidationError):
        fuse_wbf([a, b], T5)


def test_fuse_images_groups_per_image():
    a = det(0, 0, 10, 10, 0.8, image_id="img1")
    b = det(2, 0, 12, 10, 0.4, image_id="img2")  # overlaps a, but in another image
    out = fuse_images([a, b], FusionParams(method="nms", iou_threshold=0.5))
    assert canonical(out) == canonical([a, b])


def test_group_clusters_members_and_seed():
    a = det(0, 0, 10, 10, 0.8)
    b = det(2, 0, 12, 10, 0.4)
    c = det(50, 50, 60, 60, 0.6)
    clusters = group_clusters([a, b, c], T5)
    assert sorted(len(cl.members) for cl in clusters) == [1, 2]
    big = next(cl for cl in clusters if len(cl.members) == 2)
    assert big.seed == a


def test_cluster_invariants():
    with pytest.raises(ValidationError):
        BoxCluster(members=())
    with pytest.raises(ValidationError):
        BoxCluster(members=(det(0, 0, 1, 1, 0.5, label="car"), det(0, 0, 1, 1, 0.5, label="bike")))
    with pytest.raises(ValidationError):
        BoxCluster(members=(det(0, 0, 1, 1, 0.5), det(0, 0, 1, 1, 0.9)))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"method": "magic"},
        {"iou_threshold": 0.0},
        {"iou_threshold": 1.0},
        {"iou_threshold": 1.5},
        {"soft_nms_mode": "gaussian"},
        {"source_weights": {"m1": 0.0}},
        {"source_weights": {"m1": -1.0}},
    ],
)
def test_fusion_params_validation(kwargs):
    with pytest.raises(ValidationError):
        FusionParams(**kwargs)
