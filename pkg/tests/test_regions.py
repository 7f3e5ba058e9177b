"""Part hierarchies, detection post-processing, verification, region ingest."""

import pytest

from visknow.errors import (CyclicTemplate, EmptyMask, ProviderMalformed,
                            UnknownPartLabel, UnparseableAnswer)
from visknow.extraction import HarvestSet
from visknow.graph import (Box, Kind, KnowledgeGraph, RegionAnnotation,
                           VerifyState)
from visknow.persistence import MediaManifestEntry, MediaSource
from visknow.providers import (EchoBoxSegmenter, StubChatProvider,
                               StubDetectionProvider)
from visknow.regions import (PartHierarchy, box_to_mask, build_part_hierarchy,
                             dedupe_detections, detect_parts,
                             ingest_annotations, load_part_templates,
                             parse_yes_no, verify_region)
from visknow.rle import mask_area


MAMMAL_PARTS = [
    {"label": "head", "parent": None},
    {"label": "ear", "parent": "head", "repeatable": True},
    {"label": "eye", "parent": "head", "repeatable": True},
    {"label": "leg", "parent": None, "repeatable": True},
    {"label": "tail", "parent": None},
]


def _entry(image="img-1", width=100, height=80):
    return MediaManifestEntry(image=image, category_label="zebra",
                              source=MediaSource.WEB, uri="",
                              width=width, height=height)


def test_hierarchy_build_structure():
    hier = build_part_hierarchy("Zebra", MAMMAL_PARTS)
    assert hier.root == "zebra"
    assert hier.part_labels() == ["ear", "eye", "head", "leg", "tail"]
    assert hier.children("head") == ["ear", "eye"]
    assert hier.children("zebra") == ["head", "leg", "tail"]
    assert hier.is_repeatable("leg") and not hier.is_repeatable("tail")
    assert "EAR " in hier and "hoof" not in hier


def test_hierarchy_insertion_order_is_irrelevant():
    shuffled = [MAMMAL_PARTS[i] for i in (1, 4, 0, 3, 2)]
    a = build_part_hierarchy("zebra", MAMMAL_PARTS)
    b = build_part_hierarchy("zebra", shuffled)
    assert a.part_labels() == b.part_labels()
    assert all(a.nodes[l].parent == b.nodes[l].parent for l in a.nodes)


def test_hierarchy_rejects_duplicates_and_orphans():
    with pytest.raises(CyclicTemplate):
        build_part_hierarchy("zebra", MAMMAL_PARTS + [{"label": "Tail"}])
    with pytest.raises(CyclicTemplate):
        build_part_hierarchy("zebra", [{"label": "a", "parent": "ghost"}])
    with pytest.raises(CyclicTemplate):
        build_part_hierarchy("zebra", [{"label": "a", "parent": "b"},
                                       {"label": "b", "parent": "a"}])


def test_hierarchy_includes_harvested_parts():
    harvest = HarvestSet(document="d", entities={"mane": "Part",
                                                 "zebra": "Animal",
                                                 "tail": "Part"})
    hier = build_part_hierarchy("zebra", MAMMAL_PARTS, harvest)
    assert "mane" in hier
    assert hier.nodes["mane"].parent == "zebra"
    # template wins for labels present in both
    assert hier.origin_of("tail") != hier.origin_of("mane")


def test_default_templates_load():
    templates = load_part_templates()
    assert "mammal" in templates and "bird" in templates
    hier = build_part_hierarchy("zebra", templates["mammal"])
    assert "leg" in hier and hier.is_repeatable("leg")


def test_detect_parts_is_label_order_invariant():
    boxes = [
        {"label": "Leg", "x": 10, "y": 20, "w": 15, "h": 30, "score": 0.9},
        {"label": "leg", "x": 40, "y": 20, "w": 15, "h": 30, "score": 0.7},
        {"label": "tail", "x": 80, "y": 10, "w": 10, "h": 25, "score": 0.8},
        {"label": "cloud", "x": 0, "y": 0, "w": 5, "h": 5, "score": 0.99},
    ]
    provider = StubDetectionProvider({"img-1": boxes})
    entry = _entry()
    a = detect_parts(entry, ["leg", "tail"], provider)
    b = detect_parts(entry, ["tail", "leg"], provider)
    assert [(d.label, d.score) for d in a.boxes] == \
        [(d.label, d.score) for d in b.boxes]
    assert [d.label for d in a.boxes] == ["leg", "leg", "tail"]
    # non-queried label filtered even though it scored highest
    assert all(d.label != "cloud" for d in a.boxes)


def test_detect_parts_applies_floor_and_clamps():
    boxes = [
        {"label": "leg", "x": -10, "y": -5, "w": 30, "h": 20, "score": 0.9},
        {"label": "leg", "x": 95, "y": 70, "w": 30, "h": 30, "score": 0.8},
        {"label": "leg", "x": 5, "y": 5, "w": 4, "h": 4, "score": 0.29},
        {"label": "leg", "x": 200, "y": 5, "w": 4, "h": 4, "score": 0.9},
    ]
    provider = StubDetectionProvider({"img-1": boxes})
    result = detect_parts(_entry(), ["leg"], provider)
    assert len(result.boxes) == 2
    first = result.boxes[0].box
    assert (first.x, first.y, first.w, first.h) == (0.0, 0.0, 20.0, 15.0)
    second = result.boxes[1].box
    assert (second.x2, second.y2) == (100.0, 80.0)


def test_detect_parts_rejects_malformed():
    entry = _entry()
    bad_score = StubDetectionProvider(
        {"img-1": [{"label": "leg", "x": 1, "y": 1, "w": 2, "h": 2, "score": 1.5}]})
    with pytest.raises(ProviderMalformed):
        detect_parts(entry, ["leg"], bad_score)
    missing = StubDetectionProvider({"img-1": [{"label": "leg", "x": 1}]})
    with pytest.raises(ProviderMalformed):
        detect_parts(entry, ["leg"], missing)
    with pytest.raises(ValueError):
        detect_parts(entry, [], StubDetectionProvider({}))


def test_dedupe_keeps_top_box_for_unique_parts():
    hier = build_part_hierarchy("zebra", MAMMAL_PARTS)
    boxes = [
        {"label": "tail", "x": 10, "y": 10, "w": 20, "h": 20, "score": 0.9},
        {"label": "tail", "x": 50, "y": 50, "w": 20, "h": 20, "score": 0.8},
    ]
    result = detect_parts(_entry(), ["tail"], StubDetectionProvider({"img-1": boxes}))
    deduped = dedupe_detections(result, hier)
    assert len(deduped.boxes) == 1 and deduped.boxes[0].score == 0.9


def test_dedupe_nms_for_repeatable_parts():
    hier = build_part_hierarchy("zebra", MAMMAL_PARTS)
    boxes = [
        {"label": "leg", "x": 10, "y": 10, "w": 20, "h": 40, "score": 0.9},
        # heavy overlap with the first: suppressed
        {"label": "leg", "x": 12, "y": 10, "w": 20, "h": 40, "score": 0.8},
        # disjoint: kept
        {"label": "leg", "x": 60, "y": 10, "w": 20, "h": 40, "score": 0.7},
    ]
    result = detect_parts(_entry(), ["leg"], StubDetectionProvider({"img-1": boxes}))
    deduped = dedupe_detections(result, hier)
    assert [d.score for d in deduped.boxes] == [0.9, 0.7]


def test_parse_yes_no():
    assert parse_yes_no("Yes, it is.") is True
    assert parse_yes_no("  no") is False
    assert parse_yes_no("NO way") is False
    for bad in ("maybe", "I think yes", ""):
        with pytest.raises(UnparseableAnswer):
            parse_yes_no(bad)


def test_verify_region_updates_state():
    ann = RegionAnnotation(image="img-1", box=Box(1, 2, 3, 4), label="mane")
    yes = StubChatProvider(default="Yes.")
    verdict = verify_region(ann, yes, "zebra")
    assert verdict.verdict is True
    assert ann.verified is VerifyState.AUTO_VERIFIED
    assert "mane" in yes.calls[0] and "img-1" in yes.calls[0]

    ann2 = RegionAnnotation(image="img-1", box=Box(1, 2, 3, 4), label="mane")
    verify_region(ann2, StubChatProvider(default="no"), "zebra")
    assert ann2.verified is VerifyState.REJECTED

    ann3 = RegionAnnotation(image="img-1", box=Box(1, 2, 3, 4), label="mane")
    with pytest.raises(UnparseableAnswer):
        verify_region(ann3, StubChatProvider(default="dunno"), "zebra")
    assert ann3.verified is VerifyState.UNREVIEWED


def test_box_to_mask_clips_to_box():
    segmenter = EchoBoxSegmenter({"img-1": (100, 80)})
    mask = box_to_mask("img-1", Box(10, 10, 20, 15), segmenter)
    assert mask.width == 100 and mask.height == 80
    assert mask_area(mask) == 20 * 15


def test_box_to_mask_empty_raises():
    class EmptySegmenter:
        def segment(self, image_uri, box):
            return [100 * 80], 100, 80

    with pytest.raises(EmptyMask):
        box_to_mask("img-1", Box(10, 10, 20, 15), EmptySegmenter())

    class BadSegmenter:
        def segment(self, image_uri, box):
            return [1, 2], 100, 80  # counts do not cover the image

    with pytest.raises(ProviderMalformed):
        box_to_mask("img-1", Box(10, 10, 20, 15), BadSegmenter())


def _ann(label, x=0, score=0.9, verified=VerifyState.AUTO_VERIFIED):
    return RegionAnnotation(image="img-1", box=Box(x, 0, 10, 10), label=label,
                            verified=verified, score=score)


def test_ingest_attaches_and_counts():
    g = KnowledgeGraph()
    hier = build_part_hierarchy("zebra", MAMMAL_PARTS)
    report = ingest_annotations(g, hier, [
        _ann("tail"), _ann("leg", x=20), _ann("leg", x=40),
        _ann("tail"),  # same (image, box): duplicate
        _ann("tail", x=5, verified=VerifyState.REJECTED),
        _ann("tail", x=6, verified=VerifyState.UNREVIEWED),
    ])
    assert report.counts == {"tail": 1, "leg": 2}
    assert report.duplicates == 1
    assert report.skipped_unverified == 2
    tail = g.entities[g.entity_id_for_label("tail")]
    assert len(tail.groundings) == 1
    assert tail.kind is Kind.VISUAL


def test_ingest_upgrades_entity_kind():
    g = KnowledgeGraph()
    eid = g.upsert_entity("tail", Kind.NON_VISUAL)
    hier = build_part_hierarchy("zebra", MAMMAL_PARTS)
    ingest_annotations(g, hier, [_ann("tail")])
    assert g.entities[eid].kind is Kind.VISUAL
    assert len(g.entities[eid].groundings) == 1


def test_ingest_unknown_label_routes():
    g = KnowledgeGraph()
    hier = build_part_hierarchy("zebra", MAMMAL_PARTS)
    with pytest.raises(UnknownPartLabel):
        ingest_annotations(g, hier, [_ann("propeller")])
    report = ingest_annotations(g, hier, [_ann("propeller")],
                                on_unknown="collect")
    assert [a.label for a in report.unknown] == ["propeller"]
    assert g.entity_id_for_label("propeller") is None
