import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from unseendet.errors import ValidationError
from unseendet.shapesworld import (
    CLASSIFICATION,
    DETECTION,
    SHAPES,
    VOCABULARY,
    DirectoryFetcher,
    GeneratorConfig,
    SyntheticFetcher,
    generate_classification_set,
    generate_detection_set,
    ingest_directory,
    load_arrays,
    load_manifest,
    validate_manifest,
)

CLASSES = ["triangle", "circle", "star5"]


@pytest.fixture(scope="module")
def det_set(tmp_path_factory):
    return generate_detection_set(CLASSES, 24, seed=7, root=tmp_path_factory.mktemp("det"))


@pytest.fixture(scope="module")
def cls_set(tmp_path_factory):
    return generate_classification_set(CLASSES, 12, seed=7, root=tmp_path_factory.mktemp("cls"))


class TestVocabulary:
    def test_thirty_shapes(self):
        assert len(SHAPES) == 30
        assert list(VOCABULARY) == sorted(SHAPES)

    def test_every_shape_renders_in_taxonomy(self, taxonomy):
        for name in VOCABULARY:
            assert name in taxonomy.nodes


class TestDetectionSet:
    def test_valid(self, det_set):
        assert det_set.kind == DETECTION
        assert validate_manifest(det_set) == []

    def test_objects_per_image(self, det_set):
        cfg = GeneratorConfig()
        for s in det_set.samples:
            assert 1 <= len(s.objects) <= cfg.max_objects
            assert (s.width, s.height) == (cfg.size, cfg.size)

    def test_boxes_tight(self, det_set):
        # every box edge sits on the object: background columns differ from box columns
        s = det_set.samples[0]
        for o in s.objects:
            x0, y0, x1, y1 = o.bbox
            assert x1 - x0 >= 4 and y1 - y0 >= 4

    def test_determinism(self, det_set, tmp_path):
        again = generate_detection_set(CLASSES, 24, seed=7, root=tmp_path)
        assert again.content_hash() == det_set.content_hash()

    def test_seed_changes_content(self, det_set, tmp_path):
        other = generate_detection_set(CLASSES, 24, seed=8, root=tmp_path)
        assert other.content_hash() != det_set.content_hash()

    def test_roughly_balanced(self, tmp_path):
        m = generate_detection_set(CLASSES, 60, seed=1, root=tmp_path)
        counts = {c: 0 for c in CLASSES}
        for s in m.samples:
            for o in s.objects:
                counts[o.cls] += 1
        assert max(counts.values()) - min(counts.values()) <= 0.25 * max(counts.values())

    def test_focus_in_every_image(self, tmp_path):
        m = generate_detection_set(CLASSES, 10, seed=3, cfg=GeneratorConfig(focus="hexagon"), root=tmp_path)
        assert all(any(o.cls == "hexagon" for o in s.objects) for s in m.samples)
        assert m.classes[0] == "hexagon"

    def test_unknown_class(self, tmp_path):
        with pytest.raises(ValidationError):
            generate_detection_set(["not-a-shape"], 2, 0, root=tmp_path)

    def test_meta_records_config(self, det_set):
        meta = json.loads((det_set.root / "meta.json").read_text())
        assert meta["config_hash"] == GeneratorConfig().digest()
        assert meta["kind"] == DETECTION

    def test_round_trip(self, det_set):
        back = load_manifest(det_set.root)
        assert back.samples == det_set.samples
        assert back.classes == det_set.classes
        assert back.content_hash() == det_set.content_hash()


class TestClassificationSet:
    def test_valid(self, cls_set):
        assert cls_set.kind == CLASSIFICATION
        assert validate_manifest(cls_set) == []

    def test_single_full_image_box(self, cls_set):
        for s in cls_set.samples:
            assert len(s.objects) == 1
            assert s.objects[0].bbox == (0, 0, s.width, s.height)

    def test_object_is_large(self, tmp_path):
        # clean backgrounds so the painted shape is the only off-background colour
        cfg = GeneratorConfig(noise=0.0, max_distractors=0)
        m = generate_classification_set(CLASSES, 9, seed=11, cfg=cfg, root=tmp_path)
        for s in m.samples:
            with Image.open(m.image_path(s)) as im:
                a = np.asarray(im.convert("RGB"), dtype=np.int64)
            fg = np.abs(a - a[0, 0]).sum(axis=-1) > 0
            ys, xs = np.nonzero(fg)
            extent = max(xs.max() - xs.min(), ys.max() - ys.min()) + 1
            assert extent >= 0.6 * min(s.width, s.height)

    def test_synthetic_fetcher(self, tmp_path):
        m = SyntheticFetcher(4, seed=2).fetch("goatlike", tmp_path)
        assert m.classes == ["goatlike"] and len(m.samples) == 4


class TestIngest:
    def test_skips_undecodable(self, tmp_path, caplog):
        Image.new("RGB", (40, 30), (10, 20, 30)).save(tmp_path / "a.png")
        Image.new("RGB", (50, 50), (90, 20, 30)).save(tmp_path / "b.jpg")
        (tmp_path / "c.png").write_bytes(b"definitely not an image")
        with caplog.at_level("WARNING"):
            m = ingest_directory(tmp_path, "goatlike")
        assert [s.image for s in m.samples] == ["a.png", "b.jpg"]
        assert m.samples[0].objects[0].bbox == (0, 0, 40, 30)
        assert "c.png" in caplog.text
        assert validate_manifest(m) == []

    def test_empty_dir(self, tmp_path):
        with pytest.raises(ValidationError):
            ingest_directory(tmp_path, "goatlike")

    def test_nothing_decodable(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"\x89PNG broken")
        with pytest.raises(ValidationError):
            ingest_directory(tmp_path, "goatlike")

    def test_directory_fetcher_copies(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        Image.new("RGB", (20, 20)).save(src / "one.png")
        m = DirectoryFetcher(src).fetch("goatlike", tmp_path / "dst")
        assert validate_manifest(m) == []
        assert load_manifest(tmp_path / "dst").samples == m.samples


class TestValidate:
    def test_reports_bad_box(self, det_set, tmp_path):
        m = load_manifest(det_set.root)
        s = m.samples[0]
        s.objects[0] = type(s.objects[0])(s.objects[0].cls, (5, 5, 500, 6))
        assert any("bbox" in p for p in validate_manifest(m))

    def test_reports_missing_image(self, det_set):
        m = load_manifest(det_set.root)
        m.samples[0].image = "images/missing.png"
        assert any("missing" in p for p in validate_manifest(m))


class TestArrays:
    def test_shapes_and_range(self, det_set):
        x, t = load_arrays(det_set, 32)
        assert x.shape == (24, 3, 32, 32) and x.dtype == np.float32
        assert 0.0 <= x.min() and x.max() <= 1.0
        assert len(t) == 24

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 23))
    def test_fraction_boxes(self, det_set, i):
        _, t = load_arrays(det_set, 96)
        for (c, b), o in zip(t[i], det_set.samples[i].objects):
            assert c == o.cls
            np.testing.assert_allclose(np.asarray(b) * 96, o.bbox)
