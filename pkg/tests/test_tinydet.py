import json
import sys

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from unseendet.errors import CheckpointError, CheckpointVersionError, UnknownNameError, ValidationError
from unseendet.evalmap import Detection
from unseendet.shapesworld import BoxLabel, GeneratorConfig, generate_detection_set
from unseendet.tinydet import (
    ArchConfig,
    TensorData,
    TrainSchedule,
    assign,
    baseline_schedule,
    build_targets,
    class_weight_vector,
    compute_loss,
    decode,
    forward,
    forward_tensor,
    init_model,
    load_checkpoint,
    nms,
    rename_slot,
    save_checkpoint,
    set_class_weight_vector,
    supervised_anchors,
    torch_params,
    train,
    unseen_schedule,
    weight_vector_length,
    yolo_loss,
)

from .conftest import SMALL_ARCH

train_mod = sys.modules["unseendet.tinydet.train"]


class TestArch:
    def test_defaults(self):
        a = ArchConfig()
        assert (a.input_size, a.grid, a.num_anchors, a.head_channels) == (96, 6, 2, 64)
        assert weight_vector_length(a) == 130

    @pytest.mark.parametrize("kw", [dict(input_size=90), dict(grid=5), dict(anchors=()), dict(block_depth=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            ArchConfig(**kw)

    def test_dict_round_trip(self):
        a = ArchConfig(anchors=((0.2, 0.3),), block_depth=1)
        assert ArchConfig.from_dict(a.to_dict()) == a


class TestInit:
    def test_deterministic(self):
        a = init_model(SMALL_ARCH, ["a", "b"], 5)
        b = init_model(SMALL_ARCH, ["a", "b"], 5)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_seed_matters(self):
        assert init_model(SMALL_ARCH, ["a"], 1).params_digest() != init_model(SMALL_ARCH, ["a"], 2).params_digest()

    def test_head_width_hundred_classes(self):
        m = init_model(ArchConfig(), [f"c{i}" for i in range(100)], 0)
        assert m.params["head.weight"].shape[0] == 210

    @pytest.mark.parametrize("classes", [[], ["a", "a"]])
    def test_bad_classes(self, classes):
        with pytest.raises(ValidationError):
            init_model(SMALL_ARCH, classes, 0)


class TestForward:
    def test_zero_image_default_arch(self):
        m = init_model(ArchConfig(), ["a", "b", "c"], 0)
        raw = forward(m, np.zeros((3, 96, 96)))
        assert raw.shape == (6, 6, 2, 8)
        assert np.all(np.isfinite(raw))

    def test_pure(self, small_model, rng):
        img = rng.random((3, 32, 32))
        np.testing.assert_array_equal(forward(small_model, img), forward(small_model, img))

    def test_batch_matches_single(self, small_model, rng):
        imgs = rng.random((3, 3, 32, 32))
        batch = forward(small_model, imgs, dtype=torch.float64)
        for i in range(3):
            np.testing.assert_allclose(batch[i], forward(small_model, imgs[i], dtype=torch.float64), atol=1e-12)

    def test_wrong_size(self, small_model):
        with pytest.raises(ValidationError):
            forward(small_model, np.zeros((3, 48, 48)))


class TestLoss:
    def test_assignment_centre_cell(self):
        r, c, a, t = assign((0.55, 0.05, 0.65, 0.2), ArchConfig())
        assert (r, c, a) == (0, 3, 0)
        assert t[0] == pytest.approx(0.6 * 6 - 3)

    def test_assignment_large_box_uses_large_anchor(self):
        assert assign((0.0, 0.0, 1.0, 1.0), ArchConfig())[2] == 1

    def test_supervised_anchors(self):
        full = [[("a", (0.0, 0.0, 1.0, 1.0))], [("b", (0.0, 0.0, 1.0, 1.0))]]
        assert supervised_anchors(full, ArchConfig()) == (1,)
        assert supervised_anchors(full + [[("a", (0.1, 0.1, 0.3, 0.3))]], ArchConfig()) == (0, 1)
        assert supervised_anchors([[]], ArchConfig()) == ()

    def test_empty_gts(self, small_model, rng):
        raw = forward(small_model, rng.random((3, 32, 32)))
        total, parts = compute_loss(small_model, raw, [])
        assert parts["localization"] == 0.0 and parts["classification"] == 0.0
        assert total == pytest.approx(parts["objectness"]) and total > 0

    def test_duplicate_gts(self, small_model, rng):
        raw = forward(small_model, rng.random((3, 32, 32)))
        g = BoxLabel("circle", (2, 3, 20, 22))
        total, _ = compute_loss(small_model, raw, [g, g])
        single, _ = compute_loss(small_model, raw, [g])
        assert np.isfinite(total) and total == pytest.approx(single)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_nonnegative(self, seed):
        m = init_model(SMALL_ARCH, ["circle", "square"], seed % 7)
        r = np.random.default_rng(seed)
        raw = forward(m, r.random((3, 32, 32))) * r.uniform(0.1, 20)
        x0, y0 = r.integers(0, 20, 2)
        total, parts = compute_loss(m, raw, [BoxLabel("square", (int(x0), int(y0), int(x0) + 10, int(y0) + 9))])
        assert total >= 0 and all(v >= 0 for v in parts.values())

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        m = init_model(SMALL_ARCH, ["circle", "square", "triangle"], seed)
        tp = torch_params(m, torch.float64, requires_grad=True)
        x = torch.tensor(rng.random((2, 3, 32, 32)))
        targets = [[("circle", (0.1, 0.1, 0.4, 0.5)), ("square", (0.5, 0.2, 0.9, 0.95))], [("triangle", (0.3, 0.3, 0.7, 0.6))]]
        resp, box, cls = build_targets(targets, SMALL_ARCH, {c: i for i, c in enumerate(m.classes)})

        def loss(params):
            return yolo_loss(forward_tensor(params, SMALL_ARCH, 3, x), resp, box, cls)[0]

        loss(tp).backward()
        names = sorted(tp)
        h = 1e-6
        for _ in range(20):
            name = names[rng.integers(len(names))]
            idx = tuple(int(rng.integers(n)) for n in tp[name].shape)
            with torch.no_grad():
                plus = {k: v.detach().clone() for k, v in tp.items()}
                minus = {k: v.detach().clone() for k, v in tp.items()}
                plus[name][idx] += h
                minus[name][idx] -= h
                fd = (loss(plus) - loss(minus)).item() / (2 * h)
            an = tp[name].grad[idx].item()
            denom = max(abs(fd), abs(an), 1e-6)
            assert abs(fd - an) / denom < 1e-4, (name, idx, fd, an)


class TestRename:
    def test_params_unchanged(self, small_model):
        out = rename_slot(small_model, "circle", "ellipse")
        assert out.params_digest() == small_model.params_digest()
        assert out.classes == ["ellipse", "square", "triangle"]
        assert small_model.classes[0] == "circle"

    def test_involution(self, small_model):
        back = rename_slot(rename_slot(small_model, "square", "diamond"), "diamond", "square")
        assert back.classes == small_model.classes
        assert back.params_digest() == small_model.params_digest()

    def test_existing_target(self, small_model):
        with pytest.raises(ValidationError):
            rename_slot(small_model, "circle", "square")

    def test_unknown_source(self, small_model):
        with pytest.raises(UnknownNameError):
            rename_slot(small_model, "hexagon", "heptagon")


class TestWeightVector:
    def test_round_trip(self, small_model):
        v = class_weight_vector(small_model, "square")
        assert v.shape == (weight_vector_length(SMALL_ARCH),)
        out = set_class_weight_vector(small_model, "square", v)
        assert out.params_digest() == small_model.params_digest()

    def test_wrong_length(self, small_model):
        with pytest.raises(ValidationError):
            set_class_weight_vector(small_model, "square", np.zeros(3))

    def test_only_class_logits_change(self, small_model, rng):
        v = class_weight_vector(small_model, "triangle") + rng.normal(size=weight_vector_length(SMALL_ARCH))
        out = set_class_weight_vector(small_model, "triangle", v)
        img = rng.random((3, 32, 32))
        diff = forward(out, img, dtype=torch.float64) != forward(small_model, img, dtype=torch.float64)
        j = 5 + small_model.class_index("triangle")
        assert diff[..., j].all()
        assert not np.delete(diff, j, axis=-1).any()
        for k in small_model.params:
            assert out.params[k].shape == small_model.params[k].shape


def _raw(arch, n_classes, fill=-20.0):
    return np.full((arch.grid, arch.grid, arch.num_anchors, 5 + n_classes), fill)


class TestDecode:
    def test_threshold_one_is_empty(self, small_model, rng):
        raw = forward(small_model, rng.random((3, 32, 32)))
        assert decode(raw, SMALL_ARCH, small_model.classes, conf_thresh=1.0) == []

    def test_single_confident_box(self):
        arch = ArchConfig()
        raw = _raw(arch, 2)
        raw[2, 3, 0, :4] = 0.0  # centre of cell, anchor-sized box
        raw[2, 3, 0, 4] = 20.0
        raw[2, 3, 0, 5:] = [10.0, -10.0]
        dets = decode(raw, arch, ["a", "b"], conf_thresh=0.5, image_id="x")
        assert len(dets) == 1
        d = dets[0]
        assert d.cls == "a" and d.image_id == "x" and d.confidence > 0.99
        cx, cy, w = (3.5 / 6) * 96, (2.5 / 6) * 96, 0.33 * 96
        np.testing.assert_allclose(d.bbox, (cx - w / 2, cy - w / 2, cx + w / 2, cy + w / 2))

    def test_boxes_clipped(self):
        arch = ArchConfig()
        raw = _raw(arch, 1)
        raw[0, 0, 1, 2:4] = 3.0
        raw[0, 0, 1, 4] = 20.0
        (d,) = decode(raw, arch, ["a"], conf_thresh=0.5)
        assert d.bbox[0] == 0.0 and d.bbox[1] == 0.0 and d.bbox[2] == 96.0 and d.bbox[3] == 96.0

    def test_nms_identical_boxes(self):
        a = Detection("i", "c", 0.9, (0, 0, 10, 10))
        b = Detection("i", "c", 0.8, (0, 0, 10, 10))
        assert nms([a, b], 0.45) == [a]

    def test_nms_keeps_other_class(self):
        a = Detection("i", "c", 0.9, (0, 0, 10, 10))
        b = Detection("i", "d", 0.8, (0, 0, 10, 10))
        assert nms([a, b], 0.45) == [a, b]

    def test_deterministic_order(self, small_model, rng):
        raw = forward(small_model, rng.random((3, 32, 32))) * 3
        d1 = decode(raw, SMALL_ARCH, small_model.classes, conf_thresh=0.0)
        d2 = decode(raw, SMALL_ARCH, small_model.classes, conf_thresh=0.0)
        assert d1 == d2
        confs = [d.confidence for d in d1]
        assert confs == sorted(confs, reverse=True)

    def test_class_scores_sum_to_one(self, small_model, rng):
        from unseendet.tinydet import softmax

        raw = forward(small_model, rng.random((3, 32, 32))) * 10
        np.testing.assert_allclose(softmax(raw[..., 5:]).sum(-1), 1.0, atol=1e-6)


class TestCheckpoint:
    def test_round_trip(self, small_model, tmp_path):
        m = small_model.copy()
        m.params["head.bias"][0] = 1 / 3
        back = load_checkpoint(save_checkpoint(m, tmp_path / "m.json"))
        assert back.classes == m.classes and back.arch == m.arch
        for k in m.params:
            np.testing.assert_array_equal(back.params[k], m.params[k])

    def test_truncated(self, small_model, tmp_path):
        p = save_checkpoint(small_model, tmp_path / "m.json")
        p.write_text(p.read_text()[:200])
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_future_version(self, small_model, tmp_path):
        p = save_checkpoint(small_model, tmp_path / "m.json")
        doc = json.loads(p.read_text())
        doc["format"] = "tinydet-ckpt/2"
        p.write_text(json.dumps(doc))
        with pytest.raises(CheckpointVersionError, match="tinydet-ckpt/2"):
            load_checkpoint(p)

    def test_missing_param(self, small_model, tmp_path):
        p = save_checkpoint(small_model, tmp_path / "m.json")
        doc = json.loads(p.read_text())
        del doc["params"]["head.bias"]
        p.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError):
            load_checkpoint(p)


class TestSchedule:
    def test_baseline_phases(self):
        s = baseline_schedule(epochs=30)
        assert s.lr(0) == s.lr(9) == pytest.approx(1e-3)
        assert s.lr(20) == s.lr(29) == pytest.approx(1e-4)
        mid = [s.lr(e) for e in range(10, 20)]
        assert all(a > b for a, b in zip(mid, mid[1:]))
        assert 1e-4 <= min(mid) and max(mid) < 1e-3

    def test_unseen_constant(self):
        s = unseen_schedule(7)
        assert {s.lr(e) for e in range(7)} == {1e-4}

    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(lr_initial=0), dict(batch_size=0), dict(optimizer="rmsprop")])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            TrainSchedule(**kw)


@pytest.fixture(scope="module")
def toy_set(tmp_path_factory):
    return generate_detection_set(["circle"], 32, seed=1234, root=tmp_path_factory.mktemp("toy"))


class TestTrain:
    def test_loss_decreases(self, toy_set):
        m = init_model(SMALL_ARCH, ["circle", "square"], 1234)
        out, hist = train(m, toy_set, baseline_schedule(epochs=4), seed=1234)
        assert len(hist) == 4 and np.isfinite(hist[0]["loss"])
        assert hist[3]["loss"] < hist[0]["loss"]
        assert out.params_digest() != m.params_digest()
        assert len(out.history) == 4

    def test_bit_reproducible(self, toy_set):
        m = init_model(SMALL_ARCH, ["circle"], 0)
        a, _ = train(m, toy_set, unseen_schedule(2), seed=9)
        b, _ = train(m, toy_set, unseen_schedule(2), seed=9)
        assert a.params_digest() == b.params_digest()

    def test_class_mismatch(self, toy_set):
        with pytest.raises(ValidationError):
            train(init_model(SMALL_ARCH, ["square"], 0), toy_set, unseen_schedule(1), seed=0)

    def test_classes_scope_freezes_box_channels(self, toy_set):
        m = init_model(SMALL_ARCH, ["circle", "square"], 0)
        data = TensorData.from_manifest(toy_set, 32)
        t = train_mod.Trainer(m, data, 1e-2, 0, scope="classes")
        t.epoch(16)
        out = t.model()
        per = 5 + 2
        for name in m.params:
            if name.startswith("conv"):
                np.testing.assert_array_equal(out.params[name], m.params[name])
        for a in range(SMALL_ARCH.num_anchors):
            rows = slice(a * per, a * per + 5)
            np.testing.assert_array_equal(out.params["head.weight"][rows], m.params["head.weight"][rows])
            np.testing.assert_array_equal(out.params["head.bias"][rows], m.params["head.bias"][rows])
        assert not np.array_equal(out.params["head.weight"], m.params["head.weight"])

    def test_head_scope_freezes_backbone(self, toy_set):
        m = init_model(SMALL_ARCH, ["circle"], 0)
        t = train_mod.Trainer(m, TensorData.from_manifest(toy_set, 32), 1e-2, 0, scope="head")
        t.epoch(16)
        out = t.model()
        for name in m.params:
            same = np.array_equal(out.params[name], m.params[name])
            assert same == name.startswith("conv"), name

    def test_unknown_scope(self, small_model, toy_set):
        with pytest.raises(ValidationError):
            train_mod.Trainer(small_model, TensorData.from_manifest(toy_set, 32), 1e-3, 0, scope="backbone")
