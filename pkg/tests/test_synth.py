"""Procedural scenes and corpora."""

import json

import numpy as np
import pytest

from inpaint_lab.errors import ParameterError
from inpaint_lab.masks import dilate_to_box
from inpaint_lab.synth import Corpus, SceneConfig, Vocabulary, make_corpus, make_scene


class TestVocabulary:
    def test_reserved_ids(self):
        assert Vocabulary.id("<sos>") == 0
        assert Vocabulary.id("<eos>") == 1
        assert Vocabulary.id("<null>") == 2
        assert Vocabulary.id("background") == 3

    def test_stable_size(self):
        assert Vocabulary.size() == 11


class TestMakeScene:
    def test_background_only_prompt(self):
        s = make_scene(0, SceneConfig(n_objects=0))
        assert s.prompt == [Vocabulary.SOS, Vocabulary.BACKGROUND, Vocabulary.EOS]
        assert s.object_mask.data.sum() == 0
        assert s.video.shape == (8, 3, 16, 16)

    def test_determinism(self):
        a = make_scene(3)
        b = make_scene(3)
        assert np.array_equal(a.video, b.video)
        assert np.array_equal(a.object_mask.data, b.object_mask.data)
        assert a.prompt == b.prompt

    def test_red_circle_rendering_rule(self):
        s = make_scene(5, SceneConfig(n_objects=1, force_color="red", force_shape="circle"))
        sel = s.object_mask.data[:, 0].astype(bool)
        red01 = (s.video[:, 0] + 1.0) / 2.0
        assert (red01[sel] >= 0.8).all()

    def test_background_is_gray(self):
        s = make_scene(1, SceneConfig(n_objects=0))
        assert np.allclose(s.video[:, 0], s.video[:, 1])
        assert np.allclose(s.video[:, 1], s.video[:, 2])

    def test_value_range(self):
        s = make_scene(9)
        assert s.video.min() >= -1.0 and s.video.max() <= 1.0

    def test_object_mask_nonempty_every_frame(self):
        s = make_scene(4, SceneConfig(n_objects=1))
        per_frame = s.object_mask.data.reshape(8, -1).sum(axis=1)
        assert (per_frame > 0).all()

    def test_power_of_two_enforced(self):
        with pytest.raises(ParameterError):
            SceneConfig(height=12)

    def test_two_objects_distinct_colors(self):
        s = make_scene(12, SceneConfig(n_objects=2))
        assert len(s.objects) == 2
        assert s.objects[0].color != s.objects[1].color
        spans = [o.span for o in s.objects]
        assert spans[0] == (1, 3) and spans[1] == (3, 5)


class TestTrajectoryAgreement:
    def test_dilate_matches_stored_boxes_within_one_pixel(self):
        for seed in range(6):
            s = make_scene(100 + seed, SceneConfig(n_objects=1))
            h, w = s.config.height, s.config.width
            for f in range(s.config.frames):
                stored = s.objects[0].boxes[f]
                derived = dilate_to_box(s.object_mask.data[f], margin=1)
                assert abs(derived.x1 - stored.x1) <= 1.0 / w + 1e-9
                assert abs(derived.y1 - stored.y1) <= 1.0 / h + 1e-9
                assert abs(derived.x2 - stored.x2) <= 1.0 / w + 1e-9
                assert abs(derived.y2 - stored.y2) <= 1.0 / h + 1e-9


class TestMakeCorpus:
    def test_split_rule(self, tmp_path):
        manifest = make_corpus(0, 10, tmp_path)
        splits = [e["split"] for e in manifest["samples"]]
        assert splits.count("train") == 8
        assert splits.count("eval") == 2

    def test_regeneration_bit_identical(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        make_corpus(5, 4, d1)
        make_corpus(5, 4, d2)
        for rel in ["corpus.json", "sample_0000/video.vten", "sample_0000/label.json",
                    "sample_0003/mask.vten"]:
            assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes()

    def test_rerender_from_manifest(self, tmp_path):
        from inpaint_lab.synth import regenerate_from_manifest

        d1, d2 = tmp_path / "a", tmp_path / "b"
        make_corpus(5, 3, d1, SceneConfig(frames=6, n_objects=2))
        regenerate_from_manifest(d1 / "corpus.json", d2)
        for sample in d1.iterdir():
            if sample.is_dir():
                for f in sample.iterdir():
                    assert f.read_bytes() == (d2 / sample.name / f.name).read_bytes()

    def test_color_shape_coverage(self, tmp_path):
        manifest = make_corpus(0, 24, tmp_path)
        corpus = Corpus(tmp_path)
        colors, shapes = set(), set()
        for entry in corpus.entries():
            _, _, label = corpus.load(entry)
            for obj in label["objects"]:
                colors.add(obj["color"])
                shapes.add(obj["shape"])
        assert colors == set(Vocabulary.COLORS)
        assert shapes == set(Vocabulary.SHAPES)

    def test_sample_layout(self, tmp_path):
        make_corpus(1, 2, tmp_path)
        sdir = tmp_path / "sample_0000"
        assert (sdir / "video.vten").exists()
        assert (sdir / "mask.vten").exists()
        label = json.loads((sdir / "label.json").read_text())
        assert "prompt" in label and "objects" in label
