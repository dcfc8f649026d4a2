import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vym.dataset import (CordonExample, DuplicateExampleError,
                         IncompleteExampleError, ImageId, MissingImageError,
                         NegativeWeightError, VIEW_ORDER, load_manifest,
                         make_folds, parse_image_id, split_validation)
from vym.imageops import RgbImage, save_image


def write_manifest(tmp_path, rows, make_images=True):
    lines = ["plant,cordon,img_E1,img_E2,img_W1,img_W2,weight_g"]
    rng = np.random.default_rng(0)
    for plant, cordon, weight in rows:
        names = [f"{plant}{cordon}{s}{c}.png" for s, c in VIEW_ORDER]
        if make_images:
            for name in names:
                w, h = int(rng.integers(20, 40)), int(rng.integers(15, 30))
                save_image(RgbImage(rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)),
                           tmp_path / name)
        lines.append(f"{plant},{cordon},{','.join(names)},{weight}")
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def make_examples(n_plants):
    out = []
    for p in range(1, n_plants + 1):
        for cord in ("N", "S"):
            out.append(CordonExample(p, cord, {v: f"{p}{cord}{v[0]}{v[1]}.png" for v in VIEW_ORDER}, 1000.0))
    return out


class TestImageId:
    def test_paper_examples(self):
        assert parse_image_id("33NE1") == ImageId(33, "N", "E", 1)
        assert parse_image_id("42SW2") == ImageId(42, "S", "W", 2)

    def test_invalid_codes_name_fields(self):
        with pytest.raises(ValueError) as exc:
            parse_image_id("7XQ3")
        msg = str(exc.value)
        assert "cordon" in msg and "side" in msg and "camera" in msg

    def test_missing_plant(self):
        with pytest.raises(ValueError, match="plant"):
            parse_image_id("NE1")

    @given(st.integers(1, 80), st.sampled_from("NS"), st.sampled_from("EW"),
           st.sampled_from([1, 2]))
    @settings(max_examples=200, deadline=None)
    def test_roundtrip(self, plant, cordon, side, camera):
        iid = ImageId(plant, cordon, side, camera)
        assert parse_image_id(str(iid)) == iid

    def test_all_640_ids_roundtrip(self):
        count = 0
        for plant in range(1, 81):
            for cordon in "NS":
                for side in "EW":
                    for camera in (1, 2):
                        text = f"{plant}{cordon}{side}{camera}"
                        assert str(parse_image_id(text)) == text
                        count += 1
        assert count == 640


class TestManifest:
    def test_loads_examples_and_canvas(self, tmp_path):
        rows = [(p, c, 1000.0 + p) for p in range(1, 4) for c in "NS"]
        path = write_manifest(tmp_path, rows)
        examples, canvas = load_manifest(path)
        assert len(examples) == 6
        assert canvas[0] >= 20 and canvas[1] >= 15
        assert all(set(e.images) == set(VIEW_ORDER) for e in examples)

    def test_empty_manifest(self, tmp_path):
        path = write_manifest(tmp_path, [])
        examples, canvas = load_manifest(path)
        assert examples == [] and canvas == (0, 0)

    def test_missing_view_cell(self, tmp_path):
        path = write_manifest(tmp_path, [(1, "N", 500.0)])
        text = path.read_text().replace("1NW2.png", "")
        path.write_text(text)
        with pytest.raises(IncompleteExampleError, match="plant 1 cordon N"):
            load_manifest(path)

    def test_missing_image_file(self, tmp_path):
        path = write_manifest(tmp_path, [(1, "N", 500.0)])
        (tmp_path / "1NE2.png").unlink()
        with pytest.raises(MissingImageError, match="1NE2.png"):
            load_manifest(path)

    def test_duplicate_example(self, tmp_path):
        path = write_manifest(tmp_path, [(1, "N", 500.0), (1, "N", 600.0)])
        with pytest.raises(DuplicateExampleError, match="plant 1 cordon N"):
            load_manifest(path)

    def test_negative_weight(self, tmp_path):
        path = write_manifest(tmp_path, [(1, "N", -5.0)])
        with pytest.raises(NegativeWeightError, match="negative weight"):
            load_manifest(path)


class TestFolds:
    def test_plant_level_balance_80_plants(self):
        plan = make_folds(make_examples(80), 6, seed=7)
        plant_counts = [0] * 6
        seen = set()
        for (plant, _), fold in plan.assignments.items():
            if plant not in seen:
                plant_counts[fold] += 1
                seen.add(plant)
        assert sorted(plant_counts) == [13, 13, 13, 13, 14, 14]
        example_counts = [0] * 6
        for fold in plan.assignments.values():
            example_counts[fold] += 1
        assert sum(example_counts) == 160
        assert sorted(example_counts) == [26, 26, 26, 26, 28, 28]

    def test_k_equal_plant_count(self):
        plan = make_folds(make_examples(5), 5, seed=1)
        per_fold = [0] * 5
        for fold in plan.assignments.values():
            per_fold[fold] += 1
        assert per_fold == [2, 2, 2, 2, 2]

    def test_same_seed_identical(self):
        ex = make_examples(12)
        assert make_folds(ex, 4, 99).assignments == make_folds(ex, 4, 99).assignments

    def test_k_less_than_2_rejected(self):
        with pytest.raises(ValueError, match="fold count"):
            make_folds(make_examples(4), 1, 0)

    def test_plant_cohesion_and_partition(self):
        ex = make_examples(20)
        plan = make_folds(ex, 6, seed=3)
        for p in range(1, 21):
            assert plan.assignments[(p, "N")] == plan.assignments[(p, "S")]
        assert set(plan.assignments) == {e.key for e in ex}

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_partition_property(self, seed):
        ex = make_examples(17)
        plan = make_folds(ex, 5, seed)
        folds = [set() for _ in range(5)]
        for key, fold in plan.assignments.items():
            folds[fold].add(key)
        union = set().union(*folds)
        assert union == {e.key for e in ex}
        assert sum(len(f) for f in folds) == len(ex)

    def test_json_roundtrip(self):
        from vym.dataset import FoldPlan
        plan = make_folds(make_examples(9), 3, 5)
        back = FoldPlan.from_json_obj(plan.to_json_obj())
        assert back.k == plan.k and back.assignments == plan.assignments


class TestValidationSplit:
    def test_25_plants_fraction_02(self):
        ex = make_examples(25)
        train, val = split_validation(ex, 0.2, seed=0)
        val_plants = {e.plant for e in val}
        assert len(val_plants) == 5
        assert len(train) + len(val) == len(ex)

    def test_disjoint_plants(self):
        ex = make_examples(10)
        train, val = split_validation(ex, 0.3, seed=4)
        assert not ({e.plant for e in train} & {e.plant for e in val})

    def test_bad_fraction_rejected(self):
        ex = make_examples(10)
        for frac in (0.0, 0.5, 0.9, -0.1):
            with pytest.raises(ValueError, match="fraction"):
                split_validation(ex, frac, 0)

    def test_too_few_plants_rejected(self):
        with pytest.raises(ValueError, match="validation"):
            split_validation(make_examples(2), 0.1, 0)
