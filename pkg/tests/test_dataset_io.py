import json
import struct

import numpy as np
import pytest
from PIL import Image

from segscore import (
    DomainError,
    EvalConfig,
    FormatError,
    LabelMap,
    ParamVector,
    build_report,
    evaluate_image,
    weight_map,
)
from segscore.dataset_io import (
    DatasetManifest,
    ManifestEntry,
    distribution_histogram,
    load_class_mask,
    load_instance_mask,
    load_manifest,
    load_param_vector,
    load_weight_map,
    report_to_jsonable,
    write_class_mask,
    write_distribution_report,
    write_instance_mask,
    write_param_vector,
    write_report,
    write_weight_map,
)
from segscore.grid import SizeClass


def write_manifest(path, entries, num_classes=4, ignore_id=255):
    path.write_text(json.dumps(
        {"entries": entries, "num_classes": num_classes, "ignore_id": ignore_id}
    ))
    return path


class TestClassMaskIO:
    def test_single_background_pixel(self, tmp_path):
        p = tmp_path / "m.png"
        Image.fromarray(np.zeros((1, 1), dtype=np.uint8)).save(p)
        m = load_class_mask(p, num_classes=2)
        assert m.shape == (1, 1)
        assert m.labels[0, 0] == 0

    def test_palette_indices_are_class_ids(self, tmp_path):
        p = tmp_path / "pal.png"
        img = Image.new("P", (3, 1))
        img.putdata([0, 1, 255])
        img.putpalette([0, 0, 0, 128, 0, 0] + [0] * 750)
        img.save(p)
        m = load_class_mask(p, num_classes=2)
        assert m.present_classes() == [0, 1]
        assert m.labels[0, 2] == 255

    def test_round_trip_preserves_every_pixel(self, tmp_path):
        rng = np.random.default_rng(3)
        arr = rng.integers(0, 4, (9, 7), dtype=np.int32)
        arr[rng.random((9, 7)) < 0.1] = 255
        m = LabelMap(arr)
        p = tmp_path / "rt.png"
        write_class_mask(m, p)
        back = load_class_mask(p, num_classes=4)
        assert np.array_equal(back.labels, m.labels)

    def test_custom_ignore_id_remapped(self, tmp_path):
        p = tmp_path / "ig.png"
        Image.fromarray(np.array([[255, 1]], dtype=np.uint8)).save(p)
        m = load_class_mask(p, num_classes=2, ignore_id=99)
        assert m.ignore_id == 99
        assert m.labels[0, 0] == 99

    def test_out_of_range_value_named_in_error(self, tmp_path):
        p = tmp_path / "bad.png"
        Image.fromarray(np.array([[0, 0], [0, 9]], dtype=np.uint8)).save(p)
        with pytest.raises(FormatError) as err:
            load_class_mask(p, num_classes=4)
        assert "9" in str(err.value)
        assert "x=1" in str(err.value) and "y=1" in str(err.value)

    def test_sixteen_bit_mask_rejected(self, tmp_path):
        p = tmp_path / "deep.png"
        Image.fromarray(np.zeros((2, 2), dtype=np.uint16)).save(p)
        with pytest.raises(FormatError):
            load_class_mask(p, num_classes=2)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError) as err:
            load_class_mask(tmp_path / "absent.png", num_classes=2)
        assert "absent.png" in str(err.value)


class TestInstanceMaskIO:
    def test_all_zero_means_no_instances(self, tmp_path):
        p = tmp_path / "i.png"
        write_instance_mask(np.zeros((3, 3), dtype=np.int32), p)
        grid = load_instance_mask(p)
        assert grid.shape == (3, 3)
        assert not grid.any()

    def test_ids_round_trip(self, tmp_path):
        p = tmp_path / "i.png"
        arr = np.array([[0, 1], [2, 2]], dtype=np.int32)
        write_instance_mask(arr, p)
        assert np.array_equal(load_instance_mask(p), arr)

    def test_eight_bit_file_rejected(self, tmp_path):
        p = tmp_path / "shallow.png"
        Image.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(p)
        with pytest.raises(FormatError):
            load_instance_mask(p)


class TestManifest:
    def test_load_and_resolve_relative_paths(self, tmp_path):
        mp = write_manifest(
            tmp_path / "m.json",
            [{"image_id": "a", "gt_mask_path": "gt/a.png", "pred_mask_path": "pred/a.png"}],
        )
        m = load_manifest(mp)
        assert m.entries[0].gt_mask_path == tmp_path / "gt/a.png"
        assert m.num_classes == 4 and m.ignore_id == 255

    def test_duplicate_ids_rejected(self, tmp_path):
        mp = write_manifest(
            tmp_path / "m.json",
            [
                {"image_id": "a", "gt_mask_path": "a.png"},
                {"image_id": "a", "gt_mask_path": "b.png"},
            ],
        )
        with pytest.raises(FormatError):
            load_manifest(mp)

    def test_too_few_classes_rejected(self, tmp_path):
        mp = write_manifest(tmp_path / "m.json", [], num_classes=1)
        with pytest.raises(FormatError):
            load_manifest(mp)

    def test_empty_path_rejected(self, tmp_path):
        mp = write_manifest(
            tmp_path / "m.json", [{"image_id": "a", "gt_mask_path": ""}]
        )
        with pytest.raises(FormatError):
            load_manifest(mp)

    def test_invalid_json_rejected(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{nope")
        with pytest.raises(FormatError):
            load_manifest(p)


class TestDistribution:
    def test_empty_manifest_is_all_zero(self):
        report = distribution_histogram(DatasetManifest((), 4))
        assert report.total_instances == 0
        assert all(v == 0 for v in report.totals.values())
        assert all(v == 0.0 for v in report.percentages.values())

    def test_three_sizes_bucketed(self, tmp_path):
        arr = np.zeros((200, 200), dtype=np.int32)
        arr[0:10, 0:10] = 1          # 100 px -> small
        arr[20:70, 20:60] = 1        # 2000 px -> medium
        arr[80:180, 50:150] = 1      # 10000 px -> large
        p = tmp_path / "gt.png"
        write_class_mask(LabelMap(arr), p)
        manifest = DatasetManifest(
            (ManifestEntry("a", p),), num_classes=2
        )
        report = distribution_histogram(manifest)
        assert report.totals == {
            SizeClass.SMALL: 1, SizeClass.MEDIUM: 1, SizeClass.LARGE: 1
        }
        for share in report.percentages.values():
            assert share == pytest.approx(100 / 3, abs=0.05)

    def test_dataset_histogram_is_sum_of_image_histograms(self, tmp_path):
        rng = np.random.default_rng(9)
        paths = []
        for i in range(4):
            arr = rng.integers(0, 3, (20, 20), dtype=np.int32)
            p = tmp_path / f"{i}.png"
            write_class_mask(LabelMap(arr), p)
            paths.append(p)
        entries = tuple(ManifestEntry(str(i), p) for i, p in enumerate(paths))
        whole = distribution_histogram(DatasetManifest(entries, 3))
        parts = [
            distribution_histogram(DatasetManifest((e,), 3)) for e in entries
        ]
        for size in SizeClass:
            assert whole.totals[size] == sum(p.totals[size] for p in parts)

    def test_instance_mask_used_when_present(self, tmp_path):
        arr = np.zeros((8, 8), dtype=np.int32)
        arr[0:2, 0:4] = 1  # one component...
        gt_path = tmp_path / "gt.png"
        write_class_mask(LabelMap(arr), gt_path)
        imap = np.zeros((8, 8), dtype=np.int32)
        imap[0:2, 0:2] = 1
        imap[0:2, 2:4] = 2  # ...but two annotated instances
        inst_path = tmp_path / "inst.png"
        write_instance_mask(imap, inst_path)
        with_ids = distribution_histogram(
            DatasetManifest((ManifestEntry("a", gt_path, None, inst_path),), 2)
        )
        without = distribution_histogram(
            DatasetManifest((ManifestEntry("a", gt_path),), 2)
        )
        assert with_ids.total_instances == 2
        assert without.total_instances == 1

    def test_failures_are_aggregated(self, tmp_path):
        good = tmp_path / "good.png"
        write_class_mask(LabelMap(np.zeros((2, 2), dtype=np.int32)), good)
        manifest = DatasetManifest(
            (
                ManifestEntry("ok", good),
                ManifestEntry("gone1", tmp_path / "gone1.png"),
                ManifestEntry("gone2", tmp_path / "gone2.png"),
            ),
            num_classes=2,
        )
        with pytest.raises(FormatError) as err:
            distribution_histogram(manifest)
        message = str(err.value)
        assert "gone1" in message and "gone2" in message


def perfect_report():
    gt = LabelMap(np.array([[0, 1, 1], [0, 2, 2]], dtype=np.int32))
    cfg = EvalConfig(num_classes=3)
    return build_report(evaluate_image(gt, gt, cfg), cfg)


class TestReportIO:
    def test_json_has_six_decimal_numbers(self, tmp_path):
        p = tmp_path / "r.json"
        write_report(perfect_report(), p, "json")
        text = p.read_text()
        assert '"miou": 1.000000' in text
        assert '"ia_miou": 1.000000' in text

    def test_json_round_trips_values(self, tmp_path):
        report = perfect_report()
        p = tmp_path / "r.json"
        write_report(report, p, "json")
        doc = json.loads(p.read_text())
        assert doc["miou"] == 1.0
        assert doc["per_class"]["1"]["tilde_iou"] == 1.0
        assert doc["config"]["num_classes"] == 3
        assert doc["instance_counts"]["1"]["small"] == 1

    def test_undefined_strata_serialize_as_null(self, tmp_path):
        report = perfect_report()  # only small instances exist
        p = tmp_path / "r.json"
        write_report(report, p, "json")
        doc = json.loads(p.read_text())
        assert doc["ia_medium"] is None
        assert doc["ia_large"] is None
        assert "null" in p.read_text()

    def test_csv_flattens_per_class_rows(self, tmp_path):
        p = tmp_path / "r.csv"
        write_report(perfect_report(), p, "csv")
        lines = p.read_text().splitlines()
        assert lines[0] == (
            "key,conventional_iou,tilde_iou,instances_small,"
            "instances_medium,instances_large"
        )
        assert lines[1].startswith("class_0,1.000000,1.000000")
        assert any(line.startswith("miou,1.000000") for line in lines)
        assert any(line == "ia_large,,,,," for line in lines)

    def test_jsonable_mirrors_report(self):
        report = perfect_report()
        doc = report_to_jsonable(report)
        assert doc["miou"] == report.miou
        assert set(doc["per_class"]) == {"0", "1", "2"}

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(DomainError):
            write_report(perfect_report(), tmp_path / "r.xml", "xml")

    def test_distribution_report_formats(self, tmp_path):
        report = distribution_histogram(DatasetManifest((), 4))
        write_distribution_report(report, tmp_path / "d.json", "json")
        doc = json.loads((tmp_path / "d.json").read_text())
        assert doc["total_instances"] == 0
        write_distribution_report(report, tmp_path / "d.csv", "csv")
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "key,small,medium,large"


class TestWeightMapIO:
    def test_exact_bytes_for_unit_map(self, tmp_path):
        wm = weight_map(LabelMap(np.zeros((2, 2), dtype=np.int32)), tau=5.0)
        p = tmp_path / "w.wmap"
        write_weight_map(wm, p)
        data = p.read_bytes()
        assert data[:8] == struct.pack("<II", 2, 2)
        assert data[8:] == struct.pack("<f", 1.0) * 4
        assert len(data) == 8 + 16

    def test_round_trip_is_bit_exact(self, tmp_path):
        grid = np.zeros((20, 30), dtype=np.int32)
        grid[0:9, 0:9] = 1
        grid[15:18, 20:25] = 1
        grid[4, 20] = 255
        wm = weight_map(LabelMap(grid), tau=4.0)
        p = tmp_path / "w.wmap"
        write_weight_map(wm, p)
        back = load_weight_map(p)
        assert np.array_equal(
            back.weights.view(np.uint32), wm.weights.view(np.uint32)
        )
        write_weight_map(back, tmp_path / "w2.wmap")
        assert (tmp_path / "w2.wmap").read_bytes() == p.read_bytes()

    def test_truncated_payload_rejected(self, tmp_path):
        p = tmp_path / "w.wmap"
        p.write_bytes(struct.pack("<II", 2, 2) + struct.pack("<f", 1.0) * 3)
        with pytest.raises(FormatError):
            load_weight_map(p)

    def test_truncated_header_rejected(self, tmp_path):
        p = tmp_path / "w.wmap"
        p.write_bytes(b"\x01\x02\x03")
        with pytest.raises(FormatError):
            load_weight_map(p)

    def test_visualization_sidecar(self, tmp_path):
        grid = np.zeros((10, 10), dtype=np.int32)
        grid[0:2, 0:2] = 1
        grid[5:9, 5:9] = 1
        wm = weight_map(LabelMap(grid), tau=5.0)
        viz = tmp_path / "w.png"
        write_weight_map(wm, tmp_path / "w.wmap", viz)
        img = np.asarray(Image.open(viz))
        assert img.dtype == np.uint8
        assert img.max() == 255


class TestParamVectorIO:
    def test_round_trip(self, tmp_path):
        vec = ParamVector([1.0, -2.5, 0.125])
        p = tmp_path / "v.pvec"
        write_param_vector(vec, p)
        back = load_param_vector(p)
        assert np.array_equal(back.values, vec.values)
        write_param_vector(back, tmp_path / "v2.pvec")
        assert (tmp_path / "v2.pvec").read_bytes() == p.read_bytes()

    def test_header_longer_than_payload_rejected(self, tmp_path):
        p = tmp_path / "v.pvec"
        p.write_bytes(struct.pack("<I", 3) + struct.pack("<f", 1.0) * 2)
        with pytest.raises(FormatError):
            load_param_vector(p)

    def test_empty_vector_round_trips(self, tmp_path):
        p = tmp_path / "v.pvec"
        write_param_vector(ParamVector([]), p)
        assert len(load_param_vector(p)) == 0
