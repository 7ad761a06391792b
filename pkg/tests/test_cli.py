import io
import json
import subprocess
import sys

import numpy as np
import pytest

from voxdet import io_formats
from voxdet.cli import EXIT_BAD_INPUT, EXIT_OK, main
from voxdet.geometry import Box3D, ClassId, iou_bev_rotated
from voxdet.model_utils import swa_average
from voxdet.postprocess import rescore


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def corpus(tmp_path):
    out = tmp_path / "corpus"
    assert run_cli("--output-dir", out, "--seed", "3", "synth",
                   "--scenes", "2", "--half-extent", "18") == EXIT_OK
    return out


class TestSynthAndRun:
    def test_synth_writes_scene_dirs(self, corpus):
        dirs = sorted(p.name for p in corpus.iterdir())
        assert dirs == ["scene_0000", "scene_0001"]
        for d in corpus.iterdir():
            assert (d / "points.pcpd").exists()
            assert (d / "boxes.jsonl").exists()

    def test_run_produces_report_and_detections(self, corpus, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "train_range_x": [-20.0, 20.0], "train_range_y": [-20.0, 20.0],
            "infer_range_x": [-20.0, 20.0], "infer_range_y": [-20.0, 20.0],
        }))
        assert run_cli("--config", cfg, "--output-dir", out, "run",
                       "--corpus", corpus) == EXIT_OK
        assert "MEAN" in capsys.readouterr().out
        report = json.loads((out / "report.json").read_text())
        assert report["mean_ap"] == 1.0
        assert report["mean_aph"] == 1.0
        assert (out / "scene_0000_dets.jsonl").exists()


class TestIngestVoxelize:
    def test_csv_to_pcpd_to_voxl(self, tmp_path):
        csv_path = tmp_path / "records.csv"
        rows = ["10.0,0.5,0.1,1.0,2.0,0.5", "-1.0,0.5,0.1,9.9,9.9,9.9",
                "5.0,2.0,0.0,0.55,0.55,0.25"]
        csv_path.write_text("\n".join(rows) + "\n")
        pcpd = tmp_path / "cloud.pcpd"
        assert run_cli("ingest", "--current", csv_path, "-o", pcpd) == EXIT_OK
        pts = io_formats.read_pcpd(pcpd)
        assert pts.shape == (2, 6)  # invalid range dropped
        assert pts[1, 3] == 1.5  # intensity clamped

        voxl = tmp_path / "out.voxl"
        assert run_cli("voxelize", "--input", pcpd, "-o", voxl) == EXIT_OK
        voxels = io_formats.read_voxl(voxl)
        assert len(voxels) == 2

    def test_missing_input_is_exit_2(self, tmp_path):
        assert run_cli("voxelize", "--input", tmp_path / "nope.pcpd",
                       "-o", tmp_path / "x.voxl") == EXIT_BAD_INPUT

    def test_bad_magic_is_exit_2(self, tmp_path):
        bad = tmp_path / "bad.pcpd"
        bad.write_bytes(b"JUNK" + b"\0" * 16)
        assert run_cli("voxelize", "--input", bad,
                       "-o", tmp_path / "x.voxl") == EXIT_BAD_INPUT


class TestEncodeDecodeEval:
    def test_tgts_roundtrip_reaches_perfect_eval(self, corpus, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "infer_range_x": [-20.0, 20.0], "infer_range_y": [-20.0, 20.0],
        }))
        scene = corpus / "scene_0000"
        tgts = tmp_path / "scene.tgts"
        dets = tmp_path / "dets.jsonl"
        report = tmp_path / "report.json"
        assert run_cli("--config", cfg, "encode", "--scene", scene, "-o", tgts) == EXIT_OK
        assert run_cli("--config", cfg, "decode", "--targets", tgts, "-o", dets) == EXIT_OK
        assert run_cli("--config", cfg, "eval", "--dets", dets,
                       "--gts", scene / "boxes.jsonl", "-o", report) == EXIT_OK
        payload = json.loads(report.read_text())
        assert payload["mean_ap"] == 1.0

    def test_eval_requires_matching_file_counts(self, corpus, tmp_path):
        assert run_cli("eval", "--dets", tmp_path / "a.jsonl", "--gts",
                       corpus / "scene_0000" / "boxes.jsonl",
                       corpus / "scene_0001" / "boxes.jsonl") == EXIT_BAD_INPUT


class TestAugmentCli:
    def test_augment_writes_db_and_scenes(self, corpus, tmp_path):
        out = tmp_path / "aug"
        assert run_cli("--output-dir", out, "--seed", "5", "augment",
                       "--corpus", corpus, "--wanted", "3,2,2") == EXIT_OK
        assert (out / "gt_index.json").exists()
        assert (out / "gt_points.pcpd").exists()
        for name in ("scene_0000", "scene_0001"):
            boxes = io_formats.read_boxes_jsonl(out / name / "boxes.jsonl")
            assert len(boxes) >= 1
            assert io_formats.read_pcpd(out / name / "points.pcpd").shape[1] == 6

    def test_bad_wanted_is_exit_2(self, corpus, tmp_path):
        assert run_cli("--output-dir", tmp_path / "a", "augment", "--corpus", corpus,
                       "--wanted", "3,2") == EXIT_BAD_INPUT


class TestBenchCli:
    def test_bench_writes_json(self, corpus, tmp_path, capsys):
        out = tmp_path / "bench_out"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "infer_range_x": [-20.0, 20.0], "infer_range_y": [-20.0, 20.0],
        }))
        assert run_cli("--config", cfg, "--output-dir", out, "bench",
                       "--corpus", corpus, "--stage", "voxelize",
                       "--repetitions", "3") == EXIT_OK
        report = json.loads((out / "bench.json").read_text())
        assert "voxelize" in report["stages"]
        assert "throughput" in capsys.readouterr().out


class TestCheckpointCommands:
    def test_swa_avg(self, tmp_path):
        rng = np.random.default_rng(0)
        paths = []
        cks = []
        for i in range(3):
            ck = {"w": rng.normal(size=(4, 2)).astype(np.float32)}
            p = tmp_path / f"ck{i}.ckpt"
            io_formats.write_ckpt(p, ck)
            paths.append(p)
            cks.append(ck)
        out = tmp_path / "avg.ckpt"
        assert run_cli("swa-avg", *paths, "-o", out) == EXIT_OK
        merged = io_formats.read_ckpt(out)
        np.testing.assert_array_equal(merged["w"], swa_average(cks)["w"])

    def test_fold_bn(self, tmp_path):
        rng = np.random.default_rng(1)
        ck = {
            "conv.weight": rng.normal(size=(4, 3)).astype(np.float32),
            "conv.bias": rng.normal(size=4).astype(np.float32),
            "bn.gamma": np.ones(4, dtype=np.float32),
            "bn.beta": np.zeros(4, dtype=np.float32),
            "bn.mean": np.zeros(4, dtype=np.float32),
            "bn.var": np.ones(4, dtype=np.float32),
            "bn.eps": np.float32(1e-12).reshape(()),
        }
        src = tmp_path / "model.ckpt"
        io_formats.write_ckpt(src, ck)
        pairs = tmp_path / "pairs.json"
        pairs.write_text(json.dumps([["conv", "bn"]]))
        out = tmp_path / "folded.ckpt"
        assert run_cli("fold-bn", "--checkpoint", src, "--pairs", pairs,
                       "-o", out) == EXIT_OK
        folded = io_formats.read_ckpt(out)
        assert "bn.gamma" not in folded
        np.testing.assert_allclose(folded["conv.weight"], ck["conv.weight"], rtol=1e-6)

    def test_missing_tensor_is_exit_2(self, tmp_path):
        src = tmp_path / "model.ckpt"
        io_formats.write_ckpt(src, {"conv.weight": np.ones((2, 2), np.float32)})
        pairs = tmp_path / "pairs.json"
        pairs.write_text(json.dumps([["conv", "bn"]]))
        assert run_cli("fold-bn", "--checkpoint", src, "--pairs", pairs,
                       "-o", tmp_path / "o.ckpt") == EXIT_BAD_INPUT


class TestKernel:
    def run_kernel(self, op, payload, monkeypatch, capsys):
        monkeypatch.setattr(sys, "stdin", io.StringIO(json.dumps(payload)))
        code = run_cli("kernel", op)
        out = capsys.readouterr().out
        return code, json.loads(out)

    def test_iou_bev(self, monkeypatch, capsys):
        a = [0, 0, 0, 1, 1, 1, 0]
        b = [0, 0, 0, 1, 1, 1, 0.7853981633974483]
        code, out = self.run_kernel("iou-bev", {"a": a, "b": b}, monkeypatch, capsys)
        assert code == EXIT_OK
        expected = iou_bev_rotated(Box3D(*a[:6], yaw=a[6]), Box3D(*b[:6], yaw=b[6]))
        assert out["iou"] == expected

    def test_rescore(self, monkeypatch, capsys):
        code, out = self.run_kernel(
            "rescore", {"score": 0.9, "iou": 0.5, "alpha": 0.68}, monkeypatch, capsys)
        assert code == EXIT_OK
        assert out["confidence"] == rescore(0.9, 0.5, 0.68)

    def test_nms(self, monkeypatch, capsys):
        payload = {
            "boxes": [[0, 0, 0, 4, 2, 1.5, 0.0], [0.1, 0, 0, 4, 2, 1.5, 0.0],
                      [30, 0, 0, 4, 2, 1.5, 0.0]],
            "scores": [0.8, 0.9, 0.7],
            "classes": [0, 0, 0],
        }
        code, out = self.run_kernel("nms", payload, monkeypatch, capsys)
        assert code == EXIT_OK
        assert out["keep"] == [1, 2]

    def test_evaluate(self, monkeypatch, capsys):
        box = [1, 2, 0.5, 4, 2, 1.5, 0.3]
        payload = {
            "det_boxes": [box], "det_scores": [0.9], "det_classes": [0],
            "gt_boxes": [box], "gt_classes": [0],
        }
        code, out = self.run_kernel("evaluate", payload, monkeypatch, capsys)
        assert code == EXIT_OK
        assert out["per_class"]["VEHICLE"]["ap"] == 1.0
        assert out["mean_ap"] == pytest.approx((1.0 + 1.0 + 1.0) / 3.0)

    def test_malformed_stdin_is_exit_2(self, monkeypatch, capsys):
        monkeypatch.setattr(sys, "stdin", io.StringIO("{nope"))
        assert run_cli("kernel", "rescore") == EXIT_BAD_INPUT


class TestInstalledEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run([sys.executable, "-m", "voxdet.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "voxdet" in proc.stdout
