import math

import numpy as np
import pytest

from panoscan.entropy import GmmParams, QuantizerSpec, discrete_entropy
from panoscan.geometry import ErpFrame
from panoscan.harness.cli import main
from panoscan.harness.config import RunConfig
from panoscan.harness.io import (FormatError, load_frames, load_manifest, load_scanpaths, parse_kv, read_pnm,
                                 save_scanpaths, write_pnm)
from panoscan.harness.synth import SyntheticSpec, synthesize
from panoscan.metrics import Scanpath

TINY_RUN = """
model.K = 2
model.C_v = 4
model.C_h = 4
model.C_c = 4
model.hidden = 8
model.head_hidden = 8
model.visual_channels = 2
model.causal_embed = 4
model.causal_hidden = 4
history.R = 2
horizon.S = 3
train.epochs = 2
train.batch = 8
train.lr = 1e-3
"""


def write_csv(path, rows):
    path.write_text("video_id,user_id,t_index,phi_rad,theta_rad\n" + "".join(",".join(map(str, r)) + "\n"
                                                                            for r in rows))


class TestScanpathCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        paths = [Scanpath("v1", "a", rng.uniform(-1, 1, (5, 2)), start=3),
                 Scanpath("v1", "b", rng.uniform(-1, 1, (4, 2)))]
        save_scanpaths(tmp_path / "s.csv", paths)
        back = load_scanpaths(tmp_path / "s.csv")
        assert [(s.user_id, s.start, len(s)) for s in back] == [("a", 3, 5), ("b", 0, 4)]
        np.testing.assert_array_equal(back[0].points, paths[0].points)

    def test_degrees(self, tmp_path):
        write_csv(tmp_path / "d.csv", [("v", "u", 0, 45, 180), ("v", "u", 1, -30, 90)])
        s = load_scanpaths(tmp_path / "d.csv", degrees=True)[0]
        assert s.points[0] == pytest.approx([math.pi / 4, -math.pi])

    @pytest.mark.parametrize("rows, message", [
        ([("v", "u", 0, 2.0, 0.0)], ":2: latitude"),
        ([("v", "u", 0, 0.0, 0.0), ("v", "u", 2, 0.0, 0.0)], ":3: t_index jumps"),
        ([("v", "u", 1, 0.0, 0.0), ("v", "u", 1, 0.0, 0.0)], ":3: t_index 1 does not increase"),
        ([("v", "u", "x", 0.0, 0.0)], ":2:"),
        ([("v", "u", 0, 0.0)], "expected 5 fields"),
    ])
    def test_errors(self, tmp_path, rows, message):
        write_csv(tmp_path / "e.csv", rows)
        with pytest.raises(FormatError, match=message):
            load_scanpaths(tmp_path / "e.csv")

    def test_bad_header(self, tmp_path):
        (tmp_path / "h.csv").write_text("a,b\n")
        with pytest.raises(FormatError):
            load_scanpaths(tmp_path / "h.csv")


class TestFrames:
    def test_pnm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        rgb = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
        gray = rng.integers(0, 256, (4, 6)).astype(np.uint8)
        write_pnm(tmp_path / "a.ppm", rgb)
        write_pnm(tmp_path / "b.pgm", gray)
        np.testing.assert_array_equal(read_pnm(tmp_path / "a.ppm").data, rgb)
        np.testing.assert_array_equal(read_pnm(tmp_path / "b.pgm").data[:, :, 0], gray)

    def test_header_comments(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n2 1\n255\n\x01\x02")
        np.testing.assert_array_equal(read_pnm(tmp_path / "c.pgm").data[:, :, 0], [[1, 2]])

    def test_bad_pnm(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(FormatError):
            read_pnm(tmp_path / "x.pgm")
        (tmp_path / "y.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
        with pytest.raises(FormatError):
            read_pnm(tmp_path / "y.pgm")

    def test_sequence(self, tmp_path):
        for i in (0, 1, 2):
            write_pnm(tmp_path / f"{i:06d}.pgm", np.full((2, 4), i))
        frames = load_frames(tmp_path)
        assert [int(f.data[0, 0, 0]) for f in frames] == [0, 1, 2]
        write_pnm(tmp_path / "000004.pgm", np.zeros((2, 4)))
        with pytest.raises(FormatError, match="gap"):
            load_frames(tmp_path)


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.quantizer() == QuantizerSpec(0.2)
        assert cfg.gains().kp == pytest.approx(36.0)
        m = cfg.model_config()
        assert (m.K, m.R, m.S, m.C_v, m.C_h, m.C_c) == (3, 5, 5, 128, 128, 32)

    def test_parse_and_round_trip(self):
        cfg = RunConfig.parse(TINY_RUN)
        assert cfg.model_config().hidden == 8
        assert RunConfig.parse(cfg.to_text()).values == cfg.values

    def test_errors(self):
        with pytest.raises(FormatError, match="unknown"):
            RunConfig.parse("model.wings = 2")
        with pytest.raises(FormatError, match="number"):
            RunConfig.parse("train.lr = fast")
        with pytest.raises(FormatError, match=":1:"):
            parse_kv("no equals sign")


class TestSynth:
    def test_generator(self):
        spec = SyntheticSpec(n_paths=5, length=12, seed=3)
        data = synthesize(spec)
        assert len(data.scanpaths) == 5
        assert all(len(s) == 12 for s in data.scanpaths)
        assert data.entropy_bits == pytest.approx(discrete_entropy(spec.gmm, QuantizerSpec(0.2)))
        # walks are on the bin grid and start at the origin
        for w in data.walks:
            assert np.allclose(w / 0.2, np.round(w / 0.2))
            assert tuple(w[0]) == (0.0, 0.0)

    def test_seeded(self):
        a = synthesize(SyntheticSpec(n_paths=2, length=6, seed=1))
        b = synthesize(SyntheticSpec(n_paths=2, length=6, seed=1))
        np.testing.assert_array_equal(a.scanpaths[1].points, b.scanpaths[1].points)

    def test_spec_file(self, tmp_path):
        (tmp_path / "s.txt").write_text("gmm.weights = 1\ngmm.means = 0 0\ngmm.variances = 1 1\npaths = 3\n")
        spec = SyntheticSpec.load(tmp_path / "s.txt")
        assert spec.gmm.K == 1 and spec.n_paths == 3
        (tmp_path / "bad.txt").write_text("colour = red\n")
        with pytest.raises(FormatError):
            SyntheticSpec.load(tmp_path / "bad.txt")


@pytest.fixture
def workspace(tmp_path):
    spec = tmp_path / "synth.txt"
    spec.write_text("paths = 6\nlength = 14\nseed = 2\n")
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "train.csv")]) == 0
    frames = tmp_path / "frames"
    frames.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        write_pnm(frames / f"{i:06d}.ppm", rng.integers(0, 256, (32, 64, 3)))
    (tmp_path / "manifest.csv").write_text(
        "video_id,frames,frame_rate,scanpaths,sample_rate,split\n"
        "synth,frames,0.5,train.csv,5,train\n"
        "synth,none,5,train.csv,5,test\n")
    (tmp_path / "run.txt").write_text(TINY_RUN)
    return tmp_path


class TestCli:
    def test_manifest(self, workspace):
        entries = load_manifest(workspace / "manifest.csv")
        assert [e.split for e in entries] == ["train", "test"]
        assert entries[1].frames is None
        assert entries[0].frame_index(13) == 1

    def test_pipeline(self, workspace, capsys):
        w = workspace
        ckpt = str(w / "m.pspm")
        assert main(["fit", "--manifest", str(w / "manifest.csv"), "--config", str(w / "run.txt"),
                     "--out", ckpt]) == 0
        out = capsys.readouterr().out
        assert "epoch 2:" in out and "bits/viewpoint" in out

        assert main(["codelength", "--ckpt", ckpt, "--manifest", str(w / "manifest.csv")]) == 0
        bits = float(capsys.readouterr().out.strip().split("=")[1])
        assert 0 < bits < 60

        for mode in ("pid", "random", "max", "beam"):
            pred = str(w / f"pred_{mode}.csv")
            assert main(["sample", "--ckpt", ckpt, "--manifest", str(w / "manifest.csv"), "--video", "synth",
                         "--user", "u00001", "--rounds", "2", "--mode", mode, "--beam-width", "3",
                         "--out", pred]) == 0
            gen = load_scanpaths(pred)[0]
            assert len(gen) == 6 and gen.start == 5
        capsys.readouterr()

        truth = str(w / "train.csv")
        assert main(["eval", "--pred", truth, "--truth", truth, "--slice", "5", "--kv"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert "synth.minOD=0.0" in lines and "synth.maxTC=1.0" in lines
        assert "synth.SminOD-5=0.0" in lines

        assert main(["eval", "--pred", str(w / "pred_pid.csv"), "--truth", truth]) == 0

    def test_project(self, workspace):
        w = workspace
        csv = w / "one.csv"
        write_csv(csv, [("synth", "u", 0, 0.0, 0.0), ("synth", "u", 1, 0.1, 0.2)])
        assert main(["project", "--frames", str(w / "frames"), "--scanpath", str(csv), "--spec", "12x20@40x60",
                     "--out", str(w / "vp")]) == 0
        files = sorted((w / "vp").iterdir())
        assert [f.name for f in files] == ["synth_u_000000.ppm", "synth_u_000001.ppm"]
        assert read_pnm(files[0]).data.shape == (12, 20, 3)

    def test_errors_exit_two(self, workspace, capsys):
        assert main(["eval", "--pred", str(workspace / "missing.csv"), "--truth", str(workspace / "train.csv")]) == 2
        assert "error:" in capsys.readouterr().err
        assert main(["codelength", "--ckpt", str(workspace / "train.csv"),
                     "--manifest", str(workspace / "manifest.csv")]) == 2
