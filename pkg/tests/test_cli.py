import json
import subprocess
import sys

import pytest

from geoanchor.cli import dispatch, main
from geoanchor.config import ConfigError, RunConfig, read_config_file, resolve_config
from geoanchor.synthetic import write_corpus


@pytest.fixture(scope="module")
def root(tmp_path_factory):
    r = tmp_path_factory.mktemp("fixtures")
    write_corpus(r, 4, seed=1)
    return r


class TestConfig:
    def test_file_and_precedence(self, tmp_path, root):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"# run\nroot = {root}\ntask = ground\nn-points = 7\nseed = 3\nfactors = 0.5, 1.0\n")
        assert read_config_file(cfg)["task"] == "grounding"
        rc = resolve_config(str(cfg), {}, env={})
        assert (rc.n_points, rc.seed, rc.factors) == (7, 3, (0.5, 1.0))
        assert resolve_config(str(cfg), {}, env={"GEO_ANCHOR_SEED": "11"}).seed == 11
        assert resolve_config(str(cfg), {"seed": 5}, env={"GEO_ANCHOR_SEED": "11"}).seed == 5

    @pytest.mark.parametrize("text", ["bogus = 1\n", "seed = x\n", "no equals sign\n", "task = swim\n"])
    def test_bad_file(self, tmp_path, text):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(text)
        with pytest.raises(ConfigError):
            resolve_config(str(cfg), {}, env={})

    def test_validation(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig(root=str(tmp_path / "missing")).validate()
        with pytest.raises(ConfigError):
            RunConfig(tau=1.5).validate()
        with pytest.raises(ConfigError):
            RunConfig(estimator="category_prior").validate()

    def test_digest_ignores_output_path(self):
        assert RunConfig(out="a").digest() == RunConfig(out="b").digest() != RunConfig(seed=1).digest()


class TestCli:
    def test_unknown_subcommand(self, capsys):
        assert dispatch(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_root_is_data_error(self, tmp_path, capsys):
        assert main(["sweep", "--root", str(tmp_path / "nope")]) == 1
        assert "does not exist" in capsys.readouterr().err

    def test_sweep_report(self, root, tmp_path):
        out = tmp_path / "report.json"
        assert main(["sweep", "--root", str(root), "--task", "detect", "--out", str(out),
                     "--table", str(tmp_path / "t.txt")]) == 0
        rep = json.loads(out.read_text())
        assert len(rep["entries"]) == 11
        assert {"version", "seed", "config_digest"} <= set(rep["provenance"])
        assert (tmp_path / "t.txt").read_text().startswith("Method")

    def test_byte_identical_reruns(self, root, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-traces", "--root", str(root), "--task", "ground", "--out", str(tmp_path / f"{name}.jsonl")]) == 0
            assert main(["eval-detect", "--root", str(root), "--out", str(tmp_path / f"{name}.json")]) == 0
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_env_seed_recorded(self, root, tmp_path, monkeypatch):
        monkeypatch.setenv("GEO_ANCHOR_SEED", "42")
        out = tmp_path / "t.jsonl"
        assert main(["gen-traces", "--root", str(root), "--out", str(out)]) == 0
        line = json.loads(out.read_text().splitlines()[0])
        assert line["provenance"]["seed"] == 42 and line["provenance"]["sampling"]["seed"] == 42

    def test_verify_flags_corrupted_trace(self, root, tmp_path, capsys):
        traces = tmp_path / "t.jsonl"
        assert main(["gen-traces", "--root", str(root), "--task", "detect", "--out", str(traces)]) == 0
        lines = traces.read_text().splitlines()
        bad = json.loads(lines[2])
        bad["turns"][6]["content"] = bad["turns"][6]["content"].replace("Z_1 = ", "Z_1 = 1", 1)
        lines[2] = json.dumps(bad, ensure_ascii=False)
        traces.write_text("\n".join(lines) + "\n")
        report = tmp_path / "rep.json"
        assert main(["verify-traces", "--root", str(root), "--traces", str(traces), "--out", str(report)]) == 1
        err = capsys.readouterr().err
        assert bad["scene_id"] in err and "eq4_backprojection" in err
        rep = json.loads(report.read_text())
        assert rep["n_passed"] == len(lines) - 1

    def test_eval_from_predictions(self, root, tmp_path):
        from geoanchor.scene import load_corpus

        preds = tmp_path / "p.jsonl"
        with open(preds, "w") as fh:
            for sc in load_corpus(root):
                boxes = [{"category": i.category, "bbox_3d": i.box3d.to_list()} for i in sc.instances]
                fh.write(json.dumps({"scene_id": sc.scene_id, "boxes": boxes}) + "\n")
        out = tmp_path / "e.json"
        assert main(["eval-detect", "--root", str(root), "--pred", str(preds), "--out", str(out)]) == 0
        assert json.loads(out.read_text())["report"]["avg_f1"] == 1.0

    def test_eval_ground_with_priors_and_deductions(self, root, tmp_path):
        out, ded = tmp_path / "g.json", tmp_path / "d.jsonl"
        assert main(["eval-ground", "--root", str(root), "--estimator", "category_prior", "--out", str(out),
                     "--deductions", str(ded)]) == 0
        assert 0 <= json.loads(out.read_text())["report"]["metric"] <= 1
        assert all("z_bar" in json.loads(x) for x in ded.read_text().splitlines())

    def test_iou(self, capsys):
        assert main(["iou", "--a", "0,0,0,1,1,1,0,0,0", "--b", "0.5,0,0,1,1,1,0,0,0"]) == 0
        assert json.loads(capsys.readouterr().out)["iou"] == pytest.approx(1 / 3, abs=1e-12)
        assert dispatch(["iou", "--a", "1,2", "--b", "1,2,3,4,5,6,7,8,9"]) == 2

    def test_ingest_command(self, tmp_path):
        import numpy as np

        src = tmp_path / "src"
        src.mkdir()
        np.save(src / "d.npy", np.full((4, 4), 2.0))
        (src / "frames.csv").write_text("scene_id,width,height,fx,fy,cx,cy,depth_file\nf,4,4,5,5,2,2,d.npy\n")
        (src / "instances.csv").write_text("scene_id,instance_id,category,x,y,z,l,w,h,yaw,pitch,roll,mask_file\n"
                                           "f,1,box,0,0,2,1,1,1,0,0,0,\n")
        assert main(["ingest", "--src", str(src), "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "f" / "scene.json").is_file()

    def test_serve_tools_stdio(self, root):
        from geoanchor.scene import list_scenes

        sid = list_scenes(root)[0].name
        req = json.dumps({"scene_id": sid, "call": {"call_id": "1", "tool_name": "camera_intrinsics", "arguments": {}}})
        proc = subprocess.run([sys.executable, "-m", "geoanchor.cli", "serve-tools", "--root", str(root)],
                              input=req + "\n", capture_output=True, text=True, timeout=60)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["call_id"] == "1"
