import json
import subprocess
import sys
import zlib

import numpy as np
import pytest

from demo2prog import cli

SMALL = {
    "program": "seq [3,1,4]",
    "train": {"epochs": 3, "hidden": [8], "batch_size": 64},
    "synth": {"n_scenes": 2},
    "eval": {"seeds": [0, 1]},
}
STAGES = [["demo"], ["train"], ["infer", "--prior", "baseline"], ["infer", "--prior", "attribution"],
          ["induce", "--prior", "baseline"], ["ground", "--prior", "baseline"],
          ["synth", "--prior", "baseline"], ["eval-table1"]]


def _config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _run(args, out):
    return cli.main([*args, "--out", str(out)])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _config(tmp, SMALL)
    outs = []
    for name in ("a", "b"):
        out = tmp / name
        codes = [cli.main([*stage, "--config", cfg, "--out", str(out), "--seed", "3"]) for stage in STAGES]
        assert codes == [0] * len(STAGES)
        outs.append(out)
    return outs


def test_pipeline_outputs(pipeline):
    out = pipeline[0]
    demo = json.loads((out / "demo" / "summary.json").read_text())
    assert demo["segments"] == 3
    for prior in ("baseline", "attribution"):
        assert (out / "infer" / prior / "trace.csv").exists()
        assert (out / "infer" / prior / "neff_stats.csv").exists()
    assert (out / "induce" / "baseline" / "program.txt").read_text() == "seq [0,1,2]\n"
    synth = json.loads((out / "synth" / "baseline" / "summary.json").read_text())
    assert synth == {"order_correct": 2, "prior": "baseline", "scenes": 2}
    visits = (out / "synth" / "baseline" / "visits.csv").read_text().splitlines()
    assert visits[0] == "scene,step,symbol,object"
    assert [r.split(",")[3] for r in visits[1:4]] == ["yellow", "green", "duck"]
    table = (out / "eval" / "table1.csv").read_text().splitlines()
    assert table[0] == "statistic,mean,max,min,iqr"
    assert [r.split(",")[0] for r in table[1:]] == ["Attribution (N_p = 50)", "Baseline (N_p = 50)"]


def test_pipeline_byte_identical(pipeline):
    a, b = pipeline
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 20
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_threads_do_not_change_results(pipeline, tmp_path):
    out = tmp_path / "t"
    cfg = _config(tmp_path, SMALL)
    assert cli.main(["demo", "--config", cfg, "--out", str(out), "--seed", "3", "--threads", "4"]) == 0
    assert ((out / "demo" / "steps.csv").read_bytes()
            == (pipeline[0] / "demo" / "steps.csv").read_bytes())


def test_missing_upstream_exit_3(tmp_path, capsys):
    assert _run(["infer", "--prior", "baseline"], tmp_path) == 3
    assert "demo.json" in capsys.readouterr().err
    assert _run(["induce", "--prior", "baseline"], tmp_path) == 3
    assert "symbols.csv" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "seed": 1,\n  "smc": {"r": }\n}\n')
    assert cli.main(["demo", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "bad.json:3:" in capsys.readouterr().err
    assert cli.main(["demo", "--config", _config(tmp_path, {"nope": 1}), "--out", str(tmp_path)]) == 2
    prog = _config(tmp_path, {"program": "exec 1\nloop 1 { exec 2 }"})
    assert cli.main(["demo", "--config", prog, "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert cli.main(["demo", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_zero_particles_and_few_seeds_exit_2(pipeline, tmp_path):
    zero = _config(tmp_path, {**SMALL, "smc": {"n_particles": 0}})
    assert cli.main(["infer", "--prior", "baseline", "--config", zero, "--out", str(pipeline[0])]) == 2
    one = _config(tmp_path, {**SMALL, "eval": {"seeds": [0]}}, "one.json")
    assert cli.main(["eval-table1", "--config", one, "--out", str(pipeline[0])]) == 2


def test_empty_program_gives_empty_demo(tmp_path):
    cfg = _config(tmp_path, {"program": "seq []"})
    assert cli.main(["demo", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "demo" / "summary.json").read_text())["steps"] == 0
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_numeric_failure_exit_4(tmp_path, capsys):
    cfg = _config(tmp_path, {"program": "seq [0,2]", "train": {"epochs": 5, "lr": 1e4, "hidden": [8]}})
    assert cli.main(["demo", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path)]) == 4
    assert "DivergenceError" in capsys.readouterr().err


def test_env_overrides_out(tmp_path, monkeypatch):
    monkeypatch.setenv("DEMO2PROG_OUT", str(tmp_path / "env"))
    cfg = _config(tmp_path, {"program": "exec 2"})
    assert cli.main(["demo", "--config", cfg, "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "env" / "demo" / "steps.csv").exists()
    assert not (tmp_path / "flag").exists()


def test_single_controller_both_priors_near_n(tmp_path):
    # goal jitter well below the control noise, as in the one-segment filter test
    cfg = _config(tmp_path, {"program": "exec 2", "train": {"epochs": 3, "hidden": [8]},
                             "smc": {"q_theta": 0.01}, "eval": {"seeds": [0, 1]}})
    for stage in (["demo"], ["train"], ["eval-table1"]):
        assert cli.main([*stage, "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "eval" / "table1.csv").read_text().splitlines()[1:]
    for r in rows:
        assert float(r.split(",")[1]) > 0.5 * 50


def test_stage_rng_derivation():
    a = cli.stage_rng(7, "infer").random(3)
    b = np.random.default_rng(np.random.SeedSequence([7, zlib.crc32(b"infer")])).random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, cli.stage_rng(7, "train").random(3))


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "demo2prog.cli", "induce", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 3 and r.stderr.startswith("error: missing upstream input")
