import json
import subprocess
import sys

import numpy as np
import pytest

from locality_jsq.cli import main
from locality_jsq.config import ConfigError, default_config, parse_config
from locality_jsq.seeds import seed_list, split_seed
from locality_jsq.trajectory import Trajectory

from oracles import BENCH, subcritical_loads


def small_config(tmp_path, **overrides):
    text = default_config_text()
    for key, val in overrides.items():
        lines = [ln for ln in text.splitlines() if not ln.startswith(key + " ")]
        lines.append(f"{key} = {json.dumps(val)}")
        text = "\n".join(lines) + "\n"
    path = tmp_path / "run.conf"
    path.write_text(text)
    return path


def default_config_text():
    from importlib import resources
    return resources.files("locality_jsq.data").joinpath("default.conf").read_text()


class TestConfig:
    def test_default_encodes_benchmark(self):
        cfg = default_config()
        params = cfg.params()
        assert np.allclose(params.p, BENCH["p"])
        assert params.lam == 3.0 and params.u.tolist() == [1.0, 5.0, 10.0]
        assert cfg.matrix("init.Q").shape == (3, 3)

    @pytest.mark.parametrize("text,line", [
        ("model.d = 2\nrates.lambda = [1,\n", 2),
        ("model.d = 2\n\nbogus.key = 1\n", 3),
        ("model.d 2\n", 1),
        ("model.d = 2\nmodel.d = 3\n", 2),
    ])
    def test_line_anchored_errors(self, text, line):
        with pytest.raises(ConfigError) as err:
            parse_config(text, "x.conf")
        assert err.value.line == line and f"x.conf:{line}:" in str(err.value)

    def test_shape_mismatch(self):
        cfg = parse_config(default_config_text().replace("compat.p = [0.05, 0.6, 1.0, 0.1, 0.7, 1.0]",
                                                         "compat.p = [0.05, 0.6]"))
        with pytest.raises(ConfigError, match="compat.p"):
            cfg.params()


class TestSeeds:
    def test_stable_values(self):
        # pinned so that seed lists stay identical across platforms and releases
        assert split_seed(0, 0) == 15793235383387715774
        assert split_seed(20240601, 5) == 10930918687900901045
        assert len(set(seed_list(7, 100))) == 100
        assert seed_list(7, 3) == [split_seed(7, r) for r in range(3)]


class TestDesign:
    def test_default(self, capsys):
        assert main(["design"]) == 0
        out = capsys.readouterr().out
        vals = dict(line.split(" = ") for line in out.splitlines() if " = " in line)
        p = np.array(json.loads(vals["compat.p"])).reshape(2, 3)
        loads = subcritical_loads(3.0, 1.0, BENCH["w"], BENCH["v"], BENCH["u"], p.tolist())
        assert max(loads) < 1 and vals["subcritical"] == "true"
        for m in range(3):
            assert float(vals[f"margin.{m}"]) == pytest.approx(loads[m], abs=1e-12)

    def test_capacity_exit_two(self, tmp_path):
        assert main(["design", "--config", str(small_config(tmp_path, **{"rates.lambda": 4.0}))]) == 2

    def test_single_type(self, tmp_path, capsys):
        path = small_config(tmp_path, **{"model.M": 1, "fractions.v": [1.0], "rates.u": [5.0],
                                         "compat.p": [1.0, 1.0]})
        assert main(["design", "--config", str(path)]) == 0
        line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("compat.p")][0]
        assert json.loads(line.split(" = ")[1]) == [1.0, 1.0]

    def test_malformed_exit_one(self, tmp_path, capsys):
        path = tmp_path / "bad.conf"
        path.write_text("model.d = 2\nrates.u = [1, 2\n")
        assert main(["design", "--config", str(path)]) == 1
        assert "bad.conf:2:" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["design", "--config", str(tmp_path / "nope.conf")]) == 1


class TestExperiment:
    def test_unknown_name(self):
        with pytest.raises(SystemExit) as exc:
            main(["experiment", "nonsense"])
        assert exc.value.code == 1

    def test_uniqueness_outputs(self, tmp_path, capsys):
        assert main(["experiment", "uniqueness", "--out-dir", str(tmp_path)]) == 0
        for i in range(3):
            tr = Trajectory.from_csv(tmp_path / f"uniqueness_init{i}.csv")
            tr.check()
            assert tr.times[-1] == 50.0
        ends = np.loadtxt(tmp_path / "uniqueness_endpoints.csv", delimiter=",", skiprows=1)
        spread = np.ptp(ends[:, 2].reshape(3, 3), axis=0)
        assert spread.max() < 1e-3

    def test_env_out_dir_and_reproducible(self, tmp_path, monkeypatch):
        path = small_config(tmp_path, **{"sim.N": 60, "sim.horizon": 0.5})
        outs = []
        for name, workers in (("a", "1"), ("b", "2")):
            out = tmp_path / name
            monkeypatch.setenv("JSQD_OUT_DIR", str(out))
            monkeypatch.setenv("JSQD_WORKERS", workers)
            assert main(["experiment", "stability_compare", "--config", str(path),
                         "--seeds", "3"]) == 0
            outs.append(out)
        for f in ("stability_compare_mean.csv", "stability_compare_final.csv"):
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()

    def test_convergence_and_coupling_small(self, tmp_path, monkeypatch):
        path = small_config(tmp_path, **{"sim.horizon": 0.3})
        monkeypatch.setenv("JSQD_WORKERS", "1")
        assert main(["experiment", "convergence", "--config", str(path), "--seeds", "2",
                     "--out-dir", str(tmp_path / "c")]) == 0
        for N in (100, 500, 1000):
            Trajectory.from_csv(tmp_path / "c" / f"convergence_N{N}.csv").check()
        Trajectory.from_csv(tmp_path / "c" / "convergence_ode.csv").check()
        assert main(["experiment", "coupling", "--config", str(path), "--seeds", "2",
                     "--out-dir", str(tmp_path / "k")]) == 0
        head = (tmp_path / "k" / "coupling_N100.csv").read_text().splitlines()[0]
        assert head == "t,delta,delta_over_N"

    def test_console_script(self):
        proc = subprocess.run([sys.executable, "-m", "locality_jsq.cli", "design"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "compat.p" in proc.stdout
