import json
import subprocess
import sys

import numpy as np
import pytest

from dimer_chaos import cli
from dimer_chaos.config import ConfigError, parse_config
from dimer_chaos.cli import main, run_experiment, write_csv

POINCARE = """\
[system]
N = 100
C = 1.0
mu = 0.2
omega = 1.37

[run]
seed = 5

[poincare]
seeds_z = [0.1, -0.2]
seeds_phi = [0.0, 3.0]
periods = 5
"""

EVOLVE = """\
[system]
N = 30
C = 1.0
mu = 0.2
omega = 1.37

[evolve]
state = "coherent"
z0 = 0.2
phi0 = 1.0
t_end = 2
n_samples = 5
"""


def errors_of(text, kind=None):
    with pytest.raises(ConfigError) as info:
        parse_config(text, kind)
    return info.value.errors


class TestParser:
    def test_defaults_and_params(self):
        cfg = parse_config(EVOLVE)
        assert cfg.kind == "evolve"
        assert cfg.params.N == 30 and cfg.params.U == pytest.approx(1 / 30)
        assert cfg.options["source"] == "time_dependent"
        assert cfg.options["max_step"] == 0.025
        assert cfg.seed == 0 and cfg.threads == 1

    def test_canonical_round_trip(self):
        cfg = parse_config(POINCARE)
        again = parse_config(cfg.canonical())
        assert again.canonical() == cfg.canonical()
        assert again.digest() == cfg.digest()
        assert again.params == cfg.params

    def test_digest_ignores_threads_and_formatting(self):
        a = parse_config(POINCARE)
        b = parse_config(POINCARE.replace("seed = 5", "seed = 5\nthreads = 4  # more").replace("C = 1.0", "C=1"))
        assert a.digest() == b.digest()
        assert a.digest() != a.replace(seed=6).digest()

    def test_all_errors_with_line_numbers(self):
        text = "[system]\nN = 0\nC = 1\nJ0 = -1\nbogus = 3\n\n[evolve]\nstate = chaos\nt_end = -1\n"
        errs = errors_of(text)
        joined = "\n".join(errs)
        assert "line 2:" in joined and "N >= 1" in joined
        assert "line 4:" in joined and "J0 > 0" in joined
        assert "line 5:" in joined and "bogus" in joined
        assert "line 8:" in joined
        assert "line 9:" in joined
        assert all(e.startswith("line ") for e in errs)

    def test_duplicate_key_reports_both_lines(self):
        errs = errors_of(POINCARE.replace("N = 100", "N = 100\nN = 200"))
        assert any("2" in e and "3" in e and "N" in e for e in errs)

    def test_missing_required(self):
        errs = errors_of(POINCARE.replace("seeds_phi = [0.0, 3.0]\n", ""))
        assert any("seeds_phi" in e and e.startswith("line 10:") for e in errs)
        errs = errors_of(POINCARE.replace("N = 100\n", ""))
        assert any("'N'" in e for e in errs)

    def test_exactly_one_interaction(self):
        assert any("exactly one of U or C" in e for e in errors_of(POINCARE.replace("C = 1.0", "C = 1.0\nU = 0.01")))
        assert any("exactly one of U or C" in e for e in errors_of(POINCARE.replace("C = 1.0\n", "")))

    def test_cross_checks(self):
        assert any("differ in length" in e for e in errors_of(POINCARE.replace("[0.0, 3.0]", "[0.0]")))
        undriven = POINCARE.replace("mu = 0.2", "mu = 0")
        assert any("strobe_period" in e for e in errors_of(undriven))
        assert parse_config(undriven.replace("periods = 5", "periods = 5\nstrobe_period = 3.0"))
        assert any("coherent" in e for e in errors_of(EVOLVE.replace('state = "coherent"', 'state = "chaotic"')))

    def test_wrong_section_for_kind(self):
        errs = errors_of(POINCARE, kind="evolve")
        assert any("different experiment" in e for e in errs)

    def test_comments_and_strings(self):
        cfg = parse_config(EVOLVE.replace('state = "coherent"', "state = coherent ; bare word"))
        assert cfg.options["state"] == "coherent"


class TestOutput:
    def test_csv_precision(self, tmp_path):
        x = 0.1 + 0.2
        write_csv(tmp_path / "a.csv", {"x": [x], "n": [3], "flag": [True]})
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert lines[0] == "x,n,flag"
        assert float(lines[1].split(",")[0]) == x
        assert lines[1] == "0.30000000000000004,3,1"

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = parse_config(POINCARE)
        a = run_experiment(cfg, tmp_path / "a")
        b = run_experiment(cfg, tmp_path / "b", threads=3)
        assert (a / "section.csv").read_bytes() == (b / "section.csv").read_bytes()
        assert a.relative_to(tmp_path / "a") == b.relative_to(tmp_path / "b")
        assert a.parts[-2:] == ("poincare", cfg.digest())

    def test_metadata_regenerates_run(self, tmp_path):
        d = run_experiment(parse_config(EVOLVE), tmp_path)
        meta = json.loads((d / "metadata.json").read_text())
        assert meta["files"] == ["observables.csv"]
        assert meta["config_hash"] == d.name
        again = run_experiment(parse_config(meta["config"]), tmp_path / "re")
        assert (again / "observables.csv").read_bytes() == (d / "observables.csv").read_bytes()
        for key in ("seed", "threads", "versions", "wall_time_s", "params"):
            assert key in meta


class TestMain:
    def write(self, tmp_path, text):
        path = tmp_path / "run.conf"
        path.write_text(text)
        return str(path)

    def test_success(self, tmp_path, capsys):
        conf = self.write(tmp_path, POINCARE)
        assert main(["poincare", "--config", conf, "--out", str(tmp_path / "o")]) == 0
        out = capsys.readouterr().out.strip()
        assert out.endswith(parse_config(POINCARE).digest())

    def test_seed_override_changes_namespace(self, tmp_path, capsys):
        conf = self.write(tmp_path, POINCARE)
        main(["poincare", "--config", conf, "--out", str(tmp_path), "--seed", "99"])
        out = capsys.readouterr().out.strip()
        assert out.endswith(parse_config(POINCARE.replace("seed = 5", "seed = 99")).digest())

    def test_config_errors_exit_2(self, tmp_path, capsys):
        conf = self.write(tmp_path, POINCARE.replace("N = 100", "N = -3"))
        assert main(["poincare", "--config", conf]) == 2
        assert "line 2:" in capsys.readouterr().err
        assert main(["poincare", "--config", str(tmp_path / "missing.conf")]) == 2
        assert main(["evolve", "--config", conf, "--threads", "0"]) == 2
        assert main(["nonsense", "--config", conf]) == 2

    def test_runtime_error_exit_3(self, tmp_path, monkeypatch, capsys):
        def boom(r):
            raise RuntimeError("integrator failed")
        monkeypatch.setitem(cli.RUNNERS, "poincare", boom)
        conf = self.write(tmp_path, POINCARE)
        assert main(["poincare", "--config", conf, "--out", str(tmp_path)]) == 3
        assert "integrator failed" in capsys.readouterr().err

    def test_thread_precedence(self, tmp_path, monkeypatch):
        seen = []
        real = cli.run_experiment
        monkeypatch.setattr(cli, "run_experiment", lambda cfg, out, threads: seen.append(threads) or real(cfg, out, threads))
        conf = self.write(tmp_path, POINCARE)
        monkeypatch.setenv(cli.THREADS_ENV, "3")
        main(["poincare", "--config", conf, "--out", str(tmp_path)])
        main(["poincare", "--config", conf, "--out", str(tmp_path), "--threads", "2"])
        monkeypatch.delenv(cli.THREADS_ENV)
        main(["poincare", "--config", conf, "--out", str(tmp_path)])
        assert seen == [3, 2, None]
        monkeypatch.setenv(cli.THREADS_ENV, "many")
        assert main(["poincare", "--config", conf, "--out", str(tmp_path)]) == 2

    def test_console_script(self, tmp_path):
        conf = self.write(tmp_path, POINCARE)
        proc = subprocess.run([sys.executable, "-m", "dimer_chaos.cli", "poincare", "--config", conf,
                               "--out", str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        rows = np.loadtxt(proc.stdout.strip() + "/section.csv", delimiter=",", skiprows=1)
        assert rows.shape == (2 * 6, 5)
