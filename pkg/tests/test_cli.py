import json
import subprocess
import sys

import numpy as np
import pytest

from rcnet.cli import COMMANDS, build_parser, main
from rcnet.netcore import load, load_meta


def run(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


class TestDispatch:
    def test_floor(self, tmp_path, capsys):
        path = tmp_path / "f.json"
        code, _, _ = run(["floor", "--n", 4, "--m", 4, "--delta", 0.25, "--out", path], capsys)
        assert code == 0 and load(path)([2.3])[0] == pytest.approx(2)

    def test_delta_diagnostic(self, tmp_path, capsys):
        code, _, err = run(["floor", "--n", 4, "--m", 4, "--delta", 1.5, "--out",
                            tmp_path / "f.json"], capsys)
        assert code == 1 and "delta must lie in (0,1)" in err
        assert len(err.strip().splitlines()) == 1

    def test_unknown_subcommand(self, capsys):
        code, _, err = run(["bogus"], capsys)
        assert code == 1 and "usage" in err

    def test_no_subcommand(self, capsys):
        assert run([], capsys)[0] == 1

    def test_bad_flag_value(self, capsys):
        assert run(["floor", "--n", "four"], capsys)[0] == 1

    def test_missing_required(self, capsys):
        code, _, err = run(["floor", "--n", 2, "--m", 2, "--delta", 0.5], capsys)
        assert code == 1 and "--out" in err

    def test_numeric_failure_exit_code(self, tmp_path, capsys, monkeypatch):
        from rcnet import cli
        from rcnet.errors import NumericError

        def boom(settings):
            raise NumericError("interval bound overflowed")

        monkeypatch.setitem(cli.HANDLERS, "floor", boom)
        code, _, err = run(["floor"], capsys)
        assert code == 2 and "overflowed" in err

    def test_help_lists_every_flag_with_domain(self):
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices
        for name, spec in COMMANDS.items():
            text = sub[name].format_help()
            for opt, (_, default, _) in spec["options"].items():
                assert f"--{opt.replace('_', '-')}" in text
            assert "--config" in text and "--show-config" in text

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "rcnet", "floor", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "--delta" in proc.stdout


class TestConfig:
    def test_flags_win(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text('n = 3\nm = 5\n[floor]\ndelta = 0.5\nout = "x.json"\n')
        code, out, _ = run(["floor", "--config", cfg, "--n", 2, "--show-config"], capsys)
        assert code == 0
        assert "n = 2" in out and "m = 5" in out and "delta = 0.5" in out

    def test_show_defaults(self, capsys):
        code, out, _ = run(["construct", "--show-config"], capsys)
        assert code == 0 and 'mode = "gap"' in out and "samples = 100000" in out

    def test_unknown_table_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[floor]\nwidth = 3\n")
        assert run(["floor", "--config", cfg], capsys)[0] == 1

    def test_wrong_type(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("n = 2.5\n")
        code, _, err = run(["floor", "--config", cfg], capsys)
        assert code == 1 and "integer" in err

    def test_bad_toml(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("n = = 2\n")
        assert run(["floor", "--config", cfg], capsys)[0] == 1

    def test_train_config(self, tmp_path, capsys):
        cfg = tmp_path / "t.toml"
        cfg.write_text('task = "spiral"\nn_values = [8]\nepochs = 3\n')
        code, out, _ = run(["train", "--config", cfg, "--show-config"], capsys)
        assert code == 0 and "n_values = [8]" in out and "epochs = 3" in out


class TestRoundTrips:
    def test_pointfit(self, tmp_path, capsys):
        (tmp_path / "v.csv").write_text("0.0\n0.4\n0.5\n")
        path = tmp_path / "p.json"
        assert run(["pointfit", "--values", tmp_path / "v.csv", "--epsilon", 0.4, "--out", path],
                   capsys)[0] == 0
        assert np.allclose(load(path)(np.arange(3.0)[:, None])[:, 0], [0, 0.4, 0.4])

    def test_pointfit_invalid(self, tmp_path, capsys):
        (tmp_path / "v.csv").write_text("0.0\n2.0\n")
        code, _, err = run(["pointfit", "--values", tmp_path / "v.csv", "--epsilon", 0.4,
                            "--out", tmp_path / "p.json"], capsys)
        assert code == 1 and "epsilon" in err

    def test_merge(self, tmp_path, capsys):
        f, p, m = tmp_path / "f.json", tmp_path / "p.json", tmp_path / "m.json"
        (tmp_path / "v.csv").write_text("0.1\n0.3\n0.2\n0.5\n")
        run(["floor", "--n", 4, "--m", 4, "--delta", 0.25, "--out", f], capsys)
        run(["pointfit", "--values", tmp_path / "v.csv", "--epsilon", 0.3, "--out", p], capsys)
        code, _, _ = run(["merge", "--stage1", f, "--stage2", p, "--A", 4, "--out", m], capsys)
        assert code == 0
        x = np.array([[0.1], [1.3], [2.6], [3.1]])
        want = load(p)(load(f)(x))
        assert np.allclose(load(m)(x), want, atol=1e-8)
        assert load_meta(m)["merged_reps"] == 3 + 3 + 1

    def test_construct_verify_eval(self, tmp_path, capsys):
        net, rep = tmp_path / "g.json", tmp_path / "r.json"
        code, _, _ = run(["construct", "--target", "abs1", "--r", 4, "--out", net,
                          "--report", rep], capsys)
        assert code == 0
        built = json.loads(rep.read_text())
        assert built["K"] == 4 and built["sizes"]["block_width"] == 63
        assert built["errors"]["sup_error_off_trifling"] <= built["theoretical_bound"]

        code, out, _ = run(["verify", "--net", net, "--target", "abs1", "--mode", "gap"], capsys)
        assert code == 0
        checked = json.loads(out)
        assert checked["errors"]["sup_error_off_trifling"] == built["errors"]["sup_error_off_trifling"]
        assert checked["errors"]["theoretical_bound"] == built["theoretical_bound"]

        pts = tmp_path / "pts.csv"
        pts.write_text("0.1\n0.5\n0.9\n")
        code, out, _ = run(["eval", "--net", net, "--points", pts], capsys)
        vals = np.array([float(v) for v in out.split()])
        assert code == 0 and np.max(np.abs(vals - [0.1, 0.5, 0.9])) <= 5 * 0.25

    def test_construct_lp(self, tmp_path, capsys):
        rep = tmp_path / "r.json"
        code, _, _ = run(["construct", "--target", "abs1", "--r", 4, "--mode", "lp", "--p", 1,
                          "--samples", 2000, "--out", tmp_path / "n.json", "--report", rep], capsys)
        doc = json.loads(rep.read_text())
        assert code == 0 and doc["errors"]["p"] == 1 and doc["errors"]["samples_used"] == 2000
        assert doc["sizes"]["block_width"] == 117

    def test_verify_flags_override_meta(self, tmp_path, capsys):
        net = tmp_path / "f.json"
        run(["floor", "--n", 2, "--m", 2, "--delta", 0.5, "--out", net], capsys)
        code, out, _ = run(["verify", "--net", net, "--target", "const:0", "--K", 3,
                            "--delta", 0.1, "--grid", 11], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["K"] == 3 and doc["delta"] == 0.1

    @pytest.mark.parametrize("args", [["--mode", "linf", "--d", 3], ["--mode", "cubic"],
                                      ["--r", 0], ["--p", 0.5, "--mode", "lp"]])
    def test_construct_rejects(self, tmp_path, capsys, args):
        base = ["construct", "--target", "abs1", "--r", 4, "--out", tmp_path / "n.json"]
        assert run(base + args, capsys)[0] == 1

    def test_train(self, tmp_path, capsys):
        out = tmp_path / "m.csv"
        code, text, _ = run(["train", "--task", "trig", "--n", 4, "--r", "1,2", "--epochs", 3,
                             "--trials", 3, "--train-samples", 100, "--test-samples", 50,
                             "--batch-size", 25, "--workers", 1, "--out", out], capsys)
        assert code == 0 and "n=4 r=2" in text
        assert out.read_text().splitlines()[0] == "task,n,r,seed_group,epoch,train_loss,test_loss"

    def test_verify_takes_mode_from_net_file(self, tmp_path, capsys):
        net = tmp_path / "l.json"
        run(["construct", "--target", "abs1", "--r", 4, "--mode", "lp", "--p", 1,
             "--samples", 500, "--out", net, "--report", tmp_path / "r.json"], capsys)
        code, out, _ = run(["verify", "--net", net, "--target", "abs1", "--samples", 500], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["mode"] == "lp" and doc["errors"]["p"] == 1
        assert doc["errors"]["theoretical_bound"] == pytest.approx(6 / 4)
        code, out, _ = run(["verify", "--net", net, "--target", "abs1", "--mode", "gap"], capsys)
        assert code == 0 and json.loads(out)["mode"] == "gap"
