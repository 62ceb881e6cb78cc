from __future__ import annotations

import csv

import pytest

from dromo.cli import EXIT_FAIL, EXIT_IO, EXIT_OK, EXIT_USAGE, main


def _gen(tmp_path, name="run", extra=""):
    out = tmp_path / name
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(f"env = chain5\nbehavior = uniform\nn_transitions = 1000\nout = {out}\n{extra}")
    assert main(["gen", "--config", str(cfg), "--seed", "7"]) == EXIT_OK
    return cfg, out


def test_gen_is_byte_identical(tmp_path, capsys):
    _, a = _gen(tmp_path, "a")
    _, b = _gen(tmp_path, "b")
    for f in ("mdp.txt", "dataset.txt"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert "coverage 1.0" in capsys.readouterr().out


def test_gen_rejects_empty_dataset(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_transitions = 0\n")
    assert main(["gen", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path)]) == EXIT_USAGE


def test_usage_errors(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("colour = red\n")
    assert main(["gen", "--config", str(cfg), "--seed", "1"]) == EXIT_USAGE
    cfg.write_text("env = chain5\n")
    assert main(["gen", "--config", str(cfg)]) == EXIT_USAGE
    assert main(["verify", "--suite", "nope", "--seed", "1"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


def test_missing_files_are_io_errors(tmp_path):
    assert main(["gen", "--config", str(tmp_path / "none.cfg"), "--seed", "1"]) == EXIT_IO
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"out = {tmp_path / 'empty'}\n")
    assert main(["run", "--config", str(cfg), "--seed", "1"]) == EXIT_IO


def test_combo_equals_dromo_at_zero_alpha(tmp_path):
    cfg, out = _gen(tmp_path)
    base = cfg.read_text() + "beta = 0.5\nmax_iters = 5\nrho_mode = buffer\nrollouts_k = 10\nrollout_h = 10\n"
    traces = []
    for name, extra in (("combo", "algorithm = combo\nalpha = 0.9\n"), ("dromo", "algorithm = dromo\nalpha = 0\n")):
        c = tmp_path / f"{name}.cfg"
        c.write_text(base + extra + f"mdp_file = {out / 'mdp.txt'}\ndataset_file = {out / 'dataset.txt'}\n")
        dest = tmp_path / name
        assert main(["run", "--config", str(c), "--seed", "3", "--out", str(dest)]) == EXIT_OK
        traces.append((dest / "trace.csv").read_bytes())
    assert traces[0] == traces[1]


def test_run_is_repeatable_and_auto_beta(tmp_path):
    cfg, out = _gen(tmp_path)
    text = cfg.read_text() + "alpha = 0.3\nbeta = auto\nmax_iters = 4\n"
    cfg.write_text(text)
    reports = []
    for _ in range(2):
        assert main(["run", "--config", str(cfg), "--seed", "7"]) == EXIT_OK
        reports.append(((out / "trace.csv").read_bytes(), (out / "report.txt").read_text()))
    assert reports[0] == reports[1]
    assert "lower_bound_holds = true" in reports[0][1]
    with open(out / "trace.csv") as fh:
        assert all(float(r["beta"]) >= 0 for r in csv.DictReader(fh))


def test_mopo_run(tmp_path):
    cfg, out = _gen(tmp_path)
    cfg.write_text(cfg.read_text() + "algorithm = mopo\nmopo_lambda = 0.5\nmax_iters = 5\n")
    assert main(["run", "--config", str(cfg), "--seed", "7"]) == EXIT_OK
    assert (out / "trace.csv").read_text().startswith("iter,alpha_t,mean_q")


def test_verify_writes_report(tmp_path):
    assert main(["verify", "--suite", "duchi", "--instances", "5", "--seed", "2", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "verify_duchi.csv").exists()


def _trace(path, rows):
    path.write_text("iter,mean_q_hat,return_true\n" + "".join(f"{i},{i * 0.5},{i}\n" for i in range(1, rows + 1)))


def test_plotdata(tmp_path):
    one = tmp_path / "seed3" / "trace.csv"
    one.parent.mkdir()
    _trace(one, 2)
    out = tmp_path / "long.csv"
    assert main(["plotdata", str(one), "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["seed", "iter", "metric", "value"]
    assert rows[1] == ["3", "1", "mean_q_hat", "0.5"] and len(rows) == 5

    paths = []
    for s in range(5):
        p = tmp_path / f"t{s}.csv"
        _trace(p, 2)
        paths.append(str(p))
    assert main(["plotdata", *reversed(paths), "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader(out.open()))[1:]
    assert len(rows) == 20 and rows == sorted(rows, key=lambda r: (int(r[0]), int(r[1])))

    bad = tmp_path / "bad.csv"
    bad.write_text("iter,mean_q_hat\n1,0.5\n")
    assert main(["plotdata", str(one), str(bad), "--out", str(out)]) == EXIT_USAGE


def test_report_bound_uses_the_evaluated_policy(tmp_path):
    # epsilon-greedy data on the chain makes auto-beta alternate between two policies
    cfg, out = _gen(tmp_path, extra="behavior = epsilon\nn_transitions = 2000\n")
    cfg.write_text(cfg.read_text() + "alpha = 0.3\nbeta = auto\n")
    assert main(["run", "--config", str(cfg), "--seed", "7"]) == EXIT_OK
    report = dict(line.split(" = ") for line in (out / "report.txt").read_text().splitlines())
    assert float(report["mean_q_hat"]) <= float(report["mean_q_truth"])
    assert report["lower_bound_holds"] == "true"
