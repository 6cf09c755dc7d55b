import csv

import pytest

from stiffcontact.cli import main, read_config


def rows_of(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen1d_writes_two_column_csv(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["gen1d", "--k", "2500", "--n", "20", "--seed", "1", "--out", str(out)]) == 0
    rows = rows_of(out)
    assert len(rows) == 20 and list(rows[0]) == ["zdot_t", "zdot_t1"]


def test_gen3d_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen3d", "--stiffness", "hard", "--n", "3", "--seed", "7",
                     "--out", str(tmp_path / name)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(files) == 3
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen3d_parallel_matches_serial(tmp_path):
    main(["gen3d", "--stiffness", "soft", "--n", "2", "--out", str(tmp_path / "s")])
    main(["gen3d", "--stiffness", "soft", "--n", "2", "--jobs", "2", "--out", str(tmp_path / "p")])
    for f in (tmp_path / "s").iterdir():
        assert f.read_bytes() == (tmp_path / "p" / f.name).read_bytes()


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["gen1d", "--bogus", "1", "--out", str(tmp_path / "x")]) == 1
    assert main(["nosuchcommand"]) == 1
    assert main(["gen3d", "--stiffness", "rubbery", "--out", str(tmp_path / "x")]) == 1
    assert main(["eval", "--data", str(tmp_path), "--eval-data", str(tmp_path), "--out", "x"]) == 1


def test_missing_data_exits_2(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "m.npz")]) == 2
    assert main(["report", "--in", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 2


def test_schema_mismatch_exits_2(tmp_path):
    d = tmp_path / "d"
    main(["gen3d", "--n", "1", "--out", str(d)])
    f = next(d.iterdir())
    f.write_text(f.read_text().replace("# schema=1", "# schema=7"))
    assert main(["train", "--data", str(d), "--max-epochs", "1", "--out", str(tmp_path / "m.npz")]) == 2


def test_config_file_supplies_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# 1-D pairs\nk = 100\nn = 5\nnoise-var = 0\n")
    assert read_config(cfg) == {"k": "100", "n": "5", "noise_var": "0"}
    out = tmp_path / "p.csv"
    assert main(["gen1d", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(rows_of(out)) == 5
    # flags override the file
    assert main(["gen1d", "--config", str(cfg), "--n", "7", "--out", str(out)]) == 0
    assert len(rows_of(out)) == 7


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["gen1d", "--config", str(cfg), "--out", str(tmp_path / "p.csv")]) == 1


def test_train_eval_report_chain(tmp_path):
    data, ev = tmp_path / "train", tmp_path / "eval"
    assert main(["gen3d", "--stiffness", "soft", "--n", "4", "--out", str(data)]) == 0
    assert main(["gen3d", "--stiffness", "soft", "--n", "2", "--split", "eval", "--out", str(ev)]) == 0
    model = tmp_path / "m.npz"
    assert main(["train", "--data", str(data), "--hidden-size", "8", "--history", "4", "--max-epochs", "2",
                 "--out", str(model), "--history-csv", str(tmp_path / "h.csv")]) == 0
    assert len(rows_of(tmp_path / "h.csv")) == 2
    run = tmp_path / "run"
    run.mkdir()
    assert main(["eval", "--model", str(model), "--data", str(data), "--eval-data", str(ev),
                 "--stiffness", "soft", "--out", str(run / "metrics.csv")]) == 0
    rows = rows_of(run / "metrics.csv")
    metrics = {r["metric"] for r in rows}
    assert {"oracle_loss", "training_gap", "generalization_gap", "e_pos", "e_rot"} <= metrics
    assert main(["report", "--in", str(run), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "fig3a_training_gap.csv").exists()


def test_sweep_writes_rows_and_summary(tmp_path):
    data = tmp_path / "d"
    main(["gen3d", "--stiffness", "soft", "--n", "3", "--out", str(data)])
    assert main(["sweep", "--data", str(data), "--learning-rates", "1e-3,1e-4", "--hidden-sizes", "4",
                 "--histories", "2", "--weight-decays", "0", "--targets", "v_next", "--replicates", "2",
                 "--max-epochs", "1", "--out", str(tmp_path / "s.csv"),
                 "--summary", str(tmp_path / "best.csv")]) == 0
    assert len(rows_of(tmp_path / "s.csv")) == 4
    assert len(rows_of(tmp_path / "best.csv")) == 2


def test_oracle_eval(tmp_path):
    data, ev = tmp_path / "train", tmp_path / "eval"
    main(["gen3d", "--stiffness", "medium", "--n", "2", "--out", str(data)])
    main(["gen3d", "--stiffness", "medium", "--n", "2", "--split", "eval", "--out", str(ev)])
    assert main(["eval", "--oracle", "true", "--data", str(data), "--eval-data", str(ev),
                 "--stiffness", "medium", "--out", str(tmp_path / "o.csv")]) == 0
    rows = {r["metric"]: float(r["value"]) for r in rows_of(tmp_path / "o.csv")}
    assert rows["training_gap"] == 0.0


@pytest.mark.parametrize("jobs", ["1", "2"])
def test_experiment_report_cardinality(tmp_path, jobs):
    out = tmp_path / "exp"
    assert main(["experiment", "--stiffness", "hard,soft", "--sizes", "2,3", "--seeds", "2",
                 "--n-pool", "4", "--n-eval", "2", "--hidden-size", "4", "--history", "2",
                 "--max-epochs", "1", "--jobs", jobs, "--out", str(out)]) == 0
    assert main(["report", "--in", str(out), "--out", str(out / "report")]) == 0
    reps = rows_of(out / "report" / "replicates.csv")
    assert len(reps) == 2 * 2 * 2
    assert {(r["stiffness"], r["N"]) for r in reps} == {(s, n) for s in ("hard", "soft") for n in ("2", "3")}


def test_experiment_is_reproducible_across_job_counts(tmp_path):
    args = ["experiment", "--stiffness", "soft", "--sizes", "2", "--seeds", "2", "--n-pool", "3",
            "--n-eval", "2", "--hidden-size", "4", "--history", "2", "--max-epochs", "1"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--jobs", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_divergence_budget_exit_3(tmp_path):
    out = tmp_path / "exp"
    code = main(["experiment", "--stiffness", "soft", "--sizes", "2", "--seeds", "1", "--n-pool", "2",
                 "--n-eval", "1", "--hidden-size", "4", "--history", "2", "--max-epochs", "3",
                 "--learning-rate", "1e300", "--max-diverged", "0", "--out", str(out)])
    assert code == 3


def test_1d_experiment_and_report(tmp_path):
    out = tmp_path / "one"
    assert main(["experiment", "--system", "1d", "--replicates", "2", "--n-train", "6", "--max-epochs", "3",
                 "--tune", "false", "--out", str(out)]) == 0
    assert main(["report", "--in", str(out), "--out", str(out / "rep")]) == 0
    assert (out / "rep" / "fig1_summary.csv").exists()
