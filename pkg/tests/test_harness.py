import json

import numpy as np
import pytest

from boa import cli
from boa.errors import ConsistencyError, FormatError, SpecError
from boa.gridworld import EnvSpec
from boa.harness import (
    CSV_FIELDS,
    K_GRID,
    Artifacts,
    MetricsTable,
    RunRow,
    RunSpec,
    SweepResult,
    ablate_k,
    ablate_n,
    default_n_list,
    episode_seeds,
    evaluate,
    read_rows,
    report,
)


def test_expert_always_succeeds(hallway):
    table = evaluate(RunSpec("expert", hallway, episodes=20, runs=2))
    assert [r.success_rate for r in table.rows] == [1.0, 1.0]
    assert all(0.8 < r.mean_return <= 1.0 for r in table.rows)


def test_random_returns_in_range(hallway):
    table = evaluate(RunSpec("random", hallway, episodes=20, runs=2))
    for r in table.rows:
        assert 0.0 <= r.mean_return <= 1.0 and 0.0 <= r.success_rate <= 1.0


def test_csv_schema_and_determinism(hallway, hallway_artifacts):
    spec = RunSpec("boa+bc_tabular", hallway, episodes=10, runs=3, seed=1000, epsilon=0.5)
    a = evaluate(spec, hallway_artifacts).to_csv()
    b = evaluate(spec, hallway_artifacts).to_csv()
    assert a == b
    lines = a.splitlines()
    assert lines[0] == ",".join(CSV_FIELDS) and len(lines) == 4
    assert lines[1].split(",")[-1] == "1000" and lines[2].split(",")[-1] == "1001"
    assert lines[1].split(",")[6].count(".") == 1 and len(lines[1].split(",")[6].split(".")[1]) == 6


def test_more_runs_only_append(hallway, hallway_artifacts):
    spec = RunSpec("bc_tabular", hallway, episodes=5, runs=2, seed=4)
    short = evaluate(spec, hallway_artifacts).rows
    longer = evaluate(RunSpec("bc_tabular", hallway, episodes=5, runs=4, seed=4), hallway_artifacts).rows
    assert longer[:2] == short


def test_episode_seeds_independent():
    s1, r1 = episode_seeds(3, 0)
    s2, r2 = episode_seeds(3, 1)
    assert s1 != s2 and r1.random() != r2.random()


def test_ablate_k_singleton_equals_evaluate(hallway, hallway_artifacts):
    spec = RunSpec("boa+bc_tabular", hallway, episodes=5, runs=2, seed=9, k=5)
    sweep = ablate_k(spec, hallway_artifacts, [5])
    assert sweep.combined.to_csv() == evaluate(spec, hallway_artifacts).to_csv()


def test_ablate_k_default_grid(hallway, hallway_artifacts):
    spec = RunSpec("boa+bc_tabular", hallway, episodes=2, runs=1)
    sweep = ablate_k(spec, hallway_artifacts)
    assert sweep.values == list(K_GRID) and len(sweep.combined.rows) == 13
    assert [r.k for r in sweep.combined.rows] == list(K_GRID)
    summary = sweep.summary_csv().splitlines()
    assert len(summary) == 14 and sum(int(l.split(",")[-1]) for l in summary[1:]) == 1


def test_ablate_k_rejects_bad_values(hallway, hallway_artifacts):
    spec = RunSpec("boa+bc_tabular", hallway, episodes=1, runs=1)
    with pytest.raises(SpecError):
        ablate_k(spec, hallway_artifacts, [])
    with pytest.raises(SpecError):
        ablate_k(spec, hallway_artifacts, [10**6])


def row(success, k=1, run=0):
    return RunRow("boa+bc_tabular", "hallway", run, 10, k, 1, success, success, 5.0, 0.0, run)


def test_best_prefers_smaller_on_ties():
    tables = [MetricsTable([row(0.5, k)]) for k in (10, 5)]
    tables.append(MetricsTable([row(0.9, 1)]))
    assert SweepResult("k", [10, 5, 1], tables).best() == 1
    tied = SweepResult("k", [10, 5], [MetricsTable([row(0.7)]), MetricsTable([row(0.7)])])
    assert tied.best() == 5


def test_ablate_n_nesting(hallway, hallway_data, hallway_featurizer, hallway_artifacts):
    sizes = {}
    spec = RunSpec("boa+bc_tabular", hallway, episodes=3, runs=1, k=1)
    sweep = ablate_n(
        spec, hallway_data, hallway_featurizer, hallway_artifacts.policy, [1, 5, 20],
        on_index=lambda n, idx: sizes.setdefault(n, idx),
    )
    assert [r.n for r in sweep.combined.rows] == [1, 5, 20]
    small, mid, full = sizes[1], sizes[5], sizes[20]
    assert len(small) < len(mid) < len(full)
    # the smaller index is a prefix of the bigger one
    np.testing.assert_array_equal(mid.latents[: len(small)], small.latents)
    np.testing.assert_array_equal(full.latents[: len(mid)], mid.latents)
    np.testing.assert_array_equal(full.latents, hallway_artifacts.index.latents)
    assert sweep.tables[-1].to_csv() == evaluate(spec, hallway_artifacts).to_csv()


def test_default_n_list():
    assert default_n_list(150)[:3] == [1, 5, 10] and default_n_list(150)[-1] == 150
    assert default_n_list(12) == [1, 5, 10]


def test_report_single_run_passes_through(hallway):
    text = evaluate(RunSpec("expert", hallway, episodes=3, runs=1)).to_csv()
    wide, long = report([text])
    header, line = wide.splitlines()
    fields = dict(zip(header.split(","), line.split(",")))
    src = dict(zip(CSV_FIELDS, text.splitlines()[1].split(",")))
    assert fields["success_rate_mean"] == src["success_rate"] and fields["success_rate_std"] == "0.000000"
    assert long.count("\n") == 1 + 4


def test_report_groups_agents(hallway, hallway_artifacts):
    texts = [
        evaluate(RunSpec(a, hallway, episodes=4, runs=3, seed=50), hallway_artifacts).to_csv()
        for a in ("expert", "random")
    ]
    wide, _ = report(texts)
    lines = wide.splitlines()
    assert len(lines) == 3
    rows = read_rows(texts[1])
    mean = sum(r.success_rate for r in rows) / 3
    got = float(dict(zip(lines[0].split(","), lines[2].split(",")))["success_rate_mean"])
    assert abs(got - mean) <= 1e-6


def test_aggregate_population_std():
    t = MetricsTable([row(0.0), row(1.0)])
    mean, std = t.aggregate("success_rate")
    assert abs(mean - 0.5) < 1e-12 and abs(std - 0.5) < 1e-12


def test_schema_mismatch():
    with pytest.raises(FormatError):
        read_rows("agent,env\nx,y\n")
    with pytest.raises(FormatError):
        read_rows(",".join(CSV_FIELDS) + "\nexpert,hallway\n")


def test_missing_artifacts(hallway, hallway_artifacts):
    with pytest.raises(ConsistencyError):
        evaluate(RunSpec("boa+bc_tabular", hallway, episodes=1, runs=1))
    with pytest.raises(ConsistencyError):
        evaluate(RunSpec("boa+bc_linear", hallway, episodes=1, runs=1), hallway_artifacts)
    with pytest.raises(ConsistencyError):
        evaluate(RunSpec("zip", EnvSpec("pick_place"), episodes=1, runs=1), hallway_artifacts)
    with pytest.raises(SpecError):
        RunSpec("oracle", hallway)


def test_time_queries(hallway, hallway_artifacts):
    spec = RunSpec("boa+bc_tabular", hallway, episodes=2, runs=1)
    assert evaluate(spec, hallway_artifacts).rows[0].mean_query_ms == 0.0
    assert evaluate(spec, hallway_artifacts, time_queries=True).rows[0].mean_query_ms > 0.0


def test_diagnostics_sink(hallway, hallway_artifacts):
    seen = []
    spec = RunSpec("boa+bc_tabular", hallway, episodes=2, runs=1, k=3)
    table = evaluate(spec, hallway_artifacts, diagnostics=seen.append)
    assert len(seen) == round(table.rows[0].mean_length * 2)
    assert all(d.is_consistent() and d.k == 3 for d in seen)


# command line -----------------------------------------------------------------


@pytest.fixture
def workdir(tmp_path):
    data = tmp_path / "demos.boatrj"
    assert cli.main(["record", "--env", "hallway", "--episodes", "8", "--seed", "3", "--out", str(data)]) == 0
    assert cli.main(["fit-bc", "--dataset", str(data), "--out", str(tmp_path / "bc.pol")]) == 0
    assert cli.main(["build-index", "--dataset", str(data), "--out", str(tmp_path / "demos.idx")]) == 0
    return tmp_path


def test_cli_pipeline(workdir, capsys):
    args = [
        "run", "--env", "hallway", "--agent", "boa+bc_tabular", "--episodes", "4", "--runs", "2",
        "--index", str(workdir / "demos.idx"), "--policy", str(workdir / "bc.pol"),
    ]
    assert cli.main(args + ["--out", str(workdir / "a.csv")]) == 0
    assert cli.main(args + ["--out", str(workdir / "b.csv"), "--diagnostics", str(workdir / "d.jsonl")]) == 0
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()
    records = [json.loads(l) for l in (workdir / "d.jsonl").read_text().splitlines()]
    assert records and all(sum(r["counts"]) == 5 for r in records)
    assert cli.main(["report", "--inputs", str(workdir / "a.csv")]) == 0
    assert capsys.readouterr().out.startswith("agent,env,k,n,runs,")


def test_cli_linear_and_sweeps(workdir):
    assert cli.main([
        "fit-bc", "--dataset", str(workdir / "demos.boatrj"), "--kind", "linear", "--epochs", "20",
        "--out", str(workdir / "lin.pol"),
    ]) == 0
    common = ["--env", "hallway", "--agent", "boa+bc_linear", "--episodes", "2", "--runs", "1",
              "--policy", str(workdir / "lin.pol")]
    assert cli.main(["ablate-k", *common, "--index", str(workdir / "demos.idx"), "--k-list", "1,3",
                     "--out", str(workdir / "k.csv"), "--summary", str(workdir / "ks.csv")]) == 0
    assert len(read_rows((workdir / "k.csv").read_text())) == 2
    assert cli.main(["ablate-n", *common, "--dataset", str(workdir / "demos.boatrj"), "--n-list", "1,8",
                     "--out", str(workdir / "n.csv")]) == 0
    assert [r.n for r in read_rows((workdir / "n.csv").read_text())] == [1, 8]


def test_cli_error_is_one_json_line(workdir, capsys):
    code = cli.main([
        "run", "--env", "one_room", "--agent", "bc_tabular", "--episodes", "1", "--runs", "1",
        "--policy", str(workdir / "bc.pol"),
    ])
    err = capsys.readouterr().err.strip().splitlines()
    assert code == 1 and len(err) == 1
    payload = json.loads(err[0])
    assert payload["error"] == "ConsistencyError" and payload["message"]


def test_cli_bad_file(tmp_path, capsys):
    bad = tmp_path / "junk.idx"
    bad.write_bytes(b"nope")
    code = cli.main(["run", "--env", "hallway", "--agent", "zip", "--index", str(bad)])
    assert code == 1 and json.loads(capsys.readouterr().err)["error"] == "FormatError"
