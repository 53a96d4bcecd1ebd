import csv
import json
import time
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from statetab.harness import bench, cli, config, verify
from statetab.harness.config import ConfigError, ExperimentConfig, ScheduleEvent
from statetab.harness.run import OUTPUT_ENV, run
from statetab.sweeper import Sweeper
from statetab.tabular_model import TransitionRecord as T

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


# ---------------------------------------------------------------- config

def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.ini")):
        cfg = config.load(path)
        assert config.loads(cfg.to_text()) == cfg


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["tmaze", "plusmaze", "rimmaze"]), st.integers(1, 10_000), st.integers(1, 999),
       st.integers(0, 2 ** 31), st.floats(0.5, 0.999), st.sampled_from(["grid", "lsh"]),
       st.lists(st.integers(0, 1000), max_size=3), st.booleans())
def test_config_round_trip(preset, total, epoch, seed, gamma, kind, steps, with_maze):
    cfg = ExperimentConfig(name="rt", preset=preset, total_steps=max(total, 1000), epoch_every=epoch, seed=seed)
    cfg.sweeper = {"gamma": gamma, "mode": "sync"}
    cfg.tabulator = {"kind": "lsh", "d": 16} if kind == "lsh" else {"kind": "grid", "cell_sizes": (1.0, 0.5),
                                                                     "bits": (8, 8)}
    if with_maze:
        cfg.maze = {"max_steps": 77, "step_penalty": -0.02, "barrier_up": False}
    cfg.agent = {"warmup_steps": 5, "eps_end": 0.05, "train_start": None}
    kinds = ["reverse_rewards"] if preset == "plusmaze" else ["lift_barrier"]
    cfg.schedule = sorted((ScheduleEvent(s, kinds[0], "", f"ev{i}") for i, s in enumerate(steps)),
                          key=lambda e: e.step)
    once = config.loads(config.dumps(cfg))
    assert once == cfg
    assert config.loads(once.to_text()) == once


def test_same_step_events_keep_file_order():
    cfg = config.loads("[experiment]\npreset = tmaze\n[schedule]\nb = 10 lift_barrier\na = 10 forced_run shortcut\n")
    assert [e.kind for e in cfg.schedule] == ["lift_barrier", "forced_run"]


@pytest.mark.parametrize("text,line,where", [
    ("[experiment]\ntotal_steps = lots\n", 2, "[experiment.total_steps]"),
    ("[experiment]\nname = x\n\n[agent]\nwarmup = 3\n", 5, "[agent.warmup]"),
    ("[experiment]\npreset = mazeland\n", 2, "[experiment.preset]"),
    ("[experiment]\npreset = tmaze\n[schedule]\nx = 5 teleport\n", 4, "[schedule.x]"),
    ("[experiment]\npreset = tmaze\n[schedule]\nx = 5 enable_teleporter dead_end\n", 4, "[schedule.x]"),
    ("[experiment]\ntotal_steps = 10\n[schedule]\nx = 50 lift_barrier\n", 4, "[schedule.x]"),
    ("[tabulator]\nkind = grid\nd = 4\n", 3, "[tabulator.d]"),
    ("[bogus]\nx = 1\n", 1, "[bogus]"),
])
def test_config_errors_name_line_and_field(text, line, where):
    with pytest.raises(ConfigError) as err:
        config.loads(text)
    assert err.value.line == line
    assert str(err.value).startswith(f"line {line}: {where}")


# ---------------------------------------------------------------- run

def small_tmaze(**kw):
    cfg = config.load(CONFIGS / "tmaze_shortcut.ini")
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        return header, list(csv.DictReader(fh))


def test_tmaze_run_rows_and_schema(tmp_path):
    cfg = small_tmaze()
    assert cfg.seed == 7
    summary = run(cfg, tmp_path / "a")
    header, rows = read_csv(tmp_path / "a" / "epochs.csv")
    assert header == "# statetab-epochs v1"
    assert len(rows) == cfg.total_steps // cfg.epoch_every
    assert [int(r["step"]) for r in rows] == list(range(500, 4001, 500))
    saved = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert saved["total_steps"] == 4000 and saved["scaled_total_steps"] == 80_000
    assert [e["kind"] for e in saved["events"]] == ["lift_barrier", "forced_run"]
    assert summary["final_mean_reward"] == saved["final_mean_reward"]


def test_sync_runs_are_byte_identical(tmp_path):
    cfg = small_tmaze(total_steps=1500)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    for name in ("epochs.csv", "table.txt", "values.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    run(small_tmaze(total_steps=1500, seed=8), tmp_path / "c")
    assert (tmp_path / "a" / "epochs.csv").read_bytes() != (tmp_path / "c" / "epochs.csv").read_bytes()


def test_output_env_override(tmp_path, monkeypatch, capsys):
    ini = tmp_path / "tiny.ini"
    ini.write_text("[experiment]\nname = tiny\npreset = plusmaze\ntotal_steps = 200\nepoch_every = 100\n"
                   "test_steps = 20\noutput_dir = ignored\n")
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env_out"))
    assert cli.main(["run", str(ini)]) == 0
    assert (tmp_path / "env_out" / "tiny" / "epochs.csv").exists()
    assert not (tmp_path / "ignored").exists()
    assert json.loads(capsys.readouterr().out)["name"] == "tiny"
    assert cli.main(["run", str(ini), "--output-dir", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "tiny" / "summary.json").exists()


def test_threaded_run_completes(tmp_path):
    cfg = small_tmaze(total_steps=600, epoch_every=300)
    cfg.sweeper = {"mode": "threaded"}
    summary = run(cfg, tmp_path)
    assert summary["mode"] == "threaded" and summary["total_steps"] == 600


def test_learned_run_writes_training_csv(tmp_path):
    cfg = config.loads("[experiment]\nname = l\npreset = tmaze\ntotal_steps = 300\nepoch_every = 150\n"
                       "test_steps = 20\n[tabulator]\nkind = learned\nd = 6\nhidden = 8\nbatch_size = 8\n"
                       "[agent]\nwarmup_steps = 100\ntrain_every = 4\n[sweeper]\nsweeps_per_step = 10\n")
    run(cfg, tmp_path)
    header, rows = read_csv(tmp_path / "training.csv")
    assert header == "# statetab-training v1"
    assert [int(r["step"]) for r in rows] == list(range(100, 301, 4))
    assert list(rows[0]) == ["train_step", "step", "reconstruction", "transition", "entropy", "free_energy",
                             "reassigned"]


def test_hmaze_summary_records_policy_switch(tmp_path):
    summary = run(config.load(CONFIGS / "hmaze_teleporter.ini"), tmp_path)
    forced = [e for e in summary["events"] if e["kind"] == "forced_run"]
    assert forced and forced[0]["policy_switch_step"] is not None


def test_cli_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nseed = x\n")
    assert cli.main(["run", str(bad)]) == 2
    assert "line 2: [experiment.seed]" in capsys.readouterr().err


# ---------------------------------------------------------------- bench, verify, dump

def test_bench_trivial_input_is_fast():
    t0 = time.perf_counter()
    res = bench.bench_sweeps(2)
    assert time.perf_counter() - t0 < 0.05
    assert res.seconds < 1e-3
    assert res.n_states == 2


@pytest.mark.parametrize("top", bench.TOPOLOGIES)
def test_bench_topologies(top):
    res = bench.bench_sweeps(500, top)
    assert res.n_transitions == 500 and res.backups > 0 and res.pops > 0


def test_cli_bench_and_verify(capsys):
    assert cli.main(["bench-sweeps", "--transitions", "300", "--topology", "all"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 3 and all("backups/s=" in line for line in out)
    assert cli.main(["verify", "invariants", "--quick"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1] == "2/2 checks passed" and all(line.startswith("PASS") for line in out[:-1])


def test_gradcheck_reports_every_group():
    results = verify.gradcheck_suite(2)
    assert {r.name for r in results} == {f"gradient check [{g}]" for g in
                                         ("decoder", "encoder", "initial", "transition")}
    assert all(r.passed for r in results)


def test_off_by_one_delete_fails_oracle_suite(monkeypatch, capsys):
    def broken_delete(self, t):
        s, a, r, s2 = t
        n = self.table.delete(t)
        qs = self.tables.Q[s]
        if n > 0:
            qs[a] = (qs[a] * n - (r + self.config.gamma * self.tables.U.get(s2, 0.0))) / n   # should be n + 1
        else:
            del qs[a]
        v = max(qs.values()) if qs else 0.0
        if not qs:
            del self.tables.Q[s]
        self.tables.V[s] = v
        self._requeue(s, v)

    assert all(r.passed for r in verify.oracle_suite(quick=True))
    monkeypatch.setattr(Sweeper, "apply_delete", broken_delete)
    results = verify.oracle_suite(quick=True)
    assert not all(r.passed for r in results)
    assert cli.main(["verify", "oracle", "--quick"]) == 1
    assert "FAIL add/delete cancellation" in capsys.readouterr().out


def test_dump_table(tmp_path, capsys):
    sw = Sweeper()
    sw.process([T(1, 0, 1.0, 2), T(1, 0, 0.0, 3), T(2, 1, 0.5, 1)])
    sw.sweep()
    with open(tmp_path / "table.txt", "w") as fh:
        sw.table.dump(fh)
    with open(tmp_path / "values.txt", "w") as fh:
        sw.dump(fh)
    assert cli.main(["dump-table", str(tmp_path / "table.txt"), "--summary"]) == 0
    out = capsys.readouterr().out
    assert out.strip() == "# states=3 pairs=2 distinct_transitions=3 total_count=3 max_fan_in=1"
    assert cli.main(["dump-table", str(tmp_path / "table.txt")]) == 0
    assert len(capsys.readouterr().out.splitlines()) > 1
    assert cli.main(["dump-table", str(tmp_path / "values.txt")]) == 0
    assert capsys.readouterr().out == (tmp_path / "values.txt").read_text()
