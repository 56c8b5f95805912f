"""Program generators, end-to-end runs, metrics accounting, fault specs, CLI."""

from __future__ import annotations

import csv
import io
from contextlib import redirect_stdout
from pathlib import Path

import pytest

from lambdapack.executor import WorkerConfig
from lambdapack.harness import (
    RunConfig,
    cholesky_source,
    gen_cholesky,
    gen_gemm,
    gen_tsqr,
    parse_fault_spec,
    run,
)
from lambdapack.harness.cli import main
from lambdapack.lang import enumerate_nodes, parse_program

FAST = WorkerConfig(lease_length=2.0, poll_interval=0.005, idle_timeout=4.0)

REPO = Path(__file__).resolve().parent.parent


class TestGenerators:
    @pytest.mark.parametrize(
        "fname,gen",
        [
            ("cholesky.lp", lambda: gen_cholesky(4)),
            ("tsqr.lp", lambda: gen_tsqr(4)),
            ("gemm.lp", lambda: gen_gemm(2, 2)),
        ],
    )
    def test_generated_parse_identical_to_shipped(self, fname, gen):
        shipped = parse_program((REPO / "programs" / fname).read_text())
        assert gen() == shipped

    def test_gen_cholesky_node_count(self):
        assert len(enumerate_nodes(gen_cholesky(4), {"N": 4})) == 20

    def test_gen_tsqr_node_count(self):
        assert len(enumerate_nodes(gen_tsqr(4), {"N": 4})) == 7

    def test_gen_gemm_node_count(self):
        assert len(enumerate_nodes(gen_gemm(2, 2), {"N": 2, "K": 2})) == 12

    def test_tree_generators_need_powers_of_two(self):
        with pytest.raises(ValueError):
            gen_tsqr(3)
        with pytest.raises(ValueError):
            gen_gemm(2, 3)


class TestRun:
    def test_cholesky_check(self):
        m = run(RunConfig(builtin="cholesky", params={"N": 4}, block=16,
                          workers=4, worker=FAST, seed=7, check=True))
        assert m.check_passed is True
        assert m.tasks_completed == 20

    def test_tsqr_check(self):
        m = run(RunConfig(builtin="tsqr", params={"N": 8}, tsqr_rows=512, tsqr_cols=16,
                          workers=4, worker=FAST, seed=3, check=True))
        assert m.check_passed is True
        assert m.tasks_completed == 15

    def test_gemm_check(self):
        m = run(RunConfig(builtin="gemm", params={"N": 2, "K": 2}, block=8,
                          workers=2, worker=FAST, seed=3, check=True))
        assert m.check_passed is True
        assert m.tasks_completed == 12

    def test_ragged_cholesky(self):
        m = run(RunConfig(builtin="cholesky", elements=50, block=16,
                          workers=2, worker=FAST, seed=5, check=True))
        assert m.check_passed is True  # ceil(50/16)=4 grid, last block is 2 wide

    def test_fs_backend(self, tmp_path):
        m = run(RunConfig(builtin="cholesky", params={"N": 2}, block=8,
                          backend="fs", root=str(tmp_path), workers=2,
                          worker=FAST, seed=1, check=True, run_id="fsrun"))
        assert m.check_passed is True
        assert (tmp_path / "fsrun" / "O" / "0_0.tile").exists()

    def test_same_seed_same_bytes(self):
        cfg = dict(builtin="cholesky", params={"N": 3}, block=8, workers=3,
                   worker=FAST, seed=11, check=True)
        a = run(RunConfig(**cfg))
        b = run(RunConfig(**cfg))
        assert a.output_bytes == b.output_bytes

    def test_custom_program_file(self, tmp_path):
        path = tmp_path / "sum.lp"
        path.write_text(
            "program tree_sum\nparam K = 4\nmatrix V[2] input\nmatrix T[2] output\n"
            "for i in range(0, K):\n  T[i, 0] = add(V[i, 0], V[i, 1])\n"
            "for level in range(0, log2(K)):\n"
            "  for i in range(0, K, 2 ** (level + 1)):\n"
            "    T[i, level + 1] = add(T[i, level], T[i + 2 ** level, level])\n"
            "output T[0, log2(K)]\n"
        )
        m = run(RunConfig(program_path=str(path), block=4, workers=2,
                          worker=FAST, seed=2))
        assert m.tasks_completed == 7
        assert len(m.output_bytes) == 4 * 4 * 8

    def test_exactly_one_scheduling_mode(self):
        with pytest.raises(ValueError, match="exactly one"):
            RunConfig(builtin="cholesky", workers=None, autoscale=None)

    def test_metrics_accounting(self):
        m = run(RunConfig(builtin="cholesky", params={"N": 3}, block=8,
                          workers=2, worker=FAST, seed=4, check=True))
        event_compute = sum(ev.t_end - ev.t_start for _, ev in m.events
                            if ev.phase == "compute")
        assert m.core_seconds == pytest.approx(event_compute)
        event_read = sum(ev.bytes_read for _, ev in m.events)
        event_written = sum(ev.bytes_written for _, ev in m.events)
        assert m.bytes_read == event_read == m.store_bytes_read
        assert m.bytes_written == event_written == m.store_bytes_written

    def test_metrics_csv_files(self, tmp_path):
        out = tmp_path / "metrics"
        run(RunConfig(builtin="cholesky", params={"N": 2}, block=8, workers=2,
                      worker=FAST, seed=4, metrics_dir=str(out)))
        names = {p.name for p in out.iterdir()}
        assert names == {"events.csv", "workers.csv", "timeline.csv",
                         "floprate.csv", "summary.csv"}
        with open(out / "events.csv") as f:
            rows = list(csv.DictReader(f))
        assert {r["phase"] for r in rows} >= {"read", "compute", "write", "finalize"}
        assert all(float(r["t_end"]) >= float(r["t_start"]) for r in rows)


class TestFaultSpec:
    def test_kill_percent(self):
        plan = parse_fault_spec("kill:0.8@50%")
        assert plan.kills[0].fraction == 0.8
        assert plan.kills[0].at_completion == 0.5

    def test_kill_time_and_dup_and_stall_and_cut(self):
        plan = parse_fault_spec("kill:0.5@2s,dup:all,stall:w1@0.4s,cut:0:i=0@write")
        assert plan.kills[0].at_time == 2.0
        assert plan.duplicates[0].pattern == "all"
        assert plan.stalls[0] == type(plan.stalls[0])(1, 0.4)
        assert plan.cuts[0].node == "0:i=0" and plan.cuts[0].step == "write"

    def test_bad_specs_rejected(self):
        for bad in ("kill:2@50%", "kill:0.5@oops", "boom:1", "cut:0:i=0@explode"):
            with pytest.raises(ValueError):
                parse_fault_spec(bad)


class TestCli:
    def _capture(self, argv):
        buf = io.StringIO()
        with redirect_stdout(buf):
            code = main(argv)
        return code, buf.getvalue()

    def test_run_check(self):
        code, out = self._capture(
            ["run", "--builtin", "cholesky", "--grid", "3", "--block", "8",
             "--workers", "2", "--check", "--lease", "2", "--idle-timeout", "4",
             "--poll-interval", "0.005", "--seed", "1"]
        )
        assert code == 0
        assert "check: pass" in out

    def test_validate(self, tmp_path):
        path = tmp_path / "p.lp"
        path.write_text(cholesky_source(4))
        code, out = self._capture(["validate", "--program", str(path), "--param", "N=4"])
        assert code == 0 and out.strip() == "ok"

    def test_validate_reports_violations(self, tmp_path):
        path = tmp_path / "bad.lp"
        path.write_text(
            "param N = 2\nmatrix S[3] input\nmatrix O[2] output\n"
            "for i in range(0, N):\n  O[i, i] = chol(S[i, i, i])\n"
            "for j in range(0, N):\n  O[j, j] = chol(S[0, j, j])\n"
        )
        code, out = self._capture(["validate", "--program", str(path)])
        assert code == 1
        assert "violation" in out

    def test_analyze_children(self, tmp_path):
        path = tmp_path / "p.lp"
        path.write_text(cholesky_source(4))
        code, out = self._capture(
            ["analyze", "--program", str(path), "--param", "N=4",
             "--node", "2:i=0,j=1,k=1", "--children"]
        )
        assert code == 0
        assert out.splitlines() == ["0:i=1"]

    def test_analyze_parents_sorted(self, tmp_path):
        path = tmp_path / "p.lp"
        path.write_text(cholesky_source(4))
        code, out = self._capture(
            ["analyze", "--program", str(path), "--param", "N=4",
             "--node", "2:i=0,j=2,k=1", "--parents"]
        )
        assert code == 0
        assert out.splitlines() == ["1:i=0,j=1", "1:i=0,j=2"]

    def test_enumerate_dag(self):
        code, out = self._capture(["enumerate-dag", "--builtin", "tsqr", "--leaves", "4"])
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        kinds = [r[0] for r in rows[1:]]
        assert kinds.count("node") == 7
        assert kinds.count("edge") == 6

    def test_bench_analysis(self):
        code, out = self._capture(["bench-analysis", "--grids", "4,8", "--samples", "10"])
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [r["grid"] for r in rows] == ["4", "8"]
        assert rows[0]["program_bytes"] == rows[1]["program_bytes"]

    def test_usage_error_exit_code(self):
        assert main(["run", "--builtin", "cholesky"]) == 3  # no scheduling mode

    def test_abort_exit_code(self, tmp_path, capsys):
        path = tmp_path / "p.lp"
        path.write_text(
            "param N = 1\nmatrix V[2] input\nmatrix O[2] output\n"
            "for i in range(0, N):\n  O[i, i] = chol(V[i, i])\n"
        )
        code = main(["run", "--program", str(path), "--block", "4", "--workers", "1",
                     "--lease", "2", "--idle-timeout", "4", "--poll-interval", "0.005"])
        assert code == 2
        err = capsys.readouterr().err
        assert "run aborted" in err and "kernel failure" in err

    def test_unknown_subcommand_exits_3(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 3


class TestAbort:
    def test_kernel_failure_aborts_with_snapshot(self, tmp_path):
        # a non-SPD input makes the very first chol fail
        from lambdapack.harness.runner import RunAbort

        path = tmp_path / "p.lp"
        path.write_text(
            "param N = 1\nmatrix V[2] input\nmatrix O[2] output\n"
            "for i in range(0, N):\n  O[i, i] = chol(V[i, i])\n"
        )
        with pytest.raises(RunAbort) as e:
            run(RunConfig(program_path=str(path), block=4, workers=1,
                          worker=FAST, seed=0))
        assert "kernel failure" in str(e.value)
        assert "0:i=0" in e.value.snapshot
