import pytest

from minipilot.errors import InconsistentTrace, MissingSyncPoint
from minipilot.profiler import (HEADER, Profiler, check_unit_order,
                                read_profile, synchronize)


def _write_profile(path, comp, rows, syncs):
    """Hand-craft a profile file: rows are (t, event, unit), syncs are
    (local, ref)."""
    lines = ["#schema=1", HEADER]
    lines.append(f"{syncs[0][0]:.7f},sync_ref,{comp},0,,,{syncs[0][1]:.7f}")
    for t, event, unit in rows:
        lines.append(f"{t:.7f},{event},{comp},0,{unit},,")
    lines.append(f"{syncs[1][0]:.7f},sync_ref,{comp},0,,,{syncs[1][1]:.7f}")
    path.write_text("\n".join(lines) + "\n")
    return path


class TestRecord:
    def test_row_count_conserved(self, tmp_path):
        # every record call lands on disk exactly once after close
        prof = Profiler(tmp_path / "a.prof", "comp", flush_every=1000)
        n = 100_000
        for i in range(n):
            prof.record("payload_start", float(i), unit=f"u{i}")
        prof.close()
        rows = read_profile(tmp_path / "a.prof")
        assert len(rows) == n
        assert prof.rows_recorded == n

    def test_disabled_profiler_is_noop(self, tmp_path):
        prof = Profiler(tmp_path / "b.prof", "comp", enabled=False)
        for i in range(100):
            prof.record("payload_start", float(i))
        prof.sync_point()
        prof.close()
        assert not (tmp_path / "b.prof").exists()
        assert prof.rows_recorded == 0

    def test_flush_threshold_respected(self, tmp_path):
        prof = Profiler(tmp_path / "c.prof", "comp", flush_every=10)
        for i in range(25):
            prof.record("db_pull", float(i))
        on_disk = len(read_profile(tmp_path / "c.prof"))
        assert on_disk >= 20  # two flushes happened before close
        prof.close()
        assert len(read_profile(tmp_path / "c.prof")) == 25

    def test_explicit_and_clock_timestamps(self, tmp_path):
        ticks = iter([1.5, 2.5])
        prof = Profiler(tmp_path / "d.prof", "comp",
                        clock=lambda: next(ticks))
        prof.record("db_pull", unit="u0")
        prof.record("db_pull", 9.0, unit="u1")
        prof.close()
        rows = read_profile(tmp_path / "d.prof")
        assert rows[0].time == 1.5
        assert rows[1].time == 9.0


class TestSynchronize:
    def test_offsets_restore_causality(self, tmp_path):
        # component clocks skewed +5 and -3; a send at ref t=10 must precede
        # its receive at ref t=11 after the merge
        a = _write_profile(tmp_path / "a.prof", "sender",
                           [(15.0, "exec_queued", "u0")],
                           syncs=[(5.0, 0.0), (105.0, 100.0)])
        b = _write_profile(tmp_path / "b.prof", "receiver",
                           [(8.0, "exec_start", "u0")],
                           syncs=[(-3.0, 0.0), (97.0, 100.0)])
        out = synchronize([a, b], tmp_path / "unified.prof")
        rows = read_profile(out)
        times = {r.event: r.time for r in rows}
        assert times["exec_queued"] == pytest.approx(10.0)
        assert times["exec_start"] == pytest.approx(11.0)
        assert times["exec_queued"] < times["exec_start"]

    def test_identical_clocks_identity(self, tmp_path):
        a = _write_profile(tmp_path / "a.prof", "c",
                           [(1.0, "db_pull", "u0"),
                            (2.0, "sched_done", "u0")],
                           syncs=[(0.0, 0.0), (10.0, 10.0)])
        out = synchronize([a], tmp_path / "unified.prof")
        rows = read_profile(out)
        assert [r.time for r in rows] == [1.0, 2.0]

    def test_corrupted_order_rejected(self, tmp_path):
        a = _write_profile(tmp_path / "a.prof", "c",
                           [(5.0, "payload_stop", "u0"),
                            (6.0, "payload_start", "u0")],
                           syncs=[(0.0, 0.0), (10.0, 10.0)])
        with pytest.raises(InconsistentTrace):
            synchronize([a], tmp_path / "unified.prof")

    def test_missing_sync_rejected(self, tmp_path):
        lines = ["#schema=1", HEADER, "1.0000000,db_pull,c,0,u0,,"]
        p = tmp_path / "a.prof"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(MissingSyncPoint):
            synchronize([p], tmp_path / "unified.prof")

    def test_meta_comments_written(self, tmp_path):
        a = _write_profile(tmp_path / "a.prof", "c", [(1.0, "db_pull", "u0")],
                           syncs=[(0.0, 0.0), (2.0, 2.0)])
        out = synchronize([a], tmp_path / "unified.prof",
                          meta={"pilot_cores": "64"})
        assert "#pilot_cores=64" in out.read_text()


class TestOrderCheck:
    def test_clean_chain_passes(self):
        per_unit = {"u0": {"db_pull": 0.0, "sched_done": 1.0,
                           "payload_start": 2.0, "payload_stop": 3.0}}
        assert check_unit_order(per_unit) == []

    def test_violation_reported_with_unit(self):
        per_unit = {"u0": {"db_pull": 5.0, "sched_done": 1.0}}
        violations = check_unit_order(per_unit)
        assert len(violations) == 1 and "u0" in violations[0]

    def test_equal_timestamps_allowed(self):
        per_unit = {"u0": {"exec_queued": 1.0, "exec_start": 1.0}}
        assert check_unit_order(per_unit) == []
