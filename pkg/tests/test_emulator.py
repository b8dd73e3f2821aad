import time

import numpy as np
import pytest

from minipilot.emulator import (EXTERNAL, FLOP_BURN, SLEEP, TaskPayload,
                                calibrate_burn_rate, format_slots,
                                payload_argv, run_payload, sample_duration)
from minipilot.errors import InvalidDescription

SLOTS = (("node00000", 0), ("node00000", 1))


class TestSampleDuration:
    def test_reference_distribution_recovered(self):
        # 1e4 draws from the long-payload model: mean and std must land in
        # the published bands.
        payload = TaskPayload(SLEEP, 828.0, 14.0)
        rng = np.random.default_rng(123)
        samples = [sample_duration(payload, rng) for _ in range(10_000)]
        assert 827.0 <= np.mean(samples) <= 829.0
        assert 13.0 <= np.std(samples) <= 15.0

    def test_zero_sigma_is_exact(self):
        payload = TaskPayload(SLEEP, 3.0, 0.0)
        rng = np.random.default_rng(0)
        assert sample_duration(payload, rng) == 3.0

    def test_desk_scale_mean(self):
        payload = TaskPayload(SLEEP, 3.0, 0.05)
        rng = np.random.default_rng(7)
        samples = [sample_duration(payload, rng) for _ in range(10_000)]
        assert abs(np.mean(samples) - 3.0) <= 0.01

    def test_clamped_at_zero(self):
        payload = TaskPayload(SLEEP, 0.1, 5.0)
        rng = np.random.default_rng(11)
        assert all(sample_duration(payload, rng) >= 0.0 for _ in range(2000))

    def test_seeded_determinism(self):
        payload = TaskPayload(SLEEP, 3.0, 0.5)
        a = [sample_duration(payload, np.random.default_rng(5))
             for _ in range(10)]
        b = [sample_duration(payload, np.random.default_rng(5))
             for _ in range(10)]
        assert a == b


class TestPayloadValidation:
    def test_nonpositive_duration_rejected(self):
        with pytest.raises(InvalidDescription):
            TaskPayload(SLEEP, 0.0)

    def test_negative_jitter_rejected(self):
        with pytest.raises(InvalidDescription):
            TaskPayload(SLEEP, 1.0, -0.1)

    def test_external_needs_command(self):
        with pytest.raises(InvalidDescription):
            TaskPayload(EXTERNAL, 1.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidDescription):
            TaskPayload("spin", 1.0)

    def test_scaled_compresses_duration(self):
        p = TaskPayload(SLEEP, 3.0, 0.05).scaled(0.1)
        assert p.target_duration == pytest.approx(0.3)
        assert p.jitter_sigma == pytest.approx(0.005)


class TestRunPayload:
    def test_sleep_wall_duration_bounded(self):
        payload = TaskPayload(SLEEP, 0.5, 0.0)
        t0 = time.perf_counter()
        code = run_payload(payload, SLOTS, duration=0.5)
        wall = time.perf_counter() - t0
        assert code == 0
        assert 0.5 <= wall <= 0.8

    def test_flop_burn_calibrated(self):
        rate = calibrate_burn_rate()
        payload = TaskPayload(FLOP_BURN, 1.0, 0.0)
        t0 = time.perf_counter()
        code = run_payload(payload, SLOTS, duration=1.0, burn_rate=rate)
        wall = time.perf_counter() - t0
        assert code == 0
        assert 0.8 <= wall <= 1.3

    def test_external_failure_propagates(self):
        payload = TaskPayload(EXTERNAL, 1.0, command=("false",))
        assert run_payload(payload, SLOTS, duration=1.0) == 1

    def test_slots_exported_to_child(self, tmp_path):
        out = tmp_path / "slots.txt"
        payload = TaskPayload(
            EXTERNAL, 1.0,
            command=("sh", "-c", f"echo $PILOT_SLOTS > {out}"))
        assert run_payload(payload, SLOTS, duration=1.0) == 0
        assert out.read_text().strip() == "node00000:0,1"


class TestArgv:
    def test_format_slots_groups_by_node(self):
        slots = (("n1", 3), ("n0", 1), ("n1", 0))
        assert format_slots(slots) == "n1:0,3;n0:1"

    def test_flop_argv_needs_rate(self):
        with pytest.raises(InvalidDescription):
            payload_argv(TaskPayload(FLOP_BURN, 1.0), 1.0)

    def test_sleep_argv_embeds_duration(self):
        argv = payload_argv(TaskPayload(SLEEP, 1.0), 0.25)
        assert argv[-1] == "0.250000"
