import numpy as np
import pytest

from minipilot.emulator import TaskPayload
from minipilot.errors import IncompatibleMethod, InvalidDescription
from minipilot.executor import (ACK_REFERENCE, ACK_REFERENCE_CORES,
                                FORK_LOCAL, SHELL_WRAPPER, VIRTUAL_LAUNCH,
                                LatencyModel, LaunchRecord,
                                build_launch_command, check_method,
                                collect_completion, default_method,
                                fit_power_law, lognormal_sigma, spawn)
from minipilot.model import Allocation, Backend, UnitDescription

UNIT = UnitDescription("unit.000001", 4, TaskPayload("sleep", 1.0, 0.0))
ALLOC = Allocation("unit.000001", (("node00000", 0), ("node00000", 1),
                                   ("node00000", 2), ("node00000", 3)))


class TestLatencyFit:
    def test_power_law_matches_polyfit_oracle(self):
        medians = {c: m for c, (m, _) in ACK_REFERENCE.items()}
        a, b = fit_power_law(medians, ACK_REFERENCE_CORES)
        xs = np.log(np.array(sorted(medians), dtype=float)
                    / ACK_REFERENCE_CORES)
        ys = np.log([medians[c] for c in sorted(medians)])
        b_ref, loga_ref = np.polyfit(xs, ys, 1)
        assert np.isclose(a, np.exp(loga_ref))
        assert np.isclose(b, b_ref)

    def test_fitted_model_reproduces_reference_medians(self):
        model = LatencyModel.fitted_reference()
        for cores, (median, _) in ACK_REFERENCE.items():
            predicted = model.ack_median_at(cores)
            assert abs(predicted - median) / median < 0.25

    def test_fitted_ack_at_8x_reference(self):
        model = LatencyModel.fitted_reference()
        predicted = model.ack_median_at(8 * ACK_REFERENCE_CORES)
        assert abs(predicted - 135.0) / 135.0 < 0.25

    def test_prepare_distribution_shape(self):
        model = LatencyModel.fitted_reference()
        assert model.prepare_median == 37.0
        rng = np.random.default_rng(3)
        samples = [model.sample_prepare(rng) for _ in range(50_000)]
        assert abs(np.median(samples) - 37.0) < 0.5
        assert abs(np.std(samples) - 9.0) < 1.0

    def test_lognormal_sigma_roundtrip(self):
        sigma = lognormal_sigma(29.0, 16.0)
        rng = np.random.default_rng(5)
        median = 29.0
        samples = median * np.exp(sigma * rng.standard_normal(200_000))
        assert abs(np.std(samples) / np.mean(samples) - 16.0 / 29.0) < 0.02


class TestLatencyModel:
    def test_zero_model_samples_zero(self):
        model = LatencyModel.zero()
        rng = np.random.default_rng(0)
        assert model.sample_prepare(rng) == 0.0
        assert model.sample_ack(rng, 10_000) == 0.0

    def test_samples_nonnegative(self):
        model = LatencyModel(prepare_median=1.0, prepare_sigma=2.0,
                             ack_median=1.0, ack_sigma=2.0)
        rng = np.random.default_rng(1)
        for _ in range(2000):
            assert model.sample_prepare(rng) >= 0.0
            assert model.sample_ack(rng, 1024) >= 0.0

    def test_ack_median_scales_with_cores(self):
        model = LatencyModel(ack_median=10.0, ack_ref_cores=1000,
                             ack_exponent=1.0)
        assert model.ack_median_at(2000) == pytest.approx(20.0)
        assert model.ack_median_at(500) == pytest.approx(5.0)

    def test_scaled_compresses_medians_not_shapes(self):
        model = LatencyModel(prepare_median=10.0, prepare_sigma=0.3,
                             ack_median=4.0, ack_sigma=0.5, ack_exponent=0.7)
        s = model.scaled(0.1)
        assert s.prepare_median == pytest.approx(1.0)
        assert s.ack_median == pytest.approx(0.4)
        assert s.prepare_sigma == 0.3 and s.ack_exponent == 0.7

    def test_negative_exponent_rejected(self):
        with pytest.raises(InvalidDescription):
            LatencyModel(ack_exponent=-0.1)


class TestMethods:
    def test_compatibility_matrix(self):
        check_method(FORK_LOCAL, Backend.REAL)
        check_method(SHELL_WRAPPER, Backend.REAL)
        check_method(VIRTUAL_LAUNCH, Backend.VIRTUAL)
        with pytest.raises(IncompatibleMethod):
            check_method(FORK_LOCAL, Backend.VIRTUAL)
        with pytest.raises(IncompatibleMethod):
            check_method(VIRTUAL_LAUNCH, Backend.REAL)
        with pytest.raises(IncompatibleMethod):
            check_method("mpirun", Backend.REAL)

    def test_defaults_per_backend(self):
        assert default_method(Backend.REAL) == FORK_LOCAL
        assert default_method(Backend.VIRTUAL) == VIRTUAL_LAUNCH


class TestBuildCommand:
    def test_fork_embeds_slots_in_env(self, tmp_path):
        cmd = build_launch_command(UNIT, ALLOC, FORK_LOCAL, tmp_path, 1.0)
        env = cmd.env_dict()
        assert env["PILOT_SLOTS"] == "node00000:0,1,2,3"
        assert env["PILOT_UNIT_ID"] == "unit.000001"
        assert env["PILOT_CORES"] == "4"

    def test_deterministic_command_spec(self, tmp_path):
        a = build_launch_command(UNIT, ALLOC, FORK_LOCAL, tmp_path, 1.0)
        b = build_launch_command(UNIT, ALLOC, FORK_LOCAL, tmp_path, 1.0)
        assert a == b

    def test_shell_wrapper_written_and_inspectable(self, tmp_path):
        cmd = build_launch_command(UNIT, ALLOC, SHELL_WRAPPER, tmp_path, 0.5)
        assert cmd.wrapper_path is not None
        text = open(cmd.wrapper_path).read()
        assert "# slots: node00000:0,1,2,3" in text
        assert cmd.argv[0] == "/bin/sh"
        assert cmd.argv[2] == "node00000:0,1,2,3"

    def test_virtual_has_no_command(self, tmp_path):
        with pytest.raises(IncompatibleMethod):
            build_launch_command(UNIT, ALLOC, VIRTUAL_LAUNCH, tmp_path, 1.0)


class TestSpawn:
    def test_exit_zero_collected(self, tmp_path):
        unit = UnitDescription("ok.0", 1, TaskPayload("exec", 1.0,
                                                      command=("true",)))
        cmd = build_launch_command(unit, Allocation("ok.0", (("n", 0),)),
                                   FORK_LOCAL, tmp_path, 1.0)
        handle = spawn(unit, cmd)
        assert handle.wait() == 0

    def test_exit_code_recorded(self, tmp_path):
        unit = UnitDescription("bad.0", 1,
                               TaskPayload("exec", 1.0,
                                           command=("sh", "-c", "exit 3")))
        cmd = build_launch_command(unit, Allocation("bad.0", (("n", 0),)),
                                   FORK_LOCAL, tmp_path, 1.0)
        handle = spawn(unit, cmd)
        assert handle.wait() == 3

    def test_collect_without_ack_returns_promptly(self, tmp_path):
        import time as _time
        unit = UnitDescription("c.0", 1, TaskPayload("sleep", 0.2, 0.0))
        cmd = build_launch_command(unit, Allocation("c.0", (("n", 0),)),
                                   FORK_LOCAL, tmp_path, 0.2)
        handle = spawn(unit, cmd)
        code, returned_at = collect_completion(handle, ack_latency=0.0)
        assert code == 0
        # zero ack: the spawn-return instant is the wait-return instant
        assert _time.perf_counter() - returned_at < 0.05

    def test_collect_with_ack_delays_return(self, tmp_path):
        import time as _time
        unit = UnitDescription("c.1", 1, TaskPayload("sleep", 0.05, 0.0))
        cmd = build_launch_command(unit, Allocation("c.1", (("n", 0),)),
                                   FORK_LOCAL, tmp_path, 0.05)
        t0 = _time.perf_counter()
        code, returned_at = collect_completion(spawn(unit, cmd),
                                               ack_latency=0.3)
        assert code == 0
        assert returned_at - t0 >= 0.35

    def test_stdout_captured_per_unit(self, tmp_path):
        unit = UnitDescription("echo.0", 1,
                               TaskPayload("exec", 1.0,
                                           command=("echo", "hello")))
        cmd = build_launch_command(unit, Allocation("echo.0", (("n", 0),)),
                                   SHELL_WRAPPER, tmp_path, 1.0)
        handle = spawn(unit, cmd)
        assert handle.wait() == 0
        assert open(cmd.stdout_path).read().strip() == "hello"


class TestLaunchRecord:
    def test_ordered_record_accepted(self):
        LaunchRecord("u", 0.0, 0.1, 0.2, 1.2, 1.3).validate()

    def test_decreasing_timestamps_rejected(self):
        with pytest.raises(InvalidDescription):
            LaunchRecord("u", 0.0, 0.1, 0.05, 1.2, 1.3).validate()
