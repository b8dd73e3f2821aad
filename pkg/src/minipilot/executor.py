"""Turning scheduled units into running processes.

Real backend: build a command from the unit and its slots, fork it, collect
its exit code. Virtual backend: the same lifecycle is driven by sampled
latencies on a simulated clock. The latency model captures the two launch
layer overheads that matter: the time to prepare an execution and the time
until the runtime learns a task has finished, the latter growing with pilot
size.
"""

from __future__ import annotations

import functools
import math
import os
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .emulator import format_slots, payload_argv
from .errors import IncompatibleMethod, InvalidDescription, LostChild, SpawnFailure
from .model import Allocation, Backend, UnitDescription

FORK_LOCAL = "fork"
SHELL_WRAPPER = "shell"
VIRTUAL_LAUNCH = "virtual"

LAUNCH_METHODS = (FORK_LOCAL, SHELL_WRAPPER, VIRTUAL_LAUNCH)

_METHOD_BACKENDS = {
    FORK_LOCAL: Backend.REAL,
    SHELL_WRAPPER: Backend.REAL,
    VIRTUAL_LAUNCH: Backend.VIRTUAL,
}


def check_method(method: str, backend: Backend) -> None:
    if method not in _METHOD_BACKENDS:
        raise IncompatibleMethod(f"unknown launch method {method!r}")
    if _METHOD_BACKENDS[method] is not backend:
        raise IncompatibleMethod(
            f"launch method {method!r} not usable on {backend.value} backend")


def default_method(backend: Backend) -> str:
    return FORK_LOCAL if backend is Backend.REAL else VIRTUAL_LAUNCH


# Launch-layer timing statistics (mean, std seconds) measured at a
# 16384-core reference pilot and at 2x/4x/8x that size. Preparation time is
# treated as scale-invariant; the completion acknowledgement grows with
# pilot size and is broad and long-tailed, hence the lognormal family and
# the power-law median below.
PREPARE_REFERENCE = (37.0, 9.0)
ACK_REFERENCE = {
    16384: (29.0, 16.0),
    32768: (34.0, 28.0),
    65536: (59.0, 46.0),
    131072: (135.0, 107.0),
}
ACK_REFERENCE_CORES = 16384


def lognormal_sigma(mean: float, std: float) -> float:
    """Shape parameter of a lognormal with the given mean and std."""
    if mean <= 0:
        raise InvalidDescription("lognormal mean must be positive")
    return math.sqrt(math.log1p((std / mean) ** 2))


def fit_power_law(points: dict[int, float],
                  ref: int) -> tuple[float, float]:
    """Least-squares fit of median(c) = a * (c/ref)**b in log space."""
    x = np.log(np.array(sorted(points), dtype=float) / ref)
    y = np.log(np.array([points[c] for c in sorted(points)], dtype=float))
    n = len(x)
    sxx = float(np.sum((x - x.mean()) ** 2))
    b = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx) if sxx else 0.0
    a = float(np.exp(y.mean() - b * x.mean()))
    return a, b


@dataclass(frozen=True)
class LatencyModel:
    """Sampled launch-layer latencies.

    Preparation latency is lognormal around a fixed median. The completion
    acknowledgement is lognormal around a median that scales with pilot core
    count as ``ack_median * (cores/ack_ref_cores) ** ack_exponent``. All
    samples are nonnegative by construction.
    """

    prepare_median: float = 0.0
    prepare_sigma: float = 0.0
    ack_median: float = 0.0
    ack_sigma: float = 0.0
    ack_ref_cores: int = ACK_REFERENCE_CORES
    ack_exponent: float = 0.0

    def __post_init__(self):
        if self.prepare_median < 0 or self.ack_median < 0:
            raise InvalidDescription("latency medians must be >= 0")
        if self.ack_exponent < 0:
            raise InvalidDescription("ack exponent must be >= 0")
        if self.ack_ref_cores <= 0:
            raise InvalidDescription("ack reference core count must be > 0")

    def ack_median_at(self, pilot_cores: int) -> float:
        if self.ack_median == 0.0:
            return 0.0
        ratio = pilot_cores / self.ack_ref_cores
        return self.ack_median * ratio ** self.ack_exponent

    def sample_prepare(self, rng: np.random.Generator) -> float:
        return _sample_lognormal(self.prepare_median, self.prepare_sigma, rng)

    def sample_ack(self, rng: np.random.Generator, pilot_cores: int) -> float:
        return _sample_lognormal(self.ack_median_at(pilot_cores),
                                 self.ack_sigma, rng)

    def scaled(self, factor: float) -> "LatencyModel":
        """Compress medians by ``factor``; shapes are dimensionless."""
        return LatencyModel(self.prepare_median * factor, self.prepare_sigma,
                            self.ack_median * factor, self.ack_sigma,
                            self.ack_ref_cores, self.ack_exponent)

    @staticmethod
    def zero() -> "LatencyModel":
        return LatencyModel()

    @staticmethod
    def fitted_reference() -> "LatencyModel":
        return _fitted_reference_model()


def _sample_lognormal(median: float, sigma: float,
                      rng: np.random.Generator) -> float:
    if median == 0.0:
        return 0.0
    if sigma == 0.0:
        return median
    return float(median * math.exp(sigma * rng.standard_normal()))


@functools.cache
def _fitted_reference_model() -> LatencyModel:
    medians = {c: m for c, (m, _) in ACK_REFERENCE.items()}
    a, b = fit_power_law(medians, ACK_REFERENCE_CORES)
    sigmas = [lognormal_sigma(m, s) for m, s in ACK_REFERENCE.values()]
    return LatencyModel(
        prepare_median=PREPARE_REFERENCE[0],
        prepare_sigma=lognormal_sigma(*PREPARE_REFERENCE),
        ack_median=a,
        ack_sigma=float(np.mean(sigmas)),
        ack_ref_cores=ACK_REFERENCE_CORES,
        ack_exponent=b,
    )


@dataclass(frozen=True)
class CommandSpec:
    """Deterministic description of how to start one unit's processes."""

    argv: tuple[str, ...]
    env: tuple[tuple[str, str], ...]
    cwd: str
    stdout_path: str
    stderr_path: str
    wrapper_path: str | None = None

    def env_dict(self) -> dict[str, str]:
        return dict(self.env)


@dataclass(frozen=True)
class LaunchRecord:
    """Timestamps of one unit's passage through the executor."""

    unit_id: str
    exec_queued: float
    exec_start: float
    payload_start: float
    payload_stop: float
    spawn_return: float

    def validate(self) -> None:
        ts = (self.exec_queued, self.exec_start, self.payload_start,
              self.payload_stop, self.spawn_return)
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise InvalidDescription(
                f"{self.unit_id}: launch timestamps must be non-decreasing")


def build_launch_command(unit: UnitDescription, alloc: Allocation,
                         method: str, sandbox: Path,
                         duration: float,
                         burn_rate: float | None = None) -> CommandSpec:
    """Derive the command that runs a unit on its slots.

    The slot list is embedded in the environment (and, for the shell
    wrapper, passed as an argument) so the payload can verify where it was
    placed. Same inputs always produce the same spec.
    """
    if method == VIRTUAL_LAUNCH:
        raise IncompatibleMethod("virtual launch has no spawnable command")
    slots_str = format_slots(alloc.slots)
    env = (
        ("PILOT_UNIT_ID", unit.unit_id),
        ("PILOT_SLOTS", slots_str),
        ("PILOT_CORES", str(unit.cores)),
    )
    unit_dir = sandbox / unit.unit_id
    stdout_path = str(unit_dir / f"{unit.unit_id}.out")
    stderr_path = str(unit_dir / f"{unit.unit_id}.err")
    payload = payload_argv(unit.payload, duration, burn_rate)
    if method == FORK_LOCAL:
        return CommandSpec(argv=tuple(payload), env=env, cwd=str(unit_dir),
                           stdout_path=stdout_path, stderr_path=stderr_path)
    if method == SHELL_WRAPPER:
        wrapper = unit_dir / f"{unit.unit_id}.sh"
        unit_dir.mkdir(parents=True, exist_ok=True)
        quoted = " ".join(_sh_quote(a) for a in payload)
        wrapper.write_text(
            "#!/bin/sh\n"
            f"# unit: {unit.unit_id}\n"
            f"# slots: {slots_str}\n"
            f"exec {quoted}\n")
        return CommandSpec(argv=("/bin/sh", str(wrapper), slots_str), env=env,
                           cwd=str(unit_dir), stdout_path=stdout_path,
                           stderr_path=stderr_path, wrapper_path=str(wrapper))
    raise IncompatibleMethod(f"unknown launch method {method!r}")


def _sh_quote(arg: str) -> str:
    if arg and all(c.isalnum() or c in "._-/=:" for c in arg):
        return arg
    return "'" + arg.replace("'", "'\\''") + "'"


class LaunchHandle:
    """A spawned unit's process plus enough context to collect it."""

    def __init__(self, unit_id: str, proc: subprocess.Popen, stdout, stderr):
        self.unit_id = unit_id
        self.proc = proc
        self._stdout = stdout
        self._stderr = stderr

    def wait(self) -> int:
        try:
            code = self.proc.wait()
        except Exception as exc:  # process reaped from elsewhere
            raise LostChild(f"{self.unit_id}: {exc}") from exc
        finally:
            for fh in (self._stdout, self._stderr):
                try:
                    fh.close()
                except Exception:
                    pass
        return code

    def terminate(self) -> None:
        try:
            self.proc.terminate()
        except Exception:
            pass


def collect_completion(handle: LaunchHandle,
                       ack_latency: float = 0.0) -> tuple[int, float]:
    """Wait for a spawned unit and return (exit_code, spawn_return_time).

    The spawn-return instant trails payload stop by the acknowledgement
    latency; with zero latency it is the wait-return time itself.
    """
    code = handle.wait()
    if ack_latency > 0:
        time.sleep(ack_latency)
    return code, time.perf_counter()


def spawn(unit: UnitDescription, cmd: CommandSpec) -> LaunchHandle:
    """Start a unit's processes on the real backend."""
    unit_dir = Path(cmd.cwd)
    unit_dir.mkdir(parents=True, exist_ok=True)
    env = dict(os.environ)
    env.update(cmd.env_dict())
    stdout = open(cmd.stdout_path, "wb")
    stderr = open(cmd.stderr_path, "wb")
    try:
        proc = subprocess.Popen(cmd.argv, env=env, cwd=cmd.cwd,
                                stdout=stdout, stderr=stderr)
    except OSError as exc:
        stdout.close()
        stderr.close()
        raise SpawnFailure(f"{unit.unit_id}: {exc}") from exc
    return LaunchHandle(unit.unit_id, proc, stdout, stderr)
