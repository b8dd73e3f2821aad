"""Synthetic task payloads with controlled duration and jitter.

Payloads stand in for real application executables so that runtime overheads
can be measured without application noise: a sleep, a calibrated
floating-point burn, or an arbitrary external command.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import sys
import time
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDescription

SLEEP = "sleep"
FLOP_BURN = "flop"
EXTERNAL = "exec"

PAYLOAD_KINDS = (SLEEP, FLOP_BURN, EXTERNAL)

# One burn chunk is a fixed amount of pure-python floating point work; the
# calibration loop expresses host speed in chunks per second.
_CHUNK_ITERS = 2000

# Child-process body for flop payloads. Passed to `python -c` so the child
# starts without importing this package; must stay in lockstep with
# burn_chunks below, which is what the calibration times.
_BURN_SOURCE = """\
import sys
def burn(n):
    x = 1.0
    for _ in range(n):
        for _ in range(2000):
            x = x * 1.0000001 + 0.1
            x = x * 0.9999999 - 0.1
burn(int(sys.argv[1]))
"""


@dataclass(frozen=True)
class TaskPayload:
    """What a unit executes: kind plus duration model.

    target_duration and jitter_sigma drive a clamped normal duration sample;
    flop_count is only meaningful for flop payloads, command only for
    external ones.
    """

    kind: str = SLEEP
    target_duration: float = 1.0
    jitter_sigma: float = 0.0
    flop_count: int = 0
    command: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in PAYLOAD_KINDS:
            raise InvalidDescription(f"unknown payload kind {self.kind!r}")
        if self.target_duration <= 0:
            raise InvalidDescription("payload target_duration must be > 0")
        if self.jitter_sigma < 0:
            raise InvalidDescription("payload jitter_sigma must be >= 0")
        if self.kind == EXTERNAL and not self.command:
            raise InvalidDescription("external payload needs a command")

    def scaled(self, factor: float) -> "TaskPayload":
        """Return a copy with duration and jitter compressed by ``factor``."""
        return TaskPayload(self.kind, self.target_duration * factor,
                           self.jitter_sigma * factor, self.flop_count,
                           self.command)


def sample_duration(payload: TaskPayload, rng: np.random.Generator) -> float:
    """Draw one payload duration: Normal(target, sigma) clamped at zero."""
    if payload.jitter_sigma == 0.0:
        return payload.target_duration
    d = rng.normal(payload.target_duration, payload.jitter_sigma)
    return max(0.0, float(d))


def burn_chunks(n: int) -> float:
    """Run n chunks of floating-point work; returns a value to defeat DCE."""
    x = 1.0
    for _ in range(n):
        for _ in range(_CHUNK_ITERS):
            x = x * 1.0000001 + 0.1
            x = x * 0.9999999 - 0.1
    return x


def calibrate_burn_rate(min_seconds: float = 0.1) -> float:
    """Measure host speed in burn chunks per second.

    Run once per session before any flop payload is launched; the measured
    rate sizes each payload's open loop.
    """
    n = 8
    while True:
        t0 = time.perf_counter()
        burn_chunks(n)
        dt = time.perf_counter() - t0
        if dt >= min_seconds:
            return n / dt
        n *= 2


def payload_argv(payload: TaskPayload, duration: float,
                 burn_rate: float | None = None) -> tuple[str, ...]:
    """Concrete argv for running a payload as a child process."""
    if payload.kind == SLEEP:
        exe = shutil.which("sleep")
        if exe:
            return (exe, f"{duration:.6f}")
        return (sys.executable, "-c",
                f"import time; time.sleep({duration:.6f})")
    if payload.kind == FLOP_BURN:
        if not burn_rate:
            raise InvalidDescription("flop payload requires a calibrated rate")
        chunks = max(1, int(round(duration * burn_rate)))
        return (sys.executable, "-c", _BURN_SOURCE, str(chunks))
    return tuple(payload.command)


def run_payload(payload: TaskPayload, slots,
                rng: np.random.Generator | None = None,
                duration: float | None = None,
                burn_rate: float | None = None) -> int:
    """Run one payload to completion in a child process; returns its exit code.

    Real backend only. The slot list is exported so the payload can inspect
    its placement.
    """
    if duration is None:
        duration = sample_duration(payload, rng or np.random.default_rng())
    if payload.kind == FLOP_BURN and burn_rate is None:
        burn_rate = calibrate_burn_rate()
    argv = payload_argv(payload, duration, burn_rate)
    env = dict(os.environ)
    env["PILOT_SLOTS"] = format_slots(slots)
    proc = subprocess.run(argv, env=env, stdout=subprocess.DEVNULL,
                          stderr=subprocess.DEVNULL)
    return proc.returncode


def format_slots(slots) -> str:
    """Render (node_id, core_index) pairs as ``node:c1,c2;node:c3``."""
    by_node: dict[str, list[int]] = {}
    for node_id, core in slots:
        by_node.setdefault(node_id, []).append(core)
    parts = []
    for node_id, cores in by_node.items():
        parts.append(node_id + ":" + ",".join(str(c) for c in sorted(cores)))
    return ";".join(parts)


