"""Configuration files: sessions, resources, and experiment matrices.

Plain INI-style key-value text with one block per concern. Unknown keys
and malformed values are rejected with the offending field named, and a
validated configuration comes back with every default resolved so it can
be echoed. Desk-scale defaults: 3s +/- 0.05s payloads, 4 cores per task,
16 cores per node.
"""

from __future__ import annotations

import configparser
import shlex
from dataclasses import dataclass, replace
from pathlib import Path

from .emulator import EXTERNAL, FLOP_BURN, SLEEP, TaskPayload
from .errors import SchemaError, UnknownKey
from .executor import LAUNCH_METHODS, LatencyModel
from .matrix import ExperimentMatrix
from .model import Backend, PilotDescription, UnitDescription
from .runtime import Session, load_workload
from .scheduler import SCHEDULER_KINDS, fitted_service_costs

_PAYLOAD_NAMES = {"sleep": SLEEP, "flop": FLOP_BURN, "exec": EXTERNAL}

_SECTION_KEYS = {
    "session": {"name", "seed", "backend", "profile", "out_dir", "executors",
                "pull_batch", "launch_method", "time_scale", "scheduler",
                "sched_base_cost", "sched_visit_cost", "sched_cost_preset"},
    "pilot": {"resource", "nodes", "cores_per_node", "walltime", "file"},
    "workload": {"count", "cores", "payload", "duration", "jitter", "flops",
                 "command", "file"},
    "latency": {"preset", "prepare_median", "prepare_sigma", "ack_median",
                "ack_sigma", "ack_ref_cores", "ack_exponent"},
    "matrix": {"mode", "task_counts", "cores_per_task", "pilot_cores",
               "repetitions", "scale_factor"},
}

_RESOURCE_KEYS = {"name", "nodes", "cores_per_node", "walltime", "backend"}


@dataclass
class ResolvedConfig:
    """A validated configuration with all defaults filled in."""

    path: Path
    session: Session | None = None
    matrix: ExperimentMatrix | None = None

    @property
    def kind(self) -> str:
        return "matrix" if self.matrix is not None else "session"

    def describe(self) -> str:
        obj = self.matrix if self.matrix is not None else self.session
        lines = [f"# resolved from {self.path}"]
        for key, value in vars(obj).items():
            if key == "units":
                lines.append(f"units = <{len(value)} generated>")
            else:
                lines.append(f"{key} = {value}")
        return "\n".join(lines)


def validate_config(path: str | Path,
                    overrides: dict | None = None) -> ResolvedConfig:
    """Parse and validate a config file; raises SchemaError/UnknownKey."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"config file {path} does not exist")
    cp = _read_ini(path)
    for section in cp.sections():
        if section not in _SECTION_KEYS:
            raise UnknownKey(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in _SECTION_KEYS[section]:
                raise UnknownKey(f"{section}.{key}")
    overrides = overrides or {}

    name = _get_str(cp, "session", "name", path.stem)
    seed = overrides.get("seed")
    if seed is None:
        seed = _get_int(cp, "session", "seed", 0, minimum=0)
    backend = _parse_backend(
        overrides.get("backend")
        or _get_str(cp, "session", "backend", "virtual"))
    profile = overrides.get("profile")
    if profile is None:
        profile = _get_bool(cp, "session", "profile", True)
    out_dir = Path(overrides.get("out_dir")
                   or _get_str(cp, "session", "out_dir", "sessions"))
    executors = _get_int(cp, "session", "executors", 4, minimum=1)
    pull_batch = _get_int(cp, "session", "pull_batch", 0, minimum=0)
    time_scale = _get_float(cp, "session", "time_scale", 1.0, positive=True)
    scheduler = _get_str(cp, "session", "scheduler", "continuous")
    if scheduler not in SCHEDULER_KINDS:
        raise UnknownKey(f"session.scheduler: unknown scheduler {scheduler!r}")
    launch_method = _get_str(cp, "session", "launch_method", "") or None
    if launch_method is not None and launch_method not in LAUNCH_METHODS:
        raise UnknownKey(
            f"session.launch_method: unknown method {launch_method!r}")
    base_cost, visit_cost = _parse_sched_costs(cp, time_scale)
    latency = _parse_latency(cp).scaled(time_scale)
    pilot = _parse_pilot(cp, backend, time_scale)
    payload = _parse_payload(cp).scaled(time_scale)

    if cp.has_section("matrix"):
        matrix = _parse_matrix(cp, name=name, seed=seed, backend=backend,
                               profile=profile, out_dir=out_dir,
                               executors=executors, payload=payload,
                               scheduler=scheduler, latency=latency,
                               base_cost=base_cost, visit_cost=visit_cost,
                               pilot=pilot, time_scale=time_scale)
        return ResolvedConfig(path=path, matrix=matrix)

    units = _build_units(cp, payload)
    session = Session(session_id=f"{name}-s{seed}", pilot=pilot, units=units,
                      scheduler_kind=scheduler, sched_base_cost=base_cost,
                      sched_visit_cost=visit_cost, latency=latency,
                      n_executors=executors, pull_batch=pull_batch,
                      launch_method=launch_method, profile=profile,
                      out_dir=out_dir, seed=seed)
    session.validate()
    return ResolvedConfig(path=path, session=session)


def load_resource_config(path: str | Path) -> PilotDescription:
    """Parse a stand-alone resource description file."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"resource file {path} does not exist")
    cp = _read_ini(path)
    if not cp.has_section("resource"):
        raise SchemaError(f"{path}: missing [resource] section")
    for section in cp.sections():
        if section != "resource":
            raise UnknownKey(f"unknown section [{section}]")
    for key in cp["resource"]:
        if key not in _RESOURCE_KEYS:
            raise UnknownKey(f"resource.{key}")
    return PilotDescription(
        resource_name=_get_str(cp, "resource", "name", path.stem),
        node_count=_get_int(cp, "resource", "nodes", 2, minimum=1),
        cores_per_node=_get_int(cp, "resource", "cores_per_node", 16,
                                minimum=1),
        walltime=_get_float(cp, "resource", "walltime", 86400.0,
                            positive=True),
        backend=_parse_backend(_get_str(cp, "resource", "backend",
                                        "virtual")))


# -- section parsers ---------------------------------------------------------

def _parse_pilot(cp, backend: Backend, time_scale: float) -> PilotDescription:
    res_file = _get_str(cp, "pilot", "file", "")
    if res_file:
        base = load_resource_config(res_file)
        return replace(base, backend=backend,
                       walltime=base.walltime * time_scale)
    return PilotDescription(
        resource_name=_get_str(cp, "pilot", "resource", "local"),
        node_count=_get_int(cp, "pilot", "nodes", 2, minimum=1),
        cores_per_node=_get_int(cp, "pilot", "cores_per_node", 16, minimum=1),
        walltime=_get_float(cp, "pilot", "walltime", 86400.0,
                            positive=True) * time_scale,
        backend=backend)


def _parse_payload(cp) -> TaskPayload:
    kind_name = _get_str(cp, "workload", "payload", "sleep")
    if kind_name not in _PAYLOAD_NAMES:
        raise UnknownKey(f"workload.payload: unknown kind {kind_name!r}")
    command = _get_str(cp, "workload", "command", "")
    return TaskPayload(
        kind=_PAYLOAD_NAMES[kind_name],
        target_duration=_get_float(cp, "workload", "duration", 3.0,
                                   positive=True),
        jitter_sigma=_get_float(cp, "workload", "jitter", 0.05),
        flop_count=_get_int(cp, "workload", "flops", 0, minimum=0),
        command=tuple(shlex.split(command)) if command else ())


def _parse_latency(cp) -> LatencyModel:
    preset = _get_str(cp, "latency", "preset", "zero")
    if preset == "zero":
        model = LatencyModel.zero()
    elif preset == "fitted":
        model = LatencyModel.fitted_reference()
    else:
        raise UnknownKey(f"latency.preset: unknown preset {preset!r}")
    updates = {}
    for key, attr in (("prepare_median", "prepare_median"),
                      ("prepare_sigma", "prepare_sigma"),
                      ("ack_median", "ack_median"),
                      ("ack_sigma", "ack_sigma"),
                      ("ack_exponent", "ack_exponent")):
        if cp.has_option("latency", key):
            updates[attr] = _get_float(cp, "latency", key, 0.0)
    if cp.has_option("latency", "ack_ref_cores"):
        updates["ack_ref_cores"] = _get_int(cp, "latency", "ack_ref_cores",
                                            16384, minimum=1)
    return replace(model, **updates) if updates else model


def _parse_sched_costs(cp, time_scale: float) -> tuple[float, float]:
    preset = _get_str(cp, "session", "sched_cost_preset", "none")
    if preset == "fitted":
        base, visit = fitted_service_costs()
    elif preset == "none":
        base, visit = 0.0, 0.0
    else:
        raise UnknownKey(
            f"session.sched_cost_preset: unknown preset {preset!r}")
    if cp.has_option("session", "sched_base_cost"):
        base = _get_float(cp, "session", "sched_base_cost", 0.0)
    if cp.has_option("session", "sched_visit_cost"):
        visit = _get_float(cp, "session", "sched_visit_cost", 0.0)
    return base * time_scale, visit * time_scale


def _build_units(cp, payload: TaskPayload) -> list[UnitDescription]:
    workload_file = _get_str(cp, "workload", "file", "")
    if workload_file:
        return load_workload(workload_file)
    count = _get_int(cp, "workload", "count", 8, minimum=1)
    cores = _get_int(cp, "workload", "cores", 4, minimum=1)
    return [UnitDescription(unit_id=f"unit.{i:06d}", cores=cores,
                            payload=payload) for i in range(count)]


def _parse_matrix(cp, *, name, seed, backend, profile, out_dir, executors,
                  payload, scheduler, latency, base_cost, visit_cost, pilot,
                  time_scale) -> ExperimentMatrix:
    mode = _get_str(cp, "matrix", "mode", "weak")
    if mode not in ("weak", "strong"):
        raise UnknownKey(f"matrix.mode: unknown mode {mode!r}")
    task_counts = _get_int_list(cp, "matrix", "task_counts", [8, 16, 32, 64])
    cores_per_task = _get_int(cp, "matrix", "cores_per_task", 4, minimum=1)
    default_pilots = [n * cores_per_task for n in task_counts]
    pilot_cores = _get_int_list(cp, "matrix", "pilot_cores", default_pilots)
    repetitions = _get_int(cp, "matrix", "repetitions", 3, minimum=1)
    scale_factor = _get_float(cp, "matrix", "scale_factor", 1.0,
                              positive=True)
    matrix = ExperimentMatrix(
        mode=mode, task_counts=task_counts, cores_per_task=cores_per_task,
        pilot_cores=pilot_cores, payload=payload.scaled(scale_factor),
        scheduler_kind=scheduler, repetitions=repetitions,
        scale_factor=scale_factor, cores_per_node=pilot.cores_per_node,
        backend=backend, latency=latency.scaled(scale_factor),
        sched_base_cost=base_cost * scale_factor,
        sched_visit_cost=visit_cost * scale_factor, seed=seed,
        n_executors=executors, out_dir=out_dir, name=name,
        walltime=pilot.walltime, profile=profile)
    matrix.validate()
    return matrix


# -- low-level getters -------------------------------------------------------

def _read_ini(path: Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return cp


def _get_str(cp, section, key, default):
    if not cp.has_option(section, key):
        return default
    return cp.get(section, key).strip()


def _get_int(cp, section, key, default, minimum=None):
    if not cp.has_option(section, key):
        value = default
    else:
        try:
            value = cp.getint(section, key)
        except ValueError as exc:
            raise SchemaError(f"{section}.{key}: not an integer") from exc
    if minimum is not None and value < minimum:
        raise SchemaError(f"{section}.{key}: must be >= {minimum}")
    return value


def _get_float(cp, section, key, default, positive=False):
    if not cp.has_option(section, key):
        value = default
    else:
        try:
            value = cp.getfloat(section, key)
        except ValueError as exc:
            raise SchemaError(f"{section}.{key}: not a number") from exc
    if positive and value <= 0:
        raise SchemaError(f"{section}.{key}: must be > 0")
    return value


def _get_bool(cp, section, key, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise SchemaError(f"{section}.{key}: not a boolean")


def _get_int_list(cp, section, key, default):
    if not cp.has_option(section, key):
        return list(default)
    raw = cp.get(section, key)
    try:
        values = [int(v.strip()) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise SchemaError(f"{section}.{key}: not a list of integers") from exc
    if not values:
        raise SchemaError(f"{section}.{key}: empty list")
    return values


def _parse_backend(raw: str) -> Backend:
    try:
        return Backend(raw.strip().lower())
    except ValueError:
        raise UnknownKey(f"backend: unknown backend {raw!r}") from None
