"""Command-line run driver: config parsing, benchmark execution and output files.

A run writes into its output directory:

``metrics.csv``
    One row per iteration with columns ``iteration, objective,
    violation_1..violation_m, step_size, relative_change, projection_path,
    projection_iters, fea_seconds, projection_seconds``.
``run.json``
    Final objective and violations, wall times, snapshot list and the full
    configuration.
``density_iterNNNN.{csv,pgm}`` and ``density_final.{csv,pgm}``
    Filtered density snapshots at five log-spaced iterations and at the end.
    Multi-material runs write one file per material (``_m1`` ...) plus an
    ``_argmax`` composite.

Exit status is 0 on success, 1 on a runtime failure and 2 on a bad config.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .optimizer import PROJECTION_MODES, PgdSettings, run_oc, run_pgd
from .problems import FACTORIES, KINDS, MIN_COMPLIANCE, MULTI_MATERIAL, Problem

log = logging.getLogger("pgdto")

OUTPUT_DIR_ENV = "PGDTO_OUTPUT_DIR"
PRESETS = {"coarse": (128, 64), "medium": (256, 128), "fine": (512, 256)}
OPTIMIZERS = ("pgd", "oc")
SOLVERS = ("auto", "dense", "direct", "cg")
FORMATS = ("csv", "pgm")
N_SNAPSHOTS = 5


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _choice(options):
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value
    return parse


def _formats(text: str) -> tuple:
    values = tuple(v.strip() for v in text.split(",") if v.strip())
    for v in values:
        _choice(FORMATS)(v)
    return values


# key -> (parser, default). ``None`` defaults mean "use the problem's own default".
KEYS = {
    "problem": (_choice(KINDS), MIN_COMPLIANCE),
    "resolution": (_choice(tuple(PRESETS)), "coarse"),
    "nx": (int, None),
    "ny": (int, None),
    "optimizer": (_choice(OPTIMIZERS), "pgd"),
    "volume_fraction": (float, 0.2),
    "compliance_max": (float, 150.0),
    "volume_fractions": (_floats, (0.05,)),
    "young_moduli": (_floats, (1.0, 0.5, 0.25, 0.125)),
    "com_target": (_floats, (0.25, 0.25)),
    "com_radius": (float, 0.01),
    "filter_radius": (float, 1.5),
    "penalty": (float, 3.0),
    "solver": (_choice(SOLVERS), "auto"),
    "alpha_max": (float, 1e2),
    "alpha_fallback": (float, 0.2),
    "t_warmup": (int, 50),
    "omega": (float, 1.0),
    "eps_alpha": (float, 1e-6),
    "tol": (float, 0.0),
    "K_max": (int, 300),
    "C": (float, 1e12),
    "tol_B": (float, 1e-8),
    "tol_N": (float, 1e-6),
    "newton_maxiter": (int, 50),
    "use_fallback": (_bool, True),
    "projection_mode": (_choice(PROJECTION_MODES), "auto"),
    "oc_move": (float, 0.2),
    "oc_eta": (float, 0.5),
    "seed": (int, 0),
    "output_dir": (str, "runs/latest"),
    "snapshot_formats": (_formats, ("csv", "pgm")),
    "record_timings": (_bool, True),
    "log_every": (int, 25),
}

SETTINGS_KEYS = tuple(f.name for f in dataclasses.fields(PgdSettings))


@dataclasses.dataclass(frozen=True)
class RunConfig:
    problem: str = MIN_COMPLIANCE
    resolution: str = "coarse"
    nx: int = 128
    ny: int = 64
    optimizer: str = "pgd"
    volume_fraction: float = 0.2
    compliance_max: float = 150.0
    volume_fractions: tuple = (0.05,)
    young_moduli: tuple = (1.0, 0.5, 0.25, 0.125)
    com_target: tuple = (0.25, 0.25)
    com_radius: float = 0.01
    filter_radius: float = 1.5
    penalty: float = 3.0
    solver: str = "auto"
    settings: PgdSettings = dataclasses.field(default_factory=PgdSettings)
    oc_move: float = 0.2
    oc_eta: float = 0.5
    seed: int = 0
    output_dir: str = "runs/latest"
    snapshot_formats: tuple = ("csv", "pgm")
    record_timings: bool = True
    log_every: int = 25

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.update(out.pop("settings"))
        return out

    def build_problem(self) -> Problem:
        common = dict(nx=self.nx, ny=self.ny, filter_radius=self.filter_radius,
                      penalty=self.penalty, solver=self.solver)
        if self.problem == MIN_COMPLIANCE:
            spec = FACTORIES[self.problem](volume_fraction=self.volume_fraction, **common)
        elif self.problem == "min_volume":
            spec = FACTORIES[self.problem](compliance_max=self.compliance_max, **common)
        elif self.problem == MULTI_MATERIAL:
            fractions = self.volume_fractions
            if len(fractions) == 1:
                fractions = fractions * len(self.young_moduli)
            spec = FACTORIES[self.problem](young_moduli=self.young_moduli,
                                           volume_fractions=fractions, **common)
        else:
            spec = FACTORIES[self.problem](volume_fraction=self.volume_fraction,
                                           com_target=self.com_target,
                                           com_radius=self.com_radius, **common)
        return Problem(spec)


def read_config_file(path) -> dict:
    """Raw ``key = value`` pairs; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def build_config(raw: dict) -> RunConfig:
    """Validate raw string (or already typed) values and fill in defaults."""
    typed = {}
    for key, value in raw.items():
        if key not in KEYS:
            raise ConfigError(key, "unknown configuration key")
        parser, _ = KEYS[key]
        try:
            typed[key] = parser(value) if isinstance(value, str) else value
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, str(exc)) from exc
    merged = {k: d for k, (_, d) in KEYS.items()}
    merged.update(typed)

    nx, ny = PRESETS[merged["resolution"]]
    if merged["nx"] is not None or merged["ny"] is not None:
        if merged["nx"] is None or merged["ny"] is None:
            raise ConfigError("nx" if merged["nx"] is None else "ny", "nx and ny must be given together")
        nx, ny = merged["nx"], merged["ny"]
    for key, value in (("nx", nx), ("ny", ny)):
        if value <= 0:
            raise ConfigError(key, "resolution must be positive")
    if merged["optimizer"] == "oc" and merged["problem"] != MIN_COMPLIANCE:
        raise ConfigError("optimizer",
                          f"oc supports a single volume constraint ({MIN_COMPLIANCE}), "
                          f"not {merged['problem']}")
    if merged["problem"] == MULTI_MATERIAL:
        k, v = len(merged["young_moduli"]), len(merged["volume_fractions"])
        if k < 2:
            raise ConfigError("young_moduli", "multi_material needs at least two materials")
        if v not in (1, k):
            raise ConfigError("volume_fractions", f"{v} fractions for {k} materials")
    if len(merged["com_target"]) != 2:
        raise ConfigError("com_target", "expected two comma-separated numbers")
    if merged["log_every"] < 0:
        raise ConfigError("log_every", "must be non-negative")

    try:
        settings = PgdSettings(**{k: merged[k] for k in SETTINGS_KEYS})
    except ValueError as exc:
        name = next((k for k in SETTINGS_KEYS if str(exc).startswith(k)), "settings")
        raise ConfigError(name, str(exc)) from exc
    other = {k: merged[k] for k in KEYS if k not in SETTINGS_KEYS and k not in ("nx", "ny")}
    return RunConfig(nx=nx, ny=ny, settings=settings, **other)


def parse_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Defaults, then the config file, then the output-dir environment variable, then overrides."""
    raw = read_config_file(path) if path is not None else {}
    env = os.environ if env is None else env
    if env.get(OUTPUT_DIR_ENV):
        raw["output_dir"] = env[OUTPUT_DIR_ENV]
    raw.update(overrides or {})
    return build_config(raw)


# -- density export -----------------------------------------------------------

def density_image(values, nx: int, ny: int) -> np.ndarray:
    """Element densities as an ``(ny, nx)`` image with the top of the domain in row 0."""
    return np.flipud(np.asarray(values, dtype=float).reshape(ny, nx))


def quantize(image) -> np.ndarray:
    """8-bit gray levels ``floor(255 * rho)`` with ``rho`` clipped to ``[0, 1]``."""
    return np.floor(np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def export_density(image, path, fmt: str | None = None) -> Path:
    """Write a 2-D field as csv (``nx,ny`` header, rows as given) or binary PGM."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    image = np.atleast_2d(np.asarray(image, dtype=float))
    ny, nx = image.shape
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            fh.write(f"{nx},{ny}\n")
            for row in image:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    elif fmt == "pgm":
        with path.open("wb") as fh:
            fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
            fh.write(quantize(image).tobytes())
    else:
        raise ValueError(f"unsupported density format {fmt!r}; expected one of {FORMATS}")
    return path


def read_density_csv(path) -> np.ndarray:
    with Path(path).open() as fh:
        nx, ny = (int(v) for v in fh.readline().split(","))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (ny, nx):
        raise ValueError(f"{path}: header says {ny}x{nx}, body is {data.shape[0]}x{data.shape[1]}")
    return data


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    nx, ny = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: nx * ny], dtype=np.uint8).reshape(ny, nx)


def argmax_composite(channels: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Material label per element: 0 = void, otherwise ``(K - j) / K`` for material ``j``.

    The stiffest (first) material is brightest; an element is void when no
    channel reaches ``threshold``.
    """
    k = channels.shape[1]
    j = np.argmax(channels, axis=1)
    level = (k - j) / k
    return np.where(channels.max(axis=1) >= threshold, level, 0.0)


def write_snapshot(directory: Path, stem: str, physical, nx, ny, formats) -> list:
    """Write one snapshot in every format; returns the file names written."""
    phys = np.asarray(physical)
    fields = {}
    if phys.ndim == 1:
        fields[stem] = phys
    else:
        for j in range(phys.shape[1]):
            fields[f"{stem}_m{j + 1}"] = phys[:, j]
        fields[f"{stem}_argmax"] = argmax_composite(phys)
    written = []
    for name, values in fields.items():
        image = density_image(values, nx, ny)
        for fmt in formats:
            written.append(export_density(image, directory / f"{name}.{fmt}", fmt).name)
    return written


def snapshot_iterations(k_max: int) -> list:
    """``ceil(logspace(0, log10(k_max), 5))`` without duplicates."""
    if k_max < 1:
        return []
    points = np.ceil(np.logspace(0.0, math.log10(k_max), N_SNAPSHOTS) - 1e-9).astype(int)
    return sorted(set(int(p) for p in np.clip(points, 1, k_max)))


# -- run ----------------------------------------------------------------------

class _MetricsWriter:
    def __init__(self, path: Path, m: int, record_timings: bool):
        self.fh = path.open("w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.record_timings = record_timings
        self.writer.writerow(
            ["iteration", "objective"] + [f"violation_{j + 1}" for j in range(m)]
            + ["step_size", "relative_change", "projection_path", "projection_iters",
               "fea_seconds", "projection_seconds"]
        )

    def write(self, rec):
        fea = rec.fea_seconds if self.record_timings else 0.0
        proj = rec.projection_seconds if self.record_timings else 0.0
        self.writer.writerow(
            [rec.iteration, repr(float(rec.objective))]
            + [repr(float(v)) for v in rec.violations]
            + [repr(float(rec.step_size)), repr(float(rec.relative_change)), rec.projection_path,
               rec.projection_iters, repr(float(fea)), repr(float(proj))]
        )
        self.fh.flush()

    def close(self):
        self.fh.close()


def run(config: RunConfig) -> int:
    """Execute one benchmark run and write its outputs. Returns the exit status."""
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        problem = config.build_problem()
        metrics = _MetricsWriter(out / "metrics.csv", problem.m, config.record_timings)
    except (OSError, ValueError) as exc:
        log.error("cannot start run: %s", exc)
        return 1

    settings = config.settings
    k_max = settings.K_max
    marks = set(snapshot_iterations(k_max))
    snapshots = []
    fea_total = proj_total = 0.0
    nx, ny = config.nx, config.ny

    def on_iteration(rec, _state):
        nonlocal fea_total, proj_total
        metrics.write(rec)
        fea_total += rec.fea_seconds
        proj_total += rec.projection_seconds
        if config.log_every and rec.iteration % config.log_every == 0:
            log.info("iter %4d  objective %.6g  max violation %.3g  step %.3g  %s",
                     rec.iteration, rec.objective, float(np.max(rec.violations, initial=0.0)),
                     rec.step_size, rec.projection_path)

    def snapshot_hook(rec, physical):
        if rec.iteration in marks:
            snapshots.extend(write_snapshot(out, f"density_iter{rec.iteration:04d}", physical,
                                            nx, ny, config.snapshot_formats))

    start = time.perf_counter()
    status, error = 0, None
    def hook(rec, state):
        on_iteration(rec, state)
        snapshot_hook(rec, state.evaluation.physical)

    try:
        if config.optimizer == "oc":
            result = run_oc(problem, k_max, config.oc_move, config.oc_eta, on_iteration=hook)
        else:
            result = run_pgd(problem, settings, on_iteration=hook)
        snapshots.extend(write_snapshot(out, "density_final", result.physical, nx, ny,
                                        config.snapshot_formats))
    except Exception as exc:  # noqa: BLE001 - reported and mapped to the exit status
        log.error("run failed: %s", exc)
        status, error, result = 1, f"{type(exc).__name__}: {exc}", None
    finally:
        metrics.close()
    wall = time.perf_counter() - start

    summary = {
        "status": "ok" if status == 0 else "error",
        "error": error,
        "iterations": len(result.history) if result else None,
        "final_objective": float(result.final.objective) if result else None,
        "final_violations": [float(v) for v in result.final.violations] if result else None,
        "constraint_names": problem.constraint_names,
        "wall_seconds": wall if config.record_timings else 0.0,
        "fea_seconds": fea_total if config.record_timings else 0.0,
        "projection_seconds": proj_total if config.record_timings else 0.0,
        "snapshots": snapshots,
        "config": config.as_dict(),
    }
    try:
        (out / "run.json").write_text(json.dumps(summary, indent=2, default=list) + "\n")
    except OSError as exc:
        log.error("cannot write run.json: %s", exc)
        return 1
    return status


def _arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgdto",
        description="Run a topology optimization benchmark with projected gradient descent or OC.",
    )
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    for key, (_, default) in KEYS.items():
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        parser.add_argument(*flags, dest=key, metavar="VALUE", default=argparse.SUPPRESS,
                            help=f"default: {default}")
    return parser


def main(argv=None) -> int:
    args = vars(_arg_parser().parse_args(argv))
    path = args.pop("config", None)
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = parse_config(path, args)
    except ConfigError as exc:
        print(f"pgdto: config error: {exc}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
