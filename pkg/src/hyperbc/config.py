"""Run configuration: INI documents parsed into a validated RunConfig.

One document describes one run: which engine to dispatch, the model
parameters, the initial data, and the engine-specific knobs.  Unknown
sections and unknown keys are errors, so a misspelled key can never fall
back to a silent default; every violation names the offending key.

render_config writes a RunConfig back out in canonical form and
parse_config(render_config(cfg)) reproduces cfg exactly.

Sections (all keys optional unless noted):

  [run]     engine (required: meanfield | abm | sweep-uniform |
            sweep-gaussian | mc-finite-size | diag), out, workers
  [model]   p, c, alpha (empty for the built-in default), m
  [init]    exactly one of uniform = D, normal = sigma, snapshot = path;
            required for meanfield/abm/diag, forbidden for sweep engines
            (their rows build their own initial data)
  [solver]  grid, dt (empty for the default), max_time,
            separation_accuracy, density_accuracy, negativity_tolerance,
            adaptive_factor, dt_cap, patch_interval.  max_time and dt_cap
            default to 3000 / 0.2 for single solves and to 2e7 / 2e4 for
            the sweep engines, whose rows must outlast slow minors
  [abm]     agents, realizations, master_seed, step_cap,
            freeze_tolerance, bins
  [sweep]   lo, hi, step (all three together): overrides the engine's
            default parameter grid for sweep-uniform / sweep-gaussian
  [mc]      widths, agents: comma-separated cell axes for mc-finite-size
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .meanfield import SolverConfig
from .model import DiscordanceSpec

__all__ = ["RunConfig", "parse_config", "render_config", "ENGINES"]

ENGINES = (
    "meanfield",
    "abm",
    "sweep-uniform",
    "sweep-gaussian",
    "mc-finite-size",
    "diag",
)

_SECTIONS = ("run", "model", "init", "solver", "abm", "sweep", "mc")
_INIT_KINDS = ("uniform", "normal", "snapshot")


@dataclass(frozen=True)
class RunConfig:
    engine: str
    out: str = "out"
    workers: int = 1
    spec: DiscordanceSpec = field(default_factory=DiscordanceSpec)
    init_kind: str | None = None
    init_value: float | str | None = None
    grid_n: int = 500
    solver: SolverConfig = field(default_factory=SolverConfig)
    n_agents: int = 1000
    realizations: int = 10000
    master_seed: int = 0
    step_cap: int = 100_000_000
    freeze_tolerance: float = 1e-9
    bins: int = 100
    sweep_grid: tuple[float, float, float] | None = None
    mc_widths: tuple[float, ...] = (1.7, 1.8, 1.9, 2.0, 2.1, 2.2)
    mc_agents: tuple[int, ...] = (500, 1000, 1500)


# ----------------------------------------------------------------------
# parsing
# ----------------------------------------------------------------------


def _fail(section: str, key: str, problem: str):
    raise ValueError(f"[{section}] {key} {problem}")


def _float_of(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        _fail(section, key, f"must be a number, got '{raw}'")


def _int_of(section: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        _fail(section, key, f"must be an integer, got '{raw}'")


def _finish(section: str, mapping: dict):
    if mapping:
        key = sorted(mapping)[0]
        raise ValueError(f"unknown key '{key}' in [{section}]")


def _float_list(section: str, key: str, raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        _fail(section, key, "must be a nonempty comma-separated list")
    vals = tuple(_float_of(section, key, p) for p in parts)
    if any(v <= 0 for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
        _fail(section, key, "must be ascending positive values")
    return vals


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"config parse error: {exc}") from None
    data = {name: dict(cp.items(name)) for name in cp.sections()}
    for name in data:
        if name not in _SECTIONS:
            raise ValueError(f"unknown section [{name}]")

    # [run]
    run = data.pop("run", None)
    if run is None or "engine" not in run:
        raise ValueError("[run] engine is required")
    engine = run.pop("engine").strip()
    if engine not in ENGINES:
        _fail("run", "engine", f"must be one of {', '.join(ENGINES)}; got '{engine}'")
    out = run.pop("out", "out").strip()
    if not out:
        _fail("run", "out", "must be a nonempty path")
    workers = _int_of("run", "workers", run.pop("workers", "1"))
    if workers < 1:
        _fail("run", "workers", "must be >= 1")
    _finish("run", run)

    # [model]
    model = data.pop("model", {})
    p = _float_of("model", "p", model.pop("p", "1.0"))
    if p <= 0:
        _fail("model", "p", "must be positive")
    c = _float_of("model", "c", model.pop("c", "1.0"))
    if c <= 0:
        _fail("model", "c", "must be positive")
    alpha_raw = model.pop("alpha", "").strip()
    alpha = None if not alpha_raw else _float_of("model", "alpha", alpha_raw)
    if alpha is not None and alpha <= 0:
        _fail("model", "alpha", "must be positive")
    m = _int_of("model", "m", model.pop("m", "3"))
    if m < 2:
        _fail("model", "m", "must be an integer >= 2")
    _finish("model", model)
    spec = DiscordanceSpec(p=p, alpha=alpha, c=c, m=m)

    # [init]
    init = data.pop("init", {})
    for key in list(init):
        if key not in _INIT_KINDS:
            raise ValueError(f"unknown key '{key}' in [init]")
    kinds = [k for k in _INIT_KINDS if k in init]
    init_kind: str | None = None
    init_value: float | str | None = None
    if engine in ("meanfield", "abm", "diag"):
        if len(kinds) != 1:
            raise ValueError(
                "[init] exactly one of uniform, normal, snapshot is required "
                f"(got {len(kinds)})"
            )
        init_kind = kinds[0]
        raw = init[init_kind].strip()
        if init_kind == "snapshot":
            if not raw:
                _fail("init", "snapshot", "must be a nonempty path")
            init_value = raw
        else:
            init_value = _float_of("init", init_kind, raw)
            if init_value <= 0:
                _fail("init", init_kind, "must be positive")
        if engine == "abm" and init_kind == "snapshot":
            _fail("init", "snapshot", "is not supported by the abm engine")
        if engine == "diag" and init_kind != "snapshot":
            _fail("init", init_kind, "is not usable by diag; give snapshot = <path>")
    elif kinds:
        raise ValueError(
            f"[init] engine '{engine}' builds its own initial data; "
            "remove the init section"
        )

    # [solver]
    solver = data.pop("solver", {})
    grid_n = _int_of("solver", "grid", solver.pop("grid", "500"))
    if grid_n < 3:
        _fail("solver", "grid", "must be an integer >= 3")
    dt_raw = solver.pop("dt", "").strip()
    dt = None if not dt_raw else _float_of("solver", "dt", dt_raw)
    # sweep rows must outlast their slowest minor (contraction rate scales
    # with squared cluster mass), so the horizon defaults are engine-aware
    is_sweep = engine in ("sweep-uniform", "sweep-gaussian")
    fields = {}
    for key, default in (
        ("max_time", "20000000.0" if is_sweep else "3000.0"),
        ("separation_accuracy", "1e-07"),
        ("density_accuracy", "1e-06"),
        ("negativity_tolerance", "1e-12"),
        ("adaptive_factor", "2.0"),
        ("dt_cap", "20000.0" if is_sweep else "0.2"),
    ):
        fields[key] = _float_of("solver", key, solver.pop(key, default))
    patch_interval = _int_of(
        "solver", "patch_interval", solver.pop("patch_interval", "50")
    )
    _finish("solver", solver)
    try:
        solver_cfg = SolverConfig(dt=dt, patch_interval=patch_interval, **fields)
    except ValueError as exc:
        raise ValueError(f"[solver] {exc}") from None

    # [abm]
    abm = data.pop("abm", {})
    n_agents = _int_of("abm", "agents", abm.pop("agents", "1000"))
    if n_agents < 3:
        _fail("abm", "agents", "must be an integer >= 3")
    realizations = _int_of("abm", "realizations", abm.pop("realizations", "10000"))
    if realizations < 1:
        _fail("abm", "realizations", "must be >= 1")
    master_seed = _int_of("abm", "master_seed", abm.pop("master_seed", "0"))
    if master_seed < 0:
        _fail("abm", "master_seed", "must be >= 0")
    step_cap = _int_of("abm", "step_cap", abm.pop("step_cap", "100000000"))
    if step_cap < 1:
        _fail("abm", "step_cap", "must be >= 1")
    freeze_tolerance = _float_of(
        "abm", "freeze_tolerance", abm.pop("freeze_tolerance", "1e-09")
    )
    if freeze_tolerance <= 0:
        _fail("abm", "freeze_tolerance", "must be positive")
    bins = _int_of("abm", "bins", abm.pop("bins", "100"))
    if bins < 1:
        _fail("abm", "bins", "must be >= 1")
    _finish("abm", abm)

    # [sweep]
    sweep = data.pop("sweep", {})
    trio = {k: sweep.pop(k, None) for k in ("lo", "hi", "step")}
    _finish("sweep", sweep)
    present = [k for k, v in trio.items() if v is not None]
    sweep_grid = None
    if present:
        if len(present) != 3:
            raise ValueError("[sweep] lo, hi, step must be given together")
        lo = _float_of("sweep", "lo", trio["lo"])
        hi = _float_of("sweep", "hi", trio["hi"])
        step = _float_of("sweep", "step", trio["step"])
        if lo <= 0:
            _fail("sweep", "lo", "must be positive")
        if hi <= lo:
            _fail("sweep", "hi", "must exceed lo")
        if step <= 0:
            _fail("sweep", "step", "must be positive")
        sweep_grid = (lo, hi, step)

    # [mc]
    mc = data.pop("mc", {})
    widths_raw = mc.pop("widths", None)
    agents_raw = mc.pop("agents", None)
    _finish("mc", mc)
    mc_widths = (
        (1.7, 1.8, 1.9, 2.0, 2.1, 2.2)
        if widths_raw is None
        else _float_list("mc", "widths", widths_raw)
    )
    if agents_raw is None:
        mc_agents: tuple[int, ...] = (500, 1000, 1500)
    else:
        floats = _float_list("mc", "agents", agents_raw)
        if any(v != int(v) or v < 3 for v in floats):
            _fail("mc", "agents", "must be integers >= 3")
        mc_agents = tuple(int(v) for v in floats)

    return RunConfig(
        engine=engine,
        out=out,
        workers=workers,
        spec=spec,
        init_kind=init_kind,
        init_value=init_value,
        grid_n=grid_n,
        solver=solver_cfg,
        n_agents=n_agents,
        realizations=realizations,
        master_seed=master_seed,
        step_cap=step_cap,
        freeze_tolerance=freeze_tolerance,
        bins=bins,
        sweep_grid=sweep_grid,
        mc_widths=mc_widths,
        mc_agents=mc_agents,
    )


# ----------------------------------------------------------------------
# rendering
# ----------------------------------------------------------------------


def _f(x: float) -> str:
    return repr(float(x))


def render_config(cfg: RunConfig) -> str:
    """Canonical INI form of cfg; parse_config inverts it exactly."""
    buf = io.StringIO()
    w = buf.write
    w("[run]\n")
    w(f"engine = {cfg.engine}\n")
    w(f"out = {cfg.out}\n")
    w(f"workers = {cfg.workers}\n\n")
    w("[model]\n")
    w(f"p = {_f(cfg.spec.p)}\n")
    w(f"c = {_f(cfg.spec.c)}\n")
    # alpha always has a resolved value on a built spec; an empty value in a
    # hand-written file means "use the default", which render never needs
    w(f"alpha = {_f(cfg.spec.alpha)}\n")
    w(f"m = {cfg.spec.m}\n\n")
    if cfg.init_kind is not None:
        w("[init]\n")
        value = (
            cfg.init_value
            if cfg.init_kind == "snapshot"
            else _f(float(cfg.init_value))
        )
        w(f"{cfg.init_kind} = {value}\n\n")
    w("[solver]\n")
    w(f"grid = {cfg.grid_n}\n")
    w(f"dt = {'' if cfg.solver.dt is None else _f(cfg.solver.dt)}\n")
    w(f"max_time = {_f(cfg.solver.max_time)}\n")
    w(f"separation_accuracy = {_f(cfg.solver.separation_accuracy)}\n")
    w(f"density_accuracy = {_f(cfg.solver.density_accuracy)}\n")
    w(f"negativity_tolerance = {_f(cfg.solver.negativity_tolerance)}\n")
    w(f"adaptive_factor = {_f(cfg.solver.adaptive_factor)}\n")
    w(f"dt_cap = {_f(cfg.solver.dt_cap)}\n")
    w(f"patch_interval = {cfg.solver.patch_interval}\n\n")
    w("[abm]\n")
    w(f"agents = {cfg.n_agents}\n")
    w(f"realizations = {cfg.realizations}\n")
    w(f"master_seed = {cfg.master_seed}\n")
    w(f"step_cap = {cfg.step_cap}\n")
    w(f"freeze_tolerance = {_f(cfg.freeze_tolerance)}\n")
    w(f"bins = {cfg.bins}\n\n")
    if cfg.sweep_grid is not None:
        lo, hi, step = cfg.sweep_grid
        w("[sweep]\n")
        w(f"lo = {_f(lo)}\n")
        w(f"hi = {_f(hi)}\n")
        w(f"step = {_f(step)}\n\n")
    w("[mc]\n")
    w(f"widths = {', '.join(_f(v) for v in cfg.mc_widths)}\n")
    w(f"agents = {', '.join(str(v) for v in cfg.mc_agents)}\n")
    return buf.getvalue()
