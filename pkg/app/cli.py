"""Subcommands: flow, green, frontier and verify.

Each subcommand reads one JSON run configuration, writes its artifacts to the
output directory and finishes with a manifest carrying the config hash.
"""

import argparse
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import Degenerate, ExhaustionError, InvalidInput
from app.core.monitoring import RunMonitor
from app.deformation.checkpoint import load_checkpoint, save_checkpoint
from app.deformation.flow import DegeneracyReport, find_frontier, run_to
from app.diagnostics import (
    CheckResult,
    ball_oracle_green,
    boundary_drift,
    green_sampler,
    identity_suite,
    lie_derivative_check,
    ma_residual,
    psh_margin,
    reality_residual,
    tau_sampler,
)
from app.geometry.profile import ProfileRho, load_profile
from app.models import GreenGridSpec, RunConfig
from app.transport import (
    PhiPath,
    Transport,
    green_grid,
    kobayashi_at_center,
    sample_header,
    sample_points,
)
from app.utils import (
    read_csv_hash,
    read_json,
    stable_hash,
    validation_errors,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

ComplexArray = npt.NDArray[np.complex128]

COMMANDS = ("green", "frontier", "verify", "flow")


@dataclass
class RunContext:
    config: RunConfig
    rho: ProfileRho
    out_dir: Path
    threads: int
    monitor: RunMonitor = field(default_factory=RunMonitor)

    @property
    def direction(self) -> ComplexArray:
        return np.array(self.config.direction_vector(), dtype=np.complex128)

    @property
    def config_hash(self) -> str:
        # paths and thread counts stay out of the hash
        dump = self.config.model_dump(
            mode="json",
            exclude={
                "profile": True,
                "output_dir": True,
                "threads": True,
                "verify": {"artifacts": True, "checkpoint": True},
            },
        )
        return stable_hash({"config": dump, "profile": self.rho.key()})

    @property
    def flow_hash(self) -> str:
        """Hash of what determines phi_t; checkpoints are keyed by it."""
        cfg = self.config
        return stable_hash(
            {
                "profile": self.rho.key(),
                "direction": cfg.direction,
                "s": cfg.s,
                "flow": cfg.flow.model_dump(mode="json"),
            }
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exhaust",
        description="Monge-Ampere exhaustions of circular domains by deformation flows.",
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=None,
        help=f"Logging level (default: {settings.LOG_LEVEL})",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, required=True, help="Run configuration (JSON).")
        cmd.add_argument("--threads", type=int, default=None, help="Worker thread cap.")
        cmd.add_argument("--out", type=Path, default=None, help="Output directory.")
    return parser


def load_config(path: Path) -> RunConfig:
    data = read_json(path, "config")
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidInput("invalid run configuration", {"errors": validation_errors(exc)}) from exc
    if isinstance(config.profile, Path) and not config.profile.is_absolute():
        config = config.model_copy(update={"profile": path.parent / config.profile})
    return config


def make_context(args: argparse.Namespace) -> RunContext:
    config = load_config(args.config)
    grid = config.flow.grid
    rho = load_profile(config.profile, w_box=grid.w_box)
    if rho.n != config.n:
        raise InvalidInput(
            "direction dimension does not match the profile",
            {"profile_n": rho.n, "direction_n": config.n},
        )
    threads = args.threads if args.threads is not None else config.threads or settings.THREADS
    if threads < 1:
        raise InvalidInput("--threads must be >= 1")
    out_dir = args.out or config.output_dir or settings.OUTPUT_DIR
    return RunContext(config=config, rho=rho, out_dir=Path(out_dir), threads=threads)


def write_manifest(ctx: RunContext, command: str, outputs: dict[str, Any]) -> dict[str, Any]:
    reproducible = {
        "command": command,
        "config_hash": ctx.config_hash,
        "flow_hash": ctx.flow_hash,
        "outputs": outputs,
        "monitors": ctx.monitor.extrema(),
    }
    manifest = {
        **reproducible,
        "manifest_hash": stable_hash(reproducible),
        "timings": ctx.monitor.timings(),
        "wall_time": ctx.monitor.wall_time(),
    }
    write_json(ctx.out_dir / "manifest.json", manifest)
    return manifest


# --- flow -----------------------------------------------------------------------------


def _run_flow(ctx: RunContext) -> DegeneracyReport:
    cfg = ctx.config
    logger.info(f"flow for s={cfg.s:g} along {cfg.direction_vector()}")
    with ctx.monitor.timer("flow.run"):
        return run_to(cfg.s, ctx.direction, ctx.rho, cfg.flow, monitor=ctx.monitor)


def _phi_path(ctx: RunContext) -> PhiPath:
    """phi_t for the configured segment: from the verify checkpoint or a fresh flow."""
    cfg = ctx.config
    eps = cfg.flow.tolerances.eps_deg
    if cfg.verify.checkpoint is not None:
        return PhiPath.from_checkpoint(load_checkpoint(cfg.verify.checkpoint, ctx.flow_hash), eps)
    if cfg.s == 0:
        return PhiPath.trivial()
    report = _run_flow(ctx)
    if report.terminating != "reached_one":
        raise Degenerate(
            "deformation flow broke down before t = 1",
            {"s": cfg.s, "event_time": report.event_time},
        )
    return PhiPath.from_report(report, eps)


def cmd_flow(ctx: RunContext) -> int:
    report = _run_flow(ctx)
    outputs: dict[str, Any] = {"flow": "flow.json"}
    if report.state is not None and report.state.history:
        save_checkpoint(
            ctx.out_dir / "checkpoint.npz",
            atlas=report.state.phi.atlas,
            history=report.state.history,
            config_hash=ctx.flow_hash,
            extra={"s": ctx.config.s, "terminating": report.terminating},
        )
        outputs["checkpoint"] = "checkpoint.npz"
    payload = {"config_hash": ctx.config_hash, "flow_hash": ctx.flow_hash, **report.to_dict()}
    write_json(ctx.out_dir / "flow.json", payload)
    write_manifest(ctx, "flow", outputs)
    return 0 if report.terminating == "reached_one" else 1


# --- green ----------------------------------------------------------------------------


def _center_metric(transport: Transport) -> list[float | None]:
    values: list[float | None] = []
    for k in range(transport.rho.n):
        u = np.zeros(transport.rho.n, dtype=np.complex128)
        u[k] = 1
        try:
            values.append(kobayashi_at_center(transport, u))
        except ExhaustionError as exc:
            logger.warning(f"Kobayashi metric along axis {k + 1}: {exc.message}")
            values.append(None)
    return values


def cmd_green(ctx: RunContext) -> int:
    cfg = ctx.config
    path = _phi_path(ctx)
    transport = Transport(
        ctx.rho,
        path,
        ctx.direction,
        cfg.s,
        cfg.flow.tolerances,
        cfg.flow.method,
        ctx.monitor,
    )
    samples = green_grid(transport, cfg.green, seed=cfg.seed, threads=ctx.threads)
    write_csv(
        ctx.out_dir / "green_grid.csv",
        header=sample_header(ctx.rho.n),
        rows=(sample.row() for sample in samples),
        config_hash=ctx.config_hash,
    )
    failed = sum(1 for x in samples if x.flag not in ("ok", "pole"))
    write_manifest(
        ctx,
        "green",
        {
            "green_grid": "green_grid.csv",
            "samples": len(samples),
            "failed_samples": failed,
            "pole": [[z.real, z.imag] for z in transport.pole],
            "kobayashi_at_center": _center_metric(transport),
        },
    )
    return 0


# --- frontier -------------------------------------------------------------------------


def fan_directions(n: int, count: int, radius: float) -> list[ComplexArray]:
    """Directions of norm ``radius`` spread over CP^1 through a Fibonacci lattice on S^2."""
    if n != 2:
        raise InvalidInput("a fan of directions is available for n = 2")
    golden = math.pi * (3.0 - math.sqrt(5.0))
    out = []
    for k in range(count):
        height = 1.0 - 2.0 * (k + 0.5) / count
        alpha = 0.5 * math.acos(height)
        beta = golden * k
        u = np.array([math.cos(alpha), math.sin(alpha) * np.exp(1j * beta)])
        out.append(radius * u)
    return out


def _directions(ctx: RunContext) -> list[ComplexArray]:
    spec = ctx.config.frontier
    n = ctx.rho.n
    if spec.fan is not None:
        return fan_directions(n, spec.fan, spec.fan_radius)
    if spec.directions:
        out = []
        for row in spec.directions:
            if len(row) != 2 * n:
                raise InvalidInput(f"directions hold 2n = {2 * n} reals")
            v = np.array([complex(row[i], row[n + i]) for i in range(n)])
            if np.linalg.norm(v) >= 1:
                raise InvalidInput("direction norm must be < 1", {"direction": row})
            out.append(v)
        return out
    return [ctx.direction]


def cmd_frontier(ctx: RunContext) -> int:
    cfg = ctx.config
    results = []
    for v in _directions(ctx):
        with ctx.monitor.timer("frontier.direction"):
            report = find_frontier(v, ctx.rho, cfg.flow, monitor=ctx.monitor)
        norm = float(np.linalg.norm(v))
        logger.info(f"direction {v}: s_o={report.s_o:.4f} ({report.terminating})")
        results.append(
            {
                "direction": [*v.real.tolist(), *v.imag.tolist()],
                "norm": norm,
                "lambda_v": report.s_o * norm,
                **report.to_dict(),
            }
        )
    write_json(
        ctx.out_dir / "frontier.json",
        {"config_hash": ctx.config_hash, "directions": results},
    )
    write_manifest(ctx, "frontier", {"frontier": "frontier.json", "directions": len(results)})
    return 0


# --- verify ---------------------------------------------------------------------------


def _artifact_hash(path: Path) -> str | None:
    if path.suffix == ".csv":
        return read_csv_hash(path)
    data = read_json(path, "artifact")
    return data.get("config_hash") if isinstance(data, dict) else None


def check_artifacts(ctx: RunContext) -> None:
    for path in ctx.config.verify.artifacts:
        if not path.exists():
            raise InvalidInput(f"artifact {path} does not exist")
        found = _artifact_hash(path)
        if found != ctx.config_hash:
            raise InvalidInput(
                f"artifact {path} was produced by a different configuration",
                {"expected": ctx.config_hash, "found": found},
            )


def _check_points(
    ctx: RunContext, count: int, radius: float, exclusion: float
) -> list[ComplexArray]:
    spec = GreenGridSpec(n_points=count, radius_max=radius, pole_exclusion=exclusion)
    pole = ctx.config.s * ctx.direction
    return sample_points(ctx.rho.n, spec, pole, ctx.config.seed)


def _guarded(name: str, threshold: float, fn: Callable[[], CheckResult]) -> CheckResult:
    try:
        return fn()
    except ExhaustionError as exc:
        if isinstance(exc, InvalidInput):
            raise
        logger.warning(f"check {name} failed: {type(exc).__name__}: {exc.message}")
        return CheckResult(name, math.nan, threshold, False, {"error": exc.to_payload()})


def _transport_checks(ctx: RunContext, path: PhiPath) -> list[CheckResult]:
    cfg = ctx.config
    vs = cfg.verify
    transport = Transport(
        ctx.rho, path, ctx.direction, cfg.s, cfg.flow.tolerances, cfg.flow.method, ctx.monitor
    )
    h = vs.hessian_step
    interior = _check_points(ctx, vs.ma_points, 0.9, 0.25)

    green = green_sampler(transport)
    tau = tau_sampler(transport)

    def ma() -> CheckResult:
        worst = max(ma_residual(green, x, h, richardson=True) for x in interior)
        return CheckResult.below("ma_residual", worst, vs.ma_threshold)

    def psh() -> CheckResult:
        return CheckResult.above("psh_margin", min(psh_margin(tau, x, h) for x in interior), 0.0)

    def lie() -> CheckResult:
        lie_points = _check_points(ctx, vs.lie_points, 0.8, 0.1)
        value = lie_derivative_check(transport, vs.lie_time, vs.lie_dt, lie_points)
        return CheckResult.below("lie_derivative", value, vs.lie_threshold)

    def drift() -> CheckResult:
        rng = np.random.default_rng(cfg.seed)
        boundary = []
        for _ in range(8):
            g = rng.normal(size=ctx.rho.n) + 1j * rng.normal(size=ctx.rho.n)
            boundary.append(g / np.linalg.norm(g))
        samples = [transport.safe_exhaustion(x) for x in boundary]
        return CheckResult.below("boundary_drift", boundary_drift(samples), 1e-6)

    checks = [
        _guarded("ma_residual", vs.ma_threshold, ma),
        _guarded("psh_margin", 0.0, psh),
        _guarded("lie_derivative", vs.lie_threshold, lie),
    ]
    if ctx.rho.is_ball:
        pole = transport.pole

        def oracle() -> CheckResult:
            error = max(abs(green(x) - ball_oracle_green(pole, x)) for x in interior)
            return CheckResult.below("ball_oracle_green", error, 1e-3)

        checks.append(_guarded("ball_oracle_green", 1e-3, oracle))
        checks.append(_guarded("boundary_drift", 1e-6, drift))
    return checks


def cmd_verify(ctx: RunContext) -> int:
    cfg = ctx.config
    check_artifacts(ctx)
    checks = identity_suite(ctx.rho, seed=cfg.seed, points=cfg.verify.identity_points)
    try:
        path = _phi_path(ctx)
    except Degenerate as exc:
        checks.append(CheckResult("flow_reached_one", 0.0, 1.0, False, exc.to_payload()))
    else:
        checks.append(CheckResult("flow_reached_one", 1.0, 1.0, True))
        if path.values.size:
            final = reality_residual(path.values[-1])
            checks.append(CheckResult.below("reality", final, 1e-10))
        checks.extend(_transport_checks(ctx, path))
    passed = all(c.passed for c in checks)
    write_json(
        ctx.out_dir / "report.json",
        {
            "config_hash": ctx.config_hash,
            "passed": passed,
            "checks": [c.to_dict() for c in checks],
        },
    )
    write_manifest(ctx, "verify", {"report": "report.json", "passed": passed})
    for c in checks:
        level = logging.INFO if c.passed else logging.WARNING
        logger.log(level, f"{c.name}: {c.residual:.3e} vs {c.threshold:g} passed={c.passed}")
    return 0 if passed else 1


HANDLERS: dict[str, Callable[[RunContext], int]] = {
    "green": cmd_green,
    "frontier": cmd_frontier,
    "verify": cmd_verify,
    "flow": cmd_flow,
}
