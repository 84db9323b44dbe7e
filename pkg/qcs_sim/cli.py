"""
Batch front-end.

Subcommands: twirl-check, purify, qcs, budget, e2e. Each writes one table
(CSV with a `#` configuration line, or a JSON mirror) and returns an exit
status: 0 success, 2 configuration error, 3 precondition refusal, 4 internal
invariant failure.
"""

import argparse
import logging
import math
import os
import sys
from contextlib import contextmanager
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from qcs_sim import __version__
from qcs_sim.channels import (
    BELL_LABELS,
    bell_projectors,
    bell_weights,
    noisy_phase_pair,
    singlet_fidelity,
    twirl,
    twirl_average,
    twirl_closed_form,
)
from qcs_sim.config import (
    LOG_LEVELS,
    Param,
    Settings,
    choice,
    configure_logging,
    load_config_file,
    load_settings,
    parse_count,
    parse_count_list,
    parse_float_list,
    parse_frame,
    parse_rounds,
    resolve_params,
)
from qcs_sim.errors import (
    ConfigError,
    ExhaustionError,
    InvariantError,
    PreconditionError,
    ProtocolOrderError,
    QCSError,
)
from qcs_sim.frames import BasisFrame, phase_singlet
from qcs_sim.harness import ChannelModel, Scenario, check_preconditions, run_sweep, sweep_summary
from qcs_sim.purify import PairEnsemble, purify_schedule
from qcs_sim.qcs import QCSConfig, optimize_rounds, optimized_budget_vs_pairs, run_trials
from qcs_sim.qmath import fidelity
from utils.data_processor import DataProcessor
from utils.report_generator import ReportGenerator

logger = logging.getLogger(__name__)

PS = 1e-12

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_INVARIANT = 4

COMMON_PARAMS = [
    Param("seed", parse_count, help="Master seed (default QCS_SEED or 0)"),
    Param("out", str, help="Output file (default QCS_OUTPUT_DIR/<command>.<format>)"),
    Param("format", choice("csv", "json"), "csv", help="csv or json"),
    Param("workers", parse_count, help="Worker threads (default QCS_WORKERS or 1)"),
    Param("log-level", lambda v: choice(*LOG_LEVELS)(str(v).upper()), help="Logging level"),
]

COMMAND_PARAMS: Dict[str, List[Param]] = {
    "twirl-check": [
        Param("grid", parse_count, 20, help="Grid points per axis over p in [0,1] and phi in [0,2pi)"),
    ],
    "purify": [
        Param("f0", float, 0.9, help="Initial Werner fidelity"),
        Param("n-pairs", parse_count, 1024, help="Initial pair count"),
        Param("rounds", parse_count, 4, help="Purification rounds"),
        Param("mode", choice("analytic", "montecarlo", "both"), "analytic", help="Trajectory mode"),
        Param("yield", choice("ideal", "realistic"), "ideal", help="Analytic pair accounting"),
    ],
    "qcs": [
        Param("m", parse_count, 1000, help="Pairs per estimate"),
        Param("omega", float, 1.0, help="Angular frequency in rad/s"),
        Param("t-true", float, 1.0, help="True elapsed time in seconds"),
        Param("epsilon", float, 0.0, help="Residual phase on the pairs"),
        Param("epsilon-assumed", float, 0.0, help="Phase subtracted by the estimator"),
        Param("fidelity", float, 1.0, help="Werner fidelity of the pairs"),
        Param("trials", parse_count, 100, help="Repeated estimates"),
        Param("method", choice("auto", "binomial", "per-qubit"), "auto", help="Sampling method"),
        Param("emit", choice("trials", "summary"), "trials", help="Per-trial rows or one summary row"),
    ],
    "budget": [
        Param("f0", parse_float_list, "0.9", help="Comma-separated initial fidelities"),
        Param("n-pairs", parse_count_list, "1e5", help="Comma-separated pair counts"),
        Param("inv-omega-ps", float, 17.0, help="1/omega in picoseconds"),
        Param("n-max", parse_count, 20, help="Largest round count considered"),
    ],
    "e2e": [
        Param("n-pairs", parse_count, 4096, help="Pairs Charlie distributes"),
        Param("p", float, 0.2, help="Depolarizing probability"),
        Param("inv-omega-ps", float, 17.0, help="1/omega in picoseconds"),
        Param("offset-alice-ps", float, 0.0, help="Alice's clock offset in ps"),
        Param("offset-bob-ps", float, 0.0, help="Bob's clock offset in ps"),
        Param("frame-alice", parse_frame, "0,0", help="theta0,theta1 for Alice"),
        Param("frame-bob", parse_frame, "0,0", help="theta0,theta1 for Bob"),
        Param("frame-charlie", parse_frame, "0,0", help="theta0,theta1 for Charlie"),
        Param("rounds", parse_rounds, "2", help="Purification rounds or 'auto'"),
        Param("mode", choice("montecarlo", "analytic"), "montecarlo", help="Purification mode"),
        Param("yield", choice("ideal", "realistic"), "ideal", help="Analytic pair accounting"),
        Param("latency", float, 0.0, help="Classical latency in seconds"),
        Param("jitter", float, 0.0, help="Uniform latency jitter width in seconds"),
        Param("delay-party", choice("bob", "alice"), "bob", help="Party whose qubit carries the delay"),
        Param("seeds", parse_count, 1, help="Number of consecutive seeds to run"),
    ],
}

# Keys that do not change the numbers in the output.
_HEADER_EXCLUDED = ("out", "log-level", "workers")


@contextmanager
def _config_errors():
    """Turn validation failures raised while building inputs into ConfigError."""
    try:
        yield
    except QCSError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcs-sim",
        description="Asynchronous quantum clock synchronization simulator",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, params in COMMAND_PARAMS.items():
        sub = subparsers.add_parser(command)
        sub.add_argument("--config", default=None, help="JSON file with kebab-case keys")
        for p in COMMON_PARAMS + params:
            sub.add_argument(f"--{p.key}", dest=p.dest, default=None, help=p.help)
    return parser


def header_config(command: str, cfg: Dict[str, Any]) -> Dict[str, Any]:
    header = {k: v for k, v in cfg.items() if k not in _HEADER_EXCLUDED}
    header["command"] = command
    header["version"] = __version__
    return header


def output_path(command: str, cfg: Dict[str, Any], settings: Settings, suffix: str = "") -> str:
    ext = cfg["format"]
    if cfg.get("out"):
        stem, given_ext = os.path.splitext(cfg["out"])
        return f"{stem}{suffix}{given_ext or '.' + ext}"
    return os.path.join(settings.output_dir, f"{command}{suffix}.{ext}")


def cmd_twirl_check(cfg: Dict[str, Any], settings: Settings, out: DataProcessor) -> None:
    grid = cfg["grid"]
    with _config_errors():
        if grid < 1:
            raise ValueError(f"grid must be >= 1, got {grid}")
    singlet = phase_singlet(0.0)
    psi_minus = bell_projectors()[0]
    rows = []
    for p in np.linspace(0.0, 1.0, grid):
        for phi in 2.0 * math.pi * np.arange(grid) / grid:
            p, phi = float(p), float(phi)
            rho = noisy_phase_pair(p, phi)
            averaged = twirl_average(rho)
            weights = twirl(rho)
            closed = twirl_closed_form(p, phi)
            _, off_diagonal = bell_weights(averaged)
            residual = float(np.max(np.abs(averaged.matrix - closed.to_density().matrix)))
            contracted = float(np.real(np.trace(psi_minus @ rho.matrix)))
            row = {"p": p, "phi": phi}
            row.update({f"w_{label}": w for label, w in zip(BELL_LABELS, weights.as_tuple())})
            row.update({
                "F_closed_form": singlet_fidelity(p, phi),
                "F_contracted": fidelity(rho, singlet),
                "residual_closed_form": residual,
                "residual_off_diagonal": off_diagonal,
                "residual_fidelity": abs(contracted - singlet_fidelity(p, phi)),
            })
            rows.append(row)
    df = pd.DataFrame(rows)
    logger.info(f"Twirl check on {grid}x{grid} grid: max closed-form residual "
                f"{df['residual_closed_form'].max():.3e}")
    out.write_table(df, output_path("twirl-check", cfg, settings), header_config("twirl-check", cfg), cfg["format"])


def cmd_purify(cfg: Dict[str, Any], settings: Settings, out: DataProcessor) -> None:
    with _config_errors():
        initial = PairEnsemble.analytic(cfg["f0"], cfg["n-pairs"])
        if cfg["rounds"] < 0:
            raise ValueError("rounds must be >= 0")
    frames = []
    if cfg["mode"] in ("analytic", "both"):
        trajectory = purify_schedule(initial, cfg["rounds"], "analytic", yield_convention=cfg["yield"])
        frames.append(trajectory.to_dataframe())
    if cfg["mode"] in ("montecarlo", "both"):
        copies = PairEnsemble.werner_copies(cfg["f0"], cfg["n-pairs"])
        trajectory = purify_schedule(copies, cfg["rounds"], "montecarlo", seed=cfg["seed"],
                                     workers=cfg["workers"])
        frames.append(trajectory.to_dataframe())
    df = pd.concat(frames, ignore_index=True)
    out.write_table(df, output_path("purify", cfg, settings), header_config("purify", cfg), cfg["format"])


def cmd_qcs(cfg: Dict[str, Any], settings: Settings, out: DataProcessor) -> None:
    with _config_errors():
        qcs_cfg = QCSConfig(M=cfg["m"], epsilon=cfg["epsilon"], omega=cfg["omega"],
                            t_true=cfg["t-true"], fidelity=cfg["fidelity"])
        if cfg["trials"] < 1:
            raise ValueError("trials must be >= 1")
    stats = run_trials(qcs_cfg, cfg["trials"], cfg["seed"], method=cfg["method"],
                       epsilon_assumed=cfg["epsilon-assumed"], workers=cfg["workers"])
    summary = stats.to_dict()
    logger.info(f"QCS: mean t_hat {summary['t_hat_mean']!r} s, std {summary['t_hat_std']!r} s "
                f"over {summary['trials']} trials")
    if cfg["emit"] == "summary":
        df = pd.DataFrame([summary])
    else:
        M = qcs_cfg.M
        df = pd.DataFrame({
            "trial": np.arange(len(stats.ks)),
            "k": stats.ks,
            "M": M,
            "x": (2.0 * stats.ks - M) / M,
            "t_hat": stats.t_hats,
        })
    out.write_table(df, output_path("qcs", cfg, settings), header_config("qcs", cfg), cfg["format"])


def cmd_budget(cfg: Dict[str, Any], settings: Settings, out: DataProcessor) -> None:
    with _config_errors():
        if cfg["inv-omega-ps"] <= 0:
            raise ValueError("inv-omega-ps must be positive")
        if any(not 0.0 <= f <= 1.0 for f in cfg["f0"]):
            raise ValueError("f0 values must lie in [0, 1]")
        if any(n < 1 for n in cfg["n-pairs"]):
            raise ValueError("n-pairs values must be >= 1")
        if cfg["n-max"] < 0:
            raise ValueError(f"n-max must be >= 0, got {cfg['n-max']}")
    omega = 1.0 / (cfg["inv-omega-ps"] * PS)
    curves = []
    optimized = []
    for f0 in cfg["f0"]:
        for N in cfg["n-pairs"]:
            opt = optimize_rounds(N, f0, omega, cfg["n-max"])
            for b in opt.curve:
                curves.append({
                    "F0": f0,
                    "N": N,
                    "n": b.n_rounds,
                    "F_n": b.F_n,
                    "pairs_remaining": b.pairs_used,
                    "dt_sql_ps": b.dt_sql / PS,
                    "dt_fidelity_ps": b.dt_fidelity / PS,
                    "dt_total_ps": b.dt_total / PS,
                    "optimal": b.n_rounds == opt.n_star,
                })
        table = optimized_budget_vs_pairs(cfg["n-pairs"], f0, omega, cfg["n-max"])
        for col in ("dt_sql", "dt_fidelity", "dt_total"):
            table[f"{col}_ps"] = table.pop(col) / PS
        optimized.append(table)
    header = header_config("budget", cfg)
    out.write_table(pd.DataFrame(curves), output_path("budget", cfg, settings), header, cfg["format"])
    out.write_table(pd.concat(optimized, ignore_index=True),
                    output_path("budget", cfg, settings, suffix="_optimized"), header, cfg["format"])


def build_scenario(cfg: Dict[str, Any], seed: int, workers: int) -> Scenario:
    with _config_errors():
        return Scenario(
            N=cfg["n-pairs"],
            omega=1.0 / (cfg["inv-omega-ps"] * PS),
            channel=ChannelModel(latency=cfg["latency"], jitter=cfg["jitter"], p=cfg["p"]),
            frame_alice=BasisFrame(*cfg["frame-alice"]),
            frame_bob=BasisFrame(*cfg["frame-bob"]),
            frame_charlie=BasisFrame(*cfg["frame-charlie"]),
            offset_alice=cfg["offset-alice-ps"] * PS,
            offset_bob=cfg["offset-bob-ps"] * PS,
            rounds=cfg["rounds"],
            seed=seed,
            mode=cfg["mode"],
            yield_convention=cfg["yield"],
            delay_party=cfg["delay-party"],
            workers=workers,
        )


def cmd_e2e(cfg: Dict[str, Any], settings: Settings, out: DataProcessor) -> None:
    with _config_errors():
        if cfg["inv-omega-ps"] <= 0:
            raise ValueError("inv-omega-ps must be positive")
        if cfg["seeds"] < 1:
            raise ValueError("seeds must be >= 1")
    seeds = [cfg["seed"] + i for i in range(cfg["seeds"])]
    sweep_workers = cfg["workers"] if len(seeds) > 1 else 1
    base = build_scenario(cfg, seeds[0], 1 if len(seeds) > 1 else cfg["workers"])
    check_preconditions(base)

    reports = run_sweep(base, seeds, workers=sweep_workers)
    header = header_config("e2e", cfg)
    path = output_path("e2e", cfg, settings)
    if cfg["format"] == "json":
        out.write_document({"runs": [dict(seed=s, **r.to_dict()) for s, r in zip(seeds, reports)]}, path, header)
    else:
        out.write_table(sweep_summary(reports, seeds), path, header, "csv")
    report_path = os.path.splitext(path)[0] + "_report.txt"
    ReportGenerator().write_run_report(reports[0].to_dict(), header, report_path)
    hits = sum(r.within_budget() for r in reports)
    logger.info(f"{hits}/{len(reports)} runs recovered the offset within 3 dt_total")


COMMANDS: Dict[str, Callable[[Dict[str, Any], Settings, DataProcessor], None]] = {
    "twirl-check": cmd_twirl_check,
    "purify": cmd_purify,
    "qcs": cmd_qcs,
    "budget": cmd_budget,
    "e2e": cmd_e2e,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse `argv`, run one subcommand and return the exit status.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK

    try:
        settings = load_settings()
        file_values = load_config_file(args.config) if args.config else {}
        params = COMMON_PARAMS + COMMAND_PARAMS[args.command]
        env_defaults = {"seed": settings.seed, "workers": settings.workers, "log-level": settings.log_level}
        cfg = resolve_params(params, vars(args), file_values, env_defaults)
        configure_logging(cfg["log-level"])
        if cfg["workers"] < 1:
            raise ConfigError(f"workers must be >= 1, got {cfg['workers']}")
        logger.info(f"Running {args.command} with seed {cfg['seed']}")
        COMMANDS[args.command](cfg, settings, DataProcessor())
        return EXIT_OK
    except ConfigError as e:
        logger.error(f"Configuration error: {str(e)}")
        return EXIT_CONFIG
    except (PreconditionError, ExhaustionError) as e:
        logger.error(f"Refusing to run: {str(e)}")
        return EXIT_PRECONDITION
    except (InvariantError, ProtocolOrderError) as e:
        logger.error(f"Internal invariant failed: {str(e)}")
        return EXIT_INVARIANT
    except ValueError as e:
        logger.error(f"Invalid input: {str(e)}")
        return EXIT_CONFIG


def main() -> None:
    load_dotenv()
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
