"""
Command-line entry point: `python -m roughldp <command> [check] [flags]`.

Commands are `simulate`, `cov`, `rate` and `verify` (with a check name).
Settings come from RunConfig defaults, then a JSON file given with
`--config`, then the command-line flags. Every artifact embeds the version
and the resolved config, so a run can be repeated from its own output.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import covariance, ldp_verify, rate_solver
from .params import Grid, ModelParams
from .rbergomi import mc_summary, running_drift, simulate_model, write_model_csv
from .utilities import artifact, dump_json, ensure_directory, format_csv, write_csv, write_json

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "cov", "rate", "verify")
CHECKS = ("slope", "expequiv", "borell", "holder", "selfsim", "scaling")
FORMATS = ("json", "csv")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

# settings that change where or how fast a run happens, never what it produces
EXECUTION_ONLY = ("threads", "out", "config", "verbose")

DEFAULT_N = {
    "simulate": 256,
    "cov": 16,
    "rate": 32,
    "slope": 256,
    "expequiv": 256,
    "borell": 512,
    "holder": 1024,
    "selfsim": 256,
    "scaling": 256,
}
DEFAULT_N_PATHS = {
    "simulate": 16,
    "slope": 100_000,
    "expequiv": 100_000,
    "borell": 100_000,
    "holder": 200,
    "selfsim": 10_000,
    "scaling": 10_000,
}
DEFAULT_LADDER = {
    "slope": [0.5, 0.35, 0.25, 0.18, 0.12],
    "expequiv": [0.5, 0.25, 0.1],
}


@dataclass
class RunConfig:
    """
    One run of the command-line tool. `None` means "the command's default",
    filled in by `resolve` before anything is executed or echoed.
    """

    command: str = "simulate"
    check: Optional[str] = None
    alpha: float = -0.25
    eta: float = 1.0
    rho: float = -0.7
    v0: float = 0.04
    n: Optional[int] = None
    seed: int = 0
    n_paths: Optional[int] = None
    rate_n: Optional[int] = None
    u: List[float] = dataclasses.field(default_factory=lambda: [0.2])
    eps: Optional[float] = None
    delta: float = 0.01
    ladder: Optional[List[float]] = None
    mode: str = rate_solver.CORRELATED
    x: List[float] = dataclasses.field(default_factory=lambda: [2.5])
    x_relative: bool = False
    a: List[float] = dataclasses.field(default_factory=lambda: [0.25, 0.5, 1.0])
    s: Optional[float] = None
    t: Optional[float] = None
    format: str = "json"
    out: Optional[str] = None
    threads: int = 1
    config: Optional[str] = None
    verbose: int = 0

    @property
    def params(self):
        return ModelParams(self.alpha, self.eta, self.rho, self.v0)

    @property
    def task(self):
        return self.check if self.command == "verify" else self.command

    def resolve(self):
        """Validate the command and fill in command-dependent defaults."""
        if self.command not in COMMANDS:
            raise ValueError(f"Unknown command `{self.command}`; expected one of {', '.join(COMMANDS)}.")
        if self.command == "verify":
            if self.check not in CHECKS:
                raise ValueError(f"`verify` needs a check, one of {', '.join(CHECKS)}; got `{self.check}`.")
        elif self.check is not None:
            raise ValueError(f"`{self.command}` takes no check argument (got `{self.check}`).")
        if self.format not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}, got `{self.format}`.")
        if self.mode not in rate_solver.MODES:
            raise ValueError(f"mode must be one of {rate_solver.MODES}, got `{self.mode}`.")
        if int(self.threads) < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}.")
        ModelParams(self.alpha, self.eta, self.rho, self.v0)

        task = self.task
        updates = {}
        for name in ("u", "x", "a", "ladder"):
            value = getattr(self, name)
            if isinstance(value, (int, float)):
                updates[name] = [float(value)]
        if self.n is None:
            updates["n"] = DEFAULT_N[task]
        if self.n_paths is None and task in DEFAULT_N_PATHS:
            updates["n_paths"] = DEFAULT_N_PATHS[task]
        if self.ladder is None and task in DEFAULT_LADDER:
            updates["ladder"] = list(DEFAULT_LADDER[task])
        if self.rate_n is None and task == "slope":
            updates["rate_n"] = ldp_verify.RATE_N
        if self.eps is None and task in ("simulate", "rate"):
            updates["eps"] = 1.0
        if self.eps is None and task == "scaling":
            updates["eps"] = 0.5
        return dataclasses.replace(self, **updates)

    def echo(self):
        """The config as written into artifacts: model parameters nested, execution settings dropped."""
        document = {k: v for k, v in dataclasses.asdict(self).items() if k not in EXECUTION_ONLY}
        document["params"] = {name: document.pop(name) for name in ("alpha", "eta", "rho", "v0")}
        return document


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ValueError(message)


def _floats(text):
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got `{text}`")


def build_parser():
    parser = ArgumentParser(
        prog="roughldp",
        description="Rough Bergomi simulation, rate functions and Monte Carlo checks.",
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument("command", help=f"one of {', '.join(COMMANDS)}")
    parser.add_argument("check", nargs="?", help=f"verify check, one of {', '.join(CHECKS)}")

    model = parser.add_argument_group("model")
    model.add_argument("--alpha", type=float, help="roughness exponent in (-1/2, 0)")
    model.add_argument("--eta", type=float, help="vol-of-vol, > 0")
    model.add_argument("--rho", type=float, help="spot-vol correlation in [-1, 1]")
    model.add_argument("--v0", type=float, help="initial variance, > 0")

    run = parser.add_argument_group("run")
    run.add_argument("--n", type=int, help="grid steps on [0, 1]")
    run.add_argument("--seed", type=int, help="root seed of the random streams")
    run.add_argument("--n-paths", dest="n_paths", type=int, help="Monte Carlo replicas")
    run.add_argument("--rate-n", dest="rate_n", type=int, help="solver grid of the slope reference (also solved at twice this)")
    run.add_argument("--u", type=_floats, help="log-price level(s), comma-separated")
    run.add_argument("--eps", type=float, help="small-noise parameter")
    run.add_argument("--delta", type=float, help="exponential equivalence threshold")
    run.add_argument("--ladder", type=_floats, help="decreasing t (slope) or eps (expequiv) values")
    run.add_argument("--mode", help="rate function: correlated or uncorrelated")
    run.add_argument("--x", type=_floats, help="Borell-TIS levels")
    run.add_argument("--x-relative", dest="x_relative", action="store_true", help="read --x as offsets above E sup Z")
    run.add_argument("--a", type=_floats, help="self-similarity factors in (0, 1]")
    run.add_argument("--s", type=float, help="first covariance time")
    run.add_argument("--t", type=float, help="second covariance time")

    output = parser.add_argument_group("output")
    output.add_argument("--out", help="output directory; documents go to stdout when omitted")
    output.add_argument("--format", help="stdout format: json or csv")
    output.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    output.add_argument("--config", help="JSON file of settings, overridden by flags")
    output.add_argument("-v", "--verbose", action="count", help="more log output on stderr")
    return parser


def load_config_file(path):
    """Settings from a JSON file: flat RunConfig fields, or an artifact's config echo."""
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"Cannot read config file `{path}`: {e}") from e
    if not isinstance(document, dict):
        raise ValueError(f"Config file `{path}` must hold a JSON object.")
    document = dict(document)
    if isinstance(document.get("config"), dict) and "version" in document:
        document = dict(document["config"])
    params = document.pop("params", None)
    if isinstance(params, dict):
        document.update(params)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(document) - known)
    if unknown:
        raise ValueError(f"Unknown settings in `{path}`: {', '.join(unknown)}.")
    return document


def parse_config(argv=None):
    flags = vars(build_parser().parse_args(argv))
    settings = {}
    if "config" in flags:
        settings.update(load_config_file(flags["config"]))
    settings.update(flags)
    return RunConfig(**settings).resolve()


def _emit(config, name, document, table=None):
    """Write `document` (and an optional CSV table) under --out, or print to stdout."""
    if config.out:
        ensure_directory(config.out)
        written = [write_json(os.path.join(config.out, f"{name}.json"), document)]
        if table is not None:
            header, columns = table
            written.append(write_csv(os.path.join(config.out, f"{name}.csv"), header, columns))
        for path in written:
            logger.info("wrote %s", path)
        return
    if config.format == "csv":
        if table is None:
            raise ValueError(f"`{config.task}` has no CSV output; use --format json.")
        sys.stdout.write(format_csv(*table))
    else:
        sys.stdout.write(dump_json(document))


def _summary(values):
    return mc_summary(values) if len(values) > 1 else float(values[0])


def run_simulate(config):
    grid = Grid(config.n)
    paths = simulate_model(grid, config.params, config.n_paths, config.seed, config.eps, config.threads)
    integrated = 2.0 * running_drift(paths.v, grid)[:, -1]
    document = artifact(
        config.echo(),
        terminal_logprice=_summary(paths.x[:, -1]),
        terminal_variance=_summary(paths.v[:, -1]),
        integrated_variance=_summary(integrated),
    )
    if config.out:
        for path in write_model_csv(paths, os.path.join(config.out, "paths")):
            logger.debug("wrote %s", path)
    _emit(config, "summary", document)


def run_cov(config):
    params = config.params
    if config.s is not None or config.t is not None:
        if config.s is None or config.t is None:
            raise ValueError("`cov` needs both --s and --t for a single value.")
        document = artifact(
            config.echo(),
            value=covariance.cov_zz(config.s, config.t, params),
            cov_zw=covariance.cov_zw(config.s, config.t, params),
            cov_zb=covariance.cov_zb(config.t, params),
        )
        _emit(config, "cov", document)
        return
    times = Grid(config.n).times[1:]
    s, t = np.meshgrid(times, times, indexing="ij")
    s, t = s.ravel(), t.ravel()
    zz = covariance.cov_zz(s, t, params)
    zw = covariance.cov_zw(s, t, params)
    table = (["s", "t", "cov_zz", "cov_zw"], [s, t, zz, zw])
    document = artifact(
        config.echo(),
        times=times,
        cov_zz=np.reshape(zz, (times.size, times.size)),
        cov_zw=np.reshape(zw, (times.size, times.size)),
        cov_zb=covariance.cov_zb(times, params),
    )
    _emit(config, "cov", document, table)


def run_rate(config):
    if not config.u:
        raise ValueError("`rate` needs at least one --u value.")
    problem = rate_solver.RateProblem(
        target=config.u[0],
        params=config.params,
        grid=Grid(config.n),
        eps=config.eps,
        mode=config.mode,
        seed=config.seed,
        threads=config.threads,
    )
    results = rate_solver.rate_table(config.u, problem)
    if len(results) == 1:
        _emit(config, "rate", artifact(config.echo(), **results[0].as_dict()))
        return
    table = (
        ["u", "value", "residual", "converged"],
        [
            config.u,
            [r.value for r in results],
            [r.residual for r in results],
            [float(r.converged) for r in results],
        ],
    )
    document = artifact(config.echo(), sweep=[dict(u=u, **r.as_dict()) for u, r in zip(config.u, results)])
    _emit(config, "rate_sweep", document, table)


def run_verify(config):
    params = config.params
    check = config.check
    table = None
    if check == "slope":
        report = ldp_verify.slope_check(
            config.u[0],
            config.ladder,
            params,
            config.n_paths,
            config.seed,
            eps=config.eps,
            n=config.n,
            threads=config.threads,
            rate_n=config.rate_n,
        )
        table = (["t", "p_hat", "std_err", "log_p"], [report.ladder, report.p_hat, report.std_err, report.log_p])
    elif check == "expequiv":
        report = ldp_verify.exp_equiv_check(
            config.delta, config.ladder, params, config.n_paths, config.seed, config.n, config.threads
        )
    elif check == "borell":
        report = ldp_verify.borell_tis_check(
            config.x, params, config.n_paths, config.seed, config.n, config.threads, relative=config.x_relative
        )
    elif check == "holder":
        report = ldp_verify.holder_check(params, config.n, config.n_paths, config.seed, config.threads)
    elif check == "selfsim":
        report = ldp_verify.selfsim_check(config.a, params, config.n, config.n_paths, config.seed, config.threads)
    else:
        report = ldp_verify.scaling_check(config.eps, params, config.n, config.n_paths, config.seed, config.threads)

    status = "PASS" if report.passed else "FAIL"
    logger.info("verify %s: %s", check, status)
    _emit(config, f"verify_{check}", artifact(config.echo(), check=check, report=report), table)


HANDLERS = {
    "simulate": run_simulate,
    "cov": run_cov,
    "rate": run_rate,
    "verify": run_verify,
}


def run(config):
    """Execute a resolved RunConfig and return the process exit status."""
    try:
        HANDLERS[config.command](config)
    except ArithmeticError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as e:
        logger.error("%s", e)
        return EXIT_INVALID
    return EXIT_OK


def configure_logging(verbose):
    level = max(logging.DEBUG, logging.WARNING - 10 * int(verbose or 0))
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    try:
        config = parse_config(argv)
    except ValueError as e:
        configure_logging(0)
        logger.error("%s", e)
        return EXIT_INVALID
    configure_logging(config.verbose)
    return run(config)
