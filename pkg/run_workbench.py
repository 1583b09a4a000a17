#!/usr/bin/env python3
"""
UWGNN power-control workbench
Generate D2D datasets, solve them with WMMSE, train the unrolled graph network
and run the evaluation suites
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import argparse
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Union, get_args, get_origin, get_type_hints

import numpy as np
from dotenv import dotenv_values
from tqdm import tqdm

from channel_sim import (ChannelConfig, ChannelDistribution, ChannelSimError, generate_dataset,
                         load_dataset, save_dataset)
from experiments import (DEFAULT_TEST_COUNT, DEFAULT_TRAIN_COUNT, SPARSE_TRAIN_ETA, TOPOLOGY_DIRECTIONS,
                         ExperimentError, UwgnnPolicy, aggregation_suite, default_shift_grid, held_out_seed,
                         distribution_shift_suite, feature_correlation_trace, mobility_suite, ratio_table,
                         sample_complexity_suite, scalability_suite, topology_suite, width_sweep_suite)
from nn_core import NNCoreError
from report_archive import ReportArchiveManager
from shared_utils import digest_of
from uwgnn import MLP_READINGS, UwgnnConfig, UwgnnError, UwgnnModel, train
from wmmse_core import WmmseError, single_run_rates, solve_best_of

logger = logging.getLogger(__name__)

SUITES = ("ratio", "scalability", "shift", "topology", "mobility", "sample_complexity",
          "corr", "width", "aggregation")

PRESETS = {
    "full": {"noise_db": 10.0, "count": DEFAULT_TRAIN_COUNT, "test_count": DEFAULT_TEST_COUNT,
              "epochs": 30, "restarts": 100},
    "desk": {"count": 2000, "test_count": 500, "epochs": 10, "restarts": 10},
}

# execution knobs that never change a result
_UNDIGESTED = ("threads",)


class ConfigError(Exception):
    """Bad configuration file or value"""


@dataclass
class RunConfig:
    preset: str = ""
    seed: int = 0
    threads: int = 1
    # scenario
    n_users: int = 10
    count: int = DEFAULT_TRAIN_COUNT
    family: str = "rayleigh"
    channel_mean: float = 0.0
    channel_std: float = 1.0
    los_strength: float = 1.0
    noise_db: float = 0.0
    p_max: float = 1.0
    weighted: bool = False
    pathloss_exponent: float = 2.0
    eta: Optional[float] = None
    # network
    K: int = 3
    d_u: int = 4
    d_w: int = 4
    d_msg: int = 16
    hidden: int = 8
    mlp_reading: str = "equations"
    share_parameters: bool = True
    aggregation: str = "max"
    # training
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    train_eta: Optional[float] = None
    # baseline
    max_iter: int = 100
    tol: float = 1e-5
    restarts: int = 10
    # suites
    test_count: int = DEFAULT_TEST_COUNT
    test_sizes: List[int] = field(default_factory=lambda: [10, 20, 50])
    direction: str = "dense_to_sparse"
    eta_grid: List[float] = field(default_factory=list)
    speeds: List[float] = field(default_factory=lambda: [0.0, 50.0, 100.0, 200.0])
    horizon: int = 10
    mobility_count: int = 200
    train_sizes: List[int] = field(default_factory=lambda: [100, 1000, 10000])
    repeats: int = 3
    msg_widths: List[int] = field(default_factory=lambda: [4, 8, 16, 32])
    var_widths: List[int] = field(default_factory=lambda: [1, 2, 4, 8])

    def validate(self):
        positive = ("n_users", "threads", "batch_size", "max_iter", "test_count", "mobility_count", "repeats")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("count", "epochs", "restarts", "horizon"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not (self.p_max > 0 and self.channel_std > 0 and self.lr > 0 and self.tol > 0):
            raise ConfigError("p_max, channel_std, lr and tol must be positive")
        if self.family not in ("rayleigh", "rician"):
            raise ConfigError(f"family must be rayleigh or rician, got {self.family}")
        if self.direction not in TOPOLOGY_DIRECTIONS:
            raise ConfigError(f"direction must be one of {TOPOLOGY_DIRECTIONS}, got {self.direction}")
        if any(n < 1 for n in self.test_sizes + self.train_sizes):
            raise ConfigError("test_sizes and train_sizes must be positive")
        if any(s < 0 for s in self.speeds):
            raise ConfigError("speeds must be >= 0")
        try:
            self.uwgnn_config()
            self.distribution()
        except (UwgnnError, ChannelSimError) as e:
            raise ConfigError(str(e)) from e

    def digest(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k not in _UNDIGESTED}
        return digest_of(payload)

    def channel_config(self) -> ChannelConfig:
        return ChannelConfig.from_noise_db(self.noise_db, p_max=self.p_max, weighted=self.weighted,
                                           pathloss_exponent=self.pathloss_exponent)

    def distribution(self) -> ChannelDistribution:
        return ChannelDistribution(self.family, self.channel_mean, self.channel_std, self.los_strength)

    def uwgnn_config(self) -> UwgnnConfig:
        return UwgnnConfig(K=self.K, d_u=self.d_u, d_w=self.d_w, d_msg=self.d_msg, hidden=self.hidden,
                           mlp_reading=self.mlp_reading, share_parameters=self.share_parameters,
                           aggregation=self.aggregation)


_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _coerce(name: str, raw: str, hint):
    """Convert a config-file string to the field's type"""
    text = raw.strip()
    if get_origin(hint) is Union:
        if text.lower() in ("", "none"):
            return None
        hint = next(arg for arg in get_args(hint) if arg is not type(None))
    if get_origin(hint) in (list, List):
        element = get_args(hint)[0]
        return [_coerce(name, part, element) for part in text.split(",") if part.strip()]
    if hint is bool:
        if text.lower() in _TRUE:
            return True
        if text.lower() in _FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got '{raw}'")
    try:
        return hint(text)
    except ValueError as e:
        raise ConfigError(f"{name}: cannot read '{raw}' as {hint.__name__}") from e


def load_config_file(path: str) -> Dict[str, str]:
    """KEY=value pairs from a dotenv-style file, keys normalised to field names"""
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    values = {}
    for key, value in dotenv_values(path).items():
        if value is None:
            raise ConfigError(f"{path}: key '{key}' has no value")
        values[key.strip().lower().replace("-", "_")] = value
    return values


def resolve_config(file_values: Optional[Dict[str, str]] = None, cli_values: Optional[Dict] = None) -> RunConfig:
    """defaults < preset < config file < explicit CLI flags"""
    file_values = dict(file_values or {})
    cli_values = dict(cli_values or {})
    hints = get_type_hints(RunConfig)
    names = {f.name for f in fields(RunConfig)}
    by_lower = {name.lower(): name for name in names}
    file_values = {by_lower.get(key.lower(), key): value for key, value in file_values.items()}
    unknown = sorted(set(file_values) - names)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

    values = {}
    preset = cli_values.get("preset") or file_values.get("preset", "").strip()
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"Unknown preset '{preset}', expected one of {sorted(PRESETS)}")
        values.update(PRESETS[preset])
        values["preset"] = preset
    for key, raw in file_values.items():
        if key != "preset":
            values[key] = _coerce(key, raw, hints[key])
    values.update({k: v for k, v in cli_values.items() if k in names})
    config = RunConfig(**values)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------

def setup_logging(verbose: bool = False, debug: bool = False, log_file: Optional[str] = None,
                  quiet: bool = False):
    """Set up console (and optional file) logging"""
    if debug:
        level = logging.DEBUG
        log_format = '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'
    elif verbose:
        level = logging.INFO
        log_format = '%(asctime)s - %(levelname)s - %(message)s'
    else:
        level = logging.ERROR if quiet else logging.WARNING
        log_format = '%(levelname)s - %(message)s'

    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    handlers = []
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
        handlers.append(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    if verbose or debug:
        import colorama
        from colorama import Fore, Style
        colorama.init()

        class ColoredFormatter(logging.Formatter):
            COLORS = {
                'DEBUG': Fore.CYAN,
                'INFO': Fore.GREEN,
                'WARNING': Fore.YELLOW,
                'ERROR': Fore.RED,
                'CRITICAL': Fore.MAGENTA + Style.BRIGHT
            }

            def format(self, record):
                color = self.COLORS.get(record.levelname, '')
                record = logging.makeLogRecord(record.__dict__)
                record.levelname = f"{color}{record.levelname}{Style.RESET_ALL}"
                return super().format(record)

        console_handler.setFormatter(ColoredFormatter(log_format))
    else:
        console_handler.setFormatter(logging.Formatter(log_format))
    handlers.append(console_handler)

    logging.basicConfig(level=logging.DEBUG if log_file else level, handlers=handlers, force=True)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

class Console:
    """Status lines on stdout; only the final result line survives --quiet"""

    def __init__(self, quiet: bool = False):
        self.quiet = quiet

    def say(self, message: str = ""):
        if not self.quiet:
            print(message)

    def result(self, message: str):
        print(message)

    def banner(self, title: str):
        self.say(f"\n{title}")
        self.say("=" * 40)


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise ConfigError(f"{flag} is required for this command")
    return value


def _sidecar(path: str, suffix: str) -> str:
    stem, _ = os.path.splitext(path)
    return f"{stem}{suffix}"


def cmd_generate(config: RunConfig, out: str, console: Console) -> int:
    out = _require(out, "--out")
    console.banner("📡 GENERATING DATASET")
    samples = generate_dataset(config.count, config.n_users, config.seed, dist=config.distribution(),
                               config=config.channel_config(), eta_lc=config.eta)
    save_dataset(samples, out, seed=config.seed, config_digest=config.digest())
    console.result(f"✅ Wrote {len(samples)} instances (n={config.n_users}) to {out} [{config.digest()}]")
    return 0


def cmd_baseline(config: RunConfig, dataset: str, out: str, console: Console) -> int:
    dataset = _require(dataset, "--dataset")
    out = _require(out, "--out")
    console.banner("📐 WMMSE BASELINE")
    instances = load_dataset(dataset)
    single = single_run_rates(instances, config.max_iter, config.tol, threads=config.threads)
    rows = []
    seeds = np.random.SeedSequence(config.seed).generate_state(max(len(instances), 1))
    for i, inst in enumerate(tqdm(instances, desc="Best-of restarts", disable=console.quiet)):
        row = {"instance_id": i, "n_users": inst.n_users, "single_run_rate": float(single[i])}
        if config.restarts > 0:
            _, best = solve_best_of(inst, config.restarts, seed=int(seeds[i]),
                                    max_iter=config.max_iter, tol=config.tol)
            # restart 0 is the single run
            row["best_of_rate"] = max(best, float(single[i]))
        rows.append(row)
    if not all(math.isfinite(v) for row in rows for v in row.values()):
        raise WmmseError("baseline produced non-finite rates")
    summary = {"count": len(rows), "restarts": config.restarts, "config_digest": config.digest(),
               "seed": config.seed, "dataset": os.path.basename(dataset),
               "mean_single_run_rate": float(np.mean(single)) if rows else 0.0}
    columns = ["instance_id", "n_users", "single_run_rate"] + (["best_of_rate"] if config.restarts else [])
    archive = ReportArchiveManager(os.path.dirname(os.path.abspath(out)))
    name = os.path.splitext(os.path.basename(out))[0]
    archive.write_table(name, rows, summary, columns)
    console.result(f"✅ Baseline rates for {len(rows)} instances written to {archive.path_for(name, '.csv')}")
    return 0


def cmd_train(config: RunConfig, dataset: Optional[str], out: str, console: Console) -> int:
    out = _require(out, "--out")
    console.banner("🧠 TRAINING UWGNN")
    if dataset:
        train_set = load_dataset(dataset)
    else:
        train_set = generate_dataset(config.count, config.n_users, config.seed, dist=config.distribution(),
                                     config=config.channel_config(), eta_lc=config.train_eta)
    cfg = config.uwgnn_config()
    params, curve = train(cfg, train_set, config.epochs, batch_size=config.batch_size, seed=config.seed,
                          lr=config.lr, progress=not console.quiet)
    if not all(math.isfinite(r.train_loss) for r in curve.epochs):
        raise UwgnnError("training curve holds non-finite losses")
    model = UwgnnModel(cfg, params)
    model.save(out, {"seed": config.seed, "config_digest": config.digest(), "epoch": config.epochs,
                     "train_eta": config.train_eta})
    archive = ReportArchiveManager(os.path.dirname(os.path.abspath(out)))
    curve_name = os.path.basename(_sidecar(out, ".curve"))
    archive.write_table(curve_name, curve.rows(),
                        {"config_digest": config.digest(), "seed": config.seed,
                         "initial_val_ratio": curve.initial_val_ratio, "final_val_ratio": curve.final_ratio},
                        ["epoch", "train_loss", "val_ratio"])
    console.say(f"📊 Parameters: {model.n_parameters} (nested count {model.n_parameters_nested})")
    console.result(f"✅ Checkpoint written to {out}; final validation ratio {curve.final_ratio:.4f}")
    return 0


def _test_set(config: RunConfig, dataset: Optional[str]):
    if dataset:
        return load_dataset(dataset)
    return generate_dataset(config.test_count, config.n_users, held_out_seed(config.seed),
                            dist=config.distribution(), config=config.channel_config())


def cmd_eval(config: RunConfig, checkpoint: str, suite: str, dataset: Optional[str], out: str,
             console: Console) -> int:
    checkpoint = _require(checkpoint, "--checkpoint")
    out = _require(out, "--out")
    console.banner(f"🧪 EVALUATING SUITE: {suite}")
    model, meta = UwgnnModel.load(checkpoint)
    policy = UwgnnPolicy(model)
    archive = ReportArchiveManager(out)
    digest = config.digest()
    for name in archive.list_reports():
        try:
            earlier = archive.load_summary(name).get("config_digest")
        except FileNotFoundError:
            continue
        if earlier and earlier != digest:
            logger.warning(f"{out} already holds '{name}' from config {earlier}; outputs will be mixed")
    channel = config.channel_config()
    progress = not console.quiet
    common = {"seed": config.seed, "config_digest": digest}
    written: List[str] = []
    headline: List[float] = []

    def _store_reports(reports):
        for report in reports:
            archive.write_report(report)
            written.append(report.name)
            headline.append(report.summary["mean_ratio"])

    def _store_curves(curves):
        for curve in curves:
            archive.write_curve(curve)
            written.append(curve.name)
            headline.extend(p.mean for p in curve.points)

    if suite == "ratio":
        _store_reports([ratio_table(policy, _test_set(config, dataset), config.restarts,
                                    threads=config.threads, **common)])
    elif suite == "scalability":
        _store_reports(scalability_suite(policy, config.test_sizes, count=config.test_count, config=channel,
                                         dist=config.distribution(), threads=config.threads,
                                         progress=progress, **common))
    elif suite == "shift":
        _store_reports([distribution_shift_suite(policy, shift, n=config.n_users, count=config.test_count,
                                                 config=channel, threads=config.threads, **common)
                        for shift in default_shift_grid()])
    elif suite == "topology":
        _store_reports(topology_suite(policy, config.direction, config.eta_grid or None, n=config.n_users,
                                      count=config.test_count, config=channel, threads=config.threads,
                                      progress=progress, **common))
    elif suite == "mobility":
        _store_curves(mobility_suite(policy, config.speeds, config.horizon, n=config.n_users,
                                     count=config.mobility_count, config=channel, threads=config.threads,
                                     progress=progress, **common))
    elif suite == "sample_complexity":
        _store_curves([sample_complexity_suite(model.cfg, config.train_sizes, _test_set(config, dataset),
                                               config.epochs, n_train=config.n_users, repeats=config.repeats,
                                               batch_size=config.batch_size, lr=config.lr, config=channel,
                                               progress=progress, **common)])
    elif suite == "corr":
        _store_curves([feature_correlation_trace(model, _test_set(config, dataset), **common)])
    elif suite in ("width", "aggregation"):
        train_set = generate_dataset(config.count, config.n_users, config.seed, dist=config.distribution(),
                                     config=channel, eta_lc=config.train_eta)
        test_set = _test_set(config, dataset)
        if suite == "width":
            _store_curves(width_sweep_suite(model.cfg, config.msg_widths, config.var_widths, train_set,
                                            test_set, config.epochs, progress=progress, **common))
        else:
            rows = aggregation_suite(model.cfg, train_set, test_set, config.epochs, seed=config.seed,
                                     progress=progress)
            archive.write_table("aggregation", rows, {"config_digest": digest, "seed": config.seed},
                                ["label", "ratio", "n_parameters", "final_val_ratio"])
            written.append("aggregation")
            headline.extend(row["ratio"] for row in rows)
    else:
        raise ConfigError(f"Unknown suite '{suite}', expected one of {SUITES}")

    if not all(math.isfinite(value) for value in headline):
        raise ExperimentError(f"suite {suite} produced non-finite ratios")
    console.say(archive.summary_table(written))
    stats = archive.get_archive_stats()
    console.say(f"📁 Archive: {stats['total']} entries {stats['by_kind']}, {stats['total_bytes']} bytes")
    console.result(f"✅ Suite {suite}: {len(written)} outputs written to {out} "
                   f"[{digest}, checkpoint {meta.get('config_digest', '?')}]")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _list_of(kind):
    def _parse(text: str):
        try:
            return [kind(part) for part in text.split(",") if part.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from e
    return _parse


def _flag_bool(text: str) -> bool:
    if text.lower() in _TRUE:
        return True
    if text.lower() in _FALSE:
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='KEY=value config file')
    common.add_argument('--preset', type=str, choices=sorted(PRESETS), default=S)
    common.add_argument('--seed', type=int, default=S, help='Master seed for every random draw')
    common.add_argument('--threads', type=int, default=S, help='Worker threads for WMMSE runs')
    common.add_argument('--noise-db', dest='noise_db', type=float, default=S, help='Noise power in dB')
    common.add_argument('--out', type=str, default=None, help='Output file (or directory for eval)')
    common.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')
    common.add_argument('--debug', '-d', action='store_true', help='Enable debug logging')
    common.add_argument('--quiet', '-q', action='store_true', help='Only print the final result line')
    common.add_argument('--log-file', dest='log_file', type=str, default=None, help='Also log to this file')
    # scenario knobs
    common.add_argument('--n', '--n-users', dest='n_users', type=int, default=S)
    common.add_argument('--count', type=int, default=S)
    common.add_argument('--family', type=str, choices=['rayleigh', 'rician'], default=S)
    common.add_argument('--channel-mean', dest='channel_mean', type=float, default=S)
    common.add_argument('--channel-std', dest='channel_std', type=float, default=S)
    common.add_argument('--los-strength', dest='los_strength', type=float, default=S)
    common.add_argument('--p-max', dest='p_max', type=float, default=S)
    common.add_argument('--weighted', type=_flag_bool, default=S)
    common.add_argument('--eta', type=float, default=S, help='Topology mask threshold for generate')

    parser = argparse.ArgumentParser(description='UWGNN / WMMSE power-control workbench')
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('generate', parents=[common], help='Write a dataset file')

    baseline = sub.add_parser('baseline', parents=[common], help='Single-run and best-of WMMSE rates')
    baseline.add_argument('--dataset', type=str, default=None)
    baseline.add_argument('--restarts', type=int, default=S)
    baseline.add_argument('--max-iter', dest='max_iter', type=int, default=S)
    baseline.add_argument('--tol', type=float, default=S)

    network = argparse.ArgumentParser(add_help=False)
    network.add_argument('--K', dest='K', type=int, default=S)
    network.add_argument('--d-u', dest='d_u', type=int, default=S)
    network.add_argument('--d-w', dest='d_w', type=int, default=S)
    network.add_argument('--d-msg', dest='d_msg', type=int, default=S)
    network.add_argument('--hidden', type=int, default=S)
    network.add_argument('--mlp-reading', dest='mlp_reading', choices=list(MLP_READINGS), default=S)
    network.add_argument('--share-parameters', dest='share_parameters', type=_flag_bool, default=S)
    network.add_argument('--aggregation', choices=['max', 'mean', 'sum'], default=S)
    network.add_argument('--epochs', type=int, default=S)
    network.add_argument('--batch-size', dest='batch_size', type=int, default=S)
    network.add_argument('--lr', type=float, default=S)
    network.add_argument('--train-eta', dest='train_eta', type=float, default=S,
                         help=f'Mask the training set (sparse-trained models use {SPARSE_TRAIN_ETA})')

    trainer = sub.add_parser('train', parents=[common, network], help='Train UWGNN and write a checkpoint')
    trainer.add_argument('--dataset', type=str, default=None)

    evaluator = sub.add_parser('eval', parents=[common, network], help='Run an evaluation suite')
    evaluator.add_argument('--checkpoint', type=str, default=None)
    evaluator.add_argument('--suite', type=str, choices=SUITES, required=True)
    evaluator.add_argument('--dataset', type=str, default=None, help='Test set (generated when omitted)')
    evaluator.add_argument('--restarts', type=int, default=S)
    evaluator.add_argument('--test-count', dest='test_count', type=int, default=S)
    evaluator.add_argument('--test-sizes', dest='test_sizes', type=_list_of(int), default=S)
    evaluator.add_argument('--direction', choices=list(TOPOLOGY_DIRECTIONS), default=S)
    evaluator.add_argument('--eta-grid', dest='eta_grid', type=_list_of(float), default=S)
    evaluator.add_argument('--speeds', type=_list_of(float), default=S)
    evaluator.add_argument('--horizon', type=int, default=S)
    evaluator.add_argument('--train-sizes', dest='train_sizes', type=_list_of(int), default=S)
    evaluator.add_argument('--repeats', type=int, default=S)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.debug:
        args.verbose = True
    setup_logging(verbose=args.verbose and not args.quiet, debug=args.debug and not args.quiet,
                  log_file=args.log_file, quiet=args.quiet)
    console = Console(quiet=args.quiet)

    if args.verbose and not args.quiet:
        print("🔍 VERBOSE MODE ENABLED - Detailed logging active")
        if args.debug:
            print("🐛 DEBUG MODE ENABLED - Maximum detail logging")
        print("=" * 60)

    try:
        file_values = load_config_file(args.config) if args.config else {}
        config = resolve_config(file_values, vars(args))
        logger.info(f"Run config digest {config.digest()} (seed {config.seed}, threads {config.threads})")

        if args.command == 'generate':
            return cmd_generate(config, args.out, console)
        if args.command == 'baseline':
            return cmd_baseline(config, args.dataset, args.out, console)
        if args.command == 'train':
            return cmd_train(config, args.dataset, args.out, console)
        return cmd_eval(config, args.checkpoint, args.suite, args.dataset, args.out, console)

    except KeyboardInterrupt:
        logger.info("Process interrupted by user")
        print("⚠️ Process interrupted by user")
        return 1
    except (ConfigError, ChannelSimError, WmmseError, NNCoreError, UwgnnError, ExperimentError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"❌ Error: {e}")
        if args.debug:
            import traceback
            logger.error(traceback.format_exc())
        return 1


if __name__ == "__main__":
    sys.exit(main())
