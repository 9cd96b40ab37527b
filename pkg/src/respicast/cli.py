import argparse
import hashlib
import json
import logging
import sys
from datetime import date
from enum import Enum
from importlib import metadata
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from prometheus_client import REGISTRY, write_to_textfile
from pydantic import ValidationError

from .config import LogLevel, RespicastConfig, load_config
from .errors import (BasisError, DataError, DelayError, FilterDegeneracyError, GPNumericalError, ScenarioError, ScoringError,
                     TrendConvergenceError, TrendError)
from .scoring import mean_crps_by_horizon, score_forecast, write_horizon_summary_csv, write_score_csv
from .series import CountSeries, Pathogen, SeriesKey, Stream, diff_rounds, read_round, read_series_csv, window_series, write_revisions_csv, write_series_csv
from .smc import (ForecastConfig, fitted_summary, forecast, initialize, read_forecast_samples_csv, run_filter, write_ess_csv,
                  write_fitted_csv, write_forecast_quantiles_csv, write_forecast_samples_csv)
from .spline import SplineBasis
from .synth import load_scenario, simulate_replicates, write_truth_csv
from .trend import TrendPriors, derive_informative_priors, fit_pspline, read_posterior_csv, summarise_trend, write_posterior_csv, write_trend_csv, write_trend_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_DATA = 4
EXIT_DEGENERATE = 5

VERSIONED_PACKAGES = ('respicast', 'numpy', 'scipy', 'pandas', 'pymc', 'arviz')


def _file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _versions() -> Dict[str, str]:
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    return versions


def _argument_value(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, list):
        return [str(v) for v in value]
    return None if value is None else str(value)


def write_manifest(directory: Path, command: str, args: argparse.Namespace, config: RespicastConfig, inputs: Sequence[Path], seed: Optional[int]) -> Path:
    '''Run manifest without timestamps, so identical invocations produce identical files.'''
    arguments = {k: _argument_value(v) for k, v in sorted(vars(args).items()) if k != 'handler'}
    manifest = {
        'command': command,
        'arguments': arguments,
        'config_sha256': config.config_hash(),
        'inputs': {str(p): _file_digest(p) for p in inputs},
        'seed': seed,
        'versions': _versions(),
    }
    path = directory / 'manifest.json'
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def _output_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_trend(args: argparse.Namespace, config: RespicastConfig) -> int:
    series = read_series_csv(args.input, args.pathogen, args.stream)
    window_days = args.window_days or config.trend.window_days
    series = window_series(series, window_days)
    logger.info(f'Fitting {series!r} over the trailing {len(series)} days')

    sampler = config.trend.sampler
    updates = {}
    if args.seed is not None:
        updates['seed'] = args.seed
    if args.threads is not None:
        updates['cores'] = min(args.threads, sampler.chains)
    sampler = sampler.model_copy(update=updates)

    if args.priors_from is not None:
        priors = derive_informative_priors(read_posterior_csv(args.priors_from), config.trend.tau_upper, config.trend.k_upper)
    else:
        priors = TrendPriors(tau_upper=config.trend.tau_upper, k_upper=config.trend.k_upper)
    logger.info(f'Priors: tau {priors.tau.kind.value} (mean {priors.tau.mean}, sd {priors.tau.sd}), '
                f'k {priors.k.kind.value} (mean {priors.k.mean}, sd {priors.k.sd})')

    basis = SplineBasis.for_range(series.date_range, config.trend.knot_spacing, extension=config.trend.extension)
    out = _output_dir(args.output)
    try:
        samples = fit_pspline(series, basis, priors, sampler, dow=args.dow)
    except TrendConvergenceError as e:
        if e.diagnostics is not None:
            with open(out / 'diagnostics.json', 'w') as f:
                json.dump(e.diagnostics.to_dict(), f, indent=2, sort_keys=True)
        raise

    summary = summarise_trend(samples)
    if args.format == 'json':
        write_trend_json(summary, out / 'trend.json')
    else:
        write_trend_csv(summary, out / 'trend.csv')
    write_posterior_csv(samples, out / 'posterior.csv')
    with open(out / 'diagnostics.json', 'w') as f:
        json.dump(samples.diagnostics.to_dict(), f, indent=2, sort_keys=True)

    inputs = [args.input] + ([args.priors_from] if args.priors_from is not None else [])
    write_manifest(out, 'trend', args, config, inputs, sampler.seed)
    return EXIT_OK


def cmd_forecast(args: argparse.Namespace, config: RespicastConfig) -> int:
    if args.cases is None and args.admissions is None:
        raise DataError('forecast needs --cases and/or --admissions')
    delays = config.pathogen_delays(args.pathogen)
    if args.cases is not None and delays.report is None:
        raise DataError(f'{args.pathogen.value} is forecast from admissions only; it has no infection-to-report delay')

    cases = read_series_csv(args.cases, args.pathogen, Stream.cases) if args.cases is not None else None
    admissions = read_series_csv(args.admissions, args.pathogen, Stream.admissions) if args.admissions is not None else None
    present: List[CountSeries] = [s for s in (cases, admissions) if s is not None]
    origin = args.origin_date or min(s.origin_date for s in present)

    overrides = {}
    for name, value in (('horizon', args.horizon), ('n_particles', args.particles), ('lag', args.lag), ('seed', args.seed)):
        if value is not None:
            overrides[name] = value
    try:
        forecast_config = ForecastConfig.from_settings(config, args.pathogen, **overrides)
    except ValueError as e:
        raise DataError(f'Invalid forecast settings: {e}')

    ensemble = initialize(cases, admissions, forecast_config, origin, args.pathogen)
    run_filter(ensemble)
    result = forecast(ensemble)
    fitted = fitted_summary(ensemble)

    out = _output_dir(args.output)
    write_forecast_quantiles_csv(result, out / 'forecast_quantiles.csv')
    write_forecast_samples_csv(result, out / 'forecast_samples.csv', config.filter.export_samples, forecast_config.seed)
    write_fitted_csv(fitted, out / 'rt.csv')
    write_ess_csv(fitted, out / 'ess.csv')
    rt = result.rt_origin
    logger.info(f'R_t on {rt.date}: mean {rt.mean:.3f}, 95% interval {rt.quantiles[0]:.3f} to {rt.quantiles[-1]:.3f}')

    inputs = [p for p in (args.cases, args.admissions) if p is not None]
    write_manifest(out, 'forecast', args, config, inputs, forecast_config.seed)
    return EXIT_OK


def _parse_truth(values: Sequence[str], pathogen: Pathogen, streams: Sequence[Stream]) -> Dict[Stream, CountSeries]:
    truth = {}
    for value in values:
        target, sep, path = value.partition('=')
        if sep:
            try:
                key = SeriesKey.parse(target)
            except ValueError:
                raise DataError(f'Truth target {target!r} is not <pathogen>/<stream>')
            if key.pathogen != pathogen:
                raise DataError(f'Truth target {key} does not match forecast pathogen {pathogen.value}')
        else:
            if len(streams) != 1:
                raise DataError('Truth given without a target, but the forecast has several targets; use TARGET=PATH')
            key, path = SeriesKey(pathogen, streams[0]), value
        truth[key.stream] = read_series_csv(path, key.pathogen, key.stream)
    return truth


def cmd_score(args: argparse.Namespace, config: RespicastConfig) -> int:
    transform = args.transform or config.scoring.transform
    n_samples = args.samples or config.scoring.n_samples
    seed = args.seed if args.seed is not None else config.scoring.seed

    records = []
    truth: Optional[Dict[Stream, CountSeries]] = None
    for path in args.forecast:
        result = read_forecast_samples_csv(path)
        if truth is None:
            truth = _parse_truth(args.truth, result.pathogen, list(result.samples))
        records.extend(score_forecast(result, truth, transform, config.scoring.epsilon, n_samples, seed, strict=True))
    if len(records) == 0:
        raise ScoringError('Nothing was scored')

    out = _output_dir(args.output)
    write_score_csv(records, out / 'scores.csv')
    write_horizon_summary_csv(mean_crps_by_horizon(records), out / 'scores_by_horizon.csv')

    truth_paths = [Path(v.partition('=')[2] or v) for v in args.truth]
    write_manifest(out, 'score', args, config, list(args.forecast) + truth_paths, seed)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, config: RespicastConfig) -> int:
    spec = load_scenario(args.scenario, config)
    seed = args.seed if args.seed is not None else spec.seed
    results = simulate_replicates(spec, args.replicates, seed)

    out = _output_dir(args.output_dir)
    for result in results:
        directory = _output_dir(out / f'replicate_{result.replicate:03d}')
        write_truth_csv(result, directory / 'truth.csv')
        for s in result.observed():
            write_series_csv(s, directory / f'{s.pathogen.value}_{s.stream.value}.csv')
    n_extinct = sum(r.extinct for r in results)
    logger.info(f'Simulated {len(results)} replicates of {spec.length} days ({n_extinct} extinct) into {out}')
    write_manifest(out, 'simulate', args, config, [args.scenario], seed)
    return EXIT_OK


def cmd_diff_rounds(args: argparse.Namespace, config: RespicastConfig) -> int:
    earlier = read_round(args.earlier, 1)
    later = read_round(args.later, 2)
    if len(set(earlier.series) & set(later.series)) == 0:
        raise DataError(f'{args.earlier} and {args.later} share no <pathogen>_<stream> series')
    revisions = diff_rounds(earlier, later)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_revisions_csv(revisions, args.output)
    logger.info(f'{len(revisions)} revised counts between {args.earlier} and {args.later}')

    inputs = sorted(Path(args.earlier).glob('*.csv')) + sorted(Path(args.later).glob('*.csv'))
    write_manifest(args.output.parent, 'diff-rounds', args, config, inputs, None)
    return EXIT_OK


def _pathogen(value: str) -> Pathogen:
    try:
        return Pathogen(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f'unknown pathogen {value!r}, expected one of {[p.value for p in Pathogen]}')


def _stream(value: str) -> Stream:
    try:
        return Stream(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f'unknown stream {value!r}, expected cases or admissions')


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f'must be at least 1, got {number}')
    return number


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, default=None, help='YAML settings file (default: $RESPICAST_CONFIG or ./settings.yaml)')
    common.add_argument('--log-level', type=LogLevel, default=None, choices=list(LogLevel))
    common.add_argument('--threads', type=_positive_int, default=None, help='Cap on sampler chain processes (the particle filter runs in one vectorised process)')
    common.add_argument('--seed', type=int, default=None)

    parser = argparse.ArgumentParser(prog='respicast', description='Trend estimation, forecasting and scoring for respiratory surveillance counts')
    commands = parser.add_subparsers(dest='command', required=True)

    trend = commands.add_parser('trend', parents=[common], help='Fit the P-spline trend model')
    trend.add_argument('--input', type=Path, required=True)
    trend.add_argument('--pathogen', type=_pathogen, required=True)
    trend.add_argument('--stream', type=_stream, required=True)
    trend.add_argument('--window-days', type=int, default=None)
    trend.add_argument('--dow', action='store_true', help='Fit day-of-week effects jointly')
    trend.add_argument('--priors-from', type=Path, default=None, help='Posterior export of an earlier fit')
    trend.add_argument('--output', type=Path, required=True)
    trend.add_argument('--format', choices=['csv', 'json'], default='csv')
    trend.set_defaults(handler=cmd_trend)

    fc = commands.add_parser('forecast', parents=[common], help='Filter to the origin date and forecast')
    fc.add_argument('--cases', type=Path, default=None)
    fc.add_argument('--admissions', type=Path, default=None)
    fc.add_argument('--pathogen', type=_pathogen, required=True)
    fc.add_argument('--origin-date', type=date.fromisoformat, default=None)
    fc.add_argument('--horizon', type=int, default=None)
    fc.add_argument('--particles', type=int, default=None)
    fc.add_argument('--lag', type=int, default=None)
    fc.add_argument('--output', type=Path, required=True)
    fc.set_defaults(handler=cmd_forecast)

    score = commands.add_parser('score', parents=[common], help='Score forecast samples against observed counts')
    score.add_argument('--forecast', type=Path, nargs='+', required=True)
    score.add_argument('--truth', nargs='+', required=True, help='TARGET=PATH, or PATH for single-target forecasts')
    score.add_argument('--transform', choices=['log1p', 'log'], default=None)
    score.add_argument('--samples', type=int, default=None)
    score.add_argument('--output', type=Path, required=True)
    score.set_defaults(handler=cmd_score)

    sim = commands.add_parser('simulate', parents=[common], help='Simulate synthetic epidemics from a scenario file')
    sim.add_argument('--scenario', type=Path, required=True)
    sim.add_argument('--replicates', type=_positive_int, default=1)
    sim.add_argument('--output-dir', type=Path, required=True)
    sim.set_defaults(handler=cmd_simulate)

    diff = commands.add_parser('diff-rounds', parents=[common], help='List counts revised between two data rounds')
    diff.add_argument('--earlier', type=Path, required=True)
    diff.add_argument('--later', type=Path, required=True)
    diff.add_argument('--output', type=Path, required=True)
    diff.set_defaults(handler=cmd_diff_rounds)

    return parser


def _run(handler: Callable[[argparse.Namespace, RespicastConfig], int], args: argparse.Namespace, config: RespicastConfig) -> int:
    try:
        return handler(args, config)
    except TrendConvergenceError as e:
        logger.error(str(e))
        return EXIT_NOT_CONVERGED
    except FilterDegeneracyError as e:
        logger.error(str(e))
        return EXIT_DEGENERATE
    except ScenarioError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (DataError, DelayError, BasisError, TrendError, ScoringError, GPNumericalError) as e:
        logger.error(str(e))
        return EXIT_DATA
    except ValueError as e:
        logger.error(f'Invalid argument: {e}')
        return EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(format='%(asctime)s %(name)-15s %(levelname)-8s %(processName)-10s %(message)s')

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        config = load_config(args.config)
    except (FileNotFoundError, ValidationError) as e:
        logger.error(f'Invalid configuration: {e}')
        return EXIT_USAGE

    level = args.log_level or config.log_level
    logging.getLogger().setLevel(level.value)
    logger.info(f'Running {args.command}. Config: {config.model_dump_json(indent=2)}')

    code = _run(args.handler, args, config)
    if config.metrics_file is not None:
        write_to_textfile(str(config.metrics_file), REGISTRY)
    return code


if __name__ == '__main__':
    sys.exit(main())
