"""
Command-Line Interface

Subcommands:
- evolve: per-step position distributions of both schemes (heatmap data)
- recurrence: P_continual(T) and/or P_reset(T) for a coin and initial state
- classical: simple-random-walk baseline in d = 1, 2, 3
- experiment: simulated detector records, normalized probabilities, error envelopes
- compare: both quantum schemes side by side with the classical reference

Configuration precedence: built-in defaults (and SINKWALK_ environment
settings) < config file (flat key=value lines) < command-line flags.

Exit status: 0 on success, 2 for configuration errors, 3 for computation errors.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .charts import QUANTUM_POLYA, emit_chart
from .classical_baseline import LatticeWalkSpec
from .config import get_settings
from .experiment_model import CountRecord, ErrorRanges, ImperfectionParams, write_count_record
from .monitoring import SinkSchedule
from .results import Provenance, ResultBundle, config_hash, write_bundle_json, write_table_csv
from .service import SimulationService
from .walk_core import CoinLabel, CoinSpec, InitialSpec, hadamard_coin, hwp_coin, identity_coin

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("evolve", "recurrence", "classical", "experiment", "compare")
COIN_PRESETS = ("hadamard", "identity", "hwp")
FORMATS = ("table", "json", "chart")


class ConfigError(Exception):
    """Invalid, conflicting or unknown configuration"""
    pass


class _ArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on usage errors"""

    def error(self, message):
        raise ConfigError(message)


def _split(value: Any) -> Any:
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


def _default_steps() -> int:
    return get_settings(configure=False).default_steps


def _default_output_dir() -> str:
    return get_settings(configure=False).output_dir


class RunConfig(BaseModel):
    """Validated configuration of one CLI run"""

    model_config = ConfigDict(extra="forbid")

    subcommand: Literal["evolve", "recurrence", "classical", "experiment", "compare"]
    coin: str = Field(default="hadamard", description="hadamard, identity or hwp")
    coin_angle_deg: Optional[float] = Field(default=None, description="Half-wave plate angle for the hwp coin")
    initial: str = Field(default="R", description="R, L, symmetric or two comma-separated complex amplitudes")
    steps: int = Field(default_factory=_default_steps, description="Horizon T")
    scheme: Literal["reset", "continual", "both"] = "both"

    sink_positions: List[int] = Field(default_factory=lambda: [0])
    sink_steps: Optional[List[int]] = None
    sink_residual: float = Field(default=0.0, description="Residual transmission of every sink")
    sink_coins: Optional[List[CoinLabel]] = None

    roundtrip_efficiency: float = 0.8
    arm_loss_asymmetry: float = 0.0
    coin_angle_error_deg: float = 0.0
    detector_efficiencies: Tuple[float, float] = (0.6, 0.7)
    dark_count_rate: float = 0.0
    input_photons: float = 1e4
    mode: Literal["expected", "sampled"] = "expected"
    envelopes: bool = True

    dimension: int = 1
    trials: int = 0
    seed: Optional[int] = None

    output_dir: str = Field(default_factory=_default_output_dir)
    formats: List[Literal["table", "json", "chart"]] = Field(default_factory=lambda: list(FORMATS))

    @field_validator('sink_positions', 'sink_steps', 'sink_coins', 'detector_efficiencies', 'formats', mode='before')
    def split_lists(cls, v):
        return _split(v)

    @field_validator('coin')
    def validate_coin(cls, v):
        if v not in COIN_PRESETS:
            raise ValueError(f"unknown coin '{v}', expected one of {', '.join(COIN_PRESETS)}")
        return v

    @field_validator('initial')
    def validate_initial(cls, v):
        _parse_initial(v)
        return v

    @field_validator('steps')
    def validate_steps(cls, v):
        if v < 1:
            raise ValueError("steps must be at least 1")
        return v

    @field_validator('dimension')
    def validate_dimension(cls, v):
        if v not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        return v

    @field_validator('trials')
    def validate_trials(cls, v):
        if v < 0:
            raise ValueError("trials must be nonnegative")
        return v

    @field_validator('seed')
    def validate_seed(cls, v):
        if v is not None and v < 0:
            raise ValueError("seed must be nonnegative")
        return v

    @field_validator('sink_residual')
    def validate_sink_residual(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("sink_residual must be in [0, 1]")
        return v

    @model_validator(mode='after')
    def validate_combinations(self):
        if self.coin == "hwp" and self.coin_angle_deg is None:
            raise ValueError("coin_angle_deg is required when coin is hwp")
        if self.mode == "sampled" and self.seed is None:
            raise ValueError("seed is required for sampled mode")
        if self.trials > 0 and self.seed is None:
            raise ValueError("seed is required for Monte Carlo trials")
        if not self.formats:
            raise ValueError("formats must name at least one of table, json, chart")
        try:
            self.imperfection_params()
        except ValidationError as e:
            first = e.errors()[0]
            raise ValueError(f"{first['loc'][0]}: {first['msg'].removeprefix('Value error, ')}") from None
        return self

    def coin_spec(self) -> CoinSpec:
        if self.coin == "hadamard":
            return hadamard_coin()
        if self.coin == "identity":
            return identity_coin()
        return hwp_coin(math.radians(self.coin_angle_deg))

    def initial_spec(self) -> InitialSpec:
        return _parse_initial(self.initial)

    def sink_schedule(self) -> SinkSchedule:
        return SinkSchedule.at_positions(
            self.sink_positions,
            steps=self.sink_steps,
            residual_transmission=self.sink_residual,
            coins=self.sink_coins,
        )

    def imperfection_params(self) -> ImperfectionParams:
        return ImperfectionParams(
            roundtrip_efficiency=self.roundtrip_efficiency,
            arm_loss_asymmetry=self.arm_loss_asymmetry,
            coin_angle_error=math.radians(self.coin_angle_error_deg),
            sink_residual_transmission=self.sink_residual,
            detector_efficiencies=self.detector_efficiencies,
            dark_count_rate=self.dark_count_rate,
            mean_input_photons=self.input_photons,
        )

    def hash_payload(self) -> Dict[str, Any]:
        """Fields that determine the computed numbers"""
        return json.loads(self.model_dump_json(exclude={'output_dir', 'formats'}))


def _parse_initial(text: str) -> InitialSpec:
    presets = {'R': InitialSpec.right, 'L': InitialSpec.left, 'symmetric': InitialSpec.symmetric}
    if text in presets:
        return presets[text]()
    parts = _split(text)
    if len(parts) != 2:
        raise ValueError(f"initial must be R, L, symmetric or two complex amplitudes, got '{text}'")
    try:
        spec = InitialSpec((complex(parts[0]), complex(parts[1])))
    except ValueError as e:
        raise ValueError(f"cannot parse initial amplitudes '{text}': {e}") from e
    if not spec.is_normalized():
        raise ValueError(f"initial amplitudes '{text}' are not normalized (norm^2 = {spec.norm_squared:.12g})")
    return spec


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument('--config', dest='config_file', help="Flat key=value config file")
    common.add_argument('--coin', help="hadamard, identity or hwp")
    common.add_argument('--coin-angle', dest='coin_angle_deg', type=float, help="HWP angle in degrees (coin hwp)")
    common.add_argument('--initial', help="R, L, symmetric or 'a,b' complex amplitudes")
    common.add_argument('--steps', type=int, help="Horizon T")
    common.add_argument('--scheme', help="reset, continual or both")
    common.add_argument('--reset', dest='reset_flag', action='store_true', help="Reset scheme only")
    common.add_argument('--continual', dest='continual_flag', action='store_true', help="Continual scheme only")
    common.add_argument('--sink-positions', dest='sink_positions', help="Comma-separated sink positions")
    common.add_argument('--sink-steps', dest='sink_steps', help="Comma-separated steps with active sinks")
    common.add_argument('--sink-residual', dest='sink_residual', type=float, help="Sink residual transmission")
    common.add_argument('--sink-coins', dest='sink_coins', help="Absorbed coin labels, e.g. R or R,L")
    common.add_argument('--roundtrip-efficiency', dest='roundtrip_efficiency', type=float)
    common.add_argument('--arm-loss-asymmetry', dest='arm_loss_asymmetry', type=float)
    common.add_argument('--coin-angle-error', dest='coin_angle_error_deg', type=float, help="Degrees")
    common.add_argument('--detector-efficiencies', dest='detector_efficiencies', help="e_R,e_L")
    common.add_argument('--dark-count-rate', dest='dark_count_rate', type=float, help="Counts per second")
    common.add_argument('--input-photons', dest='input_photons', type=float)
    common.add_argument('--mode', help="expected or sampled")
    common.add_argument('--no-envelopes', dest='envelopes', action='store_false')
    common.add_argument('--dimension', type=int, help="Lattice dimension of the classical walk")
    common.add_argument('--trials', type=int, help="Monte Carlo trials (0 disables)")
    common.add_argument('--seed', type=int, help="PCG64 seed")
    common.add_argument('--output-dir', dest='output_dir', help="Output directory")
    common.add_argument('--format', dest='formats', action='append', choices=FORMATS,
                        help="Output format; repeat for several (default: all)")

    parser = _ArgumentParser(
        prog='sinkwalk',
        description="Recurrence of discrete-time quantum walks monitored by absorbing sinks",
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='subcommand', required=True, metavar='subcommand')
    helps = {
        'evolve': "Per-step position distributions",
        'recurrence': "Recurrence probabilities of the reset and continual schemes",
        'classical': "Classical random-walk baseline",
        'experiment': "Simulated photonic experiment",
        'compare': "Both schemes side by side with charts",
    }
    for name in SUBCOMMANDS:
        subparsers.add_parser(name, parents=[common], help=helps[name], argument_default=argparse.SUPPRESS)
    return parser


def _read_config_file(path: str) -> Dict[str, Any]:
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {k.strip(): v for k, v in dotenv_values(file_path).items()}
    known = set(RunConfig.model_fields)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key '{unknown[0]}' in {path}")
    if 'subcommand' in values:
        raise ConfigError(f"'subcommand' cannot be set in config file {path}")
    empty = [k for k, v in values.items() if v is None]
    if empty:
        raise ConfigError(f"config key '{empty[0]}' has no value in {path}")
    return values


def _format_validation_error(error: ValidationError) -> str:
    first = error.errors()[0]
    key = ".".join(str(part) for part in first['loc'])
    message = first['msg'].removeprefix("Value error, ")
    if first['type'] == 'extra_forbidden':
        return f"unknown config key '{key}'"
    return f"{key}: {message}" if key else message


def parse_config(argv: Optional[Sequence[str]] = None, config_file: Optional[str] = None) -> RunConfig:
    """
    Build a RunConfig from command-line arguments and an optional config file

    Args:
        argv: Arguments without the program name (default: sys.argv[1:])
        config_file: Config file path; a --config flag takes precedence

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: For usage errors, unknown keys, out-of-range values and
            conflicting scheme flags
    """
    namespace = vars(build_parser().parse_args(argv))

    config_path = namespace.pop('config_file', None) or config_file
    reset_flag = namespace.pop('reset_flag', False)
    continual_flag = namespace.pop('continual_flag', False)
    if (reset_flag or continual_flag) and 'scheme' in namespace:
        raise ConfigError("conflicting scheme flags: --scheme cannot be combined with --reset or --continual")
    if reset_flag or continual_flag:
        namespace['scheme'] = 'both' if reset_flag and continual_flag else ('reset' if reset_flag else 'continual')

    values: Dict[str, Any] = {}
    if config_path:
        values.update(_read_config_file(config_path))
    values.update(namespace)

    try:
        config = RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e

    logger.debug(f"Parsed configuration: {config.model_dump()}")
    return config


def _provenance(config: RunConfig) -> Provenance:
    return Provenance(
        config_hash=config_hash(config.hash_payload()),
        seed=config.seed,
        tool_version=__version__,
        command=f"sinkwalk {config.subcommand}",
    )


def _recurrence_summary(series) -> Dict[str, Any]:
    summary: Dict[str, Any] = {'horizon': series.horizon}
    if series.P_continual is not None:
        summary['P_continual'] = series.final_continual
        summary['survival'] = float(series.survival[-1])
    if series.P_reset is not None:
        summary['P_reset'] = series.final_reset
    return summary


def _run_evolve(config: RunConfig, service: SimulationService, bundle: ResultBundle):
    histories = service.get_histories(
        config.initial_spec(), config.coin_spec(), config.steps, config.scheme, config.sink_schedule()
    )
    for scheme, frame in histories.items():
        bundle.tables[f'distribution_{scheme}'] = frame
        bundle.summary[f'cells_{scheme}'] = int(len(frame))
    bundle.summary['horizon'] = config.steps


def _run_recurrence(config: RunConfig, service: SimulationService, bundle: ResultBundle):
    series = service.get_recurrence(
        config.initial_spec(), config.coin_spec(), config.steps, config.scheme, config.sink_schedule()
    )
    bundle.tables['recurrence'] = series.to_frame()
    bundle.summary.update(_recurrence_summary(series))
    issues = series.validate()
    bundle.summary['issues'] = issues
    if issues:
        logger.warning(f"Recurrence series issues: {issues}")


def _run_classical(config: RunConfig, service: SimulationService, bundle: ResultBundle):
    result = service.get_classical(LatticeWalkSpec(config.dimension), config.steps, config.trials, config.seed)
    series = result['series']
    bundle.tables['classical'] = series.to_frame()
    bundle.summary.update({
        'dimension': series.dimension,
        'horizon': series.horizon,
        'polya_from_q': series.polya_from_q,
        'polya_from_p': series.polya_from_p,
        'polya_from_p_truncated': series.polya_from_p_truncated,
        'reset_recurrence': series.reset_recurrence,
    })
    if result['monte_carlo'] is not None:
        monte_carlo = result['monte_carlo']
        frame = monte_carlo.to_frame()
        frame['exact'] = series.q_first_return[:monte_carlo.horizon]
        frame['z_score'] = monte_carlo.z_scores(frame['exact'].to_numpy())
        bundle.tables['monte_carlo'] = frame
        bundle.summary['monte_carlo_trials'] = monte_carlo.trials


def _run_experiment(config: RunConfig, service: SimulationService, bundle: ResultBundle):
    T = config.steps
    result = service.run_experiment(
        config.imperfection_params(), config.coin_spec(), T,
        initial=config.initial_spec(), mode=config.mode, seed=config.seed,
        ranges=ErrorRanges(), with_envelopes=config.envelopes,
    )
    bundle.tables['probabilities'] = result.probabilities
    bundle.tables['snr'] = result.snr
    for scheme, envelope in result.envelopes.items():
        bundle.tables[f'envelope_{scheme}'] = envelope.deviation
    records = {'counts_reset': result.reset_record, 'counts_continual': result.continual_record}
    for name, record in records.items():
        bundle.tables[name] = record.frame

    final = result.probabilities.iloc[-1]
    report = service.get_bin_report(T)
    bundle.summary.update({
        'horizon': T,
        'mode': config.mode,
        'p_origin': float(final['p_origin']),
        'q_first_return': float(final['q_first_return']),
        'P_continual': float(result.probabilities['q_first_return'].sum()),
        'saturated_steps_reset': list(result.reset_record.saturated_steps),
        'saturated_steps_continual': list(result.continual_record.saturated_steps),
        'time_bins_unique': report.is_unique,
        'time_bins_first_interlaced_step': report.first_interlaced_step,
        'time_bins_first_collision_step': report.first_collision_step,
    })
    return records


def _run_compare(config: RunConfig, service: SimulationService, bundle: ResultBundle):
    initial, coin, T = config.initial_spec(), config.coin_spec(), config.steps
    series = service.get_recurrence(initial, coin, T, "both", config.sink_schedule())
    bundle.tables['recurrence'] = series.to_frame()
    for scheme, frame in service.get_histories(initial, coin, T, "both", config.sink_schedule()).items():
        bundle.tables[f'distribution_{scheme}'] = frame

    report = service.get_equivalence(LatticeWalkSpec(config.dimension), T, coin, initial)
    bundle.summary.update(_recurrence_summary(series))
    bundle.summary.update({
        'continual_limit': QUANTUM_POLYA,
        'continual_below_limit': bool(series.final_continual <= QUANTUM_POLYA + 1e-9),
        'classical_continual': report.classical_continual,
        'classical_reset': report.classical_reset,
        'classical_schemes_agree': report.classical_schemes_agree,
        'quantum_schemes_separate': report.quantum_schemes_separate,
    })


RUNNERS = {
    'evolve': _run_evolve,
    'recurrence': _run_recurrence,
    'classical': _run_classical,
    'experiment': _run_experiment,
    'compare': _run_compare,
}


def _emit(config: RunConfig, bundle: ResultBundle, records: Dict[str, CountRecord]):
    output_dir = Path(config.output_dir)
    stem = config.subcommand
    provenance = bundle.provenance

    if 'table' in config.formats:
        for name, record in records.items():
            path = write_count_record(record, output_dir / f"{stem}_{name}.csv", provenance.header_lines())
            bundle.files.append(path.name)
        for name, frame in bundle.tables.items():
            if name in records:
                continue
            if name.startswith('distribution_'):
                path = write_table_csv(frame, output_dir / f"{stem}_{name}.csv", provenance, index=False)
            else:
                path = write_table_csv(frame, output_dir / f"{stem}_{name}.csv", provenance)
            bundle.files.append(path.name)

    if 'chart' in config.formats:
        comments = provenance.header_lines()
        if 'recurrence' in bundle.tables:
            path = emit_chart(bundle.tables['recurrence'], 'recurrence', output_dir / f"{stem}_recurrence.svg",
                              title=f"Recurrence, {config.coin} coin", comment_lines=comments)
            bundle.files.append(path.name)
        if 'classical' in bundle.tables:
            path = emit_chart(bundle.tables['classical'], 'recurrence', output_dir / f"{stem}_classical.svg",
                              title=f"Classical walk, d={config.dimension}", reference=1.0, comment_lines=comments)
            bundle.files.append(path.name)
        for name in sorted(bundle.tables):
            if name.startswith('distribution_'):
                scheme = name.split('_', 1)[1]
                path = emit_chart(bundle.tables[name], 'heatmap', output_dir / f"{stem}_{name}.svg",
                                  title=f"{scheme} scheme, {config.coin} coin", comment_lines=comments)
                bundle.files.append(path.name)

    if 'json' in config.formats:
        path = write_bundle_json(bundle, output_dir / f"{stem}_results.json")
        bundle.files.append(path.name)


def run(config: RunConfig, service: Optional[SimulationService] = None) -> ResultBundle:
    """
    Execute a configured run and write its output files

    Args:
        config: Validated run configuration
        service: Simulation service (default: configured from the environment)

    Returns:
        ResultBundle whose files list names everything written
    """
    service = service or SimulationService.from_env()
    bundle = ResultBundle(subcommand=config.subcommand, provenance=_provenance(config))
    logger.info(f"Running {config.subcommand} with T={config.steps}")
    records = RUNNERS[config.subcommand](config, service, bundle) or {}
    _emit(config, bundle, records)
    logger.info(f"{config.subcommand} wrote {len(bundle.files)} files to {config.output_dir}")
    return bundle


def _print_summary(bundle: ResultBundle, stream=None):
    stream = stream or sys.stdout
    for key in sorted(bundle.summary):
        value = bundle.summary[key]
        if isinstance(value, float):
            value = f"{value:.12g}"
        print(f"{key}: {value}", file=stream)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit status"""
    try:
        config = parse_config(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)

    get_settings(configure=True)
    try:
        bundle = run(config)
    except Exception as e:
        logger.error(f"{config.subcommand} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 3

    _print_summary(bundle)
    return 0


if __name__ == '__main__':
    sys.exit(main())
