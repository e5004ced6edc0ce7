"""
Experiment harness: build scenarios from configs, run them, write run
directories and compare finished runs.

Run directory layout:

    config.ini          resolved config, byte-for-byte what was run
    episodes/           seed{S}_{estimator}_{train|test}{index}.csv
    bounds.csv          regret bound per task
    lemmas.csv          lemma checks per task
    transfer.csv        transfer regret per (seed, estimator)
    diagnostics.csv     epsilon / H_M / lambda per training task
    summary.json
    run.log             package log records of this run
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import __version__
from .config import PRESETS_DIR, ExperimentConfig, FamilyConfig
from .evaluation import bound_report_for_run, lemma_checks_for_run, transfer_regret
from .exceptions import (
    ConfigError, IncompatibleRuns, InvalidFamily, InvalidModel, MetaTrainingAborted, OutputError
)
from .linear_mdp import (
    MdpSkeleton, TransitionCore, anchor_chain_mean_core, anchor_chain_skeleton, random_mean_core,
    simplex_features
)
from .logging_config import get_logger, run_log
from .meta_learner import MetaRunRecord, meta_train
from .output_formatters import CSV_SCHEMA_VERSION, CSVFormatter, JSONFormatter, TextTableFormatter
from .task_family import (
    TaskFamily, finite_set_from_draws, offset_from_uniform, orthogonal_family, point_mass_family
)
from .utils import PHASE_ESTIMATE, derive_seed_sequence, ensure_output_directory

logger = get_logger(__name__)

TRANSFER_COLUMNS = ['seed', 'estimator', 'status', 'transfer_regret', 'transfer_stderr',
                    'expected_transfer_regret', 'n_test', 'final_epsilon', 'test_lambda']
DIAGNOSTIC_COLUMNS = ['seed', 'estimator', 'task', 'epsilon', 'h_m', 'lambda', 'regret']
TASK_KEY_COLUMNS = ['seed', 'estimator', 'phase', 'task']
COMPARISON_COLUMNS = ['seed', 'entry', 'transfer_regret', 'reference_regret', 'difference']
COMPARISON_SUMMARY_COLUMNS = ['entry', 'mean_regret', 'mean_difference', 'difference_stderr', 'n_seeds']


@dataclass
class Scenario:
    """A family plus optional explicit train / test cores"""
    family: TaskFamily
    train_cores: Optional[List[TransitionCore]] = None
    test_cores: Optional[List[TransitionCore]] = None


@dataclass
class JobResult:
    seed: int
    estimator: str
    record: MetaRunRecord
    status: str
    error: Optional[str] = None


@dataclass
class ScenarioResult:
    run_dir: Path
    summary: Dict[str, Any]
    results: List[JobResult]

    @property
    def status(self) -> str:
        return self.summary['status']


@dataclass
class Comparison:
    paired: pd.DataFrame
    summary: pd.DataFrame
    text: str
    path: Optional[Path] = None


def run_seed(master_seed: int, seed: int) -> int:
    """Integer seed of one configured seed under a master seed"""
    return int(derive_seed_sequence(master_seed, seed).generate_state(1)[0])


def _base_and_mean(cfg: FamilyConfig) -> Tuple[MdpSkeleton, TransitionCore]:
    if cfg.layout == 'chain':
        return (anchor_chain_skeleton(num_states=cfg.num_states, horizon=cfg.horizon),
                anchor_chain_mean_core(cfg.num_states, cfg.offset))
    rng = np.random.default_rng(cfg.mean_core_seed)
    features = simplex_features(cfg.num_states, cfg.num_actions, cfg.dimension, rng)
    mean = random_mean_core(cfg.dimension, cfg.num_states, rng, cfg.offset)
    reward = rng.uniform(0.0, 1.0, size=cfg.num_states * cfg.num_actions)
    return MdpSkeleton(features, reward, cfg.horizon, 0), mean


def build_scenario(config: ExperimentConfig) -> Scenario:
    """
    Family and core lists described by the [family] section

    Raises:
        ConfigError: if the family cannot be built
    """
    cfg = config.family
    try:
        if cfg.kind == 'orthogonal':
            family = orthogonal_family(cfg.dimension, cfg.horizon)
            if not cfg.holdout:
                return Scenario(family)
            held_in = family.cores[:-1]
            train = [held_in[g % len(held_in)] for g in range(config.run.g_train)]
            test = [family.cores[-1]] * config.run.g_test
            return Scenario(family, train, test)

        base, mean = _base_and_mean(cfg)
        family = TaskFamily.anchor_dirichlet(base, mean, cfg.kappa, name=f"{cfg.layout}_k{cfg.kappa:g}")
        if cfg.kind == 'point_mass':
            return Scenario(point_mass_family(base, mean))
        if cfg.kind == 'finite_set':
            rng = np.random.default_rng(derive_seed_sequence(cfg.mean_core_seed, PHASE_ESTIMATE))
            return Scenario(finite_set_from_draws(family, cfg.num_cores, rng))
        return Scenario(family)
    except (InvalidFamily, InvalidModel) as e:
        raise ConfigError('family', e.message, e)


def validate_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse, check and dry-build a config file"""
    config = ExperimentConfig.from_file(path).validate()
    build_scenario(config)
    return config


def list_presets(presets_dir: Union[str, Path] = PRESETS_DIR) -> List[Tuple[str, str]]:
    """(name, description) of every shipped preset; the description is the leading comment"""
    presets = []
    for path in sorted(Path(presets_dir).glob('*.ini')):
        description = ''
        for line in path.read_text(encoding='utf-8').splitlines():
            if line.startswith(('#', ';')):
                description = line.lstrip('#; ').strip()
                break
        presets.append((path.stem, description))
    return presets


def resolve_config_path(name_or_path: Union[str, Path], presets_dir: Union[str, Path] = PRESETS_DIR) -> Path:
    """A path as given, or the preset of that name"""
    path = Path(name_or_path)
    if path.exists():
        return path
    preset = Path(presets_dir) / f"{name_or_path}.ini"
    if preset.exists():
        return preset
    raise ConfigError('file', f"no config file or preset named {name_or_path!r}")


def _run_job(config: ExperimentConfig, scenario: Scenario, seed: int, estimator: str) -> JobResult:
    alg, run = config.algorithm, config.run
    try:
        record = meta_train(
            scenario.family, estimator, run.g_train, run.g_test, run.episodes, alg.delta,
            run_seed(run.master_seed, seed),
            lambda_mode=alg.lambda_mode, lambda_value=alg.lambda_value, train_lambda=alg.train_lambda,
            pooled_lambda=alg.pooled_lambda, radius_mode=alg.radius_mode, continual=alg.continual,
            train_cores=scenario.train_cores, test_cores=scenario.test_cores
        )
        return JobResult(seed, estimator, record, 'complete')
    except MetaTrainingAborted as e:
        return JobResult(seed, estimator, e.partial_record, 'aborted', str(e))


def _task_records(record: MetaRunRecord):
    for index, (run, core) in enumerate(zip(record.train_records, record.train_cores)):
        yield 'train', index, run, core
    for index, (run, core) in enumerate(zip(record.test_records, record.test_cores)):
        yield 'test', index, run, core


def _family_summary(scenario: Scenario, master_seed: int) -> Dict[str, Any]:
    family = scenario.family
    rng = np.random.default_rng(derive_seed_sequence(master_seed, PHASE_ESTIMATE))
    features = family.base.features
    summary = family.describe()
    summary['offset_from_uniform'] = offset_from_uniform(family)
    summary['var_mean'] = family.family_stats(family.mean_core, rng=rng).var_w
    summary['var_zero'] = family.family_stats(TransitionCore.zeros(features.d, features.d_prime), rng=rng).var_w
    return summary


def run_scenario(config: ExperimentConfig, workers: int = 1) -> ScenarioResult:
    """
    Run every (seed, estimator) pair of a config and write its run directory

    Args:
        config: Experiment configuration (validated here)
        workers: Size of the worker pool over (seed, estimator) pairs

    Returns:
        ScenarioResult: Run directory, summary and per-job records

    Raises:
        ConfigError: if the config is invalid
        OutputError: if the run directory cannot be written
    """
    config.validate()
    scenario = build_scenario(config)
    run_dir = Path(config.output.directory) / config.name
    if not ensure_output_directory(run_dir / 'episodes'):
        raise OutputError('directory', str(run_dir))
    with run_log(run_dir):
        return _execute(config, scenario, run_dir, workers)


def _execute(config: ExperimentConfig, scenario: Scenario, run_dir: Path, workers: int) -> ScenarioResult:
    csv_formatter = CSVFormatter()
    csv_formatter.write_text(config.to_text(), run_dir / 'config.ini', 'config')

    jobs = [(seed, estimator) for seed in config.run.seeds for estimator in config.algorithm.estimators]
    logger.info(f"Running '{config.name}': {len(jobs)} jobs on {workers} worker(s) into {run_dir}")
    results = Parallel(n_jobs=workers)(
        delayed(_run_job)(config, scenario, seed, estimator) for seed, estimator in jobs
    )
    order = {name: i for i, name in enumerate(config.algorithm.estimators)}
    results = sorted(results, key=lambda r: (r.seed, order[r.estimator]))

    bound_rows, lemma_rows, transfer_rows, diagnostic_rows = [], [], [], []
    for result in results:
        record = result.record
        for phase, index, run, core in _task_records(record):
            key = {'seed': result.seed, 'estimator': result.estimator, 'phase': phase, 'task': index}
            csv_formatter.write_episodes(
                run, run_dir / 'episodes' / f"seed{result.seed}_{result.estimator}_{phase}{index:03d}.csv")
            if config.output.write_trajectories:
                csv_formatter.write_trajectory(
                    run, run_dir / 'episodes' / f"seed{result.seed}_{result.estimator}_{phase}{index:03d}_steps.csv")
            report = bound_report_for_run(run, scenario.family.mdp(core))
            bound_rows.append({**key, **report.to_row()})
            for check in lemma_checks_for_run(run):
                lemma_rows.append({**key, **check.to_row()})
        for index, run in enumerate(record.train_records):
            diagnostic_rows.append({
                'seed': result.seed, 'estimator': result.estimator, 'task': index,
                'epsilon': record.epsilon_trace[index + 1], 'h_m': record.h_m_trace[index],
                'lambda': record.train_lambdas[index], 'regret': run.cumulative_regret
            })
        transfer = transfer_regret(record.test_records) if record.test_records else None
        expected = transfer_regret(record.test_records, expected=True) if record.test_records else None
        transfer_rows.append({
            'seed': result.seed, 'estimator': result.estimator, 'status': result.status,
            'transfer_regret': transfer.mean if transfer else np.nan,
            'transfer_stderr': transfer.stderr if transfer else np.nan,
            'expected_transfer_regret': expected.mean if expected else np.nan,
            'n_test': len(record.test_records),
            'final_epsilon': record.epsilon_trace[-1] if record.epsilon_trace else np.nan,
            'test_lambda': record.test_lambdas[0] if record.test_lambdas else np.nan
        })

    bound_frame = pd.DataFrame(bound_rows)
    lemma_frame = pd.DataFrame(lemma_rows)
    csv_formatter.write_frame(bound_frame, run_dir / 'bounds.csv')
    csv_formatter.write_frame(lemma_frame, run_dir / 'lemmas.csv')
    csv_formatter.write_rows(transfer_rows, TRANSFER_COLUMNS, run_dir / 'transfer.csv')
    csv_formatter.write_rows(diagnostic_rows, DIAGNOSTIC_COLUMNS, run_dir / 'diagnostics.csv')

    summary = _build_summary(config, scenario, results, transfer_rows, bound_frame, lemma_frame)
    JSONFormatter().write_summary(summary, run_dir / 'summary.json')
    logger.info(f"Run '{config.name}' finished with status {summary['status']}")
    return ScenarioResult(run_dir=run_dir, summary=summary, results=results)


def _build_summary(config: ExperimentConfig, scenario: Scenario, results: Sequence[JobResult],
                   transfer_rows: Sequence[Dict[str, Any]], bound_frame: pd.DataFrame,
                   lemma_frame: pd.DataFrame) -> Dict[str, Any]:
    estimators = {}
    for estimator in config.algorithm.estimators:
        mine = [r for r in results if r.estimator == estimator]
        test_records = [run for r in mine for run in r.record.test_records]
        entry = {'per_seed': [row for row in transfer_rows if row['estimator'] == estimator]}
        if test_records:
            transfer = transfer_regret(test_records)
            expected = transfer_regret(test_records, expected=True)
            entry.update(transfer_regret=transfer.mean, stderr=transfer.stderr,
                         expected_transfer_regret=expected.mean, expected_stderr=expected.stderr)
        else:
            entry.update(transfer_regret=None, stderr=None)
        estimators[estimator] = entry

    aborted = any(r.status != 'complete' for r in results)
    return {
        'version': __version__,
        'csv_schema_version': CSV_SCHEMA_VERSION,
        'config_hash': config.config_hash,
        'name': config.name,
        'status': 'aborted' if aborted else 'complete',
        'family': _family_summary(scenario, config.run.master_seed),
        'seeds': list(config.run.seeds),
        'estimators': estimators,
        'bounds': {
            'runs': int(len(bound_frame)),
            'violations': int((~bound_frame['holds']).sum()) if len(bound_frame) else 0,
            'expected_violations': int((~bound_frame['expected_holds']).sum()) if len(bound_frame) else 0
        },
        'lemmas': {
            'checks': int(len(lemma_frame)),
            'failures': int((~lemma_frame['holds']).sum()) if len(lemma_frame) else 0
        }
    }


def _load_run(run_dir: Path) -> Tuple[ExperimentConfig, pd.DataFrame]:
    if not (run_dir / 'config.ini').exists() or not (run_dir / 'transfer.csv').exists():
        raise IncompatibleRuns(f"{run_dir} is not a finished run directory", [run_dir])
    config = ExperimentConfig.from_file(run_dir / 'config.ini')
    return config, CSVFormatter().read_frame(run_dir / 'transfer.csv')


def compare(run_dirs: Sequence[Union[str, Path]], out_dir: Optional[Union[str, Path]] = None) -> Comparison:
    """
    Paired-by-seed transfer-regret table across runs

    Every (run, estimator) pair is an entry; the first entry is the reference
    and differences are entry minus reference on the same seed.

    Raises:
        IncompatibleRuns: for fewer than two runs, differing families or seeds
    """
    run_dirs = [Path(d) for d in run_dirs]
    if len(run_dirs) < 2:
        raise IncompatibleRuns("at least two run directories are needed", run_dirs)
    loaded = [_load_run(d) for d in run_dirs]
    reference_config = loaded[0][0]
    for run_dir, (config, _) in zip(run_dirs[1:], loaded[1:]):
        if config.to_dict()['family'] != reference_config.to_dict()['family']:
            raise IncompatibleRuns(f"{run_dir} uses a different task family", run_dirs)
        if sorted(config.run.seeds) != sorted(reference_config.run.seeds):
            raise IncompatibleRuns(f"{run_dir} uses seeds {config.run.seeds}, "
                                   f"expected {reference_config.run.seeds}", run_dirs)
        if config.run.master_seed != reference_config.run.master_seed:
            raise IncompatibleRuns(f"{run_dir} uses a different master seed", run_dirs)

    entries = []
    for i, (run_dir, (config, transfer)) in enumerate(zip(run_dirs, loaded)):
        for estimator in config.algorithm.estimators:
            values = transfer[transfer['estimator'] == estimator].set_index('seed')['transfer_regret']
            entries.append((f"{i}:{config.name}:{estimator}", values))

    seeds = sorted(reference_config.run.seeds)
    reference = entries[0][1]
    rows, summary_rows = [], []
    for label, values in entries:
        differences = []
        for seed in seeds:
            value, base = float(values.get(seed, np.nan)), float(reference.get(seed, np.nan))
            differences.append(value - base)
            rows.append({'seed': seed, 'entry': label, 'transfer_regret': value,
                         'reference_regret': base, 'difference': value - base})
        diffs = np.asarray(differences)
        stderr = float(np.std(diffs, ddof=1) / np.sqrt(diffs.size)) if diffs.size > 1 else 0.0
        summary_rows.append({
            'entry': label,
            'mean_regret': float(np.mean([values.get(s, np.nan) for s in seeds])),
            'mean_difference': float(np.mean(diffs)),
            'difference_stderr': stderr,
            'n_seeds': len(seeds)
        })

    csv_formatter = CSVFormatter()
    paired = csv_formatter.frame(rows, COMPARISON_COLUMNS)
    summary = csv_formatter.frame(summary_rows, COMPARISON_SUMMARY_COLUMNS)
    table = TextTableFormatter()
    text = (table.format_frame(summary) + '\n\n'
            + table.format_frame(paired.pivot(index='seed', columns='entry', values='difference').reset_index()))

    path = None
    if out_dir is not None:
        path = csv_formatter.write_frame(paired, Path(out_dir) / 'comparison.csv')
        csv_formatter.write_frame(summary, Path(out_dir) / 'comparison_summary.csv')
    return Comparison(paired=paired, summary=summary, text=text, path=path)
