"""
Configuration module for the matrix RL lab

Experiment configs are INI files with the sections [family], [algorithm],
[run] and [output]. Floats are written with repr so a saved config reads
back to identical values.
"""
import configparser
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .exceptions import ConfigError
from .utils import calculate_text_hash, parse_int_list, parse_str_list

FAMILY_KINDS = ('anchor_dirichlet', 'finite_set', 'point_mass', 'orthogonal')
LAYOUTS = ('chain', 'random')
ESTIMATORS = ('zero', 'oracle', 'low_bias', 'global_ridge')
LAMBDA_MODES = ('fixed', 'schedule')
RADIUS_MODES = ('oracle', 'assumption')


@dataclass
class FamilyConfig:
    """Task distribution the experiment samples from"""
    kind: str = 'anchor_dirichlet'
    layout: str = 'chain'
    num_states: int = 4
    num_actions: int = 2
    dimension: int = 4
    horizon: int = 2
    kappa: float = 200.0
    offset: float = 0.85
    num_cores: int = 3
    mean_core_seed: int = 0
    holdout: bool = True


@dataclass
class AlgorithmConfig:
    """Bias estimators and regularization"""
    estimators: List[str] = None
    lambda_mode: str = 'schedule'
    lambda_value: float = 1.0
    train_lambda: float = 1.0
    pooled_lambda: float = 1.0
    delta: Optional[float] = None
    radius_mode: str = 'oracle'
    continual: bool = False

    def __post_init__(self):
        if self.estimators is None:
            self.estimators = ['zero', 'oracle']


@dataclass
class RunConfig:
    """Task counts, episodes and seeds"""
    g_train: int = 20
    g_test: int = 20
    episodes: int = 300
    seeds: List[int] = None
    master_seed: int = 0

    def __post_init__(self):
        if self.seeds is None:
            self.seeds = [0, 1, 2, 3, 4]


@dataclass
class OutputConfig:
    """Where and what to write"""
    directory: str = 'outputs'
    write_trajectories: bool = False


@dataclass
class ExperimentConfig:
    """A complete, self-contained experiment description"""
    family: FamilyConfig = None
    algorithm: AlgorithmConfig = None
    run: RunConfig = None
    output: OutputConfig = None
    name: str = 'experiment'

    def __post_init__(self):
        if self.family is None:
            self.family = FamilyConfig()
        if self.algorithm is None:
            self.algorithm = AlgorithmConfig()
        if self.run is None:
            self.run = RunConfig()
        if self.output is None:
            self.output = OutputConfig()

    def validate(self) -> 'ExperimentConfig':
        """
        Check every field

        Raises:
            ConfigError: naming the first offending field
        """
        fam, alg, run = self.family, self.algorithm, self.run
        _one_of('family.kind', fam.kind, FAMILY_KINDS)
        _one_of('family.layout', fam.layout, LAYOUTS)
        for name in ('num_states', 'num_actions', 'dimension', 'horizon', 'num_cores'):
            _positive(f'family.{name}', getattr(fam, name))
        _positive('family.kappa', fam.kappa)
        if not 0.0 < fam.offset <= 1.0:
            raise ConfigError('family.offset', f"must lie in (0, 1], got {fam.offset}")
        if fam.kind == 'orthogonal':
            if fam.dimension < 2:
                raise ConfigError('family.dimension', "the orthogonal family needs dimension >= 2")
        elif fam.layout == 'chain':
            if fam.num_states < 2:
                raise ConfigError('family.num_states', "a chain needs at least two states")
            if fam.num_actions != 2:
                raise ConfigError('family.num_actions', "the chain layout has exactly two actions")
            if fam.dimension != fam.num_states:
                raise ConfigError('family.dimension', "the chain layout uses one anchor per state")

        if not alg.estimators:
            raise ConfigError('algorithm.estimators', "at least one estimator is required")
        for estimator in alg.estimators:
            _one_of('algorithm.estimators', estimator, ESTIMATORS)
        if len(set(alg.estimators)) != len(alg.estimators):
            raise ConfigError('algorithm.estimators', f"duplicate entries in {alg.estimators}")
        _one_of('algorithm.lambda_mode', alg.lambda_mode, LAMBDA_MODES)
        _one_of('algorithm.radius_mode', alg.radius_mode, RADIUS_MODES)
        for name in ('lambda_value', 'train_lambda', 'pooled_lambda'):
            _positive(f'algorithm.{name}', getattr(alg, name))
        if alg.delta is not None and not 0.0 < alg.delta < 1.0:
            raise ConfigError('algorithm.delta', f"must lie in (0, 1) or be 'auto', got {alg.delta}")

        if run.g_train < 0:
            raise ConfigError('run.g_train', f"must be nonnegative, got {run.g_train}")
        _positive('run.g_test', run.g_test)
        _positive('run.episodes', run.episodes)
        if not run.seeds:
            raise ConfigError('run.seeds', "at least one seed is required")
        if len(set(run.seeds)) != len(run.seeds):
            raise ConfigError('run.seeds', f"seeds must be distinct, got {run.seeds}")
        if run.master_seed < 0 or any(seed < 0 for seed in run.seeds):
            raise ConfigError('run.seeds', "seeds must be nonnegative")
        if not self.output.directory:
            raise ConfigError('output.directory', "must not be empty")
        return self

    @property
    def config_hash(self) -> str:
        return calculate_text_hash(self.to_text())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'family': _section_dict(self.family),
            'algorithm': _section_dict(self.algorithm),
            'run': _section_dict(self.run),
            'output': _section_dict(self.output)
        }

    def to_text(self) -> str:
        """INI text of the resolved config"""
        lines = ['[experiment]', f'name = {self.name}', '']
        for section, obj in (('family', self.family), ('algorithm', self.algorithm),
                             ('run', self.run), ('output', self.output)):
            lines.append(f'[{section}]')
            for f in fields(obj):
                lines.append(f'{f.name} = {_format_value(getattr(obj, f.name))}')
            lines.append('')
        return '\n'.join(lines)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding='utf-8')
        return path

    @classmethod
    def from_text(cls, text: str) -> 'ExperimentConfig':
        """
        Parse INI text

        Raises:
            ConfigError: on syntax errors, unknown keys or bad values
        """
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError('file', "could not parse config", e)

        known = {'experiment', 'family', 'algorithm', 'run', 'output'}
        for section in parser.sections():
            if section not in known:
                raise ConfigError(section, "unknown section")

        name = parser.get('experiment', 'name', fallback='experiment')
        return cls(
            family=_read_section(parser, 'family', FamilyConfig),
            algorithm=_read_section(parser, 'algorithm', AlgorithmConfig),
            run=_read_section(parser, 'run', RunConfig),
            output=_read_section(parser, 'output', OutputConfig),
            name=name
        )

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'ExperimentConfig':
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigError('file', f"cannot read {path}", e)
        return cls.from_text(text)


def _one_of(field_name: str, value: Any, allowed: tuple) -> None:
    if value not in allowed:
        raise ConfigError(field_name, f"{value!r} is not one of {', '.join(allowed)}")


def _positive(field_name: str, value: Any) -> None:
    if not value > 0:
        raise ConfigError(field_name, f"must be positive, got {value}")


def _section_dict(obj: Any) -> Dict[str, Any]:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _format_value(value: Any) -> str:
    if value is None:
        return 'auto'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ', '.join(str(v) for v in value)
    return str(value)


_BOOLEANS = {'true': True, 'yes': True, '1': True, 'on': True,
             'false': False, 'no': False, '0': False, 'off': False}


def _parse_value(field_name: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if field_name == 'algorithm.delta':
            return None if raw.lower() == 'auto' else float(raw)
        if field_name == 'run.seeds':
            return list(parse_int_list(raw))
        if field_name == 'algorithm.estimators':
            return list(parse_str_list(raw))
        if isinstance(default, bool):
            if raw.lower() not in _BOOLEANS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOLEANS[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise ConfigError(field_name, f"invalid value {raw!r}", e)
    return raw


def _read_section(parser: configparser.ConfigParser, section: str, cls: type) -> Any:
    defaults = cls()
    if not parser.has_section(section):
        return defaults
    names = {f.name for f in fields(cls)}
    values = {}
    for key, raw in parser.items(section):
        if key not in names:
            raise ConfigError(f'{section}.{key}', "unknown key")
        values[key] = _parse_value(f'{section}.{key}', raw, getattr(defaults, key))
    return cls(**values)


DEFAULT_FAMILY_CONFIG = FamilyConfig()
DEFAULT_ALGORITHM_CONFIG = AlgorithmConfig()
DEFAULT_RUN_CONFIG = RunConfig()
DEFAULT_OUTPUT_CONFIG = OutputConfig()

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent
SRC_DIR = PROJECT_ROOT / 'src'
TEMPLATES_DIR = PROJECT_ROOT / 'templates'
PRESETS_DIR = PROJECT_ROOT / 'presets'
OUTPUTS_DIR = PROJECT_ROOT / 'outputs'
TESTS_DIR = PROJECT_ROOT / 'tests'
