"""Pipeline configuration document.

One INI file carries ``[pipeline]``, ``[graph]``, ``[detection]``,
``[benign]``, ``[corpus]`` and any number of ``[ransomware.<family>]``
sections. Unknown sections and keys are rejected.
"""
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union
import configparser
import logging

from .documents import document_to_text, new_document, parse_document
from .graph import GraphParams
from .simgen import DEFAULT_FAMILIES, BenignProfile, CorpusSettings, RansomwareProfile
from .types import ConfigError, DetectorError, UnreadableInput

logger = logging.getLogger(__name__)

CONFIG_FORMAT_VERSION = 1
MODES = ('stream', 'batch')


def _optional_str(value: str) -> Optional[str]:
    value = value.strip()
    return value or None


def _optional_int(value: str) -> Optional[int]:
    value = value.strip()
    return int(value) if value else None


def _boolean(value: str) -> bool:
    token = value.strip().lower()
    if token in configparser.ConfigParser.BOOLEAN_STATES:
        return configparser.ConfigParser.BOOLEAN_STATES[token]
    raise ValueError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class PipelineConfig:
    graph: GraphParams = field(default_factory=GraphParams)
    alpha: float = 1.0
    entropy_threshold: float = 6.0
    p_thresh: float = 0.5
    target_fpr: float = 0.05
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    train_fraction: float = 0.6
    validation_fraction: float = 0.2
    signature_limit: int = 64
    signature_dir: Optional[str] = None
    seed: int = 1
    input: Optional[str] = None
    output: Optional[str] = None
    model: Optional[str] = None
    mode: str = 'stream'
    queue_size: int = 64
    threaded: bool = False
    parallel_parse_threshold: int = 50000
    benign: BenignProfile = field(default_factory=BenignProfile)
    ransomware: Tuple[RansomwareProfile, ...] = DEFAULT_FAMILIES
    corpus: CorpusSettings = field(default_factory=CorpusSettings)

    def validate(self) -> 'PipelineConfig':
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        for name in ('p_thresh', 'target_fpr', 'train_fraction', 'validation_fraction'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.train_fraction + self.validation_fraction >= 1.0:
            raise ConfigError("train_fraction + validation_fraction must leave a test split")
        if self.learning_rate <= 0 or self.epochs < 0 or self.l2 < 0:
            raise ConfigError("learning_rate must be > 0, epochs and l2 >= 0")
        if self.signature_limit < 1 or self.queue_size < 1:
            raise ConfigError("signature_limit and queue_size must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        try:
            self.benign.validate()
            self.corpus.validate()
            for profile in self.ransomware:
                profile.validate()
        except DetectorError as e:
            raise ConfigError(str(e)) from e
        return self

    def with_overrides(self, **overrides: Any) -> 'PipelineConfig':
        """Replace fields whose override is not None (CLI flags)."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes).validate() if changes else self

    def with_window(self, window: float, stride: Optional[float] = None) -> 'PipelineConfig':
        g = self.graph
        return replace(self, graph=GraphParams(g.delta, g.tau, window, stride))


_PIPELINE_KEYS: Dict[str, Callable[[str], Any]] = {
    'seed': int,
    'mode': str.strip,
    'input': _optional_str,
    'output': _optional_str,
    'model': _optional_str,
    'signature_dir': _optional_str,
    'queue_size': int,
    'threaded': _boolean,
    'parallel_parse_threshold': int,
}
_GRAPH_KEYS: Dict[str, Callable[[str], Any]] = {'delta': float, 'tau': float, 'window': float, 'stride': float}
_DETECTION_KEYS: Dict[str, Callable[[str], Any]] = {
    'alpha': float,
    'entropy_threshold': float,
    'p_thresh': float,
    'target_fpr': float,
    'learning_rate': float,
    'epochs': int,
    'l2': float,
    'train_fraction': float,
    'validation_fraction': float,
    'signature_limit': int,
}


def _converters(cls, skip: Tuple[str, ...] = ()) -> Dict[str, Callable[[str], Any]]:
    table = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        default = f.default
        if isinstance(default, bool):
            table[f.name] = _boolean
        elif isinstance(default, int):
            table[f.name] = int
        elif isinstance(default, float):
            table[f.name] = float
        elif default is None:
            table[f.name] = _optional_int
        else:
            table[f.name] = str.strip
    return table


_BENIGN_KEYS = _converters(BenignProfile)
_RANSOMWARE_KEYS = _converters(RansomwareProfile, skip=('family_label',))
_CORPUS_KEYS = _converters(CorpusSettings)


def _read_section(doc: configparser.ConfigParser, section: str,
                  table: Dict[str, Callable[[str], Any]]) -> Dict[str, Any]:
    values = {}
    for key, raw in doc[section].items():
        if key not in table:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        try:
            values[key] = table[key](raw)
        except ValueError as e:
            raise ConfigError(f"bad value for [{section}] {key}: {e}")
    return values


def parse_config(text: str, source: str = '<config>') -> PipelineConfig:
    doc = parse_document(text, source, ConfigError)
    known = {'pipeline', 'graph', 'detection', 'benign', 'corpus'}
    for section in doc.sections():
        if section not in known and not section.startswith('ransomware.'):
            raise ConfigError(f"{source}: unknown section [{section}]")

    kwargs: Dict[str, Any] = {}
    if doc.has_section('pipeline'):
        version = doc['pipeline'].get('format_version', str(CONFIG_FORMAT_VERSION)).strip()
        if version != str(CONFIG_FORMAT_VERSION):
            raise ConfigError(f"{source}: unsupported format_version {version}")
        doc.remove_option('pipeline', 'format_version')
        kwargs.update(_read_section(doc, 'pipeline', _PIPELINE_KEYS))
    if doc.has_section('detection'):
        kwargs.update(_read_section(doc, 'detection', _DETECTION_KEYS))
    try:
        if doc.has_section('graph'):
            kwargs['graph'] = GraphParams(**_read_section(doc, 'graph', _GRAPH_KEYS))
        if doc.has_section('benign'):
            kwargs['benign'] = BenignProfile(**_read_section(doc, 'benign', _BENIGN_KEYS))
        if doc.has_section('corpus'):
            kwargs['corpus'] = CorpusSettings(**_read_section(doc, 'corpus', _CORPUS_KEYS))
        families = []
        for section in doc.sections():
            if section.startswith('ransomware.'):
                name = section[len('ransomware.'):]
                families.append(RansomwareProfile(family_label=name,
                                                  **_read_section(doc, section, _RANSOMWARE_KEYS)))
        if families:
            kwargs['ransomware'] = tuple(families)
    except ConfigError:
        raise
    except DetectorError as e:
        raise ConfigError(f"{source}: {e}") from e

    config = PipelineConfig(**kwargs).validate()
    logger.debug(f"Loaded config from {source}: mode={config.mode} seed={config.seed} "
                 f"families={len(config.ransomware)}")
    return config


def load_config(path: Optional[Union[str, Path]]) -> PipelineConfig:
    """Config from a file, or the defaults when path is None."""
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise UnreadableInput(f"Could not read config {path}: {e}") from e
    return parse_config(text, str(path))


def _value(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_document(config: PipelineConfig) -> str:
    doc = new_document()
    doc['pipeline'] = {'format_version': str(CONFIG_FORMAT_VERSION),
                       **{k: _value(getattr(config, k)) for k in _PIPELINE_KEYS}}
    doc['graph'] = {k: _value(getattr(config.graph, k)) for k in _GRAPH_KEYS}
    doc['detection'] = {k: _value(getattr(config, k)) for k in _DETECTION_KEYS}
    doc['benign'] = {k: _value(getattr(config.benign, k)) for k in _BENIGN_KEYS}
    doc['corpus'] = {k: _value(getattr(config.corpus, k)) for k in _CORPUS_KEYS}
    for profile in config.ransomware:
        doc[f'ransomware.{profile.family_label}'] = {
            k: _value(getattr(profile, k)) for k in _RANSOMWARE_KEYS
        }
    return document_to_text(doc)
