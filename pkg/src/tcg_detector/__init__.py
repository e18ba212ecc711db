"""Ransomware detection over temporal correlation graphs."""
from .types import DetectorError, EventRecord, LabelInterval, MalformedRecord
from .graph import GraphBuilder, GraphParams, TemporalCorrelationGraph, build_graph, update_graph
from .features import FeatureVector, feature_vector
from .detection import DetectionModel, Verdict, WindowAnalyzer, load_model, save_model
from .signatures import SignaturePattern, builtin_signatures, match_signature, parse_signature
from .config import PipelineConfig, load_config

__version__ = "0.1.0"
__all__ = [
    'DetectorError',
    'EventRecord',
    'LabelInterval',
    'MalformedRecord',
    'GraphBuilder',
    'GraphParams',
    'TemporalCorrelationGraph',
    'build_graph',
    'update_graph',
    'FeatureVector',
    'feature_vector',
    'DetectionModel',
    'Verdict',
    'WindowAnalyzer',
    'load_model',
    'save_model',
    'SignaturePattern',
    'builtin_signatures',
    'match_signature',
    'parse_signature',
    'PipelineConfig',
    'load_config',
]
