import pytest
import logging
from dataclasses import replace

from tcg_detector.config import PipelineConfig
from tcg_detector.detection import BaselineModel, DetectionModel, LinearClassifier, save_model
from tcg_detector.features import FEATURE_COUNT, Normalizer, fit_transition_model
from tcg_detector.graph import GraphParams, build_graph
from tcg_detector.simgen import CorpusSettings, RansomwareProfile
from tcg_detector.types import EventRecord, OperationKind


@pytest.fixture(autouse=True)
def setup_logging():
    logging.basicConfig(level=logging.DEBUG)


def make_event(ts, seq=0, pid=100, op=OperationKind.FILE_READ, target='C:/Users/user/Documents/a.docx',
               proc='test.exe', bytes=0, entropy=0.0):
    return EventRecord(ts=float(ts), seq=seq, pid=pid, proc=proc, op=OperationKind(op), target=target,
                       bytes=bytes, entropy=entropy)


@pytest.fixture
def event():
    return make_event


@pytest.fixture
def small_config():
    """Fast corpus: 24 episodes of 200 s over two short-lived families."""
    base = PipelineConfig(seed=3, epochs=200)
    families = (RansomwareProfile(encryption_speed=5.2, target_count=100, family_label='lockbit'),
                RansomwareProfile(encryption_speed=4.8, target_count=100, family_label='hive'))
    return replace(base, ransomware=families, corpus=CorpusSettings(episodes=24))


@pytest.fixture
def toy_model():
    """Hand-set model over identity scaling; fast to build, not trained."""
    events = [make_event(1.0, seq=0), make_event(1.5, seq=1, op=OperationKind.FILE_WRITE, entropy=7.9),
              make_event(2.0, seq=2, op=OperationKind.FILE_RENAME)]
    params = GraphParams()
    ones = tuple([1.0] * FEATURE_COUNT)
    zeros = tuple([0.0] * FEATURE_COUNT)
    return DetectionModel(
        params=params,
        normalizer=Normalizer(zeros, ones),
        baseline=BaselineModel(zeros, ones),
        threshold=2.5,
        classifier=LinearClassifier(tuple(0.01 * i for i in range(FEATURE_COUNT)), -0.3, 0.1, 500, 1e-4),
        transitions=fit_transition_model([build_graph(events, 0.0, 40.0, params)]),
    )


@pytest.fixture
def toy_model_path(tmp_path, toy_model):
    path = tmp_path / 'toy_model.ini'
    save_model(path, toy_model)
    return path
