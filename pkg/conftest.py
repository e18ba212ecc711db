import pytest
import logging
from pathlib import Path

SAMPLE_DATA = Path(__file__).parent / 'sample_data'

@pytest.fixture(autouse=True)
def setup_logging():
    logging.basicConfig(level=logging.DEBUG)

@pytest.fixture
def sample_config_path():
    return SAMPLE_DATA / 'config.ini'

@pytest.fixture
def sample_trace_path():
    return SAMPLE_DATA / 'trace_small.jsonl'

@pytest.fixture
def sample_truth_path():
    return SAMPLE_DATA / 'trace_small.truth.jsonl'
