import pytest
from dataclasses import replace

from tcg_detector.cli import EXIT_ASSERT, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from tcg_detector.config import config_to_document
from tcg_detector.detection import Verdict
from tcg_detector.pipeline import Alert, read_alerts, write_alerts


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(['detect', '--mode', 'turbo'])
    assert exc.value.code == EXIT_USAGE
    assert main(['detect', '--input', 'trace.jsonl']) == EXIT_USAGE
    assert 'error' in capsys.readouterr().err


def test_unknown_log_level(tmp_path):
    assert main(['simulate', '--log-level', 'LOUD', '--output', str(tmp_path / 't.jsonl')]) == EXIT_USAGE


def test_data_errors(tmp_path, sample_trace_path):
    assert main(['detect', '--model', str(tmp_path / 'none.ini'), '--input', str(sample_trace_path)]) == EXIT_DATA
    bad = tmp_path / 'bad.ini'
    bad.write_text('[pipeline]\nmode = turbo\n')
    assert main(['simulate', '--config', str(bad), '--output', str(tmp_path / 't.jsonl')]) == EXIT_DATA


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / 'blocker'
    blocker.write_text('')
    out = blocker / 'trace.jsonl'
    assert main(['simulate', '--output', str(out), '--benign-only']) == EXIT_DATA
    assert 'I/O error' in capsys.readouterr().err


def test_simulate(tmp_path, capsys):
    out = tmp_path / 'benign.jsonl'
    assert main(['simulate', '--output', str(out), '--benign-only', '--seed', '2']) == EXIT_OK
    assert out.exists()
    assert (tmp_path / 'benign.truth.jsonl').exists()
    assert capsys.readouterr().out.startswith('events=')


def test_detect_and_eval(tmp_path, toy_model_path, sample_trace_path, capsys):
    alerts = tmp_path / 'alerts.jsonl'
    for mode in ('stream', 'batch'):
        assert main(['detect', '--model', str(toy_model_path), '--input', str(sample_trace_path),
                     '--output', str(alerts), '--mode', mode]) == EXIT_OK
        assert len(read_alerts(alerts)) == 3
    report = tmp_path / 'report.ini'
    assert main(['eval', '--alerts', str(alerts), '--input', str(sample_trace_path),
                 '--output', str(report)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith('windows=3 ')
    assert 'episodes=1' in out
    assert report.exists()
    assert main(['eval', '--alerts', str(alerts)]) == EXIT_USAGE


def test_eval_assert(tmp_path, sample_trace_path, sample_truth_path):
    alerts = tmp_path / 'alerts.jsonl'
    verdicts = [Verdict(0.0, 40.0, 0.1, 0.1), Verdict(20.0, 60.0, 0.1, 0.1),
                Verdict(40.0, 80.0, 3.0, 0.9, (), 'ransomware')]
    write_alerts(alerts, [Alert(v, v.window_end + 2.0, i) for i, v in enumerate(verdicts)])
    args = ['eval', '--alerts', str(alerts), '--truth', str(sample_truth_path)]
    assert main(args) == EXIT_OK
    assert main(args + ['--assert']) == EXIT_ASSERT


def test_export_dot(tmp_path, sample_trace_path, capsys):
    out = tmp_path / 'dot'
    assert main(['export-dot', '--input', str(sample_trace_path), '--output', str(out),
                 '--window-start', '40']) == EXIT_OK
    assert [p.name for p in out.iterdir()] == ['window_000002.dot']
    assert capsys.readouterr().out.strip() == 'dot_files=1'


def test_sweep_speeds_with_model(tmp_path, toy_model_path, capsys):
    table = tmp_path / 'speeds.csv'
    assert main(['sweep-speeds', '--model', str(toy_model_path), '--values', '5.0', '--episodes', '1',
                 '--output', str(table)]) == EXIT_OK
    assert len(table.read_text().splitlines()) == 2
    assert capsys.readouterr().out.startswith('speed=5 ')


@pytest.mark.slow
def test_train_command(tmp_path, small_config, capsys):
    config = tmp_path / 'small.ini'
    config.write_text(config_to_document(replace(small_config, epochs=100)))
    model = tmp_path / 'model.ini'
    assert main(['train', '--config', str(config), '--model', str(model)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith('test windows=')
    assert model.exists()
    assert (tmp_path / 'model.test_alerts.jsonl').exists()
