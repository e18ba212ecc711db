import os
import sys
from dataclasses import replace
from pathlib import Path
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Dict, List, Any, Optional
import threading
import time
from tqdm import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

# Add the src directory to Python path
src_path = str(Path(__file__).parent.parent / 'src')
if (src_path not in sys.path):
    sys.path.insert(0, src_path)

from tcg_detector.config import load_config
from tcg_detector.evaluation import (
    ConfusionCounts,
    LOAD_LEVELS,
    WINDOW_SIZES,
    confusion_from_labels,
    f1,
    precision,
    quality_failures,
    rate_failures,
    recall,
    sweep_load,
    sweep_speeds,
    sweep_windows,
    window_trend_failures,
)
from tcg_detector.simgen import SPEED_GRID
from tcg_detector.training import simulate_from_config, train_model

QUALITY_SEEDS = (1, 2, 3, 4, 5)
MIN_MEAN_PRECISION = 0.92
LATENCY_SLACK = 1.0  # seconds beyond window + delta


class ProgressTracker:
    def __init__(self, total: int, desc: str):
        self.total = total
        self.pbar = tqdm(total=total, desc=desc, leave=False)
        self.lock = threading.Lock()

    def increment(self):
        with self.lock:
            self.pbar.update(1)
            return self.pbar.n

    def write(self, msg: str):
        self.pbar.write(msg)

    def close(self):
        self.pbar.close()


def train_seed(config, seed: int, progress: ProgressTracker) -> Dict[str, Any]:
    """Train and test on one seeded corpus"""
    seeded = replace(config, seed=seed)
    events, truth = simulate_from_config(seeded)
    result = train_model(events, truth, seeded)
    counts = confusion_from_labels((r.verdict.is_ransomware for r in result.test_results), result.test_labels)
    count = progress.increment()
    progress.write(f"Completed {count}/{progress.total}: seed {seed} "
                   f"precision={precision(counts):.3f} recall={recall(counts):.3f}")
    return {'seed': seed, 'counts': counts, 'model': result.model, 'ranking': result.feature_ranking[:5]}


def run_experiments(config_path: Optional[str], output_path: str, max_workers: int = None):
    """Quality over several seeds plus the three sweeps, written as one text report."""
    print(f"Running experiments for {config_path or 'default config'}")
    start_time = time.time()
    config = load_config(config_path)
    failures: List[str] = []

    try:
        with tqdm(total=0, desc="Status", position=0, bar_format='{desc}') as status_bar, logging_redirect_tqdm():
            cpu_count = os.cpu_count() or 4
            max_workers = max_workers or min(cpu_count, len(QUALITY_SEEDS))

            progress = ProgressTracker(len(QUALITY_SEEDS), "Training")
            quality = []
            with ThreadPoolExecutor(max_workers=max_workers) as executor:
                future_to_seed = {
                    executor.submit(train_seed, config, seed, progress): seed
                    for seed in QUALITY_SEEDS
                }
                for future in as_completed(future_to_seed):
                    seed = future_to_seed[future]
                    try:
                        quality.append(future.result())
                    except Exception as e:
                        tqdm.write(f"Error training seed {seed}: {str(e)}")
            progress.close()
            quality.sort(key=lambda item: item['seed'])
            total = sum((item['counts'] for item in quality), ConfusionCounts())
            failures += quality_failures(quality[0]['counts']) if quality else ["no seed trained"]
            mean_precision = sum(precision(item['counts']) for item in quality) / max(len(quality), 1)
            if mean_precision < MIN_MEAN_PRECISION:
                failures.append(f"mean precision {mean_precision:.3f} < {MIN_MEAN_PRECISION}")

            status_bar.write("Sweeping window sizes...")
            window_rows = sweep_windows(config, WINDOW_SIZES, QUALITY_SEEDS, max_workers, progress=True)
            failures += window_trend_failures(window_rows)

            # speed and load sweeps reuse the first seed's model
            model = quality[0]['model'] if quality else None
            status_bar.write("Sweeping encryption speeds...")
            speed_rows = sweep_speeds(config, SPEED_GRID, model=model, workers=max_workers, progress=True)
            failures += rate_failures(speed_rows)
            status_bar.write("Sweeping benign load...")
            load_rows = sweep_load(config, LOAD_LEVELS, model=model, workers=max_workers, progress=True)
            failures += rate_failures(load_rows, max_spread=None)
            latency_bound = config.graph.window + config.graph.delta + LATENCY_SLACK
            failures += [f"mean latency {row.mean_latency:.2f}s > {latency_bound:g}s at load {row.value:g}"
                         for row in load_rows[:1] if row.mean_latency > latency_bound]

            with open(output_path, 'w', encoding='utf-8') as f:
                f.write("Ransomware Detection Experiments\n")
                f.write("================================\n\n")
                f.write(f"Config: {config_path or 'defaults'}\n")
                f.write(f"Families: {', '.join(p.family_label for p in config.ransomware)}\n\n")

                f.write("Test quality per seed\n")
                f.write("---------------------\n")
                for item in quality:
                    c = item['counts']
                    f.write(f"seed {item['seed']}: precision={precision(c):.4f} recall={recall(c):.4f} "
                            f"f1={f1(c):.4f} windows={c.total}\n")
                f.write(f"pooled: precision={precision(total):.4f} recall={recall(total):.4f}\n")
                if quality:
                    top = ', '.join(f"{name} ({score:.2f})" for name, score in quality[0]['ranking'])
                    f.write(f"Most separating features: {top}\n")

                f.write("\nWindow size\n")
                f.write("-----------\n")
                for row in window_rows:
                    f.write(f"{row.size:>5g}s accuracy={row.accuracy:.4f} +/- {row.accuracy_std:.4f}\n")

                f.write("\nEncryption speed\n")
                f.write("----------------\n")
                for row in speed_rows:
                    f.write(f"{row.value:>4g} MB/s detection_rate={row.detection_rate:.4f} "
                            f"mean_latency={row.mean_latency:.2f}s\n")

                f.write("\nBenign load\n")
                f.write("-----------\n")
                for row in load_rows:
                    f.write(f"{row.value:>4g}x detection_rate={row.detection_rate:.4f} "
                            f"mean_latency={row.mean_latency:.2f}s\n")

                f.write("\nChecks\n")
                f.write("------\n")
                f.write("all passed\n" if not failures else ''.join(f"FAILED: {x}\n" for x in failures))

            elapsed = time.time() - start_time
            status_bar.write(f"\nCompleted in {elapsed:.2f} seconds")
            status_bar.write(f"Results written to {output_path}")

    except Exception as e:
        print(f"\nError during experiments: {e}")
        raise

    return failures


if __name__ == "__main__":
    config_file = sys.argv[1] if len(sys.argv) > 1 else str(Path(__file__).parent.parent / 'sample_data' / 'config.ini')
    output_file = sys.argv[2] if len(sys.argv) > 2 else "experiments.txt"

    cpu_count = os.cpu_count() or 4

    failed = run_experiments(
        config_file,
        output_file,
        max_workers=cpu_count,
    )
    sys.exit(3 if failed else 0)
