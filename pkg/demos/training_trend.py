"""Train weight-shared nets with more repetitions of the same block.

The parameter count does not depend on r, yet the error drops as r grows.
The default is a reduced configuration that finishes in seconds and is too
small to separate the spiral cells reliably; pass --full for the desk-scale
configuration (a few minutes per task) used by the acceptance suite.

Run: python3 demos/training_trend.py [--full]
"""
import sys

from rcnet.train import ExperimentConfig, run_experiment

full = "--full" in sys.argv
for task, n in (("trig", 50), ("spiral", 30)):
    if full:
        config = ExperimentConfig.desk(task, n_values=(n,))
    else:
        config = ExperimentConfig(task=task, n_values=(n,), train_samples=4000,
                                  test_samples=1000, epochs=40, trials=4, window=10)
    result = run_experiment(config)
    label = "test MSE" if task == "trig" else "test accuracy"
    print(f"{task} n={n} ({label}, retained-trial mean):")
    for (nn, r), value in sorted(result.summary.items()):
        print(f"  r={r}: {value:.4f}" if value is not None else f"  r={r}: all trials diverged")
