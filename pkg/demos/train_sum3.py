"""Train on three-digit sums with and without pruning, then summarise."""

import tempfile
import warnings
from pathlib import Path

from nesyprune import SynthTask, TrainConfig, synth_generate, train
from nesyprune.report import report
from nesyprune.trainer import save_run

task = SynthTask(theory="sum", arity=3, n_samples=100, noise=0.25)
with tempfile.TemporaryDirectory() as tmp:
    dirs = []
    for seed in range(3):
        data = synth_generate(task, seed)
        for mode in ("baseline", "frozen", "trainable"):
            cfg = TrainConfig(mode=mode, seed=seed, epochs=50, batch_size=64)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = train(data.dataset, data.features, cfg, test=data.test)
            dirs.append(save_run(res, cfg, Path(tmp) / f"{mode}-{seed}")["run"].parent)
            print(f"seed {seed} {mode:9s} final accuracy {res.metrics[-1]['accuracy']:.3f}")
    print()
    for row in report(dirs).rows:
        delta = row["delta_vs_baseline_pp"]
        print(
            f"{row['mode']:9s} acc {row['accuracy_mean']:.3f} +- {row['accuracy_std']:.3f}  "
            f"delta {delta:+.1f}pp  retained {row['retained_pct']:.1f}%  gold {row['gold_retained_pct']:.1f}%"
        )
