#!/usr/bin/env python3
"""Train the conv+GRU model on synthetic journeys and compare against baselines.

Roughly a minute on one core.  Prints a mean(std) table over three seeds.
"""

from dataclasses import replace

from journey_risk.baselines import baseline_predict
from journey_risk.datagen import GenConfig, describe, describe_markdown, generate
from journey_risk.training import TrainConfig, comparison_table, run_repeated

ds = generate(GenConfig(n_patients=600, n_features=6, t_min=12, t_max=30, missing_rate=0.5, seed=7))
print(describe_markdown(describe(ds)))

cfg = TrainConfig(hidden=32, epochs=40)
reports = [
    run_repeated(ds, cfg, n_runs=3, method="Ours"),
    run_repeated(ds, replace(cfg, variant="no_recurrent"), n_runs=3, method="Ours_r-"),
    baseline_predict("mean", ds, cfg, n_runs=3),
    baseline_predict("simple", ds, cfg, n_runs=3),
]
print(comparison_table(reports))
