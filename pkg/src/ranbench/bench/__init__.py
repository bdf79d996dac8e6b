"""Experiment orchestration: offline optimization runs, RL training and
evaluation, hyperparameter search, the dynamic mobility trial, scorecards and
the command-line interface."""

from .pipelines import (POWER_LEVELS, Scorecard, build_scorecard,
                        default_power_space, default_rl_hpo_space,
                        format_scorecard, run_baseline, run_dynamic,
                        run_hpo, run_offline, run_rl_pipeline,
                        select_test_scenarios, static_trial_score,
                        study_name)

__all__ = [
    "POWER_LEVELS", "Scorecard", "build_scorecard", "default_power_space",
    "default_rl_hpo_space", "format_scorecard", "run_baseline", "run_dynamic",
    "run_hpo", "run_offline", "run_rl_pipeline", "select_test_scenarios",
    "static_trial_score", "study_name",
]
