"""Python access to the ecgcmr core: pipeline stages, statistics, schedules."""

import json
import os

import torch  # noqa: F401  loads the libtorch shared objects the extension links against

from ._core import (
    ConfigError,
    Error,
    FormatError,
    MissingPrerequisite,
    NumericError,
    commands,
    ddim_timesteps,
    delong_test,
    derive_label,
    linear_beta_schedule,
    pearson_r,
    roc_auc,
    savgol_coefficients,
    seasonal_trend,
    wilson_interval,
)
from . import _core


def default_config():
    return json.loads(_core.default_config_json())


def run(command, out, overrides=None, force=False):
    """Run one pipeline command under `out`; returns (stage_dir, manifest)."""
    payload = json.dumps(overrides) if overrides else ""
    result = json.loads(_core.run_stage(command, os.fspath(out), payload, force))
    return result["dir"], result["manifest"]


def verify(stage_dir):
    return json.loads(_core.verify_manifest_json(os.fspath(stage_dir)))


__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "MissingPrerequisite",
    "NumericError",
    "commands",
    "ddim_timesteps",
    "default_config",
    "delong_test",
    "derive_label",
    "linear_beta_schedule",
    "pearson_r",
    "roc_auc",
    "run",
    "savgol_coefficients",
    "seasonal_trend",
    "verify",
    "wilson_interval",
]
