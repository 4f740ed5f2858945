from .mock import MockSlamInputs, frame_degradation, gradient_energy, mock_slam_run
from .wrappers import (
    SettingsRule,
    SlamRunOutcome,
    SlamWrapperSpec,
    StagingRule,
    execute_slam,
    load_wrapper_spec,
    mock_wrapper_spec,
    resolve_settings,
    stage_sequence,
)

__all__ = [
    "MockSlamInputs",
    "frame_degradation",
    "gradient_energy",
    "mock_slam_run",
    "SettingsRule",
    "SlamRunOutcome",
    "SlamWrapperSpec",
    "StagingRule",
    "execute_slam",
    "load_wrapper_spec",
    "mock_wrapper_spec",
    "resolve_settings",
    "stage_sequence",
]
