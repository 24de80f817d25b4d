"""Precise temporal event spotting in video."""

import json

from ._spotkit import (
    Event,
    Prediction,
    SpotkitError,
    average_precision,
    nms,
    parameter_count,
    plan_windows,
    predict_scores,
    run_cli,
    shift_channel_count,
    tolerance_radius,
)

__all__ = [
    "Event",
    "Prediction",
    "SpotkitError",
    "average_precision",
    "evaluate",
    "generate_synthetic",
    "nms",
    "parameter_count",
    "plan_windows",
    "predict_scores",
    "run_cli",
    "shift_channel_count",
    "tolerance_radius",
]


def generate_synthetic(out_dir, **config):
    """Writes the bouncing-ball benchmark; keyword args override SyntheticConfig fields."""
    from ._spotkit import _generate_synthetic

    return _generate_synthetic(json.dumps(config), str(out_dir))


def evaluate(manifest, predictions, deltas=(1, 2), videos=()):
    """mAP report (as a dict) of a predictions file against a manifest."""
    from ._spotkit import _evaluate

    return json.loads(_evaluate(str(manifest), str(predictions), list(deltas), list(videos)))
