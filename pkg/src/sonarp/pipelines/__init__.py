"""Experiment drivers, one per pipeline kind."""

from .classification import run_classification
from .detector import run_detector
from .matching import run_matching
from .proposals import run_proposals
from .spec import DEFAULT_SWEEPS, KINDS, ExperimentSpec
from .tracker import run_tracker
from .transfer import run_transfer

RUNNERS = {
    "classification": run_classification,
    "transfer": run_transfer,
    "matching": run_matching,
    "proposals": run_proposals,
    "detector": run_detector,
    "tracker": run_tracker,
}


def run(spec: ExperimentSpec):
    return RUNNERS[spec.kind](spec)


__all__ = ["ExperimentSpec", "KINDS", "DEFAULT_SWEEPS", "RUNNERS", "run", "run_classification",
           "run_transfer", "run_matching", "run_proposals", "run_detector", "run_tracker"]
