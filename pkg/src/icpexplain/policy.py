"""Recovery-action recommendations from concept attributions."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .gpc import Attribution
from .icp import RegistrationResult


class ActionKind(str, enum.Enum):
    ABSTAIN_AND_QUERY = "AbstainAndQuery"
    REINITIALIZE_ICP = "ReinitializeIcp"
    CHANGE_VIEWPOINT = "ChangeViewpoint"
    FILTER_CALIBRATE = "FilterCalibrate"


class Recheck(str, enum.Enum):
    RESOLVED = "Resolved"
    RETRY = "Retry"
    QUEUE_FOR_LABELING = "QueueForLabeling"


CONCEPT_ACTIONS = {
    "pose": ActionKind.REINITIALIZE_ICP,
    "overlap": ActionKind.CHANGE_VIEWPOINT,
    "noise": ActionKind.FILTER_CALIBRATE,
}

# suggested parameters only; nothing is executed
_SUGGESTIONS = {
    ActionKind.REINITIALIZE_ICP: {"restart_rotation_deg": 30.0, "restarts": 16},
    ActionKind.CHANGE_VIEWPOINT: {"viewpoint_step_deg": 15.0},
    ActionKind.FILTER_CALIBRATE: {"filter": "statistical_outlier", "filter_sigma": 2.0},
    ActionKind.ABSTAIN_AND_QUERY: {"acquisition": "bald"},
}


@dataclass
class PolicyConfig:
    defer_score_threshold: float = 0.5
    defer_variance_threshold: float = 0.05
    max_retries: int = 3
    improvement_epsilon: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.defer_score_threshold <= 1.0:
            raise ValueError("defer_score_threshold must lie in [0, 1]")
        if not 0.0 <= self.defer_variance_threshold <= 0.25:
            raise ValueError("defer_variance_threshold must lie in [0, 0.25]")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")
        if not 0.0 <= self.improvement_epsilon < 1.0:
            raise ValueError("improvement_epsilon must lie in [0, 1)")


@dataclass
class Action:
    kind: ActionKind
    rationale: str
    triggering_scores: Attribution
    parameters: dict = field(default_factory=dict)


def decide_action(attr: Attribution, cfg: PolicyConfig = PolicyConfig()) -> Action:
    """Defer first; otherwise map the decided concept to its recovery action."""
    c = attr.decision.index
    top, var = float(attr.scores[c]), float(attr.variances[c])
    if attr.defer or top < cfg.defer_score_threshold or var > cfg.defer_variance_threshold:
        kind = ActionKind.ABSTAIN_AND_QUERY
        why = (f"attribution uncertain (top score {top:.3f}, variance {var:.4f}); "
               "abstain and queue for labeling")
    elif attr.decision.name in CONCEPT_ACTIONS:
        kind = CONCEPT_ACTIONS[attr.decision.name]
        why = {
            ActionKind.REINITIALIZE_ICP: "dominant pose score: reinitialize ICP with a broader search",
            ActionKind.CHANGE_VIEWPOINT: "dominant overlap score: change viewpoint to increase common support",
            ActionKind.FILTER_CALIBRATE: "dominant noise score: filter harder and check sensor calibration",
        }[kind]
    else:
        kind = ActionKind.ABSTAIN_AND_QUERY
        why = f"no mapped action for concept {attr.decision.name!r}"
    return Action(kind, why, attr, dict(_SUGGESTIONS[kind]))


def recheck_after_action(before: RegistrationResult, after: RegistrationResult, cfg: PolicyConfig = PolicyConfig(),
                         attempts: int = 1) -> Recheck:
    """Judge one recovery attempt; ``attempts`` counts tries so far, this one included."""
    if after.converged and after.uncertainty <= (1.0 - cfg.improvement_epsilon) * before.uncertainty:
        return Recheck.RESOLVED
    if attempts < cfg.max_retries:
        return Recheck.RETRY
    return Recheck.QUEUE_FOR_LABELING
