"""Online inference: ICP, align, embed, attribute and recommend."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from . import gpc
from .features import Embedding, extract_features
from .geometry import PointCloud, RigidTransform, apply_transform
from .gpc import Attribution, PredictConfig, SvgpModel
from .icp import IcpParams, RegistrationDiverged, RegistrationResult, registration_uncertainty
from .perturb import LabeledPair
from .policy import Action, PolicyConfig, decide_action


def register_and_embed(source: PointCloud, target: PointCloud, t0: Optional[RigidTransform] = None,
                       params: Optional[IcpParams] = None,
                       target_diameter: Optional[float] = None) -> tuple[Embedding, RegistrationResult]:
    """Register with restarts, align the source and extract its embedding.

    Raises ``RegistrationDiverged`` only when the t0-seeded run and every
    restart fail to find enough correspondences.
    """
    params = params or IcpParams()
    result, _ = registration_uncertainty(source, target, t0, params)
    if not result.uncertainty_valid and result.iterations == 0:
        raise RegistrationDiverged("every ICP run diverged", result.transform, 0)
    aligned = apply_transform(source, result.transform)
    emb = extract_features(aligned, target, result, max_iterations=params.max_iterations,
                           target_diameter=target_diameter)
    return emb, result


def embed_pairs(pairs: Sequence[LabeledPair], params: Optional[IcpParams] = None):
    """Embeddings and label names for a list of pairs, in order.

    Each pair starts ICP from the identity, the nominal initial guess.
    """
    params = params or IcpParams()
    diameters: dict = {}
    embeddings, labels, results = [], [], []
    for pair in pairs:
        key = id(pair.target)
        if key not in diameters:
            diameters[key] = pair.target.diameter()
        emb, res = register_and_embed(pair.source, pair.target, None, params, diameters[key])
        embeddings.append(emb)
        labels.append(pair.label.name)
        results.append(res)
    return embeddings, labels, results


@dataclass
class Explanation:
    attribution: Attribution
    action: Action
    registration: RegistrationResult
    embedding: Embedding

    def to_dict(self, vocabulary: Sequence[str]) -> dict:
        out = self.attribution.to_dict(vocabulary)
        out.update(
            action=self.action.kind.value,
            rationale=self.action.rationale,
            parameters=self.action.parameters,
            registration={
                "transform": self.registration.transform.to_list(),
                "rmse": float(self.registration.rmse),
                "iterations": int(self.registration.iterations),
                "converged": bool(self.registration.converged),
                "uncertainty": float(self.registration.uncertainty),
                "uncertainty_valid": bool(self.registration.uncertainty_valid),
            },
        )
        return out


def explain(model: SvgpModel, source: PointCloud, target: PointCloud, t0: Optional[RigidTransform] = None,
            params: Optional[IcpParams] = None, predict_cfg: Optional[PredictConfig] = None,
            policy_cfg: Optional[PolicyConfig] = None) -> Explanation:
    policy_cfg = policy_cfg or PolicyConfig()
    predict_cfg = predict_cfg or PredictConfig(score_threshold=policy_cfg.defer_score_threshold,
                                               variance_threshold=policy_cfg.defer_variance_threshold)
    emb, result = register_and_embed(source, target, t0, params)
    attr = gpc.attribute(model, emb, predict_cfg)
    return Explanation(attr, decide_action(attr, policy_cfg), result, emb)
