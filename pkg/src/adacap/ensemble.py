"""Meta-models built from several MLR networks: bags, ensembles, best-of and top-k."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DiagnosticError
from .trainer import REGRESSION, TrainConfig, TrainedModel, predict, train

BAG = "bag"
ENS = "ens"
BEST_OF = "best_of"
TOP_K = "top_k"
KINDS = (BAG, ENS, BEST_OF, TOP_K)


@dataclass
class EnsembleSpec:
    """Which members to train and how to combine them.

    ``members`` lists one ``(depth, seed)`` pair per network. ``k`` is only
    used by top-k; best-of is top-k with k = 1.
    """

    kind: str
    members: list[tuple[int, int]]
    k: int | None = None

    def __post_init__(self):
        self.members = [(int(d), int(s)) for d, s in self.members]
        if self.kind not in KINDS:
            raise ConfigError(f"unknown ensemble kind {self.kind!r}")
        if not self.members:
            raise ConfigError("an ensemble needs at least one member")
        if self.kind == TOP_K and (self.k is None or not 1 <= self.k <= len(self.members)):
            raise ConfigError(f"k must lie in [1, {len(self.members)}]")

    @classmethod
    def bag(cls, depth: int, count: int, seed: int = 0) -> EnsembleSpec:
        if count < 1:
            raise ConfigError("bag count must be >= 1")
        return cls(BAG, [(depth, seed + i) for i in range(count)])

    @classmethod
    def ens(cls, *parts: EnsembleSpec) -> EnsembleSpec:
        """Union of the members of several specs (e.g. two bags)."""
        return cls(ENS, [m for p in parts for m in p.members])

    @classmethod
    def best_of(cls, members) -> EnsembleSpec:
        return cls(BEST_OF, list(members))

    @classmethod
    def top_k(cls, members, k: int) -> EnsembleSpec:
        return cls(TOP_K, list(members), k)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "members": [list(m) for m in self.members], "k": self.k}

    @classmethod
    def from_dict(cls, data: dict) -> EnsembleSpec:
        return cls(data["kind"], [tuple(m) for m in data["members"]], data.get("k"))


@dataclass
class EnsembleModel:
    spec: EnsembleSpec
    models: list[TrainedModel]
    selected: list[int] = field(default_factory=list)

    @property
    def task(self) -> str:
        return self.models[0].task

    @property
    def val_scores(self) -> list[float]:
        return [m.best_score for m in self.models]

    def save(self, directory) -> Path:
        """Write one JSON file per member plus ``ensemble.json`` listing them."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for i, model in enumerate(self.models):
            name = f"member_{i:03d}.json"
            (directory / name).write_text(json.dumps(model.to_dict()))
            files.append(name)
        manifest = {"spec": self.spec.to_dict(), "members": files, "selected": self.selected}
        path = directory / "ensemble.json"
        path.write_text(json.dumps(manifest, indent=2))
        return path

    @classmethod
    def load(cls, path) -> EnsembleModel:
        path = Path(path)
        manifest = json.loads(path.read_text())
        models = [TrainedModel.from_dict(json.loads((path.parent / f).read_text())) for f in manifest["members"]]
        return cls(EnsembleSpec.from_dict(manifest["spec"]), models, list(manifest["selected"]))


def select_members(spec: EnsembleSpec, scores, seeds) -> list[int]:
    """Indices of the members that enter the aggregate.

    Best-of and top-k rank by validation score, descending; equal scores are
    ordered by seed, then by position.
    """
    n = len(scores)
    if spec.kind in (BAG, ENS):
        return list(range(n))
    k = 1 if spec.kind == BEST_OF else spec.k
    order = sorted(range(n), key=lambda i: (-scores[i], seeds[i], i))
    return sorted(order[:k])


def fit_ensemble(x, y, spec: EnsembleSpec, base_config: TrainConfig, pipeline=None) -> EnsembleModel:
    """Train every member of ``spec``; members differ by depth and seed only."""
    models = []
    for i, (depth, seed) in enumerate(spec.members):
        cfg = dataclasses.replace(base_config, depth=depth, seed=seed)
        try:
            models.append(train(x, y, cfg, pipeline=pipeline))
        except DiagnosticError as exc:
            raise DiagnosticError(
                f"member {i} (depth={depth}, seed={seed}) failed: {exc}", iteration=exc.iteration, member=i
            ) from exc
    seeds = [s for _, s in spec.members]
    return EnsembleModel(spec, models, select_members(spec, [m.best_score for m in models], seeds))


def member_predictions(model: EnsembleModel, x_new) -> np.ndarray:
    """Selected members' outputs stacked as rows (probabilities for classification)."""
    return np.stack([predict(model.models[i], x_new) for i in model.selected])


def predict_ensemble(model: EnsembleModel, x_new) -> np.ndarray:
    return member_predictions(model, x_new).mean(axis=0)


def predict_ensemble_label(model: EnsembleModel, x_new) -> np.ndarray:
    if model.task == REGRESSION:
        raise ConfigError("labels are only defined for classification")
    return (predict_ensemble(model, x_new) >= 0.5).astype(np.int64)
