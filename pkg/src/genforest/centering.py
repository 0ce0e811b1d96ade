"""Local centering: residualize Y, W, Z on out-of-bag regression-forest fits."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import InvalidOptions, MissingRole, NoContributingTrees
from .forest import Forest, ForestOptions, predict_many, train_forest
from .models import MomentModel

ROLES = ("outcome", "treatment", "instrument")

CENTERING_OPTIONS = ForestOptions(num_trees=500, subsample_fraction=0.5, ci_group_sampling=False)

AUTO_ROLES = {
    "regression": (),
    "quantile": (),
    "partial_effect": ("outcome", "treatment"),
    "instrumental": ("outcome", "treatment", "instrument"),
}


@dataclass(frozen=True)
class CenteredDataset:
    data: Dataset
    forests: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict)

    @property
    def centered_roles(self) -> tuple:
        return tuple(self.forests)


def oob_fit(forest: Forest) -> np.ndarray:
    fit, _ = predict_many(forest, None, strict=False, oob=True)
    bad = np.flatnonzero(~np.isfinite(fit))
    if bad.size:
        raise NoContributingTrees(f"no out-of-bag trees reach sample {bad[0]}")
    return fit


def center(
    data: Dataset,
    roles_to_center=("outcome", "treatment", "instrument"),
    centering_opts: ForestOptions = CENTERING_OPTIONS,
    workers=None,
) -> CenteredDataset:
    """Replace each listed column by its residual against an out-of-bag forest fit."""
    roles = tuple(roles_to_center)
    for role in roles:
        if role not in ROLES:
            raise InvalidOptions(f"cannot center role {role!r}")
        if getattr(data, role) is None:
            raise MissingRole(role)
    reg = MomentModel.regression()
    forests, fitted, changes = {}, {}, {}
    for k, role in enumerate(roles):
        target = Dataset(data.features, outcome=getattr(data, role),
                         feature_names=data.feature_names)
        # distinct seed streams keep the marginal fits from sharing subsamples
        opts = _reseed(centering_opts, k)
        forest = train_forest(target, reg, opts, workers=workers)
        fit = oob_fit(forest)
        forests[role] = forest
        fitted[role] = fit
        changes[role] = getattr(data, role) - fit
    return CenteredDataset(data.replace(**changes), forests, fitted)


def _reseed(opts: ForestOptions, k: int) -> ForestOptions:
    return replace(opts, seed=(opts.seed + 0x9E3779B97F4A7C15 * (k + 1)) % 2**64)
