"""Multi-seed experiments built on the staged pipeline."""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import pipeline
from .dataset import REPORTED_COVARIATES
from .pipeline import RunConfig


def robustness_config(seed: int = 0, out: str = "runs/robustness") -> RunConfig:
    """Confounded synthetic data, corrupted at 10/20/40 percent, no embedding."""
    return RunConfig.from_dict({
        "synthetic": {"preset": "confounded"},
        "seed": seed,
        "subset_size": 1500,
        # the injected rate is known here, so the resampling uses it as epsilon
        "resample": {"epsilon": "rate"},
        "corruption_rates": [0.1, 0.2, 0.4],
        "covariates": list(REPORTED_COVARIATES),
        "embed_enabled": False,
        "out": out,
    })


@dataclass
class RobustnessResult:
    pair: str
    covariates: list[str]
    seeds: list[int]
    # rate -> (seeds x covariates) weighted SB
    processed: dict[float, np.ndarray] = field(default_factory=dict)
    raw: dict[float, np.ndarray] = field(default_factory=dict)

    def wins(self, rate: float) -> int:
        """Covariates where the seed-averaged processed SB is no larger than raw."""
        return int(np.sum(self.processed[rate].mean(axis=0) <= self.raw[rate].mean(axis=0)))

    def lines(self) -> list[str]:
        out = []
        for rate in sorted(self.processed):
            p, r = self.processed[rate].mean(axis=0), self.raw[rate].mean(axis=0)
            cells = "  ".join(f"{c}={a:.3f}/{b:.3f}" for c, a, b in zip(self.covariates, p, r))
            out.append(f"rate {rate:.2f}  wins {self.wins(rate)}/{len(self.covariates)}  {cells}")
        return out


def robustness_study(seeds=range(5), pair: str = "0-1", base: RunConfig | None = None,
                     workdir: str | Path | None = None) -> RobustnessResult:
    """Run the full pipeline once per seed and collect processed vs raw SB."""
    base = base or robustness_config()
    covs = list(base.covariates)
    res = RobustnessResult(pair, covs, list(seeds))
    rows = {rate: ([], []) for rate in base.corruption_rates}
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(workdir or tmp)
        for s in res.seeds:
            cfg = replace(base, seed=s, out=str(root / f"seed_{s}"))
            pipeline.cmd_pipeline(cfg)
            ws = pipeline.Workspace(cfg.out, cfg)
            for rate in base.corruption_rates:
                summ = ws.read_json(f"{pipeline.rate_dir(rate)}/evaluate/summary.json")[pair]
                rows[rate][0].append([summ[c]["processed"] for c in covs])
                rows[rate][1].append([summ[c]["raw"] for c in covs])
    for rate, (p, r) in rows.items():
        res.processed[rate] = np.asarray(p)
        res.raw[rate] = np.asarray(r)
    return res
