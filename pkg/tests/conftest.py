"""Shared fixtures. The session-scoped workbench runs the expensive
training pipelines at most once per (seed, variant) and caches the results
for the pipeline and acceptance tests."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from camoprop import pipeline
from camoprop.config import RunConfig


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64([seed, 0x7E57]))


@dataclass
class Workbench:
    root: Path
    _runs: dict = field(default_factory=dict)

    def config(self, seed: int, variant: str = "full") -> RunConfig:
        kw = {}
        if variant == "no_affinity":
            kw["use_affinity"] = False
        elif variant == "no_pe":
            kw["train_pe"] = False
        elif variant != "full":
            raise ValueError(variant)
        return RunConfig(seed=seed, out_dir=str(self.root / f"{variant}_s{seed}"),
                         **kw)

    def run(self, seed: int, variant: str = "full") -> pipeline.PipelineResult:
        key = (seed, variant)
        if key not in self._runs:
            cfg = self.config(seed, variant)
            self._runs[key] = pipeline.run_full_pipeline(cfg)
        return self._runs[key]


@pytest.fixture(scope="session")
def workbench(tmp_path_factory) -> Workbench:
    return Workbench(root=tmp_path_factory.mktemp("runs"))


@pytest.fixture(scope="session")
def trained_run(workbench) -> pipeline.PipelineResult:
    """The seed-0 full pipeline, shared across tests."""
    return workbench.run(0, "full")
