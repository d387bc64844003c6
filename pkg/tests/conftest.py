import time
from types import SimpleNamespace

import pytest

from protofuse.data import SyntheticSpec, generate_synthetic
from protofuse.fusion import FusionConfig
from protofuse.numeric import make_rng
from protofuse.pipeline import FewShotPipeline


@pytest.fixture(scope="session")
def acceptance_world():
    """Default synthetic world with a fully trained pipeline.

    Shared by the acceptance criteria and the heavier integration tests;
    training runs once per session with fixed seeds.
    """
    t0 = time.monotonic()
    spec = SyntheticSpec()
    store, kb = generate_synthetic(spec, make_rng(0))
    pipe = FewShotPipeline(
        fusion=FusionConfig(method="improved_em", setting="transductive"),
        seed=0,
    ).fit(store, kb)
    return SimpleNamespace(
        spec=spec,
        store=store,
        kb=kb,
        pipe=pipe,
        train_seconds=time.monotonic() - t0,
    )
