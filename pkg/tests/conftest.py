"""Shared fixtures.

Trained models are cached in pytest's cache directory under a key made from
the model, trainer and numeric-core sources, so editing any of them retrains.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import pytest

import segshield
from segshield.refmodel import load_model, save_model, train
from segshield.refmodel.model import sidecar_path

SRC = Path(segshield.__file__).parent
SURROGATE_SEEDS = (1, 2, 3)
SURROGATE_STEPS = 600


def source_key() -> str:
    h = hashlib.sha256()
    files = sorted((SRC / "numcore").glob("*.py")) + sorted((SRC / "refmodel").glob("*.py"))
    for p in files:
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def cached_model(config, seed: int, steps: int = 2000):
    folder = Path(config.cache.mkdir("segshield-models"))
    path = folder / f"{source_key()}-seed{seed}-steps{steps}.rtn"
    if path.is_file() and sidecar_path(path).is_file():
        return load_model(path), path
    model = train(seed, steps=steps)
    save_model(model, path)
    return model, path


@pytest.fixture(scope="session")
def trained(request):
    """``(model, checkpoint path)`` of the default reference model (seed 0)."""
    return cached_model(request.config, 0)


@pytest.fixture(scope="session")
def trained_model(trained):
    return trained[0]


@pytest.fixture(scope="session")
def surrogate_models(request):
    return [cached_model(request.config, s, SURROGATE_STEPS)[0] for s in SURROGATE_SEEDS]


# -- acceptance summary ---------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records a verdict line and fails the test if not ok."""

    def check(n: int, ok: bool, detail: str):
        ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[n])
        assert ok, detail

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
