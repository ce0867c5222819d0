import json
from pathlib import Path

import pytest

from tinyforge.runtime import CONFIG_PRESETS, EngineOptions, Engine, generate_model, load_model
from tinyforge.store import StorageConfig

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def golden_generation() -> dict:
    return json.loads((GOLDEN_DIR / "tiny_seed42_generation.json").read_text())


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("model") / "tiny"
    generate_model(CONFIG_PRESETS["tiny"], 42, out)
    return out


@pytest.fixture()
def make_engine(tiny_model_dir, tmp_path):
    """Factory building engines against the shared tiny model; each engine
    gets its own flash dir and is closed on teardown."""
    engines: list[Engine] = []
    counter = [0]

    def _make(**kwargs) -> Engine:
        counter[0] += 1
        storage = kwargs.pop("storage", None)
        if storage is None:
            storage = StorageConfig(flash_dir=tmp_path / f"flash{counter[0]}")
        storage_kwargs = kwargs.pop("storage_kwargs", None)
        if storage_kwargs:
            storage = StorageConfig(
                flash_dir=tmp_path / f"flash{counter[0]}", **storage_kwargs
            )
        eng = load_model(tiny_model_dir, EngineOptions(storage=storage, **kwargs))
        engines.append(eng)
        return eng

    yield _make
    for e in engines:
        e.close()
