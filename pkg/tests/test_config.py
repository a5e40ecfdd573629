from pathlib import Path

import pytest

from config import load_config, registry_to_yaml, save_registry
from errors import ConfigError
from orchestrator import template_registry
from tests.fixtures import write_config

REPO = Path(__file__).resolve().parent.parent


def test_load_config(tmp_path, mini_root):
    config = load_config(write_config(tmp_path / "run.yaml", mini_root, seed=3))
    assert config.seed == 3
    assert config.split == "test"
    assert config.db_dir == mini_root / "db"
    assert config.predictions_path == tmp_path / "output" / "predictions.json"
    assert config.registry == template_registry()


def test_explicit_db_dir_kept(tmp_path, mini_root):
    config = load_config(write_config(tmp_path / "run.yaml", mini_root, db_dir=str(tmp_path / "venues")))
    assert config.db_dir == tmp_path / "venues"


def test_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("corpus_root: data/multiwoz22\n", encoding="utf-8")
    config = load_config(path)
    assert config.fuzzy_threshold == 0.9
    assert config.concurrency == 4
    assert config.registry == template_registry()


@pytest.mark.parametrize("name", ["config.example.yaml", "config.template.yaml"])
def test_shipped_configs_validate(name):
    config = load_config(REPO / name)
    assert set(config.registry.trackers) == {"restaurant", "hotel", "attraction", "train", "taxi"}


def test_example_config_uses_an_llm_responder():
    assert load_config(REPO / "config.example.yaml").registry.has_llm_agents()
    assert not load_config(REPO / "config.template.yaml").registry.has_llm_agents()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_invalid_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("corpus_root: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert "invalid YAML" in str(excinfo.value)


def test_top_level_must_be_mapping(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("- corpus_root\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("overrides", [
    {"workers": 3},
    {"split": "validation_matched"},
    {"fuzzy_threshold": 1.5},
    {"concurrency": 0},
])
def test_rejected_fields(tmp_path, mini_root, overrides):
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path / "run.yaml", mini_root, **overrides))


def test_registry_without_taxi_agent_is_rejected(tmp_path, mini_root):
    registry = template_registry().model_dump(exclude_none=True)
    del registry["responders"]["taxi"]
    with pytest.raises(ConfigError) as excinfo:
        load_config(write_config(tmp_path / "run.yaml", mini_root, registry=registry))
    assert "taxi" in str(excinfo.value)


def test_llm_agent_needs_model(tmp_path, mini_root):
    registry = template_registry().model_dump(exclude_none=True)
    registry["responders"]["hotel"] = {"name": "nlg-hotel", "kind": "llm", "domain": "hotel"}
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path / "run.yaml", mini_root, registry=registry))


def test_saved_registry_loads_back(tmp_path):
    registry = template_registry("ask_only")
    path = save_registry(registry, tmp_path / "nested" / "registry.yaml")
    text = path.read_text(encoding="utf-8")
    assert text == registry_to_yaml(registry)
    assert text.startswith("registry:")

    with open(tmp_path / "run.yaml", "w", encoding="utf-8") as f:
        f.write("corpus_root: data/multiwoz22\n" + text)
    assert load_config(tmp_path / "run.yaml").registry == registry
