import json

import pytest

from latticerag.config import Config, ConfigError, config_from_dict, load_config, validate


def test_defaults():
    cfg = Config()
    assert cfg.rq.level_sizes == (96, 24, 12)
    assert cfg.retrieval.weights == (0.3, 0.5, 0.2)
    assert (cfg.retrieval.summary_boost, cfg.retrieval.bridge_boost) == (1.2, 1.3)
    assert cfg.summaries.budget == 30
    assert (cfg.pipeline.k_rrf, cfg.pipeline.rerank_in, cfg.pipeline.rerank_out) == (60, 25, 12)
    assert (cfg.chunking.target_tokens, cfg.chunking.overlap_tokens) == (300, 50)
    assert validate(cfg) is cfg


def test_round_trip_through_dict():
    cfg = Config().replace("rq", level_sizes=(4, 2))
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="rq.levels"):
        config_from_dict({"rq": {"levels": [1]}})
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"rq": 3})


@pytest.mark.parametrize("section, change", [
    ("rq", {"fuzziness": 1.0}),
    ("rq", {"level_sizes": (0,)}),
    ("chunking", {"overlap_tokens": 300}),
    ("summaries", {"budget": -1}),
    ("provider", {"mode": "psychic"}),
    ("client", {"mode": "oracle"}),
    ("retrieval", {"weights": (1.0,)}),
])
def test_validate_rejects(section, change):
    with pytest.raises(ConfigError):
        validate(Config().replace(section, **change))


def test_load_config_resolves_vector_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"provider": {"vector_file": "v.tsv"}}))
    assert load_config(path).provider.vector_file == str(tmp_path / "v.tsv")
    path.write_text("{broken")
    with pytest.raises(ConfigError):
        load_config(path)
