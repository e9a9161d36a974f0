"""
Unit tests for configuration loading, overrides and thread resolution.
"""

import json

import pytest

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from config import (CONFIG_SCHEMA, THREADS_ENV, apply_overrides, load_config, parse_config_text, resolve_threads,
                    sim_config_from_dict, tuning_policy_from_dict, validate_config)
from errors import ArtifactIOError, ConfigError
from model_select import TuningMethod
from simgen import GraphKind

import allure


class TestValidation:

    @allure.feature("Configuration")
    @allure.story("Defaults")
    @pytest.mark.unit
    def test_empty_config_has_defaults(self):
        config = validate_config({})
        assert config["seed"] == 0
        assert config["simulation"]["p"] == 20
        assert config["tuning"]["method"] == "ebic"
        assert config["bench"]["methods"] == ["dri"]

    @allure.feature("Configuration")
    @allure.story("Schema")
    @pytest.mark.unit
    def test_unknown_field_names_its_path(self):
        with pytest.raises(ConfigError) as excinfo:
            validate_config({"simulation": {"nodes": 5}})
        assert excinfo.value.field == "simulation.nodes"

    @allure.feature("Configuration")
    @allure.story("Schema")
    @pytest.mark.unit
    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="valid integer") as excinfo:
            validate_config({"simulation": {"n": "many"}})
        assert excinfo.value.field == "simulation.n"

    @allure.feature("Configuration")
    @allure.story("Schema")
    @pytest.mark.unit
    def test_bool_is_not_an_int(self):
        with pytest.raises(ConfigError):
            validate_config({"seed": True})

    @allure.feature("Configuration")
    @allure.story("Schema")
    @pytest.mark.unit
    def test_choice_and_constraint(self):
        with pytest.raises(ConfigError, match="'ebic' or 'cv'") as excinfo:
            validate_config({"tuning": {"method": "aic"}})
        assert excinfo.value.field == "tuning.method"
        with pytest.raises(ConfigError, match="greater than or equal to 2") as excinfo:
            validate_config({"tuning": {"folds": 1}})
        assert excinfo.value.field == "tuning.folds"

    @allure.feature("Configuration")
    @allure.story("Schema")
    @pytest.mark.unit
    def test_list_entries_report_the_list_field(self):
        with pytest.raises(ConfigError) as excinfo:
            validate_config({"tuning": {"tau_grid": [0.1, -0.2]}})
        assert excinfo.value.field == "tuning.tau_grid"
        with pytest.raises(ConfigError):
            validate_config({"bench": {"methods": []}})

    @allure.feature("Configuration")
    @allure.story("Schema")
    @pytest.mark.unit
    def test_section_must_be_an_object(self):
        with pytest.raises(ConfigError) as excinfo:
            validate_config({"simulation": 5})
        assert excinfo.value.field == "simulation"

    @allure.feature("Configuration")
    @allure.story("Schema")
    @pytest.mark.unit
    def test_integers_are_accepted_for_floats(self):
        config = validate_config({"simulation": {"alpha0": 2, "poisson_rate": 4}})
        assert config["simulation"]["alpha0"] == 2.0
        assert isinstance(config["simulation"]["poisson_rate"], float)

    @allure.feature("Configuration")
    @allure.story("Schema")
    @pytest.mark.unit
    def test_published_schema_describes_every_field(self):
        sections = {name: CONFIG_SCHEMA["$defs"][ref] for name, ref in
                    (("simulation", "SimulationSection"), ("tuning", "TuningSection"), ("bench", "BenchSection"))}
        assert {"out_dir", "seed", "threads", "simulation", "tuning", "bench"} == set(CONFIG_SCHEMA["properties"])
        assert CONFIG_SCHEMA["additionalProperties"] is False
        assert sections["tuning"]["properties"]["folds"]["minimum"] == 2
        assert sections["simulation"]["properties"]["graph"]["enum"] == ["hub", "chain", "random"]
        for section in sections.values():
            assert section["additionalProperties"] is False
            assert all("description" in spec for spec in section["properties"].values())

    @allure.feature("Configuration")
    @allure.story("Syntax")
    @pytest.mark.unit
    def test_syntax_error_reports_position(self):
        with pytest.raises(ConfigError, match=r"cfg\.json:2:"):
            parse_config_text('{\n  "seed": ,\n}', "cfg.json")


class TestLoading:

    @allure.feature("Configuration")
    @allure.story("Files")
    @pytest.mark.unit
    def test_load_from_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 7, "simulation": {"p": 4, "graph": "chain"}}))
        config = load_config(path)
        assert config["seed"] == 7
        assert config["simulation"]["graph"] == "chain"

    @allure.feature("Configuration")
    @allure.story("Files")
    @pytest.mark.unit
    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactIOError):
            load_config(tmp_path / "absent.json")

    @allure.feature("Configuration")
    @allure.story("Overrides")
    @pytest.mark.unit
    def test_overrides_replace_values_and_skip_none(self):
        config = apply_overrides(validate_config({"seed": 3}), {"seed": None, "tuning.method": "cv"})
        assert config["seed"] == 3
        assert config["tuning"]["method"] == "cv"

    @allure.feature("Configuration")
    @allure.story("Overrides")
    @pytest.mark.unit
    def test_overrides_are_validated(self):
        with pytest.raises(ConfigError):
            apply_overrides(validate_config({}), {"tuning.folds": 0})


class TestConversion:

    @allure.feature("Configuration")
    @allure.story("Simulation")
    @pytest.mark.unit
    def test_q_defaults_to_p(self):
        section = validate_config({"simulation": {"p": 6, "graph": "chain"}})["simulation"]
        cfg = sim_config_from_dict(section, seed=5)
        assert (cfg.p, cfg.q, cfg.seed) == (6, 6, 5)
        assert cfg.graph is GraphKind.CHAIN

    @allure.feature("Configuration")
    @allure.story("Simulation")
    @pytest.mark.unit
    def test_simulation_errors_name_the_section(self):
        section = validate_config({"simulation": {"p": 6, "q": 4}})["simulation"]
        with pytest.raises(ConfigError) as excinfo:
            sim_config_from_dict(section, seed=0)
        assert excinfo.value.field == "simulation.q"
        assert "q >= p" in str(excinfo.value)

    @allure.feature("Configuration")
    @allure.story("Tuning")
    @pytest.mark.unit
    def test_tuning_policy(self):
        section = validate_config({"tuning": {"method": "cv", "folds": 3, "k_grid": [1, 2]}})["tuning"]
        policy = tuning_policy_from_dict(section, seed=9)
        assert policy.method is TuningMethod.CV
        assert policy.k_grid == (1, 2)
        assert policy.seed == 9


class TestThreads:

    @allure.feature("Configuration")
    @allure.story("Threads")
    @pytest.mark.unit
    def test_precedence(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "6")
        assert resolve_threads(2, 4) == 2
        assert resolve_threads(None, 4) == 4
        assert resolve_threads(None, None) == 6

    @allure.feature("Configuration")
    @allure.story("Threads")
    @pytest.mark.unit
    def test_default_is_one(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert resolve_threads(None) == 1

    @allure.feature("Configuration")
    @allure.story("Threads")
    @pytest.mark.unit
    def test_bad_environment_value(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "lots")
        with pytest.raises(ConfigError):
            resolve_threads(None)
