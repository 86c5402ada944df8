"""Schema validation, defaults, cascades, and round-tripping of RunConfig."""

import pytest

from autobasal.config import SCHEMA_VERSION, ConfigError, RunConfig


class TestDefaults:
    def test_bare_default(self):
        cfg = RunConfig.default()
        assert cfg.seed == 1234
        assert cfg.cohort_size == 100
        assert cfg.population.seed == cfg.seed
        assert [s.name for s in cfg.scenarios] == ["cl48", "cl24", "cl24x3"]
        assert cfg.scenario("cl24x3").gain_multiplier == 3.0

    def test_empty_mapping_is_the_default(self):
        assert RunConfig.from_dict({}) == RunConfig.default()

    def test_round_trip(self):
        cfg = RunConfig.from_dict({
            "seed": 77,
            "cohort": {"size": 10, "cv_p4": 0.2},
            "controller": {"gain": 1e-5},
            "scenarios": [{"name": "s", "closed_loop_hours": 12.0}],
        })
        assert RunConfig.from_dict(cfg.to_dict()) == cfg
        assert RunConfig.from_dict(RunConfig.default().to_dict()) == RunConfig.default()


class TestRejections:
    def test_top_level_shape(self):
        with pytest.raises(ConfigError, match="expected a mapping"):
            RunConfig.from_dict([1, 2])

    @pytest.mark.parametrize("data,fragment", [
        ({"bogus": 1}, "config.bogus: unknown key"),
        ({"cohort": {"sise": 5}}, "config.cohort.sise: unknown key"),
        ({"cohort": {"screening": {"dose_cap": 1}}},
         "config.cohort.screening.dose_cap: unknown key"),
        ({"schema_version": 2}, "schema_version: expected 1"),
        ({"seed": "xyz"}, "config.seed: expected an integer"),
        ({"seed": -1}, "config.seed: must be nonnegative"),
        ({"controller": {"gain": True}}, "config.controller.gain: expected a number"),
        ({"controller": {"gain": -1e-6}}, "config.controller"),
        ({"cohort": {"size": 0}}, "config.cohort.size: must be >= 1"),
        ({"grid": {"dt_min": 2.0}}, "config.grid"),
        ({"estimator": {"max_evals": 0}}, "config.estimator.max_evals"),
        ({"injection": {"start_hour": 24.0}}, "config.injection"),
        ({"targets": {"hypo": 5.0}}, "config.targets"),
        ({"targets": {"y_ref": 9.0}}, "config.targets.y_ref"),
        ({"scenarios": {"name": "s"}}, "config.scenarios: expected a list"),
        ({"scenarios": [{"closed_loop_hours": 24.0}]},
         "config.scenarios[0].name: required"),
        ({"scenarios": [{"name": "s"}]},
         "config.scenarios[0].closed_loop_hours: required"),
        ({"scenarios": [{"name": "s", "closed_loop_hours": 0.0}]},
         "config.scenarios[0]"),
        ({"scenarios": [
            {"name": "a", "closed_loop_hours": 24.0},
            {"name": "a", "closed_loop_hours": 48.0},
        ]}, "duplicate scenario names"),
    ])
    def test_bad_documents(self, data, fragment):
        with pytest.raises(ConfigError) as err:
            RunConfig.from_dict(data)
        assert fragment in str(err.value)


class TestCascade:
    def test_targets_y_ref_flows_everywhere(self):
        cfg = RunConfig.from_dict({"targets": {"y_ref": 6.0}})
        assert cfg.pipeline.targets.y_ref == 6.0
        assert cfg.pipeline.controller.y_ref == 6.0
        assert cfg.pipeline.estimator.y_ref == 6.0
        assert cfg.population.screening.y_ref == 6.0
        assert all(s.y_ref == 6.0 for s in cfg.scenarios)

    def test_explicit_section_value_wins(self):
        cfg = RunConfig.from_dict({
            "targets": {"y_ref": 6.0},
            "controller": {"y_ref": 5.5},
            "scenarios": [{"name": "s", "closed_loop_hours": 12.0, "y_ref": 5.0}],
        })
        assert cfg.pipeline.controller.y_ref == 5.5
        assert cfg.scenarios[0].y_ref == 5.0
        assert cfg.pipeline.estimator.y_ref == 6.0

    def test_seed_flows_into_population(self):
        cfg = RunConfig.from_dict({"seed": 9})
        assert cfg.population.seed == 9


class TestOverridesAndLookup:
    def test_with_overrides_reseeds_population(self):
        cfg = RunConfig.default().with_overrides(seed=42, output_dir="elsewhere")
        assert cfg.seed == 42
        assert cfg.population.seed == 42
        assert cfg.output_dir == "elsewhere"

    def test_with_overrides_none_is_identity(self):
        cfg = RunConfig.default()
        assert cfg.with_overrides() == cfg

    def test_with_overrides_rejects_negative_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            RunConfig.default().with_overrides(seed=-3)

    def test_unknown_scenario_lists_available(self):
        with pytest.raises(ConfigError, match=r"available: cl48, cl24, cl24x3"):
            RunConfig.default().scenario("nope")


class TestYaml:
    def test_load_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(
            "seed: 5\n"
            "cohort:\n  size: 3\n"
            "scenarios:\n"
            "  - name: quick\n"
            "    closed_loop_hours: 6\n"
            "    injection_days: 1\n"
        )
        cfg = RunConfig.from_yaml(path)
        assert cfg.seed == 5
        assert cfg.cohort_size == 3
        assert cfg.scenario("quick").injection_days == 1

    def test_empty_file_is_the_default(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert RunConfig.from_yaml(path) == RunConfig.default()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            RunConfig.from_yaml(tmp_path / "absent.yaml")

    def test_unparsable_file(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("seed: [unclosed\n")
        with pytest.raises(ConfigError, match="cannot parse config"):
            RunConfig.from_yaml(path)

    def test_errors_name_the_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("bogus: 1\n")
        with pytest.raises(ConfigError, match=r"run\.yaml\.bogus"):
            RunConfig.from_yaml(path)
