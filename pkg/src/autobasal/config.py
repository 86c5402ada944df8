"""Run configuration: YAML ingestion, validation, defaults.

Every quantity with clinical meaning (glucose targets, thresholds,
sampling cadences, screening bounds, the injection clock hour, the
first-day insulin cap) lives here as a config default rather than as a
literal inside the pipeline code. Validation is strict: any key the
schema does not know is rejected with its dotted path, so typos fail
loudly instead of silently running the defaults.
"""

from dataclasses import dataclass, field, replace

import yaml

from .cohort import PopulationConfig, ScreeningRules
from .estimate import EstimatorConfig
from .scenario import ClinicalTargets, PipelineConfig, ScenarioSpec
from .simulate import ControllerConfig, InjectionParams, SimGrid

SCHEMA_VERSION = 1


class ConfigError(Exception):
    """A configuration file or mapping failed validation."""


def _expect_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return value


def _take(section, path, known):
    """Convert the known keys of a mapping, rejecting everything else."""
    for key in section:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
    out = {}
    for key, conv in known.items():
        if key in section:
            try:
                out[key] = conv(section[key])
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}.{key}: {exc}") from None
    return out


def _num(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return v


def _str(v) -> str:
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


def _opt_num(v):
    return None if v is None else _num(v)


_DEFAULT_SCENARIOS = (
    ScenarioSpec(name="cl48", closed_loop_hours=48.0, gain_multiplier=1.0),
    ScenarioSpec(name="cl24", closed_loop_hours=24.0, gain_multiplier=1.0),
    ScenarioSpec(name="cl24x3", closed_loop_hours=24.0, gain_multiplier=3.0),
)


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully resolved configuration for every CLI command."""

    seed: int = 1234
    output_dir: str = "out"
    cohort_size: int = 100
    population: PopulationConfig = field(default_factory=lambda: PopulationConfig(seed=1234))
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    scenarios: tuple[ScenarioSpec, ...] = _DEFAULT_SCENARIOS

    @classmethod
    def default(cls) -> "RunConfig":
        return cls()

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if data is None:
            data = {}
        return cls.from_dict(data, source=str(path))

    @classmethod
    def from_dict(cls, data, source="config") -> "RunConfig":
        data = _expect_mapping(data, source)
        known_sections = {
            "schema_version", "seed", "output_dir", "cohort", "controller",
            "grid", "estimator", "injection", "targets", "scenarios",
        }
        for key in data:
            if key not in known_sections:
                raise ConfigError(f"{source}.{key}: unknown key")

        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"{source}.schema_version: expected {SCHEMA_VERSION}, got {version!r}"
            )

        top = _take(
            {k: v for k, v in data.items() if k in ("seed", "output_dir")},
            source, {"seed": _int, "output_dir": _str},
        )
        seed = top.get("seed", cls.seed)
        if seed < 0:
            raise ConfigError(f"{source}.seed: must be nonnegative")

        targets = cls._targets(data.get("targets", {}), f"{source}.targets")
        population, cohort_size = cls._cohort(
            data.get("cohort", {}), f"{source}.cohort", seed, targets
        )
        controller = cls._controller(
            data.get("controller", {}), f"{source}.controller", targets
        )
        grid = cls._grid(data.get("grid", {}), f"{source}.grid")
        estimator = cls._estimator(
            data.get("estimator", {}), f"{source}.estimator", targets
        )
        injection = cls._injection(data.get("injection", {}), f"{source}.injection")
        scenarios = cls._scenarios(
            data.get("scenarios", None), f"{source}.scenarios", targets
        )
        return cls(
            seed=seed,
            output_dir=top.get("output_dir", cls.output_dir),
            cohort_size=cohort_size,
            population=population,
            pipeline=PipelineConfig(
                controller=controller,
                grid=grid,
                estimator=estimator,
                injection=injection,
                targets=targets,
            ),
            scenarios=scenarios,
        )

    @staticmethod
    def _targets(sec, path) -> ClinicalTargets:
        vals = _take(_expect_mapping(sec, path), path, {
            "y_ref": _num, "range_low": _num, "range_high": _num,
            "hypo": _num, "first_day_insulin_cap_u_per_kg": _num,
        })
        t = replace(ClinicalTargets(), **vals)
        if not (0 < t.hypo < t.range_low < t.range_high):
            raise ConfigError(f"{path}: need 0 < hypo < range_low < range_high")
        if not (t.range_low <= t.y_ref <= t.range_high):
            raise ConfigError(f"{path}.y_ref: must lie inside the target range")
        if t.first_day_insulin_cap_u_per_kg <= 0:
            raise ConfigError(f"{path}.first_day_insulin_cap_u_per_kg: must be positive")
        return t

    @staticmethod
    def _cohort(sec, path, seed, targets) -> tuple[PopulationConfig, int]:
        sec = dict(_expect_mapping(sec, path))
        screening_sec = _expect_mapping(sec.pop("screening"), f"{path}.screening") \
            if "screening" in sec else {}
        vals = _take(sec, path, {
            "size": _int, "cv_p4": _num, "cv_p6": _num, "cv_p7": _num,
            "weight_mean": _num, "weight_sd": _num,
            "weight_min": _num, "weight_max": _num,
            "process_noise_sd": _num, "cgm_noise_sd": _num,
        })
        size = vals.pop("size", RunConfig.cohort_size)
        if size < 1:
            raise ConfigError(f"{path}.size: must be >= 1")
        svals = _take(screening_sec, f"{path}.screening", {
            "fasting_min": _num, "fasting_max": _num,
            "dose_cap_u_day": _num, "y_ref": _num,
        })
        svals.setdefault("y_ref", targets.y_ref)
        screening = replace(ScreeningRules(), **svals)
        if not (0 < screening.fasting_min < screening.fasting_max):
            raise ConfigError(f"{path}.screening: need 0 < fasting_min < fasting_max")
        if screening.dose_cap_u_day <= 0:
            raise ConfigError(f"{path}.screening.dose_cap_u_day: must be positive")
        pop = replace(PopulationConfig(), seed=seed, screening=screening, **vals)
        try:
            pop.validate()
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return pop, size

    @staticmethod
    def _controller(sec, path, targets) -> ControllerConfig:
        vals = _take(_expect_mapping(sec, path), path, {
            "gain": _num, "y_ref": _num, "u_max": _num, "u_init": _num,
        })
        vals.setdefault("y_ref", targets.y_ref)
        c = replace(ControllerConfig(), **vals)
        if c.gain < 0 or c.u_max <= 0 or c.u_init < 0:
            raise ConfigError(f"{path}: need gain >= 0, u_max > 0, u_init >= 0")
        return c

    @staticmethod
    def _grid(sec, path) -> SimGrid:
        vals = _take(_expect_mapping(sec, path), path, {
            "dt_min": _num, "sample_min": _num,
        })
        g = replace(SimGrid(), **vals)
        try:
            g.validate()
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return g

    @staticmethod
    def _estimator(sec, path, targets) -> EstimatorConfig:
        vals = _take(_expect_mapping(sec, path), path, {
            "sigma": _opt_num, "r_cgm": _opt_num,
            "max_evals": _int, "rel_tol": _num, "y_ref": _num,
        })
        vals.setdefault("y_ref", targets.y_ref)
        e = replace(EstimatorConfig(), **vals)
        if e.max_evals < 1:
            raise ConfigError(f"{path}.max_evals: must be >= 1")
        if e.rel_tol <= 0:
            raise ConfigError(f"{path}.rel_tol: must be positive")
        return e

    @staticmethod
    def _injection(sec, path) -> InjectionParams:
        vals = _take(_expect_mapping(sec, path), path, {
            "p1_long": _num, "start_hour": _num,
        })
        inj = replace(InjectionParams(), **vals)
        try:
            inj.validate()
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return inj

    @staticmethod
    def _scenarios(sec, path, targets) -> tuple[ScenarioSpec, ...]:
        if sec is None:
            return tuple(replace(s, y_ref=targets.y_ref) for s in _DEFAULT_SCENARIOS)
        if not isinstance(sec, list):
            raise ConfigError(f"{path}: expected a list")
        specs = []
        for i, item in enumerate(sec):
            p = f"{path}[{i}]"
            vals = _take(_expect_mapping(item, p), p, {
                "name": _str, "closed_loop_hours": _num,
                "gain_multiplier": _num, "injection_days": _int, "y_ref": _num,
            })
            if "name" not in vals:
                raise ConfigError(f"{p}.name: required")
            if "closed_loop_hours" not in vals:
                raise ConfigError(f"{p}.closed_loop_hours: required")
            vals.setdefault("y_ref", targets.y_ref)
            spec = ScenarioSpec(**vals)
            try:
                spec.validate()
            except ValueError as exc:
                raise ConfigError(f"{p}: {exc}") from None
            specs.append(spec)
        names = [s.name for s in specs]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ConfigError(f"{path}: duplicate scenario names {sorted(dupes)}")
        return tuple(specs)

    def with_overrides(self, seed=None, output_dir=None) -> "RunConfig":
        """Apply CLI flag overrides; the seed also reseeds the population."""
        out = self
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed: must be nonnegative")
            out = replace(out, seed=seed, population=replace(out.population, seed=seed))
        if output_dir is not None:
            out = replace(out, output_dir=str(output_dir))
        return out

    def scenario(self, name: str) -> ScenarioSpec:
        for s in self.scenarios:
            if s.name == name:
                return s
        available = ", ".join(s.name for s in self.scenarios) or "none configured"
        raise ConfigError(f"unknown scenario {name!r} (available: {available})")

    def to_dict(self) -> dict:
        """Fully explicit mapping that from_dict round-trips exactly."""
        pop = self.population
        pl = self.pipeline
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "cohort": {
                "size": self.cohort_size,
                "cv_p4": pop.cv_p4, "cv_p6": pop.cv_p6, "cv_p7": pop.cv_p7,
                "weight_mean": pop.weight_mean, "weight_sd": pop.weight_sd,
                "weight_min": pop.weight_min, "weight_max": pop.weight_max,
                "process_noise_sd": pop.process_noise_sd,
                "cgm_noise_sd": pop.cgm_noise_sd,
                "screening": {
                    "fasting_min": pop.screening.fasting_min,
                    "fasting_max": pop.screening.fasting_max,
                    "dose_cap_u_day": pop.screening.dose_cap_u_day,
                    "y_ref": pop.screening.y_ref,
                },
            },
            "controller": {
                "gain": pl.controller.gain, "y_ref": pl.controller.y_ref,
                "u_max": pl.controller.u_max, "u_init": pl.controller.u_init,
            },
            "grid": {
                "dt_min": pl.grid.dt_min, "sample_min": pl.grid.sample_min,
            },
            "estimator": {
                "sigma": pl.estimator.sigma, "r_cgm": pl.estimator.r_cgm,
                "max_evals": pl.estimator.max_evals,
                "rel_tol": pl.estimator.rel_tol, "y_ref": pl.estimator.y_ref,
            },
            "injection": {
                "p1_long": pl.injection.p1_long,
                "start_hour": pl.injection.start_hour,
            },
            "targets": {
                "y_ref": pl.targets.y_ref,
                "range_low": pl.targets.range_low,
                "range_high": pl.targets.range_high,
                "hypo": pl.targets.hypo,
                "first_day_insulin_cap_u_per_kg": pl.targets.first_day_insulin_cap_u_per_kg,
            },
            "scenarios": [
                {
                    "name": s.name,
                    "closed_loop_hours": s.closed_loop_hours,
                    "gain_multiplier": s.gain_multiplier,
                    "injection_days": s.injection_days,
                    "y_ref": s.y_ref,
                }
                for s in self.scenarios
            ],
        }
