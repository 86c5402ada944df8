"""Population sampling, screening rules, cohort generation."""

import csv
import math

import numpy as np
import pytest

from autobasal.cohort import (
    Cohort,
    CohortError,
    PopulationConfig,
    ScreeningRules,
    VirtualPatient,
    generate_cohort,
    patient_seed,
    sample_patient,
    screen,
    write_cohort_csv,
)
from autobasal.model import MINUTES_PER_DAY, POPULATION, daily_dose, dose_required, fasting_glucose


def p6_for_fasting(g: float, p4: float = POPULATION.p4, p7: float = POPULATION.p7) -> float:
    # invert the fasting quadratic: pick p6 so the fasting glucose is g
    return (POPULATION.p5 + p4 * p7 * g) * g


def patient_with(truth) -> VirtualPatient:
    return VirtualPatient(id=0, truth=truth, body_weight=90.0, sigma=0.05,
                          r_cgm=0.16, seed=1)


class TestSampling:
    def test_deterministic_given_stream(self):
        cfg = PopulationConfig(seed=5)
        a = sample_patient(cfg, np.random.default_rng(42), patient_id=3)
        b = sample_patient(cfg, np.random.default_rng(42), patient_id=3)
        assert a == b

    def test_cv_zero_collapses_to_population(self):
        cfg = PopulationConfig(cv_p4=0.0, cv_p6=0.0, cv_p7=0.0)
        rng = np.random.default_rng(0)
        drawn = [sample_patient(cfg, rng, i) for i in range(20)]
        assert all(p.truth == POPULATION for p in drawn)
        # weight still varies
        assert len({p.body_weight for p in drawn}) > 1

    def test_lognormal_median_and_spread(self):
        cfg = PopulationConfig(seed=0)
        rng = np.random.default_rng(2024)
        p4s = np.array([sample_patient(cfg, rng, i).truth.p4 for i in range(10_000)])
        assert abs(np.median(p4s) / POPULATION.p4 - 1.0) < 0.05
        # sd of the log matches the cv parameterization
        expect_sd = math.sqrt(math.log1p(0.4 ** 2))
        assert abs(np.std(np.log(p4s)) / expect_sd - 1.0) < 0.05

    def test_weight_truncation(self):
        cfg = PopulationConfig(weight_min=80.0, weight_max=100.0)
        rng = np.random.default_rng(9)
        w = np.array([sample_patient(cfg, rng, i).body_weight for i in range(2000)])
        assert w.min() >= 80.0 and w.max() <= 100.0
        assert abs(w.mean() - 90.0) < 1.0

    def test_noise_levels_copied(self):
        cfg = PopulationConfig(process_noise_sd=0.07, cgm_noise_sd=0.3)
        p = sample_patient(cfg, np.random.default_rng(1))
        assert p.sigma == 0.07
        assert p.r_cgm == pytest.approx(0.3 ** 2)

    def test_impossible_weight_bounds(self):
        cfg = PopulationConfig(weight_mean=90.0, weight_sd=0.1,
                               weight_min=140.0, weight_max=150.0)
        with pytest.raises(CohortError, match="weight"):
            sample_patient(cfg, np.random.default_rng(1))


class TestSeeds:
    def test_pure_function_of_master_and_id(self):
        assert patient_seed(1234, 0) == patient_seed(1234, 0)
        assert patient_seed(1234, 0) != patient_seed(1234, 1)
        assert patient_seed(1234, 0) != patient_seed(1235, 0)

    def test_independent_of_screening_rules(self):
        # tightening the screen changes rejection counts but not the seed
        # or truth of an accepted id
        loose = generate_cohort(3, PopulationConfig(seed=77))
        tight_rules = ScreeningRules(fasting_min=7.6, fasting_max=19.0)
        tight = generate_cohort(3, PopulationConfig(seed=77, screening=tight_rules))
        assert tight.attempts >= loose.attempts
        assert all(p.seed == patient_seed(77, p.id) for p in loose)
        assert all(p.seed == patient_seed(77, p.id) for p in tight)


class TestScreen:
    def test_population_patient_accepted(self):
        res = screen(patient_with(POPULATION))
        assert res.accepted and res.reason is None
        assert res.fasting == pytest.approx(7.873045348181556, abs=1e-12)
        assert res.dose.u_basal == pytest.approx(15.357622570532916, rel=1e-12)

    def test_fasting_too_high(self):
        truth = POPULATION.with_theta(POPULATION.p4, p6_for_fasting(25.0), POPULATION.p7)
        assert fasting_glucose(truth) == pytest.approx(25.0, abs=1e-9)
        res = screen(patient_with(truth))
        assert not res.accepted
        assert res.reason == "fasting out of range"

    def test_fasting_too_low(self):
        truth = POPULATION.with_theta(POPULATION.p4, p6_for_fasting(7.0), POPULATION.p7)
        res = screen(patient_with(truth))
        assert not res.accepted
        assert res.reason == "fasting out of range"

    def test_dose_cap(self):
        # fasting 19.9 stays inside the screen window while the required
        # dose rises past the daily cap
        truth = POPULATION.with_theta(POPULATION.p4, p6_for_fasting(19.9), POPULATION.p7)
        res = screen(patient_with(truth))
        dose = daily_dose(dose_required(truth, 5.8)).u_basal
        assert dose > 150.0
        assert not res.accepted
        assert res.reason == "dose cap"

    def test_dose_cap_from_low_sensitivity(self):
        # alternatively, solve the dose equation for the p4 that needs
        # exactly 200 U/day at the default fasting level
        y = 5.8
        u_t = 200.0 / MINUTES_PER_DAY
        p4 = (POPULATION.p6 - y * POPULATION.p5) / (y * (u_t + POPULATION.p7 * y))
        truth = POPULATION.with_theta(p4, POPULATION.p6, POPULATION.p7)
        assert daily_dose(dose_required(truth, y)).u_basal == pytest.approx(200.0, rel=1e-12)
        res = screen(patient_with(truth), ScreeningRules(fasting_max=40.0))
        assert not res.accepted
        assert res.reason == "dose cap"

    def test_custom_rules(self):
        rules = ScreeningRules(fasting_min=1.0, fasting_max=30.0, dose_cap_u_day=10.0)
        res = screen(patient_with(POPULATION), rules)
        assert not res.accepted
        assert res.reason == "dose cap"


class TestGenerate:
    def test_reproducible(self):
        a = generate_cohort(10, PopulationConfig(seed=99))
        b = generate_cohort(10, PopulationConfig(seed=99))
        assert a.patients == b.patients
        assert a.attempts == b.attempts

    def test_ids_and_screening(self):
        cohort = generate_cohort(25, PopulationConfig(seed=1234))
        assert [p.id for p in cohort] == list(range(25))
        assert all(screen(p, cohort.config.screening).accepted for p in cohort)
        assert cohort.acceptance_rate > 0.2

    def test_cv_zero_all_identical(self):
        cohort = generate_cohort(8, PopulationConfig(seed=4, cv_p4=0.0, cv_p6=0.0, cv_p7=0.0))
        assert all(p.truth == POPULATION for p in cohort)
        assert cohort.attempts == 8

    def test_len_iter_getitem(self):
        cohort = generate_cohort(4, PopulationConfig(seed=2))
        assert len(cohort) == 4
        assert cohort[2].id == 2
        assert [p.id for p in cohort] == [0, 1, 2, 3]

    def test_size_must_be_positive(self):
        with pytest.raises(ValueError):
            generate_cohort(0, PopulationConfig())

    def test_acceptance_collapse_raises(self):
        # cv 0 pins fasting at 7.87, outside this screen window, so the
        # acceptance rate stays at zero until the attempt cap trips
        rules = ScreeningRules(fasting_min=19.0, fasting_max=20.0)
        cfg = PopulationConfig(seed=1, cv_p4=0.0, cv_p6=0.0, cv_p7=0.0, screening=rules)
        with pytest.raises(CohortError, match="acceptance rate"):
            generate_cohort(5, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PopulationConfig(cv_p4=-0.1).validate()
        with pytest.raises(ValueError):
            PopulationConfig(weight_min=100.0, weight_max=50.0).validate()


class TestCohortCsv:
    def test_round_trip_and_determinism(self, tmp_path):
        cohort = generate_cohort(6, PopulationConfig(seed=31))
        path = tmp_path / "cohort.csv"
        write_cohort_csv(path, cohort)
        first = path.read_bytes()
        write_cohort_csv(path, cohort)
        assert path.read_bytes() == first

        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        for row, p in zip(rows, cohort):
            assert int(row["id"]) == p.id
            truth = POPULATION.with_theta(
                float(row["p4"]), float(row["p6"]), float(row["p7"])
            )
            assert truth == p.truth  # repr round-trip is exact
            assert float(row["fasting_mmol_L"]) == pytest.approx(fasting_glucose(p.truth))
            assert screen(p, cohort.config.screening).accepted

    def test_header(self, tmp_path):
        cohort = generate_cohort(1, PopulationConfig(seed=8))
        path = tmp_path / "cohort.csv"
        write_cohort_csv(path, cohort)
        header = path.read_text().splitlines()[0]
        assert header == "id,p4,p6,p7,weight_kg,fasting_mmol_L,u_basal_true"
