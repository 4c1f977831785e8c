import numpy as np
import pytest

from confusionkit.audio import CAP_DB, Waveform, si_sdr
from confusionkit.errors import LengthMismatchError
from confusionkit.postfilter import (
    PostFilterParams,
    SimilarityPair,
    ValidationRecord,
    apply_postfilter,
    build_validation_records,
    decide_confused,
    load_params,
    read_records,
    run_pipeline,
    save_params,
    similarity_features,
    tune_linear,
    tune_rectangular,
    write_records,
)
from confusionkit.simulate import subset, toy_separator

from oracles import brute_force_linear, brute_force_rectangular


def record(pi, phi, keep, sub):
    return ValidationRecord(SimilarityPair(pi, phi), keep, sub)


def random_records(rng, n):
    out = []
    for _ in range(n):
        out.append(
            record(
                float(rng.uniform(0, 2)),
                float(rng.uniform(0, 2)),
                float(rng.uniform(-40, 40)),
                float(rng.uniform(-40, 40)),
            )
        )
    return out


def as_tuples(records):
    return [(r.pair.pi, r.pair.phi, r.keep_value, r.subtract_value) for r in records]


class TestSimilarityFeatures:
    def test_estimate_equal_to_target_enrollment(self, corpus_small, encoder_untrained):
        s = corpus_small.samples[0]
        pair = similarity_features(
            s.enroll_target, s.enroll_target, s.enroll_interferer, encoder_untrained
        )
        assert pair.pi == 0.0
        assert pair.phi > 0.0

    def test_estimate_equal_to_interferer_enrollment(self, corpus_small, encoder_untrained):
        s = corpus_small.samples[0]
        pair = similarity_features(
            s.enroll_interferer, s.enroll_target, s.enroll_interferer, encoder_untrained
        )
        assert pair.phi == 0.0

    def test_confused_samples_sit_at_high_pi_low_phi(self, corpus_clean, encoder_trained):
        """pi - phi rank-correlates with the ground-truth confusion flags."""
        from scipy.stats import spearmanr

        records = build_validation_records(corpus_clean, encoder_trained)
        flags = corpus_clean.confused_flags
        assert any(flags) and not all(flags)
        gap = [r.pair.pi - r.pair.phi for r in records]
        rho = spearmanr(gap, [int(f) for f in flags]).statistic
        assert rho > 0.5


class TestDecideConfused:
    def test_rectangular_tuned_example(self):
        params = PostFilterParams("rectangular", pi_threshold=0.8, phi_threshold=1.0)
        assert decide_confused(SimilarityPair(0.9, 0.2), params)

    def test_boundary_is_strict(self):
        params = PostFilterParams("rectangular", pi_threshold=0.8, phi_threshold=1.0)
        assert not decide_confused(SimilarityPair(0.8, 0.2), params)
        assert not decide_confused(SimilarityPair(0.9, 1.0), params)

    def test_linear_tuned_example(self):
        params = PostFilterParams("linear", mu=0.6, lam=0.3)
        assert decide_confused(SimilarityPair(1.0, 0.8), params)
        assert not decide_confused(SimilarityPair(1.0, 0.9), params)

    def test_rectangular_monotonicity(self):
        rng = np.random.default_rng(2)
        pairs = [SimilarityPair(*rng.uniform(0, 2, 2)) for _ in range(100)]
        base = PostFilterParams("rectangular", pi_threshold=0.7, phi_threshold=0.9)
        tighter_pi = PostFilterParams("rectangular", pi_threshold=0.9, phi_threshold=0.9)
        tighter_phi = PostFilterParams("rectangular", pi_threshold=0.7, phi_threshold=0.7)
        for p in pairs:
            if not decide_confused(p, base):
                assert not decide_confused(p, tighter_pi)
                assert not decide_confused(p, tighter_phi)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            PostFilterParams("rectangular", pi_threshold=0.5)
        with pytest.raises(ValueError):
            PostFilterParams("diagonal", mu=1.0, lam=0.0)


class TestTuners:
    def test_no_benefit_picks_degenerate_rectangular(self):
        rng = np.random.default_rng(3)
        records = [
            record(rng.uniform(0, 2), rng.uniform(0, 2), 10.0, -10.0) for _ in range(30)
        ]
        params, objective = tune_rectangular(records)
        assert objective == pytest.approx(300.0)
        assert not any(
            decide_confused(r.pair, params) for r in records
        )

    def test_no_benefit_picks_degenerate_linear(self):
        rng = np.random.default_rng(4)
        records = [
            record(rng.uniform(0, 2), rng.uniform(0, 2), 5.0, -5.0) for _ in range(30)
        ]
        params, objective = tune_linear(records)
        assert objective == pytest.approx(150.0)
        assert not any(decide_confused(r.pair, params) for r in records)

    def test_planted_rectangular_border_recovered(self):
        """Confused records planted strictly inside pi>0.8, phi<0.3."""
        rng = np.random.default_rng(5)
        records = []
        planted = []
        for i in range(60):
            confused = i % 4 == 0
            if confused:
                pi = rng.uniform(0.95, 1.8)
                phi = rng.uniform(0.02, 0.22)
                records.append(record(pi, phi, -20.0, 25.0))
            else:
                pi = rng.uniform(0.05, 0.72)
                phi = rng.uniform(0.42, 1.9)
                records.append(record(pi, phi, 20.0, -25.0))
            planted.append(confused)
        params, objective = tune_rectangular(records)
        flags = [decide_confused(r.pair, params) for r in records]
        assert flags == planted
        (oa, ob), oracle_obj = brute_force_rectangular(as_tuples(records))
        assert objective == pytest.approx(oracle_obj, abs=1e-9)
        assert (params.pi_threshold, params.phi_threshold) == (oa, ob)

    def test_planted_linear_border_recovered(self):
        rng = np.random.default_rng(6)
        records = []
        planted = []
        for i in range(60):
            confused = i % 5 == 0
            pi = rng.uniform(0.1, 1.9)
            # confused records sit clearly below phi = 0.5 pi, clean ones above
            phi = pi * 0.5 + (rng.uniform(-0.45, -0.15) if confused else rng.uniform(0.15, 0.45))
            records.append(record(pi, max(0.0, phi), 15.0 if not confused else -15.0,
                                  -20.0 if not confused else 20.0))
            planted.append(confused)
        params, objective = tune_linear(records)
        flags = [decide_confused(r.pair, params) for r in records]
        assert flags == planted
        (om, ol), oracle_obj = brute_force_linear(as_tuples(records))
        assert objective == pytest.approx(oracle_obj, abs=1e-9)
        assert (params.mu, params.lam) == (om, ol)

    def test_single_record_takes_best_branch(self):
        r = record(1.0, 0.1, keep=-5.0, sub=30.0)
        params, objective = tune_rectangular([r])
        assert objective == pytest.approx(30.0)
        assert decide_confused(r.pair, params)
        params, objective = tune_rectangular([record(1.0, 0.1, keep=8.0, sub=-3.0)])
        assert objective == pytest.approx(8.0)

    def test_tie_break_prefers_fewest_flags_then_lexicographic(self):
        """With keep == subtract everywhere, every border ties; the
        flag-nothing lexicographic minimum must win."""
        records = [record(1.0, 0.5, 7.0, 7.0), record(0.3, 1.2, -1.0, -1.0)]
        params, _ = tune_rectangular(records)
        assert (params.pi_threshold, params.phi_threshold) == (0.0, 0.0)
        lin_params, _ = tune_linear(records)
        assert (lin_params.mu, lin_params.lam) == (0.0, -1.0)

    def test_matches_oracle_on_random_sets(self):
        for seed in range(10):
            rng = np.random.default_rng(700 + seed)
            records = random_records(rng, 40)
            params, objective = tune_rectangular(records)
            (oa, ob), oracle_obj = brute_force_rectangular(as_tuples(records))
            assert (params.pi_threshold, params.phi_threshold) == (oa, ob)
            assert objective == pytest.approx(oracle_obj, abs=1e-9)
            lin, lin_obj = tune_linear(records)
            (om, ol), lin_oracle = brute_force_linear(as_tuples(records))
            assert (lin.mu, lin.lam) == (om, ol)
            assert lin_obj == pytest.approx(lin_oracle, abs=1e-9)

    def test_tuned_never_below_unfiltered(self):
        for seed in range(5):
            rng = np.random.default_rng(800 + seed)
            records = random_records(rng, 50)
            unfiltered = sum(r.keep_value for r in records)
            assert tune_rectangular(records)[1] >= unfiltered
            assert tune_linear(records)[1] >= unfiltered

    def test_empty_records_rejected(self):
        with pytest.raises(ValueError):
            tune_rectangular([])
        with pytest.raises(ValueError):
            tune_linear([])


class TestApplyPostfilter:
    def test_passthrough_when_not_flagged(self):
        y = Waveform(np.array([1.0, 2.0, 3.0]), 8000)
        est = Waveform(np.array([0.5, 0.25, 0.125]), 8000)
        out = apply_postfilter(y, est, flagged=False)
        assert out is est

    def test_exact_subtraction_recovers_target(self):
        """Dyadic samples make y = s_t + s_i exact, so y - s_i == s_t bitwise."""
        rng = np.random.default_rng(7)
        s_t = np.round(rng.uniform(-1, 1, 64) * 1024) / 1024
        s_i = np.round(rng.uniform(-1, 1, 64) * 1024) / 1024
        y = Waveform(s_t + s_i, 8000)
        out = apply_postfilter(y, Waveform(s_i, 8000), flagged=True)
        np.testing.assert_array_equal(out.samples, s_t)
        assert si_sdr(out, Waveform(s_t, 8000)) == CAP_DB

    def test_false_positive_cost_measured(self, corpus_clean, encoder_trained):
        """Subtracting a clean estimate degrades SI-SDRi."""
        records = build_validation_records(corpus_clean, encoder_trained)
        clean = [r for r, f in zip(records, corpus_clean.confused_flags) if not f]
        assert clean
        for r in clean:
            assert r.subtract_value < r.keep_value

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            apply_postfilter(
                Waveform(np.ones(4), 8000), Waveform(np.ones(5), 8000), True
            )


class TestRunPipeline:
    def test_deterministic(self, corpus_small, encoder_trained):
        params = PostFilterParams("rectangular", pi_threshold=0.8, phi_threshold=1.0)
        a = run_pipeline(corpus_small, encoder_trained, params)
        b = run_pipeline(corpus_small, encoder_trained, params)
        assert a == b

    def test_tuned_filter_improves_confused_corpus(self, corpus_small, encoder_trained):
        dev = subset(corpus_small, list(range(0, len(corpus_small.samples), 2)))
        test = subset(corpus_small, list(range(1, len(corpus_small.samples), 2)))
        params, _ = tune_linear(build_validation_records(dev, encoder_trained))
        records = run_pipeline(test, encoder_trained, params)
        raw = np.mean([r.si_sdri_raw for r in records])
        final = np.mean([r.si_sdri_final for r in records])
        assert final > raw

    def test_clean_corpus_unchanged_within_false_positive_cost(
        self, corpus_small, encoder_trained
    ):
        """With no confusions injected, sane params leave the mean nearly alone."""
        clean = subset(
            corpus_small,
            [i for i, f in enumerate(corpus_small.confused_flags) if not f],
        )
        params = PostFilterParams("rectangular", pi_threshold=0.8, phi_threshold=0.4)
        records = run_pipeline(clean, encoder_trained, params)
        false_pos = [r for r in records if r.flagged]
        unflagged = [r for r in records if not r.flagged]
        for r in unflagged:
            assert r.si_sdri_final == r.si_sdri_raw
        drop = sum(r.si_sdri_raw - r.si_sdri_final for r in false_pos)
        mean_raw = np.mean([r.si_sdri_raw for r in records])
        mean_final = np.mean([r.si_sdri_final for r in records])
        assert mean_final == pytest.approx(mean_raw - drop / len(records), abs=1e-9)

    def test_outputs_written(self, corpus_small, encoder_trained, tmp_path):
        params = PostFilterParams("linear", mu=0.6, lam=0.3)
        small = subset(corpus_small, [0, 1, 2])
        records = run_pipeline(
            small, encoder_trained, params, out_dir=tmp_path / "out"
        )
        assert (tmp_path / "out" / "records.csv").exists()
        for r in records:
            assert (tmp_path / "out" / "audio" / f"{r.sample_id}_output.wav").exists()
        back = read_records(tmp_path / "out" / "records.csv")
        assert [r.sample_id for r in back] == [r.sample_id for r in records]
        np.testing.assert_allclose(
            [r.si_sdri_final for r in back], [r.si_sdri_final for r in records]
        )

    def test_presupplied_estimates_used(self, corpus_small, encoder_trained):
        small = subset(corpus_small, [0, 1])
        estimates = [toy_separator(s, corpus_small.confusion) for s in small.samples]
        params = PostFilterParams("rectangular", pi_threshold=2.0, phi_threshold=0.0)
        a = run_pipeline(small, encoder_trained, params, estimates=estimates)
        b = run_pipeline(small, encoder_trained, params)
        assert a == b


class TestRecordsAndParamsIO:
    def test_records_roundtrip(self, tmp_path):
        from confusionkit.postfilter import PipelineRecord

        records = [
            PipelineRecord("sample_00000", 0.1234567890123, 1.9, True, -31.5, 60.0),
            PipelineRecord("sample_00001", 0.5, 0.25, False, 12.25, 12.25),
        ]
        path = tmp_path / "records.csv"
        write_records(records, path)
        assert read_records(path) == records

    def test_params_roundtrip_and_schema(self, tmp_path):
        import json

        params = PostFilterParams("rectangular", pi_threshold=0.8, phi_threshold=1.0)
        path = tmp_path / "params.json"
        save_params(params, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"variant", "Pi", "Phi", "mu", "lambda"}
        assert doc["Pi"] == 0.8 and doc["Phi"] == 1.0
        assert doc["mu"] is None and doc["lambda"] is None
        assert load_params(path) == params

    def test_linear_params_roundtrip(self, tmp_path):
        params = PostFilterParams("linear", mu=0.6, lam=0.3)
        path = tmp_path / "lin.json"
        save_params(params, path)
        assert load_params(path) == params
