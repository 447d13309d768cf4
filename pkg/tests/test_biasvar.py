"""Bias-variance decomposition over (data, init, noise) and ensembling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripledescent.biasvar import (
    TERMS,
    InsufficientReplicatesError,
    decompose,
    ensembled_profile,
    infinite_ensemble_loss,
    prediction_tensor,
    report_from_tensor,
    terms_from_tensor,
)
from tripledescent.rfcore import RFProblem, SeedSchedule, sample_profile


def _brute(F, t):
    Sd, Ss, Sn, m = F.shape
    out = dict.fromkeys(TERMS, 0.0)
    for x in range(m):
        grand = sum(F[d, s, n, x] for d in range(Sd) for s in range(Ss) for n in range(Sn))
        grand /= Sd * Ss * Sn
        out["bias2"] += (grand - t[x]) ** 2 / m
        by_d = []
        for d in range(Sd):
            by_s = []
            for s in range(Ss):
                vals = [F[d, s, n, x] for n in range(Sn)]
                mu = sum(vals) / Sn
                out["var_noise"] += sum((v - mu) ** 2 for v in vals) / Sn / (Sd * Ss * m)
                by_s.append(mu)
            mu_s = sum(by_s) / Ss
            out["var_init"] += sum((v - mu_s) ** 2 for v in by_s) / Ss / (Sd * m)
            by_d.append(mu_s)
        mu_d = sum(by_d) / Sd
        out["var_sampling"] += sum((v - mu_d) ** 2 for v in by_d) / Sd / m
    return out


def _template(N=20, snr=0.2, act="relu", D=10, P=40, gamma=1e-3):
    return RFProblem(D, N, P, act, snr, gamma)


class TestTerms:
    def test_brute_force_lattice(self):
        rng = np.random.default_rng(0)
        F = rng.standard_normal((2, 3, 2, 4))
        t = rng.standard_normal(4)
        got = terms_from_tensor(F, t)
        ref = _brute(F, t)
        for k in TERMS:
            assert got[k] == pytest.approx(ref[k], abs=1e-14)

    @given(st.integers(2, 4), st.integers(2, 4), st.integers(2, 4), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_additivity(self, Sd, Ss, Sn, seed):
        rng = np.random.default_rng(seed)
        F = rng.standard_normal((Sd, Ss, Sn, 5)) * rng.uniform(0.1, 3.0)
        t = rng.standard_normal(5)
        got = terms_from_tensor(F, t)
        assert got["total"] == pytest.approx(float(((F - t) ** 2).mean()), rel=1e-12)
        assert all(got[k] >= 0 for k in TERMS)

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_exchangeability(self, seed):
        rng = np.random.default_rng(seed)
        F = rng.standard_normal((3, 4, 3, 6))
        t = rng.standard_normal(6)
        base = terms_from_tensor(F, t)
        for axis in range(3):
            perm = rng.permutation(F.shape[axis])
            shuffled = terms_from_tensor(np.take(F, perm, axis=axis), t)
            for k in TERMS:
                assert shuffled[k] == pytest.approx(base[k], rel=1e-12, abs=1e-15)

    def test_bessel_scales_variances(self):
        rng = np.random.default_rng(1)
        F = rng.standard_normal((3, 3, 3, 2))
        t = np.zeros(2)
        plug, unb = terms_from_tensor(F, t), terms_from_tensor(F, t, bessel=True)
        assert unb["var_noise"] == pytest.approx(plug["var_noise"] * 1.5)

    def test_constant_source_has_zero_variance(self):
        rng = np.random.default_rng(2)
        F = np.repeat(rng.standard_normal((3, 3, 1, 4)), 3, axis=2)
        assert terms_from_tensor(F, np.zeros(4))["var_noise"] == 0.0


class TestDecompose:
    def test_noiseless_has_no_noise_variance(self):
        rep = decompose(_template(snr=math.inf), 3, 3, 3, m_test=200)
        assert rep.var_noise == 0.0
        assert rep.total == pytest.approx(sum(rep.terms().values()))

    def test_insufficient_replicates(self):
        with pytest.raises(InsufficientReplicatesError):
            decompose(_template(), 1, 3, 3, m_test=50)

    def test_report_metadata(self):
        rep = decompose(_template(), 3, 3, 3, m_test=200)
        assert rep.conditioning == "noise|init|sampling"
        assert rep.seeds_used == (3, 3, 3)
        assert set(rep.mc_stderr) == {*TERMS, "total"}
        assert rep.N == 20

    def test_deterministic(self):
        a = decompose(_template(), 2, 2, 2, m_test=100, master=4)
        b = decompose(_template(), 2, 2, 2, m_test=100, master=4)
        assert a.terms() == b.terms()

    def test_linear_peak_is_noise_variance(self):
        # identity features with P = D: as gamma -> 0+ the predictor stops
        # depending on the invertible Theta and the N = D peak is all noise
        D = 20
        reps = {N: decompose(RFProblem(D, N, D, "linear", 0.2, 1e-6), 4, 4, 4, m_test=500)
                for N in (10, 20, 40)}
        at_d = reps[20]
        assert at_d.largest_variance == "var_noise"
        assert at_d.var_init < 0.05 * at_d.var_noise
        assert at_d.var_noise > max(reps[10].var_noise, reps[40].var_noise)

    def test_tensor_report_rejects_broken_additivity(self):
        F, t = prediction_tensor(_template(), 2, 2, 2, m_test=50)
        rep = report_from_tensor(F, t)
        assert rep.total == pytest.approx(float(((F - t) ** 2).mean()), rel=1e-12)


class TestEnsemble:
    def test_k1_matches_sample_profile(self):
        t = _template()
        grid = [10, 20, 40]
        sch = SeedSchedule(3)
        ens = ensembled_profile(t, 1, grid, replicates=2, m_test=300, schedule=sch)
        ref = sample_profile(t, grid, replicates=2, m_test=300, schedule=sch)
        np.testing.assert_allclose(ens.loss, ref.mean["loss"], rtol=1e-12)

    def test_large_k_reaches_init_averaged_limit(self):
        t = _template(N=40, D=10, P=40, gamma=1e-4)
        F, target = prediction_tensor(t, 40, 8, 8, m_test=2000)
        terms = terms_from_tensor(F, target)
        limit = infinite_ensemble_loss(F, target)
        ens = ensembled_profile(t, 40, [40], replicates=12, m_test=2000)
        single = ensembled_profile(t, 1, [40], replicates=12, m_test=2000)
        assert ens.loss[0] < single.loss[0]
        # finite K leaves var_init / K on top of the limit
        assert abs(ens.loss[0] - limit - terms["var_init"] / 40) < 3 * ens.stderr[0]
        # noise innermost: the interaction stays in var_noise, so the
        # limit is below bias2 + var_noise + var_sampling
        assert limit < terms["bias2"] + terms["var_noise"] + terms["var_sampling"]

    def test_limit_identity(self):
        rng = np.random.default_rng(5)
        F = rng.standard_normal((3, 4, 5, 7))
        t = rng.standard_normal(7)
        terms = terms_from_tensor(F, t)
        inner = float(F.mean(axis=1).var(axis=1).mean())
        assert infinite_ensemble_loss(F, t) == pytest.approx(
            terms["bias2"] + terms["var_sampling"] + inner, rel=1e-12)
