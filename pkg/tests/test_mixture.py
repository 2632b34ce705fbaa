import math

import numpy as np
import pytest

from emmfit import families as fam
from emmfit import mixture as mx
from emmfit.errors import DensityUnavailableError, GenerationError, InvalidFamilyError


def small_model(m=2, k=3, family=None, seed=0):
    rng = np.random.default_rng(seed)
    family = family or fam.gaussian(m)
    mus = rng.normal(scale=2.0, size=(k, m))
    sigmas = np.empty((k, m, m))
    for i in range(k):
        a = rng.normal(size=(m, m)) * 0.4
        sigmas[i] = a @ a.T + np.eye(m)
    pi = rng.dirichlet(np.ones(k))
    return mx.MixtureModel(family, pi, mus, sigmas)


def naive_pdf(model, x):
    # Direct linear-domain summation, no log-sum-exp: the oracle for pdf.
    x = np.asarray(x, dtype=float)
    total = 0.0
    for i in range(model.k):
        diff = x - model.mus[i]
        t = float(diff @ np.linalg.solve(model.sigmas[i], diff))
        total += (
            model.weights[i]
            * math.exp(float(model.family.log_gen(t)))
            / math.sqrt(np.linalg.det(model.sigmas[i]))
        )
    return total


class TestPdf:
    def test_single_gaussian_peak(self):
        model = mx.MixtureModel(fam.gaussian(2), [1.0], [np.zeros(2)], [np.eye(2)])
        assert mx.pdf(model, np.zeros(2)) == pytest.approx(1.0 / (2.0 * math.pi), rel=1e-14)

    def test_mixture_collapse(self):
        one = mx.MixtureModel(fam.gaussian(2), [1.0], [[0.5, -0.2]], [np.eye(2) * 1.3])
        two = mx.MixtureModel(
            fam.gaussian(2), [0.5, 0.5], [[0.5, -0.2], [0.5, -0.2]], [np.eye(2) * 1.3] * 2
        )
        x = np.array([0.3, 0.9])
        assert mx.pdf(two, x) == pytest.approx(mx.pdf(one, x), rel=1e-14)

    def test_direct_summation_oracle(self):
        model = small_model(m=2, k=3)
        rng = np.random.default_rng(1)
        for x in rng.normal(scale=2.0, size=(10, 2)):
            assert mx.pdf(model, x) == pytest.approx(naive_pdf(model, x), rel=1e-12)

    def test_alpha_stable_pdf_unavailable(self):
        model = mx.MixtureModel(fam.AlphaStable(m=2, alpha=1.5), [1.0], [np.zeros(2)], [np.eye(2)])
        with pytest.raises(DensityUnavailableError):
            mx.pdf(model, np.zeros(2))

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_density_mass_m1(self, k):
        model = small_model(m=1, k=k, seed=k)
        ys = np.linspace(-40.0, 40.0, 200_001).reshape(-1, 1)
        density = np.exp(model.logpdf(ys))
        assert np.trapezoid(density, ys[:, 0]) == pytest.approx(1.0, abs=1e-2)

    def test_invalid_weights(self):
        with pytest.raises(InvalidFamilyError):
            mx.MixtureModel(fam.gaussian(1), [0.5, 0.6], np.zeros((2, 1)), np.ones((2, 1, 1)))


class TestNll:
    def test_gaussian_entropy(self):
        rng = np.random.default_rng(2)
        m = 3
        model = mx.MixtureModel(fam.gaussian(m), [1.0], [np.zeros(m)], [np.eye(m)])
        data = mx.sample_mixture(model, rng, 100_000)
        entropy = 0.5 * m * (1.0 + math.log(2.0 * math.pi))
        assert mx.nll(model, data) == pytest.approx(entropy, abs=0.02)

    def test_single_point_at_mode(self):
        model = small_model(m=2, k=2)
        x = model.mus[0]
        assert mx.nll(model, x.reshape(1, -1)) == pytest.approx(-math.log(mx.pdf(model, x)), rel=1e-12)

    def test_plain_summation_oracle(self):
        model = small_model(m=2, k=3, seed=3)
        rng = np.random.default_rng(4)
        data = rng.normal(scale=1.5, size=(40, 2))
        oracle = -sum(math.log(naive_pdf(model, x)) for x in data) / len(data)
        assert mx.nll(model, data) == pytest.approx(oracle, rel=1e-12)

    def test_nll_not_below_entropy(self):
        # On its own samples the model NLL estimates the differential
        # entropy; it must not systematically undershoot it.
        rng = np.random.default_rng(5)
        model = mx.MixtureModel(
            fam.gaussian(2), [0.5, 0.5], [[-3.0, 0.0], [3.0, 0.0]], [np.eye(2)] * 2
        )
        data = mx.sample_mixture(model, rng, 50_000)
        # entropy of well-separated balanced pair: component entropy + log 2
        entropy = 0.5 * 2 * (1.0 + math.log(2.0 * math.pi)) + math.log(2.0)
        assert mx.nll(model, data) >= entropy - 0.05


class TestSampleMixture:
    def test_degenerate_weights(self):
        rng = np.random.default_rng(6)
        model = mx.MixtureModel(
            fam.gaussian(1), [1.0, 0.0], [[0.0], [50.0]], [np.eye(1), np.eye(1)]
        )
        data = mx.sample_mixture(model, rng, 5_000)
        assert np.all(np.abs(data.samples) < 10.0)

    def test_balanced_proportions(self):
        rng = np.random.default_rng(7)
        model = mx.MixtureModel(
            fam.gaussian(1), [0.5, 0.5], [[-20.0], [20.0]], [np.eye(1), np.eye(1)]
        )
        data = mx.sample_mixture(model, rng, 10_000)
        frac = np.mean(data.samples[:, 0] > 0.0)
        assert frac == pytest.approx(0.5, abs=0.02)

    def test_mean_moment_oracle(self):
        rng = np.random.default_rng(8)
        model = small_model(m=2, k=3, seed=9)
        data = mx.sample_mixture(model, rng, 200_000)
        expect = model.weights @ model.mus
        assert np.allclose(data.samples.mean(axis=0), expect, atol=0.03)

    def test_covariance_moment_oracle(self):
        # cov = sum_i pi_i (Sigma_i E[R^2]/m + mu_i mu_i^T) - mean mean^T
        rng = np.random.default_rng(9)
        model = small_model(m=2, k=2, family=fam.Logistic(m=2), seed=10)
        data = mx.sample_mixture(model, rng, 400_000)
        w = model.family.mean_r2() / model.m
        mean = model.weights @ model.mus
        expect = sum(
            model.weights[i] * (model.sigmas[i] * w + np.outer(model.mus[i], model.mus[i]))
            for i in range(model.k)
        ) - np.outer(mean, mean)
        assert np.allclose(np.cov(data.samples.T, bias=True), expect, atol=0.05)


class TestGenerateSynthetic:
    def test_single_component(self):
        rng = np.random.default_rng(10)
        data = mx.generate_synthetic(2, 1, 500, 10.0, 10.0, rng)
        assert data.truth.k == 1
        assert data.samples.shape == (500, 2)

    def test_separation_inequality(self):
        rng = np.random.default_rng(11)
        data = mx.generate_synthetic(2, 3, 10_000, 10.0, 10.0, rng)
        truth = data.truth
        need = 10.0 * math.sqrt(max(np.trace(s) for s in truth.sigmas))
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.linalg.norm(truth.mus[i] - truth.mus[j]) >= need - 1e-9

    def test_condition_number_bound(self):
        rng = np.random.default_rng(12)
        data = mx.generate_synthetic(3, 4, 100, 10.0, 5.0, rng)
        for s in data.truth.sigmas:
            lam = np.linalg.eigvalsh(s)
            assert lam[-1] / lam[0] <= 100.0 * (1.0 + 1e-9)

    def test_truth_beats_single_gaussian(self):
        # Oracle: moment-matched single Gaussian must have higher NLL than
        # the generating mixture on the mixture's own samples.
        rng = np.random.default_rng(13)
        data = mx.generate_synthetic(2, 3, 10_000, 10.0, 10.0, rng)
        single = mx.MixtureModel(
            fam.gaussian(2),
            [1.0],
            [data.samples.mean(axis=0)],
            [np.cov(data.samples.T, bias=True)],
        )
        assert mx.nll(data.truth, data) < mx.nll(single, data)

    def test_bad_arguments(self):
        rng = np.random.default_rng(14)
        with pytest.raises(GenerationError):
            mx.generate_synthetic(2, 0, 10, 10.0, 10.0, rng)
        with pytest.raises(GenerationError):
            mx.generate_synthetic(2, 2, 10, 0.5, 10.0, rng)


class TestIO:
    def test_model_json_roundtrip(self, tmp_path):
        model = small_model(m=2, k=3, family=fam.PearsonVII(m=2, v=5.0, s=4.0), seed=15)
        path = tmp_path / "model.json"
        model.save(path)
        back = mx.MixtureModel.load(path)
        assert back.family == model.family
        assert np.array_equal(back.weights, model.weights)
        assert np.array_equal(back.mus, model.mus)
        assert np.array_equal(back.sigmas, model.sigmas)

    def test_dataset_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(16)
        data = mx.Dataset(rng.normal(size=(50, 3)))
        path = tmp_path / "data.csv"
        mx.save_dataset_csv(path, data)
        back = mx.load_dataset_csv(path)
        assert np.array_equal(back.samples, data.samples)
        assert path.read_text().splitlines()[0].count(",") == 2
