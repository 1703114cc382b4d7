import math

import numpy as np
import pytest
import torch
from scipy import integrate

from conftest import finite_difference_gradcheck
from vaetpp.blocks import (
    MLP,
    MixtureHeads,
    MixtureParams,
    ShapeError,
    categorical_kl,
    gumbel_softmax_sample,
    load_named_tensors,
    lognormal_mixture_logpdf,
    lognormal_mixture_mean,
    save_named_tensors,
)

torch.set_default_dtype(torch.float64)


def random_mixture(rng, num_components, sigma_max=1.5):
    omega = rng.dirichlet(np.ones(num_components))
    mu = rng.uniform(-2.0, 2.0, num_components)
    sigma = rng.uniform(0.1, sigma_max, num_components)
    return MixtureParams(
        omega=torch.tensor(omega), mu=torch.tensor(mu), sigma=torch.tensor(sigma)
    )


def mixture_quadrature(params: MixtureParams) -> float:
    """Independent normalization oracle: piecewise quadrature of exp(logpdf)
    over (0, 1e6), subdivided at per-component quantile breakpoints so narrow
    modes are never skipped."""
    def density(x):
        return math.exp(float(lognormal_mixture_logpdf(torch.tensor(x), params)))

    breaks = {0.0, 1e6}
    for mu, sigma in zip(params.mu.tolist(), params.sigma.tolist()):
        for k in (-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0):
            breaks.add(min(max(math.exp(mu + k * sigma), 0.0), 1e6))
    edges = sorted(breaks)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            total += integrate.quad(density, lo, hi, limit=200)[0]
    return total


def sample_mixture(params: MixtureParams, n: int, rng) -> np.ndarray:
    omega = params.omega.numpy()
    mu = params.mu.numpy()
    sigma = params.sigma.numpy()
    comps = rng.choice(len(omega), size=n, p=omega)
    return np.exp(rng.normal(mu[comps], sigma[comps]))


class TestMLP:
    def test_identity_network(self):
        mlp = MLP([3, 3], ["identity"])
        with torch.no_grad():
            mlp.layers[0].weight.copy_(torch.eye(3))
            mlp.layers[0].bias.zero_()
        x = torch.tensor([0.3, -1.2, 2.0])
        assert torch.equal(mlp(x), x)

    def test_single_relu_layer(self):
        mlp = MLP([2, 2], ["relu"])
        with torch.no_grad():
            mlp.layers[0].weight.copy_(torch.eye(2))
            mlp.layers[0].bias.zero_()
        out = mlp(torch.tensor([-1.0, 2.0]))
        assert out.tolist() == [0.0, 2.0]

    def test_shape_mismatch(self):
        mlp = MLP([3, 4], ["relu"])
        with pytest.raises(ShapeError):
            mlp(torch.zeros(5))

    def test_gradient_check(self):
        torch.manual_seed(0)
        mlp = MLP([4, 6, 3], ["elu", "identity"])
        x = torch.randn(4)
        err = finite_difference_gradcheck(
            lambda: (mlp(x) ** 2).sum(), list(mlp.parameters())
        )
        assert err < 1e-4

    def test_exp_and_softmax_activations(self):
        mlp = MLP([2, 2], ["softmax"])
        out = mlp(torch.randn(2))
        assert float(out.sum()) == pytest.approx(1.0)
        mlp = MLP([2, 2], ["exp"])
        assert torch.all(mlp(torch.randn(2)) > 0)


def manual_gru(cell: torch.nn.GRUCell, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    """Reference gated-recurrent update from the cell's own parameters."""
    hs = cell.hidden_size
    wi, wh = cell.weight_ih, cell.weight_hh
    bi, bh = cell.bias_ih, cell.bias_hh
    gi = x @ wi.T + bi
    gh = h @ wh.T + bh
    r = torch.sigmoid(gi[..., :hs] + gh[..., :hs])
    z = torch.sigmoid(gi[..., hs : 2 * hs] + gh[..., hs : 2 * hs])
    n = torch.tanh(gi[..., 2 * hs :] + r * gh[..., 2 * hs :])
    return (1 - z) * n + z * h


class TestGRUStep:
    def test_matches_reference_formula(self):
        torch.manual_seed(1)
        cell = torch.nn.GRUCell(3, 5)
        x, h = torch.randn(3), torch.randn(5)
        torch.testing.assert_close(cell(x, h), manual_gru(cell, x, h))

    def test_update_gate_open_keeps_state(self):
        torch.manual_seed(2)
        cell = torch.nn.GRUCell(3, 4)
        with torch.no_grad():
            cell.bias_hh[4:8] += 50.0  # force the update gate to 1
        x, h = torch.randn(3), torch.randn(4)
        torch.testing.assert_close(cell(x, h), h, rtol=0, atol=1e-12)

    def test_update_gate_closed_takes_candidate(self):
        torch.manual_seed(3)
        cell = torch.nn.GRUCell(3, 4)
        with torch.no_grad():
            cell.bias_hh[4:8] -= 50.0  # force the update gate to 0
        x, h = torch.randn(3), torch.randn(4)
        hs = cell.hidden_size
        gi = x @ cell.weight_ih.T + cell.bias_ih
        gh = h @ cell.weight_hh.T + cell.bias_hh
        r = torch.sigmoid(gi[:hs] + gh[:hs])
        candidate = torch.tanh(gi[2 * hs :] + r * gh[2 * hs :])
        torch.testing.assert_close(cell(x, h), candidate, rtol=0, atol=1e-12)

    def test_gradient_check(self):
        torch.manual_seed(4)
        cell = torch.nn.GRUCell(3, 4)
        x, h = torch.randn(3), torch.randn(4)
        err = finite_difference_gradcheck(
            lambda: (cell(x, h) ** 2).sum(), list(cell.parameters())
        )
        assert err < 1e-4


class TestGumbelSoftmax:
    def test_low_temperature_concentrates(self):
        logits = torch.tensor([10.0, 0.0])
        gen = torch.Generator().manual_seed(0)
        hits = 0
        draws = 10_000
        for _ in range(draws):
            value = gumbel_softmax_sample(logits, 0.01, gen).value
            if float((value - torch.tensor([1.0, 0.0])).abs().max()) < 1e-3:
                hits += 1
        assert hits / draws >= 0.99

    def test_uniform_logits_uniform_argmax(self):
        logits = torch.zeros(4)
        gen = torch.Generator().manual_seed(1)
        draws = 10_000
        counts = np.zeros(4)
        for _ in range(draws):
            counts[int(gumbel_softmax_sample(logits, 0.5, gen).value.argmax())] += 1
        expected = draws / 4
        sigma = math.sqrt(draws * 0.25 * 0.75)
        assert np.all(np.abs(counts - expected) <= 3 * sigma)

    def test_deterministic_given_seed(self):
        logits = torch.tensor([0.5, -0.5, 1.0])
        a = gumbel_softmax_sample(logits, 0.7, torch.Generator().manual_seed(9)).value
        b = gumbel_softmax_sample(logits, 0.7, torch.Generator().manual_seed(9)).value
        assert torch.equal(a, b)

    def test_simplex_constraint(self):
        gen = torch.Generator().manual_seed(2)
        for _ in range(100):
            sample = gumbel_softmax_sample(torch.randn(5), 0.3, gen)
            sample.validate()

    def test_invalid_temperature(self):
        with pytest.raises(ValueError):
            gumbel_softmax_sample(torch.zeros(2), 0.0)

    def test_hard_sample_is_one_hot_with_gradient(self):
        logits = torch.tensor([0.2, 1.4, -0.3], requires_grad=True)
        sample = gumbel_softmax_sample(logits, 0.5, torch.Generator().manual_seed(3), hard=True)
        assert sorted(sample.value.tolist()) == [0.0, 0.0, 1.0]
        sample.value.sum().backward()
        assert logits.grad is not None

    def test_reparameterized_gradient_matches_fd(self):
        logits = torch.tensor([0.3, -0.8, 0.5], requires_grad=True)

        def fn():
            gen = torch.Generator().manual_seed(7)
            value = gumbel_softmax_sample(logits, 0.5, gen).value
            return (value * torch.tensor([1.0, 2.0, 3.0])).sum()

        err = finite_difference_gradcheck(fn, [logits])
        assert err < 1e-4


class TestCategoricalKL:
    def test_identical_distributions(self):
        logits = torch.tensor([0.3, -1.0, 2.0])
        assert float(categorical_kl(logits, logits)) == pytest.approx(0.0, abs=1e-12)

    def test_one_hot_limit_vs_uniform(self):
        q = torch.tensor([40.0, -40.0])
        p = torch.zeros(2)
        assert float(categorical_kl(q, p)) == pytest.approx(math.log(2.0), rel=1e-6)

    def test_nonnegative_over_random_pairs(self, rng):
        q = torch.tensor(rng.normal(size=(1000, 4)))
        p = torch.tensor(rng.normal(size=(1000, 4)))
        assert torch.all(categorical_kl(q, p) >= 0)

    def test_batched_shape(self):
        q = torch.randn(3, 5, 2)
        p = torch.randn(3, 5, 2)
        assert categorical_kl(q, p).shape == (3, 5)


class TestLogNormalMixture:
    def test_standard_lognormal_at_one(self):
        params = MixtureParams(
            omega=torch.tensor([1.0]), mu=torch.tensor([0.0]), sigma=torch.tensor([1.0])
        )
        value = float(lognormal_mixture_logpdf(torch.tensor(1.0), params))
        assert value == pytest.approx(math.log(1.0 / math.sqrt(2 * math.pi)), abs=1e-9)
        assert value == pytest.approx(-0.91894, abs=1e-5)

    def test_normalization_by_quadrature(self, rng):
        for components in (1, 2, 4):
            params = random_mixture(rng, components)
            assert mixture_quadrature(params) == pytest.approx(1.0, abs=1e-3)

    def test_duplicate_components_collapse(self):
        single = MixtureParams(
            omega=torch.tensor([1.0]), mu=torch.tensor([0.4]), sigma=torch.tensor([0.8])
        )
        double = MixtureParams(
            omega=torch.tensor([0.5, 0.5]),
            mu=torch.tensor([0.4, 0.4]),
            sigma=torch.tensor([0.8, 0.8]),
        )
        tau = torch.tensor([0.3, 1.0, 4.5])
        torch.testing.assert_close(
            lognormal_mixture_logpdf(tau, single), lognormal_mixture_logpdf(tau, double)
        )

    def test_nonpositive_tau_rejected(self):
        params = MixtureParams(
            omega=torch.tensor([1.0]), mu=torch.tensor([0.0]), sigma=torch.tensor([1.0])
        )
        with pytest.raises(ValueError):
            lognormal_mixture_logpdf(torch.tensor(0.0), params)
        with pytest.raises(ValueError):
            lognormal_mixture_logpdf(torch.tensor(-1.0), params)

    def test_shift_covariance(self, rng):
        # scaling tau by s and shifting means by log s changes logpdf by -log s
        params = random_mixture(rng, 3)
        scale = 2.5
        shifted = MixtureParams(
            omega=params.omega, mu=params.mu + math.log(scale), sigma=params.sigma
        )
        tau = torch.tensor([0.4, 1.7])
        torch.testing.assert_close(
            lognormal_mixture_logpdf(tau * scale, shifted),
            lognormal_mixture_logpdf(tau, params) - math.log(scale),
        )

    def test_mean_single_component(self):
        params = MixtureParams(
            omega=torch.tensor([1.0]), mu=torch.tensor([0.0]), sigma=torch.tensor([1.0])
        )
        assert float(lognormal_mixture_mean(params)) == pytest.approx(
            math.exp(0.5), abs=1e-9
        )
        assert float(lognormal_mixture_mean(params)) == pytest.approx(1.64872, abs=1e-5)

    def test_mean_symmetric_pair(self):
        params = MixtureParams(
            omega=torch.tensor([0.5, 0.5]),
            mu=torch.tensor([0.0, 0.0]),
            sigma=torch.tensor([1.0, 1.0]),
        )
        assert float(lognormal_mixture_mean(params)) == pytest.approx(math.exp(0.5))

    def test_mean_matches_monte_carlo(self, rng):
        params = random_mixture(rng, 3, sigma_max=1.5)
        samples = sample_mixture(params, 10**6, rng)
        assert float(lognormal_mixture_mean(params)) == pytest.approx(
            samples.mean(), rel=0.01
        )


class TestMixtureHeads:
    def test_constraints_hold_for_random_inputs(self, rng):
        torch.manual_seed(5)
        heads = MixtureHeads(6, 4)
        h = torch.tensor(rng.normal(size=(1000, 6)))
        params = heads(h)
        params.validate()
        assert torch.all(params.sigma > 0)

    def test_zero_input_reads_biases(self):
        torch.manual_seed(6)
        heads = MixtureHeads(5, 3)
        params = heads(torch.zeros(5))
        expected_omega = torch.softmax(heads.weight_head.bias, dim=-1)
        torch.testing.assert_close(params.omega, expected_omega)
        torch.testing.assert_close(params.mu, heads.mean_head.bias)
        torch.testing.assert_close(params.sigma, torch.exp(heads.log_sigma_head.bias))

    def test_sigma_clamped(self):
        heads = MixtureHeads(2, 1)
        with torch.no_grad():
            heads.log_sigma_head.weight.zero_()
            heads.log_sigma_head.bias.fill_(50.0)
        assert float(heads(torch.zeros(2)).sigma) == pytest.approx(1e3)
        with torch.no_grad():
            heads.log_sigma_head.bias.fill_(-50.0)
        assert float(heads(torch.zeros(2)).sigma) == pytest.approx(1e-3)

    def test_gradient_through_heads_into_logpdf(self):
        torch.manual_seed(7)
        heads = MixtureHeads(4, 3)
        h = torch.randn(4)
        tau = torch.tensor(0.7)
        err = finite_difference_gradcheck(
            lambda: lognormal_mixture_logpdf(tau, heads(h)), list(heads.parameters())
        )
        assert err < 1e-4

    def test_shape_mismatch(self):
        heads = MixtureHeads(4, 2)
        with pytest.raises(ShapeError):
            heads(torch.zeros(3))


def test_named_tensor_roundtrip(tmp_path):
    tensors = {
        "weights": torch.randn(3, 4),
        "bias": torch.arange(5, dtype=torch.float32),
        "index": torch.tensor([1, 2, 3]),
    }
    path = str(tmp_path / "params.npz")
    save_named_tensors(path, tensors)
    loaded = load_named_tensors(path)
    assert set(loaded) == set(tensors)
    for key, value in tensors.items():
        assert torch.equal(loaded[key], value)
        assert loaded[key].dtype == value.dtype
