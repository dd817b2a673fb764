#!/usr/bin/env python3
"""
Tests for the VAE/TVAE replay generators and their parameter dumps
"""

import sys
import os

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pandas as pd
import pytest
from scipy.special import log_softmax, softmax

from src.core.generators import (
    FeatureStandardizer,
    GAUSSIAN,
    SOFTMAX,
    TANH_GAUSSIAN,
    Generator,
    _reconstruction,
    draw_one_hot,
    elbo_loss,
    fit,
    gaussian_kl,
    sample,
)
from src.core.numcore import Rng
from src.core.tabular import (
    ColumnSpec,
    GaussianMixture1D,
    ModeNormalizer,
    Schema,
    TabularDataset,
)
from src.models import ColumnKind, GeneratorConfig, GeneratorKind
from src.utils.errors import DomainError, SchemaError, StateError
from src.utils.serialization import (
    deserialize_generator,
    generator_bytes,
    parameter_digest,
    serialize_generator,
)

H = 1e-5

ONE_COLUMN = Schema(columns=[ColumnSpec(name="x", kind=ColumnKind.CONTINUOUS)], target_column="y")
MIXED = Schema(
    columns=[
        ColumnSpec(name="x", kind=ColumnKind.CONTINUOUS),
        ColumnSpec(name="load", kind=ColumnKind.DISCRETE, categories=["0", "30"]),
    ],
    target_column="y",
)


def small_config(kind=GeneratorKind.TVAE, epochs=5, **overrides):
    return GeneratorConfig(
        kind=kind, latent_dim=4, hidden_sizes=[16, 16], epochs=epochs, batch_size=64, **overrides
    )


def one_column(values):
    return TabularDataset(ONE_COLUMN, pd.DataFrame({"x": np.asarray(values, dtype=float)}))


def mixed(n, seed):
    rng = Rng(seed)
    frame = pd.DataFrame(
        {"x": rng.normal(n) * 2.0 + 3.0, "load": np.where(rng.random(n) < 0.5, "0", "30")}
    )
    return TabularDataset(MIXED, frame)


def test_kl_zero_at_prior():
    assert gaussian_kl(np.zeros((3, 2)), np.zeros((3, 2))) == 0.0


def test_kl_closed_form():
    assert gaussian_kl(np.array([[1.0]]), np.array([[0.0]])) == pytest.approx(0.5)


def test_kl_non_negative():
    rng = Rng(0)
    for _ in range(20):
        assert gaussian_kl(rng.normal((5, 3)), rng.normal((5, 3))) >= 0.0


def _fd_check(generator, batch, noise):
    result = elbo_loss(generator, batch, noise)
    params = generator.parameters()
    for name, value in params.items():
        numeric = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + H
            plus = elbo_loss(generator, batch, noise).loss
            value[index] = original - H
            minus = elbo_loss(generator, batch, noise).loss
            value[index] = original
            numeric[index] = (plus - minus) / (2 * H)
        analytic = result.grads[name]
        scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
        assert np.max(np.abs(analytic - numeric) / scale) < 1e-4, name


def test_tvae_elbo_gradients_match_finite_differences():
    generator = Generator(
        GeneratorConfig(kind=GeneratorKind.TVAE, latent_dim=2, hidden_sizes=[5]), MIXED
    )
    generator.normalizer = ModeNormalizer(
        MIXED,
        10,
        {"x": GaussianMixture1D(np.array([3.0]), np.array([2.0]), np.array([1.0]))},
    )
    assert generator.data_width == 4
    rng = Rng(1)
    generator.build_networks(4, rng.fork(0))
    batch = generator.encode_data(mixed(6, 2), None)
    _fd_check(generator, batch, rng.fork(1).normal((6, 2)))


def test_vae_elbo_gradients_match_finite_differences():
    generator = Generator(
        GeneratorConfig(kind=GeneratorKind.VAE, latent_dim=2, hidden_sizes=[5]), MIXED
    )
    data = mixed(6, 3)
    generator.standardizer = FeatureStandardizer.fit(data)
    rng = Rng(4)
    generator.build_networks(generator.data_width, rng.fork(0))
    batch = generator.encode_data(data, None)
    _fd_check(generator, batch, rng.fork(1).normal((6, 2)))



def test_reconstruction_matches_blockwise_reference():
    generator = Generator(small_config(), MIXED)
    generator.normalizer = ModeNormalizer(
        MIXED,
        10,
        {"x": GaussianMixture1D(np.array([0.0, 9.0]), np.array([1.0, 2.0]), np.array([0.6, 0.4]))},
    )
    rng = Rng(14)
    target = generator.encode_data(mixed(12, 15), rng.fork(0))
    outputs = rng.fork(1).normal(target.shape) * 3.0
    inv_var = 1.0 / generator.config.decoder_sigma**2

    expected_rows = np.zeros(len(target))
    expected_grad = np.zeros_like(outputs)
    for block, start, width in generator.output_blocks():
        o = outputs[:, start : start + width]
        x = target[:, start : start + width]
        if block == TANH_GAUSSIAN:
            a = np.tanh(o)
            expected_rows += 0.5 * inv_var * np.sum((a - x) ** 2, axis=1)
            expected_grad[:, start : start + width] = inv_var * (a - x) * (1.0 - a * a)
        else:
            assert block == SOFTMAX
            expected_rows -= np.sum(x * log_softmax(o, axis=1), axis=1)
            expected_grad[:, start : start + width] = softmax(o, axis=1) * x.sum(axis=1, keepdims=True) - x

    per_row, grad = _reconstruction(generator, outputs, target)
    np.testing.assert_allclose(per_row, expected_rows, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(grad, expected_grad, rtol=1e-12, atol=1e-12)
    assert [block for block, _, _ in generator.output_blocks()].count(GAUSSIAN) == 0

def test_fit_empty_dataset_is_domain_error():
    with pytest.raises(DomainError):
        fit(Generator(small_config(), ONE_COLUMN), one_column([]), Rng(0))


def test_sample_untrained_is_state_error():
    with pytest.raises(StateError):
        sample(Generator(small_config(), ONE_COLUMN), 3, Rng(0))


@pytest.mark.parametrize("kind", list(GeneratorKind))
def test_sample_zero_rows_is_domain_error(kind):
    generator = fit(Generator(small_config(kind), MIXED), mixed(100, 0), Rng(0))
    with pytest.raises(DomainError):
        sample(generator, 0, Rng(1))


@pytest.mark.parametrize("kind", list(GeneratorKind))
def test_fit_and_sample_are_deterministic(kind):
    first = fit(Generator(small_config(kind), MIXED), mixed(200, 5), Rng(6))
    second = fit(Generator(small_config(kind), MIXED), mixed(200, 5), Rng(6))
    assert first.epoch_losses == second.epoch_losses
    a = sample(first, 50, Rng(7))
    b = sample(second, 50, Rng(7))
    pd.testing.assert_frame_equal(a.features, b.features)


@pytest.mark.parametrize("kind", list(GeneratorKind))
def test_samples_conform_to_schema(kind):
    generator = fit(Generator(small_config(kind), MIXED), mixed(300, 8), Rng(9))
    samples = sample(generator, 200, Rng(10))
    samples.validate()
    assert len(samples) == 200
    assert samples.targets is None
    assert set(samples.features["load"]) <= {"0", "30"}


def test_tvae_samples_stay_inside_mode_envelope():
    generator = fit(Generator(small_config(), MIXED), mixed(300, 11), Rng(12))
    gmm = generator.normalizer.modes["x"]
    values = sample(generator, 500, Rng(13)).features["x"].to_numpy()
    low = np.min(gmm.means - 4 * gmm.stds)
    high = np.max(gmm.means + 4 * gmm.stds)
    assert np.all(values >= low - 1e-9) and np.all(values <= high + 1e-9)


@pytest.mark.parametrize("kind", list(GeneratorKind))
def test_repeated_row_concentrates_samples(kind):
    generator = fit(Generator(small_config(kind, epochs=20), ONE_COLUMN), one_column([4.2] * 64), Rng(0))
    values = sample(generator, 100, Rng(1)).features["x"].to_numpy()
    assert np.mean(np.abs(values - 4.2)) < 0.5


def test_warm_start_keeps_network_when_width_is_unchanged():
    config = small_config(GeneratorKind.VAE, warm_start=True)
    generator = fit(Generator(config, MIXED), mixed(100, 1), Rng(2))
    encoder = generator.encoder
    fit(generator, mixed(100, 3), Rng(4))
    assert generator.encoder is encoder


def test_serialized_size_is_independent_of_fitted_modes():
    config = small_config()
    rng = Rng(20)
    unimodal = fit(Generator(config, ONE_COLUMN), one_column(rng.normal(400)), Rng(1))
    bimodal_values = np.concatenate([rng.normal(200), rng.normal(200) + 100.0])
    bimodal = fit(Generator(config, ONE_COLUMN), one_column(bimodal_values), Rng(1))
    assert unimodal.normalizer.modes["x"].n_modes != bimodal.normalizer.modes["x"].n_modes
    assert generator_bytes(unimodal) == generator_bytes(bimodal)


def test_untrained_generator_retains_nothing():
    generator = Generator(small_config(), ONE_COLUMN)
    assert generator_bytes(generator) == 0
    with pytest.raises(StateError):
        serialize_generator(generator)


@pytest.mark.parametrize("kind", list(GeneratorKind))
def test_restored_generator_samples_identically(kind):
    generator = fit(Generator(small_config(kind), MIXED), mixed(200, 30), Rng(31))
    data = serialize_generator(generator)
    restored = deserialize_generator(data)
    pd.testing.assert_frame_equal(
        sample(generator, 40, Rng(32)).features, sample(restored, 40, Rng(32)).features
    )
    assert parameter_digest(serialize_generator(restored)) == parameter_digest(data)


def test_corrupt_dump_is_schema_error():
    with pytest.raises(SchemaError):
        deserialize_generator(b"not a generator")


def _minority_mass_error(kind, seed):
    rng = Rng(seed)
    majority = rng.normal(1600)
    minority = rng.normal(400) + 100.0
    data = one_column(np.concatenate([majority, minority]))
    generator = fit(Generator(GeneratorConfig(kind=kind), ONE_COLUMN), data, Rng(seed).fork(1))
    values = sample(generator, 2000, Rng(seed).fork(2)).features["x"].to_numpy()
    return abs(np.mean(values > 50.0) - 0.2)


def test_draw_one_hot_follows_softmax():
    logits = np.tile(np.log([0.7, 0.2, 0.1]), (20000, 1))
    draws = draw_one_hot(logits, Rng(6))
    assert np.all(draws.sum(axis=1) == 1.0)
    np.testing.assert_allclose(draws.mean(axis=0), [0.7, 0.2, 0.1], atol=0.015)
    np.testing.assert_array_equal(draws, draw_one_hot(logits, Rng(6)))


def test_tvae_samples_minority_mode_from_uninformative_decoder():
    rng = Rng(7)
    data = one_column(np.concatenate([rng.normal(1600), rng.normal(400) + 100.0]))
    generator = fit(Generator(small_config(epochs=1, max_modes=2), ONE_COLUMN), data, Rng(8))
    modes = generator.normalizer.modes["x"]
    assert modes.n_modes == 2
    high = int(np.argmax(modes.means))

    # decoder that ignores z: alpha 0 and 80/20 mode logits
    params = generator.parameters()
    last = f"decoder.{len(generator.config.hidden_sizes)}"
    params[f"{last}.weights"] = np.zeros_like(params[f"{last}.weights"])
    bias = np.zeros_like(params[f"{last}.bias"])
    bias[..., 1 + high] = np.log(0.2)
    bias[..., 1 + (1 - high)] = np.log(0.8)
    params[f"{last}.bias"] = bias
    generator.assign(params)

    values = sample(generator, 4000, Rng(9)).features["x"].to_numpy()
    assert abs(np.mean(values > 50.0) - 0.2) < 0.03


@pytest.mark.slow
def test_tvae_recovers_minority_mode_better_than_vae():
    for seed in range(1, 6):
        tvae = _minority_mass_error(GeneratorKind.TVAE, seed)
        assert tvae < 0.05
        assert tvae < _minority_mass_error(GeneratorKind.VAE, seed)


@pytest.mark.slow
def test_tvae_matches_gaussian_moments():
    data = one_column(Rng(0).normal(2000) * 2.0 + 10.0)
    generator = fit(Generator(GeneratorConfig(), ONE_COLUMN), data, Rng(1))
    values = sample(generator, 2000, Rng(2)).features["x"].to_numpy()
    assert abs(values.mean() - 10.0) < 0.5
    assert abs(values.std() - 2.0) < 0.5


@pytest.mark.slow
def test_tvae_keeps_both_clusters():
    rng = Rng(3)
    data = one_column(np.concatenate([rng.normal(1000), rng.normal(1000) + 100.0]))
    generator = fit(Generator(GeneratorConfig(), ONE_COLUMN), data, Rng(4))
    values = sample(generator, 2000, Rng(5)).features["x"].to_numpy()
    near_high = np.mean(np.abs(values - 100.0) < np.abs(values))
    assert 0.25 <= near_high <= 0.75
