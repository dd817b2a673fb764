#!/usr/bin/env python3
"""
Tests for schemas, CSV ingestion, splitting and mode-specific normalization
"""

import sys
import os

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pandas as pd
import pytest

from src.core.numcore import Rng
from src.core.tabular import (
    CLIP_SCALE,
    EM_MAX_ITER,
    MODE_SEARCH_SAMPLE,
    ColumnSpec,
    GaussianMixture1D,
    ModeNormalizer,
    Schema,
    TabularDataset,
    decode_row,
    encode_row,
    fit_column_modes,
    fit_gmm_em,
    fit_mode_normalizer,
    load_csv,
    load_schema,
    split_train_test,
    write_csv,
    write_schema,
)
from src.models import ColumnKind
from src.utils.errors import DimensionError, DomainError, ParseError, SchemaError

UE_CATEGORIES = ["UE1", "UE2", "UE3"]


@pytest.fixture
def schema():
    return Schema(
        columns=[
            ColumnSpec(name="sinr", kind=ColumnKind.CONTINUOUS),
            ColumnSpec(name="ue", kind=ColumnKind.DISCRETE, categories=UE_CATEGORIES),
        ],
        target_column="owd",
    )


def _dataset(schema, sinr, ue, owd=None):
    frame = pd.DataFrame({"sinr": sinr, "ue": ue}, columns=schema.feature_names)
    return TabularDataset(schema, frame, owd)


def test_schema_rejects_duplicate_names():
    with pytest.raises(ValueError):
        Schema(
            columns=[
                ColumnSpec(name="a", kind=ColumnKind.CONTINUOUS),
                ColumnSpec(name="a", kind=ColumnKind.CONTINUOUS),
            ],
            target_column="y",
        )


def test_schema_rejects_discrete_without_categories():
    with pytest.raises(ValueError):
        ColumnSpec(name="ue", kind=ColumnKind.DISCRETE, categories=[])


def test_load_csv_valid_file(tmp_path, schema):
    path = tmp_path / "data.csv"
    path.write_text("sinr,ue,owd\n1.5,UE1,4.0\n2.5,UE2,7.5\n-0.5,UE3,11.2\n")
    dataset = load_csv(path, schema)
    assert len(dataset) == 3
    assert dataset.features["ue"].tolist() == UE_CATEGORIES
    np.testing.assert_allclose(dataset.targets, [4.0, 7.5, 11.2])


def test_load_csv_unknown_category_names_row(tmp_path, schema):
    path = tmp_path / "data.csv"
    path.write_text("sinr,ue,owd\n1.5,UE1,4.0\n2.5,UE9,7.5\n")
    with pytest.raises(ParseError) as info:
        load_csv(path, schema)
    assert info.value.row == 1
    assert info.value.column == "ue"


def test_load_csv_unparseable_value(tmp_path, schema):
    path = tmp_path / "data.csv"
    path.write_text("sinr,ue,owd\nabc,UE1,4.0\n")
    with pytest.raises(ParseError) as info:
        load_csv(path, schema)
    assert info.value.column == "sinr"


def test_load_csv_missing_column(tmp_path, schema):
    path = tmp_path / "data.csv"
    path.write_text("sinr,owd\n1.0,4.0\n")
    with pytest.raises(SchemaError):
        load_csv(path, schema)


@pytest.mark.parametrize(
    "content, error",
    [
        (b"", SchemaError),
        (b"\n\n", SchemaError),
        (b"sinr,ue,owd\n1.5,UE1,4.0\n2.5,UE2,7.5,9\n", ParseError),
        (b"sinr,ue,owd\n1.5,UE\xff,4.0\n", ParseError),
    ],
    ids=["empty", "blank-lines", "too-many-fields", "bad-utf8"],
)
def test_load_csv_malformed_files_raise_domain_errors(tmp_path, schema, content, error):
    path = tmp_path / "data.csv"
    path.write_bytes(content)
    with pytest.raises(error):
        load_csv(path, schema)


def test_load_csv_extra_field_names_row(tmp_path, schema):
    path = tmp_path / "data.csv"
    path.write_text("sinr,ue,owd\n1.5,UE1,4.0\n2.5,UE2,7.5,9\n")
    with pytest.raises(ParseError) as info:
        load_csv(path, schema)
    assert info.value.row == 1


def test_load_csv_header_only_gives_empty_dataset(tmp_path, schema):
    path = tmp_path / "data.csv"
    path.write_text("sinr,ue,owd\n")
    dataset = load_csv(path, schema)
    assert dataset.is_empty
    with pytest.raises(DomainError):
        fit_mode_normalizer(dataset, 4, Rng(0))


def test_csv_and_schema_files_round_trip(tmp_path, schema):
    dataset = _dataset(schema, [0.25, -1.0], ["UE2", "UE3"], [5.0, 6.0])
    write_csv(dataset, tmp_path / "d.csv")
    write_schema(schema, tmp_path / "schema.txt")
    loaded_schema = load_schema(tmp_path / "schema.txt")
    assert loaded_schema == schema
    loaded = load_csv(tmp_path / "d.csv", loaded_schema)
    pd.testing.assert_frame_equal(loaded.features, dataset.features)
    np.testing.assert_array_equal(loaded.targets, dataset.targets)


def test_numeric_features_layout(schema):
    dataset = _dataset(schema, [1.0, 2.0], ["UE3", "UE1"])
    np.testing.assert_array_equal(
        dataset.numeric_features(), [[1.0, 0.0, 0.0, 1.0], [2.0, 1.0, 0.0, 0.0]]
    )
    assert schema.numeric_width == 4


def test_split_sizes_and_determinism(schema):
    dataset = _dataset(schema, np.arange(10.0), ["UE1"] * 10, np.arange(10.0) + 1)
    train, test = split_train_test(dataset, 0.7, Rng(1))
    assert (len(train), len(test)) == (7, 3)
    assert not set(train.features["sinr"]) & set(test.features["sinr"])
    again, _ = split_train_test(dataset, 0.7, Rng(1))
    pd.testing.assert_frame_equal(train.features, again.features)

    pair = _dataset(schema, [1.0, 2.0], ["UE1", "UE2"], [1.0, 2.0])
    train, test = split_train_test(pair, 0.5, Rng(0))
    assert (len(train), len(test)) == (1, 1)


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
def test_split_fraction_out_of_range(schema, fraction):
    dataset = _dataset(schema, [1.0, 2.0], ["UE1", "UE2"], [1.0, 2.0])
    with pytest.raises(DomainError):
        split_train_test(dataset, fraction, Rng(0))


def test_single_gaussian_column():
    values = Rng(0).normal(5000) + 5.0
    gmm = fit_column_modes(values, 4, Rng(1))
    dominant = np.argmax(gmm.weights)
    assert abs(gmm.means[dominant] - 5.0) < 0.2
    assert gmm.weights[dominant] > 0.9 or gmm.n_modes == 1
    assert gmm.weights.sum() == pytest.approx(1.0, abs=1e-6)


def test_two_clusters_give_two_modes():
    rng = Rng(2)
    values = np.concatenate([rng.normal(2500), rng.normal(2500) + 100.0])
    gmm = fit_column_modes(values, 10, Rng(3))
    assert gmm.n_modes == 2
    np.testing.assert_allclose(np.sort(gmm.means), [0.0, 100.0], atol=0.5)


def test_constant_column_single_floor_mode():
    gmm = fit_column_modes(np.full(50, 7.0), 10, Rng(0))
    assert gmm.n_modes == 1
    assert gmm.means[0] == 7.0
    assert gmm.stds[0] == pytest.approx(1e-4)


def test_em_log_likelihood_non_decreasing():
    rng = Rng(4)
    values = np.concatenate([rng.normal(300) * 2.0, rng.normal(200) + 9.0])
    history = fit_gmm_em(values, 3, seed=0).log_likelihood_history
    assert all(b >= a - 1e-9 * abs(a) for a, b in zip(history, history[1:]))


def test_em_stops_well_before_the_iteration_cap():
    rng = Rng(8)
    values = np.concatenate([rng.normal(1500), rng.normal(1500) + 40.0])
    history = fit_gmm_em(values, 2, seed=1).log_likelihood_history
    assert len(history) < EM_MAX_ITER // 2


def test_long_columns_search_modes_on_a_subsample():
    rng = Rng(5)
    values = np.concatenate([rng.normal(15000), rng.normal(5000) + 50.0])
    gmm = fit_column_modes(values, 10, Rng(6))
    assert gmm.n_modes == 2
    np.testing.assert_allclose(np.sort(gmm.means), [0.0, 50.0], atol=0.3)
    # the final log-likelihood is a sum over the subsample, not the full column
    per_value = -gmm.log_likelihood_history[-1] / MODE_SEARCH_SAMPLE
    assert 1.0 < per_value < 2.5
    again = fit_column_modes(values, 10, Rng(6))
    np.testing.assert_array_equal(again.means, gmm.means)

def _fixed_normalizer(schema):
    modes = {
        "sinr": GaussianMixture1D(
            means=np.array([0.0, 10.0]), stds=np.array([1.0, 2.0]), weights=np.array([0.5, 0.5])
        )
    }
    return ModeNormalizer(schema, 10, modes)


def test_encode_centered_and_boundary_values(schema):
    normalizer = _fixed_normalizer(schema)
    encoded = encode_row(normalizer, {"sinr": 10.0, "ue": "UE2"})
    np.testing.assert_allclose(encoded, [0.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    boundary = encode_row(normalizer, {"sinr": 10.0 + CLIP_SCALE * 2.0, "ue": "UE1"})
    assert boundary[0] == pytest.approx(1.0)
    assert normalizer.encoded_width == (1 + 2) + 3


def test_decode_inverts_encode(schema):
    normalizer = _fixed_normalizer(schema)
    row = {"sinr": 8.75, "ue": "UE3"}
    decoded = decode_row(normalizer, encode_row(normalizer, row))
    assert decoded["ue"] == "UE3"
    assert abs(decoded["sinr"] - 8.75) < 1e-9


def test_decode_zero_mode_block_falls_back_to_first_mode(schema):
    normalizer = _fixed_normalizer(schema)
    decoded = decode_row(normalizer, np.array([0.5, 0.0, 0.0, 1.0, 0.0, 0.0]))
    assert decoded["sinr"] == pytest.approx(0.5 * CLIP_SCALE * 1.0)


def test_clipped_value_decodes_to_envelope(schema):
    normalizer = _fixed_normalizer(schema)
    far = encode_row(normalizer, {"sinr": 10.0 + 8 * 2.0, "ue": "UE1"})
    assert far[0] == 1.0
    assert decode_row(normalizer, far)["sinr"] == pytest.approx(10.0 + 4 * 2.0)


def test_decode_rejects_wrong_length(schema):
    with pytest.raises(DimensionError):
        decode_row(_fixed_normalizer(schema), np.zeros(4))


def test_sampled_mode_encoding_is_deterministic(schema):
    rng = Rng(8)
    dataset = _dataset(schema, rng.normal(200) * 3.0, ["UE1", "UE2"] * 100)
    normalizer = fit_mode_normalizer(dataset, 5, Rng(9))
    first = normalizer.encode(dataset, Rng(10))
    second = normalizer.encode(dataset, Rng(10))
    np.testing.assert_array_equal(first, second)
    assert first.shape == (200, normalizer.encoded_width)
    for name, kind, start, width in normalizer.layout():
        if kind == ColumnKind.CONTINUOUS:
            np.testing.assert_array_equal(first[:, start + 1 : start + width].sum(axis=1), 1.0)
            assert np.all(np.abs(first[:, start]) <= 1.0)
