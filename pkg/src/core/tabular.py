"""
Mixed-type tabular datasets: schema handling, CSV ingestion, train/test
splitting and the mode-specific normalization used by the tabular VAE.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from src.core.numcore import Rng
from src.models import ColumnKind
from src.utils.errors import DimensionError, DomainError, ParseError, SchemaError

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4
PRUNE_THRESHOLD = 0.005
EM_MAX_ITER = 100
# convergence on the per-value mean log-likelihood
EM_TOLERANCE = 1e-3
# the k search runs on at most this many values of a column
MODE_SEARCH_SAMPLE = 1000
CLIP_SCALE = 4.0


class ColumnSpec(BaseModel):
    name: str
    kind: ColumnKind
    categories: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_categories(self) -> "ColumnSpec":
        if self.kind == ColumnKind.DISCRETE and not self.categories:
            raise ValueError(f"Discrete column {self.name} needs a non-empty category list")
        if self.kind == ColumnKind.CONTINUOUS and self.categories:
            raise ValueError(f"Continuous column {self.name} cannot carry categories")
        return self


class Schema(BaseModel):
    columns: List[ColumnSpec]
    target_column: str

    @model_validator(mode="after")
    def _check_names(self) -> "Schema":
        names = [column.name for column in self.columns] + [self.target_column]
        if len(set(names)) != len(names):
            raise ValueError("Column names (including the target) must be unique")
        return self

    @property
    def feature_names(self) -> List[str]:
        return [column.name for column in self.columns]

    @property
    def continuous(self) -> List[ColumnSpec]:
        return [c for c in self.columns if c.kind == ColumnKind.CONTINUOUS]

    @property
    def discrete(self) -> List[ColumnSpec]:
        return [c for c in self.columns if c.kind == ColumnKind.DISCRETE]

    @property
    def numeric_width(self) -> int:
        """Width of the solver's numeric feature matrix"""
        return len(self.continuous) + sum(len(c.categories) for c in self.discrete)


def load_schema(path) -> Schema:
    """
    Read a schema sidecar: one `name,kind[,cat1|cat2|...]` line per feature
    column and a final `target,<name>` line.
    """
    lines = [
        line.strip()
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not lines or not lines[-1].startswith("target,"):
        raise SchemaError(f"Schema file {path} must end with a 'target,<name>' line")
    columns = []
    for number, line in enumerate(lines[:-1], start=1):
        parts = line.split(",")
        if len(parts) < 2:
            raise SchemaError(f"Schema line {number} is malformed: {line!r}")
        try:
            kind = ColumnKind(parts[1])
        except ValueError:
            raise SchemaError(f"Schema line {number}: unknown kind {parts[1]!r}")
        categories = parts[2].split("|") if len(parts) > 2 and parts[2] else []
        columns.append({"name": parts[0], "kind": kind, "categories": categories})
    try:
        return Schema(columns=columns, target_column=lines[-1].split(",", 1)[1])
    except ValueError as e:
        raise SchemaError(f"Invalid schema in {path}: {e}")


def write_schema(schema: Schema, path) -> None:
    lines = []
    for column in schema.columns:
        if column.kind == ColumnKind.DISCRETE:
            lines.append(f"{column.name},{column.kind.value},{'|'.join(column.categories)}")
        else:
            lines.append(f"{column.name},{column.kind.value}")
    lines.append(f"target,{schema.target_column}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class TabularDataset:
    """
    Feature rows (a DataFrame in schema order; discrete values as strings)
    plus an optional target vector. Generated replay rows carry no targets
    until the prior solver labels them.
    """

    schema: Schema
    features: pd.DataFrame
    targets: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = self.features.reset_index(drop=True)
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if len(self.targets) != len(self.features):
                raise DimensionError(
                    f"{len(self.features)} rows but {len(self.targets)} targets"
                )

    def __len__(self) -> int:
        return len(self.features)

    @property
    def is_empty(self) -> bool:
        return len(self.features) == 0

    def subset(self, indices: Sequence[int]) -> "TabularDataset":
        indices = np.asarray(indices, dtype=int)
        targets = self.targets[indices] if self.targets is not None else None
        return TabularDataset(self.schema, self.features.iloc[indices], targets)

    def with_targets(self, targets: np.ndarray) -> "TabularDataset":
        return TabularDataset(self.schema, self.features, targets)

    def numeric_features(self) -> np.ndarray:
        """Continuous columns in schema order, then one-hot blocks of discrete columns"""
        blocks = [
            self.features[c.name].to_numpy(dtype=np.float64).reshape(-1, 1)
            for c in self.schema.continuous
        ]
        for column in self.schema.discrete:
            codes = _category_codes(self.features[column.name], column)
            blocks.append(np.eye(len(column.categories))[codes])
        if not blocks:
            return np.zeros((len(self), 0))
        return np.hstack(blocks)

    def validate(self) -> None:
        for column in self.schema.discrete:
            values = self.features[column.name].astype(str)
            bad = ~values.isin(column.categories)
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise ParseError(
                    f"Row {row}: value {values.iloc[row]!r} not in categories of {column.name}",
                    row=row,
                    column=column.name,
                )

    def to_frame(self) -> pd.DataFrame:
        frame = self.features.copy()
        if self.targets is not None:
            frame[self.schema.target_column] = self.targets
        return frame

    def serialized_bytes(self) -> int:
        """Bytes of the dataset rendered as CSV (the raw-data storage measure)"""
        return len(self.to_frame().to_csv(index=False).encode("utf-8"))

    @classmethod
    def concat(cls, datasets: Sequence["TabularDataset"]) -> "TabularDataset":
        if not datasets:
            raise DomainError("Cannot concatenate an empty list of datasets")
        schema = datasets[0].schema
        features = pd.concat([d.features for d in datasets], ignore_index=True)
        if all(d.targets is not None for d in datasets):
            targets = np.concatenate([d.targets for d in datasets])
        else:
            targets = None
        return cls(schema, features, targets)


def _category_codes(values: pd.Series, column: ColumnSpec) -> np.ndarray:
    lookup = {category: code for code, category in enumerate(column.categories)}
    return np.array([lookup[str(v)] for v in values], dtype=int)


def load_csv(path, schema: Schema) -> TabularDataset:
    """
    Parse a comma-separated file with a header row matching the schema
    names. Rows violating the schema are rejected with their index.
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file, expected a header row")
    except pd.errors.ParserError as e:
        line = re.search(r"line (\d+)", str(e))
        # data rows are 0-based; file line 1 is the header
        row = int(line.group(1)) - 2 if line else None
        raise ParseError(f"{path}: malformed row: {str(e).strip()}", row=row)
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not valid UTF-8 at byte {e.start}")
    expected = schema.feature_names + [schema.target_column]
    missing = [name for name in expected if name not in raw.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")

    data: Dict[str, list] = {}
    for column in schema.columns:
        if column.kind == ColumnKind.CONTINUOUS:
            data[column.name] = [
                _parse_float(value, row, column.name)
                for row, value in enumerate(raw[column.name])
            ]
        else:
            values = []
            for row, value in enumerate(raw[column.name]):
                if value not in column.categories:
                    raise ParseError(
                        f"Row {row}: unknown category {value!r} in column {column.name}",
                        row=row,
                        column=column.name,
                    )
                values.append(value)
            data[column.name] = values
    targets = [
        _parse_float(value, row, schema.target_column)
        for row, value in enumerate(raw[schema.target_column])
    ]
    features = pd.DataFrame(data, columns=schema.feature_names)
    return TabularDataset(schema, features, np.array(targets, dtype=np.float64))


def _parse_float(value: str, row: int, column: str) -> float:
    try:
        parsed = float(value)
    except ValueError:
        raise ParseError(f"Row {row}: cannot parse {value!r} in column {column}", row, column)
    if not math.isfinite(parsed):
        raise ParseError(f"Row {row}: non-finite value in column {column}", row, column)
    return parsed


def write_csv(dataset: TabularDataset, path) -> None:
    dataset.to_frame().to_csv(path, index=False)


def split_train_test(
    dataset: TabularDataset, train_fraction: float, rng: Rng
) -> Tuple[TabularDataset, TabularDataset]:
    if not 0.0 < train_fraction < 1.0:
        raise DomainError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n == 0:
        raise DomainError("Cannot split an empty dataset")
    n_train = int(math.floor(n * train_fraction + 1e-9))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    order = rng.permutation(n)
    return dataset.subset(np.sort(order[:n_train])), dataset.subset(np.sort(order[n_train:]))


# Mode-specific normalization
@dataclass
class GaussianMixture1D:
    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray
    log_likelihood_history: List[float] = field(default_factory=list)

    @property
    def n_modes(self) -> int:
        return len(self.means)

    def log_joint(self, values: np.ndarray) -> np.ndarray:
        """log(pi_k N(v | mu_k, sigma_k)) for every value/mode pair"""
        v = values.reshape(-1, 1)
        z = (v - self.means) / self.stds
        return (
            np.log(self.weights)
            - np.log(self.stds)
            - 0.5 * np.log(2.0 * np.pi)
            - 0.5 * z * z
        )

    def responsibilities(self, values: np.ndarray) -> np.ndarray:
        log_joint = self.log_joint(values)
        return np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))


def fit_gmm_em(values: np.ndarray, n_modes: int, seed: int) -> GaussianMixture1D:
    """Plain EM for a 1-D Gaussian mixture, seeded with k-means++ centers"""
    x = values.reshape(-1, 1)
    centers, _ = kmeans_plusplus(x, n_clusters=n_modes, random_state=seed)
    means = centers.ravel().astype(np.float64)
    spread = max(float(np.std(values)), SIGMA_FLOOR)
    gmm = GaussianMixture1D(
        means=means,
        stds=np.full(n_modes, spread),
        weights=np.full(n_modes, 1.0 / n_modes),
    )

    previous = -np.inf
    for _ in range(EM_MAX_ITER):
        log_joint = gmm.log_joint(values)
        log_norm = logsumexp(log_joint, axis=1, keepdims=True)
        log_likelihood = float(np.sum(log_norm))
        gmm.log_likelihood_history.append(log_likelihood)
        if log_likelihood < previous - 1e-9 * abs(previous):
            logger.warning(
                f"EM log-likelihood decreased from {previous:.6f} to {log_likelihood:.6f}"
            )
        if abs(log_likelihood - previous) < EM_TOLERANCE * len(values):
            break
        previous = log_likelihood

        resp = np.exp(log_joint - log_norm)
        mass = resp.sum(axis=0) + 1e-12
        gmm.weights = mass / mass.sum()
        gmm.means = (resp * x).sum(axis=0) / mass
        variance = (resp * (x - gmm.means) ** 2).sum(axis=0) / mass
        gmm.stds = np.maximum(np.sqrt(variance), SIGMA_FLOOR)
    return gmm


def _bic(gmm: GaussianMixture1D, n: int) -> float:
    return -2.0 * gmm.log_likelihood_history[-1] + (3 * gmm.n_modes - 1) * np.log(n)


def fit_column_modes(values: np.ndarray, max_modes: int, rng: Rng) -> GaussianMixture1D:
    """
    Fit EM for k = 1..max_modes, keep the lowest-BIC mixture, then prune
    modes whose weight falls under the threshold. Long columns are searched
    on a random subsample of MODE_SEARCH_SAMPLE values.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) > MODE_SEARCH_SAMPLE:
        values = values[np.sort(rng.permutation(len(values))[:MODE_SEARCH_SAMPLE])]
    distinct = np.unique(values)
    if len(distinct) == 1:
        return GaussianMixture1D(
            means=np.array([distinct[0]]), stds=np.array([SIGMA_FLOOR]), weights=np.array([1.0])
        )

    best, best_bic, misses = None, np.inf, 0
    for k in range(1, min(max_modes, len(distinct)) + 1):
        candidate = fit_gmm_em(values, k, seed=int(rng.integers(0, 2**31 - 1)))
        bic = _bic(candidate, len(values))
        if bic < best_bic:
            best, best_bic, misses = candidate, bic, 0
        else:
            misses += 1
            if misses >= 2:
                break

    keep = best.weights >= PRUNE_THRESHOLD
    if not keep.any():
        keep[np.argmax(best.weights)] = True
    weights = best.weights[keep]
    return GaussianMixture1D(
        means=best.means[keep],
        stds=best.stds[keep],
        weights=weights / weights.sum(),
        log_likelihood_history=best.log_likelihood_history,
    )


@dataclass
class ModeNormalizer:
    """Per continuous column a fitted mixture, per discrete column its frozen category order"""

    schema: Schema
    max_modes: int
    modes: Dict[str, GaussianMixture1D]

    @property
    def encoded_width(self) -> int:
        width = 0
        for column in self.schema.columns:
            if column.kind == ColumnKind.CONTINUOUS:
                width += 1 + self.modes[column.name].n_modes
            else:
                width += len(column.categories)
        return width

    def layout(self) -> List[Tuple[str, ColumnKind, int, int]]:
        """(column, kind, start, width) blocks; a continuous column's block is its alpha then its mode indicators"""
        blocks, start = [], 0
        for column in self.schema.columns:
            if column.kind == ColumnKind.CONTINUOUS:
                width = 1 + self.modes[column.name].n_modes
            else:
                width = len(column.categories)
            blocks.append((column.name, column.kind, start, width))
            start += width
        return blocks

    def encode(self, dataset: TabularDataset, rng: Optional[Rng] = None) -> np.ndarray:
        """
        Encode every row. The mode of a continuous value is sampled in
        proportion to its responsibilities when an rng is given, otherwise
        the most responsible mode is used.
        """
        n = len(dataset)
        out = np.zeros((n, self.encoded_width))
        for name, kind, start, width in self.layout():
            column = self.schema.columns[self.schema.feature_names.index(name)]
            if kind == ColumnKind.CONTINUOUS:
                values = dataset.features[name].to_numpy(dtype=np.float64)
                gmm = self.modes[name]
                resp = gmm.responsibilities(values)
                if rng is None:
                    chosen = np.argmax(resp, axis=1)
                else:
                    cumulative = np.cumsum(resp, axis=1)
                    draws = rng.random(n).reshape(-1, 1) * cumulative[:, -1:]
                    chosen = np.minimum((draws > cumulative).sum(axis=1), gmm.n_modes - 1)
                alpha = (values - gmm.means[chosen]) / (CLIP_SCALE * gmm.stds[chosen])
                out[:, start] = np.clip(alpha, -1.0, 1.0)
                out[np.arange(n), start + 1 + chosen] = 1.0
            else:
                codes = _category_codes(dataset.features[name], column)
                out[np.arange(n), start + codes] = 1.0
        return out

    def decode(self, encoded: np.ndarray) -> TabularDataset:
        """Inverse transform; mode and category are the argmax of their blocks (ties -> lowest index)"""
        encoded = np.asarray(encoded, dtype=np.float64)
        if encoded.ndim == 1:
            encoded = encoded.reshape(1, -1)
        if encoded.shape[1] != self.encoded_width:
            raise DimensionError(
                f"Encoded width {encoded.shape[1]} != normalizer width {self.encoded_width}"
            )
        data = {}
        for name, kind, start, width in self.layout():
            if kind == ColumnKind.CONTINUOUS:
                gmm = self.modes[name]
                chosen = np.argmax(encoded[:, start + 1 : start + width], axis=1)
                alpha = encoded[:, start]
                data[name] = alpha * CLIP_SCALE * gmm.stds[chosen] + gmm.means[chosen]
            else:
                categories = self.schema.columns[self.schema.feature_names.index(name)].categories
                codes = np.argmax(encoded[:, start : start + width], axis=1)
                data[name] = [categories[code] for code in codes]
        return TabularDataset(self.schema, pd.DataFrame(data, columns=self.schema.feature_names))


def fit_mode_normalizer(dataset: TabularDataset, max_modes: int, rng: Rng) -> ModeNormalizer:
    if dataset.is_empty:
        raise DomainError("Cannot fit a mode normalizer on an empty dataset")
    if max_modes < 1:
        raise DomainError(f"max_modes must be >= 1, got {max_modes}")
    modes = {}
    for column in dataset.schema.continuous:
        values = dataset.features[column.name].to_numpy(dtype=np.float64)
        modes[column.name] = fit_column_modes(values, max_modes, rng.fork(len(modes)))
    return ModeNormalizer(dataset.schema, max_modes, modes)


def encode_row(normalizer: ModeNormalizer, row: Dict, rng: Optional[Rng] = None) -> np.ndarray:
    frame = pd.DataFrame([row], columns=normalizer.schema.feature_names)
    return normalizer.encode(TabularDataset(normalizer.schema, frame), rng)[0]


def decode_row(normalizer: ModeNormalizer, encoded: np.ndarray) -> Dict:
    encoded = np.asarray(encoded, dtype=np.float64)
    if encoded.ndim != 1:
        raise DimensionError("decode_row expects a single encoded vector")
    return normalizer.decode(encoded).features.iloc[0].to_dict()
