"""
Generative models used as replay generators: a plain VAE over standardized
features and a tabular VAE (TVAE) over mode-normalized features. Both fit on
a TabularDataset and sample schema-conformant feature rows.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.core.numcore import (
    AdamState,
    LayerStack,
    Matrix,
    Rng,
    adam_step,
    check_finite,
    minibatches,
)
from src.core.tabular import ModeNormalizer, Schema, TabularDataset, fit_mode_normalizer
from src.models import ColumnKind, GeneratorConfig, GeneratorKind
from src.utils.errors import DimensionError, DomainError, StateError, TrainingError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8
ENVELOPE = 4.0

# Reconstruction block kinds
GAUSSIAN = "gaussian"  # identity output, squared error
TANH_GAUSSIAN = "tanh-gaussian"  # tanh output, squared error
SOFTMAX = "softmax"  # logits, cross-entropy


@dataclass
class FeatureStandardizer:
    """z-score transform of the numeric feature matrix used by the plain VAE"""

    schema: Schema
    means: np.ndarray
    stds: np.ndarray
    raw_stds: np.ndarray

    @classmethod
    def fit(cls, dataset: TabularDataset) -> "FeatureStandardizer":
        numeric = dataset.numeric_features()
        raw_stds = numeric.std(axis=0)
        stds = np.where(raw_stds < STD_FLOOR, 1.0, raw_stds)
        return cls(dataset.schema, numeric.mean(axis=0), stds, raw_stds)

    @property
    def width(self) -> int:
        return len(self.means)

    def transform(self, dataset: TabularDataset) -> np.ndarray:
        return (dataset.numeric_features() - self.means) / self.stds

    def inverse(self, standardized: np.ndarray) -> TabularDataset:
        numeric = standardized * self.stds + self.means
        data = {}
        n_continuous = len(self.schema.continuous)
        for index, column in enumerate(self.schema.continuous):
            low = self.means[index] - ENVELOPE * self.raw_stds[index]
            high = self.means[index] + ENVELOPE * self.raw_stds[index]
            data[column.name] = np.clip(numeric[:, index], low, high)
        start = n_continuous
        for column in self.schema.discrete:
            width = len(column.categories)
            codes = np.argmax(numeric[:, start : start + width], axis=1)
            data[column.name] = [column.categories[code] for code in codes]
            start += width
        return TabularDataset(
            self.schema, pd.DataFrame(data, columns=self.schema.feature_names)
        )


@dataclass
class OutputLayout:
    """Decoder output columns grouped by block kind; softmax columns are gathered block after block"""

    gaussian: np.ndarray
    tanh: np.ndarray
    softmax: np.ndarray
    softmax_starts: np.ndarray
    softmax_widths: np.ndarray

    @classmethod
    def from_blocks(cls, blocks: List[Tuple[str, int, int]]) -> "OutputLayout":
        columns = {GAUSSIAN: [], TANH_GAUSSIAN: [], SOFTMAX: []}
        starts, widths = [], []
        for block, start, width in blocks:
            if block == SOFTMAX:
                starts.append(len(columns[SOFTMAX]))
                widths.append(width)
            columns[block].extend(range(start, start + width))
        return cls(
            gaussian=np.array(columns[GAUSSIAN], dtype=int),
            tanh=np.array(columns[TANH_GAUSSIAN], dtype=int),
            softmax=np.array(columns[SOFTMAX], dtype=int),
            softmax_starts=np.array(starts, dtype=int),
            softmax_widths=np.array(widths, dtype=int),
        )


@dataclass
class ElboResult:
    loss: float
    reconstruction: float
    kl: float
    grads: Dict[str, np.ndarray]


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dimensions and averaged over rows"""
    mu = np.atleast_2d(mu)
    logvar = np.atleast_2d(logvar)
    per_row = 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=1)
    return float(np.mean(per_row))


class Generator:
    """
    VAE-family generator G_k. The encoder maps a data row to (mu, logvar)
    of a diagonal Gaussian posterior; the decoder maps a latent sample back
    to the data layout.
    """

    def __init__(self, config: GeneratorConfig, schema: Schema):
        self.config = config
        self.schema = schema
        self.encoder: Optional[LayerStack] = None
        self.decoder: Optional[LayerStack] = None
        self.normalizer: Optional[ModeNormalizer] = None
        self.standardizer: Optional[FeatureStandardizer] = None
        self.layout: Optional[OutputLayout] = None
        self.trained = False
        self.epoch_losses: List[float] = []

    @property
    def kind(self) -> GeneratorKind:
        return self.config.kind

    @property
    def data_width(self) -> int:
        if self.kind == GeneratorKind.TVAE:
            if self.normalizer is None:
                raise StateError("TVAE normalizer is not fitted")
            return self.normalizer.encoded_width
        if self.standardizer is None:
            raise StateError("VAE standardizer is not fitted")
        return self.standardizer.width

    def output_blocks(self) -> List[Tuple[str, int, int]]:
        """(block kind, start, width) covering the decoder output"""
        if self.kind == GeneratorKind.VAE:
            return [(GAUSSIAN, 0, self.data_width)]
        blocks = []
        for _, kind, start, width in self.normalizer.layout():
            if kind == ColumnKind.CONTINUOUS:
                blocks.append((TANH_GAUSSIAN, start, 1))
                blocks.append((SOFTMAX, start + 1, width - 1))
            else:
                blocks.append((SOFTMAX, start, width))
        return blocks

    def output_layout(self) -> "OutputLayout":
        if self.layout is None:
            self.layout = OutputLayout.from_blocks(self.output_blocks())
        return self.layout

    def build_networks(self, width: int, rng: Rng) -> None:
        latent = self.config.latent_dim
        hidden = self.config.hidden_sizes
        self.encoder = LayerStack.build(width, hidden, 2 * latent, rng.fork(0), prefix="encoder")
        self.decoder = LayerStack.build(latent, hidden, width, rng.fork(1), prefix="decoder")

    def parameters(self) -> Dict[str, np.ndarray]:
        if self.encoder is None or self.decoder is None:
            raise StateError("Generator networks are not built")
        return {**self.encoder.parameters(), **self.decoder.parameters()}

    def assign(self, params: Dict[str, np.ndarray]) -> None:
        self.encoder.assign(params)
        self.decoder.assign(params)

    def parameter_count(self) -> int:
        if self.encoder is None:
            return 0
        return self.encoder.parameter_count() + self.decoder.parameter_count()

    def encode_data(self, dataset: TabularDataset, rng: Optional[Rng]) -> np.ndarray:
        if self.kind == GeneratorKind.TVAE:
            return self.normalizer.encode(dataset, rng)
        return self.standardizer.transform(dataset)

    def decode_outputs(self, outputs: Matrix, rng: Optional[Rng] = None) -> TabularDataset:
        """
        Map raw decoder outputs to feature rows. With an rng, every softmax
        block (mode indicators and categories) is replaced by a one-hot draw
        from its softmax; without one the normalizer decodes the logits by
        argmax.
        """
        if self.kind == GeneratorKind.VAE:
            return self.standardizer.inverse(outputs)
        data = outputs.copy()
        for block, start, width in self.output_blocks():
            if block == TANH_GAUSSIAN:
                data[:, start] = np.tanh(data[:, start])
            elif rng is not None:
                data[:, start : start + width] = draw_one_hot(data[:, start : start + width], rng)
        return self.normalizer.decode(data)


def draw_one_hot(logits: Matrix, rng: Rng) -> Matrix:
    """One categorical draw per row from softmax(logits), by the Gumbel-max trick"""
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, logits.shape)
    codes = np.argmax(logits - np.log(-np.log(u)), axis=1)
    one_hot = np.zeros_like(logits)
    one_hot[np.arange(len(logits)), codes] = 1.0
    return one_hot


def _reconstruction(
    generator: Generator, outputs: Matrix, target: Matrix
) -> Tuple[np.ndarray, Matrix]:
    """Per-row reconstruction loss and its gradient w.r.t. the decoder outputs"""
    layout = generator.output_layout()
    inv_var = 1.0 / generator.config.decoder_sigma**2
    per_row = np.zeros(outputs.shape[0])
    grad = np.zeros_like(outputs)
    if layout.gaussian.size:
        diff = outputs[:, layout.gaussian] - target[:, layout.gaussian]
        per_row += 0.5 * inv_var * np.sum(diff * diff, axis=1)
        grad[:, layout.gaussian] = inv_var * diff
    if layout.tanh.size:
        a = np.tanh(outputs[:, layout.tanh])
        diff = a - target[:, layout.tanh]
        per_row += 0.5 * inv_var * np.sum(diff * diff, axis=1)
        grad[:, layout.tanh] = inv_var * diff * (1.0 - a * a)
    if layout.softmax.size:
        # segmented log-softmax over all mode and category blocks at once
        starts, widths = layout.softmax_starts, layout.softmax_widths
        o = outputs[:, layout.softmax]
        x = target[:, layout.softmax]
        shifted = o - np.repeat(np.maximum.reduceat(o, starts, axis=1), widths, axis=1)
        sums = np.add.reduceat(np.exp(shifted), starts, axis=1)
        log_probs = shifted - np.repeat(np.log(sums), widths, axis=1)
        per_row -= np.sum(x * log_probs, axis=1)
        mass = np.repeat(np.add.reduceat(x, starts, axis=1), widths, axis=1)
        grad[:, layout.softmax] = np.exp(log_probs) * mass - x
    return per_row, grad


def elbo_loss(generator: Generator, encoded_batch: Matrix, noise: Matrix) -> ElboResult:
    """
    Negative ELBO of a batch (reconstruction + KL, averaged over rows) and
    its exact gradients, using the reparameterization z = mu + exp(logvar/2) * noise.
    """
    x = np.asarray(encoded_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DomainError("elbo_loss needs a non-empty 2-D batch")
    if x.shape[1] != generator.encoder.in_dim:
        raise DimensionError(
            f"Batch width {x.shape[1]} != generator width {generator.encoder.in_dim}"
        )
    latent = generator.config.latent_dim
    n = x.shape[0]
    if noise.shape != (n, latent):
        raise DimensionError(f"Noise shape {noise.shape} != {(n, latent)}")

    encoded, encoder_cache = generator.encoder.forward(x)
    mu, logvar = encoded[:, :latent], encoded[:, latent:]
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    outputs, decoder_cache = generator.decoder.forward(z)

    per_row, grad_outputs = _reconstruction(generator, outputs, x)
    reconstruction = float(np.mean(per_row))
    kl = gaussian_kl(mu, logvar)
    loss = reconstruction + kl
    if not np.isfinite(loss):
        raise TrainingError(f"Non-finite ELBO loss ({loss})", parameter="elbo")

    decoder_grads, grad_z = generator.decoder.backward(decoder_cache, grad_outputs / n)
    grad_mu = grad_z + mu / n
    grad_logvar = grad_z * 0.5 * std * noise + 0.5 * (np.exp(logvar) - 1.0) / n
    encoder_grads, _ = generator.encoder.backward(
        encoder_cache, np.hstack([grad_mu, grad_logvar]), input_grad=False
    )
    return ElboResult(loss, reconstruction, kl, {**encoder_grads, **decoder_grads})


def fit(generator: Generator, dataset: TabularDataset, rng: Rng) -> Generator:
    """
    Train the generator on `dataset` (features only) by minimizing the
    negative ELBO for `config.epochs` epochs.
    """
    if dataset.is_empty:
        raise DomainError("Cannot fit a generator on an empty dataset")
    config = generator.config
    previous_width = generator.encoder.in_dim if generator.encoder is not None else None

    if generator.kind == GeneratorKind.TVAE:
        generator.normalizer = fit_mode_normalizer(dataset, config.max_modes, rng.fork(0))
    else:
        generator.standardizer = FeatureStandardizer.fit(dataset)
    generator.layout = None
    data = generator.encode_data(dataset, rng.fork(1))

    warm = config.warm_start and generator.trained and previous_width == data.shape[1]
    if not warm:
        if config.warm_start and generator.trained:
            logger.info("Encoded width changed; generator restarts from fresh weights")
        generator.build_networks(data.shape[1], rng.fork(2))

    params = generator.parameters()
    adam = AdamState(learning_rate=config.learning_rate)
    batch_rng, noise_rng = rng.fork(3), rng.fork(4)
    generator.epoch_losses = []
    for _ in range(config.epochs):
        total = 0.0
        for indices in minibatches(len(data), config.batch_size, batch_rng):
            noise = noise_rng.normal((len(indices), config.latent_dim))
            result = elbo_loss(generator, data[indices], noise)
            params = adam_step(adam, params, result.grads)
            generator.assign(params)
            total += result.loss * len(indices)
        generator.epoch_losses.append(total / len(data))

    generator.trained = True
    logger.debug(
        f"Fitted {generator.kind.value} generator on {len(dataset)} rows, "
        f"final loss {generator.epoch_losses[-1]:.4f}"
    )
    return generator


def sample(generator: Generator, n: int, rng: Rng) -> TabularDataset:
    if not generator.trained:
        raise StateError("Cannot sample from an untrained generator")
    if n < 1:
        raise DomainError(f"Sample count must be >= 1, got {n}")
    z = rng.normal((n, generator.config.latent_dim))
    outputs, _ = generator.decoder.forward(z)
    check_finite("generator samples", outputs)
    return generator.decode_outputs(outputs, rng)
