"""
Binary parameter dumps for generators and solvers.

Layout: a magic line, one JSON header line, then little-endian float64
arrays in header order. The generator header depends only on the
generator config and schema: arrays that touch the encoded layout are
written at capacity width (max_modes slots per continuous column) with
zero-filled unused slots, so a generator's byte size does not depend on
the data it was fitted on.
"""

import hashlib
import io
import json
from typing import Dict, List, Tuple

import numpy as np

from src.core.generators import FeatureStandardizer, Generator
from src.core.numcore import AdamState, Rng
from src.core.solver import RunningStandardizer, Solver
from src.core.tabular import GaussianMixture1D, ModeNormalizer, Schema
from src.models import ColumnKind, GeneratorConfig, GeneratorKind, SolverConfig
from src.utils.errors import SchemaError, StateError

GENERATOR_MAGIC = b"RFGEN1\n"
SOLVER_MAGIC = b"RFSOL1\n"


def _header_line(header: Dict) -> bytes:
    return (json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def _write_arrays(buffer: io.BytesIO, arrays: List[Tuple[str, np.ndarray]]) -> None:
    for _, array in arrays:
        buffer.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read(data: bytes, magic: bytes) -> Tuple[Dict, Dict[str, np.ndarray]]:
    if not data.startswith(magic):
        raise SchemaError(f"Not a {magic.decode().strip()} dump")
    end = data.index(b"\n", len(magic))
    header = json.loads(data[len(magic) : end].decode("utf-8"))
    offset = end + 1
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        chunk = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays[name] = chunk.reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(data):
        raise SchemaError("Trailing bytes after the last array")
    return header, arrays


def capacity_width(schema: Schema, max_modes: int) -> int:
    return sum(
        1 + max_modes if c.kind == ColumnKind.CONTINUOUS else len(c.categories)
        for c in schema.columns
    )


def _capacity_slots(normalizer: ModeNormalizer) -> np.ndarray:
    """Capacity position of every actual encoded position"""
    slots = []
    capacity_start = 0
    for column in normalizer.schema.columns:
        if column.kind == ColumnKind.CONTINUOUS:
            used = 1 + normalizer.modes[column.name].n_modes
            slots.extend(range(capacity_start, capacity_start + used))
            capacity_start += 1 + normalizer.max_modes
        else:
            width = len(column.categories)
            slots.extend(range(capacity_start, capacity_start + width))
            capacity_start += width
    return np.array(slots, dtype=int)


def _generator_arrays(generator: Generator) -> List[Tuple[str, np.ndarray]]:
    config = generator.config
    schema = generator.schema
    arrays: List[Tuple[str, np.ndarray]] = []

    if generator.kind == GeneratorKind.TVAE:
        normalizer = generator.normalizer
        n_cont = len(schema.continuous)
        means = np.zeros((n_cont, config.max_modes))
        stds = np.zeros((n_cont, config.max_modes))
        weights = np.zeros((n_cont, config.max_modes))
        counts = np.zeros(n_cont)
        for row, column in enumerate(schema.continuous):
            gmm = normalizer.modes[column.name]
            means[row, : gmm.n_modes] = gmm.means
            stds[row, : gmm.n_modes] = gmm.stds
            weights[row, : gmm.n_modes] = gmm.weights
            counts[row] = gmm.n_modes
        arrays += [
            ("modes.means", means),
            ("modes.stds", stds),
            ("modes.weights", weights),
            ("modes.counts", counts),
        ]
        slots = _capacity_slots(normalizer)
        width = capacity_width(schema, config.max_modes)
    else:
        standardizer = generator.standardizer
        arrays += [
            ("standardizer.means", standardizer.means),
            ("standardizer.stds", standardizer.stds),
            ("standardizer.raw_stds", standardizer.raw_stds),
        ]
        slots = np.arange(standardizer.width)
        width = standardizer.width

    for name, value in generator.encoder.parameters().items():
        if name == "encoder.0.weights":
            padded = np.zeros((width, value.shape[1]))
            padded[slots, :] = value
            value = padded
        arrays.append((name, value))
    last = len(generator.decoder.layers) - 1
    for name, value in generator.decoder.parameters().items():
        if name == f"decoder.{last}.weights":
            padded = np.zeros((value.shape[0], width))
            padded[:, slots] = value
            value = padded
        elif name == f"decoder.{last}.bias":
            padded = np.zeros(width)
            padded[slots] = value
            value = padded
        arrays.append((name, value))
    return arrays


def serialize_generator(generator: Generator) -> bytes:
    if not generator.trained:
        raise StateError("Only trained generators can be serialized")
    arrays = _generator_arrays(generator)
    header = {
        "config": generator.config.model_dump(mode="json"),
        "schema": generator.schema.model_dump(mode="json"),
        "arrays": [[name, list(value.shape)] for name, value in arrays],
    }
    buffer = io.BytesIO()
    buffer.write(GENERATOR_MAGIC)
    buffer.write(_header_line(header))
    _write_arrays(buffer, arrays)
    return buffer.getvalue()


def deserialize_generator(data: bytes) -> Generator:
    header, arrays = _read(data, GENERATOR_MAGIC)
    config = GeneratorConfig(**header["config"])
    schema = Schema(**header["schema"])
    generator = Generator(config, schema)

    if config.kind == GeneratorKind.TVAE:
        modes = {}
        for row, column in enumerate(schema.continuous):
            used = int(arrays["modes.counts"][row])
            modes[column.name] = GaussianMixture1D(
                means=arrays["modes.means"][row, :used].copy(),
                stds=arrays["modes.stds"][row, :used].copy(),
                weights=arrays["modes.weights"][row, :used].copy(),
            )
        generator.normalizer = ModeNormalizer(schema, config.max_modes, modes)
        slots = _capacity_slots(generator.normalizer)
    else:
        generator.standardizer = FeatureStandardizer(
            schema,
            arrays["standardizer.means"],
            arrays["standardizer.stds"],
            arrays["standardizer.raw_stds"],
        )
        slots = np.arange(generator.standardizer.width)

    generator.build_networks(len(slots), Rng(0))
    last = len(generator.decoder.layers) - 1
    params = {}
    for name in generator.parameters():
        value = arrays[name]
        if name == "encoder.0.weights":
            value = value[slots, :]
        elif name == f"decoder.{last}.weights":
            value = value[:, slots]
        elif name == f"decoder.{last}.bias":
            value = value[slots]
        params[name] = np.ascontiguousarray(value)
    generator.assign(params)
    generator.trained = True
    return generator


def generator_bytes(generator: Generator) -> int:
    """Retained bytes of a generator; untrained generators retain nothing"""
    return len(serialize_generator(generator)) if generator.trained else 0


def serialize_solver(solver: Solver) -> bytes:
    arrays: List[Tuple[str, np.ndarray]] = list(solver.network.parameters().items())
    arrays += [
        ("standardizer.means", solver.standardizer.means),
        ("standardizer.stds", solver.standardizer.stds),
    ]
    optimizer = solver.optimizer
    if optimizer is not None:
        for name in solver.network.parameters():
            if name in optimizer.first_moment:
                arrays.append((f"adam.m.{name}", optimizer.first_moment[name]))
                arrays.append((f"adam.v.{name}", optimizer.second_moment[name]))
    # counters live in an array so the header width never changes with training
    adam_step = optimizer.step_count if optimizer is not None else -1
    counters = np.array([solver.standardizer.tasks_seen, adam_step], dtype=np.float64)
    arrays.append(("counters", counters))
    header = {
        "config": solver.config.model_dump(mode="json"),
        "input_width": solver.input_width,
        "trained": solver.trained,
        "bias_initialized": solver.bias_initialized,
        "arrays": [[name, list(np.shape(value))] for name, value in arrays],
    }
    buffer = io.BytesIO()
    buffer.write(SOLVER_MAGIC)
    buffer.write(_header_line(header))
    _write_arrays(buffer, arrays)
    return buffer.getvalue()


def deserialize_solver(data: bytes) -> Solver:
    header, arrays = _read(data, SOLVER_MAGIC)
    solver = Solver(header["input_width"], SolverConfig(**header["config"]), Rng(0))
    solver.network.assign({name: arrays[name] for name in solver.network.parameters()})
    tasks_seen, adam_step = (int(value) for value in arrays["counters"])
    solver.standardizer = RunningStandardizer(
        arrays["standardizer.means"], arrays["standardizer.stds"], tasks_seen
    )
    solver.trained = header["trained"]
    solver.bias_initialized = header["bias_initialized"]
    if adam_step >= 0:
        optimizer = AdamState(learning_rate=solver.config.learning_rate)
        optimizer.step_count = adam_step
        for name in solver.network.parameters():
            if f"adam.m.{name}" in arrays:
                optimizer.first_moment[name] = arrays[f"adam.m.{name}"]
                optimizer.second_moment[name] = arrays[f"adam.v.{name}"]
        solver.optimizer = optimizer
    return solver


def solver_bytes(solver: Solver) -> int:
    return len(serialize_solver(solver))


def parameter_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
