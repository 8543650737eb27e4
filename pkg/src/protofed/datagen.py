"""Synthetic multi-domain data with label-aligned, feature-skewed domains.

Every domain shares the same balanced label marginal; what differs is an
affine transform (paired-coordinate rotations, anisotropic scaling, bias)
applied to shared class anchors, plus Gaussian noise. Domain 0 always keeps
the identity transform so single-domain runs degrade to a plain Gaussian
mixture.

Also holds client partitioning (per-domain holdout then per-client sampling)
and the CSV schema used to move data in and out of the simulator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import Rng

TEST_FRACTION = 0.2


class Sample(NamedTuple):
    x: np.ndarray
    label: int
    domain: int


@dataclass
class SampleSet:
    """Columnar batch of samples; the unit all training/eval code consumes."""

    x: np.ndarray  # (N, input_dim) float64
    labels: np.ndarray  # (N,) int64
    domains: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    def row(self, i: int) -> Sample:
        return Sample(self.x[i], int(self.labels[i]), int(self.domains[i]))

    def take(self, idx: np.ndarray) -> "SampleSet":
        return SampleSet(self.x[idx], self.labels[idx], self.domains[idx])


@dataclass
class DomainSpec:
    """Affine transform defining one domain's feature distribution."""

    angles: np.ndarray  # rotation per coordinate pair (0,1), (2,3), ...
    scales: np.ndarray  # per-dimension positive scale
    bias: np.ndarray
    noise_sigma: float

    def __post_init__(self):
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Scale, rotate paired coordinates, then shift (no noise)."""
        out = points * self.scales
        for p, theta in enumerate(self.angles):
            i, j = 2 * p, 2 * p + 1
            c, s = math.cos(theta), math.sin(theta)
            xi = out[:, i].copy()
            xj = out[:, j].copy()
            out[:, i] = c * xi - s * xj
            out[:, j] = s * xi + c * xj
        return out + self.bias


def identity_spec(input_dim: int, noise_sigma: float) -> DomainSpec:
    return DomainSpec(
        angles=np.zeros(input_dim // 2),
        scales=np.ones(input_dim),
        bias=np.zeros(input_dim),
        noise_sigma=noise_sigma,
    )


def default_domain_specs(
    num_domains: int,
    input_dim: int,
    rng: Rng,
    noise_sigma: float = 0.3,
    shift: float = 1.0,
) -> list[DomainSpec]:
    """Domain 0 is the identity; the rest draw random rotations, scalings and
    bias offsets whose magnitude grows with `shift`."""
    specs = [identity_spec(input_dim, noise_sigma)]
    n_pairs = input_dim // 2
    for _ in range(1, num_domains):
        angles = rng.uniform(-math.pi / 5, math.pi / 5, size=n_pairs) * shift
        scales = np.exp(rng.uniform(-0.25, 0.25, size=input_dim) * shift)
        bias = rng.normal(size=input_dim) * (0.8 * shift / math.sqrt(input_dim))
        specs.append(DomainSpec(angles, scales, bias, noise_sigma))
    return specs


def make_domains(
    num_classes: int,
    num_domains: int,
    input_dim: int,
    per_class_count: int,
    rng: Rng,
    specs: list[DomainSpec] | None = None,
    noise_sigma: float = 0.3,
    anchor_scale: float = 2.0,
    shift: float = 1.0,
) -> dict[int, SampleSet]:
    """Balanced per-domain datasets: shared class anchors, per-domain affine
    transform, spherical Gaussian noise. Labels are exactly balanced, so the
    label marginal matches across domains by construction."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if num_domains < 1:
        raise ValueError("need at least 1 domain")
    if input_dim < 2:
        raise ValueError("need input_dim >= 2")
    if per_class_count < 1:
        raise ValueError("need at least 1 sample per class")

    anchors = rng.normal(size=(num_classes, input_dim)) * anchor_scale
    if specs is None:
        specs = default_domain_specs(num_domains, input_dim, rng, noise_sigma, shift)
    if len(specs) != num_domains:
        raise ValueError("one DomainSpec per domain required")

    out: dict[int, SampleSet] = {}
    for dom, spec in enumerate(specs):
        centered = np.repeat(anchors, per_class_count, axis=0)
        labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class_count)
        x = spec.transform(centered)
        if spec.noise_sigma > 0:
            x = x + spec.noise_sigma * rng.normal(size=x.shape)
        out[dom] = SampleSet(x, labels, np.full(len(labels), dom, dtype=np.int64))
    return out


@dataclass
class PartitionPlan:
    """How a domain->data map is split across clients."""

    clients_per_domain: dict[int, int]
    sampling_rate: float
    test_fraction: float = TEST_FRACTION

    def __post_init__(self):
        if not 0.0 < self.sampling_rate <= 1.0:
            raise ValueError("sampling_rate must lie in (0, 1]")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")
        if sum(self.clients_per_domain.values()) < 1:
            raise ValueError("plan allocates no clients")


@dataclass
class ClientSplit:
    client_id: int
    domain: int
    data: SampleSet


def partition(
    domain_data: dict[int, SampleSet], plan: PartitionPlan, rng: Rng
) -> tuple[list[ClientSplit], dict[int, SampleSet]]:
    """Hold out the test fraction of each domain, then let each client draw
    floor(rate * pool) samples from its domain's training pool without
    replacement. Clients of the same domain draw independently.
    """
    for dom in plan.clients_per_domain:
        if dom not in domain_data:
            raise ValueError(f"plan references missing domain {dom}")
    clients: list[ClientSplit] = []
    test_sets: dict[int, SampleSet] = {}
    client_id = 0
    for dom in sorted(plan.clients_per_domain):
        data = domain_data[dom]
        n = len(data)
        perm = rng.permutation(n)
        n_test = int(plan.test_fraction * n)
        test_sets[dom] = data.take(perm[:n_test])
        pool = data.take(perm[n_test:])
        n_draw = int(plan.sampling_rate * len(pool))
        if n_draw < 1:
            raise ValueError(
                f"domain {dom}: sampling rate {plan.sampling_rate} yields an empty client"
            )
        for _ in range(plan.clients_per_domain[dom]):
            idx = rng.choice_without_replacement(len(pool), n_draw)
            clients.append(ClientSplit(client_id, dom, pool.take(np.sort(idx))))
            client_id += 1
    return clients, test_sets


class CsvFormatError(ValueError):
    """Raised on malformed CSV input; carries offending line numbers."""

    def __init__(self, message: str, lines: list[int] | None = None):
        self.lines = lines or []
        if self.lines:
            message = f"{message} (lines {', '.join(map(str, self.lines))})"
        super().__init__(message)


@dataclass
class CsvSchema:
    """Expected columns; None bounds skip the range check."""

    input_dim: int | None = None
    num_classes: int | None = None
    num_domains: int | None = None


def _header(input_dim: int) -> list[str]:
    return [f"x{i}" for i in range(input_dim)] + ["label", "domain"]


def save_csv(samples: SampleSet, path) -> None:
    """Write `x0..x{n-1},label,domain` rows; reals carry 17 significant digits
    so a reload reproduces the doubles exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(samples.input_dim))
        for i in range(len(samples)):
            row = [f"{v:.17g}" for v in samples.x[i]]
            row.append(str(int(samples.labels[i])))
            row.append(str(int(samples.domains[i])))
            writer.writerow(row)


def load_csv(path, schema: CsvSchema | None = None) -> SampleSet:
    """Parse a samples CSV, rejecting malformed rows with their line numbers."""
    schema = schema or CsvSchema()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file: header row required") from None
        dim = len(header) - 2
        if dim < 1 or header != _header(dim):
            raise CsvFormatError(f"bad header {header!r}; expected x0..x{{n-1}},label,domain")
        if schema.input_dim is not None and dim != schema.input_dim:
            raise CsvFormatError(f"header has {dim} feature columns, expected {schema.input_dim}")

        xs, labels, domains, bad = [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                bad.append(line_no)
                continue
            try:
                vec = np.array([float(c) for c in row[:dim]])
                label = int(row[dim])
                domain = int(row[dim + 1])
            except ValueError:
                bad.append(line_no)
                continue
            if not np.all(np.isfinite(vec)) or label < 0 or domain < 0:
                bad.append(line_no)
                continue
            if schema.num_classes is not None and label >= schema.num_classes:
                bad.append(line_no)
                continue
            if schema.num_domains is not None and domain >= schema.num_domains:
                bad.append(line_no)
                continue
            xs.append(vec)
            labels.append(label)
            domains.append(domain)
    if bad:
        raise CsvFormatError("malformed rows", bad)
    if not xs:
        return SampleSet(
            np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        )
    return SampleSet(
        np.stack(xs), np.array(labels, dtype=np.int64), np.array(domains, dtype=np.int64)
    )


def split_by_domain(samples: SampleSet) -> dict[int, SampleSet]:
    return {
        int(dom): samples.take(np.flatnonzero(samples.domains == dom))
        for dom in np.unique(samples.domains)
    }
