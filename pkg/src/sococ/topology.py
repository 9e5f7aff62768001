"""Contact-topology bootstrap for the self-organizing cloud.

The fleet organizes itself in one round: every core server picks m of the M
periphery servers (its known-periphery list) plus n other core servers as
primary contacts, and each periphery server ends up knowing exactly the cores
that picked it.  Secondary contacts of a core are all other cores reachable
through a shared periphery server.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

# Chunked Fisher-Yates is used when the sampling population fits a per-row
# scratch matrix; larger populations go through rejection sampling.
_FY_POP_LIMIT = 4096
_FY_CHUNK_CELLS = 4_000_000


@dataclass(frozen=True)
class TopologyConfig:
    """Dimensions of the contact structure.

    n_core / n_periphery / n_aux are the fleet sizes; every core server knows
    periphery_per_core periphery servers and primary_contacts_per_core other
    core servers.
    """

    n_core: int
    n_periphery: int
    n_aux: int = 0
    primary_contacts_per_core: int = 0
    periphery_per_core: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_core < 1:
            raise ConfigurationError("n_core must be >= 1")
        if self.n_periphery < 1:
            raise ConfigurationError("n_periphery must be >= 1")
        if self.n_aux < 0:
            raise ConfigurationError("n_aux must be >= 0")
        if not 1 <= self.periphery_per_core <= self.n_periphery:
            raise ConfigurationError(
                "periphery_per_core must be in [1, n_periphery] "
                f"(got m={self.periphery_per_core}, M={self.n_periphery})"
            )
        if not 0 <= self.primary_contacts_per_core <= self.n_core - 1:
            raise ConfigurationError(
                "primary_contacts_per_core must be in [0, n_core - 1] "
                f"(got n={self.primary_contacts_per_core}, N={self.n_core})"
            )
        if self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")


@dataclass
class ContactTopology:
    """The bootstrapped contact lists.

    core_known_periphery[c] holds the m periphery ids core c selected;
    core_primary_contacts[c] holds its n primary core contacts; and
    periphery_known_cores[p] is the exact inverse of the first relation.
    """

    n_core: int
    n_periphery: int
    core_known_periphery: np.ndarray        # shape (N, m), int32
    core_primary_contacts: np.ndarray       # shape (N, n), int32
    periphery_known_cores: list[np.ndarray]  # M arrays of core ids, ascending
    aux_roster: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))

    @property
    def m(self) -> int:
        return self.core_known_periphery.shape[1]

    @property
    def n_contacts(self) -> int:
        return self.core_primary_contacts.shape[1]

    def pcs_sizes(self) -> np.ndarray:
        return np.array([len(p) for p in self.periphery_known_cores], dtype=np.int64)


@dataclass
class TopologyStats:
    """Measured statistics of one topology.

    pcs statistics are exact over all periphery servers; secondary-contact
    counts cover `sample_size` cores (exact when sample_size == n_core).
    """

    pcs_sizes: np.ndarray
    pcs_mean: float
    secondary_counts: np.ndarray
    secondary_min: int
    secondary_max: int
    secondary_mean: float
    secondary_histogram: list[tuple[float, float, int]]
    sample_size: int
    exact: bool


def _sample_rows_fisher_yates(
    rng: np.random.Generator, n_rows: int, k: int, pop: int
) -> np.ndarray:
    """k-of-pop uniform draws without replacement, one row at a time,
    via a partial Fisher-Yates shuffle vectorized across row chunks."""
    out = np.empty((n_rows, k), dtype=np.int32)
    chunk = max(1, _FY_CHUNK_CELLS // pop)
    ridx_full = np.arange(chunk)
    for lo in range(0, n_rows, chunk):
        c = min(chunk, n_rows - lo)
        base = np.tile(np.arange(pop, dtype=np.int32), (c, 1))
        ridx = ridx_full[:c]
        for s in range(k):
            j = rng.integers(s, pop, size=c)
            picked = base[ridx, j].copy()
            base[ridx, j] = base[:, s]
            base[:, s] = picked
        out[lo : lo + c] = base[:, :k]
    return out


def _sample_rows_rejection(
    rng: np.random.Generator, n_rows: int, k: int, pop: int
) -> np.ndarray:
    """Same contract as the Fisher-Yates sampler, for large populations.

    Rows are drawn with replacement and redrawn whole while they contain a
    duplicate; accepted rows are uniform over distinct k-tuples.
    """
    out = rng.integers(0, pop, size=(n_rows, k), dtype=np.int64)
    pending = np.arange(n_rows)
    while pending.size:
        rows = out[pending]
        srt = np.sort(rows, axis=1)
        bad = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
        pending = pending[bad]
        if pending.size:
            out[pending] = rng.integers(0, pop, size=(pending.size, k), dtype=np.int64)
    return out.astype(np.int32)


def _sample_rows(rng: np.random.Generator, n_rows: int, k: int, pop: int) -> np.ndarray:
    """Per-row uniform sampling of k distinct values from range(pop)."""
    if k == 0:
        return np.empty((n_rows, 0), dtype=np.int32)
    if k > pop:
        raise ConfigurationError(f"cannot draw {k} distinct values from {pop}")
    if pop <= _FY_POP_LIMIT:
        return _sample_rows_fisher_yates(rng, n_rows, k, pop)
    # Expected duplicate probability per row; rejection degenerates when the
    # draw is a large fraction of the population.
    collision = 1.0 - math.exp(-k * (k - 1) / (2.0 * pop))
    if collision > 0.9:
        return _sample_rows_fisher_yates(rng, n_rows, k, pop)
    return _sample_rows_rejection(rng, n_rows, k, pop)


def organize(config: TopologyConfig, rng: np.random.Generator | None = None) -> ContactTopology:
    """Run the one-shot self-organization and return the contact structure.

    The periphery "broadcast" is modeled as instantaneous global knowledge:
    each core directly draws m distinct periphery servers, then n distinct
    primary contacts excluding itself. Identical (config, seed) pairs yield
    identical topologies.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n, m = config.n_core, config.periphery_per_core
    n_contacts = config.primary_contacts_per_core

    known_periphery = _sample_rows(rng, n, m, config.n_periphery)

    # Contacts are drawn from N-1 slots and shifted past the owner so the
    # owner can never appear in its own list.
    contacts = _sample_rows(rng, n, n_contacts, config.n_core - 1) if config.n_core > 1 \
        else np.empty((n, 0), dtype=np.int32)
    if contacts.size:
        owners = np.arange(n, dtype=np.int32)[:, None]
        contacts = contacts + (contacts >= owners)

    periphery_known = _invert_selection(known_periphery, config.n_periphery)
    return ContactTopology(
        n_core=n,
        n_periphery=config.n_periphery,
        core_known_periphery=known_periphery,
        core_primary_contacts=contacts,
        periphery_known_cores=periphery_known,
        aux_roster=np.arange(config.n_aux, dtype=np.int32),
    )


def _invert_selection(known_periphery: np.ndarray, n_periphery: int) -> list[np.ndarray]:
    """Build periphery_known_cores as the exact inverse relation."""
    n, m = known_periphery.shape
    flat = known_periphery.ravel()
    owners = np.repeat(np.arange(n, dtype=np.int32), m)
    order = np.argsort(flat, kind="stable")  # stable keeps owners ascending
    grouped = owners[order]
    counts = np.bincount(flat, minlength=n_periphery)
    bounds = np.concatenate(([0], np.cumsum(counts)))
    return [grouped[bounds[p] : bounds[p + 1]] for p in range(n_periphery)]


def compute_stats(
    topology: ContactTopology,
    sample_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> TopologyStats:
    """Measure pcs sizes (exact) and secondary-contact counts.

    A core's secondary count S is the number of distinct cores, other than
    itself, appearing in the known-core lists of its m periphery servers.
    sample_size == n_core (the default) computes S exactly for every core;
    smaller values measure a uniform core sample drawn from `rng`.
    """
    n = topology.n_core
    if n == 0 or topology.n_periphery == 0:
        raise ConfigurationError("cannot compute statistics of an empty topology")
    if sample_size is None:
        sample_size = n
    if not 1 <= sample_size <= n:
        raise ConfigurationError(f"sample_size must be in [1, {n}]")

    exact = sample_size == n
    if exact:
        sampled = np.arange(n)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        sampled = rng.choice(n, size=sample_size, replace=False)

    pcs = topology.periphery_known_cores
    counts = np.empty(sample_size, dtype=np.int64)
    for i, c in enumerate(sampled):
        lists = [pcs[p] for p in topology.core_known_periphery[c]]
        union = np.unique(np.concatenate(lists)) if lists else np.zeros(0, np.int32)
        s = union.size
        pos = np.searchsorted(union, c)
        if pos < union.size and union[pos] == c:
            s -= 1  # the owner is not its own secondary contact
        counts[i] = s

    pcs_sizes = topology.pcs_sizes()
    return TopologyStats(
        pcs_sizes=pcs_sizes,
        pcs_mean=float(pcs_sizes.mean()),
        secondary_counts=counts,
        secondary_min=int(counts.min()),
        secondary_max=int(counts.max()),
        secondary_mean=float(counts.mean()),
        secondary_histogram=equal_width_histogram(counts, 20),
        sample_size=sample_size,
        exact=exact,
    )


def expected_pcs_size(n_core: int, m: int, n_periphery: int) -> float:
    """Expected periphery known-core list size under uniform selection: N*m/M."""
    if m > n_periphery:
        raise ConfigurationError("m cannot exceed the number of periphery servers")
    return n_core * m / n_periphery


def expected_secondary_fraction(n_periphery: int, m: int) -> float:
    """Probability that two independent m-of-M periphery draws intersect.

    Equals 1 - prod_{i=0}^{m-1} (M-m-i)/(M-i), the complement of the
    hypergeometric no-overlap probability; a factor hits zero (and the
    result is exactly 1) as soon as 2m > M.
    """
    if not 1 <= m <= n_periphery:
        raise ConfigurationError("need 1 <= m <= n_periphery")
    p_disjoint = 1.0
    for i in range(m):
        p_disjoint *= (n_periphery - m - i) / (n_periphery - i)
        if p_disjoint <= 0.0:
            return 1.0
    return 1.0 - p_disjoint


def equal_width_histogram(values: np.ndarray, bucket_count: int) -> list[tuple[float, float, int]]:
    """Equal-width buckets spanning [min, max], upper edge exclusive except
    for the last bucket. Bucket counts always sum to len(values)."""
    if bucket_count <= 0:
        raise ConfigurationError("bucket_count must be >= 1")
    values = np.asarray(values)
    if values.size == 0:
        return []
    lo = float(values.min())
    hi = float(values.max())
    if lo == hi:
        return [(lo, hi, int(values.size))]
    width = (hi - lo) / bucket_count
    idx = np.clip(((values - lo) / width).astype(np.int64), 0, bucket_count - 1)
    counts = np.bincount(idx, minlength=bucket_count)
    return [
        (lo + i * width, lo + (i + 1) * width, int(counts[i]))
        for i in range(bucket_count)
    ]


def secondary_histogram(stats: TopologyStats, bucket_count: int) -> list[tuple[float, float, int]]:
    """Re-bucket the measured secondary-contact counts."""
    if stats.secondary_counts.size == 0:
        raise ConfigurationError("stats carry no secondary-contact sample")
    return equal_width_histogram(stats.secondary_counts, bucket_count)
