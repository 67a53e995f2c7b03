"""Study configuration, CSV ingestion, Monte-Carlo replication, reporting.

A study binds CSV columns to the roles the samplers need (inclusion
probabilities, balancing columns, coordinates, study variables), runs R
independent replicates of each requested design, and aggregates the
simulated variance of the Horvitz-Thompson estimator together with the
spatial spread diagnostics into a reproducible report.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .core import Population, Unit, ht_estimate, validate_population
from .errors import (
    ConfigurationError,
    DataError,
    DegenerateVarianceError,
    StreambalError,
)
from .sampler import SamplerConfig, StreamSampler
from .spread import build_contiguity_matrix, morans_i, voronoi_balance

#: Auxiliary binding token standing for the resolved inclusion probabilities.
PI_COLUMN_TOKEN = "@pi"


@dataclass(frozen=True)
class PiSpec:
    """How to obtain inclusion probabilities: fixed:V | col:NAME | prop:NAME,n=N."""

    mode: str
    value: float | None = None
    column: str | None = None
    n: int | None = None

    @classmethod
    def parse(cls, text: str) -> "PiSpec":
        try:
            kind, _, rest = text.partition(":")
            if kind == "fixed":
                return cls("fixed", value=float(rest))
            if kind == "col":
                if not rest:
                    raise ValueError("missing column name")
                return cls("col", column=rest)
            if kind == "prop":
                colname, _, npart = rest.partition(",")
                if not colname or not npart.startswith("n="):
                    raise ValueError("expected prop:NAME,n=N")
                return cls("prop", column=colname, n=int(npart[2:]))
            raise ValueError(f"unknown mode {kind!r}")
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"cannot parse pi spec {text!r}: {exc}") from exc

    def render(self) -> str:
        if self.mode == "fixed":
            return f"fixed:{self.value}"
        if self.mode == "col":
            return f"col:{self.column}"
        return f"prop:{self.column},n={self.n}"


@dataclass(frozen=True)
class ColumnBindings:
    """Maps CSV columns onto unit fields; aux accepts the @pi token."""

    pi: PiSpec
    aux: tuple[str, ...] = (PI_COLUMN_TOKEN,)
    coords: tuple[str, ...] = ()
    y: tuple[str, ...] = ()


@dataclass(frozen=True)
class StudyConfig:
    """Everything a simulation run needs; keys mirror the CLI flags."""

    population: str
    pi: str
    aux: tuple[str, ...] = (PI_COLUMN_TOKEN,)
    coords: tuple[str, ...] = ()
    y: tuple[str, ...] = ()
    designs: tuple[str, ...] = ("proposed", "rejective_poisson")
    window: int = 20
    seed: int = 0
    replicates: int = 100
    out: str | None = None
    format: str = "json"
    shuffle: bool = False

    def bindings(self) -> ColumnBindings:
        return ColumnBindings(
            pi=PiSpec.parse(self.pi),
            aux=tuple(self.aux),
            coords=tuple(self.coords),
            y=tuple(self.y),
        )

    def to_dict(self) -> dict:
        return {
            "population": self.population,
            "pi": self.pi,
            "aux": list(self.aux),
            "coords": list(self.coords),
            "y": list(self.y),
            "designs": list(self.designs),
            "window": self.window,
            "seed": self.seed,
            "replicates": self.replicates,
            "out": self.out,
            "format": self.format,
            "shuffle": self.shuffle,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        def aslist(v):
            if v is None:
                return ()
            if isinstance(v, str):
                return tuple(s for s in v.split(",") if s)
            return tuple(v)

        try:
            return cls(
                population=d["population"],
                pi=d["pi"],
                aux=aslist(d.get("aux")) or (PI_COLUMN_TOKEN,),
                coords=aslist(d.get("coords")),
                y=aslist(d.get("y")),
                designs=aslist(d.get("designs")) or ("proposed", "rejective_poisson"),
                window=int(d.get("window", 20)),
                seed=int(d.get("seed", 0)),
                replicates=int(d.get("replicates", 100)),
                out=d.get("out"),
                format=d.get("format", "json"),
                shuffle=bool(d.get("shuffle", False)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"study config misses key {exc}") from exc

    def hash(self) -> str:
        """Digest of the study-defining fields; output path and format excluded."""
        d = self.to_dict()
        d.pop("out")
        d.pop("format")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def proportional_probabilities(sizes: np.ndarray, n: int) -> np.ndarray:
    """pi proportional to the size measure, iteratively capped at 1.

    Units whose raw probability exceeds 1 are fixed at 1 and the remaining
    target size is redistributed over the rest until everything fits.
    """
    sizes = np.asarray(sizes, dtype=float)
    if np.any(sizes < 0) or not np.all(np.isfinite(sizes)):
        raise DataError("size measure must be finite and nonnegative")
    if not 0 < n <= sizes.size:
        raise ConfigurationError(f"target size {n} out of range for {sizes.size} units")
    pis = np.zeros(sizes.size)
    capped = np.zeros(sizes.size, dtype=bool)
    remaining = n
    while True:
        free = ~capped
        total = sizes[free].sum()
        if total <= 0:
            raise DataError("size measure sums to zero over uncapped units")
        pis[free] = remaining * sizes[free] / total
        over = free & (pis > 1.0)
        if not over.any():
            break
        pis[over] = 1.0
        capped |= over
        remaining = n - int(capped.sum())
        if remaining < 0:
            raise ConfigurationError("target size smaller than the number of capped units")
    return pis


def _read_rows(path: str) -> tuple[list[str], list[dict]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataError(f"{path}: missing header row")
            return list(reader.fieldnames), list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _parse_value(row: dict, col: str, row_idx: int) -> float:
    raw = row.get(col)
    try:
        v = float(raw)
    except (TypeError, ValueError) as exc:
        raise DataError(f"row {row_idx}, column {col!r}: cannot parse {raw!r}") from exc
    if not math.isfinite(v):
        raise DataError(f"row {row_idx}, column {col!r}: non-finite value")
    return v


def load_population_csv(path: str, bindings: ColumnBindings) -> Population:
    """Read a population file and resolve the probability binding.

    Unit ids are the 0-based row indices, which also fixes the stream order.
    """
    header, rows = _read_rows(path)
    if not rows:
        raise DataError(f"{path}: no data rows")
    needed = set(bindings.coords) | set(bindings.y)
    needed |= {c for c in bindings.aux if c != PI_COLUMN_TOKEN}
    if bindings.pi.mode in ("col", "prop"):
        needed.add(bindings.pi.column)
    missing = sorted(needed - set(header))
    if missing:
        raise ConfigurationError(f"{path}: missing column(s) {', '.join(missing)}")

    if bindings.pi.mode == "fixed":
        pis = np.full(len(rows), float(bindings.pi.value))
    elif bindings.pi.mode == "col":
        pis = np.array(
            [_parse_value(r, bindings.pi.column, i) for i, r in enumerate(rows)]
        )
    else:
        sizes = np.array(
            [_parse_value(r, bindings.pi.column, i) for i, r in enumerate(rows)]
        )
        pis = proportional_probabilities(sizes, bindings.pi.n)
    if np.any(pis < 0) or np.any(pis > 1):
        bad = int(np.flatnonzero((pis < 0) | (pis > 1))[0])
        raise DataError(f"row {bad}: inclusion probability {pis[bad]!r} outside [0, 1]")

    units = []
    for i, row in enumerate(rows):
        aux = np.array(
            [
                pis[i] if c == PI_COLUMN_TOKEN else _parse_value(row, c, i)
                for c in bindings.aux
            ]
        )
        coords = (
            np.array([_parse_value(row, c, i) for c in bindings.coords])
            if bindings.coords
            else None
        )
        y = (
            np.array([_parse_value(row, c, i) for c in bindings.y])
            if bindings.y
            else None
        )
        units.append(Unit(id=i, pi=float(pis[i]), aux=aux, coords=coords, y=y))
    return validate_population(units)


def run_proposed(
    pop: Population, window: int, seed: int, shuffle: bool = False
) -> np.ndarray:
    """Feed the population through the stream sampler in file order.

    With `shuffle`, the stream order is permuted first by an independent
    generator derived from the same seed (order matters for a sequential
    method, so the permutation is part of the replicate's randomness).
    """
    order = np.arange(len(pop))
    if shuffle:
        order = np.random.Generator(np.random.Philox(seed).jumped()).permutation(order)
    cfg = SamplerConfig(window=min(window, len(pop)), seed=seed)
    sampler = StreamSampler(cfg, p=pop.p, q=pop.q)
    for idx in order:
        sampler.push(pop.units[idx])
    stream_vec, _ = sampler.finish()
    a = np.zeros(len(pop), dtype=np.int64)
    a[order] = stream_vec
    return a


@dataclass
class DesignResult:
    v_sim: dict[str, float]
    ratio: dict[str, float] | None
    mean_b: float | None
    se_b: float | None
    mean_i: float | None
    se_i: float | None
    moran_skipped: int
    mean_size: float
    size_distribution: dict[int, int]
    max_freq_deviation: float


@dataclass
class SimulationReport:
    metadata: dict
    results: dict[str, DesignResult] = field(default_factory=dict)


def run_simulation(config: StudyConfig) -> SimulationReport:
    """Replicate every requested design and aggregate the study report.

    Replicate r of any design uses seed `base_seed + r`, so replicates are
    reproducible in isolation; a failing replicate's seed is part of the
    error message.  v_sim is the mean squared deviation of the HT estimate
    from the true total.
    """
    bindings = config.bindings()
    pop = load_population_csv(config.population, bindings)
    n_units = len(pop)
    have_coords = pop.q > 0
    w = build_contiguity_matrix(pop) if have_coords and n_units >= 2 else None

    y_names = list(bindings.y)
    true_totals = {}
    for j, name in enumerate(y_names):
        true_totals[name] = math.fsum(float(v) for v in pop.y[:, j])

    total_pi = float(pop.pis.sum())
    n_target = int(round(total_pi))

    for kind in config.designs:
        if kind not in baselines.KNOWN_DESIGNS:
            raise ConfigurationError(f"unknown design {kind!r}")

    results: dict[str, DesignResult] = {}
    for kind in config.designs:
        spec = baselines.DesignSpec(
            kind, window=config.window if kind == "proposed" else None
        )
        ht_acc = {name: [] for name in y_names}
        b_acc: list[float] = []
        i_acc: list[float] = []
        moran_skipped = 0
        sizes: list[int] = []
        freq = np.zeros(n_units)
        for r in range(config.replicates):
            seed_r = config.seed + r
            try:
                a = _draw(spec, pop, n_target, seed_r, config.shuffle)
            except StreambalError as exc:
                exc.args = (f"design {kind!r}, replicate seed {seed_r}: {exc}",)
                raise
            freq += a
            sizes.append(int(a.sum()))
            for j, name in enumerate(y_names):
                ht_acc[name].append(ht_estimate(a, pop, j))
            if have_coords:
                b_acc.append(voronoi_balance(pop, a))
                try:
                    i_acc.append(morans_i(a, w))
                except DegenerateVarianceError:
                    moran_skipped += 1

        r_count = config.replicates
        v_sim = {
            name: math.fsum((v - true_totals[name]) ** 2 for v in vals) / r_count
            for name, vals in ht_acc.items()
        }
        size_dist: dict[int, int] = {}
        for s in sizes:
            size_dist[s] = size_dist.get(s, 0) + 1
        freq /= r_count
        results[kind] = DesignResult(
            v_sim=v_sim,
            ratio=None,
            mean_b=_mean(b_acc),
            se_b=_se(b_acc),
            mean_i=_mean(i_acc),
            se_i=_se(i_acc),
            moran_skipped=moran_skipped,
            mean_size=float(np.mean(sizes)),
            size_distribution=dict(sorted(size_dist.items())),
            max_freq_deviation=float(np.max(np.abs(freq - pop.pis))),
        )

    if "rejective_poisson" in results:
        ref = results["rejective_poisson"].v_sim
        for res in results.values():
            res.ratio = {
                name: 100.0 * res.v_sim[name] / ref[name]
                for name in y_names
                if ref[name] > 0
            }

    meta = {
        "config_hash": config.hash(),
        "base_seed": config.seed,
        "replicates": config.replicates,
        "population": config.population,
        "n_units": n_units,
        "target_size": n_target,
        "designs": list(config.designs),
        "y_variables": y_names,
    }
    return SimulationReport(metadata=meta, results=results)


def _draw(spec, pop, n_target, seed, shuffle):
    rng = np.random.Generator(np.random.Philox(seed))
    if spec.kind == "proposed":
        return run_proposed(pop, spec.window, seed, shuffle)
    if spec.kind == "local_pivotal":
        return baselines.local_pivotal(pop, rng)
    if spec.kind == "rejective_poisson":
        return baselines.rejective_poisson(pop, n_target, rng)
    return baselines.poisson_sample(pop, rng)


def _mean(vals):
    return float(np.mean(vals)) if vals else None


def _se(vals):
    if not vals or len(vals) < 2:
        return None
    return float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def _round6(x):
    if x is None:
        return None
    return float(f"{x:.6g}")


def report_as_dict(report: SimulationReport) -> dict:
    out = {"metadata": dict(report.metadata), "designs": {}}
    for kind, res in report.results.items():
        out["designs"][kind] = {
            "v_sim": {k: _round6(v) for k, v in res.v_sim.items()},
            "ratio_to_max_entropy": (
                None if res.ratio is None
                else {k: _round6(v) for k, v in res.ratio.items()}
            ),
            "mean_B": _round6(res.mean_b),
            "se_B": _round6(res.se_b),
            "mean_I": _round6(res.mean_i),
            "se_I": _round6(res.se_i),
            "moran_skipped": res.moran_skipped,
            "mean_size": _round6(res.mean_size),
            "size_distribution": {str(k): v for k, v in res.size_distribution.items()},
            "max_freq_deviation": _round6(res.max_freq_deviation),
        }
    return out


def emit_report(report: SimulationReport, fmt: str, path: str) -> None:
    """Write the report json (nested by design) or flat csv, deterministically.

    Reals carry six significant digits; field order is fixed, so identical
    studies produce byte-identical files.
    """
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report_as_dict(report), fh, indent=2)
            fh.write("\n")
    elif fmt == "csv":
        meta = report.metadata
        y_names = meta["y_variables"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["config_hash", "design", "y", "v_sim", "ratio_to_max_entropy",
                 "mean_B", "mean_I", "mean_size", "max_freq_deviation"]
            )
            for kind, res in report.results.items():
                rows = y_names or [""]
                for name in rows:
                    writer.writerow([
                        meta["config_hash"],
                        kind,
                        name,
                        _fmt(res.v_sim.get(name)),
                        _fmt(None if res.ratio is None else res.ratio.get(name)),
                        _fmt(res.mean_b),
                        _fmt(res.mean_i),
                        _fmt(res.mean_size),
                        _fmt(res.max_freq_deviation),
                    ])
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")


def _fmt(x):
    return "" if x is None else f"{x:.6g}"
