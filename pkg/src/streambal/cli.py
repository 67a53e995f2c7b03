"""Command-line surface: one-shot sampling, streaming, measuring, simulating.

Exit codes: 0 ok, 1 internal error, 2 configuration error, 3 data error.
Diagnostics go to stderr; results go to stdout or the requested output file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .core import Unit, validate_population
from .errors import (
    ConfigurationError,
    DataError,
    DegenerateVarianceError,
    DimensionError,
    StreambalError,
    ValidationError,
)
from .harness import (
    PI_COLUMN_TOKEN,
    ColumnBindings,
    PiSpec,
    StudyConfig,
    emit_report,
    load_population_csv,
    run_simulation,
)
from .sampler import SamplerConfig, StreamSampler
from .spread import build_contiguity_matrix, morans_i, voronoi_balance

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def _cols(text: str | None) -> tuple[str, ...]:
    if not text:
        return ()
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _bindings_from_args(args) -> ColumnBindings:
    if args.pi is None:
        raise ConfigurationError("--pi is required")
    return ColumnBindings(
        pi=PiSpec.parse(args.pi),
        aux=_cols(args.aux) or (PI_COLUMN_TOKEN,),
        coords=_cols(args.coords),
        y=_cols(getattr(args, "y", None)),
    )


def _write_decision_log(records, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,unit_id,outcome,phase,j_used\n")
        for rec in records:
            fh.write(rec.as_line() + "\n")


def cmd_sample(args) -> int:
    bindings = _bindings_from_args(args)
    pop = load_population_csv(args.population, bindings)
    cfg = SamplerConfig(window=min(args.window, len(pop)), seed=args.seed)
    sampler = StreamSampler(cfg, p=pop.p, q=pop.q)
    for unit in pop.units:
        sampler.push(unit)
    sampler.finish()
    for unit_id in sorted(sampler.selected_ids()):
        print(unit_id)
    if args.out:
        _write_decision_log(sampler.decisions, args.out)
    return EXIT_OK


def _stream_unit(row: list[str], header: dict[str, int], bindings, row_idx: int) -> Unit:
    def get(col: str) -> float:
        try:
            return float(row[header[col]])
        except (KeyError, IndexError) as exc:
            raise DataError(f"row {row_idx}: missing column {col!r}") from exc
        except ValueError as exc:
            raise DataError(
                f"row {row_idx}, column {col!r}: cannot parse {row[header[col]]!r}"
            ) from exc

    if bindings.pi.mode == "fixed":
        pi = float(bindings.pi.value)
    elif bindings.pi.mode == "col":
        pi = get(bindings.pi.column)
    else:
        raise ConfigurationError(
            "prop: probabilities need the whole population; use sample instead"
        )
    aux = np.array([pi if c == PI_COLUMN_TOKEN else get(c) for c in bindings.aux])
    coords = (
        np.array([get(c) for c in bindings.coords]) if bindings.coords else None
    )
    return Unit(id=row_idx, pi=pi, aux=aux, coords=coords)


def cmd_stream(args, in_stream=None, out_stream=None) -> int:
    in_stream = in_stream if in_stream is not None else sys.stdin
    out_stream = out_stream if out_stream is not None else sys.stdout
    bindings = _bindings_from_args(args)
    if bindings.pi.mode == "prop":
        raise ConfigurationError(
            "prop: probabilities need the whole population; use sample instead"
        )

    reader = csv.reader(in_stream)
    header_row = next(reader, None)
    if header_row is None:
        return EXIT_OK
    header = {name: i for i, name in enumerate(header_row)}

    sampler = None
    row_idx = 0
    for row in reader:
        if not row:
            continue
        try:
            unit = _stream_unit(row, header, bindings, row_idx)
        except DataError as exc:
            if args.strict:
                raise
            print(f"skipping row {row_idx}: {exc}", file=sys.stderr)
            row_idx += 1
            continue
        if sampler is None:
            q = len(bindings.coords)
            sampler = StreamSampler(
                SamplerConfig(window=args.window, seed=args.seed),
                p=len(bindings.aux),
                q=q,
            )
        for rec in sampler.push(unit):
            out_stream.write(f"{rec.unit_id},{rec.outcome}\n")
            out_stream.flush()
        row_idx += 1
    if sampler is not None:
        _, addendum = sampler.finish()
        for rec in addendum:
            out_stream.write(f"{rec.unit_id},{rec.outcome}\n")
        out_stream.flush()
    return EXIT_OK


def cmd_measure(args) -> int:
    bindings = _bindings_from_args(args)
    if not bindings.coords:
        raise ConfigurationError("measure needs --coords")
    pop = load_population_csv(args.population, bindings)
    try:
        with open(args.sample, encoding="utf-8") as fh:
            ids = [int(line) for line in fh.read().split()]
    except OSError as exc:
        raise DataError(f"cannot read {args.sample}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{args.sample}: non-integer unit id: {exc}") from exc
    positions = {int(u): i for i, u in enumerate(pop.ids)}
    a = np.zeros(len(pop), dtype=np.int64)
    for unit_id in ids:
        if unit_id not in positions:
            raise DataError(f"sample id {unit_id} not in the population")
        a[positions[unit_id]] = 1
    result = {
        "B": voronoi_balance(pop, a),
        "I": morans_i(a, build_contiguity_matrix(pop)),
    }
    print(json.dumps(result))
    return EXIT_OK


def cmd_simulate(args) -> int:
    base: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.config}: invalid json: {exc}") from exc
    overrides = {
        "population": args.population,
        "pi": args.pi,
        "aux": args.aux,
        "coords": args.coords,
        "y": args.y,
        "designs": args.designs,
        "window": args.window,
        "seed": args.seed,
        "replicates": args.replicates,
        "out": args.out,
        "format": args.format,
    }
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    if "population" not in base or "pi" not in base:
        raise ConfigurationError("simulate needs a population and a pi binding")
    config = StudyConfig.from_dict(base)

    report = run_simulation(config)
    if config.out:
        emit_report(report, config.format, config.out)
    _print_summary(report)
    return EXIT_OK


def _print_summary(report) -> None:
    y_names = report.metadata["y_variables"]
    have_ratio = any(res.ratio is not None for res in report.results.values())
    label = "ratio" if have_ratio else "v_sim"
    headers = ["design"] + [f"{label}[{y}]" for y in y_names] + ["B", "I"]
    rows = []
    for kind, res in report.results.items():
        cells = [kind]
        for y in y_names:
            val = (res.ratio or {}).get(y) if have_ratio else res.v_sim.get(y)
            cells.append("" if val is None else f"{val:.3f}")
        cells.append("" if res.mean_b is None else f"{res.mean_b:.3f}")
        cells.append("" if res.mean_i is None else f"{res.mean_i:.3f}")
        rows.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for cells in rows:
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streambal",
        description="Sequential balanced and spatially balanced sampling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_bindings(p, need_pop=True):
        if need_pop:
            p.add_argument("--population", required=True, help="population CSV path")
        p.add_argument("--pi", help="fixed:V | col:NAME | prop:NAME,n=N")
        p.add_argument("--aux", help=f"comma-separated columns; {PI_COLUMN_TOKEN} is the pi column")
        p.add_argument("--coords", help="comma-separated coordinate columns")

    p_sample = sub.add_parser("sample", help="sample a whole file at once")
    add_bindings(p_sample)
    p_sample.add_argument("--y", help="comma-separated study-variable columns")
    p_sample.add_argument("--window", type=int, default=20)
    p_sample.add_argument("--seed", type=int, required=True)
    p_sample.add_argument("--out", help="decision-log path")
    p_sample.set_defaults(func=cmd_sample)

    p_stream = sub.add_parser("stream", help="decide units as CSV rows arrive on stdin")
    add_bindings(p_stream, need_pop=False)
    p_stream.add_argument("--window", type=int, default=20)
    p_stream.add_argument("--seed", type=int, required=True)
    p_stream.add_argument("--strict", action="store_true",
                          help="abort on malformed rows instead of skipping")
    p_stream.set_defaults(func=cmd_stream)

    p_measure = sub.add_parser("measure", help="spread indices of an existing sample")
    add_bindings(p_measure)
    p_measure.add_argument("--sample", required=True, help="file of selected unit ids")
    p_measure.set_defaults(func=cmd_measure)

    p_sim = sub.add_parser("simulate", help="Monte-Carlo design comparison")
    p_sim.add_argument("--config", help="study config json (flags override it)")
    p_sim.add_argument("--population")
    p_sim.add_argument("--pi")
    p_sim.add_argument("--aux")
    p_sim.add_argument("--coords")
    p_sim.add_argument("--y")
    p_sim.add_argument("--designs", help="comma-separated design kinds")
    p_sim.add_argument("--window", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--replicates", type=int)
    p_sim.add_argument("--out", help="report path")
    p_sim.add_argument("--format", choices=("json", "csv"))
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValidationError, DimensionError, DegenerateVarianceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StreambalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
