"""Command-line interface: ``spdarts gen-data | search | bench | report``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import statistics
import sys
import time
from pathlib import Path

from . import __version__, data
from .bench import BenchTrainConfig, MicroBench, build_bench, percentile_of, regret
from .space import DEFAULT_ENUMERATION_CAP, EnumerationCapError, SearchSpaceSpec, build_space
from .trainer import ConfigError, DivergenceError, SearchConfig, metrics_csv, train_search

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
REPORT_COLUMNS = ("method", "runs", "test_acc_mean", "test_acc_std", "percentile_mean",
                  "regret_mean", "final_ies_mean")
FLUSH_SECONDS = 2.0

log = logging.getLogger("spdarts")


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _load_data(path) -> data.Dataset:
    try:
        return data.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read dataset {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(f"bad dataset {path}: {exc}") from None


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


# -- gen-data ------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = data.DataConfig(feature_dim=args.feature_dim, num_classes=args.classes,
                          sizes=tuple(args.sizes), seed=args.seed,
                          teacher_gain=args.teacher_gain, label_noise=args.label_noise)
    ds = data.generate(cfg)
    out = Path(args.out)
    try:
        digest = data.save(ds, out)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc.strerror}") from None
    print(f"wrote {out} sha256={digest}")
    return EXIT_OK


# -- search --------------------------------------------------------------

_SEARCH_OVERRIDES = {
    "mode": "mode", "epochs": "epochs", "batch_size": "batch_size", "param_lr": "param_lr",
    "weight_lr": "weight_lr", "t_sp": "t_sp", "t_sm": "t_sm", "p_low": "p_low", "p_up": "p_up",
    "name": "name", "seed": "seed",
}


def resolve_search_config(file_fields: dict, args) -> SearchConfig:
    """Defaults < config file < command-line flags."""
    fields = dict(file_fields)
    for attr, key in _SEARCH_OVERRIDES.items():
        v = getattr(args, attr, None)
        if v is not None:
            fields[key] = v
    return SearchConfig.from_dict(fields)


def cmd_search(args) -> int:
    file_fields = _read_json(args.config) if args.config else {}
    config = resolve_search_config(file_fields, args)
    ds = _load_data(args.data)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc.strerror}") from None

    digest = config.digest()
    try:
        result = train_search(config, ds, checkpoint_path=out / "checkpoint.bin")
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    _write_text(out / "metrics.csv", metrics_csv(result.metrics, digest))
    doc = {
        "genotype": result.genotype,
        "final_ies": result.final_ies,
        "rows": [r.__dict__ for r in result.metrics],
        "method": config.method,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_digest": digest,
        "method_digest": config.digest(include_seed=False),
        "space_digest": _digest(config.space.to_dict()),
        "data_digest": ds.digest,
    }
    _write_text(out / "result.json", json.dumps(doc, indent=1) + "\n")
    manifest = {
        "tool_version": __version__,
        "config": config.to_dict(),
        "config_digest": digest,
        "seeds": [config.seed],
        "paths": {"data": str(args.data), "metrics": str(out / "metrics.csv"),
                  "result": str(out / "result.json"), "checkpoint": str(out / "checkpoint.bin")},
    }
    _write_text(out / "manifest.json", json.dumps(manifest, indent=1) + "\n")
    print(f"{config.method} seed={config.seed} genotype={result.genotype} final_ies={result.final_ies:.6f}")
    return EXIT_OK


# -- bench ---------------------------------------------------------------


def cmd_bench(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    ds = _load_data(args.data)
    try:
        space_fields = dict(doc.get("space", {"num_intermediate_nodes": 2}))
        space_fields.setdefault("feature_dim", ds.feature_dim)
        spec = SearchSpaceSpec.from_dict(space_fields)
        train_cfg = BenchTrainConfig(**doc.get("train", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad bench config: {exc}") from None
    if spec.feature_dim != ds.feature_dim:
        raise UsageError(f"space.feature_dim {spec.feature_dim} does not match data ({ds.feature_dim})")
    space = build_space(spec)
    out = Path(args.out)

    existing = None
    if args.resume and out.exists():
        try:
            existing = MicroBench.load(out)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot resume from {out}: {exc}") from None

    trained = 0
    last_flush = time.monotonic()

    def flush(bench, entry):
        # periodic partial writes make an interrupted build resumable
        nonlocal trained, last_flush
        trained += 1
        if time.monotonic() - last_flush > FLUSH_SECONDS:
            bench.save(out)
            last_flush = time.monotonic()

    try:
        bench = build_bench(space, ds, train_cfg, args.seeds, existing=existing, jobs=args.jobs,
                            cap=args.cap, on_entry=flush)
    except EnumerationCapError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        bench.save(out)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc.strerror}") from None
    print(f"wrote {out}: {len(bench.entries)} genotypes, {trained} newly trained")
    return EXIT_OK


# -- report --------------------------------------------------------------


def build_report(bench: MicroBench, results: list[dict]) -> list[dict]:
    space = bench.space.to_dict()
    groups: dict[str, list[dict]] = {}
    for r in results:
        if r["config"]["space"] != space:
            raise UsageError(f"result for {r['method']} seed {r['seed']} was searched on a different space")
        if bench.data_digest and r.get("data_digest") != bench.data_digest:
            raise UsageError("results and bench were produced from different datasets (mixed digests)")
        if r["genotype"] not in bench.entries:
            raise UsageError(f"genotype {r['genotype']} is not in the bench")
        groups.setdefault(r["method"], []).append(r)

    rows = []
    for method, rs in groups.items():
        if len({r["method_digest"] for r in rs}) > 1:
            raise UsageError(f"method {method} mixes results from different configurations (mixed digests)")
        tests = [bench.mean_test(r["genotype"]) for r in rs]
        rows.append({
            "method": method,
            "runs": len(rs),
            "test_acc_mean": statistics.fmean(tests),
            "test_acc_std": statistics.pstdev(tests),
            "percentile_mean": statistics.fmean(percentile_of(bench, r["genotype"]) for r in rs),
            "regret_mean": statistics.fmean(regret(bench, r["genotype"]) for r in rs),
            "final_ies_mean": statistics.fmean(r["final_ies"] for r in rs),
        })
    return rows


def _format_cells(row: dict) -> list[str]:
    return [v if isinstance(v, str) else str(v) if isinstance(v, int) else f"{v:.6f}"
            for v in (row[c] for c in REPORT_COLUMNS)]


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in rows:
        w.writerow(_format_cells(row))
    return buf.getvalue()


def report_text(rows: list[dict]) -> str:
    table = [list(REPORT_COLUMNS)] + [_format_cells(r) for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in table) + "\n"


def cmd_report(args) -> int:
    try:
        bench = MicroBench.load(args.bench)
    except OSError as exc:
        raise UsageError(f"cannot read bench {args.bench}: {exc.strerror}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad bench file {args.bench}: {exc}") from None
    results = [_read_json(p) for p in args.results]
    try:
        rows = build_report(bench, results)
    except KeyError as exc:
        raise UsageError(f"result file is missing field {exc}") from None
    text = report_text(rows)
    if args.out:
        out = Path(args.out)
        _write_text(out.with_suffix(".csv"), report_csv(rows))
        _write_text(out.with_suffix(".txt"), text)
    print(text, end="")
    return EXIT_OK


# -- entry point ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdarts", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a seeded synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--feature-dim", type=int, default=8)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--sizes", type=int, nargs=3, default=[2048, 1024, 1024], metavar=("TRAIN", "VAL", "TEST"))
    g.add_argument("--teacher-gain", type=float, default=data.DataConfig.teacher_gain)
    g.add_argument("--label-noise", type=float, default=data.DataConfig.label_noise)
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("search", help="run a batch-mixed (or smooth-only) search")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=("sp-darts", "smooth-only"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--param-lr", type=float)
    s.add_argument("--weight-lr", type=float)
    s.add_argument("--t-sp", type=float)
    s.add_argument("--t-sm", type=float)
    s.add_argument("--p-low", type=float)
    s.add_argument("--p-up", type=float)
    s.add_argument("--name")
    s.set_defaults(func=cmd_search)

    b = sub.add_parser("bench", help="train every genotype of a small space")
    b.add_argument("--config")
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--seeds", "--seed", type=int, nargs="+", default=[0])
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--resume", action="store_true")
    b.add_argument("--cap", type=int, default=DEFAULT_ENUMERATION_CAP)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="compare search results against a bench")
    r.add_argument("--bench", required=True)
    r.add_argument("--out")
    r.add_argument("results", nargs="+")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config field {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
