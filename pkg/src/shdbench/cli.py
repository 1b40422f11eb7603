"""Command-line entry point: ``shdbench [global flags] <command> ...``.

Exit statuses: 0 success, 2 usage/config, 3 data/alignment, 4 numerical
divergence. On failure one line ``shdbench-error category=<c> message=<m>``
goes to stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__

logger = logging.getLogger("shdbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
LOCK_NAME = ".shdbench.lock"
RUN_MANIFEST = "run_manifest.json"


class UsageError(Exception):
    pass


class DirectoryLockedError(Exception):
    pass


def _category(err: BaseException) -> tuple[str, int]:
    from .data.types import DataFormatError, DegenerateStatsError, IntegrityError, MissingMeasurementError
    from .eval.report import AlignmentError, UndefinedMetricError
    from .models.network import MissingCovariatesError
    from .plots import NothingToPlotError
    from .training.supervised import DivergenceError

    if isinstance(err, (DivergenceError, FloatingPointError)):
        return "divergence", EXIT_DIVERGENCE
    if isinstance(err, AlignmentError):
        return "alignment", EXIT_DATA
    if isinstance(err, NothingToPlotError):
        return "nothing_to_plot", EXIT_DATA
    data_errors = (
        DataFormatError,
        IntegrityError,
        DegenerateStatsError,
        MissingMeasurementError,
        MissingCovariatesError,
        UndefinedMetricError,
        FileNotFoundError,
    )
    if isinstance(err, data_errors):
        return "data", EXIT_DATA
    if isinstance(err, DirectoryLockedError):
        return "locked", EXIT_USAGE
    return "usage", EXIT_USAGE


# -- output directory plumbing ------------------------------------------------
def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


@contextlib.contextmanager
def directory_lock(out: Path):
    """Exclusive per-directory lock; a lock left by a dead process is taken over."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    for _ in range(2):
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            break
        except FileExistsError:
            try:
                holder = int(lock.read_text().strip() or 0)
            except (OSError, ValueError):
                holder = 0
            if holder and _pid_alive(holder):
                raise DirectoryLockedError(f"{out} is in use by process {holder}") from None
            lock.unlink(missing_ok=True)
    else:
        raise DirectoryLockedError(f"could not lock {out}")
    with os.fdopen(fd, "w") as fh:
        fh.write(str(os.getpid()))
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _timestamp(deterministic: bool) -> str:
    if deterministic:
        # reproducible builds convention
        t = dt.datetime.fromtimestamp(int(os.environ.get("SOURCE_DATE_EPOCH", "0")), dt.timezone.utc)
    else:
        t = dt.datetime.now(dt.timezone.utc)
    return t.isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out: Path, argv: list[str], config: dict, started: str, deterministic: bool) -> Path:
    out_abs = str(out.resolve())
    command = ["$OUT" if a in (str(out), out_abs) else a for a in argv]
    artifacts = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name not in (RUN_MANIFEST, LOCK_NAME):
            artifacts[p.relative_to(out).as_posix()] = _sha256(p)
    record = {
        "command": command,
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16],
        "config": config,
        "artifacts": artifacts,
        "tool_version": __version__,
        "started": started,
        "finished": _timestamp(deterministic),
    }
    path = out / RUN_MANIFEST
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


# -- commands -------------------------------------------------------------------
def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else int(args.seed)


def cmd_data(args, out: Path) -> dict:
    from .data import (
        backsolve_all_negative_count,
        cohort_stats,
        downsample_all_negative,
        import_release,
        open_cohort,
        validate_cohort,
        write_manifest,
    )
    from .data.manifest import MANIFEST_NAME, STORE_NAME
    from .data.synthetic import SyntheticConfig, generate_synthetic_cohort

    sub = args.data_command
    if sub == "synth":
        kw = {"n": args.n, "seed": _seed(args), "signal_strength": args.signal_strength}
        if args.split_sizes:
            kw["split_sizes"] = tuple(args.split_sizes)
        syn = generate_synthetic_cohort(SyntheticConfig(**kw), out)
        return {"n": args.n, "seed": kw["seed"], "counts": syn.manifest.counts}
    if sub == "import":
        manifest = import_release(args.release, out, args.layout)
        return {"release": str(args.release), "counts": manifest.counts}

    if sub == "downsample" and args.check:
        rows = [tuple(float(v) if i == 0 else int(v) for i, v in enumerate(r.split(":"))) for r in args.check]
        consistency = backsolve_all_negative_count([(r[0], r[1], r[2] if len(r) > 2 else None) for r in rows])
        result = {"candidates": consistency.candidates[:20], "n_candidates": len(consistency.candidates), "discrepancies": consistency.discrepancies}
        (out / "downsample_check.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
        print(json.dumps(result))
        return result
    cohort_dir = Path(args.cohort)
    if sub == "validate":
        cohort = open_cohort(cohort_dir, verify=True)
        report = validate_cohort(cohort.manifest, cohort_dir / STORE_NAME)
        (out / "validation.txt").write_text(str(report) + "\n", encoding="utf-8")
        print(report)
        if not report.passed:
            from .data.types import IntegrityError

            raise IntegrityError(f"{len(report.violations)} cohort invariant violation(s); see validation.txt")
        return {"cohort": str(cohort_dir), "violations": 0}
    if sub == "stats":
        from .data import read_manifest

        stats = cohort_stats(read_manifest(cohort_dir / MANIFEST_NAME))
        stats.prevalence.to_csv(out / "prevalence.csv", float_format="%.4f", lineterminator="\n")
        stats.counts.to_csv(out / "counts.csv", lineterminator="\n")
        stats.cooccurrence.to_csv(out / "cooccurrence.csv", index=False, float_format="%.4f", lineterminator="\n")
        print(stats.prevalence.round(2).to_string())
        return {"cohort": str(cohort_dir), "n": stats.n}
    if sub == "downsample":
        from .data import read_manifest

        manifest = read_manifest(cohort_dir / MANIFEST_NAME)
        res = downsample_all_negative(manifest, args.rho, _seed(args))
        write_manifest(res.manifest, out / MANIFEST_NAME)
        store_link = out / STORE_NAME
        if not store_link.exists() and (cohort_dir / STORE_NAME).exists():
            store_link.symlink_to((cohort_dir / STORE_NAME).resolve())
        summary = {
            "rho": res.rho,
            "seed": _seed(args),
            "n_all_negative": res.n_all_negative,
            "n_removed": res.n_removed,
            "n_train_before": res.n_train_before,
            "n_train_after": res.n_train_after,
        }
        (out / "downsample.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        print(json.dumps(summary))
        return summary
    raise UsageError(f"unknown data command {sub!r}")


def cmd_train(args, out: Path) -> dict:
    import torch

    from .training.runner import ExperimentSpec, run_experiment

    spec = ExperimentSpec.from_yaml(args.spec)
    if args.seed is not None:
        spec.seeds = [int(args.seed)]
    if args.deterministic:
        spec.deterministic = True
    torch.manual_seed(spec.seeds[0])
    result = run_experiment(spec, out)
    print(result.rows.to_string(index=False))
    return spec.to_dict()


def _read_predictions(path: Path):
    from .data.types import ENDPOINTS, DataFormatError
    from .eval.report import PredictionSet

    frame = pd.read_csv(path, dtype={"record_id": str}, float_precision="round_trip")
    missing = [c for c in ("record_id", *ENDPOINTS) if c not in frame.columns]
    if missing:
        raise DataFormatError(f"{path}: missing column(s) {missing}")
    return PredictionSet(frame[list(ENDPOINTS)].to_numpy(np.float64), frame["record_id"].to_numpy(), model_id=path.stem)


def cmd_eval(args, out: Path) -> dict:
    from .data import read_manifest
    from .eval.report import AlignmentError, macro_report

    pred = _read_predictions(Path(args.predictions))
    manifest = read_manifest(args.manifest).split(args.split)
    ids = manifest.record_ids.astype(str)
    extra = set(pred.record_ids) - set(ids)
    if extra or len(pred) != len(ids):
        raise AlignmentError(f"predictions and the {args.split} split disagree on {len(extra) or abs(len(pred) - len(ids))} record id(s)")
    report = macro_report(pred.align_to(ids), manifest.labels(), args.tau, strict=args.strict)
    report.write(out / "report")
    print(report.to_text(), end="")
    return {"predictions": str(args.predictions), "manifest": str(args.manifest), "split": args.split, "tau": args.tau}


def cmd_plot(args, out: Path) -> dict:
    from . import plots

    kind = args.kind
    if kind == "perf_efficiency":
        if not args.results:
            raise UsageError("perf_efficiency needs --results")
        data = plots.perf_efficiency_data(pd.concat([pd.read_csv(p, dtype={"seed": str, "variant": str}, float_precision="round_trip") for p in args.results], ignore_index=True))
    elif kind == "topk_curve":
        if not args.curve:
            raise UsageError("topk_curve needs --curve")
        data = plots.topk_data(pd.read_csv(args.curve, float_precision="round_trip"))
    else:
        if not args.embeddings:
            raise UsageError("embedding needs --embeddings")
        data = _embedding_table(args)
    png, csv_path = plots.emit(kind, data, out / kind)
    print(png)
    return {"kind": kind, "rows": len(data)}


def _embedding_table(args) -> pd.DataFrame:
    """``--embeddings`` is an ``.npz`` with ``embeddings`` and optional ``record_ids``/``split`` arrays."""
    from . import plots
    from .eval.projection import ProjectionConfig, project_embeddings

    with np.load(args.embeddings, allow_pickle=False) as npz:
        emb = npz["embeddings"]
        ids = npz["record_ids"].astype(str) if "record_ids" in npz else np.arange(len(emb)).astype(str)
        splits = npz["split"].astype(str) if "split" in npz else None
    coords = project_embeddings(emb, ProjectionConfig(seed=_seed(args)))
    if args.color_by == "split":
        return plots.embedding_data(coords, splits, ids)
    if not (args.predictions and args.manifest):
        raise UsageError("error colouring needs --predictions and --manifest")
    from .data import read_manifest

    pred = _read_predictions(Path(args.predictions)).align_to(ids)
    frame = read_manifest(args.manifest).frame.set_index("record_id")
    from .data.types import LABEL_COLUMNS

    missing = set(ids) - set(frame.index.astype(str))
    if missing:
        from .eval.report import AlignmentError

        raise AlignmentError(f"{len(missing)} embedded records are not in the manifest")
    labels = frame.loc[ids, list(LABEL_COLUMNS)].to_numpy(np.int64)
    return plots.embedding_data(coords, splits, ids, pred.probabilities, labels, tau=args.tau)


COMMANDS = {"data": cmd_data, "train": cmd_train, "eval": cmd_eval, "plot": cmd_plot}


# -- parser -----------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shdbench", description="Structural heart disease ECG benchmark workbench.")
    p.add_argument("--version", action="version", version=f"shdbench {__version__}")
    p.add_argument("--seed", type=int, default=None, help="seed override for the command")
    p.add_argument("--deterministic", action="store_true", help="deterministic kernels and reproducible timestamps")
    p.add_argument("--out", default=None, help="output directory (default: ./shdbench_out)")
    p.add_argument("--config", default=None, help="YAML mapping of default option values")
    p.add_argument("--strict", action="store_true", help="treat undefined metrics as errors")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    data = sub.add_parser("data", help="cohort import, synthesis and statistics")
    dsub = data.add_subparsers(dest="data_command", required=True, parser_class=_Parser)
    synth = dsub.add_parser("synth", help="generate a seeded synthetic cohort")
    synth.add_argument("--n", type=int, default=1200)
    synth.add_argument("--signal-strength", type=float, default=1.0)
    synth.add_argument("--split-sizes", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    imp = dsub.add_parser("import", help="convert a public release directory")
    imp.add_argument("--release", required=True)
    imp.add_argument("--layout", default=None, help="YAML file describing the release layout")
    for name, help_ in (("validate", "check cohort invariants"), ("stats", "prevalence and co-occurrence tables")):
        sp = dsub.add_parser(name, help=help_)
        sp.add_argument("--cohort", required=True)
    ds = dsub.add_parser("downsample", help="drop all-negative training records")
    ds.add_argument("--cohort")
    ds.add_argument("--rho", type=float, default=0.5)
    ds.add_argument("--check", nargs="+", metavar="RHO:REMOVED[:TRAIN]", help="back-solve the all-negative count instead")

    train = sub.add_parser("train", help="run an experiment spec")
    train.add_argument("spec", nargs="?", help="experiment spec (YAML); defaults to --config")

    ev = sub.add_parser("eval", help="per-label and macro report for a prediction file")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.add_argument("--tau", type=float, default=0.5)

    pl = sub.add_parser("plot", help="figures with CSV sidecars")
    pl.add_argument("kind", choices=("perf_efficiency", "topk_curve", "embedding"))
    pl.add_argument("--results", nargs="+", help="results CSV file(s)")
    pl.add_argument("--curve", help="top-k curve CSV")
    pl.add_argument("--embeddings", help=".npz with an 'embeddings' array")
    pl.add_argument("--color-by", choices=("split", "error"), default="split")
    pl.add_argument("--predictions")
    pl.add_argument("--manifest")
    pl.add_argument("--tau", type=float, default=0.5)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str], args) -> argparse.Namespace:
    """Fill options the user did not pass from the ``--config`` mapping."""
    if args.config is None:
        return args
    if args.command == "train" and args.spec is None:
        args.spec = args.config
        return args
    try:
        raw = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as err:
        raise UsageError(f"cannot read config {args.config}: {err}") from err
    if not isinstance(raw, dict):
        raise UsageError("config must be a mapping of option names to values")
    given = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    unknown = sorted(k for k in raw if not hasattr(args, k.replace("-", "_")))
    if unknown:
        raise UsageError(f"unknown config key(s) {unknown}")
    for key, value in raw.items():
        key = key.replace("-", "_")
        if key not in given:
            setattr(args, key, value)
    return args


def _validate(args) -> None:
    if args.command == "data" and args.data_command in ("validate", "stats") and not Path(args.cohort).is_dir():
        raise FileNotFoundError(f"cohort directory {args.cohort} not found")
    if args.command == "data" and args.data_command == "downsample":
        if not args.check and not args.cohort:
            raise UsageError("downsample needs --cohort (or --check)")
        if not 0.0 < args.rho <= 1.0:
            raise UsageError(f"--rho must lie in (0, 1], got {args.rho}")
    if args.command == "train" and args.spec is None:
        raise UsageError("train needs a spec path (positional or --config)")
    if getattr(args, "tau", None) is not None and not 0.0 < args.tau < 1.0:
        raise UsageError(f"--tau must lie in (0, 1), got {args.tau}")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(parser, argv, args)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
        _validate(args)
        if args.deterministic:
            import torch

            torch.use_deterministic_algorithms(True)
        out = Path(args.out or "shdbench_out")
        started = _timestamp(args.deterministic)
        with directory_lock(out):
            config = COMMANDS[args.command](args, out)
            write_run_manifest(out, ["shdbench", *argv], {"command": args.command, **(config or {})}, started, args.deterministic)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as err:  # noqa: BLE001 - mapped to the exit-status contract
        category, status = _category(err)
        if isinstance(err, UsageError):
            category = "usage"
        message = " ".join(str(err).split()) or type(err).__name__
        print(f"shdbench-error category={category} message={message}", file=sys.stderr)
        logger.debug("command failed", exc_info=True)
        return status
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
