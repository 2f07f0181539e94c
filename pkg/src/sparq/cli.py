"""Command-line front end: dictionary training, pair scoring, dataset
evaluation, and the saliency-fraction sweep.

Exit codes: 0 success, 1 usage or invalid input, 2 I/O failure,
3 partial failure (some records could not be scored).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .evaluation import evaluate, srocc
from .image import (
    downsample,
    downsample_factor,
    extract_training_patches,
    load_image,
    salient_count,
)
from .ksvd import DictionaryFormatError, LearnConfig, learn, load_dictionary, save_dictionary
from .manifest import DatasetManifest, load_manifest
from .quality import SparqParams, psnr, sparq_index, sparq_score_profile

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_PARTIAL = 3

_STAT_FIELDS = ("srocc", "krocc", "cc", "mae", "rms")


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; the contract here is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _add_common_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("pipeline parameters")
    group.add_argument("--patch-side", type=int, default=11, help="patch window side length")
    group.add_argument("--train-patches", type=int, default=3000,
                       help="patches sampled per reference for training")
    group.add_argument("--atoms", type=int, default=242, help="dictionary atom count")
    group.add_argument("--sparsity", type=int, default=12, help="nonzeros per sparse code")
    group.add_argument("--iterations", type=int, default=30, help="dictionary learning iterations")
    group.add_argument("--c", type=float, default=0.01, help="stabilizing constant")
    group.add_argument("--salient-fraction", type=float, default=0.15,
                       help="fraction of highest-entropy patches scored")
    group.add_argument("--seed", type=int, default=0, help="RNG seed for training")
    group.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads for batch scoring")
    group.add_argument("--cache-dir", type=Path, default=None,
                       help="directory for trained dictionary files")
    group.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="report format")
    group.add_argument("--with-psnr", action="store_true",
                       help="also report the PSNR baseline")


def _learn_config(args) -> LearnConfig:
    return LearnConfig(
        n_atoms=args.atoms,
        sparsity=args.sparsity,
        iterations=args.iterations,
        seed=args.seed,
        patch_side=args.patch_side,
    )


def _sparq_params(args) -> SparqParams:
    return SparqParams(
        c=args.c,
        sparsity=args.sparsity,
        salient_fraction=args.salient_fraction,
        patch_side=args.patch_side,
    )


class DictionaryProvider:
    """Trains or restores per-reference dictionaries, with optional caching.

    The cache key hashes the preprocessed reference pixels together with
    every training parameter, so changing any of them retrains. Concurrent
    requests for one key train exactly once.
    """

    def __init__(self, config: LearnConfig, train_patches: int, cache_dir: Path | None):
        self.config = config
        self.train_patches = train_patches
        self.cache_dir = cache_dir
        self._memory: dict[str, object] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _preprocess(self, reference_path: Path) -> np.ndarray:
        gray = load_image(reference_path)
        return downsample(gray, downsample_factor(gray))

    def _key(self, small: np.ndarray) -> str:
        cfg = self.config
        tag = (
            f"{small.shape[0]}x{small.shape[1]}|m={cfg.n_atoms}|tau={cfg.sparsity}"
            f"|k={self.train_patches}|side={cfg.patch_side}|seed={cfg.seed}"
        ).encode("ascii")
        return hashlib.sha256(small.tobytes() + tag).hexdigest()[:32]

    def _train(self, small: np.ndarray):
        patches = extract_training_patches(
            small, self.config.patch_side, self.train_patches, self.config.seed
        )
        dictionary, _ = learn(patches, self.config)
        return dictionary

    def get(self, reference_path: Path) -> tuple[object, bool]:
        """Return (dictionary, was_cached) for one reference image."""
        small = self._preprocess(reference_path)
        key = self._key(small)
        with self._registry_lock:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key in self._memory:
                return self._memory[key], True
            cached = False
            dictionary = None
            if self.cache_dir is not None:
                target = self.cache_dir / f"{key}.spqd"
                if target.is_file():
                    try:
                        dictionary = load_dictionary(target)
                        cached = True
                    except DictionaryFormatError as exc:
                        print(f"cache entry {target} unusable ({exc}), retraining",
                              file=sys.stderr)
            if dictionary is None:
                dictionary = self._train(small)
                if self.cache_dir is not None:
                    self.cache_dir.mkdir(parents=True, exist_ok=True)
                    target = self.cache_dir / f"{key}.spqd"
                    tmp = target.with_suffix(".tmp")
                    save_dictionary(dictionary, tmp)
                    os.replace(tmp, target)
            self._memory[key] = dictionary
            return dictionary, cached


def cmd_train(args) -> int:
    config = _learn_config(args)
    if args.manifest is not None and args.images:
        print("train: give either --manifest or image paths, not both", file=sys.stderr)
        return EXIT_USAGE
    if args.manifest is not None:
        manifest = load_manifest(args.manifest, higher_better=not args.lower_better)
        references = manifest.references
    else:
        references = [Path(p) for p in args.images]
    if not references:
        print("train: no reference images given", file=sys.stderr)
        return EXIT_USAGE
    cache_dir = args.cache_dir or Path("sparq-cache")
    provider = DictionaryProvider(config, args.train_patches, cache_dir)
    trained = 0
    for ref in references:
        _, cached = provider.get(ref)
        state = "cached" if cached else "trained"
        trained += 0 if cached else 1
        print(f"{state}\t{ref}")
    print(f"train: {trained} trained, {len(references) - trained} reused", file=sys.stderr)
    return EXIT_OK


def cmd_score(args) -> int:
    params = _sparq_params(args)
    provider = DictionaryProvider(_learn_config(args), args.train_patches, args.cache_dir)
    reference = load_image(args.reference)
    distorted = load_image(args.distorted)
    dictionary, _ = provider.get(Path(args.reference))
    result = sparq_index(reference, distorted, dictionary, params)
    baseline = psnr(reference, distorted) if args.with_psnr else None
    if args.format == "json":
        detail = {
            "sparq": float(f"{result.sparq:.6f}"),
            "q": result.q,
            "patches": [
                {"row": int(r), "col": int(c), "score": float(_fmt(s))}
                for (r, c), s in zip(result.anchors.tolist(), result.patch_scores)
            ],
        }
        if baseline is not None:
            detail["psnr"] = float(_fmt(baseline))
        print(json.dumps(detail, sort_keys=True))
    else:
        print(f"{result.sparq:.6f}")
        if baseline is not None:
            print(f"{baseline:.6f}")
    return EXIT_OK


def _score_records(manifest: DatasetManifest, provider: DictionaryProvider,
                   params: SparqParams, threads: int, with_psnr: bool):
    """Score every record; returns (scores, psnr_baselines, failures)."""

    def work(index: int):
        record = manifest.records[index]
        reference = load_image(record.reference)
        distorted = load_image(record.distorted)
        dictionary, _ = provider.get(record.reference)
        value = sparq_index(reference, distorted, dictionary, params).sparq
        baseline = psnr(reference, distorted) if with_psnr else math.nan
        return value, baseline

    n = len(manifest.records)
    scores = np.full(n, math.nan)
    baselines = np.full(n, math.nan)
    failures: list[tuple[int, str]] = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = {pool.submit(work, i): i for i in range(n)}
        for future, index in futures.items():
            try:
                scores[index], baselines[index] = future.result()
            except Exception as exc:  # noqa: BLE001 - per-record isolation
                failures.append((index, f"{type(exc).__name__}: {exc}"))
    failures.sort()
    return scores, baselines, failures


def _stats_or_none(objective: np.ndarray, subjective: np.ndarray, higher_better: bool):
    subj = subjective if higher_better else -subjective
    try:
        stats = evaluate(objective, subj)
    except ValueError as exc:
        return None, str(exc)
    return stats, None


def _group_rows(manifest, scores, valid, higher_better):
    """Per-tag and overall statistics rows for one objective metric.

    Every tag in the manifest gets a row; counts reflect successfully
    scored records, so the per-tag counts sum to the overall count.
    """
    subjective = np.array([r.score for r in manifest.records])
    tags = [r.tag for r in manifest.records]
    rows = []
    groups: dict[str, list[int]] = {}
    for index, tag in enumerate(tags):
        groups.setdefault(tag, [])
        if valid[index]:
            groups[tag].append(index)
    all_valid = np.flatnonzero(valid)
    for tag in sorted(groups) + ["overall"]:
        idx = np.array(groups[tag] if tag != "overall" else all_valid, dtype=int)
        stats, problem = (None, "no scored records")
        if idx.size:
            stats, problem = _stats_or_none(scores[idx], subjective[idx], higher_better)
        rows.append((tag, idx.size, stats, problem))
    return rows


def _emit_report(manifest, metric_rows, failures, fmt, out=None):
    out = out if out is not None else sys.stdout
    if fmt == "json":
        doc = {
            "dataset": manifest.name,
            "higher_better": manifest.higher_better,
            "records": len(manifest.records),
            "metrics": {},
            "failures": [
                {"record": index, "error": message} for index, message in failures
            ],
        }
        for metric, rows in metric_rows.items():
            section = {}
            for tag, count, stats, problem in rows:
                if stats is None:
                    section[tag] = {"count": count, "error": problem}
                else:
                    section[tag] = {"count": count} | {
                        f: float(_fmt(getattr(stats, f))) for f in _STAT_FIELDS
                    }
            doc["metrics"][metric] = section
        print(json.dumps(doc, indent=2, sort_keys=True), file=out)
    else:
        print("metric,tag,count," + ",".join(_STAT_FIELDS), file=out)
        for metric, rows in metric_rows.items():
            for tag, count, stats, problem in rows:
                if stats is None:
                    cells = [""] * len(_STAT_FIELDS)
                else:
                    cells = [_fmt(getattr(stats, f)) for f in _STAT_FIELDS]
                print(",".join([metric, tag, str(count)] + cells), file=out)
        for index, message in failures:
            print(f"# failed record {index}: {message}", file=out)


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest, higher_better=not args.lower_better)
    params = _sparq_params(args)
    provider = DictionaryProvider(_learn_config(args), args.train_patches, args.cache_dir)
    scores, baselines, failures = _score_records(
        manifest, provider, params, args.threads, args.with_psnr
    )
    valid = ~np.isnan(scores)
    metric_rows = {"sparq": _group_rows(manifest, scores, valid, manifest.higher_better)}
    if args.with_psnr:
        psnr_valid = ~np.isnan(baselines)
        metric_rows["psnr"] = _group_rows(manifest, baselines, psnr_valid, manifest.higher_better)
    for index, message in failures:
        print(f"evaluate: record {index} failed: {message}", file=sys.stderr)
    _emit_report(manifest, metric_rows, failures, args.format)
    overall = next(row for row in metric_rows["sparq"] if row[0] == "overall")
    if overall[2] is None:
        print(f"evaluate: overall statistics unavailable: {overall[3]}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_sweep(args) -> int:
    fractions = []
    for chunk in args.fractions.split(","):
        chunk = chunk.strip()
        if chunk:
            fractions.append(float(chunk))
    if len(fractions) < 2:
        print("sweep: need at least two fractions", file=sys.stderr)
        return EXIT_USAGE
    unique = sorted(set(fractions))
    if len(unique) < len(fractions):
        warnings.warn("duplicate fractions removed from sweep")
    for fraction in unique:
        if not 0.0 < fraction <= 1.0:
            print(f"sweep: fraction {fraction} outside (0, 1]", file=sys.stderr)
            return EXIT_USAGE
    manifest = load_manifest(args.manifest, higher_better=not args.lower_better)
    provider = DictionaryProvider(_learn_config(args), args.train_patches, args.cache_dir)
    base_params = _sparq_params(args)
    top = max(unique)

    def work(index: int):
        record = manifest.records[index]
        reference = load_image(record.reference)
        distorted = load_image(record.distorted)
        dictionary, _ = provider.get(record.reference)
        return sparq_score_profile(reference, distorted, dictionary, base_params, top)

    n = len(manifest.records)
    profiles: list = [None] * n
    failures: list[tuple[int, str]] = []
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        futures = {pool.submit(work, i): i for i in range(n)}
        for future, index in futures.items():
            try:
                profiles[index] = future.result()
            except Exception as exc:  # noqa: BLE001 - per-record isolation
                failures.append((index, f"{type(exc).__name__}: {exc}"))
    failures.sort()
    for index, message in failures:
        print(f"sweep: record {index} failed: {message}", file=sys.stderr)
    subjective = np.array([r.score for r in manifest.records])
    if not manifest.higher_better:
        subjective = -subjective
    valid = [i for i in range(n) if profiles[i] is not None]
    if len(valid) < 3:
        print("sweep: too few scored records for correlation", file=sys.stderr)
        return EXIT_PARTIAL
    curve = []
    for fraction in unique:
        values = []
        for i in valid:
            ranked, n_anchors = profiles[i]
            q = salient_count(n_anchors, fraction)
            values.append(math.fsum(ranked[:q]) / q)
        try:
            coefficient = srocc(values, subjective[valid])
        except ValueError as exc:
            print(f"sweep: fraction {fraction}: {exc}", file=sys.stderr)
            return EXIT_PARTIAL
        curve.append((fraction, coefficient))
    if args.format == "json":
        print(json.dumps(
            [{"fraction": f, "srocc": float(_fmt(s))} for f, s in curve]
        ))
    else:
        print("fraction,srocc")
        for fraction, coefficient in curve:
            print(f"{_fmt(fraction)},{_fmt(coefficient)}")
    return EXIT_PARTIAL if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train and cache per-reference dictionaries")
    train.add_argument("--manifest", type=Path, help="dataset manifest CSV")
    train.add_argument("images", nargs="*", default=[], help="reference image files")
    train.add_argument("--lower-better", action="store_true",
                       help="subjective scores decrease with quality")
    _add_common_options(train)

    score = sub.add_parser("score", help="score one distorted image against its reference")
    score.add_argument("reference")
    score.add_argument("distorted")
    _add_common_options(score)

    ev = sub.add_parser("evaluate", help="score a manifest and correlate with ratings")
    ev.add_argument("--manifest", type=Path, required=True)
    ev.add_argument("--lower-better", action="store_true",
                    help="subjective scores decrease with quality")
    _add_common_options(ev)

    sweep = sub.add_parser("sweep", help="SROCC as a function of the saliency fraction")
    sweep.add_argument("--manifest", type=Path, required=True)
    sweep.add_argument("--fractions", required=True,
                       help="comma-separated fractions in (0, 1], at least two")
    sweep.add_argument("--lower-better", action="store_true",
                       help="subjective scores decrease with quality")
    _add_common_options(sweep)

    return parser


_COMMANDS = {
    "train": cmd_train,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    # Environment notice from numba's threading-layer probe; harmless here.
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"sparq {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_USAGE


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
