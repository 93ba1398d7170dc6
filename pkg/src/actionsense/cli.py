"""Batch command-line orchestration for dataset builds, generation, and eval.

Commands: build-dataset, stats, generate, evaluate, ablate, report. Runs are
deterministic (fixed seed, deterministic providers, content-addressed caches)
and resumable through a manifest that records stage completion in pipeline
order: ingest -> extract -> triplets -> assemble -> generate -> evaluate.

Exit codes: 0 success, 2 configuration or input error, 3 provider failure
after retries.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import assembly, extraction, generation, metrics, stubs, triplets
from .corpus import Corpus, MalformedAnnotation
from .generation import (
    InferenceType,
    Modality,
    MODALITY_COMBOS,
    PromptSpec,
    combo_label,
    parse_combo_label,
    prompt_id,
)
from .providers import (
    HttpCorefProvider,
    HttpLMProvider,
    HttpParseProvider,
    HttpRCProvider,
    ProviderError,
    ResponseCache,
    with_retries,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3

STAGE_ORDER = ("ingest", "extract", "triplets", "assemble", "generate", "evaluate")
_STAGE_REQUIRES = {"generate": "assemble", "evaluate": "generate"}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    annotation_file: str = ""
    recipe_file: str = ""
    out_dir: str = ""
    min_count: int = extraction.DEFAULT_MIN_COUNT
    seed: int = 13
    nucleus_p: float = 0.9
    n_samples: int = 5
    max_new_tokens: int = 16
    fps: float = 30.0
    pool_size: int = metrics.DEFAULT_POOL_SIZE
    acc_mode: str = "top_gt"
    workers: int = 1
    modalities: list[str] = field(default_factory=lambda: ["all"])
    variants: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    modality_stage_variant: int = 1
    retries: int = 3
    retry_base_delay: float = 0.05
    providers: dict = field(default_factory=dict)

    def hash(self) -> str:
        canon = json.dumps(self.__dict__, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def mask_list(self) -> list[frozenset[Modality]]:
        if self.modalities == ["all"]:
            return list(MODALITY_COMBOS)
        return [parse_combo_label(label) for label in self.modalities]


def _resolve_path(value: str, base: Path) -> str:
    if value.startswith("fixtures:"):
        return str(stubs.fixture_path(value[len("fixtures:"):]))
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc

    cfg = RunConfig()
    known = set(cfg.__dict__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields in {path}: {sorted(unknown)}")
    cfg = replace(cfg, **raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)

    base = path.parent
    for attr in ("annotation_file", "recipe_file"):
        value = getattr(cfg, attr)
        if value:
            setattr(cfg, attr, _resolve_path(value, base))
    for spec in cfg.providers.values():
        if "path" in spec:
            spec["path"] = _resolve_path(spec["path"], base)
    if cfg.out_dir:
        cfg.out_dir = str(Path(cfg.out_dir) if Path(cfg.out_dir).is_absolute() else base / cfg.out_dir)
    return cfg


class Manifest:
    def __init__(self, run_dir: Path, config_hash: str = ""):
        self.path = Path(run_dir) / "manifest.json"
        self.data = {"config_hash": config_hash, "stages": {}, "cells": {}, "failures": []}

    @classmethod
    def load(cls, run_dir: Path) -> "Manifest":
        manifest = cls(run_dir)
        if manifest.path.exists():
            with open(manifest.path, encoding="utf-8") as fh:
                manifest.data = json.load(fh)
        return manifest

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=1)

    def mark_stage(self, stage: str, **info) -> None:
        self.data["stages"][stage] = info
        self.save()

    def has_stage(self, stage: str) -> bool:
        return stage in self.data["stages"]

    def mark_cell(self, key: str, path: str) -> None:
        self.data["cells"][key] = path
        self.save()

    def cell_done(self, key: str) -> bool:
        entry = self.data["cells"].get(key)
        return entry is not None and Path(entry).exists()

    def record_failure(self, message: str) -> None:
        self.data["failures"].append(message)
        self.save()


@dataclass
class Providers:
    coref: object | None = None
    parse: object | None = None
    rc: object | None = None
    lm: object | None = None
    vision: object | None = None


def make_providers(cfg: RunConfig, cache_dir: Path) -> Providers:
    cache = ResponseCache(cache_dir)
    built = Providers()
    stub_lookup = {
        "coref": lambda spec: stubs.StubCorefProvider(spec["path"]),
        "parse": lambda spec: stubs.StubParseProvider(spec["path"]),
        "rc": lambda spec: stubs.StubRCProvider(spec["path"]),
        "lm": lambda spec: stubs.StubLMProvider(spec.get("path"), seed=cfg.seed),
        "vision": lambda spec: stubs.StubVisionProvider(),
    }
    http_lookup = {
        "coref": lambda spec: HttpCorefProvider(spec["url"], cache),
        "parse": lambda spec: HttpParseProvider(spec["url"], cache),
        "rc": lambda spec: HttpRCProvider(spec["url"], cache),
        "lm": lambda spec: HttpLMProvider(spec["url"], cache),
    }
    for name, spec in cfg.providers.items():
        kind = spec.get("kind")
        if kind == "stub":
            factory = stub_lookup.get(name)
        elif kind == "http":
            factory = http_lookup.get(name)
        else:
            raise ConfigError(f"provider {name!r} has unknown kind {kind!r}")
        if factory is None:
            raise ConfigError(f"no {kind} implementation for provider {name!r}")
        setattr(built, name, factory(spec))
    return built


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _require_stage(manifest: Manifest, stage: str) -> str | None:
    needed = _STAGE_REQUIRES.get(stage)
    if needed and not manifest.has_stage(needed):
        return f"stage {stage!r} requires completed stage {needed!r}; run the pipeline in order"
    return None


# ---------------------------------------------------------------------------
# build-dataset


def run_build_dataset(cfg: RunConfig) -> int:
    run_dir = Path(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(run_dir, cfg.hash())

    for attr, label in (("annotation_file", "annotation"), ("recipe_file", "recipe index")):
        value = getattr(cfg, attr)
        if not value or not Path(value).exists():
            return _fail(f"{label} file not found: {value or '<unset>'}", EXIT_CONFIG)

    try:
        corpus = Corpus.load(cfg.annotation_file, cfg.recipe_file)
    except MalformedAnnotation as exc:
        return _fail(str(exc), EXIT_CONFIG)

    try:
        providers = make_providers(cfg, run_dir / "cache")
    except ConfigError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    if providers.coref is None or providers.parse is None:
        return _fail("build-dataset needs coref and parse providers", EXIT_CONFIG)

    manifest.mark_stage("ingest", videos=len(corpus.videos))

    resolved: dict[tuple[str, int], str] = {}
    pairs = []
    try:
        for video in corpus.videos:
            sentences = extraction.resolve_coreferences(video, providers.coref)
            for seg, sentence in zip(video.segments, sentences):
                resolved[(video.video_id, seg.index)] = sentence.resolved
                pairs.extend(
                    with_retries(
                        lambda s=sentence, v=video, i=seg.index: extraction.extract_verb_ingredient_pairs(
                            s.resolved, providers.parse, v.video_id, i
                        ),
                        attempts=cfg.retries,
                        base_delay=cfg.retry_base_delay,
                    )
                )
    except ProviderError as exc:
        manifest.record_failure(f"extract: {exc}")
        return _fail(f"parse provider failed after retries: {exc}", EXIT_PROVIDER)

    counts = extraction.count_lemma_frequencies(pairs)
    kept = extraction.filter_pairs_by_frequency(pairs, counts, cfg.min_count)
    manifest.mark_stage("extract", pairs=len(pairs), kept=len(kept))

    buckets = triplets.group_by_ingredient(triplets.events_from_pairs(kept))
    triplet_list = triplets.all_triplets(buckets)
    triplets_path = run_dir / "triplets.jsonl"
    triplets.write_triplets(triplet_list, triplets_path)
    manifest.mark_stage("triplets", count=len(triplet_list), file=str(triplets_path))

    instances = []
    try:
        for triplet in triplet_list:
            instances.append(
                with_retries(
                    lambda t=triplet: assembly.build_instance(
                        t, corpus, rc=providers.rc, resolved=resolved, fps=cfg.fps
                    ),
                    attempts=cfg.retries,
                    base_delay=cfg.retry_base_delay,
                )
            )
    except ProviderError as exc:
        manifest.record_failure(f"assemble: {exc}")
        return _fail(f"rc provider failed after retries: {exc}", EXIT_PROVIDER)

    merged = sorted(assembly.merge_by_action_object(instances), key=lambda i: i.instance_id)
    dataset_path = run_dir / "dataset.jsonl"
    assembly.write_dataset(merged, dataset_path)
    stats = assembly.compute_statistics(merged)
    _write_atomic(run_dir / "stats.json", json.dumps(stats.to_dict(), indent=1) + "\n")
    manifest.mark_stage(
        "assemble", instances=len(merged), dataset=str(dataset_path), stats=str(run_dir / "stats.json")
    )
    print(f"wrote {len(merged)} instances to {dataset_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# stats


def run_stats(dataset_path: str) -> int:
    path = Path(dataset_path)
    if not path.exists():
        return _fail(f"dataset not readable: {path}", EXIT_CONFIG)
    try:
        instances = assembly.read_dataset(path)
    except (json.JSONDecodeError, KeyError) as exc:
        return _fail(f"dataset not readable: {path}: {exc}", EXIT_CONFIG)
    report = assembly.compute_statistics(instances)
    width = max(len(label) for label, _ in report.rows())
    for label, value in report.rows():
        print(f"{label.ljust(width)}  {value}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate


def _cell_key(mask_label: str, variant: int) -> str:
    return f"{mask_label}__P{variant}"


def _generate_for_instance(cfg: RunConfig, providers: Providers, instance, mask, variant):
    """All five inference types for one (instance, mask, variant) request group."""
    label = combo_label(mask)
    lines = []
    for itype in InferenceType:
        spec = PromptSpec(itype, variant, mask)
        try:
            texts = with_retries(
                lambda: generation.generate_inferences(
                    instance,
                    spec,
                    providers.lm,
                    cfg.n_samples,
                    vision=providers.vision,
                    nucleus_p=cfg.nucleus_p,
                    max_new=cfg.max_new_tokens,
                ),
                attempts=cfg.retries,
                base_delay=cfg.retry_base_delay,
            )
        except generation.MissingModality:
            continue
        scored = [
            with_retries(
                lambda t=text: generation.score_candidate(
                    instance, spec, t, providers.lm, vision=providers.vision
                ),
                attempts=cfg.retries,
                base_delay=cfg.retry_base_delay,
            )
            for text in texts
        ]
        lines.append(
            {
                "instance_id": instance.instance_id,
                "inference_type": itype.value,
                "condition": label,
                "variant": variant,
                "prompt_id": prompt_id(itype, variant),
                "texts": texts,
                "nll": [c.nll for c in scored],
                "perplexity": [c.perplexity for c in scored],
            }
        )
    return lines


def _generate_cells(
    cfg: RunConfig,
    run_dir: Path,
    manifest: Manifest,
    providers: Providers,
    instances,
    masks,
    variants,
    resume: bool,
    phase: str,
) -> tuple[Path | None, list[str]]:
    """Generate and score per-cell files; return the combined file and failures."""
    cell_dir = run_dir / f"gen_cells_{phase}"
    cell_dir.mkdir(parents=True, exist_ok=True)
    failures: list[str] = []
    cell_paths: list[Path] = []

    for mask in masks:
        label = combo_label(mask)
        for variant in variants:
            key = f"{phase}:{_cell_key(label, variant)}"
            cell_path = cell_dir / f"{_cell_key(label, variant)}.jsonl"
            cell_paths.append(cell_path)
            if resume and manifest.cell_done(key):
                continue
            try:
                if cfg.workers > 1:
                    # ordered collection keeps parallel runs byte-identical
                    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                        groups = list(
                            pool.map(
                                lambda i: _generate_for_instance(cfg, providers, i, mask, variant),
                                instances,
                            )
                        )
                else:
                    groups = [
                        _generate_for_instance(cfg, providers, i, mask, variant)
                        for i in instances
                    ]
            except ProviderError as exc:
                failures.append(f"{key}: {exc}")
                manifest.record_failure(f"{key}: {exc}")
                continue
            lines = [line for group in groups for line in group]
            _write_atomic(
                cell_path,
                "".join(json.dumps(line, ensure_ascii=False) + "\n" for line in lines),
            )
            manifest.mark_cell(key, str(cell_path))

    if failures:
        return None, failures
    combined = run_dir / f"generations_{phase}.jsonl"
    _write_atomic(combined, "".join(p.read_text(encoding="utf-8") for p in cell_paths))
    return combined, []


def run_generate(cfg: RunConfig, resume: bool = False, phase: str = "main") -> int:
    run_dir = Path(cfg.out_dir)
    manifest = Manifest.load(run_dir)
    blocked = _require_stage(manifest, "generate")
    if blocked:
        return _fail(blocked, EXIT_CONFIG)
    try:
        providers = make_providers(cfg, run_dir / "cache")
    except ConfigError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    if providers.lm is None:
        return _fail("generate needs an lm provider", EXIT_CONFIG)

    instances = assembly.read_dataset(run_dir / "dataset.jsonl")
    masks = cfg.mask_list()
    combined, failures = _generate_cells(
        cfg, run_dir, manifest, providers, instances, masks, cfg.variants, resume, phase
    )
    if failures:
        return _fail(
            f"{len(failures)} generation cells failed after retries (see manifest)",
            EXIT_PROVIDER,
        )
    manifest.mark_stage(
        "generate",
        file=str(combined),
        masks=[combo_label(m) for m in masks],
        variants=list(cfg.variants),
        request_groups=len(masks) * len(cfg.variants) * len(instances),
        phase=phase,
    )
    print(f"wrote generations to {combined}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _read_generations(path: Path) -> list[dict]:
    lines = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if raw:
                lines.append(json.loads(raw))
    return lines


def _cell_metrics(cfg: RunConfig, entries, by_id, itype: str, mask, variant, lm) -> dict:
    """Six-metric scores for one (type, mask, variant) cell."""
    all_texts = [t for e in entries for t in e["texts"]]

    bleu_scores = []
    meteor_scores = []
    cider_cands: dict[str, str] = {}
    cider_refs: dict[str, list[str]] = {}
    pools = []
    for entry in entries:
        instance = by_id[entry["instance_id"]]
        refs = sorted(instance.inference_set(itype))
        if not refs:
            continue
        for k, text in enumerate(entry["texts"]):
            if not metrics.tokenize(text):
                continue
            bleu_scores.append(metrics.bleu2(text, refs))
            meteor_scores.append(metrics.meteor(text, refs))
            key = f"{entry['instance_id']}#{k}"
            cider_cands[key] = text
            cider_refs[key] = refs
        spec = PromptSpec(InferenceType(itype), variant, mask)
        pool = metrics.build_candidate_pool(
            instance, by_id.values(), cfg.seed, itype, pool_size=cfg.pool_size
        )
        pools.append(
            metrics.score_pool(
                pool,
                lambda text, i=instance, s=spec: generation.score_candidate(
                    i, s, text, lm
                ).perplexity,
            )
        )

    mean = lambda xs: sum(xs) / len(xs) if xs else 0.0
    if len(cider_cands) >= 2:
        _, cider_mean = metrics.cider(cider_cands, cider_refs)
    else:
        cider_mean = 0.0
    training_refs = {t for inst in by_id.values() for t in inst.inference_set(itype)}
    return {
        "B": mean(bleu_scores),
        "M": mean(meteor_scores),
        "C": cider_mean,
        "A50": metrics.acc_at_50(pools, mode=cfg.acc_mode) if pools else 0.0,
        "unique": metrics.uniqueness(all_texts) if all_texts else 0.0,
        "novel": metrics.novelty(all_texts, training_refs) if all_texts else 0.0,
    }


def _evaluate_grid(cfg: RunConfig, generations, instances, lm, masks, variants):
    """Score every (type, mask, variant) cell; raises MissingCell when absent."""
    by_id = {i.instance_id: i for i in instances}
    grouped: dict[tuple[str, str, int], list[dict]] = {}
    for line in generations:
        key = (line["inference_type"], line["condition"], line["variant"])
        grouped.setdefault(key, []).append(line)

    cells = {}
    for mask in masks:
        label = combo_label(mask)
        for variant in variants:
            for itype in INFERENCE_TYPE_NAMES:
                entries = grouped.get((itype, label, variant))
                if not entries:
                    raise metrics.MissingCell(f"({itype}, {label}, P{variant})")
                cells[(itype, label, variant)] = _cell_metrics(
                    cfg, entries, by_id, itype, mask, variant, lm
                )
    return cells


INFERENCE_TYPE_NAMES = tuple(t.value for t in InferenceType)


def _modality_report(cells, masks, variant: int) -> metrics.EvalReport:
    """Table-shaped report: one row per mask, metrics averaged over types."""
    scores = {}
    for mask in masks:
        label = combo_label(mask)
        agg = {}
        for column in metrics.METRIC_COLUMNS:
            values = [cells[(t, label, variant)][column] for t in INFERENCE_TYPE_NAMES]
            agg[column] = sum(values) / len(values)
        scores[("all", label)] = agg
    return metrics.aggregate_report(scores, types=["all"], conditions=[combo_label(m) for m in masks])


def _prompt_report(cells, mask, variants) -> metrics.EvalReport:
    """Table-shaped report: one row per (type, prompt variant)."""
    label = combo_label(mask)
    rows = []
    for itype in INFERENCE_TYPE_NAMES:
        for variant in variants:
            cell = cells[(itype, label, variant)]
            rows.append(
                metrics.ReportRow(
                    inference_type=itype,
                    condition=prompt_id(InferenceType(itype), variant),
                    B=cell["B"],
                    M=cell["M"],
                    C=cell["C"],
                    A50=cell["A50"],
                    unique=cell["unique"],
                    novel=cell["novel"],
                )
            )
    return metrics.EvalReport(rows=tuple(rows))


def _write_report(report: metrics.EvalReport, run_dir: Path, name: str) -> None:
    _write_atomic(run_dir / f"{name}.json", report.to_json() + "\n")
    _write_atomic(run_dir / f"{name}.txt", report.to_text() + "\n")


def run_evaluate(
    cfg: RunConfig,
    generations_path: str | None = None,
    dataset_path: str | None = None,
) -> int:
    run_dir = Path(cfg.out_dir)
    manifest = Manifest.load(run_dir)
    if generations_path is None:
        blocked = _require_stage(manifest, "evaluate")
        if blocked:
            return _fail(blocked, EXIT_CONFIG)
        record = manifest.data["stages"]["generate"]
        generations_path = record["file"]
        masks = [parse_combo_label(l) for l in record["masks"]]
        variants = record["variants"]
    else:
        masks = None
        variants = None

    dataset_file = Path(dataset_path or run_dir / "dataset.jsonl")
    if not dataset_file.exists():
        return _fail(f"dataset not found: {dataset_file}", EXIT_CONFIG)
    generations_file = Path(generations_path)
    if not generations_file.exists():
        return _fail(f"generations not found: {generations_file}", EXIT_CONFIG)

    generations = _read_generations(generations_file)
    instances = assembly.read_dataset(dataset_file)
    if masks is None:
        seen = []
        for line in generations:
            pair = (line["condition"], line["variant"])
            if pair not in seen:
                seen.append(pair)
        masks = []
        variants = []
        for condition, variant in seen:
            mask = parse_combo_label(condition)
            if mask not in masks:
                masks.append(mask)
            if variant not in variants:
                variants.append(variant)

    try:
        providers = make_providers(cfg, run_dir / "cache")
    except ConfigError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    if providers.lm is None:
        return _fail("evaluate needs an lm provider for pool scoring", EXIT_CONFIG)

    try:
        cells = _evaluate_grid(cfg, generations, instances, providers.lm, masks, variants)
    except metrics.MissingCell as exc:
        return _fail(f"incomplete grid, missing cell {exc}", EXIT_CONFIG)
    except metrics.InsufficientNegatives as exc:
        return _fail(f"{exc}; lower pool_size for desk-scale runs", EXIT_CONFIG)

    if len(masks) > 1 and len(variants) == 1:
        report = _modality_report(cells, masks, variants[0])
        name = "modality_report"
    elif len(masks) == 1:
        report = _prompt_report(cells, masks[0], variants)
        name = "prompt_report"
    else:
        scores = {
            (t, f"{label}|P{v}"): cell for (t, label, v), cell in cells.items()
        }
        report = metrics.aggregate_report(scores)
        name = "report"
    _write_report(report, run_dir, name)
    manifest.mark_stage("evaluate", report=str(run_dir / f"{name}.json"))
    print(f"wrote {run_dir / (name + '.json')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate


def run_ablate(cfg: RunConfig, resume: bool = False, modalities_only: bool = False) -> int:
    run_dir = Path(cfg.out_dir)
    manifest = Manifest.load(run_dir)
    blocked = _require_stage(manifest, "generate")
    if blocked:
        return _fail(blocked, EXIT_CONFIG)
    try:
        providers = make_providers(cfg, run_dir / "cache")
    except ConfigError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    if providers.lm is None:
        return _fail("ablate needs an lm provider", EXIT_CONFIG)

    instances = assembly.read_dataset(run_dir / "dataset.jsonl")
    masks = list(MODALITY_COMBOS)
    variant = cfg.modality_stage_variant

    combined, failures = _generate_cells(
        cfg, run_dir, manifest, providers, instances, masks, [variant], resume, "modality"
    )
    if failures:
        return _fail(f"{len(failures)} modality cells failed (see manifest)", EXIT_PROVIDER)
    manifest.mark_stage(
        "generate",
        file=str(combined),
        masks=[combo_label(m) for m in masks],
        variants=[variant],
        request_groups=len(masks) * len(instances),
        phase="modality",
    )

    generations = _read_generations(combined)
    try:
        cells = _evaluate_grid(cfg, generations, instances, providers.lm, masks, [variant])
    except metrics.MissingCell as exc:
        return _fail(f"incomplete modality grid, missing cell {exc}", EXIT_CONFIG)
    except metrics.InsufficientNegatives as exc:
        return _fail(f"{exc}; lower pool_size for desk-scale runs", EXIT_CONFIG)
    modality_report = _modality_report(cells, masks, variant)
    _write_report(modality_report, run_dir, "modality_report")
    manifest.mark_stage("evaluate", report=str(run_dir / "modality_report.json"), phase="modality")
    print(f"wrote {run_dir / 'modality_report.json'}")

    if modalities_only:
        return EXIT_OK

    # Best modality row: argmax of mean(B, M, C, A50) on the display scale.
    def row_score(row: metrics.ReportRow) -> float:
        return (row.B * 100 + row.M * 100 + row.C * 10 + row.A50 * 100) / 4

    best_row = max(modality_report.rows, key=row_score)
    best_mask = parse_combo_label(best_row.condition)

    combined, failures = _generate_cells(
        cfg, run_dir, manifest, providers, instances, [best_mask], cfg.variants, resume, "prompt"
    )
    if failures:
        return _fail(f"{len(failures)} prompt cells failed (see manifest)", EXIT_PROVIDER)
    manifest.mark_stage(
        "generate",
        file=str(combined),
        masks=[combo_label(best_mask)],
        variants=list(cfg.variants),
        request_groups=len(cfg.variants) * len(instances),
        phase="prompt",
    )

    generations = _read_generations(combined)
    try:
        cells = _evaluate_grid(cfg, generations, instances, providers.lm, [best_mask], cfg.variants)
    except metrics.MissingCell as exc:
        return _fail(f"incomplete prompt grid, missing cell {exc}", EXIT_CONFIG)
    prompt_report = _prompt_report(cells, best_mask, cfg.variants)
    _write_report(prompt_report, run_dir, "prompt_report")
    manifest.mark_stage("evaluate", report=str(run_dir / "prompt_report.json"), phase="prompt")
    print(f"wrote {run_dir / 'prompt_report.json'} (best modality: {best_row.condition})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def run_report(report_path: str, as_csv: bool = False) -> int:
    path = Path(report_path)
    if not path.exists():
        return _fail(f"report not found: {path}", EXIT_CONFIG)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    rows = data.get("rows", [])
    if not rows:
        return _fail(f"report {path} has no rows", EXIT_CONFIG)
    columns = ["type", "condition", *metrics.METRIC_COLUMNS]
    if as_csv:
        import csv

        writer = csv.DictWriter(sys.stdout, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in columns})
    else:
        table = [tuple(columns)] + [tuple(str(row[c]) for c in columns) for row in rows]
        widths = [max(len(r[i]) for r in table) for i in range(len(columns))]
        for row in table:
            print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run configuration JSON")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="run seed (overrides config)")


def _load(args) -> RunConfig:
    overrides = {"out_dir": getattr(args, "out", None), "seed": getattr(args, "seed", None)}
    if getattr(args, "modalities", None):
        overrides["modalities"] = args.modalities.split(",")
    if getattr(args, "variants", None):
        overrides["variants"] = [int(v) for v in args.variants.split(",")]
    cfg = load_config(args.config, overrides)
    if not cfg.out_dir:
        raise ConfigError("no output directory; set out_dir in config or pass --out")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actionsense",
        description="Build action commonsense datasets and evaluate generated inferences",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="run the collection pipeline")
    _add_config_args(p)

    p = sub.add_parser("stats", help="print dataset statistics")
    p.add_argument("dataset", help="dataset JSONL path")

    p = sub.add_parser("generate", help="sample and score inferences over a grid")
    _add_config_args(p)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--modalities", help="comma-separated mask labels or 'all'")
    p.add_argument("--variants", help="comma-separated prompt variants")

    p = sub.add_parser("evaluate", help="score generations into report tables")
    _add_config_args(p)
    p.add_argument("--generations", help="generations JSONL (defaults to manifest)")
    p.add_argument("--dataset", help="dataset JSONL (defaults to run dir)")

    p = sub.add_parser("ablate", help="modality grid, then prompt grid on the best row")
    _add_config_args(p)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--modalities-only", action="store_true")

    p = sub.add_parser("report", help="render a report JSON as a table")
    p.add_argument("report", help="report JSON path")
    p.add_argument("--csv", action="store_true")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "build-dataset":
            return run_build_dataset(_load(args))
        if args.command == "stats":
            return run_stats(args.dataset)
        if args.command == "generate":
            return run_generate(_load(args), resume=args.resume)
        if args.command == "evaluate":
            return run_evaluate(_load(args), args.generations, args.dataset)
        if args.command == "ablate":
            return run_ablate(_load(args), resume=args.resume, modalities_only=args.modalities_only)
        if args.command == "report":
            return run_report(args.report, as_csv=args.csv)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
