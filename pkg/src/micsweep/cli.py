"""Command-line entry point: ``micsweep <subcommand>``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .audio_io import write_wav
from .dataset import condition_rows, read_dataset, write_dataset
from .fixtures import DEFAULT_CARS
from .metrics import asr_records, export_asr_batch, ingest_external_metrics, read_hypotheses
from .pipeline import (Condition, default_manifest_dict, full_grid, load_manifest, manifest_digest,
                       render_condition, run_sweep, select_profiles, default_selection_path,
                       write_synthetic_fixtures)
from .report import PlotSpec, emit_boxplot_svg, emit_report
from .stats import anova_by, format_filter, parse_filter

log = logging.getLogger("micsweep")

CI_PROFILES = ("hp20_lp4000_flat", "hp100_lp8000_flat", "hp350_lp8000_flat",
               "hp20_lp20000_flat", "hp100_lp20000_pk4000_q2")


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--manifest", default=default,
                        help="experiment manifest (JSON); defaults to the built-in synthetic manifest")
    parser.add_argument("--seed", type=int, default=default, help="override the manifest seed")
    parser.add_argument("--workers", type=int, default=default, help="parallel render processes (sweep)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="micsweep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"micsweep {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic fixture WAVs and a manifest")
    p.add_argument("--out", required=True, help="directory for fixtures and manifest.json")
    p.add_argument("--ci", action="store_true", help="reduced manifest: 5 profiles x 1 car x 3 noises")

    p = sub.add_parser("grid", parents=[common], help="list microphone profiles")
    p.add_argument("--count", action="store_true", help="print only the number of profiles")
    p.add_argument("--include-no-peak", action="store_true", help="add the flat profile of every (hp, lp)")
    p.add_argument("--selection", help="'default' or a selection file; list that subset instead")

    p = sub.add_parser("render", parents=[common], help="render one condition to a WAV file")
    p.add_argument("--condition", required=True, help="condition id, e.g. sedan-city-hp100_lp8000_flat")
    p.add_argument("--out", required=True, help="output WAV path (float32)")

    p = sub.add_parser("sweep", parents=[common], help="render all conditions and write dataset.csv")
    p.add_argument("--renders", action="store_true", help="also write renders/<condition_id>.wav")
    p.add_argument("--out", help="output directory (default: manifest output_dir)")

    p = sub.add_parser("asr-export", parents=[common], help="write per-sentence WAVs and asr/jobs.csv")
    p.add_argument("--out", help="output directory (default: manifest output_dir)")
    p.add_argument("--condition", action="append", help="restrict to these condition ids (repeatable)")

    p = sub.add_parser("ingest", parents=[common], help="merge ASR hypotheses and/or external scores into the dataset")
    p.add_argument("--dataset", help="dataset.csv to update (default: <output_dir>/dataset.csv)")
    p.add_argument("--hypotheses", help="asr/hypotheses.csv (condition_id,sentence_idx,hypothesis)")
    p.add_argument("--metrics", help="external scores CSV (condition_id,sentence_idx,metric,value)")

    p = sub.add_parser("anova", parents=[common], help="one-way ANOVA of a metric across a grouping")
    p.add_argument("--dataset")
    p.add_argument("--metric", required=True)
    p.add_argument("--group", required=True)
    p.add_argument("--filter", help="e.g. 'hp_fc=350;peak_fc=-1'")

    p = sub.add_parser("plot", parents=[common], help="write one SVG boxplot")
    p.add_argument("--dataset")
    p.add_argument("--metric", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--hue")
    p.add_argument("--filter")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", parents=[common], help="write ANOVA/box/WER tables, figures and index")
    p.add_argument("--dataset")
    p.add_argument("--out", help="report directory (default: <output_dir>/report)")
    return parser


def _manifest_spec(args) -> tuple[dict | Path, str]:
    """Manifest source for load_manifest plus its digest (after any seed override)."""
    if args.manifest:
        path = Path(args.manifest)
        spec = json.loads(path.read_text(encoding="utf-8"))
        source = path
    else:
        spec = default_manifest_dict()
        source = spec
    if args.seed is not None:
        spec = {**spec, "seed": args.seed}
    return source, manifest_digest(spec)


def _load(args):
    source, _ = _manifest_spec(args)
    return load_manifest(source, seed=args.seed)


def _output_dir(args) -> Path:
    if args.manifest:
        spec = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        out = Path(spec.get("output_dir", "out"))
        return out if out.is_absolute() else Path(args.manifest).parent / out
    return Path("out")


def _dataset_path(args) -> Path:
    return Path(args.dataset) if getattr(args, "dataset", None) else _output_dir(args) / "dataset.csv"


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.ci:
        profiles = select_profiles(full_grid(include_no_peak=True), _lines_file(args.out, CI_PROFILES))
        path = write_synthetic_fixtures(args.out, seed=seed, cars=DEFAULT_CARS[:1], selection=profiles)
    else:
        path = write_synthetic_fixtures(args.out, seed=seed)
    print(path)
    return 0


def _lines_file(out_dir, ids) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "selection.txt"
    path.write_text("\n".join(ids) + "\n", encoding="utf-8")
    return path


def cmd_grid(args) -> int:
    grid = full_grid(include_no_peak=args.include_no_peak or bool(args.selection))
    if args.selection:
        src = default_selection_path() if args.selection == "default" else args.selection
        grid = select_profiles(grid, src)
    if args.count:
        print(len(grid))
    else:
        for p in grid:
            print(p.id)
    return 0


def _find_condition(manifest, cid: str) -> Condition:
    for c in manifest.conditions():
        if c.id == cid:
            return c
    raise ValueError(f"unknown condition {cid!r}")


def cmd_render(args) -> int:
    manifest = _load(args)
    cond = _find_condition(manifest, args.condition)
    write_wav(args.out, render_condition(cond, manifest), "float32")
    return 0


def cmd_sweep(args) -> int:
    manifest = _load(args)
    out = Path(args.out) if args.out else manifest.output_dir
    out.mkdir(parents=True, exist_ok=True)
    renders = out / "renders" if args.renders else None
    rows = run_sweep(manifest, workers=args.workers or 1, render_dir=renders)
    write_dataset(rows, out / "dataset.csv")
    (out / "manifest.sha256").write_text(manifest.digest + "\n", encoding="utf-8")
    n_cond = len(manifest.conditions())
    print(f"{n_cond} conditions, {len(rows)} rows -> {out / 'dataset.csv'}")
    return 0


def cmd_asr_export(args) -> int:
    manifest = _load(args)
    out = Path(args.out) if args.out else manifest.output_dir
    conds = manifest.conditions()
    if args.condition:
        wanted = set(args.condition)
        unknown = wanted - {c.id for c in conds}
        if unknown:
            raise ValueError(f"unknown condition(s): {', '.join(sorted(unknown))}")
        conds = [c for c in conds if c.id in wanted]
    renders = ((c.id, render_condition(c, manifest)) for c in conds)
    jobs = export_asr_batch(renders, manifest.layout, manifest.references, out)
    print(jobs)
    return 0


def cmd_ingest(args) -> int:
    if not args.hypotheses and not args.metrics:
        raise ValueError("ingest needs --hypotheses and/or --metrics")
    path = _dataset_path(args)
    rows = read_dataset(path)
    conds = condition_rows(rows)
    existing = {(r.condition_id, r.sentence_idx, r.metric) for r in rows}
    new = []
    if args.hypotheses:
        manifest = _load(args)
        new += asr_records(read_hypotheses(args.hypotheses), manifest.references, list(conds))
    if args.metrics:
        new += ingest_external_metrics(args.metrics, conds)
    added = []
    for rec in new:
        key = (rec.condition_id, rec.sentence_idx, rec.metric)
        if key in existing:
            raise ValueError(f"dataset already has {rec.metric} for {rec.condition_id} sentence {rec.sentence_idx}")
        existing.add(key)
        added.append(conds[rec.condition_id].with_metric(rec.sentence_idx, rec.metric, rec.value))
    write_dataset(rows + added, path)
    print(f"added {len(added)} rows -> {path}")
    return 0


def cmd_anova(args) -> int:
    rows = read_dataset(_dataset_path(args))
    filters = parse_filter(args.filter)
    res = anova_by(rows, args.metric, args.group, filters)
    print(f"metric={args.metric} grouping={args.group} filter={format_filter(filters)} "
          f"F={res.f_stat!r} p={res.p_value!r} df1={res.df_between} df2={res.df_within}")
    for label, mean, n in zip(res.group_labels, res.group_means, res.group_counts):
        print(f"  {label}: n={n} mean={mean:.4f}")
    return 0


def cmd_plot(args) -> int:
    rows = read_dataset(_dataset_path(args))
    _, digest = _manifest_spec(args)
    spec = PlotSpec(args.metric, args.x, args.hue, parse_filter(args.filter), args.out)
    print(emit_boxplot_svg(rows, spec, digest))
    return 0


def cmd_report(args) -> int:
    path = _dataset_path(args)
    rows = read_dataset(path)
    _, digest = _manifest_spec(args)
    out = Path(args.out) if args.out else path.parent / "report"
    print(emit_report(rows, out, digest))
    return 0


COMMANDS = {
    "synth": cmd_synth, "grid": cmd_grid, "render": cmd_render, "sweep": cmd_sweep,
    "asr-export": cmd_asr_export, "ingest": cmd_ingest, "anova": cmd_anova, "plot": cmd_plot,
    "report": cmd_report,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"micsweep {args.command}: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
