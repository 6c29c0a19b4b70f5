"""Command-line entry point.

Subcommands: convert (depth CSVs -> raw cloud binaries), preprocess
(clean/normalize/standardize cloud binaries), synth (generate a farm),
experiment (run a plan end to end), report (summarize a results file).
Every command writes a run manifest next to its outputs with the inputs,
their content hashes, seeds, versions, and timings. Exit codes: 0 success,
1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from pathlib import Path

DEFAULT_SEED = 20240715


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_run_manifest(out_dir: Path, command: str, args_text: str,
                       inputs: list[Path], seed, timings: dict) -> None:
    import numpy

    from . import __version__
    from .kvtext import write_kv_file

    pairs = [
        ("command", command),
        ("arguments", args_text),
        ("seed", str(seed)),
        ("herdweight_version", __version__),
        ("numpy_version", numpy.__version__),
        ("python_version", sys.version.split()[0]),
    ]
    for p in sorted(set(map(Path, inputs))):
        pairs.append((f"input.{p.name}", f"{p} sha256={_sha256(p)}"))
    for name, seconds in timings.items():
        pairs.append((f"seconds.{name}", f"{seconds:.3f}"))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_kv_file(out_dir / "run_manifest.txt", pairs)


def cmd_convert(args) -> int:
    from .depth_io import clip_depth, deproject, read_camera_profile, read_depth_file
    from .experiments.manifest import load_manifest
    from .pointcloud import write_cloud

    t0 = time.time()
    manifest = load_manifest(args.manifest)
    camera = read_camera_profile(args.camera)
    out = Path(args.out)
    n = 0
    for rec in manifest.records:
        for path in rec.frame_paths:
            frame = read_depth_file(path, farm_id=rec.farm_id, cow_id=rec.cow_id)
            cloud = deproject(clip_depth(frame), camera)
            dest = out / rec.farm_id / rec.cow_id / f"{frame.frame_id}.pcb"
            dest.parent.mkdir(parents=True, exist_ok=True)
            write_cloud(dest, cloud)
            n += 1
    if not args.quiet:
        print(f"converted {n} frames -> {out}")
    write_run_manifest(out, "convert", f"{args.manifest} {args.camera}",
                       [Path(args.manifest), Path(args.camera)], "-",
                       {"total": time.time() - t0})
    return 0


def cmd_preprocess(args) -> int:
    from .pointcloud import preprocess, read_cloud, write_cloud
    from .seeds import derive_seed

    t0 = time.time()
    src = Path(getattr(args, "in"))
    out = Path(args.out)
    n = 0
    for path in sorted(src.rglob("*.pcb")):
        cloud = read_cloud(path)
        seed = derive_seed(args.seed, cloud.farm_id, cloud.cow_id,
                           cloud.frame_id, "standardize")
        done = preprocess(cloud, seed=seed)
        dest = out / path.relative_to(src)
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_cloud(dest, done)
        n += 1
    if not args.quiet:
        print(f"preprocessed {n} clouds -> {out}")
    write_run_manifest(out, "preprocess", str(src), [], args.seed,
                       {"total": time.time() - t0})
    return 0


def cmd_synth(args) -> int:
    from .synthfarm import generate_farm, read_farm_profile

    t0 = time.time()
    profile = read_farm_profile(args.profile)
    manifest = generate_farm(profile, args.seed, args.out)
    if not args.quiet:
        print(f"generated farm {profile.farm_id!r}: {len(manifest.records)} cows, "
              f"{manifest.n_frames} frames -> {args.out}")
    write_run_manifest(Path(args.out), "synth", str(args.profile),
                       [Path(args.profile)], args.seed, {"total": time.time() - t0})
    return 0


def cmd_experiment(args) -> int:
    from .evaluation import results_table, summary_console
    from .experiments import load_plan, run_design, write_results

    t0 = time.time()
    plan = load_plan(args.plan)
    base = Path(args.plan).parent
    results = run_design(plan, base_dir=base, workers=args.workers)
    t_run = time.time() - t0
    paths = write_results(results, args.out)
    if not args.quiet:
        print(summary_console(results_table(results)), end="")
        print(f"results -> {paths['results']}")
    inputs = [Path(args.plan)]
    for rel in list(plan.manifests.values()) + list(plan.cameras.values()):
        inputs.append(base / rel)
    write_run_manifest(Path(args.out), "experiment", str(args.plan), inputs,
                       plan.master_seed, {"run": t_run, "total": time.time() - t0})
    return 0


def cmd_report(args) -> int:
    from .evaluation import results_table, summary_console, summary_csv

    class Row:
        def __init__(self, design, scenario, model, r2, mape):
            self.design, self.scenario, self.model = design, scenario, model
            self.r2, self.mape = float(r2), float(mape)

    lines = Path(args.results).read_text(encoding="utf-8").splitlines()
    header = "design,scenario,model,repeat,params,unfreeze,r2,mape"
    if not lines or lines[0] != header:
        raise ValueError(f"unrecognized results file (expected header {header!r})")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        rows.append(Row(parts[0], parts[1], parts[2], parts[-2], parts[-1]))
    table = results_table(rows)
    print(summary_console(table), end="")
    if args.out:
        Path(args.out).write_text(summary_csv(table), encoding="utf-8")
        if not args.quiet:
            print(f"summary -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="herdweight",
        description="Body-weight regression from top-view depth frames.")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="depth CSVs -> raw point-cloud binaries")
    p.add_argument("--manifest", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("preprocess", help="clean + normalize + standardize clouds")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("synth", help="generate a synthetic farm")
    p.add_argument("--profile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("experiment", help="run an experiment plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("report", help="summarize a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    from .errors import HerdweightError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (HerdweightError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
