"""Command-line entry point: generate, validate, stats, render, mrg."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from .pipeline import (OUTPUT_ROOT_ENV, ConfigError, PipelineConfig, config_from_manifest, generate_dataset,
                       reextract_mrg, rerender_scene, validate_dataset)
from .stats import summarize

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file supplying any PipelineConfig field")
    for f in fields(PipelineConfig):
        if f.name == "output_dir":
            continue
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            p.add_argument(flag, dest=f.name, default=None, metavar="BOOL")
        else:
            p.add_argument(flag, dest=f.name, default=None, metavar=type(f.default).__name__.upper())


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        cfg = PipelineConfig.from_file(args.config, cfg)
    overrides = {f.name: getattr(args, f.name) for f in fields(PipelineConfig)
                 if getattr(args, f.name, None) is not None}
    cfg = cfg.updated(overrides)
    if args.output is not None:
        cfg.output_dir = args.output
    elif not (args.config and "outputDir" in Path(args.config).read_text()):
        cfg.output_dir = os.environ.get(OUTPUT_ROOT_ENV, cfg.output_dir)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cluttergen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate a dataset")
    g.add_argument("-o", "--output", default=None, help=f"dataset directory (default ${OUTPUT_ROOT_ENV} or ./dataset)")
    _add_config_flags(g)

    v = sub.add_parser("validate", help="re-check every stored annotation")
    v.add_argument("dataset")
    v.add_argument("--grasp-sample", type=int, default=None, help="grasps checked per scene (default all)")
    v.add_argument("--json", action="store_true", help="print the report as JSON")

    s = sub.add_parser("stats", help="dataset statistics")
    s.add_argument("dataset")
    s.add_argument("-o", "--output", default=None, help="directory for summary files (default <dataset>/stats)")

    for name, helptext in (("render", "re-render one scene bundle"), ("mrg", "re-extract one scene's graph")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("scene", help="scene bundle directory")
        r.add_argument("--dataset", default=None, help="dataset root holding manifest.json (default: parent)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "generate":
            cfg = _config(args)
            out = generate_dataset(cfg)
            manifest = json.loads((out / "manifest.json").read_text())
            failed = [e for e in manifest["scenes"] if e["status"] != "ok"]
            print(f"wrote {len(manifest['scenes']) - len(failed)} scenes to {out} ({len(failed)} failed)")
            return EXIT_OK
        if args.command == "validate":
            if not Path(args.dataset).is_dir():
                raise ConfigError(f"{args.dataset} is not a directory")
            report = validate_dataset(args.dataset, grasp_sample=args.grasp_sample)
            if args.json:
                print(json.dumps({"scenesChecked": report.scenes_checked, "graspsChecked": report.grasps_checked,
                                  "violations": report.violations}, indent=1))
            else:
                for v in report.violations:
                    print(f"{v['scene']}: [{v['check']}] {v['message']}")
                print(f"{report.scenes_checked} scenes, {report.grasps_checked} grasps checked, "
                      f"{len(report.violations)} violations")
            return EXIT_OK if report.ok else EXIT_INVALID
        if args.command == "stats":
            if not Path(args.dataset).is_dir():
                raise ConfigError(f"{args.dataset} is not a directory")
            summary = summarize(args.dataset)
            out = Path(args.output) if args.output else Path(args.dataset) / "stats"
            summary.write(out)
            print(f"{summary.scene_count} scenes summarised into {out}")
            return EXIT_OK if not summary.errors else EXIT_INVALID
        scene = Path(args.scene)
        if not (scene / "scene.json").is_file():
            raise ConfigError(f"{scene} has no scene.json")
        cfg = config_from_manifest(Path(args.dataset) if args.dataset else scene.parent)
        if args.command == "render":
            rerender_scene(scene, cfg)
        else:
            rerender = reextract_mrg(scene, cfg)
            print(f"{sum(len(p) for p in rerender.parents.values())} parent links")
        return EXIT_OK
    except ConfigError as exc:
        print(f"cluttergen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"cluttergen: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
