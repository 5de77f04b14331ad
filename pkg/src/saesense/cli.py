"""Command line entry point.

    saesense collect        --config run.toml   # activations, Gaussian, sparsity table
    saesense report-latents --config run.toml   # SAE code statistics
    saesense sensitivity    --config run.toml   # sweeps toward constructed targets
    saesense plateau        --config run.toml   # sweeps from constructed starts
    saesense analyze        --config run.toml [--curves curves.csv]

Every command accepts ``--set key=value`` (repeatable) to override config
keys. Exit status is 0 on success, otherwise the error category's code:
2 config, 3 data, 4 input, 5 numerical, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, SaeSenseError
from .harness import experiment as exp
from .harness.config import ExperimentConfig, load_config
from .harness.latents import latent_properties
from .tensorfile import write_tensors

log = logging.getLogger("saesense")


def _collect(cfg: ExperimentConfig, args) -> None:
    lab = exp.Lab.from_config(cfg)
    ids, acts = exp.sample_activations(lab, cfg, cfg.n_moment_samples, exp.STREAM_MOMENTS)
    moments = exp.compute_moments(lab, cfg, acts)
    out = Path(cfg.out_dir)
    exp.save_moments(moments, out)
    cache = Path(cfg.cache_dir or out / "cache") / f"moments-{exp._moments_key(lab, cfg)}"
    exp.save_moments(moments, cache)
    write_tensors(out / "activations.safetensors", {"activations": acts}, {"probe": cfg.probe})
    (out / "prompts.txt").write_text("\n".join(ids) + "\n")
    print(json.dumps(moments.summary(), indent=2, sort_keys=True))


def _report_latents(cfg: ExperimentConfig, args) -> None:
    lab = exp.Lab.from_config(cfg)
    if lab.sae is None:
        raise ConfigError("report-latents needs sae_path")
    _, acts = exp.sample_activations(lab, cfg, cfg.n_latent_report, exp.STREAM_MOMENTS + 2)
    report = latent_properties(lab.sae, list(acts))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "latents.json").write_text(report.to_json())
    print(json.dumps(report.summary(), indent=2, sort_keys=True))


def _print_tables(res) -> None:
    for t in res.tables.values():
        print(f"[{t.metric}]")
        print(f"  {'target_type':30s} {'n':>6s} {'cens':>5s} {'mean':>8s} {'std':>8s} {'ks':>6s}")
        for r in t.rows:
            f = lambda v, w, p: f"{v:{w}.{p}f}" if v is not None else " " * (w - 1) + "-"
            print(f"  {r.target_type:30s} {r.count:6d} {r.censored:5d} {f(r.mean, 8, 2)} "
                  f"{f(r.std, 8, 2)} {f(r.ks, 6, 3)}")


def _sensitivity(cfg, args):
    _print_tables(exp.run_sensitivity(cfg))


def _plateau(cfg, args):
    _print_tables(exp.run_plateau(cfg))


def _analyze(cfg, args):
    curves = args.curves or Path(cfg.out_dir) / "curves.csv"
    _print_tables(exp.analyze(cfg, curves))


COMMANDS = {
    "collect": (_collect, None),
    "report-latents": (_report_latents, None),
    "sensitivity": (_sensitivity, "sensitivity"),
    "plateau": (_plateau, "plateau"),
    "analyze": (_analyze, None),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saesense", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", type=Path, help="TOML config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--out", help="output directory (overrides out_dir)")
        sp.add_argument("--workers", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "analyze":
            sp.add_argument("--curves", type=Path, help="curves.csv to re-analyse")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, kind = COMMANDS[args.command]
    fixed = {}
    if kind:
        fixed["kind"] = kind
    if args.out:
        fixed["out_dir"] = args.out
    if args.workers:
        fixed["workers"] = args.workers
    try:
        cfg = load_config(args.config, args.overrides, **fixed)
        if args.command in ("sensitivity", "plateau"):
            cfg.validate()
        fn(cfg, args)
    except SaeSenseError as exc:
        print(f"saesense: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"saesense: data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
