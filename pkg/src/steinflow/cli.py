"""Command-line entry point: ``steinflow <experiment> [options]``.

Config files are plain ``key = value`` lines (``#`` starts a comment). The
effective configuration is built from four layers, later layers winning:

1. :class:`~steinflow.trainer.RunConfig` defaults (M=100, k=50, batch 64, lr 2e-4),
2. the experiment's desk-scale preset, unless the file sets ``preset = none``,
3. the config file,
4. command-line flags.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for an
invalid configuration or experiment tag, 3 for a numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .experiments import PRESETS, RUNNERS
from .trainer import RunConfig, save_checkpoint

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
PRESET_CHOICES = ("desk", "none")
_FIELDS = {f.name: f for f in fields(RunConfig)}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    tag: str
    config: RunConfig
    out_dir: str
    preset: str = "desk"

    def echo(self) -> str:
        """Config text that re-parses to this exact spec."""
        lines = ["# steinflow run configuration", f"experiment = {self.tag}",
                 f"preset = {self.preset}", f"out = {self.out_dir}"]
        for name in _FIELDS:
            lines.append(f"{name} = {_format_value(getattr(self.config, name))}")
        return "\n".join(lines) + "\n"


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(key, raw, where):
    field = _FIELDS[key]
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}key '{key}': expected {kind}, got {raw!r}") from None


def read_config_text(text, source="<config>"):
    """Parse ``key = value`` text into a dict of raw strings, with line diagnostics."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _FIELDS and key not in ("experiment", "preset", "out"):
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        values[key] = (raw, f"{source}:{lineno}: ")
    return values


def parse_config(tag=None, path=None, flags=None, text=None) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from an optional file (or ``text``) and flag overrides.

    ``flags`` maps RunConfig field names (plus ``out``) to already-typed values;
    ``None`` entries are ignored.
    """
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text is not None:
        raw = read_config_text(text, str(path or "<config>"))
    file_tag = raw.pop("experiment", (None, ""))[0]
    tag = tag or file_tag
    if tag not in RUNNERS:
        raise ConfigError(f"unknown experiment '{tag}' (choose from {', '.join(RUNNERS)})")
    if file_tag is not None and file_tag != tag:
        raise ConfigError(f"config is for experiment '{file_tag}', not '{tag}'")
    preset = raw.pop("preset", ("desk", ""))[0]
    if preset not in PRESET_CHOICES:
        raise ConfigError(f"key 'preset': expected one of {PRESET_CHOICES}, got {preset!r}")
    out = flags.pop("out", None) or raw.pop("out", (None, ""))[0] or os.path.join("runs", tag)
    raw.pop("out", None)
    values = dict(PRESETS[tag]) if preset == "desk" else {}
    values.update({k: _convert(k, v, where) for k, (v, where) in raw.items()})
    for k, v in flags.items():
        if k not in _FIELDS:
            raise ConfigError(f"unknown option '{k}'")
        values[k] = v
    try:
        cfg = RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return ExperimentSpec(tag, cfg, str(out), preset)


def _fmt(v):
    return format(float(v), ".17g")


def write_outputs(spec: ExperimentSpec, result):
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(spec.echo())
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "minibatch", "metric_name", "value", "seed"])
        for epoch, mb, name, value in result.history:
            w.writerow([epoch, mb, name, _fmt(value), spec.config.seed])
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["datum_id", "sample_id", "dim", "value"])
        for n, j, d, v in result.samples:
            w.writerow([n, j, d, _fmt(v)])
    summary = {
        "experiment": spec.tag,
        "seed": spec.config.seed,
        "passed": result.passed,
        "checks": [{"name": c.name, "passed": bool(c.passed), "detail": c.detail} for c in result.checks],
        "metrics": result.summary,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if result.state is not None:
        save_checkpoint(out / "checkpoint.npz", result.state)


def run(spec: ExperimentSpec, log=None) -> int:
    """Run one experiment, write its artefacts and return the exit code."""
    log = log or (lambda msg: print(msg, file=sys.stderr))
    threads = os.environ.get("STEINFLOW_THREADS")
    limiter = None
    if threads:
        try:
            n_threads = int(threads)
        except ValueError:
            log(f"STEINFLOW_THREADS must be an integer, got {threads!r}")
            return EXIT_CONFIG
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=n_threads)
    try:
        result = RUNNERS[spec.tag](spec.config, log=log)
    except FloatingPointError as exc:
        log(f"numerical failure in {type(exc).__module__}.{type(exc).__name__}: {exc}")
        return EXIT_NUMERIC
    finally:
        if limiter is not None:
            limiter.unregister()
    write_outputs(spec, result)
    failed = [c for c in result.checks if not c.passed]
    for c in failed:
        log(f"FAIL {c.name}: {c.detail}")
    print(f"{spec.tag}: {len(result.checks) - len(failed)}/{len(result.checks)} checks passed; "
          f"outputs in {spec.out_dir}")
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    p = _Parser(prog="steinflow", description="Stein variational training of VAEs on desk-scale problems.")
    p.add_argument("experiment", help=f"one of: {', '.join(RUNNERS)}")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--particles", type=int, help="M, codes per datum and decoder particles")
    p.add_argument("--iw-samples", type=int, dest="iw_samples", help="k, importance-weighted groups")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", help="output directory (default runs/<experiment>)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: getattr(args, k) for k in ("seed", "particles", "iw_samples", "epochs", "batch", "lr", "out")}
    try:
        spec = parse_config(args.experiment, args.config, flags)
    except ConfigError as exc:
        print(f"steinflow: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(spec)


if __name__ == "__main__":
    raise SystemExit(main())
