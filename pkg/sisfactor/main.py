# sisfactor/main.py
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from .commands import COMMANDS
from .errors import ConfigError, SisError
from .metrics import SamplerMetrics
from .models import RunConfig
from .settings import Settings, get_settings
from .utils import err

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INTERNAL, EXIT_ERROR = 0, 1, 2


def configure_logging(level: str = "INFO") -> None:
    root = logging.getLogger("sisfactor")
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)
    root.setLevel(level)


def create_parser() -> argparse.ArgumentParser:
    """Factory for the CLI parser; tests call it directly."""
    parser = argparse.ArgumentParser(prog="sisfactor", description="Structured increasing shrinkage factor models")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="RunConfig JSON document")
    parser.add_argument("--seed", type=int, help="overrides every seed in the config")
    parser.add_argument("--threads", type=int, help="worker processes for simulate")
    parser.add_argument("--output", type=Path, help="artifact directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. chain.n_iterations=2000 (repeatable)")
    return parser


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: Dict[str, Any], assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError("override must look like key=value", {"override": assignment})
    key, value = assignment.split("=", 1)
    parts = [k for k in key.strip().split(".") if k]
    if not parts:
        raise ConfigError("override has an empty key", {"override": assignment})
    node = raw
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError("override path crosses a non-object value", {"override": assignment, "at": part})
        node = child
    node[parts[-1]] = _parse_value(value)


def load_run_config(command: str, config_path: Optional[Path] = None, overrides: Optional[List[str]] = None,
                    seed: Optional[int] = None, threads: Optional[int] = None,
                    output: Optional[Path] = None) -> RunConfig:
    raw: Dict[str, Any] = {}
    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError("config file not found", {"path": str(config_path)}) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config file is not valid JSON", {"path": str(config_path), "reason": str(exc)}) from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object", {"path": str(config_path)})
    for assignment in overrides or []:
        apply_override(raw, assignment)
    raw["command"] = command
    if seed is not None:
        raw["seed"] = seed
    if threads is not None:
        raw["threads"] = threads
    if output is not None:
        raw.setdefault("paths", {})["output"] = str(output)
    return RunConfig.model_validate(raw)


def output_dir(config: RunConfig, settings: Settings) -> Path:
    return Path(config.paths.output or settings.output_dir)


def run_command(config: RunConfig, settings: Optional[Settings] = None) -> int:
    """Run one subcommand; errors become an envelope on stderr and a nonzero status."""
    settings = settings or get_settings()
    try:
        out = output_dir(config, settings)
        out.mkdir(parents=True, exist_ok=True)
        metrics = SamplerMetrics() if settings.enable_metrics else None
        artifacts = COMMANDS[config.command].run(config, out, settings, metrics)
        if metrics is not None:
            metrics.write(out / "metrics.prom")
        for name, path in sorted(artifacts.items()):
            logger.info("wrote %s: %s", name, path)
        return EXIT_OK
    except SisError as exc:
        return _fail(exc.envelope(), EXIT_ERROR)
    except ValidationError as exc:
        return _fail(err("CONFIG_ERROR", "invalid configuration", {"errors": exc.errors()}), EXIT_ERROR)
    except Exception as exc:
        logger.exception("unexpected failure")
        return _fail(err("INTERNAL_ERROR", str(exc) or type(exc).__name__), EXIT_INTERNAL)


def _fail(envelope: Dict[str, Any], status: int) -> int:
    print(json.dumps(envelope, sort_keys=True, default=str), file=sys.stderr)
    return status


def main(argv: Optional[List[str]] = None) -> int:
    settings = get_settings()
    configure_logging(settings.log_level)
    args = create_parser().parse_args(argv)
    try:
        config = load_run_config(args.command, args.config, args.overrides, args.seed, args.threads, args.output)
    except SisError as exc:
        return _fail(exc.envelope(), EXIT_ERROR)
    except ValidationError as exc:
        return _fail(err("CONFIG_ERROR", "invalid configuration", {"errors": exc.errors()}), EXIT_ERROR)
    return run_command(config, settings)


if __name__ == "__main__":
    sys.exit(main())
