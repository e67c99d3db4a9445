# expnote_cli.py

import sys
import logging
import argparse
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from expnote.agent import VariantConfig, build_report, run_experiment, run_test_pass, run_train_pass
from expnote.config import VALID_BACKENDS, VALID_LOG_LEVELS, VALID_VARIANTS, ExperimentConfig
from expnote.datasets import gen_lets, lets_tasks, load_tasks, load_vocabulary, split, write_tasks
from expnote.evaluation import (
    DATASETS,
    REFERENCE_VARIANT_RESULTS,
    RunReport,
    bucket_rows,
    curve_rows,
    efficiency_rows,
    efficiency_table,
    improvement_analysis,
    load_variant_table,
    render_aligned,
    report_rows,
    training_curve,
    variant_table_rows,
    write_delimited,
)
from expnote.exceptions import (
    BackendError,
    ConfigurationError,
    DatasetError,
    EvaluationError,
    FileOperationError,
    FormatError,
    ProtocolError,
)
from expnote.history import RunManifest, TrajectoryLog
from expnote.llm_backends import LLMBackend, create_backend
from expnote.memory import MemoryStore
from expnote.protocol import BUNDLE_FILES, PromptBundle, discover_bundles, load_bundle

logger = logging.getLogger("expnote.cli")

EXIT_OK = 0
EXIT_BACKEND = 1
EXIT_USAGE = 2
EXIT_FORMAT = 3

PROMPTS_DIR = Path(__file__).resolve().parent / "prompts"
LOG_FILE = "expnote.log"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_installed_handlers: List[logging.Handler] = []


# --- Logging ---

def setup_logging(level: str = "INFO", log_dir: Optional[Path] = None, enabled: bool = True):
    """Route all expnote loggers to stderr and, when given, <log_dir>/expnote.log."""
    teardown_logging()
    root = logging.getLogger()
    if not enabled:
        handler: logging.Handler = logging.NullHandler()
        root.addHandler(handler)
        _installed_handlers.append(handler)
        return

    root.setLevel(level.upper())
    formatter = logging.Formatter(LOG_FORMAT)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(formatter)
    root.addHandler(stream_handler)
    _installed_handlers.append(stream_handler)

    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_dir / LOG_FILE, mode='w', encoding='utf-8')
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)
        _installed_handlers.append(file_handler)


def teardown_logging():
    root = logging.getLogger()
    while _installed_handlers:
        handler = _installed_handlers.pop()
        root.removeHandler(handler)
        handler.close()


# --- Argument parsing ---

def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"cannot be negative, got {value}")
    return value


def _run_options() -> argparse.ArgumentParser:
    """Flags shared by every subcommand that talks to a backend. Unset flags keep config file values."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON configuration file")
    parent.add_argument("--variant", choices=VALID_VARIANTS, help="ExpNote variant (default: full)")
    parent.add_argument("--k", type=positive_int, help="experiences recalled per test question (default: 3)")
    parent.add_argument("--n-train", dest="n_train", type=non_negative_int,
                        help="THINK/NOTE budget per training case (default: 4)")
    parent.add_argument("--max-turns", dest="max_turns", type=positive_int, help="turn budget per test case")
    parent.add_argument("--seed", type=int, help="seed recorded in the manifest")
    parent.add_argument("--backend", choices=VALID_BACKENDS, help="completion backend")
    parent.add_argument("--script", dest="script_path", help="scripted backend reply file")
    parent.add_argument("--cassette", dest="cassette_path", help="cassette to replay (or record, for live runs)")
    parent.add_argument("--base-url", dest="base_url", help="chat-completion endpoint base URL")
    parent.add_argument("--model", dest="model_name", help="model name sent to the live backend")
    bundle_choice = parent.add_mutually_exclusive_group()
    bundle_choice.add_argument("--bundle", dest="bundle_dir", help="prompt bundle directory")
    bundle_choice.add_argument("--task", help="name of a bundle shipped under prompts/ (lets, clutrr, mets, emoji)")
    parent.add_argument("--memory", dest="memory_path", help="experience memory file")
    parent.add_argument("--out", dest="out_dir", help="output directory")
    parent.add_argument("--log-level", dest="log_level", choices=VALID_LOG_LEVELS)
    parent.add_argument("--save-config", dest="save_config",
                        help="write the effective configuration (without the credential) to this file")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expnote",
        description="Train and evaluate LLM agents with an experience notebook.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    run_options = _run_options()

    gen = subparsers.add_parser("gen-data", help="generate a LETS task file")
    gen.add_argument("--count", type=positive_int, required=True, help="number of instances")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="task file to write")
    gen.add_argument("--vocab", help="vocabulary file (default: bundled 100 words)")
    gen.set_defaults(handler=cmd_gen_data)

    splitter = subparsers.add_parser("split", help="split a task file into train and test files")
    splitter.add_argument("--tasks", required=True, help="task file to split")
    splitter.add_argument("--train-ratio", dest="train_ratio", type=float, default=0.5)
    splitter.add_argument("--seed", type=int, default=0)
    splitter.add_argument("--out", required=True, help="directory for train.jsonl and test.jsonl")
    splitter.set_defaults(handler=cmd_split)

    train = subparsers.add_parser("train", parents=[run_options], help="training pass: answer, reflect, note")
    train.add_argument("--train", dest="train_path", help="training task file")
    train.set_defaults(handler=cmd_train)

    test = subparsers.add_parser("test", parents=[run_options], help="testing pass with automatic recall")
    test.add_argument("--test", dest="test_path", help="test task file")
    test.add_argument("--max-workers", dest="max_workers", type=positive_int, default=1,
                      help="concurrent test episodes, capped by max_in_flight")
    test.set_defaults(handler=cmd_test)

    curve = subparsers.add_parser("curve", parents=[run_options], help="accuracy as training samples accumulate")
    curve.add_argument("--train", dest="train_path", help="training task file")
    curve.add_argument("--test", dest="test_path", help="test task file")
    curve.add_argument("--checkpoint-every", dest="checkpoint_every", type=positive_int,
                       help="evaluate after every m training samples")
    curve.add_argument("--max-workers", dest="max_workers", type=positive_int, default=1)
    curve.set_defaults(handler=cmd_curve)

    evaluate = subparsers.add_parser("eval", help="improvement analysis of two run reports")
    evaluate.add_argument("--base", required=True, help="report of the run without experiences")
    evaluate.add_argument("--treated", required=True, help="report of the run with experiences")
    evaluate.add_argument("--label", default="run", help="row label in the bucket table")
    evaluate.add_argument("--out", required=True, help="output directory")
    evaluate.set_defaults(handler=cmd_eval)

    eff = subparsers.add_parser("efficiency", help="accuracy lift per stored experience")
    eff.add_argument("--variants", help="CSV with columns dataset, variant, accuracy, count "
                                        "(default: the reference results)")
    eff.add_argument("--out", help="output directory")
    eff.set_defaults(handler=cmd_efficiency)

    return parser


# --- Shared plumbing ---

def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the config file, then the credential from the environment, then flags."""
    config = ExperimentConfig.load(getattr(args, 'config', None))
    overrides = {name: getattr(args, name, None) for name in (
        'variant', 'k', 'n_train', 'max_turns', 'seed', 'backend', 'script_path', 'cassette_path',
        'base_url', 'model_name', 'bundle_dir', 'memory_path', 'out_dir', 'log_level',
        'train_path', 'test_path', 'checkpoint_every',
    )}
    if getattr(args, 'task', None):
        overrides['bundle_dir'] = task_bundle_dir(args.task)
    config = config.with_overrides(**overrides)
    is_valid, message = config.validate()
    if not is_valid:
        raise ConfigurationError(message)
    if getattr(args, 'save_config', None):
        config.save(args.save_config)
    return config


def task_bundle_dir(task: str, prompts_dir: Path = PROMPTS_DIR) -> str:
    """Directory of a shipped prompt bundle, by task name."""
    bundles = discover_bundles(str(prompts_dir))
    if task not in bundles:
        available = ", ".join(sorted(bundles)) or "none"
        raise ConfigurationError(f"Unknown task '{task}'. Available prompt bundles: {available}")
    return str(prompts_dir / task)


def require_inputs(**paths: str):
    """Every referenced input must exist before any work starts."""
    for name, path in paths.items():
        if not path:
            raise ConfigurationError(f"Missing required input: {name}")
        if not Path(path).exists():
            raise ConfigurationError(f"Input {name} not found: {path}")


def variant_config(config: ExperimentConfig) -> VariantConfig:
    return VariantConfig(
        variant=config.variant,
        k=config.k,
        n_train=config.n_train,
        max_turns=config.max_turns,
        max_format_retries=config.max_format_retries,
        model_name=config.model_name,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
    )


def open_backend(config: ExperimentConfig, out_dir: Path) -> Tuple[LLMBackend, ExperimentConfig]:
    """Live runs record a cassette under the output directory unless one is named."""
    if config.backend == "live":
        if not config.api_key:
            logger.warning("EXPNOTE_API_KEY is not set; sending unauthenticated requests.")
        if config.record_cassette and not config.cassette_path:
            config = config.with_overrides(cassette_path=str(out_dir / "cassette.jsonl"))
    else:
        replay = config.script_path if config.backend == "scripted" else config.cassette_path
        require_inputs(**{config.backend: replay})
    return create_backend(config), config


def episode_workers(max_workers: int, config: ExperimentConfig) -> int:
    """Concurrent test episodes, capped by max_in_flight. Scripted replies depend on call order, so they run serially."""
    if config.backend == "scripted" and max_workers > 1:
        logger.warning("The scripted backend answers in call order; running test episodes on one worker.")
        return 1
    return min(max_workers, config.max_in_flight)


def start_run(config: ExperimentConfig) -> Path:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(config.log_level, out_dir, config.enable_logging)
    logger.info(f"Output directory: {out_dir}")
    return out_dir


def prepare_bundle(config: ExperimentConfig) -> PromptBundle:
    require_inputs(bundle=config.bundle_dir)
    return load_bundle(config.bundle_dir)


def record_common_inputs(manifest: RunManifest, config: ExperimentConfig):
    for filename in BUNDLE_FILES.values():
        manifest.add_input(f"bundle/{filename}", str(Path(config.bundle_dir) / filename))
    if config.backend == "scripted":
        manifest.add_input("script", config.script_path)
    elif config.backend == "cassette":
        manifest.add_input("cassette", config.cassette_path)


def fresh_memory(path: Path) -> MemoryStore:
    """Start an empty store at path that autosaves every accepted note."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("", encoding='utf-8')
    except OSError as e:
        raise FileOperationError(f"Failed to create memory file {path}: {e}") from e
    return MemoryStore.open(str(path))


# --- Subcommands ---

def cmd_gen_data(args: argparse.Namespace) -> int:
    setup_logging()
    if args.vocab:
        require_inputs(vocab=args.vocab)
        vocab = load_vocabulary(args.vocab)
    else:
        vocab = load_vocabulary()
    instances = gen_lets(args.count, args.seed, vocab)
    write_tasks(args.out, lets_tasks(instances))
    print(f"Wrote {len(instances)} LETS tasks to {args.out}")
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    require_inputs(tasks=args.tasks)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(log_dir=out_dir)
    if not (0 < args.train_ratio < 1):
        raise ConfigurationError("--train-ratio must lie strictly between 0 and 1.")

    train_set, test_set = split(load_tasks(args.tasks), args.train_ratio, args.seed)
    write_tasks(str(out_dir / "train.jsonl"), train_set)
    write_tasks(str(out_dir / "test.jsonl"), test_set)

    manifest = RunManifest("split", {'train_ratio': args.train_ratio}, args.seed)
    manifest.add_input("tasks", args.tasks)
    manifest.add_output("train.jsonl", str(out_dir / "train.jsonl"))
    manifest.add_output("test.jsonl", str(out_dir / "test.jsonl"))
    manifest.save(str(out_dir))
    print(f"Split {len(train_set) + len(test_set)} tasks into {len(train_set)} train / {len(test_set)} test")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out_dir = start_run(config)
    require_inputs(train=config.train_path)
    bundle = prepare_bundle(config)
    train_set = load_tasks(config.train_path)

    memory_path = Path(config.memory_path) if config.memory_path else out_dir / "memory.jsonl"
    trajectory_log = TrajectoryLog(str(out_dir / "train_trajectories.jsonl"))
    trajectory_log.reset()

    backend, config = open_backend(config, out_dir)
    try:
        memory = fresh_memory(memory_path)
        run_train_pass(train_set, memory, backend, bundle, variant_config(config), on_trajectory=trajectory_log)
    finally:
        backend.close()

    counts = memory.count_by_polarity()
    manifest = RunManifest("train", config.to_dict(), config.seed)
    manifest.add_input("train", config.train_path)
    record_common_inputs(manifest, config)
    manifest.add_output("memory", str(memory_path))
    manifest.add_output("train_trajectories", trajectory_log.path.as_posix())
    manifest.save(str(out_dir))

    print(f"Trained on {len(train_set)} cases: {memory.store_count()} experiences "
          f"({counts['positive']} positive, {counts['negative']} negative) in {memory_path}")
    return EXIT_OK


def cmd_test(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out_dir = start_run(config)
    require_inputs(test=config.test_path)
    bundle = prepare_bundle(config)
    test_set = load_tasks(config.test_path)
    settings = variant_config(config)

    memory: Optional[MemoryStore] = None
    memory_path = Path(config.memory_path) if config.memory_path else out_dir / "memory.jsonl"
    if settings.retrieval_enabled:
        require_inputs(memory=str(memory_path))
        memory = MemoryStore.load(str(memory_path))
    else:
        logger.info("Retrieval disabled; the memory is not opened.")

    trajectory_log = TrajectoryLog(str(out_dir / "test_trajectories.jsonl"))
    trajectory_log.reset()

    backend, config = open_backend(config, out_dir)
    workers = episode_workers(args.max_workers, config)
    try:
        trajectories = run_test_pass(test_set, memory, backend, bundle, settings,
                                     max_workers=workers, on_trajectory=trajectory_log)
    finally:
        backend.close()

    report = build_report(settings, trajectories, memory)
    report_path = out_dir / "report.json"
    report.save(str(report_path))
    header, rows = report_rows([report])
    table = render_aligned(header, rows)
    _write_text(out_dir / "report.txt", table)

    manifest = RunManifest("test", config.to_dict(), config.seed)
    manifest.add_input("test", config.test_path)
    if memory is not None:
        manifest.add_input("memory", str(memory_path))
    record_common_inputs(manifest, config)
    manifest.add_output("report", str(report_path))
    manifest.add_output("test_trajectories", trajectory_log.path.as_posix())
    manifest.save(str(out_dir))

    print(table, end="")
    return EXIT_OK


def cmd_curve(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if config.checkpoint_every < 1:
        raise ConfigurationError("The curve needs --checkpoint-every of at least 1.")
    out_dir = start_run(config)
    require_inputs(train=config.train_path, test=config.test_path)
    bundle = prepare_bundle(config)
    train_set = load_tasks(config.train_path)
    test_set = load_tasks(config.test_path)
    settings = variant_config(config)

    memory_path = Path(config.memory_path) if config.memory_path else out_dir / "memory.jsonl"
    trajectory_log = TrajectoryLog(str(out_dir / "trajectories.jsonl"))
    trajectory_log.reset()

    backend, config = open_backend(config, out_dir)
    workers = episode_workers(args.max_workers, config)
    try:
        memory = fresh_memory(memory_path)
        result = run_experiment(train_set, test_set, settings, backend, bundle, memory=memory,
                                on_trajectory=trajectory_log, checkpoint_every=config.checkpoint_every,
                                max_workers=workers)
    finally:
        backend.close()

    points = training_curve(result.curve)
    header, rows = curve_rows(points)
    write_delimited(str(out_dir / "curve.csv"), header, rows)
    table = render_aligned(header, rows)
    _write_text(out_dir / "curve.txt", table)
    result.report.save(str(out_dir / "report.json"))

    manifest = RunManifest("curve", config.to_dict(), config.seed)
    manifest.add_input("train", config.train_path)
    manifest.add_input("test", config.test_path)
    record_common_inputs(manifest, config)
    for name in ("curve.csv", "report.json", "trajectories.jsonl"):
        manifest.add_output(name, str(out_dir / name))
    manifest.add_output("memory", str(memory_path))
    manifest.save(str(out_dir))

    print(table, end="")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    require_inputs(base=args.base, treated=args.treated)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(log_dir=out_dir)

    base = RunReport.load(args.base)
    treated = RunReport.load(args.treated)
    buckets = improvement_analysis(base, treated)

    header, rows = bucket_rows(args.label, buckets)
    write_delimited(str(out_dir / "buckets.csv"), header, rows)
    bucket_table = render_aligned(header, rows)
    header, rows = report_rows([base, treated])
    write_delimited(str(out_dir / "variants.csv"), header, rows)
    variant_table = render_aligned(header, rows)
    _write_text(out_dir / "analysis.txt", variant_table + "\n" + bucket_table)

    manifest = RunManifest("eval", {'label': args.label}, 0)
    manifest.add_input("base", args.base)
    manifest.add_input("treated", args.treated)
    for name in ("buckets.csv", "variants.csv", "analysis.txt"):
        manifest.add_output(name, str(out_dir / name))
    manifest.save(str(out_dir))

    print(variant_table + "\n" + bucket_table, end="")
    return EXIT_OK


def cmd_efficiency(args: argparse.Namespace) -> int:
    out_dir = Path(args.out) if args.out else None
    setup_logging(log_dir=out_dir)
    if args.variants:
        require_inputs(variants=args.variants)
        table = load_variant_table(args.variants)
    else:
        table = REFERENCE_VARIANT_RESULTS

    datasets = [d for d in DATASETS if d in table["disabled"]] or sorted(table["disabled"])
    types = [t for t in ("positive", "negative") if t in table]
    if not types:
        raise FormatError("The variants table has neither positive nor negative rows.")
    scores = efficiency_table(table, types)

    header, rows = variant_table_rows(table, datasets)
    variant_table = render_aligned(header, rows)
    header, rows = efficiency_rows(scores, datasets)
    efficiency_text = render_aligned(header, rows)

    if out_dir is not None:
        write_delimited(str(out_dir / "efficiency.csv"), header, rows)
        _write_text(out_dir / "efficiency.txt", variant_table + "\n" + efficiency_text)
        manifest = RunManifest("efficiency", {'types': types, 'datasets': datasets}, 0)
        manifest.add_input("variants", args.variants)
        manifest.add_output("efficiency.csv", str(out_dir / "efficiency.csv"))
        manifest.save(str(out_dir))

    print(variant_table + "\n" + efficiency_text, end="")
    return EXIT_OK


def _write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding='utf-8')
    except OSError as e:
        raise FileOperationError(f"Failed to write {path}: {e}") from e


# --- Entry point ---

EXIT_CODES: Dict[type, int] = {
    BackendError: EXIT_BACKEND,
    FileOperationError: EXIT_BACKEND,
    ConfigurationError: EXIT_USAGE,
    FormatError: EXIT_FORMAT,
    ProtocolError: EXIT_FORMAT,
    DatasetError: EXIT_FORMAT,
    EvaluationError: EXIT_FORMAT,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand. Argument errors exit with status 2 through argparse."""
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except tuple(EXIT_CODES) as e:
        code = next(c for cls, c in EXIT_CODES.items() if isinstance(e, cls))
        logger.error(f"{type(e).__name__}: {e}")
        print(f"expnote: {type(e).__name__}: {e}", file=sys.stderr)
        return code
    finally:
        teardown_logging()


if __name__ == "__main__":
    sys.exit(main())
