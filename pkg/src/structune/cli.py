"""Command-line surface.

Subcommands: build, render, validate, score, eval, robustness, inspect.
Data goes to stdout, diagnostics to stderr.  Exit codes: 0 success,
1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, parsing, taskio
from .builder import BuildConfig, build_example
from .core import TaskInstance


def _print_json(payload) -> None:
    print(json.dumps(payload, ensure_ascii=False, indent=2))


def _load_taskset(args) -> tuple:
    spec = taskio.load_task_spec(args.spec)
    instances = taskio.load_instances(args.instances, spec)
    return spec, instances


def _config(args, mode: str) -> BuildConfig:
    return BuildConfig(
        mode=mode,
        include_label_space=not getattr(args, "no_label_space", False),
        include_control_info=not getattr(args, "no_control_info", False),
    )


def _pick_instance(instances, args) -> TaskInstance:
    if args.id is not None:
        for instance in instances:
            if instance.id == args.id:
                return instance
        raise SystemExit(f"no instance with id {args.id!r}")
    return instances[args.index]


def _backend(args):
    if getattr(args, "predictions", None):
        return harness.MockBackend(harness.load_transcript(args.predictions), default="")
    if getattr(args, "openai_model", None):
        return harness.OpenAIBackend(args.endpoint, args.openai_model)
    if getattr(args, "endpoint", None):
        return harness.HttpBackend(args.endpoint)
    raise SystemExit("either --endpoint or --predictions is required")


def _eval_kwargs(args) -> dict:
    kwargs = {
        "max_examples": args.max_examples,
        "length_budget": args.length_budget,
        "concurrency": args.concurrency,
        "max_new_tokens": args.max_new_tokens,
        "seed": args.seed,
    }
    if getattr(args, "checkpoint", None):
        kwargs["checkpoint_path"] = args.checkpoint
    if getattr(args, "sqlite", None):
        import sqlite3

        from .metrics import make_sqlite_executor

        kwargs["executor"] = make_sqlite_executor(sqlite3.connect(args.sqlite))
    return kwargs


def cmd_inspect(args) -> int:
    spec = taskio.load_task_spec(args.spec)
    summary = {
        "name": spec.name,
        "input_elements": list(spec.input_elements),
        "output_elements": list(spec.output_elements),
        "prompts": len(spec.prompts),
        "label_space": (
            {"key": spec.label_space.key, "labels": list(spec.label_space.labels)}
            if spec.label_space
            else None
        ),
        "control_kinds": {name: schema.kind for name, schema in spec.control.items()},
    }
    if args.instances:
        summary["instances"] = len(taskio.load_instances(args.instances, spec))
    _print_json(summary)
    return 0


def cmd_render(args) -> int:
    _, instances = _load_taskset(args)
    instance = _pick_instance(instances, args)
    if args.prompt_index is not None:
        instance = replace(instance, prompt_index=args.prompt_index)
    modes = ("json", "text") if args.mode == "both" else (args.mode,)
    for mode in modes:
        example = build_example(instance, _config(args, mode))
        sys.stdout.write(example.input_repr + "\n")
        sys.stdout.write(example.output_repr + "\n")
    return 0


def cmd_build(args) -> int:
    manifest = taskio.DatasetManifest.load(args.manifest)
    base_dir = args.base_dir if args.base_dir else Path(args.manifest).parent
    count = taskio.build_dataset(manifest, base_dir, args.out_json, args.out_text)
    print(f"wrote {count} examples to {args.out_json} and {args.out_text}",
          file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    spec = taskio.load_task_spec(args.spec)
    transcript = harness.load_transcript(args.completions)
    outcomes = []
    violations = {}
    for example_id, raw in transcript.items():
        outcome = parsing.parse_model_output(raw)
        outcomes.append(outcome)
        if outcome.node is None:
            violations[example_id] = [["", "unparseable"]]
            continue
        report = parsing.validate(outcome.node, spec.control)
        if not report.valid:
            violations[example_id] = [list(v) for v in report.violations]
    _print_json({
        "n": len(outcomes),
        "invalid_rate": parsing.invalid_rate(outcomes),
        "recovered_rate": parsing.recovered_rate(outcomes),
        "n_structure_violations": len(violations),
        "violations": violations,
    })
    return 0


def _run_eval(args) -> int:
    _, instances = _load_taskset(args)
    report = harness.evaluate(
        instances, _config(args, args.mode), _backend(args), args.metric,
        **_eval_kwargs(args),
    )
    _print_json(report.to_json())
    if args.report:
        report.save(args.report)
    return 0


def cmd_score(args) -> int:
    return _run_eval(args)


def cmd_eval(args) -> int:
    return _run_eval(args)


def cmd_robustness(args) -> int:
    spec, instances = _load_taskset(args)
    config = _config(args, args.mode)
    backend = _backend(args)
    kwargs = _eval_kwargs(args)
    if args.swap_labels:
        new_labels = args.swap_labels.split(",")
        remapped = harness.substitute_label_space(instances, new_labels)
        before = harness.evaluate(instances, config, backend, args.metric, **kwargs)
        after_backend = backend
        if args.echo_gold:
            after_backend = harness.echo_gold_backend(remapped, config)
        after = harness.evaluate(remapped, config, after_backend, args.metric, **kwargs)
        payload = {
            "labels": new_labels,
            "before": before.to_json(),
            "after": after.to_json(),
        }
    else:
        result = harness.run_prompt_suite(
            instances, spec.prompts, config, backend, args.metric, **kwargs
        )
        payload = result.to_json()
    _print_json(payload)
    if args.report:
        Path(args.report).write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    return 0


def _add_eval_options(parser, with_endpoint=True) -> None:
    parser.add_argument("--instances", required=True, help="instance records (JSONL)")
    parser.add_argument("--mode", choices=("json", "text"), default="json")
    parser.add_argument("--metric", choices=harness.METRICS, default="accuracy")
    parser.add_argument("--no-label-space", action="store_true")
    parser.add_argument("--no-control-info", action="store_true")
    parser.add_argument("--max-examples", type=int, default=500)
    parser.add_argument("--length-budget", type=int, default=2048)
    parser.add_argument("--concurrency", type=int, default=4)
    parser.add_argument("--max-new-tokens", type=int, default=512)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sqlite", help="sqlite database file for execution accuracy")
    parser.add_argument("--report", help="write the report JSON here as well")
    if with_endpoint:
        parser.add_argument("--endpoint", help="completion endpoint URL")
        parser.add_argument("--openai-model",
                            help="treat the endpoint as OpenAI-compatible for this model")
        parser.add_argument("--predictions", help="mock transcript JSONL instead of a live endpoint")
        parser.add_argument("--checkpoint", help="partial-report JSONL on transport failure")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structune",
        description="Structure-to-structure instruction tuning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="lint a task spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--instances")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("render", help="render one instance to stdout")
    p.add_argument("--spec", required=True)
    p.add_argument("--instances", required=True)
    p.add_argument("--id", help="instance id (default: use --index)")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--mode", choices=("json", "text", "both"), default="both")
    p.add_argument("--prompt-index", type=int)
    p.add_argument("--no-label-space", action="store_true")
    p.add_argument("--no-control-info", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("build", help="emit json+text datasets from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-json", required=True)
    p.add_argument("--out-text", required=True)
    p.add_argument("--base-dir")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("validate", help="check raw completions against a spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--completions", required=True, help="JSONL of {id, text}")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("score", help="score a predictions transcript offline")
    p.add_argument("--spec", required=True)
    _add_eval_options(p, with_endpoint=False)
    p.add_argument("--predictions", required=True, help="transcript JSONL of {id, text}")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="run a live evaluation")
    p.add_argument("--spec", required=True)
    _add_eval_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="prompt suite or label substitution")
    p.add_argument("--spec", required=True)
    _add_eval_options(p)
    p.add_argument("--swap-labels", help="comma-joined replacement label list")
    p.add_argument("--echo-gold", action="store_true",
                   help="score the remapped taskset against its own gold")
    p.set_defaults(func=cmd_robustness)

    return parser


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except SystemExit as exc:
        if exc.code and not isinstance(exc.code, int):
            print(exc.code, file=sys.stderr)
            return 1
        return exc.code or 0
    except (taskio.SpecError, taskio.MalformedLine, harness.TransportError,
            harness.ArityMismatch, harness.MissingLabelSpace, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())
