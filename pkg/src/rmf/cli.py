"""rmf command line: ingest -> preprocess -> pairs -> verify-dpo -> evaluate
-> serve -> report.

Configuration precedence is CLI flag > RMF_* environment variable > rmf.toml
> built-in default.  Exit codes: 0 ok, 1 data error, 2 config error,
3 transport/provider error, 4 not found.
"""

from __future__ import annotations

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import click
import numpy as np

from . import dpo
from .catalog import load_tag_catalog
from .evaluation import MethodKind, accuracy, build_comparison_suite, gold_values, run_method
from .ingest import DataError, parse_dataset, validate_dataset
from .llm import ConfigError, MockProvider, ProviderConfig, SamplingConfig, TransportError
from .preprocess import (
    PreprocessConfig,
    balance_all_tags,
    filter_by_credibility,
    remove_patterned_taggers,
    split_dataset,
)
from .prompting import render_prompt, verdict_completion
from .store import DuplicateRun, RunStore, UnknownRun

EXIT_OK = 0
EXIT_DATA = 1
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_NOT_FOUND = 4


def _load_config(path: str | None) -> dict:
    candidate = Path(path) if path else Path("rmf.toml")
    if candidate.exists():
        with open(candidate, "rb") as f:
            return tomllib.load(f)
    if path:  # explicitly named but missing
        raise click.ClickException(f"config file {path} not found")
    return {}


def resolve_option(flag_value, env_name: str, config: dict, config_path: tuple[str, ...], default, cast=None):
    """Flag > env > config file > default."""
    if flag_value is not None:
        return flag_value
    if env_name in os.environ:
        raw = os.environ[env_name]
        return cast(raw) if cast else raw
    node = config
    for key in config_path:
        if not isinstance(node, dict) or key not in node:
            node = None
            break
        node = node[key]
    if node is not None:
        return node
    return default


@click.group()
@click.option("--config", "config_path", default=None, help="Path to rmf.toml (default: ./rmf.toml if present).")
@click.pass_context
def main(ctx, config_path):
    """Peer-review tag data to reproducible LLM evaluation metrics."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = _load_config(config_path)
    except click.ClickException as e:
        click.echo(f"error: {e.message}", err=True)
        ctx.exit(EXIT_CONFIG)


@main.command("ingest")
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default="dataset.jsonl")
@click.pass_context
def cmd_ingest(ctx, input_path, fmt, output):
    """Parse and validate an export; write the canonical dataset file."""
    try:
        dataset = parse_dataset(Path(input_path).read_bytes(), fmt)
    except DataError as e:
        click.echo(f"error: {e}", err=True)
        ctx.exit(EXIT_DATA)
    violations = validate_dataset(dataset)
    Path(output).write_bytes(dataset.to_jsonl())
    click.echo(f"records: {len(dataset.records)}  assignments: {len(dataset.assignments)}")
    if violations:
        for v in violations:
            click.echo(f"violation: {v.kind}: {v.detail}", err=True)
        ctx.exit(EXIT_DATA)
    click.echo(f"dataset written to {output}")


@main.command("preprocess")
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--credibility-threshold", type=float, default=None)
@click.option("--pattern-min-len", type=int, default=None)
@click.option("--per-tag-yes", type=int, default=None)
@click.option("--per-tag-no", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "-o", "out_dir", type=click.Path(file_okay=False), default="preprocessed")
@click.pass_context
def cmd_preprocess(ctx, dataset_path, credibility_threshold, pattern_min_len, per_tag_yes, per_tag_no, seed, out_dir):
    """Credibility filter, pattern removal, balanced sampling, 60/20/20 split."""
    config = ctx.obj["config"]
    try:
        cfg = PreprocessConfig(
            credibility_threshold=resolve_option(
                credibility_threshold, "RMF_CREDIBILITY_THRESHOLD", config,
                ("preprocess", "credibility_threshold"), 0.3, float),
            pattern_min_len=resolve_option(
                pattern_min_len, "RMF_PATTERN_MIN_LEN", config, ("preprocess", "pattern_min_len"), 4, int),
            per_tag_yes=resolve_option(
                per_tag_yes, "RMF_PER_TAG_YES", config, ("preprocess", "per_tag_yes"), 50, int),
            per_tag_no=resolve_option(
                per_tag_no, "RMF_PER_TAG_NO", config, ("preprocess", "per_tag_no"), 50, int),
            seed=resolve_option(seed, "RMF_SEED", config, ("seed",), 0, int),
        )
    except ValueError as e:
        click.echo(f"config error: {e}", err=True)
        ctx.exit(EXIT_CONFIG)
    try:
        dataset = parse_dataset(Path(dataset_path).read_bytes(), "jsonl")
    except DataError as e:
        click.echo(f"error: {e}", err=True)
        ctx.exit(EXIT_DATA)

    click.echo(f"input assignments: {len(dataset)}")
    filtered = filter_by_credibility(dataset, cfg.credibility_threshold)
    click.echo(f"after credibility filter (>= {cfg.credibility_threshold}): {len(filtered)}")
    cleaned = remove_patterned_taggers(filtered, cfg.pattern_min_len)
    click.echo(f"after pattern removal (min_len {cfg.pattern_min_len}): {len(cleaned)}")
    balanced, shortfalls = balance_all_tags(cleaned, cfg)
    click.echo(f"after balanced sampling ({cfg.per_tag_yes}/{cfg.per_tag_no} per tag): {len(balanced)}")
    for s in shortfalls:
        pol = "yes" if s.polarity == 1 else "no"
        click.echo(f"warning: {s.tag} has only {s.available} {pol} samples (wanted {s.requested})", err=True)
    splits = split_dataset(balanced, cfg)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "balanced.jsonl").write_bytes(balanced.to_jsonl())
    for name in ("train", "validation", "test"):
        (out / f"{name}.jsonl").write_bytes(splits.split(name).to_jsonl())
        click.echo(f"{name}: {len(splits.split(name))} assignments")
    (out / "manifest.jsonl").write_bytes(splits.manifest_jsonl())
    click.echo(f"manifest hash: {splits.manifest_hash()}")


@main.command("pairs")
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "-o", type=click.Path(dir_okay=False), default="pairs.jsonl")
@click.pass_context
def cmd_pairs(ctx, dataset_path, output):
    """Build preference pairs (value-flip construction) from a dataset file."""
    try:
        dataset = parse_dataset(Path(dataset_path).read_bytes(), "jsonl")
    except DataError as e:
        click.echo(f"error: {e}", err=True)
        ctx.exit(EXIT_DATA)
    catalog = load_tag_catalog()
    pairs = dpo.build_preference_pairs(dataset, catalog)
    Path(output).write_bytes(dpo.pairs_to_jsonl(pairs))
    click.echo(f"{len(pairs)} pairs written to {output}")


def _synthetic_pairs(n: int, dim: int, seed: int):
    """Separable synthetic pairs: prompts vary, but every pair's feature
    difference is the same fixed direction (completions share a boundary
    token so prompt-dependent features cancel)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    words = [f"w{i}" for i in range(50)]
    pairs = []
    for i in range(n):
        prompt = " ".join(rng.choice(words, size=6)) + " q"
        pairs.append(
            dpo.PreferencePair(prompt=prompt, chosen="good t", rejected="bad t", tag="M1", record_id=f"syn-{i}")
        )
    return pairs


@main.command("verify-dpo")
@click.option("--seed", type=int, default=0)
@click.option("--pairs", "n_pairs", type=int, default=200)
@click.option("--feature-dim", type=int, default=16)
@click.option("--epochs", type=int, default=500)
@click.pass_context
def cmd_verify_dpo(ctx, seed, n_pairs, feature_dim, epochs):
    """Numerically verify the preference-loss math; exit 0 iff all checks pass."""
    rng = np.random.Generator(np.random.PCG64(seed))
    failures = 0

    pairs = _synthetic_pairs(n_pairs, feature_dim, seed)

    ref = rng.normal(size=feature_dim)
    p_ref = dpo.PolicyParams.at_reference(ref)
    worst = 0.0
    for beta in (0.05, 0.1, 1.0):
        loss = dpo.dpo_loss(pairs[:16], p_ref, beta=beta)
        worst = max(worst, abs(loss - float(np.log(2))))
    ok = worst < 1e-12
    failures += not ok
    click.echo(f"loss@ref = 0.693147 (max dev {worst:.2e}) {'PASS' if ok else 'FAIL'}")

    max_rel = 0.0
    for _ in range(20):
        theta = rng.normal(size=feature_dim)
        p = dpo.PolicyParams(theta=theta, theta_ref=ref)
        beta = float(rng.uniform(0.05, 1.0))
        batch = [pairs[i] for i in rng.integers(0, len(pairs), size=8)]
        g = dpo.dpo_gradient(batch, p, beta=beta)
        fd = np.zeros(feature_dim)
        h = 1e-5
        for j in range(feature_dim):
            up = p.theta.copy(); up[j] += h
            dn = p.theta.copy(); dn[j] -= h
            fd[j] = (
                dpo.dpo_loss(batch, dpo.PolicyParams(up, ref), beta=beta)
                - dpo.dpo_loss(batch, dpo.PolicyParams(dn, ref), beta=beta)
            ) / (2 * h)
        denom = max(np.linalg.norm(fd), 1e-12)
        max_rel = max(max_rel, float(np.linalg.norm(g - fd) / denom))
    ok = max_rel < 1e-6
    failures += not ok
    click.echo(f"gradcheck max_rel_err {max_rel:.2e} {'PASS' if ok else 'FAIL'}")

    worst_shift = 0.0
    for _ in range(100):
        theta = rng.normal(size=feature_dim)
        p = dpo.PolicyParams(theta=theta, theta_ref=ref)
        batch = [pairs[i] for i in rng.integers(0, len(pairs), size=4)]
        offsets = {q.prompt: rng.normal(size=feature_dim) for q in batch}

        def shifted(prompt, completion, dim, _offsets=offsets):
            return dpo.featurize(prompt, completion, dim) + _offsets[prompt]

        base = dpo.dpo_loss(batch, p, beta=0.1)
        moved = dpo.dpo_loss(batch, p, featurizer=shifted, beta=0.1)
        worst_shift = max(worst_shift, abs(base - moved))
    ok = worst_shift < 1e-10
    failures += not ok
    click.echo(f"shift-invariance max dev {worst_shift:.2e} {'PASS' if ok else 'FAIL'}")

    if epochs == 0:
        click.echo("toy-accuracy SKIP (0 epochs)")
    else:
        cfg = dpo.DpoConfig(epochs=epochs, seed=seed)
        _, trace = dpo.train_toy_policy(pairs, cfg, feature_dim=feature_dim)
        ok = trace.final_accuracy >= 0.95
        failures += not ok
        click.echo(f"toy-accuracy {trace.final_accuracy:.3f} (>= 0.95) {'PASS' if ok else 'FAIL'}")

    ctx.exit(EXIT_OK if failures == 0 else EXIT_DATA)


def _mock_from_gold(slices, catalog, methods, invert=False):
    """Seed table mapping every rendered prompt to the gold (or inverted)
    contract-form verdict."""
    table: dict[str, str] = {}
    for d in slices:
        gold = gold_values(d)
        for (rid, tag), value in gold.items():
            name = catalog.get(tag).name
            out = -value if invert else value
            for method in methods:
                prompt = render_prompt(d.records[rid].comment_text, [tag], method, catalog)
                table[prompt] = verdict_completion(name, out)
    return table


@main.command("evaluate")
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--methods", default="direct,definitions", help="Comma-separated: direct,definitions,finetuned")
@click.option("--provider", "provider_name", default="mock")
@click.option("--run-id", default=None)
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default="store")
@click.option("--suite/--no-suite", "with_suite", default=False, help="Build the balanced 5+5-per-tag comparison suite first.")
@click.option("--blind/--no-blind", default=True)
@click.option("--seed", type=int, default=None)
@click.option("--max-in-flight", type=int, default=None)
@click.option("--created-at", default=None, hidden=True)
@click.pass_context
def cmd_evaluate(ctx, dataset_path, methods, provider_name, run_id, store_dir, with_suite, blind, seed, max_in_flight, created_at):
    """Run the chosen evaluation methods over a dataset slice and store the run."""
    config = ctx.obj["config"]
    seed = resolve_option(seed, "RMF_SEED", config, ("seed",), 0, int)
    max_in_flight = resolve_option(max_in_flight, "RMF_MAX_IN_FLIGHT", config, ("max_in_flight",), 1, int)
    catalog = load_tag_catalog()
    try:
        dataset = parse_dataset(Path(dataset_path).read_bytes(), "jsonl")
    except DataError as e:
        click.echo(f"error: {e}", err=True)
        ctx.exit(EXIT_DATA)

    method_kinds = []
    try:
        for m in methods.split(","):
            m = m.strip()
            method_kinds.append(MethodKind(m, provider_name if m == "finetuned" else None))
    except ValueError as e:
        click.echo(f"config error: {e}", err=True)
        ctx.exit(EXIT_CONFIG)

    sampling = SamplingConfig()
    if provider_name == "mock":
        provider = MockProvider()
    elif provider_name == "mock-echo":
        provider = MockProvider(
            _mock_from_gold([dataset], catalog, [m.kind for m in method_kinds]),
            name="mock-echo", model_id="mock-echo",
        )
    elif provider_name == "mock-invert":
        provider = MockProvider(
            _mock_from_gold([dataset], catalog, [m.kind for m in method_kinds], invert=True),
            name="mock-invert", model_id="mock-invert",
        )
    else:
        section = config.get("providers", {}).get(provider_name)
        if section is None:
            click.echo(f"config error: provider {provider_name!r} not in config", err=True)
            ctx.exit(EXIT_CONFIG)
        cfg = ProviderConfig(
            base_url=section["base_url"],
            model_id=section["model_id"],
            api_key_env=section.get("api_key_env"),
            timeout_s=section.get("timeout_ms", 30000) / 1000,
            max_retries=section.get("max_retries", 3),
            max_in_flight=section.get("max_in_flight", max_in_flight),
            name=provider_name,
        )
        if cfg.api_key_env and not os.environ.get(cfg.api_key_env):
            click.echo(f"transport error ({provider_name}): environment variable {cfg.api_key_env} is not set", err=True)
            ctx.exit(EXIT_TRANSPORT)
        from .llm import HttpProvider

        provider = HttpProvider(cfg, sampling)

    gold = gold_values(dataset)
    suite_payload = None
    if with_suite:
        try:
            suite = build_comparison_suite(dataset, seed)
        except ValueError as e:
            click.echo(f"error: {e}", err=True)
            ctx.exit(EXIT_DATA)
        suite_payload = [
            {
                "record_id": i.record_id,
                "tag": i.tag,
                "gold_value": i.gold_value,
                "rubric_prompt": dataset.records[i.record_id].rubric_prompt,
                "comment_text": dataset.records[i.record_id].comment_text,
                "tag_name": catalog.get(i.tag).name,
                "tag_definition": catalog.get(i.tag).definition,
            }
            for i in suite.items
        ]

    store = RunStore(store_dir)
    run_id = run_id or f"run-{provider_name}-{seed}"
    lock_path = Path(store_dir) / ".lock"
    try:
        lock_path.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        click.echo(f"error: store {store_dir} is locked by another rmf process", err=True)
        ctx.exit(EXIT_CONFIG)
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        try:
            store.create_run(
                run_id,
                config={"provider": provider_name, "methods": [m.kind for m in method_kinds], "seed": seed},
                suite=suite_payload,
                gold=gold,
                blind=blind,
                created_at=created_at,
            )
        except DuplicateRun as e:
            click.echo(f"error: {e}", err=True)
            ctx.exit(EXIT_DATA)
        try:
            for kind in method_kinds:
                preds = run_method(dataset, kind, provider, sampling, catalog, max_in_flight=max_in_flight)
                store.append_predictions(run_id, preds)
                acc = accuracy(preds, gold)
                click.echo(f"{provider_name} {kind.label}: accuracy {acc.overall:.4f} ({acc.matches}/{acc.total})")
        except (TransportError, ConfigError) as e:
            store.set_status(run_id, "failed")
            click.echo(f"transport error ({provider_name}): {e}", err=True)
            ctx.exit(EXIT_TRANSPORT)
        store.set_status(run_id, "complete")
        click.echo(f"stored run {run_id} in {store_dir}")
    finally:
        lock_path.unlink(missing_ok=True)


@main.command("serve")
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default="store")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8321)
@click.option("--frontend", "frontend_dir", type=click.Path(file_okay=False), default=None)
def cmd_serve(store_dir, host, port, frontend_dir):
    """Serve the adjudication API and UI; blocks until interrupted."""
    import uvicorn

    from .service import create_app

    if frontend_dir is None:
        bundled = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
        frontend_dir = str(bundled) if bundled.is_dir() else None
    app = create_app(RunStore(store_dir), frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port)


@main.command("report")
@click.argument("run_id")
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default="store")
@click.option("--format", "fmt", type=click.Choice(["json", "md", "csv"]), default="md")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def cmd_report(ctx, run_id, store_dir, fmt, output):
    """Render a stored run's agreement report."""
    from .service import render_run_report

    try:
        body, _ = render_run_report(RunStore(store_dir), run_id, fmt)
    except UnknownRun:
        click.echo(f"error: unknown run {run_id!r}", err=True)
        ctx.exit(EXIT_NOT_FOUND)
    if output:
        Path(output).write_text(body)
    else:
        click.echo(body, nl=False)


if __name__ == "__main__":
    main()
