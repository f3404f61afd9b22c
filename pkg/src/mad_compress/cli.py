"""Command-line entry point: ``madc``."""
from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np

from . import encoder, harness, theory
from .backend import MockBackend, MockScript, OpenAICompatClient
from .debate import DebateConfig
from .engine import read_transcript, write_transcript
from .memory import STRATEGY_ALIASES, vision_token_count
from .render import RenderLayout, digest_manifest, page_filename, render_pages_for


def _echo_json(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Multi-agent debate with text, summary and rendered-image history."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


# -- debate ---------------------------------------------------------------------

@main.group()
def debate() -> None:
    """Run debates over a dataset."""


@debate.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="INI config file.")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="JSONL file of {id, question, answer}.")
@click.option("--strategy", type=click.Choice(["text", "summary", "visual"]), multiple=True,
              help="History format; repeat to compare several. Defaults to the config's.")
@click.option("--backend", "backend_kind", type=click.Choice(["http", "mock"]), help="Overrides [backend] kind.")
@click.option("--mock-script", type=click.Path(exists=True, dir_okay=False),
              help="Scripted responses; without one, a 2-of-3-correct script is generated.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="runs", show_default=True)
@click.option("--answer-mode", type=click.Choice(["boxed", "final_number", "multiple_choice"]))
def debate_run(config_path, dataset_path, strategy, backend_kind, mock_script, out_dir, answer_mode) -> None:
    """Debate every dataset item and write transcripts plus a report."""
    cfg = harness.load_config(config_path) if config_path else harness.load_config(text="")
    dataset = harness.load_dataset(dataset_path, answer_mode=answer_mode or cfg.debate.answer_mode)
    kinds = [STRATEGY_ALIASES[s] for s in strategy] or [cfg.strategy.kind]
    strategies = [replace(cfg.strategy, kind=k) for k in kinds]
    kind = backend_kind or cfg.backend.kind

    if kind == "mock":
        path = mock_script or cfg.backend.mock_script
        script = MockScript.load(path) if path else harness.majority_script(
            dataset, cfg.debate.num_agents, cfg.debate.num_rounds, seed=cfg.debate.seed or 0)
        backend = MockBackend(script, image_token_charge=cfg.backend.image_token_charge)
    else:
        backend = OpenAICompatClient(
            os.environ.get("OPENAI_BASE_URL", cfg.backend.base_url),
            os.environ.get(cfg.backend.api_key_env),
            max_attempts=cfg.backend.max_attempts,
            timeout_s=cfg.backend.timeout_s,
        )

    report = harness.run_benchmark(cfg.debate, dataset, backend, strategies,
                                   parallelism=cfg.backend.parallelism)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, outcomes in report.outcomes.items():
        with open(out / f"transcript_{name}.jsonl", "w", encoding="utf-8") as fh:
            for o in outcomes:
                write_transcript(fh, o)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    (out / "token_curve.csv").write_text(report.token_curve())
    click.echo(report.to_csv(), nl=False)
    if kind == "http":
        backend.close()


# -- cost ---------------------------------------------------------------------------

@main.group()
def cost() -> None:
    """Closed-form token accounting."""


@cost.command("predict")
@click.option("-K", "--agents", type=int, default=3, show_default=True)
@click.option("-R", "--rounds", type=int, default=5, show_default=True)
@click.option("-L", "--length", type=float, default=658, show_default=True, help="Mean response length.")
@click.option("--resolution", type=int, default=1024, show_default=True)
@click.option("--pages", type=int, default=1, show_default=True)
@click.option("--summary-tokens", type=int, default=1200, show_default=True)
@click.option("--count-first-round", is_flag=True, help="Charge summary and image context in round 1 too.")
def cost_predict(agents, rounds, length, resolution, pages, summary_tokens, count_first_round) -> None:
    """Per-round and cumulative history tokens for the three formats, as CSV."""
    L = int(length) if length.is_integer() else length
    curve = harness.predict_costs(
        DebateConfig(agents, rounds), L, tokens_per_image=vision_token_count(resolution), pages=pages,
        summary_tokens=summary_tokens, count_first_round=count_first_round,
    )
    click.echo(curve.to_csv(), nl=False)


# -- render ---------------------------------------------------------------------------

@main.command()
@click.argument("transcript", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default="pages", show_default=True)
@click.option("--resolution", type=int, default=1024, show_default=True)
@click.option("--max-pages", type=int, default=8, show_default=True)
def render(transcript, out_dir, resolution, max_pages) -> None:
    """Render the history each round's agents would see, one PNG per page, plus a digest manifest."""
    with open(transcript, encoding="utf-8") as fh:
        states, _ = read_transcript(fh)
    layout = RenderLayout(canvas=resolution, max_pages=max_pages)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    named = []
    for qid, state in states.items():
        for r in range(2, state.current_round):
            for img in render_pages_for(state.before(r), layout):
                name = page_filename(qid, r, img.page_index)
                (out / name).write_bytes(img.to_png())
                named.append((name, img))
    manifest = digest_manifest(named)
    (out / "manifest.tsv").write_text(manifest)
    click.echo(manifest, nl=False)


# -- theory ---------------------------------------------------------------------------------

@main.group("theory")
def theory_group() -> None:
    """Numerical checks of the majority bounds and the bottleneck model."""


@theory_group.command("verify")
@click.option("--trials", type=int, default=100_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), help="Write bounds.csv and summary.json here.")
def theory_verify(trials, seed, out_dir) -> None:
    """Exit status is non-zero if any check fails."""
    result = theory.verify_all(trials=trials, seed=seed)
    summary = {"checks": result["checks"], "bottleneck": result["bottleneck"].to_dict(),
               "passed": all(result["checks"].values())}
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bounds.csv").write_text(theory.rows_to_csv(result["table"]))
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _echo_json(summary)
    sys.exit(0 if summary["passed"] else 1)


# -- encoder -------------------------------------------------------------------------------

@main.command()
@click.option("--seeds", type=int, default=20, show_default=True)
@click.option("--dims", type=(int, int, int), default=(4, 6, 5), show_default=True, help="d_f d_h d")
@click.option("--step", type=float, default=1e-5, show_default=True)
def gradcheck(seeds, dims, step) -> None:
    """Compare analytic adapter gradients with central differences."""
    d_f, d_h, d = dims
    worst = 0.0
    for s in range(seeds):
        ds = encoder.make_glyph_dataset(samples=2, seq_len=3, d_f=d_f, d_h=d_h, d=d, seed=s)
        worst = max(worst, encoder.grad_check(ds.init, ds.batch(np.arange(len(ds))), step))
    _echo_json({"max_rel_err": worst, "seeds": seeds, "dims": list(dims), "passed": bool(worst <= 1e-4)})


@main.command("train-toy")
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--lr", "learning_rate", type=float, default=1e-4, show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--optimizer", type=click.Choice(["sgd", "adamw"]), default="adamw", show_default=True)
@click.option("--samples", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Write the loss trajectory here.")
def train_toy(steps, learning_rate, batch_size, optimizer, samples, seed, csv_path) -> None:
    """Fit the adapter on rendered glyph strings through frozen stand-in encoders."""
    config = encoder.ToyTrainConfig(learning_rate=learning_rate, batch_size=batch_size, steps=steps,
                                    optimizer=optimizer, seed=seed)
    ds = encoder.make_glyph_dataset(samples=samples, seed=seed)
    try:
        result = encoder.train_toy(config, ds)
    except encoder.TrainingDiverged as exc:
        raise click.ClickException(f"{exc} after {len(exc.trajectory)} steps") from exc
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("step,loss_nats,loss_bits\n")
            for i, loss in enumerate(result.losses):
                fh.write(f"{i},{loss:.10g},{encoder.loss_in_bits(loss):.10g}\n")
    probe = encoder.make_glyph_dataset(samples=2, seq_len=3, d_f=4, d_h=6, d=5, seed=seed)
    _echo_json({
        "steps": steps,
        "initial_loss": result.losses[0],
        "final_loss": result.final_loss,
        "final_loss_bits": encoder.loss_in_bits(result.final_loss),
        "max_rel_err": encoder.grad_check(probe.init, probe.batch(np.arange(2))),
        "config": asdict(config),
    })


if __name__ == "__main__":
    main()
