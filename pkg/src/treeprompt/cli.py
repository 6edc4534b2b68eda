"""Single command-line entry point for every workflow.

Exit codes: 0 on success, 1 on validation/configuration errors, 2 on
runtime failures. A TOML config file can pre-set any run option; explicit
flags win. The effective configuration is echoed into every output
directory, and the seed is always mandatory.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


KNOWN_CONFIG_KEYS = {
    "seed", "prompt_mode", "prompt_len", "tree", "modules",
    "d_w", "d_l", "d_p", "m_max", "fusion_heads", "fusion_mode",
    "lr_tree", "lr_global_multilayer", "batch_tree", "batch_global",
    "epochs_tree", "epochs_global", "weight_decay", "sizes", "threads",
}


def _load_toml(path: str) -> dict:
    try:
        import tomllib  # py311+
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as f:
        blob = tomllib.load(f)
    for key, value in blob.items():
        if key not in KNOWN_CONFIG_KEYS:
            raise ConfigError(key, "unknown option")
        if key == "sizes":
            if not isinstance(value, dict):
                raise ConfigError("sizes", "must be a table of split -> count")
            for split, count in value.items():
                if not isinstance(count, int):
                    raise ConfigError(f"sizes.{split}", "must be an integer")
    return blob


def _resolve_seed(seed, file_config) -> int:
    if seed is not None:
        return seed
    if "seed" in file_config:
        return int(file_config["seed"])
    raise ConfigError("seed", "required but not given (flag --seed or config file)")


def _out_dir(out) -> Path:
    if out is None:
        out = os.environ.get("TREEPROMPT_OUT")
    if out is None:
        import datetime

        stamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y%m%d-%H%M%S")
        out = Path("runs") / stamp
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(out_dir: Path, payload: dict) -> None:
    (out_dir / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _run_config(seed: int, file_config: dict, **flag_overrides):
    from .training import RunConfig

    merged = {k: v for k, v in file_config.items() if k not in ("sizes", "threads")}
    merged.pop("seed", None)
    if "tree" in merged:
        merged["tree_enabled"] = bool(merged.pop("tree"))
    if "modules" in merged:
        merged["modules_enabled"] = bool(merged.pop("modules"))
    for key, value in flag_overrides.items():
        if value is not None:
            merged[key] = value
    try:
        return RunConfig(seed=seed, **merged)
    except TypeError as e:
        raise ConfigError("run", str(e))


def _load_world(data_dir: str):
    from .tree_model import Vocab
    from .world import Dataset

    data = Path(data_dir)
    dataset = Dataset.load(data / "dataset.jsonl")
    vocab = Vocab.load(data / "vocab.json")
    return dataset, vocab


def _load_frozen_backbone(backbone_dir: str, vocab):
    import numpy as np

    from .backbone import BackboneConfig, ToyBackbone
    from .checkpoint import load_checkpoint

    bdir = Path(backbone_dir)
    blob = json.loads((bdir / "backbone.json").read_text(encoding="utf-8"))
    config = BackboneConfig(**blob)
    backbone = ToyBackbone(config, vocab, np.random.default_rng(0))
    backbone.load(bdir / "backbone.tpck")
    backbone.freeze()
    word = load_checkpoint(bdir / "word_table.tpck")["tables.word"]
    return backbone, word


@click.group()
def cli():
    """Tree-structured prompt tuning over a frozen toy grounding backbone."""


@cli.command("parse")
@click.argument("conllu_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--quiet", is_flag=True, help="suppress the per-tree summary")
def cmd_parse(conllu_file, quiet):
    """Validate a CoNLL-U file and report its trees."""
    from .conllu import parse_conllu_file, route_module

    trees = parse_conllu_file(conllu_file)
    if not quiet:
        for tree in trees:
            kinds = [route_module(n).value for n in tree.nodes]
            click.echo(
                f"{tree.sentence_id}: {len(tree)} nodes, root "
                f"'{tree.node(tree.root).word}', modules "
                f"leaf={kinds.count('leaf')} rel={kinds.count('rel')} "
                f"enti={kinds.count('enti')}"
            )
    click.echo(f"{len(trees)} trees OK")


@cli.command("gen-data")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--size", "sizes", multiple=True,
              help="split=count override, e.g. --size tune_train=500")
def cmd_gen_data(seed, out, config_path, sizes):
    """Generate the synthetic dataset and its vocabulary."""
    from .tree_model import Vocab
    from .world import DEFAULT_SIZES, SPLITS, gen_dataset

    file_config = _load_toml(config_path) if config_path else {}
    seed = _resolve_seed(seed, file_config)
    out_dir = _out_dir(out)
    counts = dict(DEFAULT_SIZES)
    counts.update(file_config.get("sizes", {}))
    for spec in sizes:
        split, _, value = spec.partition("=")
        if split not in SPLITS or not value.isdigit():
            raise ConfigError(f"sizes.{split}", f"bad --size value {spec!r}")
        counts[split] = int(value)

    dataset = gen_dataset(seed, counts)
    dataset.save(out_dir / "dataset.jsonl")
    trees = [ex.tree for split in dataset.splits.values() for ex in split]
    vocab = Vocab.build(trees, min_freq=2)
    vocab.save(out_dir / "vocab.json")
    _echo_config(out_dir, {"command": "gen-data", "seed": seed, "sizes": counts})
    total = sum(len(v) for v in dataset.splits.values())
    click.echo(f"wrote {total} examples and vocab to {out_dir}")


@cli.command("pretrain-backbone")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--epochs", type=int, default=15)
@click.option("--lr", type=float, default=1e-3)
@click.option("--target-acc", type=float, default=0.97)
@click.option("--min-acc", type=float, default=0.80,
              help="abort threshold after the epoch budget")
@click.option("--word-init", type=click.Path(exists=True), default=None,
              help="TPCK word table (e.g. a GloVe subset) to initialize from")
def cmd_pretrain(data, seed, out, config_path, epochs, lr, target_acc, min_acc, word_init):
    """Pretrain the backbone on simple queries, then freeze it."""
    import numpy as np

    from .backbone import BackboneConfig, ToyBackbone, make_word_table, pretrain_backbone
    from .checkpoint import load_checkpoint, save_checkpoint

    file_config = _load_toml(config_path) if config_path else {}
    seed = _resolve_seed(seed, file_config)
    out_dir = _out_dir(out)
    dataset, vocab = _load_world(data)

    config = BackboneConfig(d_w=int(file_config.get("d_w", 32)))
    rng = np.random.default_rng(seed)
    backbone = ToyBackbone(config, vocab, rng)
    word_table = make_word_table(vocab, config.d_w, rng)
    if word_init:
        rows = load_checkpoint(word_init)["tables.word"]
        if rows.shape[1] != config.d_w:
            raise ConfigError("word_init", f"table width {rows.shape[1]} != d_w {config.d_w}")
        if rows.shape[0] != word_table.shape[0]:
            raise ConfigError("word_init", f"table rows {rows.shape[0]} != vocab {word_table.shape[0]}")
        word_table.data = rows.astype(np.float32, copy=True)

    report = pretrain_backbone(
        backbone, word_table, dataset["pretrain"], seed=seed,
        max_epochs=epochs, lr=lr, target_acc=target_acc, min_acc=min_acc,
        log=click.echo,
    )
    backbone.freeze()
    backbone.save(out_dir / "backbone.tpck")
    save_checkpoint(out_dir / "word_table.tpck", {"tables.word": word_table})
    (out_dir / "backbone.json").write_text(
        json.dumps(config.__dict__, indent=2) + "\n", encoding="utf-8"
    )
    from .backbone import top1_accuracy

    floor = None
    if dataset.splits.get("tune_test_compositional"):
        floor = top1_accuracy(backbone, word_table, dataset["tune_test_compositional"])
    (out_dir / "pretrain_report.json").write_text(
        json.dumps({**report, "compositional_zero_shot_floor": floor}, indent=2) + "\n",
        encoding="utf-8",
    )
    _echo_config(out_dir, {"command": "pretrain-backbone", "seed": seed,
                           "epochs": epochs, "lr": lr, "word_init": word_init})
    click.echo(
        f"pretrained to {report['val_accuracy']:.3f} held-out simple accuracy; "
        f"frozen checkpoint in {out_dir}"
    )


def _tune_options(fn):
    fn = click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))(fn)
    fn = click.option("--backbone", "backbone_dir", required=True,
                      type=click.Path(exists=True, file_okay=False))(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--out", type=click.Path(), default=None)(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None)(fn)
    fn = click.option("--prompt-mode", type=click.Choice(["input", "multi"]), default=None)(fn)
    fn = click.option("--no-tree", is_flag=True, default=False)(fn)
    fn = click.option("--no-modules", is_flag=True, default=False)(fn)
    fn = click.option("--prompt-len", type=int, default=None)(fn)
    fn = click.option("--epochs", type=int, default=None)(fn)
    fn = click.option("--lr", type=float, default=None)(fn)
    fn = click.option("--global-prompt", "global_prompt", type=click.Path(exists=True),
                      default=None, help="pretuned multi-layer prompt checkpoint")(fn)
    return fn


@cli.command("tune")
@_tune_options
def cmd_tune(data, backbone_dir, seed, out, config_path, prompt_mode, no_tree,
             no_modules, prompt_len, epochs, lr, global_prompt):
    """Tune prompt-side parameters against the frozen backbone."""
    from .checkpoint import load_checkpoint
    from .training import convergence_csv, save_run, tune

    file_config = _load_toml(config_path) if config_path else {}
    seed = _resolve_seed(seed, file_config)
    out_dir = _out_dir(out)
    dataset, vocab = _load_world(data)
    backbone, word = _load_frozen_backbone(backbone_dir, vocab)

    config = _run_config(
        seed, file_config,
        prompt_mode=prompt_mode,
        tree_enabled=False if no_tree else None,
        modules_enabled=False if no_modules else None,
        prompt_len=prompt_len,
        epochs_tree=epochs,
        lr_tree=lr,
    )
    global_stack = None
    if global_prompt:
        global_stack = load_checkpoint(global_prompt)["global_multi"]

    report, side = tune(config, dataset, backbone, word, global_stack, log=click.echo)
    save_run(out_dir, config, report, side)
    click.echo(f"test accuracy: {json.dumps(report.test_accuracy)}")
    click.echo(f"run artifacts in {out_dir}")


@cli.command("eval")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--backbone", "backbone_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", "run_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--split", default="tune_test_compositional")
def cmd_eval(data, backbone_dir, run_dir, split):
    """Evaluate a tuned prompt checkpoint on one split."""
    from .training import EmptySplit, evaluate, load_side

    dataset, vocab = _load_world(data)
    backbone, _ = _load_frozen_backbone(backbone_dir, vocab)
    side = load_side(run_dir, backbone)
    if split not in dataset.splits or not dataset.splits[split]:
        raise EmptySplit(f"split {split!r} is empty or missing")
    accuracy = evaluate(backbone, side, dataset[split])
    click.echo(f"{split} top-1 accuracy: {accuracy:.4f}")


@cli.command("ablate")
@_tune_options
@click.option("--seeds", "n_seeds", type=int, default=3)
@click.option("--sweep-epochs", type=int, default=1)
@click.option("--no-sweep", is_flag=True, default=False)
def cmd_ablate(data, backbone_dir, seed, out, config_path, prompt_mode, no_tree,
               no_modules, prompt_len, epochs, lr, global_prompt, n_seeds,
               sweep_epochs, no_sweep):
    """Run the tree/module ablation grid and the prompt-length sweep."""
    from .training import ablate, convergence_csv, convergence_svg

    file_config = _load_toml(config_path) if config_path else {}
    seed = _resolve_seed(seed, file_config)
    out_dir = _out_dir(out)
    dataset, vocab = _load_world(data)
    backbone, word = _load_frozen_backbone(backbone_dir, vocab)
    config = _run_config(
        seed, file_config,
        prompt_mode=prompt_mode,
        prompt_len=prompt_len,
        epochs_tree=epochs,
        lr_tree=lr,
    )
    seeds = tuple(seed + i for i in range(n_seeds))
    result = ablate(
        dataset, config, backbone, word, seeds=seeds,
        sweep_epochs=sweep_epochs, run_sweep=not no_sweep, log=click.echo,
    )
    (out_dir / "ablation.md").write_text(result.table_markdown(), encoding="utf-8")
    (out_dir / "ablation.csv").write_text(result.table_csv(), encoding="utf-8")
    if result.sweep:
        (out_dir / "sweep.csv").write_text(result.sweep_csv(), encoding="utf-8")
    full = result.reports["full"][0].losses
    cont = result.reports["continuous"][0].losses
    (out_dir / "convergence.csv").write_text(convergence_csv(full, cont), encoding="utf-8")
    (out_dir / "convergence.svg").write_text(convergence_svg(full, cont), encoding="utf-8")
    (out_dir / "convergence.json").write_text(
        json.dumps(result.convergence, indent=2) + "\n", encoding="utf-8"
    )
    _echo_config(out_dir, {"command": "ablate", "seed": seed, "seeds": list(seeds),
                           "config": result.reports["full"][0].config})
    click.echo(result.table_markdown())
    click.echo(f"ablation artifacts in {out_dir}")


@cli.command("inspect")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--backbone", "backbone_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", "run_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--example", "example_id", required=True)
@click.option("--out", type=click.Path(), default=None)
def cmd_inspect(data, backbone_dir, run_dir, example_id, out):
    """Export the per-node reasoning trace for one example."""
    from .tracing import build_traces, export_trace
    from .training import load_side

    out_dir = _out_dir(out)
    dataset, vocab = _load_world(data)
    backbone, _ = _load_frozen_backbone(backbone_dir, vocab)
    side = load_side(run_dir, backbone)
    example = None
    for split in dataset.splits.values():
        for ex in split:
            if ex.example_id == example_id:
                example = ex
                break
    if example is None:
        raise ConfigError("example", f"id {example_id!r} not found in dataset")
    traces, prediction = build_traces(example, side, backbone)
    json_path, html_path = export_trace(example, traces, prediction, out_dir)
    click.echo(f"wrote {json_path} and {html_path}")


@cli.command("grad-check")
@click.option("--seed", type=int, required=True)
@click.option("--seeds", "n_seeds", type=int, default=1,
              help="number of consecutive seeds to check")
@click.option("--tolerance", type=float, default=1e-4)
def cmd_grad_check(seed, n_seeds, tolerance):
    """Compare pipeline gradients against central finite differences."""
    from .training import gradient_fidelity_check

    worst = 0.0
    for s in range(seed, seed + n_seeds):
        err, per_param = gradient_fidelity_check(s)
        worst = max(worst, err)
        offender = max(per_param, key=per_param.get)
        click.echo(f"seed {s}: max relative error {err:.3e} (worst: {offender})")
    click.echo(f"overall max relative error: {worst:.3e} (tolerance {tolerance})")
    if worst > tolerance:
        raise RuntimeError(f"gradient check failed: {worst:.3e} > {tolerance}")


@cli.command("plot")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_plot(csv_path, out):
    """Render a convergence CSV (step,loss_a,loss_b) as an SVG plot."""
    from .training import convergence_svg, parse_convergence_csv

    a, b = parse_convergence_csv(Path(csv_path).read_text(encoding="utf-8"))
    Path(out).write_text(convergence_svg(a, b), encoding="utf-8")
    click.echo(f"wrote {out}")


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    threads = None
    if "--threads" in argv:
        i = argv.index("--threads")
        try:
            threads = int(argv[i + 1])
        except (IndexError, ValueError):
            click.echo("error: --threads needs an integer", err=True)
            return 1
        argv = argv[:i] + argv[i + 2 :]
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    try:
        cli.main(args=list(argv), standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except click.exceptions.ClickException as e:
        e.show()
        return 1
    except ConfigError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except (ValueError, FileNotFoundError) as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except Exception as e:  # runtime failure
        click.echo(f"runtime failure: {type(e).__name__}: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
