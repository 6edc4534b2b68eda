"""Prompt tuning loops, evaluation, ablation tables, and convergence logs.

Only prompt-side parameters ever reach the optimizer; every step audits
that no frozen backbone tensor accumulated a gradient. The four ablation
cells correspond exactly to the tree/module flag pairs, and the both-off
cell is the plain continuous-prompt baseline.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, backward, cross_entropy_logits
from .backbone import ToyBackbone, score_regions
from .checkpoint import save_checkpoint
from .injection import ExpansionMLP, PromptBundle, PromptMode, add_to_global, expand_multi_layer
from .tree_model import TreePromptConfig, TreePromptModel
from .world import Dataset, GroundingExample, iou


class FrozenViolation(RuntimeError):
    pass


class EmptySplit(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int
    prompt_mode: str = "input"  # "input" or "multi"
    prompt_len: int = 64
    tree_enabled: bool = True
    modules_enabled: bool = True
    d_w: int = 32
    d_l: int = 8
    d_p: int = 64
    m_max: int = 32
    fusion_heads: int = 1
    fusion_mode: str = "self"
    lr_tree: float = 5e-5
    lr_global_multilayer: float = 0.03
    batch_tree: int = 8
    batch_global: int = 16
    epochs_tree: int = 20
    epochs_global: int = 100
    weight_decay: float = 0.0

    def tree_config(self) -> TreePromptConfig:
        return TreePromptConfig(
            d_w=self.d_w,
            d_l=self.d_l,
            d_p=self.d_p,
            prompt_len=self.prompt_len,
            m_max=self.m_max,
            fusion_heads=self.fusion_heads,
            fusion_mode=self.fusion_mode,
            tree_enabled=self.tree_enabled,
            modules_enabled=self.modules_enabled,
        )

    @property
    def is_global_multi_pretune(self) -> bool:
        return (
            self.prompt_mode == "multi"
            and not self.tree_enabled
            and not self.modules_enabled
        )


@dataclass
class RunReport:
    seed: int
    config: dict
    losses: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    test_accuracy: dict[str, float] = field(default_factory=dict)
    grads_received: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


class PromptSide:
    """The tunable half of a run: tree model plus mode-specific extras."""

    def __init__(self, config: RunConfig, backbone: ToyBackbone,
                 pretrained_word: np.ndarray, global_stack: np.ndarray | None):
        rng = np.random.default_rng((config.seed, 101))
        self.config = config
        self.model = TreePromptModel(backbone.vocab, config.tree_config(), rng)
        if pretrained_word.shape != self.model.tables.word.shape:
            raise ValueError(
                f"pretrained word table {pretrained_word.shape} does not match "
                f"vocab/d_w {self.model.tables.word.shape}"
            )
        self.model.tables.word.data = pretrained_word.astype(np.float32, copy=True)
        self.layers = backbone.config.layers

        self.expansion: ExpansionMLP | None = None
        self.global_multi: Tensor | None = None
        self.frozen_global: Tensor | None = None

        if config.is_global_multi_pretune:
            self.global_multi = Tensor(
                rng.normal(0.0, 0.02, size=(self.layers, config.prompt_len, config.d_p))
                .astype(np.float32),
                requires_grad=True,
                name="global_multi",
            )
        elif config.prompt_mode == "multi":
            if global_stack is None:
                raise ValueError("multi-layer tree tuning needs a pretuned global stack")
            self.expansion = ExpansionMLP(config.d_p, self.layers, rng)
            self.frozen_global = Tensor(
                global_stack.astype(np.float32, copy=True),
                requires_grad=False,
                name="global_multi_frozen",
            )

        if self.model.continuous_only:
            # baselines tune G (or the global stack) only; the shared word
            # table must stay exactly as pretrained
            self.model.tables.word.requires_grad = False

    def parameters(self) -> dict[str, Tensor]:
        if self.config.is_global_multi_pretune:
            return {self.global_multi.name: self.global_multi}
        params = self.model.parameters()
        if self.expansion is not None:
            params.update(self.expansion.parameters())
        return params

    def bundle(self, example: GroundingExample) -> PromptBundle:
        if self.config.is_global_multi_pretune:
            return PromptBundle(PromptMode.MULTI, p_stack=self.global_multi)
        p = self.model.forward(example.tree if not self.model.continuous_only else None)
        if self.config.prompt_mode == "input":
            return PromptBundle(PromptMode.INPUT, p=p)
        stack = add_to_global(expand_multi_layer(p, self.expansion), self.frozen_global)
        return PromptBundle(PromptMode.MULTI, p_stack=stack)

    def word_table(self) -> Tensor:
        return self.model.tables.word

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.parameters().items():
            t.data = snap[name].copy()


def _audit_step(declared: dict[str, Tensor], backbone: ToyBackbone,
                received: set[str]) -> None:
    for name, t in backbone.named_params().items():
        if t.grad is not None:
            raise FrozenViolation(f"backbone parameter {name} received a gradient")
    for name, t in declared.items():
        if t.grad is not None and np.any(t.grad):
            received.add(name)


def tune(config: RunConfig, dataset: Dataset, backbone: ToyBackbone,
         pretrained_word: np.ndarray, global_stack: np.ndarray | None = None,
         train_split: str = "tune_train", val_split: str = "tune_val",
         test_splits: tuple[str, ...] = ("tune_test_simple", "tune_test_compositional"),
         log=None) -> tuple[RunReport, PromptSide]:
    """Tune prompt-side parameters against the frozen backbone.

    Keeps the best-validation parameter snapshot and reports per-step
    losses, per-epoch validation accuracy, and final test accuracies.
    """
    from .optim import AdamW

    if not backbone.frozen:
        raise FrozenViolation("backbone must be frozen before tuning")
    train = dataset[train_split]
    if not train:
        raise EmptySplit(f"training split {train_split!r} is empty")

    side = PromptSide(config, backbone, pretrained_word, global_stack)
    params = side.parameters()
    if config.is_global_multi_pretune:
        lr, batch_size, epochs = (
            config.lr_global_multilayer, config.batch_global, config.epochs_global
        )
    else:
        lr, batch_size, epochs = config.lr_tree, config.batch_tree, config.epochs_tree
    opt = AdamW(params, lr=lr, weight_decay=config.weight_decay)

    report = RunReport(seed=config.seed, config=asdict(config))
    received: set[str] = set()
    best = (-1.0, side.snapshot())
    start = time.time()

    for epoch in range(epochs):
        order = np.random.default_rng((config.seed, 42, epoch)).permutation(len(train))
        for b0 in range(0, len(order), batch_size):
            batch = [train[i] for i in order[b0 : b0 + batch_size]]
            opt.zero_grad()
            batch_loss = 0.0
            for ex in batch:
                with Tape() as tape:
                    scores = backbone.forward_scores(
                        side.word_table(), ex, side.bundle(ex)
                    )
                    loss = cross_entropy_logits(scores, ex.gold_region)
                    backward(tape, loss)
                batch_loss += loss.item()
            for p in params.values():
                if p.grad is not None:
                    p.grad /= len(batch)
            _audit_step(params, backbone, received)
            opt.step()
            report.losses.append(batch_loss / len(batch))
        if dataset.splits.get(val_split):
            acc = evaluate(backbone, side, dataset[val_split])
            report.val_accuracy.append(acc)
            if acc > best[0]:
                best = (acc, side.snapshot())
            if log:
                log(f"epoch {epoch}: val accuracy {acc:.3f}")

    if best[0] >= 0.0:
        side.restore(best[1])
    for split in test_splits:
        if dataset.splits.get(split):
            report.test_accuracy[split] = evaluate(backbone, side, dataset[split])
    report.grads_received = sorted(received)
    report.wall_clock_s = time.time() - start
    return report, side


def evaluate(backbone: ToyBackbone, side: PromptSide,
             examples: list[GroundingExample]) -> float:
    """Top-1 accuracy: IoU(predicted box, gold box) > 0.5 counts correct."""
    if not examples:
        raise EmptySplit("evaluation split is empty")
    hits = 0
    for ex in examples:
        _, _, box = score_regions(backbone, side.word_table(), ex, side.bundle(ex))
        if iou(box, ex.gold_box) > 0.5:
            hits += 1
    return hits / len(examples)


def evaluate_predictor(predict_box, examples: list[GroundingExample]) -> float:
    """Accuracy of an arbitrary example -> box function (testing hook)."""
    if not examples:
        raise EmptySplit("evaluation split is empty")
    hits = sum(1 for ex in examples if iou(predict_box(ex), ex.gold_box) > 0.5)
    return hits / len(examples)


def side_artifacts(side: PromptSide) -> dict[str, Tensor]:
    """Everything needed to rebuild the prompt side from disk."""
    artifacts = dict(side.parameters())
    artifacts.setdefault("tables.word", side.word_table())
    if side.frozen_global is not None:
        artifacts["global_multi_frozen"] = side.frozen_global
    return artifacts


def save_prompt_checkpoint(path, side: PromptSide) -> None:
    save_checkpoint(path, side_artifacts(side))


def save_run(out_dir, config: RunConfig, report: RunReport, side: PromptSide) -> None:
    """Persist one tuning run: config echo, report, prompt checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(asdict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    report.save(out_dir / "report.json")
    save_prompt_checkpoint(out_dir / "prompt.tpck", side)


def load_side(run_dir, backbone: ToyBackbone) -> PromptSide:
    """Rebuild a tuned PromptSide from a run directory."""
    from .checkpoint import load_checkpoint

    run_dir = Path(run_dir)
    config = RunConfig(**json.loads((run_dir / "config.json").read_text(encoding="utf-8")))
    blob = load_checkpoint(run_dir / "prompt.tpck")
    side = PromptSide(
        config, backbone, blob["tables.word"], blob.get("global_multi_frozen")
    )
    for name, t in side.parameters().items():
        if name in blob:
            t.data = blob[name].astype(t.dtype, copy=True)
    return side


# ---------------------------------------------------------------------------
# gradient fidelity harness


def _grad_check_fixture():
    """Five-node tree and vocabulary for pipeline gradient checks."""
    from .conllu import DepNode, DepTree
    from .tree_model import Vocab

    nodes = (
        DepNode(1, "the", "DET", "det", 3),
        DepNode(2, "red", "ADJ", "amod", 3),
        DepNode(3, "ball", "NOUN", "root", 0, (1, 2, 4)),
        DepNode(4, "on", "ADP", "prep", 3, (5,)),
        DepNode(5, "mat", "NOUN", "pobj", 4),
    )
    tree = DepTree(nodes, 3, "grad-check")
    return tree, Vocab.build([tree], min_freq=1)


def gradient_fidelity_check(seed: int, h: float = 1e-5):
    """Finite-difference check of the whole prompt pipeline in float64.

    Builds the 5-node fixture tree with d_p=8 and prompt length 8, runs
    the full composition + fusion forward into a fixed projection loss,
    and compares every parameter's gradient against central differences.
    Returns (max relative error, per-parameter errors).
    """
    import numpy as np

    from . import autodiff as ad
    from .autodiff import grad_check
    from .tree_model import TreePromptConfig, TreePromptModel

    tree, vocab = _grad_check_fixture()
    cfg = TreePromptConfig(d_w=6, d_l=3, d_p=8, prompt_len=8, m_max=8)
    rng = np.random.default_rng(seed)
    model = TreePromptModel(vocab, cfg, rng, dtype=np.float64)
    proj = Tensor(rng.normal(size=(cfg.prompt_len, cfg.d_p)))

    def loss_fn():
        return ad.tensor_sum(ad.mul(model.forward(tree), proj))

    return grad_check(loss_fn, model.parameters(), h=h)


# ---------------------------------------------------------------------------
# ablation harness


ABLATION_CELLS = (
    ("continuous", False, False),
    ("module_only", False, True),
    ("tree_only", True, False),
    ("full", True, True),
)

SWEEP_LENGTHS = (10, 32, 64, 100, 128)


@dataclass
class AblationResult:
    cells: dict[str, list[float]]  # cell name -> accuracy per seed
    cell_means: dict[str, float]
    sweep: dict[int, float]  # prompt length -> accuracy
    convergence: dict
    reports: dict[str, list[RunReport]]

    def table_markdown(self) -> str:
        lines = [
            "| tree | module | accuracy (mean over seeds) |",
            "| --- | --- | --- |",
        ]
        flags = {name: (t, m) for name, t, m in ABLATION_CELLS}
        for name in ("continuous", "module_only", "tree_only", "full"):
            t, m = flags[name]
            lines.append(
                f"| {'yes' if t else 'no'} | {'yes' if m else 'no'} "
                f"| {self.cell_means[name]:.4f} |"
            )
        return "\n".join(lines) + "\n"

    def table_csv(self) -> str:
        lines = ["tree,module,accuracy"]
        flags = {name: (t, m) for name, t, m in ABLATION_CELLS}
        for name in ("continuous", "module_only", "tree_only", "full"):
            t, m = flags[name]
            lines.append(f"{int(t)},{int(m)},{self.cell_means[name]:.6f}")
        return "\n".join(lines) + "\n"

    def sweep_csv(self) -> str:
        lines = ["prompt_length,accuracy"]
        for n in SWEEP_LENGTHS:
            lines.append(f"{n},{self.sweep[n]:.6f}")
        return "\n".join(lines) + "\n"


def ablate(dataset: Dataset, base_config: RunConfig, backbone: ToyBackbone,
           pretrained_word: np.ndarray, seeds: tuple[int, ...] | None = None,
           eval_split: str = "tune_test_compositional", sweep_epochs: int = 1,
           run_sweep: bool = True, log=None) -> AblationResult:
    """Tree/module ablation grid plus the prompt-length sweep.

    Each cell is tuned per seed with everything else held fixed; the sweep
    reruns the full configuration at each prompt length for a reduced
    epoch budget (smoke level, no numeric claim).
    """
    from dataclasses import replace

    seeds = seeds or (base_config.seed, base_config.seed + 1, base_config.seed + 2)
    if len(seeds) < 3:
        raise ValueError("ablation needs at least 3 seeds")

    cells: dict[str, list[float]] = {name: [] for name, _, _ in ABLATION_CELLS}
    reports: dict[str, list[RunReport]] = {name: [] for name, _, _ in ABLATION_CELLS}
    for name, tree_on, modules_on in ABLATION_CELLS:
        for seed in seeds:
            cfg = replace(
                base_config, seed=seed, tree_enabled=tree_on, modules_enabled=modules_on
            )
            report, _ = tune(cfg, dataset, backbone, pretrained_word)
            acc = report.test_accuracy[eval_split]
            cells[name].append(acc)
            reports[name].append(report)
            if log:
                log(f"cell {name} seed {seed}: {eval_split} accuracy {acc:.3f}")

    convergence = log_convergence(
        reports["full"][0].losses, reports["continuous"][0].losses
    )

    sweep: dict[int, float] = {}
    if run_sweep:
        for n in SWEEP_LENGTHS:
            cfg = replace(
                base_config, seed=seeds[0], prompt_len=n, epochs_tree=sweep_epochs
            )
            report, _ = tune(cfg, dataset, backbone, pretrained_word)
            sweep[n] = report.test_accuracy[eval_split]
            if log:
                log(f"sweep length {n}: accuracy {sweep[n]:.3f}")

    return AblationResult(
        cells=cells,
        cell_means={name: float(np.mean(v)) for name, v in cells.items()},
        sweep=sweep,
        convergence=convergence,
        reports=reports,
    )


# ---------------------------------------------------------------------------
# convergence comparison


def smooth(values: list[float], window: int = 25) -> list[float]:
    out = []
    acc = 0.0
    q: list[float] = []
    for v in values:
        q.append(v)
        acc += v
        if len(q) > window:
            acc -= q.pop(0)
        out.append(acc / len(q))
    return out


def log_convergence(losses_a: list[float], losses_b: list[float],
                    window: int = 25) -> dict:
    """Pair two per-step loss curves and report steps-to-threshold.

    Curves of different lengths are aligned to the shorter one. ``b`` is
    the baseline: the threshold is b's final smoothed loss, and the report
    gives the first step each run's smoothed loss reaches it.
    """
    steps = min(len(losses_a), len(losses_b))
    a = smooth(losses_a[:steps], window)
    b = smooth(losses_b[:steps], window)
    threshold = b[-1]

    def first_reach(curve):
        for i, v in enumerate(curve):
            if v <= threshold:
                return i + 1
        return None

    return {
        "steps": steps,
        "final_a": a[-1],
        "final_b": threshold,
        "first_step_a_reaches_final_b": first_reach(a),
        "first_step_b_reaches_final_b": first_reach(b),
    }


def convergence_csv(losses_a: list[float], losses_b: list[float]) -> str:
    steps = min(len(losses_a), len(losses_b))
    lines = ["step,loss_a,loss_b"]
    for i in range(steps):
        lines.append(f"{i + 1},{losses_a[i]:.6f},{losses_b[i]:.6f}")
    return "\n".join(lines) + "\n"


def parse_convergence_csv(text: str) -> tuple[list[float], list[float]]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if lines[0] != "step,loss_a,loss_b":
        raise ValueError(f"unexpected convergence CSV header: {lines[0]!r}")
    a, b = [], []
    for ln in lines[1:]:
        _, va, vb = ln.split(",")
        a.append(float(va))
        b.append(float(vb))
    return a, b


def convergence_svg(losses_a: list[float], losses_b: list[float],
                    width: int = 720, height: int = 360) -> str:
    """Paired smoothed loss curves as a standalone SVG."""
    steps = min(len(losses_a), len(losses_b))
    a = smooth(losses_a[:steps])
    b = smooth(losses_b[:steps])
    lo = min(min(a), min(b))
    hi = max(max(a), max(b))
    span = (hi - lo) or 1.0
    pad = 40

    def path(curve):
        pts = []
        for i, v in enumerate(curve):
            x = pad + (width - 2 * pad) * (i / max(steps - 1, 1))
            y = height - pad - (height - 2 * pad) * ((v - lo) / span)
            pts.append(f"{x:.1f},{y:.1f}")
        return " ".join(pts)

    return f"""<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">
<rect width="{width}" height="{height}" fill="#ffffff"/>
<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="#333"/>
<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="#333"/>
<text x="{pad}" y="{pad - 14}" font-size="13">smoothed loss (min {lo:.3f}, max {hi:.3f}, {steps} steps)</text>
<polyline points="{path(a)}" fill="none" stroke="#d43f3a" stroke-width="1.6"/>
<polyline points="{path(b)}" fill="none" stroke="#2a6fd4" stroke-width="1.6"/>
<text x="{width - pad - 140}" y="{pad}" font-size="12" fill="#d43f3a">loss_a (tree)</text>
<text x="{width - pad - 140}" y="{pad + 16}" font-size="12" fill="#2a6fd4">loss_b (baseline)</text>
</svg>
"""
