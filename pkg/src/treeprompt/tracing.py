"""Per-node reasoning traces and static trace reports.

Each tree node's intermediate prompt is probed on its own: the single
prompt row goes through the trained fusion against the global prompt and
the frozen backbone predicts a box from it. The exported JSON validates
against the shipped schema; the HTML report is a static SVG page with the
three module kinds in their legend colors (Enti red, Rel green, Leaf
blue) and needs no scripting to view.
"""

from __future__ import annotations

import html
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import autodiff as ad
from .backbone import ToyBackbone, score_regions
from .injection import PromptBundle, PromptMode, add_to_global, expand_multi_layer
from .tree_model import NodePrompt, fuse_with_global
from .training import PromptSide
from .world import GroundingExample, iou

MODULE_COLORS = {"enti": "#d43f3a", "rel": "#2e8b57", "leaf": "#2a6fd4"}
H_PREVIEW_DIMS = 8


class IoFailure(OSError):
    pass


@dataclass
class NodeTrace:
    index: int
    word: str
    module: str
    probe_box: tuple
    probe_iou: float
    children: tuple[int, ...] = ()
    h_preview: tuple[float, ...] = field(default_factory=tuple)


def _probe_bundle(side: PromptSide, h: ad.Tensor) -> PromptBundle:
    """Prompt delivery for a single intermediate prompt row.

    The row is fused through the trained attention against G exactly like
    a full tree prompt, just with H replaced by this one row (plus the
    first position row), keeping the probe inside the trained
    distribution.
    """
    h1 = ad.add(ad.stack_rows([h]), ad.slice_rows(side.model.pos_embedding, 0, 1))
    p = fuse_with_global(h1, side.model.g, side.model.fusion)
    if side.config.prompt_mode == "input":
        return PromptBundle(PromptMode.INPUT, p=p)
    stack = add_to_global(expand_multi_layer(p, side.expansion), side.frozen_global)
    return PromptBundle(PromptMode.MULTI, p_stack=stack)


def probe_node(node_prompt: NodePrompt, example: GroundingExample,
               side: PromptSide, backbone: ToyBackbone):
    """Box the frozen backbone predicts from this node's prompt alone."""
    bundle = _probe_bundle(side, node_prompt.h)
    _, _, box = score_regions(backbone, side.word_table(), example, bundle)
    return box


def build_traces(example: GroundingExample, side: PromptSide,
                 backbone: ToyBackbone) -> tuple[list[NodeTrace], dict]:
    """One NodeTrace per tree node plus the full-model prediction."""
    prompts = side.model.node_prompts(example.tree)
    traces = []
    for p in prompts:
        box = probe_node(p, example, side, backbone)
        node = example.tree.node(p.index)
        traces.append(
            NodeTrace(
                index=p.index,
                word=node.word,
                module=p.kind.value,
                probe_box=tuple(box),
                probe_iou=iou(box, example.gold_box),
                children=node.children,
                h_preview=tuple(
                    round(float(v), 6) for v in p.h.data[:H_PREVIEW_DIMS]
                ),
            )
        )
    _, _, full_box = score_regions(
        backbone, side.word_table(), example, side.bundle(example)
    )
    prediction = {
        "box": list(full_box),
        "correct": iou(full_box, example.gold_box) > 0.5,
    }
    return traces, prediction


def trace_document(example: GroundingExample, traces: list[NodeTrace],
                   prediction: dict, include_h: bool = True) -> dict:
    """Schema-conforming JSON document; empty optional fields are omitted."""
    nodes = []
    for t in sorted(traces, key=lambda t: t.index):
        node = {
            "index": t.index,
            "word": t.word,
            "module": t.module,
            "probe_box": [float(v) for v in t.probe_box],
            "iou": round(float(t.probe_iou), 6),
        }
        if t.children:
            node["children"] = list(t.children)
        if include_h and t.h_preview:
            node["h"] = list(t.h_preview)
        nodes.append(node)
    edges = [
        [n.head, n.index] for n in example.tree.nodes if n.head != 0
    ]
    return {
        "sentence": " ".join(example.tokens),
        "sentence_id": example.tree.sentence_id,
        "edges": edges,
        "nodes": nodes,
        "scene": {
            "image_px": example.scene.image_px,
            "boxes": [list(b) for b in example.scene.boxes()],
            "labels": [
                f"{o.size} {o.color} {o.shape}" for o in example.scene.objects
            ],
            "gold_box": list(example.gold_box),
        },
        "prediction": prediction,
    }


def export_trace(example: GroundingExample, traces: list[NodeTrace],
                 prediction: dict, out_dir) -> tuple[Path, Path]:
    """Write trace.json and trace.html under ``out_dir``."""
    out_dir = Path(out_dir)
    doc = trace_document(example, traces, prediction)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / "trace.json"
        html_path = out_dir / "trace.html"
        json_path.write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        html_path.write_text(render_html(doc), encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"could not write trace outputs under {out_dir}: {e}") from e
    return json_path, html_path


# ---------------------------------------------------------------------------
# static HTML/SVG rendering (pure function of the JSON document)


def _tree_layout(doc: dict) -> dict[int, tuple[float, float]]:
    children: dict[int, list[int]] = {}
    indices = [n["index"] for n in doc["nodes"]]
    heads = {child: head for head, child in doc["edges"]}
    for head, child in doc["edges"]:
        children.setdefault(head, []).append(child)
    root = next(i for i in indices if i not in heads)
    depth = {root: 0}
    queue = [root]
    while queue:
        i = queue.pop(0)
        for c in sorted(children.get(i, [])):
            depth[c] = depth[i] + 1
            queue.append(c)
    return {i: (40 + (i - 1) * 78, 36 + depth[i] * 64) for i in indices}


def render_html(doc: dict) -> str:
    """Deterministic static report from a trace document."""
    pos = _tree_layout(doc)
    scale = 3
    px = doc["scene"]["image_px"] * scale

    svg_tree = []
    width = max(x for x, _ in pos.values()) + 60
    height = max(y for _, y in pos.values()) + 50
    for head, child in doc["edges"]:
        x1, y1 = pos[head]
        x2, y2 = pos[child]
        svg_tree.append(
            f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#999"/>'
        )
    for node in doc["nodes"]:
        x, y = pos[node["index"]]
        color = MODULE_COLORS[node["module"]]
        word = html.escape(node["word"])
        svg_tree.append(
            f'<circle cx="{x}" cy="{y}" r="17" fill="{color}" class="{node["module"]}"/>'
        )
        svg_tree.append(
            f'<text x="{x}" y="{y + 32}" text-anchor="middle" class="word">{word}</text>'
        )
        svg_tree.append(
            f'<text x="{x}" y="{y + 4}" text-anchor="middle" class="iou">'
            f'{node["iou"]:.2f}</text>'
        )

    svg_scene = [
        f'<rect x="0" y="0" width="{px}" height="{px}" fill="#fafafa" stroke="#333"/>'
    ]
    for i, box in enumerate(doc["scene"]["boxes"]):
        x1, y1, x2, y2 = (v * scale for v in box)
        label = html.escape(doc["scene"].get("labels", [""] * (i + 1))[i])
        svg_scene.append(
            f'<rect x="{x1}" y="{y1}" width="{x2 - x1}" height="{y2 - y1}" '
            f'fill="none" stroke="#888"><title>{label}</title></rect>'
        )
    gx1, gy1, gx2, gy2 = (v * scale for v in doc["scene"]["gold_box"])
    svg_scene.append(
        f'<rect x="{gx1}" y="{gy1}" width="{gx2 - gx1}" height="{gy2 - gy1}" '
        f'fill="none" stroke="#111" stroke-width="2" stroke-dasharray="6 3"/>'
    )
    bx1, by1, bx2, by2 = (v * scale for v in doc["prediction"]["box"])
    svg_scene.append(
        f'<rect x="{bx1}" y="{by1}" width="{bx2 - bx1}" height="{by2 - by1}" '
        f'fill="none" stroke="#e08b00" stroke-width="2"/>'
    )

    rows = []
    for node in doc["nodes"]:
        rows.append(
            "<tr>"
            f'<td>{node["index"]}</td>'
            f'<td>{html.escape(node["word"])}</td>'
            f'<td><span class="chip {node["module"]}">{node["module"]}</span></td>'
            f'<td>{node["probe_box"]}</td>'
            f'<td>{node["iou"]:.3f}</td>'
            "</tr>"
        )

    verdict = "correct" if doc["prediction"]["correct"] else "incorrect"
    return f"""<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>trace: {html.escape(doc["sentence_id"])}</title>
<style>
body {{ font-family: sans-serif; margin: 24px; color: #222; }}
.word {{ font-size: 13px; }}
.iou {{ font-size: 10px; fill: #fff; }}
.legend span, .chip {{ padding: 2px 8px; border-radius: 9px; color: #fff; font-size: 12px; }}
.enti {{ background: {MODULE_COLORS["enti"]}; }}
.rel {{ background: {MODULE_COLORS["rel"]}; }}
.leaf {{ background: {MODULE_COLORS["leaf"]}; }}
table {{ border-collapse: collapse; margin-top: 12px; }}
td, th {{ border: 1px solid #ccc; padding: 4px 10px; font-size: 13px; }}
.panel {{ display: inline-block; vertical-align: top; margin-right: 32px; }}
</style>
</head>
<body>
<h1>{html.escape(doc["sentence"])}</h1>
<p class="legend">modules:
<span class="enti">enti</span>
<span class="rel">rel</span>
<span class="leaf">leaf</span>
&mdash; full prediction is <strong>{verdict}</strong>
(gold dashed, prediction orange)</p>
<div class="panel">
<h2>prompt tree</h2>
<svg width="{width}" height="{height}" xmlns="http://www.w3.org/2000/svg">
{chr(10).join(svg_tree)}
</svg>
</div>
<div class="panel">
<h2>scene</h2>
<svg width="{px}" height="{px}" xmlns="http://www.w3.org/2000/svg">
{chr(10).join(svg_scene)}
</svg>
</div>
<h2>per-node probes</h2>
<table>
<tr><th>#</th><th>word</th><th>module</th><th>probe box</th><th>IoU vs gold</th></tr>
{chr(10).join(rows)}
</table>
</body>
</html>
"""
