"""Synthetic compositional referring-expression world.

Scenes are grids of colored shapes; queries come from a template grammar
that also emits its own gold dependency tree, so no statistical parser is
ever needed. Simple templates mention attributes only; compositional
templates chain two relations ("the X <rel> the Y that is <rel> the Z")
and are generated so that attributes alone cannot identify the referent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
import numpy as np

from .conllu import DepTree, parse_conllu, serialize_conllu

GRID = 6
CELL_PX = 16
IMAGE_PX = GRID * CELL_PX
MAX_OBJECTS = 12

SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "blue", "green", "yellow")
SIZES = ("small", "big")
RELATIONS = ("holding", "left of", "right of", "above", "below")

SPLITS = ("pretrain", "tune_train", "tune_val", "tune_test_simple", "tune_test_compositional")
DEFAULT_SIZES = {
    "pretrain": 20000,
    "tune_train": 8000,
    "tune_val": 1000,
    "tune_test_simple": 1000,
    "tune_test_compositional": 1000,
}


class DegenerateBox(ValueError):
    pass


class UnsatisfiableTemplate(RuntimeError):
    pass


@dataclass
class SceneObject:
    shape: str
    color: str
    size: str
    cell: tuple[int, int]  # (row, col)
    held_item: int | None = None
    box: tuple[int, int, int, int] = (0, 0, 0, 0)


@dataclass
class SyntheticScene:
    objects: list[SceneObject]
    grid: int = GRID
    image_px: int = IMAGE_PX

    def boxes(self) -> list[tuple[int, int, int, int]]:
        return [o.box for o in self.objects]


@dataclass
class AttrDesc:
    """Partial attribute description; None fields are wildcards."""

    shape: str
    color: str | None = None
    size: str | None = None

    def matches(self, obj: SceneObject) -> bool:
        return (
            obj.shape == self.shape
            and (self.color is None or obj.color == self.color)
            and (self.size is None or obj.size == self.size)
        )

    def tokens(self) -> list[str]:
        out = ["the"]
        if self.size:
            out.append(self.size)
        if self.color:
            out.append(self.color)
        out.append(self.shape)
        return out


@dataclass
class GroundingExample:
    example_id: str
    split: str
    tokens: list[str]
    tree: DepTree
    scene: SyntheticScene
    gold_region: int
    requires_relation: bool = False

    @property
    def gold_box(self) -> tuple[int, int, int, int]:
        return self.scene.objects[self.gold_region].box


def iou(a, b) -> float:
    """Intersection-over-union of two (x1, y1, x2, y2) boxes."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    if ax1 >= ax2 or ay1 >= ay2 or bx1 >= bx2 or by1 >= by2:
        raise DegenerateBox(f"boxes must have positive area: {a}, {b}")
    ix = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    iy = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = ix * iy
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def relation_holds(a: SceneObject, rel: str, b_index: int, scene: SyntheticScene) -> bool:
    b = scene.objects[b_index]
    ar, ac = a.cell
    br, bc = b.cell
    if rel == "holding":
        return a.held_item == b_index
    if rel == "left of":
        return ar == br and ac < bc
    if rel == "right of":
        return ar == br and ac > bc
    if rel == "above":
        return ac == bc and ar < br
    if rel == "below":
        return ac == bc and ar > br
    raise ValueError(f"unknown relation {rel!r}")


def attr_satisfiers(scene: SyntheticScene, desc: AttrDesc) -> list[int]:
    return [i for i, o in enumerate(scene.objects) if desc.matches(o)]


def query_satisfiers(scene: SyntheticScene, x: AttrDesc, rel1: str, y: AttrDesc,
                     rel2: str, z: AttrDesc) -> list[int]:
    """Objects matching x that stand in rel1 to some y-match that stands in
    rel2 to some z-match."""
    z_set = attr_satisfiers(scene, z)
    y_set = [
        yi
        for yi in attr_satisfiers(scene, y)
        if any(relation_holds(scene.objects[yi], rel2, zi, scene) for zi in z_set if zi != yi)
    ]
    return [
        xi
        for xi in attr_satisfiers(scene, x)
        if any(relation_holds(scene.objects[xi], rel1, yi, scene) for yi in y_set if yi != xi)
    ]


# ---------------------------------------------------------------------------
# scene construction


def _make_box(cell: tuple[int, int], size: str, rng: np.random.Generator):
    row, col = cell
    cx = col * CELL_PX + CELL_PX // 2
    cy = row * CELL_PX + CELL_PX // 2
    half = 4 if size == "small" else 6
    jitter = 1 if size == "big" else 2
    dx = int(rng.integers(-jitter, jitter + 1))
    dy = int(rng.integers(-jitter, jitter + 1))
    return (cx + dx - half, cy + dy - half, cx + dx + half, cy + dy + half)


def _random_object(cell, rng) -> SceneObject:
    size = str(rng.choice(SIZES))
    return SceneObject(
        shape=str(rng.choice(SHAPES)),
        color=str(rng.choice(COLORS)),
        size=size,
        cell=cell,
        box=(0, 0, 0, 0),
    )


def _finalize_scene(objects: list[SceneObject], rng) -> SyntheticScene:
    for o in objects:
        o.box = _make_box(o.cell, o.size, rng)
    scene = SyntheticScene(objects)
    assert len(objects) <= MAX_OBJECTS
    for o in objects:
        x1, y1, x2, y2 = o.box
        assert 0 <= x1 < x2 <= IMAGE_PX and 0 <= y1 < y2 <= IMAGE_PX
    # region ranking is exact-match scoring: no two regions may overlap at
    # or above the correctness threshold
    boxes = scene.boxes()
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            assert iou(boxes[i], boxes[j]) < 0.5
    return scene


def _sample_cells(rng, n: int) -> list[tuple[int, int]]:
    flat = rng.choice(GRID * GRID, size=n, replace=False)
    return [(int(i) // GRID, int(i) % GRID) for i in flat]


def _random_desc(obj: SceneObject, rng, p_color=0.7, p_size=0.3) -> AttrDesc:
    return AttrDesc(
        shape=obj.shape,
        color=obj.color if rng.random() < p_color else None,
        size=obj.size if rng.random() < p_size else None,
    )


# ---------------------------------------------------------------------------
# gold trees


def _tree_from_rows(rows: list[tuple[str, str, str, int]], sentence_id: str) -> DepTree:
    """rows: (word, pos, dep, head). Built through the validator."""
    conllu_rows = [
        "\t".join([str(i), w, "_", p, "_", "_", str(h), d, "_", "_"])
        for i, (w, p, d, h) in enumerate(rows, start=1)
    ]
    text = f"# sent_id = {sentence_id}\n" + "\n".join(conllu_rows) + "\n"
    (tree,) = parse_conllu(text)
    return tree


def _simple_tree(desc: AttrDesc, sentence_id: str) -> tuple[list[str], DepTree]:
    tokens = desc.tokens()
    head = len(tokens)  # the shape word
    rows = [("the", "DET", "det", head)]
    if desc.size:
        rows.append((desc.size, "ADJ", "amod", head))
    if desc.color:
        rows.append((desc.color, "ADJ", "amod", head))
    rows.append((desc.shape, "NOUN", "root", 0))
    return tokens, _tree_from_rows(rows, sentence_id)


def _np_rows(desc: AttrDesc, head_dep: str, head_of_np: int, start: int):
    """Noun-phrase rows for "the [size] [color] shape"; returns (rows,
    index of the shape word)."""
    rows = []
    n_attrs = (1 if desc.size else 0) + (1 if desc.color else 0)
    shape_idx = start + 2 + n_attrs  # "the", attrs, then the shape word
    rows.append(("the", "DET", "det", shape_idx))
    if desc.size:
        rows.append((desc.size, "ADJ", "amod", shape_idx))
    if desc.color:
        rows.append((desc.color, "ADJ", "amod", shape_idx))
    rows.append((desc.shape, "NOUN", head_dep, head_of_np))
    return rows, shape_idx


def _relation_rows(rel: str, attach_to: int, start: int, relcl: bool):
    """Rows for the relation words; returns (rows, index noun attaches to,
    noun dep label)."""
    acl_label = "acl:relcl" if relcl else "acl"
    if rel == "holding":
        return [("holding", "VERB", acl_label, attach_to)], start + 1, "dobj"
    if rel in ("above", "below"):
        label = acl_label if relcl else "prep"
        return [(rel, "ADP", label, attach_to)], start + 1, "pobj"
    word = rel.split()[0]  # left / right
    label = acl_label if relcl else "amod"
    return (
        [(word, "ADJ", label, attach_to), ("of", "ADP", "prep", start + 1)],
        start + 2,
        "pobj",
    )


def _compositional_tree(x: AttrDesc, rel1: str, y: AttrDesc, rel2: str, z: AttrDesc,
                        sentence_id: str) -> tuple[list[str], DepTree]:
    """Tokens and gold tree for "the X <rel1> the Y that is <rel2> the Z"."""
    rows: list[tuple[str, str, str, int]] = []

    x_rows, x_head = _np_rows(x, "root", 0, start=0)
    rows.extend(x_rows)

    rel1_rows, y_attach, y_dep = _relation_rows(rel1, x_head, start=len(rows), relcl=False)
    rows.extend(rel1_rows)

    y_rows, y_head = _np_rows(y, y_dep, y_attach, start=len(rows))
    rows.extend(y_rows)

    that_idx = len(rows) + 1
    rel_head = that_idx + 2  # first relation word after "that is"
    rows.append(("that", "PRON", "nsubj", rel_head))
    rows.append(("is", "AUX", "cop", rel_head))

    rel2_rows, z_attach, z_dep = _relation_rows(rel2, y_head, start=len(rows), relcl=True)
    rows.extend(rel2_rows)

    z_rows, _ = _np_rows(z, z_dep, z_attach, start=len(rows))
    rows.extend(z_rows)

    tokens = [r[0] for r in rows]
    return tokens, _tree_from_rows(rows, sentence_id)


# ---------------------------------------------------------------------------
# example generation


def _place_related(rel: str, target_cell, taken: set, rng):
    """A cell standing in ``rel`` to target_cell, or None."""
    row, col = target_cell
    if rel == "holding":
        free = [c for c in _all_cells() if c not in taken]
        return free[int(rng.integers(len(free)))] if free else None
    if rel == "left of":
        options = [(row, c) for c in range(0, col)]
    elif rel == "right of":
        options = [(row, c) for c in range(col + 1, GRID)]
    elif rel == "above":
        options = [(r, col) for r in range(0, row)]
    else:  # below
        options = [(r, col) for r in range(row + 1, GRID)]
    options = [c for c in options if c not in taken]
    return options[int(rng.integers(len(options)))] if options else None


def _all_cells():
    return [(r, c) for r in range(GRID) for c in range(GRID)]


def make_simple_example(rng, example_id: str, split: str,
                        max_retries: int = 60) -> GroundingExample:
    for _ in range(max_retries):
        n = int(rng.integers(5, 11))
        cells = _sample_cells(rng, n)
        objects = [_random_object(c, rng) for c in cells]
        gold = int(rng.integers(n))
        desc = _random_desc(objects[gold], rng, p_color=0.85, p_size=0.35)
        scene_tmp = SyntheticScene(objects)
        if attr_satisfiers(scene_tmp, desc) != [gold]:
            continue
        scene = _finalize_scene(objects, rng)
        tokens, tree = _simple_tree(desc, example_id)
        return GroundingExample(example_id, split, tokens, tree, scene, gold)
    raise UnsatisfiableTemplate(f"no unique simple referent after retries ({example_id})")


def make_compositional_example(rng, example_id: str, split: str,
                               max_retries: int = 80) -> GroundingExample:
    for _ in range(max_retries):
        rel1 = str(rng.choice(RELATIONS))
        rel2 = str(rng.choice(RELATIONS))

        taken: set = set()
        z_cell = _all_cells()[int(rng.integers(GRID * GRID))]
        taken.add(z_cell)
        y_cell = _place_related(rel2, z_cell, taken, rng)
        if y_cell is None:
            continue
        taken.add(y_cell)
        x_cell = _place_related(rel1, y_cell, taken, rng)
        if x_cell is None:
            continue
        taken.add(x_cell)

        z_obj = _random_object(z_cell, rng)
        y_obj = _random_object(y_cell, rng)
        x_obj = _random_object(x_cell, rng)
        objects = [x_obj, y_obj, z_obj]
        held_targets: dict[int, SceneObject] = {}  # id(holder) -> held object
        if rel1 == "holding":
            held_targets[id(x_obj)] = y_obj
        if rel2 == "holding":
            held_targets[id(y_obj)] = z_obj

        # decoys sharing the referent's full attribute description force
        # relation resolution
        n_decoys = int(rng.integers(1, 3))
        n_fillers = int(rng.integers(1, 4))
        free = [c for c in _all_cells() if c not in taken]
        rng.shuffle(free)
        for cell in free[:n_decoys]:
            objects.append(
                SceneObject(x_obj.shape, x_obj.color, x_obj.size, cell)
            )
        for cell in free[n_decoys : n_decoys + n_fillers]:
            filler = _random_object(cell, rng)
            if rng.random() < 0.25:
                held_targets[id(filler)] = objects[int(rng.integers(len(objects)))]
            objects.append(filler)
        if len(objects) > MAX_OBJECTS:
            continue

        rng.shuffle(objects)
        index_of = {id(o): i for i, o in enumerate(objects)}
        gold = index_of[id(x_obj)]
        for o in objects:
            if id(o) in held_targets:
                o.held_item = index_of[id(held_targets[id(o)])]

        x_desc = _random_desc(x_obj, rng)
        y_desc = _random_desc(y_obj, rng)
        z_desc = _random_desc(z_obj, rng)

        scene_tmp = SyntheticScene(objects)
        if query_satisfiers(scene_tmp, x_desc, rel1, y_desc, rel2, z_desc) != [gold]:
            continue
        if len(attr_satisfiers(scene_tmp, x_desc)) < 2:
            continue

        scene = _finalize_scene(objects, rng)
        tokens, tree = _compositional_tree(x_desc, rel1, y_desc, rel2, z_desc, example_id)
        return GroundingExample(
            example_id, split, tokens, tree, scene, gold, requires_relation=True
        )
    raise UnsatisfiableTemplate(f"no unique compositional referent after retries ({example_id})")


@dataclass
class Dataset:
    splits: dict[str, list[GroundingExample]] = field(default_factory=dict)
    seed: int = 0

    def __getitem__(self, split: str) -> list[GroundingExample]:
        return self.splits[split]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for split in SPLITS:
                for ex in self.splits.get(split, []):
                    f.write(json.dumps(_example_to_json(ex), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        ds = cls()
        with open(path, encoding="utf-8") as f:
            for line in f:
                ex = _example_from_json(json.loads(line))
                ds.splits.setdefault(ex.split, []).append(ex)
        return ds


def gen_dataset(seed: int, sizes: dict[str, int] | None = None) -> Dataset:
    """Deterministic dataset generation; every example draws from its own
    (seed, split, index) random stream."""
    sizes = dict(DEFAULT_SIZES if sizes is None else sizes)
    ds = Dataset(seed=seed)
    for split_idx, split in enumerate(SPLITS):
        count = sizes.get(split, 0)
        examples = []
        simple = split in ("pretrain", "tune_test_simple")
        for i in range(count):
            rng = np.random.default_rng((seed, split_idx, i))
            example_id = f"{split}-{i:05d}"
            if simple:
                examples.append(make_simple_example(rng, example_id, split))
            else:
                examples.append(make_compositional_example(rng, example_id, split))
        ds.splits[split] = examples
    return ds


def _example_to_json(ex: GroundingExample) -> dict:
    return {
        "id": ex.example_id,
        "split": ex.split,
        "tokens": ex.tokens,
        "conllu": serialize_conllu(ex.tree),
        "scene": {
            "grid": ex.scene.grid,
            "image_px": ex.scene.image_px,
            "objects": [
                {
                    "shape": o.shape,
                    "color": o.color,
                    "size": o.size,
                    "cell": list(o.cell),
                    "held_item": o.held_item,
                    "box": list(o.box),
                }
                for o in ex.scene.objects
            ],
        },
        "gold_region": ex.gold_region,
        "gold_box": list(ex.gold_box),
        "requires_relation": ex.requires_relation,
    }


def _example_from_json(blob: dict) -> GroundingExample:
    objects = [
        SceneObject(
            o["shape"], o["color"], o["size"], tuple(o["cell"]), o["held_item"],
            tuple(o["box"]),
        )
        for o in blob["scene"]["objects"]
    ]
    (tree,) = parse_conllu(blob["conllu"])
    return GroundingExample(
        blob["id"],
        blob["split"],
        list(blob["tokens"]),
        tree,
        SyntheticScene(objects, blob["scene"]["grid"], blob["scene"]["image_px"]),
        blob["gold_region"],
        blob.get("requires_relation", False),
    )
