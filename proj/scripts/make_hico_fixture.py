#!/usr/bin/env python3
"""Builds the HICO-shaped label-space fixture.

The object and verb vocabularies use the standard 80 COCO object names and the
117 HICO verb names. The triplet incidence structure and the per-category
training counts are synthetic: they are generated deterministically and
calibrated so the canonical cardinalities hold exactly (600 triplets, 138
rare categories, a 12-object held-out set covering 100 triplets, a 20-verb
held-out set covering 84 triplets).

Outputs:
  data/hico_label_space.json
  data/hico_zero_shot_presets.json
"""

import json
import random
from pathlib import Path

COCO_OBJECTS = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag",
    "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard",
    "tennis racket", "bottle", "wine glass", "cup", "fork", "knife", "spoon",
    "bowl", "banana", "apple", "sandwich", "orange", "broccoli", "carrot",
    "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote",
    "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
]

HICO_VERBS = [
    "adjust", "assemble", "block", "blow", "board", "break", "brush_with",
    "buy", "carry", "catch", "chase", "check", "clean", "control", "cook",
    "cut", "cut_with", "direct", "drag", "dribble", "drink_with", "drive",
    "dry", "eat", "eat_at", "exit", "feed", "fill", "flip", "flush", "fly",
    "greet", "grind", "groom", "herd", "hit", "hold", "hop_on", "hose", "hug",
    "hunt", "inspect", "install", "jump", "kick", "kiss", "lasso", "launch",
    "lick", "lie_on", "lift", "light", "load", "lose", "make", "milk", "move",
    "no_interaction", "open", "operate", "pack", "paint", "park", "pay",
    "peel", "pet", "pick", "pick_up", "point", "pour", "pull", "push", "race",
    "read", "release", "repair", "ride", "row", "run", "sail", "scratch",
    "serve", "set", "shear", "sign", "sip", "sit_at", "sit_on", "slide",
    "smell", "spin", "squeeze", "stab", "stand_on", "stand_under", "stick",
    "stir", "stop_at", "straddle", "swing", "tag", "talk_on", "teach",
    "text_on", "throw", "tie", "toast", "train", "turn", "type_on", "walk",
    "wash", "watch", "wave", "wear", "wield", "zip",
]

DOUBLED = {"set", "sit", "stab", "zip", "tag", "hug", "cut", "hit", "pet",
           "spin", "stir", "run", "hop", "flip", "drag", "stop", "sip"}


def gerund(verb):
    parts = verb.split("_")
    head, rest = parts[0], parts[1:]
    if head.endswith("ie"):
        g = head[:-2] + "ying"
    elif head.endswith("e") and not head.endswith("ee"):
        g = head[:-1] + "ing"
    elif head in DOUBLED:
        g = head + head[-1] + "ing"
    else:
        g = head + "ing"
    return " ".join([g] + rest)


def article(noun):
    return "an" if noun[0] in "aeiou" else "a"


def spread(rng, n, total, lo, hi):
    """n integers in [lo, hi] that sum to total, deterministic."""
    assert n * lo <= total <= n * hi, (n, total, lo, hi)
    vals = [rng.randint(lo, hi) for _ in range(n)]
    while sum(vals) != total:
        i = rng.randrange(n)
        if sum(vals) > total and vals[i] > lo:
            vals[i] -= 1
        elif sum(vals) < total and vals[i] < hi:
            vals[i] += 1
    return vals


def main():
    assert len(COCO_OBJECTS) == 80, len(COCO_OBJECTS)
    assert len(HICO_VERBS) == 117, len(HICO_VERBS)

    rng = random.Random(20260815)
    no_int = HICO_VERBS.index("no_interaction")
    interacting = [i for i in range(117) if i != no_int]

    # Held-out presets are pinned up front; degree budgets are then solved so
    # the canonical cardinalities hold exactly (100 unseen triplets for the
    # 12 objects, 84 for the 20 verbs).
    obj_order = list(range(80))
    rng.shuffle(obj_order)
    uo_objects = sorted(obj_order[:12])
    verb_order = interacting[:]
    rng.shuffle(verb_order)
    uv_verbs = sorted(verb_order[:20])

    # Interacting degree per object (the no-interaction triplet adds one more).
    obj_deg = [0] * 80
    uo_deg = spread(rng, 12, 100 - 12, 4, 11)
    rest_obj = [o for o in range(80) if o not in uo_objects]
    rest_deg = spread(rng, 68, 520 - (100 - 12), 2, 12)
    for o, d in zip(uo_objects, uo_deg):
        obj_deg[o] = d
    for o, d in zip(rest_obj, rest_deg):
        obj_deg[o] = d

    verb_deg = [0] * 117
    uv_deg = spread(rng, 20, 84, 2, 8)
    rest_verbs = [v for v in interacting if v not in uv_verbs]
    rest_vdeg = spread(rng, 96, 520 - 84, 1, 10)
    for v, d in zip(uv_verbs, uv_deg):
        verb_deg[v] = d
    for v, d in zip(rest_verbs, rest_vdeg):
        verb_deg[v] = d
    assert sum(obj_deg) == sum(verb_deg) == 520

    # Realize the bipartite degree sequence greedily: each object takes the
    # verbs with the largest remaining demand, so no (verb, object) repeats.
    remaining = verb_deg[:]
    pairs = []
    for o in sorted(range(80), key=lambda o: -obj_deg[o]):
        chosen = sorted(interacting, key=lambda v: (-remaining[v], v))[: obj_deg[o]]
        assert all(remaining[v] > 0 for v in chosen), "degree sequence not realizable"
        for v in chosen:
            remaining[v] -= 1
            pairs.append((v, o))
    assert all(r == 0 for r in remaining)

    triplets = [(no_int, o) for o in range(80)] + sorted(pairs)
    assert len(triplets) == 600 and len(set(triplets)) == 600

    # Long-tail training counts with exactly 138 rare categories (< 10).
    ids = list(range(600))
    rng.shuffle(ids)
    counts = [0] * 600
    for k, h in enumerate(ids[:138]):
        counts[h] = 1 + k % 9
    for h in ids[138:]:
        counts[h] = 10 + int(1800 * rng.random() ** 3)
    assert sum(c < 10 for c in counts) == 138

    # Cross-check the advertised cardinalities before writing anything.
    uo_set = set(uo_objects)
    uv_set = set(uv_verbs)
    assert sum(1 for v, o in triplets if o in uo_set) == 100
    assert sum(1 for v, o in triplets if v in uv_set) == 84

    out = {
        "objects": [
            {"id": i, "name": n, "article": article(n)}
            for i, n in enumerate(COCO_OBJECTS)
        ],
        "verbs": [
            {
                "id": i,
                "name": n,
                "gerund": "" if i == no_int else gerund(n),
                "is_no_interaction": i == no_int,
            }
            for i, n in enumerate(HICO_VERBS)
        ],
        "triplets": [
            {"id": i, "verb_id": v, "object_id": o}
            for i, (v, o) in enumerate(triplets)
        ],
        "train_counts": counts,
    }

    root = Path(__file__).resolve().parent.parent
    (root / "data").mkdir(exist_ok=True)
    with open(root / "data" / "hico_label_space.json", "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")
    with open(root / "data" / "hico_zero_shot_presets.json", "w") as f:
        json.dump({"uo_objects": uo_objects, "uv_verbs": uv_verbs}, f, indent=1)
        f.write("\n")
    print("wrote fixture: 600 triplets, 138 rare, UO=100, UV=84")


if __name__ == "__main__":
    main()
