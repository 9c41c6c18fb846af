#!/usr/bin/env python3
# Copyright 2026 The wbnas Authors
# SPDX-License-Identifier: Apache-2.0
"""Writes the synthetic annotation fixtures in this directory.

Floats are kept to two decimals so the files are already in the canonical
form the C++ serializer emits.
"""

import json
import math
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
PARTS = [("keypoints", 17), ("foot_kpts", 6), ("face_kpts", 68), ("lefthand_kpts", 21), ("righthand_kpts", 21)]


def r2(v):
    return float(round(v, 2))


def dump(obj):
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def header(images):
    return dump({"format": "wbnas.wholebody/1", "images": images})


def points_in(rng, box, n, p_unlabeled=0.1):
    x, y, w, h = box
    out = []
    for _ in range(n):
        if rng.random() < p_unlabeled:
            out += [0.0, 0.0, 0]
        else:
            out += [r2(x + w * rng.uniform(0.05, 0.95)), r2(y + h * rng.uniform(0.05, 0.95)), rng.choice([1, 2])]
    return out


def person(rng, ann_id, image, extra=None):
    W, H = image["width"], image["height"]
    bw, bh = r2(rng.uniform(40, 160)), r2(rng.uniform(80, min(260, H - 10)))
    bx, by = r2(rng.uniform(0, W - bw)), r2(rng.uniform(0, H - bh))
    body = [bx, by, bw, bh]
    fs = r2(rng.uniform(10, 40))
    face = [r2(bx + bw / 2 - fs / 2), by, fs, fs]
    hands = []
    for side in (0, 1):
        hs = r2(rng.uniform(8, 30))
        hands.append([r2(bx + side * (bw - hs)), r2(by + bh * 0.5), hs, hs])
    valid = {"face": rng.random() < 0.8, "lefthand": rng.random() < 0.7, "righthand": rng.random() < 0.7}
    rec = {"id": ann_id, "image_id": image["id"]}
    if extra:
        rec.update(extra)
    rec["bbox"] = body
    rec["area"] = r2(bw * bh * 0.6)
    rec["keypoints"] = points_in(rng, body, 17)
    rec["foot_kpts"] = points_in(rng, [bx, by + bh * 0.85, bw, bh * 0.15], 6)
    rec["face_kpts"] = points_in(rng, face, 68) if valid["face"] else [0.0, 0.0, 0] * 68
    rec["lefthand_kpts"] = points_in(rng, hands[0], 21) if valid["lefthand"] else [0.0, 0.0, 0] * 21
    rec["righthand_kpts"] = points_in(rng, hands[1], 21) if valid["righthand"] else [0.0, 0.0, 0] * 21
    rec["face_box"] = face if valid["face"] else [0.0, 0.0, 0.0, 0.0]
    rec["lefthand_box"] = hands[0] if valid["lefthand"] else [0.0, 0.0, 0.0, 0.0]
    rec["righthand_box"] = hands[1] if valid["righthand"] else [0.0, 0.0, 0.0, 0.0]
    rec["face_valid"] = valid["face"]
    rec["lefthand_valid"] = valid["lefthand"]
    rec["righthand_valid"] = valid["righthand"]
    return rec


def ordered(rec):
    keys = ["id", "image_id", "instance_id", "bbox", "area", "score"] + [p for p, _ in PARTS] + [
        "face_box", "lefthand_box", "righthand_box", "face_valid", "lefthand_valid", "righthand_valid"]
    return {k: rec[k] for k in keys if k in rec}


def main():
    rng = random.Random(20260415)
    images = [{"id": i + 1, "width": rng.choice([320, 480, 640]), "height": rng.choice([240, 360, 480]),
               "file_name": f"synthetic_{i + 1:04d}.jpg"} for i in range(8)]
    records = []
    for a in range(40):
        records.append(ordered(person(rng, a + 1, images[a % len(images)])))
    (HERE / "wholebody_small.jsonl").write_text(header(images) + "\n" + "".join(dump(r) + "\n" for r in records))

    # Predictions: ground truth jittered by a few pixels, one score each.
    preds = []
    for r in records:
        p = dict(r)
        p["score"] = r2(rng.uniform(0.3, 1.0))
        for name, n in PARTS:
            vals = list(r[name])
            for i in range(n):
                if vals[3 * i + 2] > 0:
                    vals[3 * i] = r2(vals[3 * i] + rng.uniform(-2, 2))
                    vals[3 * i + 1] = r2(vals[3 * i + 1] + rng.uniform(-2, 2))
            p[name] = vals
        p.pop("area")
        preds.append(ordered(p))
    (HERE / "predictions_small.jsonl").write_text(header(images) + "\n" + "".join(dump(r) + "\n" for r in preds))

    # Broken records: one of each diagnostic the parser reports.
    good = [records[0], records[1], records[2]]
    short = dict(records[3])
    short["face_kpts"] = short["face_kpts"][:-3]
    zero_face = dict(records[4])
    zero_face["face_valid"] = True
    zero_face["face_box"] = [10.0, 10.0, 0.0, 12.0]
    bad_v = dict(records[5])
    bad_v["keypoints"] = list(bad_v["keypoints"])
    bad_v["keypoints"][2] = 3
    lines = [dump(r) for r in good] + [dump(short), dump(zero_face), '{"id": 99, "image_id":', dump(bad_v)]
    (HERE / "wholebody_diagnostics.jsonl").write_text(header(images) + "\n" + "\n".join(lines) + "\n")

    # Repeated labelings: 12 people, 3 annotators each, every keypoint labeled
    # by at least two of them.
    rep_images = [{"id": 1, "width": 640, "height": 480, "file_name": "repeat_0001.jpg"}]
    rep = []
    ann_id = 1
    for inst in range(12):
        base = person(rng, 0, rep_images[0])
        base["face_valid"] = base["lefthand_valid"] = base["righthand_valid"] = True
        base["face_box"] = base["face_box"] if base["face_box"][2] > 0 else [100.0, 100.0, 20.0, 20.0]
        base["lefthand_box"] = base["lefthand_box"] if base["lefthand_box"][2] > 0 else [80.0, 200.0, 15.0, 15.0]
        base["righthand_box"] = base["righthand_box"] if base["righthand_box"][2] > 0 else [180.0, 200.0, 15.0, 15.0]
        scale = math.sqrt(base["area"])
        truth = {}
        for name, n in PARTS:
            truth[name] = [(r2(rng.uniform(50, 550)), r2(rng.uniform(50, 400))) for _ in range(n)]
        for a in range(3):
            rec = dict(base)
            rec["id"] = ann_id
            rec["instance_id"] = inst + 1
            ann_id += 1
            for name, n in PARTS:
                vals = []
                for i, (x, y) in enumerate(truth[name]):
                    if a == 2 and (i + inst) % 5 == 0:
                        vals += [0.0, 0.0, 0]
                    else:
                        spread = 0.01 * scale * (1 + (i % 4))
                        vals += [r2(x + rng.gauss(0, spread)), r2(y + rng.gauss(0, spread)), 2]
                rec[name] = vals
            rep.append(ordered(rec))
    (HERE / "repeated_annotations.jsonl").write_text(header(rep_images) + "\n" + "".join(dump(r) + "\n" for r in rep))


if __name__ == "__main__":
    main()
