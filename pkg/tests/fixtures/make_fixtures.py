"""Writes the on-disk fixtures with struct/json only (no gtd imports).

Run from this directory: python3 make_fixtures.py
"""

import json
import struct
from pathlib import Path

HERE = Path(__file__).parent


def container(arrays, blob):
    out = bytearray(b"GTD1")
    out += struct.pack("<II", 1, len(arrays))
    for name, (dims, values) in arrays.items():
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BB", 0, len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
        out += struct.pack(f"<{len(values)}d", *values)
    text = blob.encode()
    return bytes(out + struct.pack("<I", len(text)) + text)


def external_dataset():
    d = HERE / "external_dataset"
    d.mkdir(exist_ok=True)
    records = [
        ("vid_a", 0, [0, 0, 1, 1, 2]),
        ("vid_b", 1, [2, 2, 2, 0]),
    ]
    arrays = {}
    lines = []
    for rid, act, labels in records:
        # feature row n = [label, n, 0.5]
        rows = [[float(l), float(n), 0.5] for n, l in enumerate(labels)]
        arrays[rid] = ((len(labels), 3), [v for r in rows for v in r])
        lines.append(json.dumps({"id": rid, "activity": act, "labels": labels, "length": len(labels)}))
    (d / "meta.jsonl").write_text("\n".join(lines) + "\n")
    (d / "features.bin").write_bytes(container(arrays, json.dumps({"kind": "features", "num_classes": 3})))


def prediction_fixture():
    """Two videos, M=2, alpha=0.5, beta=0.5 on length-8 ground truth.

    vid_a: gt future [1,1,2,2]; samples' future [1,1,2,1] (MoC 75) and [1,1,2,2] (MoC 100);
           observed regions identical; futures differ at 1 of 4 frames -> future MFSS 25.
    vid_b: gt future [0,0,0,0]; samples' future [0,0,0,0] (100) and [1,1,0,0] (50);
           observed regions differ at 2 of 4 frames -> observed MFSS 50; future MFSS 50.
    Mean MoC = mean(87.5, 75) = 81.25; Top-1 = mean(100, 100) = 100;
    MFSS observed = mean(0, 50) = 25; MFSS future = mean(25, 50) = 37.5.
    """
    gt = {"vid_a": [0, 0, 1, 1, 1, 1, 2, 2], "vid_b": [2, 2, 2, 2, 0, 0, 0, 0]}
    preds = [
        ("vid_a", 0, [0, 0, 1, 1, 1, 1, 2, 1]),
        ("vid_a", 1, [0, 0, 1, 1, 1, 1, 2, 2]),
        ("vid_b", 0, [2, 2, 2, 2, 0, 0, 0, 0]),
        ("vid_b", 1, [2, 1, 1, 2, 1, 1, 0, 0]),
    ]
    rows = [
        json.dumps({"id": rid, "m": m, "alpha": 0.5, "beta": 0.5, "labels": lab,
                    "observed": lab[:4], "future": lab[4:]})
        for rid, m, lab in preds
    ]
    (HERE / "predictions.jsonl").write_text("\n".join(rows) + "\n")
    d = HERE / "prediction_gt"
    d.mkdir(exist_ok=True)
    meta = [json.dumps({"id": k, "activity": 0, "labels": v, "length": len(v)}) for k, v in gt.items()]
    (d / "meta.jsonl").write_text("\n".join(meta) + "\n")
    arrays = {k: ((len(v), 1), [0.0] * len(v)) for k, v in gt.items()}
    (d / "features.bin").write_bytes(container(arrays, json.dumps({"kind": "features", "num_classes": 3})))


if __name__ == "__main__":
    external_dataset()
    prediction_fixture()
