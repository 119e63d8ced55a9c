#!/usr/bin/env python3
"""Regenerates the test fixtures in this directory.

Run from anywhere: python3 tests/fixtures/make_fixtures.py
Output is deterministic.
"""

import csv
import io
import json
import random
import struct
from pathlib import Path

HERE = Path(__file__).resolve().parent
HEADER = ["Name of the shop place", "Title of the review", "Review", "Rate"]

GOOD = ["good", "great", "tea", "food", "service", "market", "price", "cheap", "Good", "markets"]
BAD = ["bad", "terrible", "awful", "dirty", "noisy", "price", "service", "the", "food"]
MID = ["okay", "the", "market", "mint", "tea", "price", "stall", "Service"]


def review(rng, rate):
    pool = BAD if rate <= 2 else MID if rate == 3 else GOOD
    return " ".join(rng.choice(pool) for _ in range(rng.randint(4, 9)))


def title(rng, rate):
    return {1: "Awful", 2: "Not great", 3: "Okay visit", 4: "Nice", 5: "Great stall"}[rate] + (
        "" if rng.random() < 0.7 else ", really")


def write_csv(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def corpus_100():
    rng = random.Random(100)
    rows = []
    rates = [1] * 10 + [2] * 10 + [3] * 20 + [4] * 15 + [5] * 25
    for r in rates:
        rows.append(["Jemaa El-Fena", title(rng, r), review(rng, r), str(r)])
    for i in range(12):
        r = 1 + i % 5
        rows.append(["Souk Semmarine", title(rng, r), review(rng, r), str(r)])
    for i in range(8):
        r = 1 + (i * 2) % 5
        rows.append(["Ensemble Artisanal", title(rng, r), review(rng, r), str(r)])
    rng.shuffle(rows)
    # Exercise quoting: padded place names, an embedded comma and a
    # multi-line review on rows of the dominant place.
    jemaa = [i for i, row in enumerate(rows) if row[0] == "Jemaa El-Fena"]
    rows[jemaa[0]][0] = "  Jemaa El-Fena "
    rows[jemaa[1]][2] = "tea, then more tea"
    rows[jemaa[2]][2] = "first line\nsecond line"
    write_csv(HERE / "corpus_100.csv", rows)


def corpus_smoke():
    rng = random.Random(50)
    rows = []
    rates = [1, 2, 3, 4, 5] * 9 + [5]
    for r in rates:
        rows.append(["Jemaa El-Fena", title(rng, r), review(rng, r), str(r)])
    for r in [1, 3, 5, 4]:
        rows.append(["Souk Semmarine", title(rng, r), review(rng, r), str(r)])
    rng.shuffle(rows)
    write_csv(HERE / "corpus_smoke.csv", rows)


DIM = 8
TABLES = {
    "emb_a.glove.txt": ("glove", ["the", "good", "bad", "food", "service", "tea", "market",
                                   "price", "great", "terrible"]),
    "emb_b.vec": ("fasttext", ["the", "Good", "bad", "food", "Service", "mint", "markets",
                               "price", "okay", "noisy"]),
    "emb_c.bin": ("w2v-bin", ["the", "good", "awful", "food", "service", "tea", "market",
                              "cheap", "great", "dirty"]),
}


def dyadic_rows(rng, n):
    # Multiples of 1/64 in [-1, 1] are exact in float32 and in decimal.
    return [[rng.randint(-64, 64) / 64 for _ in range(DIM)] for _ in range(n)]


def fmt(v):
    return repr(v)


def embeddings():
    rng = random.Random(8)
    expected = {}
    for name, (kind, words) in TABLES.items():
        rows = dyadic_rows(rng, len(words))
        path = HERE / name
        if kind == "glove":
            path.write_text("".join(w + " " + " ".join(fmt(v) for v in r) + "\n"
                                    for w, r in zip(words, rows)))
        elif kind == "fasttext":
            path.write_text(f"{len(words)} {DIM}\n" +
                            "".join(w + " " + " ".join(fmt(v) for v in r) + " \n"
                                    for w, r in zip(words, rows)))
        else:
            data = bytearray(f"{len(words)} {DIM}\n".encode())
            for w, r in zip(words, rows):
                data += w.encode() + b" " + struct.pack("<" + "f" * DIM, *r) + b"\n"
            path.write_bytes(bytes(data))
        expected[name] = {"format": kind, "dim": DIM, "tokens": words, "rows": rows}
    (HERE / "embeddings_expected.json").write_text(json.dumps(expected, indent=1) + "\n")


if __name__ == "__main__":
    corpus_100()
    corpus_smoke()
    embeddings()
