#!/usr/bin/env python3
"""Writes the 64-pair template corpus under data/toy (train.en / train.pcm)."""

import pathlib

SUBJECTS = [
    ("I am", "I"),
    ("you are", "you"),
    ("he is", "e"),
    ("we are", "we"),
    ("you all are", "una"),
    ("they are", "dem"),
    ("my father is", "my papa"),
    ("my mother is", "my mama"),
]
PLACES = [("the market", "market"), ("the church", "church"), ("school", "school"), ("the farm", "farm")]
FOODS = [("rice", "rice"), ("beans", "beans"), ("yam", "yam"), ("bread", "bread")]


def main() -> None:
    pairs = []
    for en_subject, pcm_subject in SUBJECTS:
        for en_place, pcm_place in PLACES:
            pairs.append((f"{en_subject} going to {en_place} .", f"{pcm_subject} dey go {pcm_place} ."))
        for en_food, pcm_food in FOODS:
            pairs.append((f"{en_subject} eating {en_food} now .", f"{pcm_subject} dey chop {pcm_food} now now ."))
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "toy"
    out.mkdir(parents=True, exist_ok=True)
    (out / "train.en").write_text("".join(en + "\n" for en, _ in pairs), encoding="utf-8")
    (out / "train.pcm").write_text("".join(pcm + "\n" for _, pcm in pairs), encoding="utf-8")


if __name__ == "__main__":
    main()
