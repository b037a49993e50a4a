"""Regenerates the bundled toy corpus and toy generated-summary files.

    python3 make_toy.py

Output is deterministic for a given seed.
"""
import json
import random

SEED = 20240607
N_TRAIN, N_VAL, N_TEST = 30, 10, 10

SUBJECTS = ["council", "minister", "company", "police", "researchers", "villagers",
            "engineers", "committee", "farmers", "students", "officials", "doctors"]
VERBS = ["announced", "rejected", "approved", "investigated", "delayed", "funded",
         "criticised", "welcomed", "reported", "completed", "proposed", "cancelled"]
OBJECTS = ["bridge", "budget", "hospital", "railway", "festival", "contract",
           "election", "harbour", "library", "pipeline", "stadium", "vaccine"]
PLACES = ["northern", "coastal", "central", "eastern", "western", "southern"]
FOREIGN = ["volcano", "spacecraft", "treasure", "dinosaur", "submarine", "glacier",
           "orchestra", "tornado", "lottery", "penguin"]


def sentence(rng):
    return "the {} {} the {} {} {} on {}day.".format(
        rng.choice(SUBJECTS), rng.choice(VERBS), rng.choice(PLACES),
        rng.choice(OBJECTS), rng.choice(["plan", "project", "scheme", "deal"]),
        rng.choice(["mon", "tues", "wednes", "thurs", "fri"]))


def document(rng):
    return " ".join(sentence(rng) for _ in range(rng.randint(3, 6)))


def summary(rng, doc, kind):
    words = [w.rstrip(".") for w in doc.split()]
    start = rng.randrange(0, max(1, len(words) - 8))
    span = words[start:start + rng.randint(5, 8)]
    if kind == "extractive":
        return " ".join(span)
    if kind == "partial":
        out = list(span)
        for _ in range(rng.randint(1, 3)):
            out[rng.randrange(len(out))] = rng.choice(FOREIGN)
        return " ".join(out)
    return " ".join(rng.choice(FOREIGN) for _ in range(rng.randint(4, 7)))


def main():
    rng = random.Random(SEED)
    kinds = ["extractive", "partial", "partial", "hallucinated"]
    pairs = []
    splits = ["train"] * N_TRAIN + ["validation"] * N_VAL + ["test"] * N_TEST
    for i, split in enumerate(splits):
        doc = document(rng)
        pairs.append({"id": "toy-{:03d}".format(i), "document": doc,
                      "summary": summary(rng, doc, kinds[i % len(kinds)]),
                      "split": split, "meta": {}})
    with open("toy.jsonl", "w") as f:
        for p in pairs:
            f.write(json.dumps(p, sort_keys=True) + "\n")

    # Two stand-in model outputs for the test split: one that mostly copies
    # the reference, one that mixes in unsupported words.
    test = [p for p in pairs if p["split"] == "test"]
    with open("toy_generated_a.jsonl", "w") as f:
        for p in test:
            f.write(json.dumps({"id": p["id"], "summary": summary(rng, p["document"], "partial")}) + "\n")
    with open("toy_generated_b.jsonl", "w") as f:
        for p in test:
            f.write(json.dumps({"id": p["id"], "summary": summary(rng, p["document"], "extractive")}) + "\n")


if __name__ == "__main__":
    main()
