#!/usr/bin/env python3
"""Generate the bundled tiny corpus (data/tiny/{train,valid,test}.txt).

Synthetic word-level data with a Zipf-like unigram distribution and a
cluster-level first-order Markov structure: the ~1200 types are grouped
into clusters of distributional synonyms (every member of a cluster is
followed by the same successor distribution), so a small LSTM has real
structure to learn, word embeddings have real similarity structure to
discover, and per-word successor estimates stay noisy at ~35 train
occurrences per type.  Properties the tests rely on:

  * ~1200 distinct types in train (plus <unk>/<eos> after loading), large
    enough that a 100-dim embedding subspace of a randomly initialized model
    is far from the output-weight subspace (expected squared distance
    1 - 100/|V| ~ 0.92).
  * every type occurs in train at least once, so |V| is stable.
  * a planted high-probability bigram (rank-25 word -> rank-70 word, printed
    on stdout) used by the CLI prediction test.

Deterministic: fixed seed, no dict-order dependence.
"""

import random
from pathlib import Path

SEED = 20260817
N_TYPES = 1200
TRAIN_WORDS = 42_000
VALID_WORDS = 5_000
TEST_WORDS = 5_000

PAIR_A_RANK = 25
PAIR_B_RANK = 70
PAIR_PROB = 0.9

CLUSTER_SIZE = 10
STRUCT_PROB = 0.85

ONSETS = ["b", "d", "f", "g", "h", "j", "k", "l", "m", "n",
          "p", "r", "s", "t", "v", "w", "z", "ch", "sh", "th"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ee", "oa"]
CODAS = ["", "", "", "n", "l", "r", "s", "t"]


def make_words(rng, n):
    seen = set()
    words = []
    while len(words) < n:
        syllables = rng.choice([2, 2, 2, 3])
        w = "".join(
            rng.choice(ONSETS) + rng.choice(VOWELS) + rng.choice(CODAS)
            for _ in range(syllables)
        )
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def main():
    rng = random.Random(SEED)
    words = make_words(rng, N_TYPES)

    # Zipf-ish base distribution over ranks.
    base_w = [1.0 / (r + 2.7) for r in range(N_TYPES)]
    total = sum(base_w)
    base_w = [w / total for w in base_w]

    pair_a = words[PAIR_A_RANK]
    pair_b = words[PAIR_B_RANK]
    print(f"planted bigram: {pair_a} -> {pair_b} (p={PAIR_PROB})")

    # Clusters of distributional synonyms: ranks shuffled, then chopped
    # into consecutive groups, so each cluster mixes frequent and rare
    # types and the within-cluster emission stays Zipf-weighted.
    ranks = list(range(N_TYPES))
    rng.shuffle(ranks)
    n_clusters = N_TYPES // CLUSTER_SIZE
    cluster_of = [0] * N_TYPES
    members = []
    for c in range(n_clusters):
        group = ranks[c * CLUSTER_SIZE:(c + 1) * CLUSTER_SIZE]
        for r in group:
            cluster_of[r] = c
        wts = [base_w[r] for r in group]
        s = sum(wts)
        members.append((group, [w / s for w in wts]))

    # Cluster-level Markov chain: each cluster gets a sparse, spiky
    # successor table over clusters.
    succ = []
    for c in range(n_clusters):
        k = rng.randint(4, 8)
        ids = sorted(set(rng.choices(range(n_clusters), k=k)))
        wts = [rng.gammavariate(0.5, 1.0) + 1e-6 for _ in ids]
        s = sum(wts)
        succ.append((ids, [w / s for w in wts]))

    def next_word(cur):
        if cur == PAIR_A_RANK and rng.random() < PAIR_PROB:
            return PAIR_B_RANK
        if cur is not None and rng.random() < STRUCT_PROB:
            ids, wts = succ[cluster_of[cur]]
            nxt = rng.choices(ids, weights=wts, k=1)[0]
            group, ems = members[nxt]
            return rng.choices(group, weights=ems, k=1)[0]
        return rng.choices(range(N_TYPES), weights=base_w, k=1)[0]

    def gen_split(n_words, state):
        lines, line = [], []
        cur = state
        emitted = 0
        target_len = rng.randint(5, 20)
        while emitted < n_words:
            cur = next_word(cur)
            line.append(words[cur])
            emitted += 1
            if len(line) >= target_len:
                lines.append(" ".join(line))
                line = []
                target_len = rng.randint(5, 20)
        if line:
            lines.append(" ".join(line))
        return lines, cur

    train_lines, state = gen_split(TRAIN_WORDS, None)
    valid_lines, state = gen_split(VALID_WORDS, state)
    test_lines, _ = gen_split(TEST_WORDS, state)

    # Make sure every type shows up in train so the vocabulary is exactly
    # N_TYPES + 2 specials.
    present = set()
    for ln in train_lines:
        present.update(ln.split())
    missing = [w for w in words if w not in present]
    print(f"types missing from train before patch: {len(missing)}")
    rng.shuffle(missing)
    for i in range(0, len(missing), 10):
        train_lines.append(" ".join(missing[i:i + 10]))

    out = Path(__file__).resolve().parent.parent / "data" / "tiny"
    out.mkdir(parents=True, exist_ok=True)
    for name, lines in [("train", train_lines), ("valid", valid_lines),
                        ("test", test_lines)]:
        (out / f"{name}.txt").write_text("\n".join(lines) + "\n")
        n_tok = sum(len(ln.split()) + 1 for ln in lines)
        print(f"{name}: {len(lines)} lines, {n_tok} tokens (incl. <eos>)")


if __name__ == "__main__":
    main()
