"""Small synthetic lexicons and sentence sets for demos and end-to-end checks.

Two made-up languages share a set of stems: a word in the second language is
a cognate of the first (same stem, different ending) and carries the same
valence, which gives character trigrams something to transfer.
"""

from __future__ import annotations

import numpy as np

from .lexicon import BINARY, THREE_WAY, LexiconEntry, ValenceLexicon, class_of

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"


def _stems(n: int, rng) -> list[str]:
    stems = set()
    while len(stems) < n:
        syllables = rng.integers(2, 4)
        stems.add("".join(rng.choice(list(CONSONANTS)) + rng.choice(list(VOWELS)) for _ in range(syllables)))
    return sorted(stems)


def toy_lexicon(n_polar: int = 20, n_neutral: int = 5, langs=("xa", "xb"), seed: int = 0) -> ValenceLexicon:
    """Per language: ``n_polar`` words with |valence| >= 3 and ``n_neutral`` near 0."""
    rng = np.random.default_rng(seed)
    stems = _stems(n_polar + n_neutral, rng)
    rng.shuffle(stems)
    values = []
    for i in range(n_polar):
        sign = 1.0 if i % 2 == 0 else -1.0
        values.append(sign * rng.uniform(3.0, 5.0))
    values += list(rng.uniform(-0.8, 0.8, n_neutral))
    entries = []
    for li, lang in enumerate(langs):
        suffix = "" if li == 0 else VOWELS[li % 5] + "n"
        for stem, v in zip(stems, values):
            entries.append(LexiconEntry(stem + suffix, lang, float(v)))
    return ValenceLexicon.from_entries(entries)


def toy_sentences(lexicon: ValenceLexicon, n: int = 200, min_len: int = 3, max_len: int = 6,
                  margin: float = 0.25, seed: int = 0):
    """Sentences of lexicon words labelled by their mean word valence.

    Returns ``(texts, langs, mean_valences, binary_gold, three_way_gold)``.
    Sentences whose mean lies within ``margin`` of a class boundary (-1, 0, 1)
    are redrawn, and the three-way classes are drawn in rotation.
    """
    if not 0.0 <= margin < 0.5:
        raise ValueError("margin must be in [0, 0.5); wider margins leave no neutral sentences")
    rng = np.random.default_rng(seed)
    by_lang: dict[str, list[LexiconEntry]] = {}
    for e in lexicon.sorted_entries():
        by_lang.setdefault(e.lang, []).append(e)
    langs = sorted(by_lang)
    texts, sent_langs, means, binary, three = [], [], [], [], []
    targets = ["negative", "neutral", "positive"]
    while len(texts) < n:
        target = targets[len(texts) % 3]
        lang = langs[int(rng.integers(len(langs)))]
        pool = by_lang[lang]
        if target == "neutral":
            pool = [e for e in pool if abs(e.valence) < 1.0] + pool
        elif target == "positive":
            pool = [e for e in pool if e.valence > 0]
        else:
            pool = [e for e in pool if e.valence < 0]
        length = int(rng.integers(min_len, max_len + 1))
        words = [pool[int(i)] for i in rng.integers(len(pool), size=length)]
        mean = float(np.mean([w.valence for w in words]))
        if min(abs(mean - b) for b in (-1.0, 0.0, 1.0)) < margin or class_of(mean, THREE_WAY) != target:
            continue
        texts.append(" ".join(w.word for w in words))
        sent_langs.append(lang)
        means.append(mean)
        binary.append(class_of(mean, BINARY))
        three.append(class_of(mean, THREE_WAY))
    return texts, sent_langs, means, binary, three
