import logging

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

WORD_DIM = 300


class WordVectorStore:
    """Word -> vector lookup; absent words are reported as misses (``None``)."""

    def __init__(self, vectors, dim=WORD_DIM):
        self.dim = dim
        self._vec = {}
        for w, v in vectors.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (dim,):
                raise ValueError(f"word {w!r}: expected {dim} dims, got {v.shape}")
            self._vec[w] = v

    def __len__(self):
        return len(self._vec)

    def __contains__(self, word):
        return word in self._vec

    def get(self, word):
        v = self._vec.get(word)
        if v is None:
            v = self._vec.get(word.lower())
        return v

    def scaled(self, c):
        return WordVectorStore({w: c * v for w, v in self._vec.items()}, self.dim)

    @classmethod
    def load(cls, path, dim=WORD_DIM):
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) == 2 and lineno == 1:
                    continue  # word2vec text header: "<count> <dim>"
                if not line.strip():
                    continue
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}: line {lineno}: expected word + {dim} values, got {len(parts) - 1}")
                vectors[parts[0]] = np.array(parts[1:], dtype=np.float64)
        return cls(vectors, dim)


def assemble_text_embedding(traits, store, selected_traits):
    """Concatenate per-trait sums of word vectors in ``selected_traits`` order."""
    blocks = []
    for name in selected_traits:
        acc = np.zeros(store.dim)
        phrase = traits.get(name)
        if phrase:
            for word in str(phrase).split():
                v = store.get(word)
                if v is not None:
                    acc = acc + v
        blocks.append(acc)
    return np.concatenate(blocks) if blocks else np.zeros(0)


def load_traits(path):
    f = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = {"token_id", "trait_name", "value"} - set(f.columns)
    if missing:
        raise ValueError(f"{path}: trait file missing columns {sorted(missing)}")
    return f


def select_traits(trait_frame, items=None, max_traits=6):
    """Trait names with the fewest missing values (ties by name)."""
    f = trait_frame[trait_frame["value"].str.strip() != ""]
    if items is not None:
        f = f[f["token_id"].isin(set(items))]
        n_items = len(set(items))
    else:
        n_items = f["token_id"].nunique()
    present = f.groupby("trait_name")["token_id"].nunique()
    ranked = sorted(present.index, key=lambda t: (n_items - present[t], t))
    return ranked[:max_traits]


def build_text_matrix(trait_frame, store, items, selected_traits=None):
    if selected_traits is None:
        selected_traits = select_traits(trait_frame, items)
    by_item = {}
    for tok, name, value in zip(trait_frame["token_id"], trait_frame["trait_name"], trait_frame["value"]):
        by_item.setdefault(tok, {})[name] = value
    mat = np.stack([assemble_text_embedding(by_item.get(i, {}), store, selected_traits) for i in items])
    return mat, list(selected_traits)
