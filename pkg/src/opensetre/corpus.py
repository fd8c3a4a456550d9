"""Dataset model, JSONL I/O, vocabulary, tf-idf statistics, and synthetic corpora.

The JSONL record schema is::

    {"tokens": [...], "head": [s, e), "tail": [s, e), "relation": "...", "dep_path": [...]}

with half-open token-index spans and the literal string ``"NOTA"`` as the
none-of-the-above sentinel.  ``dep_path`` is optional.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NOTA_LABEL = "NOTA"

PAD, UNK, MASK = "[PAD]", "[UNK]", "[MASK]"
E1, E1_END, E2, E2_END = "[E1]", "[/E1]", "[E2]", "[/E2]"

# Fixed leading vocabulary entries, in this order.
RESERVED_TOKENS = (PAD, UNK, MASK, E1, E1_END, E2, E2_END)


class CorpusError(ValueError):
    """Base class for corpus failures."""


class ParseError(CorpusError):
    """Malformed JSONL record (bad JSON, missing or mistyped field)."""


class ValidationError(CorpusError):
    """Structurally parseable record violating an instance invariant."""


class ConfigError(CorpusError):
    """Invalid generation or build configuration."""


@dataclass(frozen=True)
class RelationInstance:
    """A token sequence with a marked entity pair and its relation label.

    Spans are half-open ``[start, end)`` token-index intervals.  ``dep_path``,
    when present, is the set of token indices on the syntactic path between
    the two entities.
    """

    tokens: tuple[str, ...]
    head: tuple[int, int]
    tail: tuple[int, int]
    relation: str
    dep_path: frozenset[int] | None = None

    def __post_init__(self) -> None:
        n = len(self.tokens)
        if n == 0:
            raise ValidationError("instance has no tokens")
        for name, (s, e) in (("head", self.head), ("tail", self.tail)):
            if not (0 <= s < e <= n):
                raise ValidationError(f"{name} span [{s},{e}) out of bounds for {n} tokens")
        hs, he = self.head
        ts, te = self.tail
        if hs < te and ts < he:
            raise ValidationError("head and tail spans overlap")
        if self.dep_path is not None:
            bad = [i for i in self.dep_path if not 0 <= i < n]
            if bad:
                raise ValidationError(f"dep_path indices {sorted(bad)} out of bounds for {n} tokens")

    def span_positions(self) -> frozenset[int]:
        """Indices covered by either entity span."""
        hs, he = self.head
        ts, te = self.tail
        return frozenset(range(hs, he)) | frozenset(range(ts, te))

    def to_record(self) -> dict:
        rec = {
            "tokens": list(self.tokens),
            "head": list(self.head),
            "tail": list(self.tail),
            "relation": self.relation,
        }
        if self.dep_path is not None:
            rec["dep_path"] = sorted(self.dep_path)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "RelationInstance":
        for field in ("tokens", "head", "tail", "relation"):
            if field not in rec:
                raise ParseError(f"missing field {field!r}")
        tokens = rec["tokens"]
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise ParseError("field 'tokens' must be a list of strings")
        head, tail = rec["head"], rec["tail"]
        for name, span in (("head", head), ("tail", tail)):
            if not (isinstance(span, list) and len(span) == 2 and all(isinstance(v, int) for v in span)):
                raise ParseError(f"field {name!r} must be a [start, end] integer pair")
        if not isinstance(rec["relation"], str):
            raise ParseError("field 'relation' must be a string")
        dep = rec.get("dep_path")
        if dep is not None and not (isinstance(dep, list) and all(isinstance(i, int) for i in dep)):
            raise ParseError("field 'dep_path' must be a list of integers")
        return cls(
            tokens=tuple(tokens),
            head=(head[0], head[1]),
            tail=(tail[0], tail[1]),
            relation=rec["relation"],
            dep_path=None if dep is None else frozenset(dep),
        )


def load_jsonl(path: str | Path) -> list[RelationInstance]:
    """Load instances from a JSONL file, one record per line.

    Raises ParseError or ValidationError naming the offending 1-based line.
    """
    out: list[RelationInstance] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                out.append(RelationInstance.from_record(rec))
            except ParseError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
    return out


def save_jsonl(instances: Iterable[RelationInstance], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record(), separators=(",", ":")) + "\n")


class Vocabulary:
    """Ordered token list with the reserved entries at fixed leading indices."""

    def __init__(self, learned_tokens: Sequence[str]):
        tokens = list(RESERVED_TOKENS) + [t for t in learned_tokens if t not in RESERVED_TOKENS]
        if len(set(tokens)) != len(tokens):
            raise ConfigError("duplicate tokens in vocabulary")
        self._tokens = tuple(tokens)
        self._index = {t: i for i, t in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    @property
    def reserved_ids(self) -> frozenset[int]:
        return frozenset(range(len(RESERVED_TOKENS)))

    def id(self, token: str) -> int:
        """Token index; unknown tokens map to [UNK]."""
        return self._index.get(token, self._index[UNK])

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.id(t) for t in tokens)


def build_vocab(train: Sequence[RelationInstance], min_count: int = 1) -> Vocabulary:
    """Vocabulary of all training tokens with corpus frequency >= min_count.

    Ordering is deterministic: frequency descending, then lexicographic.
    """
    if not train:
        raise ConfigError("cannot build a vocabulary from an empty training set")
    counts: dict[str, int] = {}
    for inst in train:
        for tok in inst.tokens:
            counts[tok] = counts.get(tok, 0) + 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


class TfIdfTable:
    """Dense per-(token, relation) statistic t(w, y) = tf(w, y) * idf(w).

    Rows follow the vocabulary, columns the sorted known-relation names.
    Immutable once built.
    """

    def __init__(self, matrix: np.ndarray, relations: Sequence[str]):
        if matrix.shape[1] != len(relations):
            raise ConfigError("tf-idf matrix width does not match relation count")
        self._matrix = np.asarray(matrix, dtype=np.float64)
        self._matrix.setflags(write=False)
        self._relations = tuple(relations)
        self._rel_index = {r: j for j, r in enumerate(self._relations)}

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def relations(self) -> tuple[str, ...]:
        return self._relations

    def value(self, token_id: int, relation: str) -> float:
        return float(self._matrix[token_id, self._rel_index[relation]])

    def column(self, relation: str) -> np.ndarray:
        return self._matrix[:, self._rel_index[relation]]


def known_relations(train: Sequence[RelationInstance]) -> tuple[str, ...]:
    """Sorted distinct relation names in the training set."""
    return tuple(sorted({inst.relation for inst in train}))


def compute_tfidf(train: Sequence[RelationInstance], vocab: Vocabulary) -> TfIdfTable:
    """Relation-conditional term frequency times inverse relation frequency.

    Counts are raw corpus-level token occurrences per relation (duplicates
    within one instance included).  Tokens occurring in no relation get an
    all-zero row; no division is attempted for them.
    """
    relations = known_relations(train)
    if not relations:
        raise ConfigError("training set has no relations")
    counts = np.zeros((len(vocab), len(relations)), dtype=np.float64)
    rel_index = {r: j for j, r in enumerate(relations)}
    for inst in train:
        j = rel_index[inst.relation]
        for tok in inst.tokens:
            counts[vocab.id(tok), j] += 1.0

    totals = counts.sum(axis=0)
    if np.any(totals == 0.0):
        raise ConfigError("every training relation needs at least one instance")
    tf = counts / totals

    rel_presence = (counts > 0).sum(axis=1).astype(np.float64)
    idf = np.zeros(len(vocab), dtype=np.float64)
    seen = rel_presence > 0
    idf[seen] = np.log(len(relations) / rel_presence[seen])
    return TfIdfTable(tf * idf[:, None], relations)


def default_banlist_k(vocab_size: int) -> int:
    # Per-relation list size sized to the vocabulary; a fixed large k would
    # swallow a small vocabulary whole.
    return min(100, math.ceil(0.1 * vocab_size))


def build_banlist(table: TfIdfTable, k: int | None = None) -> frozenset[int]:
    """Token ids forbidden as substitution targets.

    Union over relations of each relation's top-k tokens by t(w, y), ties
    broken by ascending vocabulary index, plus all reserved tokens.
    """
    n_vocab = table.matrix.shape[0]
    if k is None:
        k = default_banlist_k(n_vocab)
    if k < 0:
        raise ConfigError("ban-list size k must be >= 0")
    banned: set[int] = set(range(len(RESERVED_TOKENS)))
    if k > 0:
        for j in range(table.matrix.shape[1]):
            col = table.matrix[:, j]
            # stable sort on (-value, index): ties go to the lower index
            order = np.lexsort((np.arange(n_vocab), -col))
            banned.update(int(i) for i in order[:k])
    return frozenset(banned)


@dataclass(frozen=True)
class SplitSpec:
    """Shape of a deterministic synthetic open-set benchmark."""

    n_known: int = 6
    n_val_unknown: int = 3
    n_test_unknown: int = 3
    instances_per_relation: int = 50
    noise_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        for field in ("n_known", "n_val_unknown", "n_test_unknown", "instances_per_relation"):
            if getattr(self, field) <= 0:
                raise ConfigError(f"{field} must be positive")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError("noise_rate must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown split field {sorted(bad)[0]!r}")
        return cls(**d)


# Relation blueprints for the synthetic generator: each relation owns a set
# of trigger tokens that never triggers another relation.  Entity names and
# filler tokens are shared across all relations, so detecting an unseen
# relation requires more than spotting unfamiliar scaffolding.
_BLUEPRINTS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("employed_by", ("works", "employee", "hired", "staff", "salary", "payroll")),
    ("founded", ("founded", "established", "startup", "founder", "incorporated", "venture")),
    ("born_in", ("born", "native", "birthplace", "childhood", "raised", "hometown")),
    ("married_to", ("married", "wife", "husband", "wedding", "spouse", "vows")),
    ("located_in", ("located", "situated", "district", "suburb", "outskirts", "neighborhood")),
    ("plays_instrument", ("plays", "guitar", "piano", "drummer", "violin", "recital")),
    ("wrote_book", ("wrote", "novel", "author", "published", "manuscript", "bestseller")),
    ("leads_team", ("coach", "captain", "squad", "roster", "lineup", "championship")),
    ("studied_at", ("studied", "graduated", "degree", "campus", "thesis", "alumni")),
    ("capital_of", ("capital", "parliament", "ministry", "palace", "embassy", "senate")),
    ("invented", ("invented", "patent", "prototype", "inventor", "laboratory", "blueprint")),
    ("acquired_by", ("acquired", "merger", "takeover", "purchased", "shares", "buyout")),
    ("sibling_of", ("brother", "sister", "sibling", "twin", "eldest", "youngest")),
    ("ceo_of", ("ceo", "executive", "chairman", "board", "shareholders", "headquarters")),
    ("river_in", ("river", "flows", "tributary", "basin", "delta", "estuary")),
    ("teaches_at", ("professor", "teaches", "lecture", "faculty", "seminar", "tenure")),
)

_FILLERS: tuple[str, ...] = (
    "the", "a", "an", "of", "in", "on", "at", "to", "for", "with", "and",
    "was", "is", "were", "been", "has", "had", "also", "later", "early",
    "after", "before", "during", "since", "from", "by", "as", "its", "his",
    "her", "their", "this", "that", "these", "many", "several", "first",
    "second", "last", "new", "old", "large", "small", "known", "called",
    "named", "according", "reported", "officials", "sources", "year",
    "years", "month", "week", "city", "town", "country", "time", "day",
    "part", "member", "group", "long", "once",
)

_ENTITIES: tuple[str, ...] = (
    "Anna", "Boris", "Clara", "Daniel", "Elena", "Felix", "Greta", "Henry",
    "Irene", "Jonas", "Karl", "Laura", "Marco", "Nina", "Oscar", "Petra",
    "Quentin", "Rosa", "Stefan", "Tina", "Ulrich", "Vera", "Walter",
    "Xenia", "Yuri", "Zoe", "Adam", "Bella", "Carlos", "Diana", "Emil",
    "Flora", "Gustav", "Hanna", "Ivan", "Julia", "Kevin", "Lena", "Martin",
    "Nora", "Otto", "Paula", "Ralph", "Sonia", "Tomas", "Ursula", "Victor",
    "Wanda", "Xavier", "Yvonne", "Zara", "Albert", "Bruno", "Celia",
    "Dario", "Edith", "Fabio", "Gloria", "Hugo", "Ines",
    "Avalon", "Brighton", "Calgary", "Denver", "Eldoria", "Florence",
    "Geneva", "Hamburg", "Istanbul", "Jakarta", "Kyoto", "Lisbon",
    "Madrid", "Nairobi", "Oslo", "Prague", "Quebec", "Riga", "Seville",
    "Toronto", "Utrecht", "Vienna", "Warsaw", "Xanthi", "York", "Zagreb",
    "Aarhus", "Bergen", "Cadiz", "Dresden", "Evora", "Fresno", "Ghent",
    "Havana", "Izmir", "Jaipur", "Kiel", "Leeds", "Malmo", "Nantes",
    "Odessa", "Porto", "Rouen", "Salem", "Tartu", "Umea", "Verona",
    "Wuhan", "Ypres", "Zurich", "Acme", "Borun", "Cortex", "Dynatech",
    "Electra", "Fabrico", "Gamma", "Helix", "Ionix", "Juno", "Krafton",
    "Lumina", "Metrix", "Novara", "Orbita", "Pixel", "Quanta", "Rotor",
    "Sentin", "Tekton", "Unify", "Vortex", "Wavelet", "Xenon", "Yotta",
    "Zephyr",
)

_ALL_TRIGGERS: tuple[str, ...] = tuple(t for _, triggers in _BLUEPRINTS for t in triggers)


def _pick(rng: np.random.Generator, pool: Sequence[str]) -> str:
    return pool[int(rng.integers(len(pool)))]


def _fillers(rng: np.random.Generator, count: int, noise_rate: float) -> list[str]:
    out = []
    for _ in range(count):
        if rng.random() < noise_rate:
            out.append(_pick(rng, _ALL_TRIGGERS))
        else:
            out.append(_pick(rng, _FILLERS))
    return out

def _make_instance(rng: np.random.Generator, relation: str, triggers: Sequence[str],
                   noise_rate: float) -> RelationInstance:
    ent_a = _pick(rng, _ENTITIES)
    ent_b = _pick(rng, _ENTITIES)
    while ent_b == ent_a:
        ent_b = _pick(rng, _ENTITIES)

    # Mostly two relation triggers per instance, with a single-trigger
    # minority: enough signal to classify, few enough trigger tokens that a
    # one-fifth substitution budget can erase the relation, and enough
    # variety that weakly-marked known instances exist at test time.
    n_trig = 1 if rng.random() < 0.3 else 2
    trig = rng.choice(len(triggers), size=n_trig, replace=False)
    trig_tokens = [triggers[int(i)] for i in trig]

    lead = _fillers(rng, int(rng.integers(3, 6)), noise_rate)
    mid = [trig_tokens[0]]
    mid.extend(_fillers(rng, int(rng.integers(1, 3)), noise_rate))
    if n_trig == 2:
        mid.append(trig_tokens[1])
    trail = _fillers(rng, int(rng.integers(2, 5)), noise_rate)

    tokens = lead + [ent_a] + mid + [ent_b] + trail
    span_a = (len(lead), len(lead) + 1)
    span_b = (len(lead) + 1 + len(mid), len(lead) + 2 + len(mid))
    if rng.random() < 0.5:
        head, tail = span_a, span_b
    else:
        head, tail = span_b, span_a
    return RelationInstance(tuple(tokens), head, tail, relation)


def gen_synthetic(spec: SplitSpec) -> tuple[list[RelationInstance], list[RelationInstance], list[RelationInstance]]:
    """Deterministic synthetic splits: train (known only), val and test (50/50).

    Validation-unknown and test-unknown relations are disjoint.  Unknown
    instances keep their generating relation name; anything outside the
    training relations counts as NOTA downstream.
    """
    total = spec.n_known + spec.n_val_unknown + spec.n_test_unknown
    if total > len(_BLUEPRINTS):
        raise ConfigError(
            f"n_known + n_val_unknown + n_test_unknown = {total} exceeds the "
            f"template pool of {len(_BLUEPRINTS)} relations"
        )
    rng = np.random.default_rng(spec.seed)
    order = list(rng.permutation(len(_BLUEPRINTS)))
    known = [_BLUEPRINTS[i] for i in order[: spec.n_known]]
    val_unk = [_BLUEPRINTS[i] for i in order[spec.n_known: spec.n_known + spec.n_val_unknown]]
    test_unk = [_BLUEPRINTS[i] for i in order[spec.n_known + spec.n_val_unknown: total]]

    ipr = spec.instances_per_relation

    train = [
        _make_instance(rng, name, triggers, spec.noise_rate)
        for name, triggers in known
        for _ in range(ipr)
    ]

    def half_split(unknown_pool: list[tuple[str, tuple[str, ...]]]) -> list[RelationInstance]:
        n_unknown = len(unknown_pool) * ipr
        base, extra = divmod(n_unknown, spec.n_known)
        out = []
        for j, (name, triggers) in enumerate(known):
            for _ in range(base + (1 if j < extra else 0)):
                out.append(_make_instance(rng, name, triggers, spec.noise_rate))
        for name, triggers in unknown_pool:
            for _ in range(ipr):
                out.append(_make_instance(rng, name, triggers, spec.noise_rate))
        return out

    val = half_split(val_unk)
    test = half_split(test_unk)
    return train, val, test
