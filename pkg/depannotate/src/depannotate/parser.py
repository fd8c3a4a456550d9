"""Deterministic rule-based dependency parsing for pre-tokenized sentences.

This is a deliberately small arc builder, not a statistical parser: category
tagging comes from closed-class lexicons plus suffix heuristics, and head
attachment follows a handful of positional rules. The output is always a
single-rooted tree over the given tokens, so downstream path extraction is
total and reproducible. Indices always refer to the caller's tokens
(pre-tokenized mode); the parser never re-tokenizes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

DETERMINERS = {
    "the", "a", "an", "this", "that", "these", "those", "his", "her", "its",
    "their", "my", "our", "your", "each", "every", "some", "many", "several",
    "first", "second", "last", "new", "old", "large", "small", "long", "once",
}
PREPOSITIONS = {
    "in", "on", "at", "of", "to", "for", "with", "from", "by", "as", "under",
    "over", "into", "during", "since", "before", "after", "between", "within",
    "near", "through", "about", "against",
}
CONJUNCTIONS = {"and", "or", "but", "nor"}
AUXILIARIES = {
    "is", "are", "was", "were", "be", "been", "being", "has", "have", "had",
    "do", "does", "did", "will", "would", "can", "could", "may", "might",
    "should", "must", "also",
}
VERBS = {
    "works", "work", "worked", "founded", "established", "married", "wrote",
    "plays", "played", "teaches", "taught", "acquired", "flows", "studied",
    "graduated", "purchased", "hired", "invented", "located", "situated",
    "raised", "born", "settled", "lives", "lived", "moved", "joined", "leads",
    "led", "says", "said", "reported", "according", "called", "named",
    "launched", "incorporated", "composed", "published", "survived", "died",
}

DET, PREP, CONJ, AUX, VERB, NOUN, PROPN, PUNCT = (
    "DET", "PREP", "CONJ", "AUX", "VERB", "NOUN", "PROPN", "PUNCT")


@dataclass(frozen=True)
class Parse:
    """Heads of a dependency tree; ``heads[i] == i`` only at the root."""

    tags: tuple[str, ...]
    heads: tuple[int, ...]
    root: int

    def children(self, i: int) -> list[int]:
        return [j for j, h in enumerate(self.heads) if h == i and j != i]

    def depth(self, i: int) -> int:
        d = 0
        while i != self.heads[i]:
            i = self.heads[i]
            d += 1
        return d


def tag_token(token: str) -> str:
    if not any(ch.isalnum() for ch in token):
        return PUNCT
    low = token.lower()
    if low in DETERMINERS:
        return DET
    if low in PREPOSITIONS:
        return PREP
    if low in CONJUNCTIONS:
        return CONJ
    if low in AUXILIARIES:
        return AUX
    if low in VERBS:
        return VERB
    if token[0].isupper():
        return PROPN
    if low.endswith(("ed", "ing")) and len(low) > 4:
        return VERB
    return NOUN


def parse(tokens: list[str] | tuple[str, ...]) -> Parse:
    """Build a dependency tree over the tokens.

    Attachment rules, applied per token category:

    * the first verb is the root; other verbs attach to it
    * determiners attach to the next noun, prepositions to the previous
      verb or noun
    * nouns attach to a recent preceding preposition when one is open,
      otherwise to the nearest verb
    * auxiliaries and conjunctions attach to the next content word,
      punctuation to the root
    """
    n = len(tokens)
    if n == 0:
        raise ValueError("cannot parse an empty token sequence")
    tags = tuple(tag_token(t) for t in tokens)

    verb_positions = [i for i, t in enumerate(tags) if t == VERB]
    content = [i for i, t in enumerate(tags) if t in (NOUN, PROPN, VERB)]
    if verb_positions:
        root = verb_positions[0]
    elif content:
        root = content[0]
    else:
        root = 0

    def nearest_verb(i: int) -> int:
        if not verb_positions:
            return root
        return min(verb_positions, key=lambda v: (abs(v - i), v))

    def next_of(i: int, wanted: tuple[str, ...]) -> int | None:
        for j in range(i + 1, n):
            if tags[j] in wanted:
                return j
        return None

    def prev_of(i: int, wanted: tuple[str, ...], limit: int | None = None) -> int | None:
        stop = -1 if limit is None else max(-1, i - 1 - limit)
        for j in range(i - 1, stop, -1):
            if tags[j] in wanted:
                return j
        return None

    heads = [root] * n
    for i, tag in enumerate(tags):
        if i == root:
            heads[i] = i
            continue
        if tag == VERB:
            heads[i] = root
        elif tag == DET:
            target = next_of(i, (NOUN, PROPN))
            heads[i] = target if target is not None else root
        elif tag == PREP:
            target = prev_of(i, (VERB, NOUN, PROPN))
            heads[i] = target if target is not None else root
        elif tag in (NOUN, PROPN):
            prep = prev_of(i, (PREP,), limit=3)
            blocker = prev_of(i, (NOUN, PROPN, VERB), limit=3)
            if prep is not None and (blocker is None or blocker < prep):
                heads[i] = prep
            else:
                heads[i] = nearest_verb(i) if i != root else i
        elif tag in (AUX, CONJ):
            target = next_of(i, (NOUN, PROPN, VERB))
            heads[i] = target if target is not None else root
        else:  # PUNCT
            heads[i] = root

    # Any residual cycle (only possible through rightward attachments)
    # collapses onto the root, keeping the result a tree.
    for i in range(n):
        seen = {i}
        j = i
        while heads[j] != j:
            j = heads[j]
            if j in seen:
                heads[i] = root
                break
            seen.add(j)

    return Parse(tags, tuple(heads), root)


def span_head(parse: Parse, span: tuple[int, int]) -> int:
    """The span token whose head lies outside the span.

    Among several such tokens the one closest to the root wins, then the
    leftmost. A span that contains the whole tree yields its root-most token.
    """
    start, end = span
    inside = set(range(start, end))
    candidates = [i for i in inside if parse.heads[i] not in inside or parse.heads[i] == i]
    if not candidates:
        candidates = list(inside)
    return min(candidates, key=lambda i: (parse.depth(i), i))


def tree_path(parse: Parse, a: int, b: int) -> list[int]:
    """Token indices on the undirected tree path from a to b, inclusive."""
    if a == b:
        return [a]
    neighbors: dict[int, set[int]] = {i: set() for i in range(len(parse.heads))}
    for i, h in enumerate(parse.heads):
        if h != i:
            neighbors[i].add(h)
            neighbors[h].add(i)
    prev = {a: a}
    queue = deque([a])
    while queue:
        cur = queue.popleft()
        if cur == b:
            break
        for nxt in sorted(neighbors[cur]):
            if nxt not in prev:
                prev[nxt] = cur
                queue.append(nxt)
    if b not in prev:
        raise ValueError("tokens are not connected")  # unreachable on a tree
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    return sorted(path)


def dependency_path(tokens: list[str] | tuple[str, ...], head_span: tuple[int, int],
                    tail_span: tuple[int, int]) -> list[int]:
    """Sorted token indices on the path between the two entity head words."""
    tree = parse(tokens)
    return tree_path(tree, span_head(tree, head_span), span_head(tree, tail_span))
