"""Document data model, JSON corpus IO, and a synthetic corpus generator.

A document is a token sequence plus typed entities (each a set of mention
spans) and golden relational facts (head, relation, tail) forming a
multi-relational graph over the entities. Spans are half-open, zero-based
token indices.

The generator plants a recoverable relational structure:

* Each corpus draws a relation "schema": each base relation admits a small
  set of (head type, tail type) pairs, two relations share one admissible
  pair (so multi-label entity pairs occur), and the last relation is a
  composite implied by chains of the first two (it gets no surface signal
  and must be inferred).
* Within a document, entities of the same type compete: only the entity
  with the highest mention count of its type participates in facts, which
  makes relational (not just token-level) reasoning pay off.
* Each base fact plants a signal token indexed by (head type, relation,
  tail type) near a mention of both participants. Distractor signal
  tokens appear with a configurable probability.
* Mention windows are adjusted so that roughly the configured fraction of
  facts connect entities that never share a 16-token sentence window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ParseError

MARKER_TOKEN = 0


@dataclass
class Entity:
    """A document entity: mention spans plus a type id."""

    mentions: list[tuple[int, int]]
    type_id: int
    # start-of-mention marker rows, filled by insert_entity_markers
    start_markers: list[int] | None = None

    @property
    def coref_count(self) -> int:
        return len(self.mentions)


@dataclass
class Document:
    doc_id: str
    tokens: list[int]
    entities: list[Entity]
    facts: list[tuple[int, int, int]]
    marked: bool = False

    @property
    def num_entities(self) -> int:
        return len(self.entities)


@dataclass
class RelationSchema:
    """Relation names; index num_relations is the reserved TH pseudo-class."""

    names: list[str]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"duplicate relation names: {self.names}")

    @property
    def num_relations(self) -> int:
        return len(self.names)

    @property
    def th_index(self) -> int:
        return len(self.names)


def validate_document(doc: Document, num_relations: int) -> None:
    """Raise ParseError on any structural violation, naming doc and field."""
    n_tok = len(doc.tokens)
    all_spans: list[tuple[int, int, int]] = []
    for idx, ent in enumerate(doc.entities):
        if not ent.mentions:
            raise ParseError(f"doc {doc.doc_id}: entity {idx} has no mentions")
        spans = sorted(ent.mentions)
        for s, e in spans:
            if not (0 <= s < e <= n_tok):
                raise ParseError(f"doc {doc.doc_id}: entity {idx} span ({s},{e}) out of bounds")
            all_spans.append((s, e, idx))
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            if s2 < e1:
                raise ParseError(f"doc {doc.doc_id}: entity {idx} has overlapping mentions")
    all_spans.sort()
    for (s1, e1, i1), (s2, e2, i2) in zip(all_spans, all_spans[1:]):
        if i1 != i2 and s2 >= s1 and e2 <= e1:
            raise ParseError(
                f"doc {doc.doc_id}: nested mentions between entities {i1} and {i2}")
    for h, r, t in doc.facts:
        if not 0 <= h < len(doc.entities):
            raise ParseError(f"doc {doc.doc_id}: fact head out of range")
        if not 0 <= t < len(doc.entities):
            raise ParseError(f"doc {doc.doc_id}: fact tail out of range")
        if not 0 <= r < num_relations:
            raise ParseError(f"doc {doc.doc_id}: fact relation {r} out of range")
        if h == t:
            raise ParseError(f"doc {doc.doc_id}: fact with head == tail")


# ---------------------------------------------------------------------------
# entity markers


def insert_entity_markers(doc: Document) -> Document:
    """Wrap every mention in marker tokens and remap all spans.

    Markers are inserted in left-to-right span order; at equal positions
    an end marker precedes a start marker so adjacent mentions stay
    disjoint. Each mention's start-marker row is recorded on its entity
    for representation lookup. Token count grows by 2 per mention.
    """
    if doc.marked:
        raise ContractError(f"doc {doc.doc_id} already marker-inserted")
    # (position, order, entity, mention, is_start); ends sort before starts
    events = []
    for ei, ent in enumerate(doc.entities):
        for mi, (s, e) in enumerate(ent.mentions):
            events.append((s, 1, ei, mi, True))
            events.append((e, 0, ei, mi, False))
    events.sort(key=lambda ev: (ev[0], ev[1]))

    new_tokens: list[int] = []
    pos_map: list[int] = []  # old token index -> new index
    starts: dict[tuple[int, int], int] = {}
    ends: dict[tuple[int, int], int] = {}
    ev = 0
    for old_pos, tok in enumerate(doc.tokens):
        while ev < len(events) and events[ev][0] == old_pos:
            _, _, ei, mi, is_start = events[ev]
            (starts if is_start else ends)[(ei, mi)] = len(new_tokens)
            new_tokens.append(MARKER_TOKEN)
            ev += 1
        pos_map.append(len(new_tokens))
        new_tokens.append(tok)
    while ev < len(events):
        _, _, ei, mi, is_start = events[ev]
        (starts if is_start else ends)[(ei, mi)] = len(new_tokens)
        new_tokens.append(MARKER_TOKEN)
        ev += 1

    new_entities = []
    for ei, ent in enumerate(doc.entities):
        spans = []
        markers = []
        for mi, (s, e) in enumerate(ent.mentions):
            spans.append((starts[(ei, mi)] + 1, ends[(ei, mi)]))
            markers.append(starts[(ei, mi)])
        new_entities.append(Entity(mentions=spans, type_id=ent.type_id,
                                   start_markers=markers))
    return Document(doc_id=doc.doc_id, tokens=new_tokens, entities=new_entities,
                    facts=list(doc.facts), marked=True)


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class CorpusConfig:
    num_docs: int = 200
    num_entities_range: tuple[int, int] = (4, 8)
    num_relations: int = 5
    vocab_size: int = 160
    seed: int = 7
    num_entity_types: int = 4
    max_coref: int = 3
    names_per_type: int = 12
    edge_prob: float = 0.55
    cross_sentence_target: float = 0.4
    window_tokens: int = 16
    noise_signal_prob: float = 0.15
    doc_id_prefix: str = "doc"
    min_background_tokens: int = 16


@dataclass
class VocabLayout:
    """Deterministic partition of the token-id space."""

    num_relations: int
    num_types: int
    names_per_type: int
    vocab_size: int
    signal_base: int = field(init=False, default=1)
    name_base: int = field(init=False)
    background_base: int = field(init=False)

    def __post_init__(self):
        self.name_base = self.signal_base + self.num_types ** 2 * self.num_relations
        self.background_base = self.name_base + self.num_types * self.names_per_type

    def signal(self, head_type: int, relation: int, tail_type: int) -> int:
        return self.signal_base + (head_type * self.num_relations + relation) \
            * self.num_types + tail_type

    def name(self, type_id: int, slot: int) -> int:
        return self.name_base + type_id * self.names_per_type + slot


def vocab_layout(cfg: CorpusConfig) -> VocabLayout:
    layout = VocabLayout(cfg.num_relations, cfg.num_entity_types,
                         cfg.names_per_type, cfg.vocab_size)
    if layout.background_base + cfg.min_background_tokens > cfg.vocab_size:
        raise ConfigError(
            f"vocab_size {cfg.vocab_size} too small for signal partition: need at least "
            f"{layout.background_base + cfg.min_background_tokens}")
    return layout


@dataclass
class SchemaPlan:
    """Corpus-level relational structure drawn once per seed."""

    admissible: dict[int, list[tuple[int, int]]]  # base relation -> type pairs
    composite: int | None  # relation implied by chains, no surface signal
    chain: tuple[int, int] | None  # (first, second) base relation of the chain


def _build_schema_plan(cfg: CorpusConfig, rng: np.random.Generator) -> SchemaPlan:
    tt = cfg.num_entity_types
    rels = list(range(cfg.num_relations))
    composite = None
    chain = None
    base = rels
    if cfg.num_relations >= 3:
        composite = rels[-1]
        base = rels[:-1]
    all_pairs = [(a, b) for a in range(tt) for b in range(tt) if a != b]
    admissible: dict[int, list[tuple[int, int]]] = {}
    for k in base:
        picks = rng.choice(len(all_pairs), size=min(2, len(all_pairs)), replace=False)
        admissible[k] = [all_pairs[p] for p in picks]
    if composite is not None and len(base) >= 2:
        # funnel the first two base relations through a shared middle type so
        # chains, and with them composite facts, are frequent
        mid = int(rng.integers(tt))
        others = [t for t in range(tt) if t != mid]
        width = min(3, len(others))
        heads = [others[i] for i in rng.permutation(len(others))[:width]]
        tails = [others[i] for i in rng.permutation(len(others))[:width]]
        admissible[base[0]] = [(h, mid) for h in heads]
        admissible[base[1]] = [(mid, t) for t in tails]
        chain = (base[0], base[1])
        if len(base) >= 3:
            # a shared admissible pair makes multi-label entity pairs possible
            admissible[base[2]][0] = admissible[base[0]][0]
        else:
            admissible[base[1]][1] = admissible[base[0]][0]
    elif len(base) >= 2:
        admissible[base[1]][0] = admissible[base[0]][0]
    return SchemaPlan(admissible=admissible, composite=composite, chain=chain)


def _assign_windows(n: int, corefs: list[int], facts: list[tuple[int, int, int]],
                    num_windows: int, cross_target: float,
                    rng: np.random.Generator) -> list[list[int]]:
    """Pick a window for every mention, steering the shared-window rate.

    Every entity gets a distinct home window; extra mentions start in
    random windows and are then moved so that roughly `cross_target` of
    the facts have no shared window between head and tail. Moves that
    realize one fact's placement are pinned so later moves cannot undo
    them; conflicting demands are resolved best-effort.
    """
    homes = list(rng.permutation(num_windows)[:n])
    windows: list[list[int]] = []
    pinned: list[set[int]] = []
    for i in range(n):
        extra = [int(w) for w in rng.integers(0, num_windows, size=corefs[i] - 1)]
        windows.append([homes[i]] + extra)
        pinned.append(set())

    def shared(a: int, b: int) -> set[int]:
        return set(windows[a]) & set(windows[b])

    # one coin per entity pair; facts over the same pair share geometry
    pair_of = [frozenset((h, t)) for h, _, t in facts]
    want_cross = {}
    for fi in rng.permutation(len(facts)):
        pair = pair_of[fi]
        if pair not in want_cross:
            want_cross[pair] = bool(rng.random() < cross_target)
    cross_pairs = {p for p, wc in want_cross.items() if wc}

    def conflicts(a: int, others: list[int]) -> bool:
        return any(frozenset((a, e)) in cross_pairs for e in others)

    order = list(rng.permutation(len(facts)))

    # pass 1: joins for pairs wanted within, never touching a wanted-cross pair
    for fi in order:
        h, _, t = facts[fi]
        if pair_of[fi] in cross_pairs:
            continue
        if shared(h, t):
            w = next(iter(shared(h, t)))
            for ent in (h, t):
                for i, win in enumerate(windows[ent]):
                    if win == w:
                        pinned[ent].add(i)
            continue
        done = False
        for mover, anchor in ((h, t), (t, h)):
            spares = [i for i in range(len(windows[mover])) if i not in pinned[mover]]
            if not spares:
                continue
            for w in windows[anchor]:
                joins = [e for e in range(n) if e != mover and w in windows[e]]
                if conflicts(mover, joins):
                    continue
                windows[mover][spares[0]] = w
                pinned[mover].add(spares[0])
                pinned[anchor].add(windows[anchor].index(w))
                done = True
                break
            if done:
                break
        if not done:
            # meeting-window fallback: move one mention of each side into a
            # window whose tenants conflict with neither
            sp_h = [i for i in range(len(windows[h])) if i not in pinned[h]]
            sp_t = [i for i in range(len(windows[t])) if i not in pinned[t]]
            if sp_h and sp_t:
                for w in range(num_windows):
                    tenants = [e for e in range(n)
                               if e not in (h, t) and w in windows[e]]
                    if conflicts(h, tenants) or conflicts(t, tenants):
                        continue
                    windows[h][sp_h[0]] = w
                    windows[t][sp_t[0]] = w
                    pinned[h].add(sp_h[0])
                    pinned[t].add(sp_t[0])
                    break

    # pass 2: separate pairs wanted cross; realized joins are pinned
    for fi in order:
        h, _, t = facts[fi]
        if pair_of[fi] not in cross_pairs:
            continue
        stuck = False
        while not stuck and shared(h, t):
            stuck = True
            w = next(iter(shared(h, t)))
            for ent in (h, t):
                idxs = [i for i in range(len(windows[ent]))
                        if windows[ent][i] == w and i not in pinned[ent]]
                free = [x for x in range(num_windows)
                        if x not in windows[h] and x not in windows[t]
                        and not conflicts(ent, [e for e in range(n)
                                                if e != ent and x in windows[e]])]
                if idxs and free:
                    windows[ent][idxs[0]] = int(free[int(rng.integers(len(free)))])
                    stuck = False
                    break
    return windows


def _check_config(cfg: CorpusConfig) -> None:
    if cfg.num_relations < 2:
        raise ConfigError(f"num_relations must be >= 2, got {cfg.num_relations}")
    if cfg.num_entity_types < 2:
        raise ConfigError("need at least 2 entity types")
    if cfg.num_entities_range[0] < 2:
        raise ConfigError("documents need at least 2 entities")
    if cfg.num_entities_range[0] > cfg.num_entities_range[1]:
        raise ConfigError(f"bad num_entities_range {cfg.num_entities_range}")
    if cfg.num_entities_range[1] > cfg.num_entity_types * cfg.max_coref:
        raise ConfigError("entity range exceeds type x coref capacity")


def generate_synthetic_corpus(cfg: CorpusConfig) -> tuple[list[Document], RelationSchema]:
    """Deterministically generate documents with planted golden graphs."""
    _check_config(cfg)
    layout = vocab_layout(cfg)
    rng = np.random.default_rng(cfg.seed)
    plan = _build_schema_plan(cfg, rng)
    schema = RelationSchema(names=[f"rel_{k}" for k in range(cfg.num_relations)])

    docs = []
    for di in range(cfg.num_docs):
        docs.append(_generate_document(cfg, layout, plan, rng,
                                       doc_id=f"{cfg.doc_id_prefix}-{cfg.seed:04d}-{di:04d}"))
    return docs, schema


def generate_train_dev(cfg: CorpusConfig, num_dev: int
                       ) -> tuple[list[Document], list[Document], RelationSchema]:
    """Generate a train corpus and a dev corpus from one relational world.

    Both splits share the schema plan drawn from the config seed; the dev
    documents continue the same random stream, so ids are disjoint and the
    whole split is reproducible from (config, num_dev).
    """
    _check_config(cfg)
    layout = vocab_layout(cfg)
    rng = np.random.default_rng(cfg.seed)
    plan = _build_schema_plan(cfg, rng)
    schema = RelationSchema(names=[f"rel_{k}" for k in range(cfg.num_relations)])
    train = [_generate_document(cfg, layout, plan, rng,
                                doc_id=f"train-{cfg.seed:04d}-{di:04d}")
             for di in range(cfg.num_docs)]
    dev = [_generate_document(cfg, layout, plan, rng,
                              doc_id=f"dev-{cfg.seed:04d}-{di:04d}")
           for di in range(num_dev)]
    return train, dev, schema


def _generate_document(cfg: CorpusConfig, layout: VocabLayout, plan: SchemaPlan,
                       rng: np.random.Generator, doc_id: str) -> Document:
    lo, hi = cfg.num_entities_range
    n = int(rng.integers(lo, hi + 1))

    # types with per-type multiplicity capped by max_coref
    types: list[int] = []
    counts = [0] * cfg.num_entity_types
    for _ in range(n):
        choices = [t for t in range(cfg.num_entity_types) if counts[t] < cfg.max_coref]
        t = int(choices[int(rng.integers(len(choices)))])
        counts[t] += 1
        types.append(t)

    # distinct coref counts within a type group; the max is the fact
    # participant. Lone entities still get a high count, so participants
    # always look prominent while mention count alone cannot tell the
    # participant of a contested type from its rivals.
    corefs = [0] * n
    reps: dict[int, int] = {}
    for t in range(cfg.num_entity_types):
        group = [i for i in range(n) if types[i] == t]
        if not group:
            continue
        if len(group) == 1:
            values = [int(rng.integers(max(2, cfg.max_coref - 1), cfg.max_coref + 1))]
        else:
            values = sorted(rng.choice(cfg.max_coref, size=len(group),
                                       replace=False) + 1)
        order = list(rng.permutation(len(group)))
        for rank, gi in enumerate(order):
            corefs[group[gi]] = int(values[rank])
        reps[t] = group[order[-1]]

    # base facts between type representatives on admissible type pairs
    fact_set: set[tuple[int, int, int]] = set()
    for k, pairs in plan.admissible.items():
        for ht, tt in pairs:
            if ht in reps and tt in reps and reps[ht] != reps[tt]:
                if rng.random() < cfg.edge_prob:
                    fact_set.add((reps[ht], k, reps[tt]))
    base_facts = sorted(fact_set)

    # composite relation from chains; inferred, never surfaced
    if plan.composite is not None and plan.chain is not None:
        k0, k1 = plan.chain
        for x, ka, y in base_facts:
            if ka != k0:
                continue
            for y2, kb, z in base_facts:
                if kb == k1 and y2 == y and z != x:
                    fact_set.add((x, plan.composite, z))
    facts = sorted(fact_set)

    num_windows = n + 3
    windows = _assign_windows(n, corefs, facts, num_windows,
                              cfg.cross_sentence_target, rng)

    # window slot layout: mentions first, then signals, then background
    w_tok = cfg.window_tokens
    slots: list[list[int | None]] = [[None] * w_tok for _ in range(num_windows)]
    free_in = lambda w: [s for s in range(w_tok) if slots[w][s] is None]

    name_slots: dict[int, int] = {}
    used_names: dict[int, set[int]] = {}
    mention_pos: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        taken = used_names.setdefault(types[i], set())
        open_slots = [s for s in range(cfg.names_per_type) if s not in taken]
        slot = int(open_slots[int(rng.integers(len(open_slots)))])
        taken.add(slot)
        name_slots[i] = slot
        for w in windows[i]:
            s = int(free_in(w)[int(rng.integers(len(free_in(w))))])
            slots[w][s] = layout.name(types[i], slot)
            mention_pos[i].append(w * w_tok + s)

    def plant_signal(entity: int, token: int) -> None:
        # exactly one copy per participant so signal counts do not leak
        # which same-type entity carries the fact
        pos = mention_pos[entity][int(rng.integers(len(mention_pos[entity])))]
        w, s = divmod(pos, w_tok)
        near = [x for x in (s + 1, s - 1, s + 2, s - 2)
                if 0 <= x < w_tok and slots[w][x] is None]
        cell = near[0] if near else (free_in(w)[0] if free_in(w) else None)
        if cell is not None:
            slots[w][cell] = token

    for h, k, t in facts:
        if plan.composite is not None and k == plan.composite:
            continue
        tok = layout.signal(types[h], k, types[t])
        plant_signal(h, tok)
        plant_signal(t, tok)

    if rng.random() < cfg.noise_signal_prob and plan.admissible:
        k = int(rng.choice(list(plan.admissible)))
        ht, tt = plan.admissible[k][int(rng.integers(len(plan.admissible[k])))]
        w = int(rng.integers(num_windows))
        cells = free_in(w)
        if cells:
            slots[w][int(cells[int(rng.integers(len(cells)))])] = layout.signal(ht, k, tt)

    n_background = cfg.vocab_size - layout.background_base
    tokens: list[int] = []
    for w in range(num_windows):
        for s in range(w_tok):
            if slots[w][s] is None:
                tokens.append(layout.background_base + int(rng.integers(n_background)))
            else:
                tokens.append(slots[w][s])

    entities = [Entity(mentions=sorted((p, p + 1) for p in mention_pos[i]),
                       type_id=types[i]) for i in range(n)]
    doc = Document(doc_id=doc_id, tokens=tokens, entities=entities, facts=facts)
    validate_document(doc, cfg.num_relations)
    return doc


# ---------------------------------------------------------------------------
# corpus statistics used by tests and reports


def cross_sentence_fraction(docs: list[Document], window_tokens: int = 16) -> float:
    """Fraction of facts whose head and tail never share a sentence window."""
    cross = total = 0
    for doc in docs:
        wins = [{s // window_tokens for s, _ in ent.mentions} for ent in doc.entities]
        for h, _, t in doc.facts:
            total += 1
            if not wins[h] & wins[t]:
                cross += 1
    return cross / total if total else 0.0


def label_density(docs: list[Document]) -> float:
    """Facts per ordered entity pair, over the whole corpus."""
    facts = sum(len(d.facts) for d in docs)
    pairs = sum(d.num_entities * (d.num_entities - 1) for d in docs)
    return facts / pairs if pairs else 0.0


def entity_identity(doc: Document, entity_idx: int) -> tuple[int, int]:
    """Cross-document identity of an entity: (type, first-mention token)."""
    ent = doc.entities[entity_idx]
    s, _ = min(ent.mentions)
    return (ent.type_id, doc.tokens[s])


# ---------------------------------------------------------------------------
# on-disk format


def write_corpus(docs: list[Document], path) -> None:
    payload = [{
        "doc_id": d.doc_id,
        "tokens": list(map(int, d.tokens)),
        "entities": [{"type": int(e.type_id),
                      "mentions": [[int(s), int(t)] for s, t in e.mentions]}
                     for e in d.entities],
        "facts": [[int(h), int(r), int(t)] for h, r, t in d.facts],
    } for d in docs]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def read_corpus(path, num_relations: int) -> list[Document]:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise ParseError(f"{path}: expected a JSON array of documents")
    docs = []
    for item in payload:
        try:
            doc = Document(
                doc_id=str(item["doc_id"]),
                tokens=[int(t) for t in item["tokens"]],
                entities=[Entity(mentions=[(int(s), int(t)) for s, t in e["mentions"]],
                                 type_id=int(e["type"]))
                          for e in item["entities"]],
                facts=[(int(h), int(r), int(t)) for h, r, t in item["facts"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed document record: {exc}") from exc
        validate_document(doc, num_relations)
        docs.append(doc)
    return docs


def write_schema(schema: RelationSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"relations": list(schema.names)}, fh, indent=1)
        fh.write("\n")


def read_schema(path) -> RelationSchema:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "relations" not in payload:
        raise ParseError(f"{path}: expected an object with a 'relations' list")
    names = [str(x) for x in payload["relations"]]
    return RelationSchema(names=names)
