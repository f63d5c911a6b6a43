"""Synthetic corpus and query generator.

Documents are assembled from three sentence kinds: one value sentence per
(document, attribute) carrying the planted value (its char span recorded in
the sidecar truth), optional "note" sentences sharing the attribute's
signature vocabulary (they inflate that document's retrieval cost without
carrying a value -- the cost-asymmetry knob), and filler sentences of junk
vocabulary that land far from every evidence center. Signature words make
same-attribute sentences cluster tightly under the hashed embedder and keep
different attributes well separated, so retrieval geometry is controlled.

Planted selectivities steer each attribute's values to land above its query
threshold with the requested probability; ground truth for any generated
query is recomputed from the sidecar by direct evaluation, independent of
the engine.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .catalog import AttributeSpec, Catalog, TableSpec
from .errors import ValidationError
from .extract import SidecarTruth
from .queryparser import NodeKind, QuerySpec, canon

# name, description stub, query threshold, value spread
NUMERIC_ATTRS = [
    ("age", "age of the player in years", 35, 12),
    ("all_stars", "number of all star selections", 12, 8),
    ("avg_points", "career points scored per game", 20, 10),
    ("avg_assists", "career assists per game", 5, 4),
    ("seasons", "number of seasons played", 10, 6),
    ("rebounds", "career rebounds per game", 7, 5),
]

DEFAULT_SELECTIVITIES = [0.25, 0.15, 0.5, 0.35, 0.6, 0.4]

_FILLER_WORDS = [
    "meadow", "harbor", "lantern", "orchard", "quarry", "bramble", "thicket",
    "estuary", "mesa", "fjord", "tundra", "basalt", "cedar", "juniper",
]


def _sig(attr: str, j: int) -> str:
    return f"{attr}sig{j}"


@dataclass
class WorkloadSpec:
    """Generator parameters for the single-table workload."""

    n_docs: int = 200
    pad_tokens: int = 0  # pad each doc up to exactly this many tokens (0 = no padding)
    n_attributes: int = 5
    selectivities: list[float] = field(default_factory=lambda: list(DEFAULT_SELECTIVITIES))
    cost_asymmetry: str = "random"  # off | random | alternating
    asymmetry_factor: int = 4
    miss_rate: float = 0.0  # probability a doc lacks an attribute entirely
    seed: int = 0
    queries_per_group: int = 3
    table: str = "players"

    def validate(self) -> None:
        if self.n_docs <= 0:
            raise ValidationError("n_docs must be positive")
        if not (1 <= self.n_attributes <= len(NUMERIC_ATTRS)):
            raise ValidationError(f"n_attributes must be in 1..{len(NUMERIC_ATTRS)}")
        for p in self.selectivities[: self.n_attributes]:
            if not (0.0 < p < 1.0):
                raise ValidationError(f"planted selectivity {p} outside (0, 1)")
        if self.cost_asymmetry not in ("off", "random", "alternating"):
            raise ValidationError(f"unknown cost_asymmetry {self.cost_asymmetry!r}")
        if not (0.0 <= self.miss_rate < 1.0):
            raise ValidationError("miss_rate must be in [0, 1)")


@dataclass
class WorkloadQuery:
    text: str
    group: str  # C1 | C2 | C3 | E1 | E2 | E3
    n_filters: int


@dataclass
class GeneratedWorkload:
    records: list[dict]
    truth: SidecarTruth
    tables: list[TableSpec]
    queries: list[WorkloadQuery]


class _DocBuilder:
    """Accumulates sentences and reports each one's char span in the final text."""

    def __init__(self):
        self._parts: list[str] = []
        self._length = 0

    def add(self, sentence: str) -> tuple[int, int]:
        if self._parts:
            self._parts.append(" ")
            self._length += 1
        start = self._length
        self._parts.append(sentence)
        self._length += len(sentence)
        return start, self._length

    def paragraph_break(self) -> None:
        self._parts.append("\n\n")
        self._length += 2

    def find_last(self, needle: str) -> tuple[int, int]:
        text = self.text()
        pos = text.rfind(needle)
        return pos, pos + len(needle)

    def text(self) -> str:
        return "".join(self._parts)

    def __len__(self) -> int:
        return self._length


def _filler_sentence(rng: random.Random, words: int = 7) -> str:
    picked = [rng.choice(_FILLER_WORDS) + str(rng.randrange(1000)) for _ in range(words)]
    return " ".join(picked).capitalize() + "."


def _value_sentence(attr: str, value: object) -> str:
    sigs = " ".join(_sig(attr, j) for j in range(4))
    return f"{sigs} reports the {attr} value {value} on record."

def _note_sentence(attr: str, rng: random.Random) -> str:
    # mirrors the value sentence with the value slot swapped for a non-value
    # token: lands inside the attribute's calibrated retrieval radius and
    # inflates that document's extraction cost without carrying a value
    sigs = " ".join(_sig(attr, j) for j in range(4))
    extra = rng.choice(_FILLER_WORDS) + str(rng.randrange(100))
    return f"{sigs} reports the {attr} value {extra} on record."


def _pad_text(text: str, pad_tokens: int) -> str:
    """Pad with filler to land on exactly pad_tokens (ceil(chars/4) tokenizer)."""
    if pad_tokens <= 0:
        return text
    target_chars = pad_tokens * 4
    if len(text) > target_chars:
        raise ValidationError(
            f"document content ({len(text)} chars) exceeds pad target ({target_chars})"
        )
    need = target_chars - len(text)
    if need:
        filler = " padding" * (need // 8 + 1)
        text = text + filler[:need]
        if text[-1] == " ":
            text = text[:-1] + "x"
    return text


def _player_attrs(spec: WorkloadSpec) -> list[AttributeSpec]:
    # every description carries the shared topic phrase so the query
    # embedding of ANY attribute subset stays close to document summaries
    attrs = [
        AttributeSpec(
            "name",
            "full name of the player namesig0 namesig1 in the player dossier profile",
            "string",
            spec.table,
        )
    ]
    for name, desc, _, _ in NUMERIC_ATTRS[: spec.n_attributes]:
        attrs.append(
            AttributeSpec(
                name,
                f"{desc}, see {_sig(name, 0)} {_sig(name, 1)}, in the player dossier profile",
                "number",
                spec.table,
            )
        )
    return attrs


def generate_workload(spec: WorkloadSpec) -> GeneratedWorkload:
    """200-doc style single-table corpus with planted values and queries."""
    spec.validate()
    rng = random.Random(spec.seed)
    truth = SidecarTruth()
    records = []
    numeric = NUMERIC_ATTRS[: spec.n_attributes]

    for i in range(spec.n_docs):
        doc_id = f"player_{i:04d}"
        builder = _DocBuilder()
        # single paragraph: the summary is exactly this topic-dense lead,
        # which overlaps the shared phrase in every attribute description,
        # so relevant documents land well inside the document threshold
        player_name = f"Player {i:04d}"
        builder.add(f"Player dossier profile of the player {player_name}.")
        start, end = builder.add(
            f"Name namesig0 namesig1 namesig2 register entry lists {player_name} officially."
        )
        name_pos = builder.text().rfind(player_name, start, end)
        truth.set(doc_id, "name", player_name, name_pos, name_pos + len(player_name))
        builder.add(_filler_sentence(rng))

        for a_idx, (name, _, threshold, spread) in enumerate(numeric):
            if spec.miss_rate and rng.random() < spec.miss_rate:
                continue
            p = spec.selectivities[a_idx]
            above = rng.random() < p
            delta = rng.randrange(1, spread + 1)
            value = threshold + delta if above else threshold - delta + 1
            if not above and value > threshold:
                value = threshold
            sentence = _value_sentence(name, value)
            s, e = builder.add(sentence)
            v_pos = builder.text().rfind(str(value), s, e)
            truth.set(doc_id, name, value, v_pos, v_pos + len(str(value)))
            builder.add(_filler_sentence(rng))

            if spec.cost_asymmetry == "off":
                heavy = False
            elif spec.cost_asymmetry == "alternating":
                heavy = (i % 2 == 1) and a_idx == 0
            else:
                heavy = rng.random() < 0.5
            if heavy:
                for _ in range(spec.asymmetry_factor):
                    builder.add(_note_sentence(name, rng))
                    builder.add(_filler_sentence(rng))

        text = _pad_text(builder.text(), spec.pad_tokens)
        records.append({"id": doc_id, "text": text})

    tables = [TableSpec(spec.table, _player_attrs(spec), corpus_filter="player_*")]
    queries = _make_single_table_queries(spec, rng)
    return GeneratedWorkload(records=records, truth=truth, tables=tables, queries=queries)


def _make_single_table_queries(spec: WorkloadSpec, rng: random.Random) -> list[WorkloadQuery]:
    numeric = NUMERIC_ATTRS[: spec.n_attributes]
    queries = []
    group_sizes = {"C1": 1, "C2": None, "C3": None}
    for group in ("C1", "C2", "C3"):
        for _ in range(spec.queries_per_group):
            if group == "C1":
                k = 1
            elif group == "C2":
                k = rng.randrange(2, 4)
            else:
                lo = min(4, spec.n_attributes)
                hi = min(5, spec.n_attributes)
                k = rng.randrange(lo, hi + 1)
            k = min(k, spec.n_attributes)
            chosen = rng.sample(numeric, k)
            preds = [f"{name} > {threshold}" for name, _, threshold, _ in chosen]
            if k == 1:
                where = preds[0]
            else:
                shape = rng.choice(["and", "or", "mixed"] if k >= 3 else ["and", "or"])
                if shape == "and":
                    where = " AND ".join(preds)
                elif shape == "or":
                    where = " OR ".join(preds)
                else:
                    where = f"({preds[0]} OR {preds[1]}) AND " + " AND ".join(preds[2:])
            select = "name"
            if rng.random() < 0.4:
                select = f"name, {chosen[0][0]}"
            queries.append(
                WorkloadQuery(
                    text=f"SELECT {select} FROM {spec.table} WHERE {where}",
                    group=group,
                    n_filters=k,
                )
            )
    return queries


# --- join workload -------------------------------------------------------------


@dataclass
class JoinWorkloadSpec:
    """Two-table join workload with a controllable IN-filter selectivity."""

    n_players: int = 40
    n_teams: int = 20
    team_coverage: float = 0.15  # fraction of teams reachable from surviving players
    player_selectivity: float = 0.2  # P(player passes its filters)
    team_selectivity: float = 0.5
    team_cost_notes: int = 8  # note sentences inflating team-side extraction cost
    seed: int = 0
    group: str = "E1"

    def validate(self) -> None:
        if self.n_players <= 0 or self.n_teams <= 0:
            raise ValidationError("table sizes must be positive")
        if not (0.0 < self.team_coverage <= 1.0):
            raise ValidationError("team_coverage must be in (0, 1]")


def generate_join_workload(spec: JoinWorkloadSpec) -> GeneratedWorkload:
    spec.validate()
    rng = random.Random(spec.seed)
    truth = SidecarTruth()
    records = []

    team_names = [f"Team {chr(ord('A') + i // 26)}{chr(ord('A') + i % 26)}" for i in range(spec.n_teams)]
    covered = max(1, round(spec.team_coverage * spec.n_teams))
    covered_teams = team_names[:covered]

    champ_threshold = 6
    for i, team in enumerate(team_names):
        doc_id = f"team_{i:04d}"
        builder = _DocBuilder()
        builder.add(f"Team ledger profile of the team {team}.")
        s, e = builder.add(f"teamsig0 teamsig1 teamsig2 teamsig3 reports the team_name value {team} on record.")
        pos = builder.text().rfind(team, s, e)
        truth.set(doc_id, "team_name", team, pos, pos + len(team))
        builder.add(_filler_sentence(rng))

        above = rng.random() < spec.team_selectivity
        champs = champ_threshold + rng.randrange(1, 6) if above else champ_threshold - rng.randrange(0, 6)
        sentence = _value_sentence("championships", champs)
        s, e = builder.add(sentence)
        pos = builder.text().rfind(str(champs), s, e)
        truth.set(doc_id, "championships", champs, pos, pos + len(str(champs)))
        builder.add(_filler_sentence(rng))
        for _ in range(spec.team_cost_notes):
            builder.add(_note_sentence("championships", rng))
            builder.add(_filler_sentence(rng))
        records.append({"id": doc_id, "text": builder.text()})

    age_threshold, stars_threshold = 35, 12
    for i in range(spec.n_players):
        doc_id = f"player_{i:04d}"
        builder = _DocBuilder()
        player_name = f"Player {i:04d}"
        builder.add(f"Player dossier profile of the player {player_name}.")
        s, e = builder.add(
            f"Name namesig0 namesig1 namesig2 register entry lists {player_name} officially."
        )
        pos = builder.text().rfind(player_name, s, e)
        truth.set(doc_id, "name", player_name, pos, pos + len(player_name))
        builder.add(_filler_sentence(rng))

        survivor = rng.random() < spec.player_selectivity
        age = age_threshold + rng.randrange(1, 8) if survivor else age_threshold - rng.randrange(0, 10)
        stars = stars_threshold + rng.randrange(1, 6) if survivor else stars_threshold - rng.randrange(0, 8)
        if not survivor and rng.random() < 0.5:
            age = age_threshold + rng.randrange(1, 8)  # passes age, fails stars
        for name, value in (("age", age), ("all_stars", stars)):
            sentence = _value_sentence(name, value)
            s, e = builder.add(sentence)
            pos = builder.text().rfind(str(value), s, e)
            truth.set(doc_id, name, value, pos, pos + len(str(value)))
            builder.add(_filler_sentence(rng))

        team = rng.choice(covered_teams) if survivor else rng.choice(team_names)
        s, e = builder.add(f"teamsig0 teamsig1 teamsig2 teamsig3 reports the team value {team} on record.")
        pos = builder.text().rfind(team, s, e)
        truth.set(doc_id, "team", team, pos, pos + len(team))
        builder.add(_filler_sentence(rng))
        records.append({"id": doc_id, "text": builder.text()})

    player_suffix = "in the player dossier profile"
    team_suffix = "in the team ledger profile"
    player_attrs = [
        AttributeSpec("name", f"full name of the player namesig0 namesig1 {player_suffix}", "string", "players"),
        AttributeSpec("age", f"age of the player in years, see {_sig('age', 0)} {_sig('age', 1)}, {player_suffix}", "number", "players"),
        AttributeSpec("all_stars", f"number of all star selections, see {_sig('all_stars', 0)} {_sig('all_stars', 1)}, {player_suffix}", "number", "players"),
        AttributeSpec("team", f"team of the player, see teamsig0 teamsig1, {player_suffix}", "categorical", "players"),
    ]
    team_attrs = [
        AttributeSpec("team_name", f"name of the team, see teamsig0 teamsig1, {team_suffix}", "categorical", "teams"),
        AttributeSpec("championships", f"number of championships won, see {_sig('championships', 0)} {_sig('championships', 1)}, {team_suffix}", "number", "teams"),
    ]
    tables = [
        TableSpec("players", player_attrs, corpus_filter="player_*"),
        TableSpec("teams", team_attrs, corpus_filter="team_*"),
    ]
    query = WorkloadQuery(
        text=(
            "SELECT players.name, teams.team_name FROM players "
            "JOIN teams ON players.team = teams.team_name "
            f"WHERE players.age > {age_threshold} AND players.all_stars > {stars_threshold} "
            f"AND teams.championships > {champ_threshold}"
        ),
        group=spec.group,
        n_filters=3,
    )
    return GeneratedWorkload(records=records, truth=truth, tables=tables, queries=[query])


# --- ground truth ----------------------------------------------------------------


def _truth_value(truth: SidecarTruth, doc_id: str, attr: str):
    entry = truth.get(doc_id, attr)
    return entry.value if entry is not None else None


def _eval_tree_truth(node, truth: SidecarTruth, doc_of_table: dict[str, str]) -> bool:
    if node.kind is NodeKind.LEAF:
        pred = node.predicate
        doc_id = doc_of_table[pred.attribute.table]
        return pred.evaluate(_truth_value(truth, doc_id, pred.attribute.name))
    outcomes = (_eval_tree_truth(c, truth, doc_of_table) for c in node.children)
    return all(outcomes) if node.kind is NodeKind.AND else any(outcomes)


def ground_truth_rows(spec: QuerySpec, truth: SidecarTruth, catalog: Catalog) -> list[tuple]:
    """Expected result tuples computed straight from the sidecar (canonical form).

    Nested-loop join over true values plus direct tree evaluation: an oracle
    with none of the engine's retrieval or planning machinery in the path.
    """
    table_docs = {t.name: catalog.table_doc_ids(t.name) for t in spec.tables}

    def expand(i: int, assignment: dict[str, str]) -> list[dict[str, str]]:
        if i == len(spec.tables):
            return [assignment]
        table = spec.tables[i].name
        out = []
        for doc_id in table_docs[table]:
            candidate = {**assignment, table: doc_id}
            ok = True
            for edge in spec.joins:
                la, ra = edge.left, edge.right
                if la.table in candidate and ra.table in candidate:
                    lv = _truth_value(truth, candidate[la.table], la.name)
                    rv = _truth_value(truth, candidate[ra.table], ra.name)
                    if lv is None or rv is None or canon(lv) != canon(rv):
                        ok = False
                        break
            if ok:
                out.extend(expand(i + 1, candidate))
        return out

    rows = []
    for assignment in expand(0, {}):
        if spec.where is not None and not _eval_tree_truth(spec.where, truth, assignment):
            continue
        cells = {}
        for attr in spec.select_attrs:
            cells[f"{attr.table}.{attr.name}"] = _truth_value(
                truth, assignment[attr.table], attr.name
            )
        rows.append(tuple(sorted((k, canon(v)) for k, v in cells.items())))
    return sorted(rows)
