"""Dialogue data model, JSON corpus I/O, and a synthetic dialogue generator.

A corpus is a list of dialogues; each dialogue is an ordered list of
(system utterance, user utterance) pairs, optionally labeled with the
ground-truth state that produced the pair.  The generator walks a Markov
chain over a hand-written structure (states, initial distribution,
transition matrix, per-state utterance templates with slot fillers) and
records the walk as gold labels, so learned structures can be scored
against a known transition matrix.

Corpus file format: UTF-8 JSON, a top-level array of
``{"id": str, "turns": [{"sys": str, "usr": str, "state": int|null}]}``.
Structure file format: JSON object with ``states``, ``init``, ``trans``,
``templates`` (and optionally ``slots``).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import CorpusParseError, InputError, ParameterError
from .tensor import RngState

_SLOT_RE = re.compile(r"\{(\w+)\}")


@dataclass
class UtterancePair:
    """One system/user exchange, optionally tagged with its gold state."""

    system_text: str
    user_text: str
    gold_state: Optional[int] = None

    def __post_init__(self):
        if not self.system_text and not self.user_text:
            raise InputError("utterance pair has neither system nor user text")


@dataclass
class Dialogue:
    """An ordered, non-empty sequence of utterance pairs."""

    id: str
    pairs: List[UtterancePair]

    def __post_init__(self):
        if not self.pairs:
            raise InputError(f"dialogue {self.id!r} has no utterance pairs")
        labeled = [p.gold_state is not None for p in self.pairs]
        if any(labeled) and not all(labeled):
            raise InputError(
                f"dialogue {self.id!r} mixes labeled and unlabeled pairs"
            )

    @property
    def labeled(self) -> bool:
        return self.pairs[0].gold_state is not None

    def gold_states(self) -> List[int]:
        if not self.labeled:
            raise InputError(f"dialogue {self.id!r} has no gold labels")
        return [p.gold_state for p in self.pairs]


@dataclass
class GroundTruthStructure:
    """States, initial distribution, transitions, and per-state templates."""

    states: List[str]
    init: np.ndarray
    trans: np.ndarray
    templates: Dict[str, Dict[str, List[str]]]
    slots: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.init = np.asarray(self.init, dtype=np.float64)
        self.trans = np.asarray(self.trans, dtype=np.float64)
        n = len(self.states)
        if self.init.shape != (n,):
            raise InputError(f"init distribution must have length {n}")
        if self.trans.shape != (n, n):
            raise InputError(f"transition matrix must be {n}x{n}")
        if abs(self.init.sum() - 1.0) > 1e-9 or (self.init < 0).any():
            raise InputError("initial distribution is not a probability vector")
        rows = self.trans.sum(axis=1)
        if np.abs(rows - 1.0).max() > 1e-9 or (self.trans < 0).any():
            raise InputError("transition matrix rows must each sum to 1")
        for name in self.states:
            tpl = self.templates.get(name)
            if not tpl or not tpl.get("sys") or not tpl.get("usr"):
                raise InputError(
                    f"state {name!r} needs at least one sys and one usr template"
                )
        for name, tpl in self.templates.items():
            for text in tpl["sys"] + tpl["usr"]:
                for slot in _SLOT_RE.findall(text):
                    if slot not in self.slots:
                        raise InputError(
                            f"template for {name!r} uses unknown slot {slot!r}"
                        )

    @property
    def n_states(self) -> int:
        return len(self.states)

    def is_absorbing(self, state: int) -> bool:
        return self.trans[state, state] >= 1.0 - 1e-9

    def has_absorbing_state(self) -> bool:
        return any(self.is_absorbing(i) for i in range(self.n_states))

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "init": self.init.tolist(),
            "trans": self.trans.tolist(),
            "templates": self.templates,
            "slots": self.slots,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GroundTruthStructure":
        for key in ("states", "init", "trans", "templates"):
            if key not in obj:
                raise CorpusParseError(f"structure file missing {key!r}")
        return cls(
            states=list(obj["states"]),
            init=np.asarray(obj["init"], dtype=np.float64),
            trans=np.asarray(obj["trans"], dtype=np.float64),
            templates=obj["templates"],
            slots=obj.get("slots", {}),
        )


def save_corpus(dialogues: Sequence[Dialogue], path) -> None:
    records = [
        {
            "id": d.id,
            "turns": [
                {"sys": p.system_text, "usr": p.user_text, "state": p.gold_state}
                for p in d.pairs
            ],
        }
        for d in dialogues
    ]
    Path(path).write_text(
        json.dumps(records, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_corpus(path) -> List[Dialogue]:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        records = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(f"corpus file {path} is not valid JSON: {exc}") from exc
    if not isinstance(records, list):
        raise CorpusParseError(f"corpus file {path} must be a JSON array")
    dialogues = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "id" not in rec:
            raise CorpusParseError(f"corpus record {i} has no 'id' field")
        did = rec["id"]
        if "turns" not in rec or not isinstance(rec["turns"], list):
            raise CorpusParseError(f"dialogue {did!r} is missing the 'turns' list")
        pairs = []
        for j, turn in enumerate(rec["turns"]):
            for key in ("sys", "usr"):
                if key not in turn:
                    raise CorpusParseError(
                        f"dialogue {did!r} turn {j} is missing the {key!r} field"
                    )
            state = turn.get("state")
            if state is not None and not isinstance(state, int):
                raise CorpusParseError(
                    f"dialogue {did!r} turn {j}: 'state' must be int or null"
                )
            try:
                pairs.append(UtterancePair(turn["sys"], turn["usr"], state))
            except InputError as exc:
                raise CorpusParseError(f"dialogue {did!r} turn {j}: {exc}") from exc
        try:
            dialogues.append(Dialogue(id=did, pairs=pairs))
        except InputError as exc:
            raise CorpusParseError(str(exc)) from exc
    return dialogues


def save_structure(structure: GroundTruthStructure, path) -> None:
    Path(path).write_text(
        json.dumps(structure.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_structure(path) -> GroundTruthStructure:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(
            f"structure file {path} is not valid JSON: {exc}"
        ) from exc
    return GroundTruthStructure.from_dict(obj)


def _fill_slots(template: str, slots: Dict[str, List[str]], rng: RngState) -> str:
    def repl(match):
        fillers = slots[match.group(1)]
        return fillers[rng.choice(len(fillers))]

    return _SLOT_RE.sub(repl, template)


def _sample_walk(structure: GroundTruthStructure, max_turns: Optional[int],
                 rng: RngState) -> List[int]:
    walk = [rng.choice(structure.n_states, p=structure.init)]
    while not structure.is_absorbing(walk[-1]):
        if max_turns is not None and len(walk) >= max_turns:
            break
        row = structure.trans[walk[-1]]
        walk.append(rng.choice(structure.n_states, p=row))
    return walk


def generate_synthetic(structure: GroundTruthStructure, n_dialogues: int,
                       min_turns: int = 6, max_turns: Optional[int] = 13,
                       rng: Optional[RngState] = None,
                       id_prefix: str = "dlg") -> List[Dialogue]:
    """Sample labeled dialogues by walking the structure's Markov chain.

    Each walk starts from the initial distribution and stops when it enters
    an absorbing state or reaches ``max_turns`` pairs.  Walks shorter than
    ``min_turns`` are discarded and resampled.  Texts are drawn uniformly
    from the state's templates, with ``{slot}`` placeholders filled from
    the structure's slot lists.
    """
    if rng is None:
        rng = RngState(0)
    if min_turns < 1:
        raise ParameterError(f"min_turns must be ≥ 1, got {min_turns}")
    if max_turns is not None and max_turns < min_turns:
        raise ParameterError(
            f"max_turns ({max_turns}) must be ≥ min_turns ({min_turns})"
        )
    if max_turns is None and not structure.has_absorbing_state():
        raise ParameterError(
            "structure has no absorbing state; an unbounded walk would never end "
            "(set max_turns)"
        )
    dialogues = []
    for d in range(n_dialogues):
        walk = None
        for _ in range(1000):
            candidate = _sample_walk(structure, max_turns, rng)
            if len(candidate) >= min_turns:
                walk = candidate
                break
        if walk is None:
            raise ParameterError(
                f"could not sample a walk of ≥ {min_turns} turns after 1000 "
                "attempts; the structure terminates too quickly"
            )
        pairs = []
        for state in walk:
            tpl = structure.templates[structure.states[state]]
            sys_t = tpl["sys"][rng.choice(len(tpl["sys"]))]
            usr_t = tpl["usr"][rng.choice(len(tpl["usr"]))]
            pairs.append(
                UtterancePair(
                    system_text=_fill_slots(sys_t, structure.slots, rng),
                    user_text=_fill_slots(usr_t, structure.slots, rng),
                    gold_state=state,
                )
            )
        dialogues.append(Dialogue(id=f"{id_prefix}-{d:05d}", pairs=pairs))
    return dialogues


_NATO = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa",
    "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu",
]


def chain_structure(k: int) -> GroundTruthStructure:
    """A k-state cyclic chain: state i always moves to state (i+1) mod k.

    The initial state is uniform over all k states, so dialogues differ in
    phase and a model must read utterance content — not just position — to
    recover the chain.  Each state has exactly one deterministic template.
    """
    if not 2 <= k <= len(_NATO):
        raise ParameterError(f"chain size must be in [2, {len(_NATO)}], got {k}")
    trans = np.zeros((k, k))
    for i in range(k):
        trans[i, (i + 1) % k] = 1.0
    templates = {
        f"s{i}": {
            "sys": [f"let us talk about {_NATO[i]} now ."],
            "usr": [f"understood , {_NATO[i]} it is ."],
        }
        for i in range(k)
    }
    return GroundTruthStructure(
        states=[f"s{i}" for i in range(k)],
        init=np.full(k, 1.0 / k),
        trans=trans,
        templates=templates,
    )


def _bus_structure() -> GroundTruthStructure:
    states = ["greet_ask_loc", "ask_time", "query_kb", "inform_result",
              "anything_else", "goodbye"]
    init = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    trans = np.array([
        #  greet  time  query inform else  bye
        [0.00, 0.80, 0.20, 0.00, 0.00, 0.00],  # greet_ask_loc
        [0.00, 0.00, 1.00, 0.00, 0.00, 0.00],  # ask_time
        [0.00, 0.00, 0.00, 1.00, 0.00, 0.00],  # query_kb
        [0.00, 0.00, 0.00, 0.00, 1.00, 0.00],  # inform_result
        [0.25, 0.15, 0.00, 0.00, 0.00, 0.60],  # anything_else
        [0.00, 0.00, 0.00, 0.00, 0.00, 1.00],  # goodbye (absorbing)
    ])
    templates = {
        "greet_ask_loc": {
            "sys": [
                "hello ! welcome to bus information . where are you leaving from ?",
                "hi , this is the bus line . what is your departure place ?",
            ],
            "usr": ["i am leaving from {loc} .", "from {loc} , please ."],
        },
        "ask_time": {
            "sys": ["when do you want to leave ?",
                    "what time would you like the bus ?"],
            "usr": ["around {time} .", "at {time} , please ."],
        },
        "query_kb": {
            "sys": ["QUERY loc={loc} time={time}"],
            "usr": ["RET bus={bus_no} arrive={time}"],
        },
        "inform_result": {
            "sys": [
                "bus {bus_no} will arrive at {time} .",
                "you can take bus {bus_no} , it arrives in {mins} minutes .",
            ],
            "usr": ["great , thank you !", "okay , that works ."],
        },
        "anything_else": {
            "sys": ["is there anything else i can help with ?", "anything else ?"],
            "usr": ["actually , one more thing .", "no , that is all ."],
        },
        "goodbye": {
            "sys": ["goodbye and have a nice day !", "bye bye !"],
            "usr": ["goodbye !", "bye !"],
        },
    }
    slots = {
        "loc": ["penn station", "market street", "the airport", "city center",
                "museum district"],
        "time": ["9 am", "noon", "5 pm", "tonight", "8:30"],
        "bus_no": ["42", "7", "103", "15"],
        "mins": ["5", "10", "20"],
    }
    return GroundTruthStructure(states=states, init=init, trans=trans,
                                templates=templates, slots=slots)


def _weather_structure() -> GroundTruthStructure:
    states = ["greet_ask_loc", "ask_date", "query_kb", "inform_weather",
              "anything_else", "goodbye"]
    init = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    trans = np.array([
        [0.00, 0.70, 0.30, 0.00, 0.00, 0.00],  # greet_ask_loc
        [0.00, 0.00, 1.00, 0.00, 0.00, 0.00],  # ask_date
        [0.00, 0.00, 0.00, 1.00, 0.00, 0.00],  # query_kb
        [0.00, 0.00, 0.00, 0.00, 1.00, 0.00],  # inform_weather
        [0.20, 0.20, 0.00, 0.00, 0.00, 0.60],  # anything_else
        [0.00, 0.00, 0.00, 0.00, 0.00, 1.00],  # goodbye (absorbing)
    ])
    templates = {
        "greet_ask_loc": {
            "sys": [
                "hello ! weather information service . which city do you need ?",
                "hi , this is the weather line . what place are you asking about ?",
            ],
            "usr": ["the weather in {loc} .", "{loc} , please ."],
        },
        "ask_date": {
            "sys": ["for which day ?", "what date do you need ?"],
            "usr": ["for {date} .", "{date} , please ."],
        },
        "query_kb": {
            "sys": ["QUERY loc={loc} date={date}"],
            "usr": ["RET weather={cond} temp={temp}"],
        },
        "inform_weather": {
            "sys": [
                "it will be {cond} in {loc} , around {temp} degrees .",
                "expect {cond} weather , about {temp} degrees .",
            ],
            "usr": ["good to know , thanks !", "thanks for the update ."],
        },
        "anything_else": {
            "sys": ["is there anything else i can help with ?", "anything else ?"],
            "usr": ["actually , one more thing .", "no , that is all ."],
        },
        "goodbye": {
            "sys": ["goodbye and have a nice day !", "bye bye !"],
            "usr": ["goodbye !", "bye !"],
        },
    }
    slots = {
        "loc": ["san francisco", "new york", "chicago", "austin", "seattle"],
        "date": ["today", "tomorrow", "monday", "the weekend"],
        "cond": ["sunny", "rainy", "cloudy", "windy"],
        "temp": ["40", "60", "72", "85"],
    }
    return GroundTruthStructure(states=states, init=init, trans=trans,
                                templates=templates, slots=slots)


def default_structures() -> Dict[str, GroundTruthStructure]:
    """Built-in structures: two task-oriented flows plus small chains."""
    return {
        "bus": _bus_structure(),
        "weather": _weather_structure(),
        "chain-3": chain_structure(3),
        "chain-4": chain_structure(4),
    }


def get_structure(name: str) -> GroundTruthStructure:
    """Look up a built-in structure; "chain-<k>" accepts any k from 2 to 26."""
    match = re.fullmatch(r"chain-(\d+)", name)
    if match:
        return chain_structure(int(match.group(1)))
    builtin = default_structures()
    if name not in builtin:
        raise ParameterError(
            f"unknown structure {name!r}; built-ins: "
            f"{', '.join(sorted(builtin))} or chain-<k>"
        )
    return builtin[name]
