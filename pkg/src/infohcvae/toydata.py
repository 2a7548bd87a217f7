"""Seeded synthetic SQuAD-style corpus for desk-scale runs and tests.

Each paragraph states a handful of templated facts about people; questions
are templated paraphrases whose answers are verbatim spans of the paragraph.
"""

import random
from typing import List, Optional

from .corpus import QARecord

FIRST = ["Alice", "Bruno", "Chen", "Dmitri", "Elena", "Farah", "Gustav", "Hana", "Ivan", "Jonas",
         "Keiko", "Liam", "Maya", "Nadia", "Omar", "Priya", "Quinn", "Rosa", "Sven", "Tariq",
         "Uma", "Victor", "Wen", "Ximena", "Yusuf", "Zara"]
LAST = ["Abbott", "Berg", "Castro", "Dubois", "Eriksen", "Fischer", "Garcia", "Haddad", "Ito",
        "Jensen", "Kowalski", "Lopez", "Moreau", "Novak", "Okafor", "Petrov", "Quintero", "Rossi",
        "Silva", "Tanaka", "Ueda", "Vargas", "Weber", "Yilmaz"]
CITIES = ["Paris", "New York", "Lagos", "Osaka", "Lima", "Cairo", "Oslo", "San Diego", "Hanoi",
          "Rome", "Quito", "Dublin", "Buenos Aires", "Perth"]
COMPANIES = ["Acme Corp", "Globex", "Initech", "Umbrella Labs", "Hooli", "Stark Industries",
             "Wayne Enterprises", "Vandelay Imports", "Soylent", "Cyberdyne"]
INSTRUMENTS = ["violin", "cello", "piano", "drums", "flute", "harp", "trumpet", "banjo"]
ANIMALS = ["cat", "dog", "parrot", "rabbit", "turtle", "hamster"]
PETNAMES = ["Biscuit", "Pepper", "Mango", "Shadow", "Ziggy", "Noodle", "Pickles", "Comet"]
ORGS = ["a bakery", "a school", "a newspaper", "a bank", "a theater", "a museum", "a clinic"]

# (sentence template, [(question template, answer slot), ...])
FACTS = {
    "born": ("{p} was born in {city} in {year} .",
             [("where was {p} born ?", "city"), ("in which city was {p} born ?", "city"),
              ("when was {p} born ?", "year"), ("in what year was {p} born ?", "year")]),
    "work": ("{p} works at {company} .",
             [("where does {p} work ?", "company"), ("which company does {p} work for ?", "company"),
              ("who works at {company} ?", "p")]),
    "music": ("{p} plays the {instrument} .",
              [("what instrument does {p} play ?", "instrument"),
               ("which instrument is played by {p} ?", "instrument"),
               ("who plays the {instrument} ?", "p")]),
    "pet": ("{p} has a {animal} named {petname} .",
            [("what is the name of the {animal} of {p} ?", "petname"),
             ("what pet does {p} have ?", "animal")]),
    "founded": ("{p} founded {org} in {year2} .",
                [("when did {p} found {org} ?", "year2"), ("who founded {org} ?", "p")]),
}


def _paragraph(rng: random.Random, n_facts: int):
    kinds = rng.sample(sorted(FACTS), n_facts)
    people = set()
    sentences, slots_per_fact = [], []
    for kind in kinds:
        while True:
            p = f"{rng.choice(FIRST)} {rng.choice(LAST)}"
            if p not in people:
                people.add(p)
                break
        slots = {"p": p, "city": rng.choice(CITIES), "year": str(rng.randint(1900, 1999)),
                 "company": rng.choice(COMPANIES), "instrument": rng.choice(INSTRUMENTS),
                 "animal": rng.choice(ANIMALS), "petname": rng.choice(PETNAMES),
                 "org": rng.choice(ORGS), "year2": str(rng.randint(1950, 2020))}
        sentences.append(FACTS[kind][0].format(**slots))
        slots_per_fact.append((kind, slots))
    return sentences, slots_per_fact


def make_toy_records(n_paragraphs: int, questions_per_paragraph: int = 3, seed: int = 0,
                     n_facts: int = 3, prefix: str = "toy",
                     max_records: Optional[int] = None) -> List[QARecord]:
    rng = random.Random(seed)
    records: List[QARecord] = []
    for p_idx in range(n_paragraphs):
        sentences, facts = _paragraph(rng, n_facts)
        context = " ".join(s[0].upper() + s[1:] for s in sentences)
        # sentence start offsets let us locate slot values inside the right sentence
        starts, pos = [], 0
        for s in sentences:
            starts.append(pos)
            pos += len(s) + 1
        candidates = []
        for f_idx, (kind, slots) in enumerate(facts):
            for q_tmpl, slot in FACTS[kind][1]:
                candidates.append((f_idx, q_tmpl, slot, slots))
        rng.shuffle(candidates)
        ctx_id = f"{prefix}-{p_idx}"
        for q_idx, (f_idx, q_tmpl, slot, slots) in enumerate(candidates[:questions_per_paragraph]):
            answer = slots[slot]
            sent = context[starts[f_idx]:starts[f_idx] + len(sentences[f_idx])]
            start = starts[f_idx] + sent.lower().index(answer.lower())
            answer = context[start:start + len(answer)]
            records.append(QARecord(f"{ctx_id}-q{q_idx}", ctx_id, context,
                                    q_tmpl.format(**slots), answer, start))
            if max_records is not None and len(records) >= max_records:
                return records
    return records


def split_by_context(records: List[QARecord], test_fraction: float, seed: int = 0):
    """Split records so that no context appears on both sides."""
    ctx_ids = sorted({r.context_id for r in records})
    random.Random(seed).shuffle(ctx_ids)
    n_test = max(1, int(round(len(ctx_ids) * test_fraction)))
    test_ids = set(ctx_ids[:n_test])
    return ([r for r in records if r.context_id not in test_ids],
            [r for r in records if r.context_id in test_ids])
