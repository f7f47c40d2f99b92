"""Seeded toy corpus with planted lexical evidence.

People have wiki pages listing a few facts ("Arvo was born in Kelmar .").
Places have pages too, so claims that name a place retrieve a second page of
distractor sentences. Claims restate a fact (SUPPORTED), swap its value for
another of the same kind (REFUTED), or ask about a relation the page does not
state (NEI). The gold evidence for SUPPORTED/REFUTED claims is the single page
sentence carrying the claim's relation.
"""

from __future__ import annotations

import numpy as np

from twowing.corpus import ClaimRecord, WikiPage

PEOPLE = (
    "Arvo", "Belin", "Corra", "Dovek", "Esmer", "Faln", "Gorrin", "Halvi", "Ilsa", "Jorun",
    "Kesti", "Lumo", "Marek", "Nessa", "Orlan", "Pell", "Quira", "Rasko", "Sulen", "Tovi",
)
PLACES = (
    "Kelmar", "Dathis", "Vorn", "Ebrin", "Tallow", "Mirro", "Sandu", "Quell", "Ostra", "Pyre",
)
INSTRUMENTS = ("flute", "cello", "drums", "harp", "oboe", "lute")
FOODS = ("apples", "lentils", "cheese", "figs", "olives", "rice")

# relation -> (sentence template, value pool)
RELATIONS = {
    "born": ("{who} was born in {val} .", PLACES),
    "lives": ("{who} lives in {val} .", PLACES),
    "plays": ("{who} plays the {val} .", INSTRUMENTS),
    "eats": ("{who} often eats {val} .", FOODS),
    "works": ("{who} works in {val} .", PLACES),
}
PLACE_FACTS = (
    "{p} is a quiet town .",
    "{p} has an old harbour .",
    "The river near {p} floods in spring .",
)


def make_corpus(n_claims: int = 50, seed: int = 0, facts_per_person: int = 3):
    """Generate ``(pages, claims)`` with roughly equal label proportions.

    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    relations = sorted(RELATIONS)
    pages = []
    facts = {}
    for who in PEOPLE:
        chosen = sorted(rng.choice(len(relations), size=facts_per_person, replace=False))
        sentences = [f"{who} is a person of some renown ."]
        person_facts = {}
        for r in chosen:
            rel = relations[r]
            template, pool = RELATIONS[rel]
            val = pool[rng.integers(len(pool))]
            person_facts[rel] = (len(sentences), val)
            sentences.append(template.format(who=who, val=val))
        facts[who] = person_facts
        pages.append(WikiPage(who, sentences))
    for place in PLACES:
        pages.append(WikiPage(place, [f.format(p=place) for f in PLACE_FACTS]))

    claims = []
    labels = ("SUPPORTED", "REFUTED", "NEI")
    used = set()
    while len(claims) < n_claims:
        label = labels[len(claims) % 3]
        who = PEOPLE[rng.integers(len(PEOPLE))]
        person_facts = facts[who]
        if label == "NEI":
            missing = [r for r in relations if r not in person_facts]
            rel = missing[rng.integers(len(missing))]
            template, pool = RELATIONS[rel]
            val = pool[rng.integers(len(pool))]
            evidence = set()
        else:
            known = sorted(person_facts)
            rel = known[rng.integers(len(known))]
            template, pool = RELATIONS[rel]
            idx, true_val = person_facts[rel]
            if label == "SUPPORTED":
                val = true_val
            else:
                others = [v for v in pool if v != true_val]
                val = others[rng.integers(len(others))]
            evidence = {(who, idx)}
        text = template.format(who=who, val=val)
        if text in used:
            continue
        used.add(text)
        claims.append(ClaimRecord(len(claims), text, label, evidence))
    return pages, claims
