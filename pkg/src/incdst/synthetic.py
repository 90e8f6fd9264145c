"""Seeded grammar-based restaurant dialogs with gold state annotations.

The goal accumulates over the dialog, ``method`` persists until a user act
changes it and ``requested`` only holds the slots asked for in that turn.
Every goal value is said literally in the turn that introduces it, so
generated corpora can be used to check where in an utterance a tracker
should change its mind.
"""

from __future__ import annotations

import numpy as np

from .data import GOAL_SLOTS, Dialog, Turn, TurnAnnotation

PRICES = ("cheap", "moderate", "expensive")
AREAS = ("north", "south", "east", "west", "centre")
FOODS = (
    "italian", "chinese", "indian", "french", "thai",
    "spanish", "british", "korean", "turkish", "modern european",
)
NAMES = (
    "nandos", "pizza hut", "the gandhi", "royal spice",
    "curry garden", "bedouin", "la margherita", "saigon city",
)
VALUES = {"pricerange": PRICES, "area": AREAS, "food": FOODS, "name": NAMES}

REQUEST_SURFACE = {
    "area": "area",
    "food": "type of food",
    "pricerange": "price range",
    "addr": "address",
    "phone": "phone number",
    "postcode": "post code",
    "name": "name",
    "signature": "signature dish",
}

DONTCARE_SURFACE = {
    "pricerange": ("any price range", "i dont care about the price", "any price"),
    "area": ("any area", "i dont care about the area", "any part of town"),
    "food": ("any kind of food", "i dont care about the food", "any food"),
}

SYSTEM_ASK = {
    "pricerange": ("what price range", "which price range do you want"),
    "area": ("what part of town", "which area do you want"),
    "food": ("what kind of food", "what food do you want"),
}
SYSTEM_OPENING = ("how may i help you", "welcome how can i help")
SYSTEM_OFFER = ("i found a place", "there is a nice place", "this place matches")
SYSTEM_INFO = ("here you go", "sure here it is")
SYSTEM_ALT = ("another option is available", "i found another one")
SYSTEM_GENERIC = ("anything else", "can i help with anything else")

INTROS = ("im looking for", "i want", "i need", "", "find me")
REQUEST_TEMPLATES = ("what is the {}", "can i have the {}", "{}", "may i have the {} please")
ALTERNATIVES = ("is there anything else", "anything else", "how about something else", "is there another one")
ACKS = ("okay", "yes", "thank you", "that sounds good")
BYES = ("thank you good bye", "good bye", "thanks bye")
NOISE = ("hello", "hi", "um")


class _Sampler:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def pick(self, options):
        return options[int(self.rng.integers(len(options)))]

    def coin(self, p: float) -> bool:
        return bool(self.rng.random() < p)


def _constraint_utterance(s: _Sampler, slots: dict) -> str:
    """Compose an inform utterance for one or more goal constraints."""
    words = [s.pick(INTROS)] if len(slots) > 1 or s.coin(0.5) else []
    price, food, area = slots.get("pricerange"), slots.get("food"), slots.get("area")
    if len(slots) == 1 and not words:
        # short answer to a system question
        (slot, value), = slots.items()
        if value == "dontcare":
            return s.pick(DONTCARE_SURFACE[slot])
        form = {
            "pricerange": ("{}", "{} please", "something {}"),
            "area": ("{}", "the {} part of town", "{} please"),
            "food": ("{}", "{} food", "{} food please"),
        }[slot]
        return s.pick(form).format(value)
    np_ = ["a"]
    if price and price != "dontcare":
        np_.append(price)
    food_adj = food and food != "dontcare" and s.coin(0.5)
    if food_adj:
        np_.append(food)
    np_.append("restaurant")
    phrases = []
    if food and food != "dontcare" and not food_adj:
        phrases.append(f"serving {food} food")
    if area and area != "dontcare":
        phrases.append(s.pick(("in the {} part of town", "in the {}")).format(area))
    if len(phrases) == 2 and s.coin(0.5):
        phrases.reverse()
    tail = [s.pick(DONTCARE_SURFACE[slot]) for slot in ("pricerange", "area", "food") if slots.get(slot) == "dontcare"]
    if tail:
        phrases.append("and " + " and ".join(tail))
    return " ".join(w for w in words + np_ + phrases if w)


def _dialog(s: _Sampler, dialog_id: str, noise: float) -> Dialog:
    goal = {slot: "none" for slot in GOAL_SLOTS}
    method = "none"
    n_turns = int(s.rng.integers(3, 8))
    system = s.pick(SYSTEM_OPENING)
    by_name = False
    turns = []
    for k in range(n_turns):
        requested: frozenset = frozenset()
        last = k == n_turns - 1
        unset = [slot for slot in ("pricerange", "area", "food") if goal[slot] == "none"]
        next_system = s.pick(SYSTEM_GENERIC)
        if last:
            user = s.pick(BYES)
            method = "finished"
        elif k == 0 and s.coin(0.08):
            user = s.pick(NOISE)
            next_system = s.pick(SYSTEM_OPENING)
        elif k == 0 and s.coin(0.15):
            by_name = True
            goal["name"] = s.pick(NAMES)
            user = s.pick(("im looking for {}", "{}", "i want {}", "the address of {}")).format(goal["name"])
            if user.startswith("the address"):
                requested = frozenset({"addr"})
            method = "byname"
            next_system = s.pick(SYSTEM_OFFER)
        elif not by_name and unset and (method == "none" or s.coin(0.45)):
            if method == "none":
                n = int(s.rng.integers(1, len(unset) + 1))
                chosen = [unset[i] for i in sorted(s.rng.choice(len(unset), size=n, replace=False))]
            else:
                chosen = [unset[0]]
            slots = {}
            for slot in chosen:
                slots[slot] = "dontcare" if s.coin(0.1) else s.pick(VALUES[slot])
            goal.update(slots)
            user = _constraint_utterance(s, slots)
            method = "byconstraints"
            still = [slot for slot in ("pricerange", "area", "food") if goal[slot] == "none"]
            next_system = s.pick(SYSTEM_ASK[still[0]]) if still else s.pick(SYSTEM_OFFER)
        else:
            r = s.rng.random()
            if r < 0.6:
                wanted = ["addr", "phone", "postcode", "signature", "area", "food", "pricerange", "name"]
                n = 1 if s.coin(0.7) else 2
                picked = [wanted[i] for i in sorted(s.rng.choice(len(wanted), size=n, replace=False))]
                requested = frozenset(picked)
                surfaces = [REQUEST_SURFACE[p] for p in picked]
                if n == 1:
                    user = s.pick(REQUEST_TEMPLATES).format(surfaces[0])
                else:
                    user = s.pick(("what is the {} and {}", "can i have the {} and the {}")).format(*surfaces)
                next_system = s.pick(SYSTEM_INFO)
            elif r < 0.75 and not by_name:
                user = s.pick(ALTERNATIVES)
                method = "byalternatives"
                next_system = s.pick(SYSTEM_ALT)
            elif r < 0.87 and not by_name:
                slot = s.pick(("food", "area"))
                choices = [v for v in VALUES[slot] if v != goal[slot]]
                goal[slot] = s.pick(choices)
                phrase = f"{goal[slot]} food" if slot == "food" else f"the {goal[slot]}"
                user = s.pick(("how about {}", "what about {} instead")).format(phrase)
                method = "byconstraints"
                next_system = s.pick(SYSTEM_OFFER)
            else:
                user = s.pick(ACKS)
        confidence = 1.0 - noise * float(s.rng.random())
        tokens = user.split()
        turns.append(
            Turn(
                system_tokens=system.split(),
                asr_tokens=tokens,
                asr_confidence=confidence,
                gold=TurnAnnotation(goal=dict(goal), method=method, requested=requested),
                transcript_tokens=list(tokens),
            )
        )
        system = next_system
    return Dialog(dialog_id, turns)


def gen_synthetic_corpus(seed: int, n_dialogs: int, noise: float = 0.1, prefix: str = "synth") -> list[Dialog]:
    """``n_dialogs`` annotated dialogs; identical for identical arguments.

    Each turn's ASR confidence is ``1 - noise * u`` with ``u ~ U[0, 1)``.
    """
    if n_dialogs < 1:
        raise ValueError("n_dialogs must be >= 1")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must lie in [0, 1]")
    s = _Sampler(np.random.default_rng(seed))
    return [_dialog(s, f"{prefix}-{seed}-{i:05d}", noise) for i in range(n_dialogs)]


def gen_splits(seed: int, n_train: int, n_dev: int, n_test: int, noise: float = 0.1):
    """Independent train/dev/test corpora derived from one seed."""
    seeds = [int(ss.generate_state(1)[0]) for ss in np.random.SeedSequence(seed).spawn(3)]
    return tuple(
        gen_synthetic_corpus(sd, n, noise, prefix=name)
        for sd, n, name in zip(seeds, (n_train, n_dev, n_test), ("train", "dev", "test"))
    )
