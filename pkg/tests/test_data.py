import json

import numpy as np
import pytest

from incdst.data import (
    GOAL_SLOTS,
    UNK,
    Dialog,
    Turn,
    TurnAnnotation,
    build_vocab,
    corpus_stats,
    dialog_to_json,
    encode_dialog,
    load_corpus,
    normalize,
    oov_rate,
    save_corpus,
    with_mode,
)
from incdst.errors import ParseError, ValidationError
from incdst.synthetic import DONTCARE_SURFACE, gen_splits, gen_synthetic_corpus

TWO_TURNS = [
    {
        "dialog_id": "x1",
        "turns": [
            {
                "system": "Hello , how may I help you ?",
                "asr": "cheap  restaurant",
                "asr_score": 0.7,
                "transcript": "a cheap restaurant",
                "goal": {"pricerange": "cheap", "area": "none", "name": "none", "food": "none"},
                "method": "byconstraints",
                "requested": [],
            },
            {
                "system": "What part of town ?",
                "asr": "PHONE number",
                "asr_score": 0.95,
                "transcript": "phone number",
                "goal": {"pricerange": "cheap", "area": "none", "name": "none", "food": "none"},
                "method": "byconstraints",
                "requested": ["phone"],
            },
        ],
    }
]


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def test_normalize():
    assert normalize("Phone") == "phone"
    assert normalize(" thank\t") == "thank"
    assert normalize("GOOD-bye") == "good-bye"


def test_empty_file(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert load_corpus(tmp_path / "e.jsonl") == []


def test_roundtrip(tmp_path):
    src = write_jsonl(tmp_path / "a.jsonl", TWO_TURNS)
    first = load_corpus(src)
    save_corpus(first, tmp_path / "b.jsonl")
    second = load_corpus(tmp_path / "b.jsonl")
    assert [dialog_to_json(d) for d in first] == [dialog_to_json(d) for d in second]
    t = second[0].turns[1]
    assert t.asr_tokens == ["phone", "number"] and t.gold.requested == frozenset({"phone"})
    assert second[0].turns[0].system_tokens[:2] == ["hello", ","]


def test_synthetic_roundtrip_lossless(tmp_path):
    corpus = gen_synthetic_corpus(3, 20)
    save_corpus(corpus, tmp_path / "s.jsonl")
    back = load_corpus(tmp_path / "s.jsonl")
    for a, b in zip(corpus, back):
        assert dialog_to_json(a) == dialog_to_json(b)


def test_modes(tmp_path):
    src = write_jsonl(tmp_path / "a.jsonl", TWO_TURNS)
    asr = load_corpus(src, "asr")[0]
    tra = load_corpus(src, "transcript")[0]
    assert asr.turns[0].user_tokens == ["cheap", "restaurant"]
    assert tra.turns[0].user_tokens == ["a", "cheap", "restaurant"]
    vocab = build_vocab([asr, tra])
    for obs in tra.turns[0].observations(vocab):
        assert obs.confidence == 1.0
    user = [o for o in asr.turns[0].observations(vocab) if o.speaker == "user"]
    assert all(o.confidence == 0.7 for o in user)
    assert with_mode([asr], "transcript")[0].turns[0].user_tokens == tra.turns[0].user_tokens


def test_parse_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps(TWO_TURNS[0]) + "\n{not json\n")
    with pytest.raises(ParseError, match="line 2"):
        load_corpus(p)
    broken = json.loads(json.dumps(TWO_TURNS[0]))
    del broken["turns"][0]["asr"]
    write_jsonl(p, [TWO_TURNS[0], TWO_TURNS[0], broken])
    with pytest.raises(ParseError) as info:
        load_corpus(p)
    assert info.value.line == 3


def test_confidence_out_of_range(tmp_path):
    bad = json.loads(json.dumps(TWO_TURNS[0]))
    bad["turns"][1]["asr_score"] = 1.2
    with pytest.raises(ValidationError):
        load_corpus(write_jsonl(tmp_path / "c.jsonl", [bad]))


def test_transcript_required_in_transcript_mode(tmp_path):
    bad = json.loads(json.dumps(TWO_TURNS[0]))
    del bad["turns"][0]["transcript"]
    p = write_jsonl(tmp_path / "t.jsonl", [bad])
    load_corpus(p, "asr")
    with pytest.raises(ValidationError):
        load_corpus(p, "transcript")


def test_vocab_basics():
    d = Dialog("h", [Turn([], ["hello", "hello"], 1.0, TurnAnnotation())])
    v = build_vocab([d])
    assert len(v) == 2 and v.tokens[0] == UNK and v.lookup("hello") == 1 and v.lookup("nope") == 0
    with pytest.raises(ValueError):
        build_vocab([])


def test_vocab_stable_order(small_splits):
    a, b = build_vocab(small_splits[0]), build_vocab(small_splits[0])
    assert a.tokens == b.tokens
    first = small_splits[0][0].turns[0].user_tokens[0]
    assert a.lookup(first) == 1


def test_vocab_with_system_tokens():
    d = Dialog("h", [Turn(["welcome"], ["hi"], 1.0, TurnAnnotation())])
    assert build_vocab([d]).tokens == [UNK, "hi"]
    assert build_vocab([d], include_system=True).tokens == [UNK, "welcome", "hi"]


def test_oov_rate():
    tr = [Dialog("a", [Turn([], ["a", "b"], 1.0, TurnAnnotation())])]
    ev = [Dialog("b", [Turn([], ["a", "c", "c", "d"], 1.0, TurnAnnotation())])]
    assert oov_rate(tr, ev) == pytest.approx(2 / 3)
    assert oov_rate(tr, ev, by="token") == pytest.approx(3 / 4)


def test_stats():
    assert corpus_stats([Dialog("e", [])]).to_json() == {
        "number_of_dialogs": 1,
        "number_of_tokens": 0,
        "max_seq_length": 0,
        "avg_tokens_per_turn": 0.0,
        "avg_turns_per_dialog": 0.0,
    }
    d = Dialog("s", [Turn([], ["a", "b", "c"], 1.0, TurnAnnotation()), Turn([], ["a"], 1.0, TurnAnnotation())])
    s = corpus_stats([d, Dialog("t", [Turn([], ["z"], 1.0, TurnAnnotation())])])
    assert (s.dialogs, s.distinct_tokens, s.max_seq_length) == (2, 4, 3)
    assert s.avg_tokens_per_turn == pytest.approx(5 / 3) and s.avg_turns_per_dialog == 1.5


def test_encode_dialog_spans(small_splits, small_vocab):
    d = small_splits[0][0]
    enc = encode_dialog(d, small_vocab)
    assert len(enc.spans) == len(d.turns)
    for (s, u, e), turn in zip(enc.spans, d.turns):
        assert u - s == len(turn.system_tokens) and e - u == len(turn.user_tokens)
        assert np.all(enc.confidences[s:u] == 1.0)
        assert np.all(enc.confidences[u:e] == turn.asr_confidence)


# -- synthetic --------------------------------------------------------------


def test_synthetic_determinism():
    a, b = gen_synthetic_corpus(5, 30), gen_synthetic_corpus(5, 30)
    assert [dialog_to_json(d) for d in a] == [dialog_to_json(d) for d in b]
    assert [dialog_to_json(d) for d in a] != [dialog_to_json(d) for d in gen_synthetic_corpus(6, 30)]


def test_synthetic_noise_zero():
    corpus = gen_synthetic_corpus(1, 50, noise=0.0)
    assert all(t.asr_confidence == 1.0 for d in corpus for t in d.turns)


def test_synthetic_confidence_range():
    corpus = gen_synthetic_corpus(1, 50, noise=0.1)
    conf = np.array([t.asr_confidence for d in corpus for t in d.turns])
    assert conf.min() > 0.9 and conf.max() <= 1.0 and len(set(conf)) > 1


def test_synthetic_argument_checks():
    with pytest.raises(ValueError):
        gen_synthetic_corpus(0, 0)
    with pytest.raises(ValueError):
        gen_synthetic_corpus(0, 5, noise=1.5)


@pytest.mark.parametrize("seed", range(5))
def test_goal_values_are_spoken_when_introduced(seed):
    """Each newly set goal value appears literally in that turn's user utterance."""
    for d in gen_synthetic_corpus(seed, 300):
        prev = {s: "none" for s in GOAL_SLOTS}
        for turn in d.turns:
            text = " " + " ".join(turn.user_tokens) + " "
            for slot in GOAL_SLOTS:
                value = turn.gold.goal[slot]
                if value == prev[slot] or value == "none":
                    continue
                if value == "dontcare":
                    assert any(f" {s} " in text for s in DONTCARE_SURFACE[slot]), (d.dialog_id, slot, text)
                else:
                    assert f" {value} " in text, (d.dialog_id, slot, value, text)
            prev = dict(turn.gold.goal)


def test_splits_are_distinct_and_sized():
    tr, dv, te = gen_splits(0, 10, 4, 3)
    assert (len(tr), len(dv), len(te)) == (10, 4, 3)
    assert tr[0].dialog_id.startswith("train") and te[0].dialog_id.startswith("test")
    assert dialog_to_json(tr[0])["turns"] != dialog_to_json(dv[0])["turns"]
