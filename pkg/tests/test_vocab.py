import pytest

from avse.vocab import (CLS_ID, EOS_ID, PAD_ID, RESERVED, SEP_ID, UNK_ID, Vocab,
                        build_vocab, split_tokens, tokenize)


def test_reserved_ids_are_stable():
    assert (PAD_ID, CLS_ID, SEP_ID, UNK_ID, EOS_ID) == (0, 1, 2, 3, 4)
    v = build_vocab(["A B."])
    for i, tok in enumerate(RESERVED):
        assert v.id_of(tok) == i


def test_split_peels_trailing_punctuation():
    assert split_tokens("NOTAMS.") == ["NOTAMS", "."]
    assert split_tokens("RWY 7R, 7L.") == ["RWY", "7R", ",", "7L", "."]
    assert split_tokens("A2929.. X") == ["A2929", ".", ".", "X"]
    # interior dots stay attached: frequencies and times are single tokens
    assert split_tokens("FREQ 123.77 NOW") == ["FREQ", "123.77", "NOW"]


def test_build_vocab_orders_by_count_then_token():
    v = build_vocab(["B B A A C.", "A."])
    # A:3, B:2, C:1, '.':2 -> A first, then '.'/B tied at 2 ('.' sorts before B)
    assert v.id_of("A") == 5
    assert v.id_of(".") == 6
    assert v.id_of("B") == 7
    assert v.id_of("C") == 8


def test_min_count_filters():
    v = build_vocab(["A A B."], min_count=2)
    assert v.id_of("A") != UNK_ID
    assert v.id_of("B") == UNK_ID
    with pytest.raises(ValueError):
        build_vocab(["A."], min_count=0)


def test_tokenize_prepends_cls_and_truncates():
    v = build_vocab(["AAA BBB CCC DDD."])
    ids = tokenize("AAA BBB CCC DDD.", v, max_len=64)
    assert ids[0] == CLS_ID
    assert len(ids) == 6  # CLS + 4 words + '.'
    short = tokenize("AAA BBB CCC DDD.", v, max_len=3)
    assert len(short) == 3 and short[0] == CLS_ID


def test_unknown_tokens_map_to_unk():
    v = build_vocab(["AAA."])
    ids = tokenize("ZZZ AAA.", v, max_len=64)
    assert ids[1] == UNK_ID
    assert ids[2] == v.id_of("AAA")


def test_round_trip_through_file(tmp_path):
    v = build_vocab(["RWY 32 CLOSED.", "BIRD ACTIVITY."])
    p = tmp_path / "tokens.vocab"
    v.save(str(p))
    w = Vocab.load(str(p))
    assert w.id_to_token == v.id_to_token
    assert len(w) == len(v)


def test_load_rejects_wrong_reserved_block(tmp_path):
    p = tmp_path / "bad.vocab"
    p.write_text("[PAD]\n[CLS]\nWRONG\n[UNK]\n[EOS]\nA\n")
    with pytest.raises(ValueError):
        Vocab.load(str(p))


def test_duplicate_tokens_rejected():
    with pytest.raises(ValueError):
        Vocab(["A", "A"])
