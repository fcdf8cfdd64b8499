import json
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from promptclass.data import (
    LENGTH_THRESHOLDS, Dataset, LabeledExample, compute_stats, load_dataset, make_toy_corpus,
    save_dataset, split_manifest, stratified_split,
)
from promptclass.errors import DataError
from promptclass.tokenizer import train_vocab


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_csv_string_labels_first_appearance(tmp_path):
    ds = load_dataset(_write(tmp_path / "d.csv", "text,label\nfoo,a\nbar,b\n"))
    assert ds.label_map == {"a": 0, "b": 1}
    assert [(e.text, e.label) for e in ds] == [("foo", 0), ("bar", 1)]


def test_csv_quoting(tmp_path):
    ds = load_dataset(_write(tmp_path / "d.csv", 'text,label\n"int a, b;\nreturn ""x"";",b\n'))
    assert ds.examples[0].text == 'int a, b;\nreturn "x";'


def test_jsonl_integer_labels_pass_through(tmp_path):
    lines = [{"text": "x", "label": 2}, {"text": "y", "label": 0}, {"text": "", "label": 1}]
    path = _write(tmp_path / "d.jsonl", "\n".join(json.dumps(o) for o in lines) + "\n")
    ds = load_dataset(path)
    assert ds.labels == [2, 0, 1]
    assert ds.examples[2].text == ""


def test_jsonl_error_cites_line_17(tmp_path):
    lines = [json.dumps({"text": f"t{i}", "label": "a"}) for i in range(16)]
    lines.append(json.dumps({"text": "oops"}))
    with pytest.raises(DataError, match=":17:"):
        load_dataset(_write(tmp_path / "d.jsonl", "\n".join(lines) + "\n"))


def test_csv_error_cites_line_17(tmp_path):
    rows = ["text,label"] + [f"t{i},a" for i in range(15)] + ["broken,"]
    with pytest.raises(DataError, match=":17:"):
        load_dataset(_write(tmp_path / "d.csv", "\n".join(rows) + "\n"))


def test_missing_column_and_empty(tmp_path):
    with pytest.raises(DataError, match="label"):
        load_dataset(_write(tmp_path / "a.csv", "text,kind\nx,1\n"))
    with pytest.raises(DataError, match="empty"):
        load_dataset(_write(tmp_path / "b.csv", ""))
    with pytest.raises(DataError, match="empty"):
        load_dataset(_write(tmp_path / "c.jsonl", "\n"))


@pytest.mark.parametrize("suffix", ["csv", "jsonl"])
def test_save_reload_identity(tmp_path, suffix):
    ds = make_toy_corpus("comments", 10, seed=3)
    path = tmp_path / f"d.{suffix}"
    save_dataset(ds, path)
    again = load_dataset(path)
    assert [(e.text, e.label) for e in again] == [(e.text, e.label) for e in ds]


def _dataset(counts):
    ex = [LabeledExample(f"x{c}_{i}", c, f"{c}-{i}") for c, n in enumerate(counts) for i in range(n)]
    return Dataset(ex)


def test_split_two_classes_of_five():
    train, test = stratified_split(_dataset([5, 5]), 0.8, seed=0)
    assert Counter(e.label for e in train) == {0: 4, 1: 4}
    assert Counter(e.label for e in test) == {0: 1, 1: 1}


def test_split_single_class():
    train, test = stratified_split(_dataset([5]), 0.8)
    assert (len(train), len(test)) == (4, 1)


def test_split_code_smell_shape():
    train, test = stratified_split(_dataset([944, 805]), 0.8, seed=0)
    assert (len(train), len(test)) == (1399, 350)
    assert Counter(e.label for e in train) == {0: 755, 1: 644}
    assert Counter(e.label for e in test) == {0: 189, 1: 161}


def test_split_errors():
    with pytest.raises(ValueError):
        stratified_split(_dataset([5]), 1.0)
    ds = Dataset([LabeledExample("a", 0, "0"), LabeledExample("b", 2, "1")])
    with pytest.raises(DataError):
        stratified_split(ds, 0.8)


def test_split_is_seeded():
    ds = _dataset([20, 20])
    a = stratified_split(ds, 0.8, seed=1)
    assert a == stratified_split(ds, 0.8, seed=1)
    assert a != stratified_split(ds, 0.8, seed=2)


@settings(max_examples=100)
@given(st.lists(st.integers(1, 60), min_size=1, max_size=6), st.floats(0.05, 0.95),
       st.integers(0, 1000))
def test_split_properties(counts, ratio, seed):
    ds = _dataset(counts)
    train, test = stratified_split(ds, ratio, seed)
    ids_train, ids_test = {e.id for e in train}, {e.id for e in test}
    assert not ids_train & ids_test
    assert ids_train | ids_test == {e.id for e in ds}
    per_class = Counter(e.label for e in train)
    for c, n in enumerate(counts):
        assert abs(per_class[c] - n * ratio) < 1


def test_split_manifest():
    train, test = stratified_split(_dataset([5, 5]), 0.8, seed=4)
    m = split_manifest(train, test, 4, 0.8)
    assert m["seed"] == 4 and m["ratio"] == 0.8
    assert len(m["train"]) == 8 and len(m["test"]) == 2


def _char_vocab():
    return train_vocab(["abcdefg"], 12)


def test_stats_hand_example():
    ds = [LabeledExample("ab", 0, "0"), LabeledExample("ab", 1, "1"), LabeledExample("abcdefg", 0, "2")]
    s = compute_stats(ds, _char_vocab())
    assert (s.mode, s.median) == (2, 2.0)
    assert s.mean == pytest.approx(11 / 3, abs=1e-12)
    assert s.class_counts == {0: 2, 1: 1}
    assert s.unit == "tokens"


def test_stats_all_short():
    ds = [LabeledExample("abc", 0, str(i)) for i in range(4)]
    s = compute_stats(ds, _char_vocab())
    assert all(v == 1.0 for v in s.below.values())


def test_stats_lower_median_and_monotone():
    ds = [LabeledExample("a" * n, 0, str(n)) for n in (1, 40, 100, 290)]
    s = compute_stats(ds, _char_vocab())
    assert s.median == 40.0
    fracs = [s.below[t] for t in LENGTH_THRESHOLDS]
    assert fracs == sorted(fracs)
    assert fracs == [0.25, 0.5, 0.75, 0.75, 1.0]


def test_toy_languages_shape():
    ds = make_toy_corpus("languages", 100, seed=0)
    assert len(ds) == 400
    assert Counter(ds.labels) == {0: 100, 1: 100, 2: 100, 3: 100}


def test_toy_binary_and_determinism():
    ds = make_toy_corpus("binary_smell", 20, seed=5)
    assert set(ds.labels) == {0, 1}
    again = make_toy_corpus("binary_smell", 20, seed=5)
    assert ds.examples == again.examples
    assert make_toy_corpus("binary_smell", 20, seed=6).examples != ds.examples


def test_toy_ids_unique_and_min_size():
    ds = make_toy_corpus("debt", 10)
    assert len({e.id for e in ds}) == len(ds)
    with pytest.raises(ValueError):
        make_toy_corpus("debt", 9)
