"""Corpus ingestion tests."""

from collections import Counter

import pytest

from eqprior.corpus import (
    CorpusError,
    corpus_to_trees,
    default_corpus_path,
    load_corpus,
    load_default_corpus,
)
from eqprior.exprtree import VAR


class TestShippedCorpus:
    def test_161_equations(self):
        entries = load_default_corpus()
        assert len(entries) == 161
        by_source = Counter(e.source for e in entries)
        assert by_source == {"fsred": 100, "fsred-bonus": 20, "named": 41}

    def test_count_preserving_tree_conversion(self):
        entries = load_default_corpus()
        assert len(corpus_to_trees(entries)) == 161

    def test_fsred_subset_is_100(self):
        assert len(corpus_to_trees(load_default_corpus(["fsred"]))) == 100

    def test_unique_ids(self):
        entries = load_default_corpus()
        ids = [e.id for e in entries]
        assert len(set(ids)) == len(ids)

    def test_variables_map_to_var_token(self):
        entries = load_default_corpus()
        gauss = next(e for e in entries if e.id == "I.6.2a")
        tree = gauss.parse()
        assert sum(1 for n in tree.nodes if n.symbol == VAR) == 1


class TestLoadCorpus:
    def test_spec_example_line(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("I.6.20a | exp(-x**2/2)/sqrt(2*pi) | x\n")
        entries, report = load_corpus(path)
        assert len(entries) == 1
        tree = entries[0].parse()
        assert sum(1 for n in tree.nodes if n.symbol == VAR) == 1
        assert report["total"] == 1

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# only comments\n\n")
        entries, report = load_corpus(path)
        assert entries == [] and report["total"] == 0

    def test_unknown_operator_reported_with_name_and_line(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("ok | x + 1 | x\nbad | erf(x) | x\n")
        with pytest.raises(CorpusError) as err:
            load_corpus(path)
        assert "erf" in str(err.value) and "line 2" in str(err.value)

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("one | x | x\none | x + x | x\n")
        with pytest.raises(CorpusError) as err:
            load_corpus(path)
        assert "duplicate" in str(err.value)

    def test_lenient_mode_skips_and_reports(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("ok | x + 1 | x\nbad | erf(x) | x\n")
        entries, report = load_corpus(path, strict=False)
        assert [e.id for e in entries] == ["ok"]
        assert len(report["errors"]) == 1

    def test_order_independent_tree_multiset(self, tmp_path):
        from eqprior.exprtree import canonical_form

        text = default_corpus_path().read_text()
        lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
        shuffled = tmp_path / "c.txt"
        shuffled.write_text("\n".join(reversed(lines)) + "\n")
        a, _ = load_corpus(default_corpus_path())
        b, _ = load_corpus(shuffled)
        canon = lambda entries: sorted(canonical_form(t) for t in corpus_to_trees(entries))
        assert canon(a) == canon(b)

    def test_loading_is_idempotent(self):
        a, _ = load_corpus(default_corpus_path())
        b, _ = load_corpus(default_corpus_path())
        assert a == b
