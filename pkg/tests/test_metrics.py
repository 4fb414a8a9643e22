import math
import random

import pytest

from treenlg.errors import ContractError
from treenlg.metrics import (
    SerCounts,
    aggregate,
    bleu,
    corpus_ser,
    seen_unseen_split,
    ser,
)
from treenlg.semantics import (
    Example,
    Ontology,
    REQUEST,
    SemanticRepresentation,
    SrEntry,
    token_surface,
    tokenize,
)


@pytest.fixture
def ontology():
    return Ontology({
        "restaurant": {
            "inform": {"area": "informable", "name": "informable",
                       "price": "informable", "options": "informable"},
            "request": {"price": "requestable"},
        },
        "hotel": {
            "inform": {"area": "informable", "options": "informable"},
            "select": {"type": "informable"},
        },
    })


def sr_of(ontology, *quads):
    return SemanticRepresentation([SrEntry(*q) for q in quads], ontology)


def brute_force_ser(sr, hypothesis):
    """Oracle: explicit one-by-one matching of required and produced tokens."""
    required = [(e.domain, e.act, e.slot) for e in sr.informable_entries()]
    produced = []
    for tok in tokenize(hypothesis):
        if tok.startswith("@"):
            parts = tok[1:].split("-")
            if len(parts) >= 3:
                slot = "-".join(parts[2:])
                if not sr.ontology.has_triple(parts[0], parts[1], slot):
                    stripped = slot.rstrip("0123456789")
                    if sr.ontology.has_triple(parts[0], parts[1], stripped):
                        slot = stripped
                produced.append((parts[0], parts[1], slot))
    remaining = list(produced)
    missing = 0
    for triple in required:
        if triple in remaining:
            remaining.remove(triple)
        else:
            missing += 1
    redundant = len(remaining)
    return missing, redundant, len(required)


class TestSer:
    def test_paper_arithmetic(self, ontology):
        counts = SerCounts(missing=1, redundant=1, required=4)
        assert counts.rate == pytest.approx(0.5)

    def test_exact_tokens_score_zero(self, ontology):
        sr = sr_of(ontology,
                   ("restaurant", "inform", "area", "west"),
                   ("restaurant", "inform", "name", "red lion"))
        hyp = "@restaurant-inform-name is in the @restaurant-inform-area ."
        counts = ser(sr, hyp)
        assert (counts.missing, counts.redundant, counts.required) == (0, 0, 2)
        assert counts.rate == 0.0

    def test_wrong_domain_counts_twice(self, ontology):
        sr = sr_of(ontology, ("restaurant", "inform", "area", "west"))
        counts = ser(sr, "it is in the @hotel-inform-area .")
        assert (counts.missing, counts.redundant, counts.required) == (1, 1, 1)
        assert counts.rate == pytest.approx(2.0)

    def test_requestables_do_not_count(self, ontology):
        sr = sr_of(ontology,
                   ("restaurant", "inform", "area", "west"),
                   ("restaurant", "request", "price", REQUEST))
        counts = ser(sr, "in the @restaurant-inform-area , any price range ?")
        assert counts.required == 1
        assert counts.rate == 0.0

    def test_zero_required_conventions(self, ontology):
        sr = sr_of(ontology, ("restaurant", "request", "price", REQUEST))
        assert ser(sr, "what price range ?").rate == 0.0
        assert ser(sr, "the @restaurant-inform-area is nice").rate == 1.0

    def test_occurrence_counting(self, ontology):
        sr = sr_of(ontology,
                   ("hotel", "select", "type", "guesthouse"),
                   ("hotel", "select", "type", "motel"))
        counts = ser(sr, "a @hotel-select-type1 or a @hotel-select-type2 ?")
        assert counts.rate == 0.0
        counts = ser(sr, "a @hotel-select-type1 ?")
        assert (counts.missing, counts.redundant) == (1, 0)

    def test_random_cases_match_brute_force(self, ontology):
        rng = random.Random(13)
        triples = [("restaurant", "inform", "area"), ("restaurant", "inform", "name"),
                   ("restaurant", "inform", "price"), ("restaurant", "inform", "options"),
                   ("hotel", "inform", "area"), ("hotel", "inform", "options"),
                   ("hotel", "select", "type")]
        values = ["west", "north", "red lion", "cheap", "two", "motel", "inn"]
        for _ in range(100):
            chosen = rng.sample(triples, rng.randint(0, 4))
            entries, used = [], set()
            for t in chosen:
                v = rng.choice([v for v in values if (t, v) not in used])
                used.add((t, v))
                entries.append(SrEntry(*t, v))
            sr = SemanticRepresentation(entries, ontology)
            counts = sr.triple_counts()
            occ = {}
            hyp_tokens = []
            for t in rng.choices(triples, k=rng.randint(0, 5)):
                occ[t] = occ.get(t, 0) + 1
                hyp_tokens.append(token_surface(*t, occ[t], counts.get(t, 0) > 1))
            rng.shuffle(hyp_tokens)
            hyp = "we say " + " ".join(hyp_tokens) + " ."
            got = ser(sr, hyp)
            assert (got.missing, got.redundant, got.required) == brute_force_ser(sr, hyp)

    def test_corpus_aggregation(self, ontology):
        total = corpus_ser([SerCounts(1, 0, 2), SerCounts(0, 1, 2)])
        assert total.rate == pytest.approx(0.5)

    def test_removing_and_inserting_one_token(self, ontology):
        sr = sr_of(ontology,
                   ("restaurant", "inform", "area", "west"),
                   ("restaurant", "inform", "price", "cheap"))
        perfect = "@restaurant-inform-price food in the @restaurant-inform-area ."
        base = ser(sr, perfect)
        dropped = ser(sr, "food in the @restaurant-inform-area .")
        added = ser(sr, perfect + " also @restaurant-inform-options .")
        assert dropped.missing == base.missing + 1
        assert added.redundant == base.redundant + 1


def reference_bleu(hyps, refs):
    """Independent BLEU implementation: per-order clipped counts collected
    into flat lists, identical smoothing conventions."""
    stats = {"hyp": 0, "ref": 0}
    match = {n: 0 for n in range(1, 5)}
    total = {n: 0 for n in range(1, 5)}
    for hyp, ref in zip(hyps, refs):
        h = tokenize(hyp)
        r = tokenize(ref)
        stats["hyp"] += len(h)
        stats["ref"] += len(r)
        for n in range(1, 5):
            hgrams = [tuple(h[i:i + n]) for i in range(len(h) - n + 1)]
            rgrams = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
            total[n] += len(hgrams)
            pool = list(rgrams)
            for g in hgrams:
                if g in pool:
                    pool.remove(g)
                    match[n] += 1
    logsum = 0.0
    for n in range(1, 5):
        if total[n] == 0:
            p = 1.0
        else:
            p = (match[n] if match[n] > 0 else 1e-9) / total[n]
        logsum += math.log(p) / 4.0
    if stats["hyp"] == 0:
        return 0.0
    bp = 1.0 if stats["hyp"] > stats["ref"] else math.exp(1 - stats["ref"] / stats["hyp"])
    return bp * math.exp(logsum)


class TestBleu:
    def test_identical_corpora_score_one(self):
        texts = ["there are five colleges in the west .",
                 "would you prefer a motel ?",
                 "ok ."]
        report = bleu(texts, texts)
        assert report.score == pytest.approx(1.0)
        assert report.brevity_penalty == 1.0

    def test_zero_overlap_floors_out(self):
        report = bleu(["aa bb cc dd"], ["xx yy zz ww"])
        assert report.score <= 1e-2

    def test_against_independent_reference(self):
        rng = random.Random(7)
        words = ["the", "a", "hotel", "west", "nice", "in", "area", ",", "."]
        for _ in range(20):
            n = rng.randint(1, 6)
            hyps = [" ".join(rng.choices(words, k=rng.randint(1, 12))) for _ in range(n)]
            refs = [" ".join(rng.choices(words, k=rng.randint(1, 12))) for _ in range(n)]
            assert bleu(hyps, refs).score == pytest.approx(reference_bleu(hyps, refs), abs=1e-9)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ContractError):
            bleu([], [])

    def test_permutation_invariant(self):
        hyps = ["a b c d", "e f g h", "a a a a"]
        refs = ["a b c x", "e f g h", "b b b b"]
        direct = bleu(hyps, refs).score
        perm = bleu(list(reversed(hyps)), list(reversed(refs))).score
        assert direct == pytest.approx(perm)


class TestAggregate:
    def test_single_row(self):
        rows = [{"mode": "tree+att", "fraction": 0.05, "ser": 0.2, "bleu": 0.9}]
        out = aggregate(rows)
        assert out[0]["ser_mean"] == pytest.approx(0.2)
        assert out[0]["ser_sd"] == 0.0
        assert out[0]["n"] == 1

    def test_hand_mean_and_population_sd(self):
        rows = [{"mode": "m", "fraction": 0.05, "ser": 0.2, "bleu": 0.5},
                {"mode": "m", "fraction": 0.05, "ser": 0.4, "bleu": 0.7}]
        out = aggregate(rows)
        assert out[0]["ser_mean"] == pytest.approx(0.3)
        assert out[0]["ser_sd"] == pytest.approx(0.1)

    def test_permutation_stable(self):
        rows = [{"mode": "a", "fraction": 0.1, "ser": 0.1, "bleu": 0.9},
                {"mode": "b", "fraction": 0.1, "ser": 0.2, "bleu": 0.8},
                {"mode": "a", "fraction": 0.5, "ser": 0.3, "bleu": 0.7}]
        assert aggregate(rows) == aggregate(list(reversed(rows)))


class TestSeenUnseen:
    def examples(self, ontology, quads_list, split):
        return [Example(sr_of(ontology, *quads), "text .", split) for quads in quads_list]

    def test_disjoint_all_unseen(self, ontology):
        train = self.examples(ontology, [
            [("restaurant", "inform", "area", "west")]], "train")
        test = self.examples(ontology, [
            [("restaurant", "inform", "area", "north")],
            [("hotel", "inform", "options", "two")]], "test")
        seen, unseen = seen_unseen_split(test, train)
        assert seen == [] and len(unseen) == 2

    def test_subset_all_seen(self, ontology):
        quads = [[("restaurant", "inform", "area", "west")],
                 [("hotel", "inform", "options", "two")]]
        train = self.examples(ontology, quads, "train")
        test = self.examples(ontology, quads, "test")
        seen, unseen = seen_unseen_split(test, train)
        assert len(seen) == 2 and unseen == []

    def test_counts_partition(self, ontology):
        train = self.examples(ontology, [
            [("restaurant", "inform", "area", "west")]], "train")
        test = self.examples(ontology, [
            [("restaurant", "inform", "area", "west")],
            [("restaurant", "inform", "area", "north")],
            [("hotel", "inform", "options", "two")]], "test")
        seen, unseen = seen_unseen_split(test, train)
        assert len(seen) + len(unseen) == len(test)

    def test_triple_only_matching_flag(self, ontology):
        train = self.examples(ontology, [
            [("restaurant", "inform", "area", "west")]], "train")
        test = self.examples(ontology, [
            [("restaurant", "inform", "area", "north")]], "test")
        seen_v, _ = seen_unseen_split(test, train, include_values=True)
        seen_t, _ = seen_unseen_split(test, train, include_values=False)
        assert seen_v == [] and len(seen_t) == 1
