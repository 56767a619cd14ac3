from __future__ import annotations

import pytest

from pginsight.intent import Measure, QueryIntent
from pginsight.linker import (
    SCORE_FLOOR,
    Binding,
    link,
    linking_precision,
    score_binding,
)
from pginsight.util import name_similarity, tokenize


def reference_score(phrase, element_id, lexicon):
    """Independent re-statement of the scoring formula."""
    bag = set(lexicon.entries[element_id])
    toks = tokenize(phrase)
    union = toks | bag
    jac = len(toks & bag) / len(union) if union else 0.0
    sim = max(name_similarity(phrase, element_id.split(".")[-1]), name_similarity(phrase, element_id))
    hit = 1.0 if toks & bag else 0.0
    return min(1.0, 0.6 * jac + 0.3 * sim + 0.1 * hit)


class TestScoreBinding:
    def test_exact_match_scores_one(self, lexicon):
        assert score_binding("revenue", "sales.revenue", lexicon) == pytest.approx(1.0)

    def test_synonym_reaches_users_and_beats_products(self, lexicon):
        via_synonym = score_binding("customers", "users", lexicon)
        assert via_synonym >= 0.1
        assert via_synonym > score_binding("customers", "products", lexicon)

    def test_no_overlap_leaves_only_edit_distance(self, lexicon):
        score = score_binding("zzz", "sales.revenue", lexicon)
        sim = max(name_similarity("zzz", "revenue"), name_similarity("zzz", "sales.revenue"))
        assert score == pytest.approx(0.3 * sim)
        assert score < 0.3

    def test_unknown_element_rejected(self, lexicon):
        with pytest.raises(Exception):
            score_binding("x", "nonexistent.column", lexicon)

    def test_matches_reference_formula_across_elements(self, catalog, lexicon):
        phrases = ["revenue", "customers", "transaction size", "inactive", "EU", "name", "warehouse capacity"]
        for phrase in phrases:
            for element in catalog.element_ids():
                assert score_binding(phrase, element, lexicon) == pytest.approx(
                    reference_score(phrase, element, lexicon), abs=1e-9
                )

    def test_tokenization_invariance(self, lexicon):
        assert score_binding("Created At", "sales.created_at", lexicon) == score_binding(
            "created   at", "sales.created_at", lexicon
        )

    def test_weight_scaling_preserves_argmax(self, catalog, lexicon):
        # scaling all three terms by a common positive constant cannot change
        # which element wins, since ranking is monotone in the score
        phrase = "customers"
        scores = {e: score_binding(phrase, e, lexicon) for e in catalog.element_ids()}
        best = min(sorted(scores, key=lambda e: (-scores[e], e))[:1])
        scaled = {e: 2.5 * s for e, s in scores.items()}
        best_scaled = min(sorted(scaled, key=lambda e: (-scaled[e], e))[:1])
        assert best == best_scaled


class TestLink:
    def test_paper_example_bindings(self, parsefix, catalog, lexicon):
        intent = parsefix("Top 5 customers by revenue")
        linked = link(intent, catalog, lexicon)
        assert linked.measure_bindings[0].element == "sales.revenue"
        assert linked.dimension_bindings[0].element == "users.name"

    def test_all_zero_phrases_stay_unbound(self, catalog, lexicon):
        intent = QueryIntent(raw_text="x", measures=[Measure("sum", "qqqq")], dimensions=["zzzz"])
        linked = link(intent, catalog, lexicon)
        assert linked.measure_bindings == (None,)
        assert linked.dimension_bindings == (None,)

    def test_text_decoy_rejected_for_avg_measure(self, catalog, lexicon):
        # "revenue note" scores highest on the text column products.revenue_note,
        # which an avg measure cannot take; next numeric candidate wins
        intent = QueryIntent(raw_text="x", measures=[Measure("avg", "revenue note")])
        linked = link(intent, catalog, lexicon)
        assert linked.measure_bindings[0] is not None
        assert linked.measure_bindings[0].element == "sales.revenue"
        as_dimension = QueryIntent(raw_text="x", dimensions=["revenue note"])
        assert link(as_dimension, catalog, lexicon).dimension_bindings[0].element == "products.revenue_note"

    def test_no_binding_below_floor(self, catalog, lexicon):
        intent = QueryIntent(
            raw_text="x",
            measures=[Measure("sum", "zzz")],
            dimensions=["qqq"],
            filters=[],
        )
        linked = link(intent, catalog, lexicon)
        for binding in (*linked.measure_bindings, *linked.dimension_bindings):
            assert binding is None or binding.score >= SCORE_FLOOR

    def test_alternatives_sorted_and_dominated(self, parsefix, catalog, lexicon):
        intent = parsefix("average price by name")
        linked = link(intent, catalog, lexicon)
        binding = linked.dimension_bindings[0]
        assert binding is not None
        scores = [s for _, s in binding.alternatives]
        assert scores == sorted(scores, reverse=True)
        assert all(binding.score >= s for s in scores)

    def test_count_can_bind_table(self, catalog, lexicon):
        intent = QueryIntent(raw_text="x", measures=[Measure("count", "transactions")])
        linked = link(intent, catalog, lexicon)
        assert linked.measure_bindings[0].element == "transactions"


class TestLinkingPrecision:
    def test_perfect_predictions(self):
        gold = [(f"p{i}", f"t.c{i}") for i in range(10)]
        predicted = [Binding(phrase=p, element=e, score=1.0) for p, e in gold]
        assert linking_precision(predicted, gold) == 1.0

    def test_half_right(self):
        gold = [(f"p{i}", f"t.c{i}") for i in range(10)]
        predicted = [
            Binding(phrase=f"p{i}", element=(f"t.c{i}" if i < 5 else "t.wrong"), score=0.5)
            for i in range(10)
        ]
        assert linking_precision(predicted, gold) == 0.5

    def test_unbound_counts_as_incorrect(self):
        gold = [("a", "t.a"), ("b", "t.b")]
        predicted = [Binding(phrase="a", element="t.a", score=1.0), None]
        assert linking_precision(predicted, gold) == 0.5

    def test_predicted_phrase_missing_from_gold_is_error(self):
        with pytest.raises(ValueError):
            linking_precision([Binding(phrase="mystery", element="t.c", score=1.0)], [("a", "t.a")])


@pytest.fixture()
def parsefix(lexicon, clock):
    from pginsight.intent import parse_utterance

    def run(text):
        return parse_utterance(text, lexicon, clock=clock)

    return run
