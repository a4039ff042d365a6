#!/usr/bin/env python3
"""Watch one record go through the multi-round tournament re-ranking.

Ten candidates are randomly split into two groups of five each round; a
listwise ranker picks each group's winner; winners collect votes; the
most-voted candidate is the prediction.  A noisy oracle stands in for the
LLM ranker so the run is fully offline and reproducible.
"""

from tagrec.rerank import RerankConfig, rerank_record
from tagrec.sim import OracleKind, OracleRanker, OracleSpec, \
    synthetic_candidates

candidates, texts, gold = synthetic_candidates(top_k=10, gold_rank=4)
print(f"gold tag is {gold} at retrieval rank 4\n")

config = RerankConfig(group_size=5, iterations=8, seed=12345)
ranker = OracleRanker(OracleSpec(OracleKind.NOISY, error_rate=0.3, seed=7))

predicted, trace = rerank_record(
    "a generated tag document", candidates, texts, config, ranker,
    record_id="demo", gold_tag_id=gold,
)

for it in trace.iterations:
    groups = " | ".join(",".join(g) for g in it["presented"])
    print(f"round {it['iteration']}: {groups}")
    print(f"         winners: {', '.join(it['winners'])}")

print("\nvote tally:")
for tag_id, count in sorted(trace.tally.counts.items(),
                            key=lambda kv: -kv[1]):
    marker = "  <-- gold" if tag_id == gold else ""
    print(f"  {tag_id}: {count}{marker}")

print(f"\npredicted: {predicted}  (gold recovered: {predicted == gold})")
