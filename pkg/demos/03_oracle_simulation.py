#!/usr/bin/env python3
"""Monte-Carlo study of the tournament protocol under oracle rankers.

Three questions, no remote models:
  1. How does gold recovery grow with the number of rounds?
  2. How does ranker noise degrade recovery?
  3. Why does preserving retrieval order inside groups help a
     primacy-biased ranker?
"""

from tagrec.rerank import Ordering, RerankConfig
from tagrec.sim import OracleKind, OracleSpec, recovery_experiment, \
    retrieval_like_weights

TRIALS = 400  # bump for tighter estimates

print("recovery vs rounds (perfect oracle, groups of 5 over top 10)")
for iterations in (1, 2, 4, 8):
    rate = recovery_experiment(
        TRIALS, RerankConfig(seed=5, iterations=iterations),
        OracleSpec(OracleKind.PERFECT))
    bar = "#" * int(rate * 40)
    print(f"  T={iterations}: {rate:.3f} {bar}")

print("\nrecovery vs ranker error rate (T=8)")
for error_rate in (0.0, 0.1, 0.3, 0.6, 1.0):
    rate = recovery_experiment(
        TRIALS, RerankConfig(seed=5),
        OracleSpec(OracleKind.NOISY, error_rate=error_rate, seed=2))
    print(f"  p={error_rate:.1f}: {rate:.3f}")

# Ordering only matters when retrieval rank carries information about gold,
# so this experiment draws gold ranks from a retrieval-like prior.
print("\nintra-group ordering under a primacy-biased ranker")
weights = retrieval_like_weights(10)
for ordering in (Ordering.ORDER_PRESERVING, Ordering.ORDER_SHUFFLED):
    rate = recovery_experiment(
        TRIALS, RerankConfig(seed=5, ordering=ordering),
        OracleSpec(OracleKind.POSITION_BIASED), gold_rank_weights=weights)
    print(f"  {ordering.value}: {rate:.3f}")
