#!/usr/bin/env python3
"""Build a tiny tag taxonomy, embed it, and retrieve Top-k candidates.

Everything here is offline: the hash embedder maps each document to a
bag-of-hashed-tokens vector, so similar wording means high cosine score.
"""

from tagrec.backends import HashEmbedder
from tagrec.corpus import TagDocument, TaxonomyCorpus
from tagrec.retrieval import build_index, top_k

taxonomy = TaxonomyCorpus(docs=(
    TagDocument("Revenues", "revenue recognized from goods sold and "
                            "services rendered"),
    TagDocument("CostOfRevenue", "aggregate cost of goods produced and "
                                 "sold and services rendered"),
    TagDocument("NetIncomeLoss", "portion of profit or loss net of income "
                                 "taxes"),
    TagDocument("LongTermDebt", "carrying values of long term debt "
                                "instruments maturing beyond one year"),
    TagDocument("InterestExpense", "cost of borrowed funds accounted for "
                                   "as interest expense for debt"),
))

embedder = HashEmbedder(dim=128)
index = build_index(taxonomy, embedder)
print(f"indexed {len(index)} tag documents at dim {index.dim}\n")

# A generated tag document for some numeral, as the generator stage would
# produce it.  It paraphrases the debt concept.
gen_doc = "long term debt instruments carrying value beyond one year"
[query] = embedder.embed_batch([gen_doc])

print(f"query: {gen_doc!r}")
print("top 3 candidates by cosine similarity:")
for candidate in top_k(query, index, k=3):
    print(f"  rank {candidate.retrieval_rank}: {candidate.tag_id:16s} "
          f"score={candidate.score:.4f}")
