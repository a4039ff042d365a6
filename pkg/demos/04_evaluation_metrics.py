#!/usr/bin/env python3
"""Score a prediction set with Hits@1 and macro precision/recall/F1.

The taxonomy's long tail makes macro averaging the interesting view: every
gold class counts equally, however rare.
"""

from tagrec.evaluation import PredictionSet, evaluate_predictions

# (record_id, gold, predicted) -- one mislabelled record, one rare class
predictions = PredictionSet(items=(
    ("r1", "Revenues", "Revenues"),
    ("r2", "Revenues", "Revenues"),
    ("r3", "Revenues", "Revenues"),
    ("r4", "NetIncomeLoss", "Revenues"),     # miss: hurts two classes
    ("r5", "InterestExpense", "InterestExpense"),
))

report = evaluate_predictions(predictions)

print(f"records: {report.n_records}, gold classes: {report.n_classes}\n")
print(f"{'class':18s} {'tp':>3s} {'fp':>3s} {'fn':>3s} "
      f"{'prec':>6s} {'rec':>6s} {'f1':>6s}")
for c in report.per_class:
    print(f"{c.tag_id:18s} {c.tp:3d} {c.fp:3d} {c.fn:3d} "
          f"{c.precision:6.3f} {c.recall:6.3f} {c.f1:6.3f}")

print(f"\nHits@1 = {report.hits_at_1:.4f}")
print(f"M-P    = {report.macro_p:.4f}")
print(f"M-R    = {report.macro_r:.4f}")
print(f"M-F1   = {report.macro_f1:.4f}")
print(f"AVG    = {report.avg:.4f}")
