from __future__ import annotations

import json
from pathlib import Path

import pytest

from tagrec.corpus import NumeralRecord, TagDocument, TaxonomyCorpus

# Ten distinct tag documents with mostly disjoint token sets, so the hash
# embedder separates them cleanly in fixtures.
TEN_TAGS = [
    ("Revenues", "Amount of revenue recognized from goods sold and services "
                 "rendered in the ordinary course of business"),
    ("CostOfRevenue", "Aggregate cost of goods produced and sold and services "
                      "rendered during the reporting period"),
    ("OperatingExpenses", "Generally recurring costs associated with normal "
                          "operations except for the portion of these expenses "
                          "related to cost of sales"),
    ("NetIncomeLoss", "The portion of profit or loss for the period net of "
                      "income taxes attributable to the parent"),
    ("CashAndCashEquivalents", "Amount of currency on hand as well as demand "
                               "deposits with banks or financial institutions"),
    ("AccountsReceivableNet", "Amount due from customers or clients for goods "
                              "or services that have been delivered or sold"),
    ("InventoryNet", "Amount after valuation and reserves of inventory "
                     "expected to be sold within one year"),
    ("LongTermDebt", "Sum of the carrying values of all long term debt "
                     "instruments maturing beyond one year"),
    ("InterestExpense", "Amount of the cost of borrowed funds accounted for "
                        "as interest expense for debt"),
    ("IncomeTaxExpenseBenefit", "Amount of current income tax expense and "
                                "deferred income tax expense pertaining to "
                                "continuing operations"),
]


def make_corpus(tags=TEN_TAGS) -> TaxonomyCorpus:
    return TaxonomyCorpus(docs=tuple(TagDocument(tag_id=t, text=x)
                                     for t, x in tags))


def write_taxonomy(path: Path, tags=TEN_TAGS) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for tag_id, text in tags:
            fh.write(json.dumps({"tag_id": tag_id, "text": text}) + "\n")
    return path


def make_records(n: int = 5, with_gen_doc: bool = True) -> list[NumeralRecord]:
    """Records whose gen_tag_doc equals their gold tag's document text."""
    tags = TEN_TAGS[:n]
    records = []
    for i, (tag_id, text) in enumerate(tags):
        numeral = f"{(i + 1) * 7},500"
        records.append(NumeralRecord(
            record_id=f"r{i:03d}",
            report_text=f"The company reported {numeral} for the year.",
            numeral=numeral,
            question=f"What does the numeral {numeral} represent?",
            gold_tag_id=tag_id,
            gen_tag_doc=text if with_gen_doc else None,
        ))
    return records


def write_dataset(path: Path, records) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "record_id": rec.record_id,
                "report_text": rec.report_text,
                "numeral": rec.numeral,
                "question": rec.question,
                "gold_tag_id": rec.gold_tag_id,
                "gen_tag_doc": rec.gen_tag_doc,
            }) + "\n")
    return path


@pytest.fixture
def ten_tag_corpus() -> TaxonomyCorpus:
    return make_corpus()


# --------------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per criterion in the terminal report

_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        name = report.nodeid.split("::")[-1]
        _acceptance_outcomes[name] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance_outcomes):
        outcome = _acceptance_outcomes[name]
        label = {"passed": "PASS", "failed": "FAIL"}.get(outcome,
                                                         outcome.upper())
        terminalreporter.write_line(f"{label}  {name}")
