from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from assetpipe.simmetrics import jaccard
from assetpipe.store import AssetRow
from assetpipe.validate import (
    METRICS, ReferenceAsset, ReferenceFormatError, coverage, load_reference, match_asset,
    pairwise_scores, preprocess_reference, total_validation_coverage, validate_assets,
    validated_asset_ids,
)
from conftest import MINI

HEADER = "ref_id,company_ticker,asset_name,owner,commodity,country,status,asset_type\n"


def exact_fixture(n: int = 6):
    assets, refs = [], []
    for i in range(1, n + 1):
        name, owner, comm, country = f"Asset {chr(64 + i)} Mine", f"Owner {i}", "Copper, Gold", "Chile"
        assets.append(AssetRow(id=i, physical_asset=name, ownership=owner, commodity=comm, countries=country))
        refs.append(ReferenceAsset(f"R{i}", "XYZ", name, owner, comm, country, "Operational", "mine"))
    return assets, preprocess_reference(refs)


def test_coverage_fcx_figure():
    rep = coverage(12, 13)
    assert rep.percent == pytest.approx(92.31, abs=0.005)
    assert rep.display() == "92.31%"


def test_total_validation_coverage_figure():
    rep = total_validation_coverage(2, 6)
    assert rep.percent == pytest.approx(33.33, abs=0.005)
    assert rep.display() == "33.33%"


def test_coverage_edges():
    assert coverage(0, 0).na and coverage(0, 0).display() == "N/A"
    assert coverage(5, 5).percent == 100.0
    with pytest.raises(ValueError):
        coverage(3, 2)
    with pytest.raises(ValueError):
        coverage(-1, 2)
    with pytest.raises(ValueError):
        total_validation_coverage(1, 0)
    with pytest.raises(ValueError):
        total_validation_coverage(4, 3)


@given(st.integers(1, 500), st.data())
def test_coverage_monotone_and_bounded(total, data):
    a = data.draw(st.integers(0, total))
    b = data.draw(st.integers(a, total))
    assert 0 <= coverage(a, total).percent <= coverage(b, total).percent <= 100


def test_exact_reference_scores_perfect():
    assets, refs = exact_fixture()
    result = validate_assets(assets, refs, "XYZ")
    assert result.coverage.percent == 100.0
    assert result.summary["hits_at_5"] == 1.0
    for attr, metrics in result.summary["per_attribute"].items():
        assert set(metrics) == set(METRICS)
        assert all(v == 1.0 for v in metrics.values()), attr
    assert result.summary["overall"] == 1.0


def test_freeport_jaccard_example():
    assert jaccard("PT Freeport Indonesia", "freeport") == pytest.approx(1 / 3, abs=1e-15)
    scores = pairwise_scores("PT Freeport Indonesia", "freeport")
    assert scores["partial_match"] == 1.0 and scores["dice"] == pytest.approx(0.5)


def test_match_threshold_and_ties():
    refs = preprocess_reference([ReferenceAsset("R2", "X", "Alpha"), ReferenceAsset("R1", "X", "Alpha"),
                                 ReferenceAsset("R3", "X", "Zeta")])
    m = match_asset(AssetRow(id=1, physical_asset="alpha"), refs, k=2)
    assert m.best == "R1" and m.candidates.ids() == ["R1", "R2"]
    miss = match_asset(AssetRow(id=2, physical_asset="qqqq"), refs)
    assert miss.best is None and miss.best_score < 0.6


def test_preprocess_excludes_closed():
    refs = [ReferenceAsset("R1", "X", "A", status="Closed"), ReferenceAsset("R2", "X", "B Mine", status="Abandoned"),
            ReferenceAsset("R3", "X", "C", owner="ACME", status="Operating")]
    out = preprocess_reference(refs)
    assert [(r.ref_id, r.owner, r.status) for r in out] == [("R3", "acme", "operating")]


def test_load_reference_fixture_and_errors(tmp_path):
    refs = load_reference(MINI / "reference.csv")
    assert [r.ref_id for r in refs][:2] == ["R001", "R002"]
    with pytest.raises(ReferenceFormatError, match="missing columns"):
        load_reference("ref_id,asset_name\nR1,x\n")
    with pytest.raises(ReferenceFormatError, match="line 3"):
        load_reference(HEADER + "R1,X,Mine,,,,,mine\nR2,X,,,,,,mine\n")
    with pytest.raises(ReferenceFormatError):
        load_reference(HEADER + "R1,X,Mine,,,,,spaceship\n")


def test_coverage_counts_distinct_reference_rows():
    refs = preprocess_reference([ReferenceAsset("R1", "X", "Grasberg"), ReferenceAsset("R2", "X", "Chino")])
    assets = [AssetRow(id=1, physical_asset="Grasberg mine"), AssetRow(id=2, physical_asset="Grasberg mine complex")]
    result = validate_assets(assets, refs, "X")
    assert (result.coverage.matched_count, result.coverage.reference_total) == (1, 2)


def test_other_company_rows_ignored():
    assets, refs = exact_fixture(2)
    result = validate_assets(assets, refs + [ReferenceAsset("Z", "ABC", "other")], "xyz")
    assert result.coverage.reference_total == 2


def test_validated_ids():
    matches = [{"asset_id": 1, "best": "R1"}, {"asset_id": 2, "best": None}]
    verdicts = [{"asset_id": 2, "verdict": True, "skipped": False}, {"asset_id": 3, "verdict": None, "skipped": True}]
    assert validated_asset_ids(matches, verdicts) == {1, 2}
