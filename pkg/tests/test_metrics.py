from __future__ import annotations

import csv
import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metanav.diagnosis import Outcome
from metanav.metrics import EpisodeRecord, aggregate, navigation_score, outcome_rates, reports_to_csv


def rec(outcome=Outcome.SUCCESS, OT=10.0, ATT=None):
    if outcome is Outcome.SUCCESS and ATT is None:
        ATT = OT
    return EpisodeRecord(0, "easy", (0.0, 0.0, 0.0), outcome, OT, ATT)


class TestNavigationScore:
    def test_lower_clip(self):
        assert navigation_score(rec(ATT=15.0)) == 0.5

    def test_upper_clip(self):
        assert navigation_score(rec(ATT=100.0)) == 0.125

    def test_failure(self):
        assert navigation_score(rec(Outcome.COLLISION)) == 0.0
        assert navigation_score(rec(Outcome.TIMEOUT)) == 0.0

    def test_inside_window(self):
        assert navigation_score(rec(ATT=40.0)) == 0.25

    @given(st.floats(0.1, 100), st.floats(0.0, 2000))
    def test_range(self, ot, att):
        assert 0.125 <= navigation_score(rec(OT=ot, ATT=att)) <= 0.5


class TestRecord:
    def test_att_iff_success(self):
        with pytest.raises(ValueError):
            EpisodeRecord(0, "easy", (0, 0, 0), Outcome.COLLISION, 1.0, 3.0)
        with pytest.raises(ValueError):
            EpisodeRecord(0, "easy", (0, 0, 0), Outcome.SUCCESS, 1.0, None)

    def test_ot_positive(self):
        with pytest.raises(ValueError):
            rec(OT=0.0)


class TestAggregate:
    def test_all_failures(self):
        r = aggregate([rec(Outcome.COLLISION), rec(Outcome.TIMEOUT), rec(Outcome.TIMEOUT)])
        assert r.NS == 0 and r.SR == 0 and r.CR + r.TR == 100 and r.ATT is None

    def test_all_fast_successes(self):
        r = aggregate([rec(ATT=15.0), rec(OT=3.0, ATT=1.0), rec(OT=1.0, ATT=2.0)])
        assert r.NS == 50.0 and r.SR == 100.0

    def test_mixed(self):
        r = aggregate([rec(ATT=40.0), rec(Outcome.COLLISION)])
        assert (r.NS, r.SR, r.CR, r.TR, r.ATT, r.episodes) == (12.5, 50.0, 50.0, 0.0, 40.0, 2)

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    @given(st.lists(st.sampled_from(list(Outcome)), min_size=1, max_size=60))
    def test_rates_sum_exactly(self, outcomes):
        r = aggregate([rec(o, ATT=20.0 if o is Outcome.SUCCESS else None) for o in outcomes])
        assert r.SR + r.CR + r.TR == 100.0
        assert 0 <= r.NS <= 50

    def test_rates_close_to_true_percentages(self):
        for n in range(1, 80):
            for a in range(n + 1):
                rates = outcome_rates([a, n - a, 0])
                assert rates[0] == pytest.approx(100 * a / n, abs=2 ** -19)
                assert sum(rates) == 100.0


def test_csv_columns():
    text = reports_to_csv([({"controller": "dwa", "condition": "c"}, aggregate([rec(ATT=40.0)]))])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["controller", "condition", "NS", "ATT", "SR", "CR", "TR", "episodes"]
    assert rows[0]["NS"] == "25.0000" and rows[0]["episodes"] == "1"


def test_record_json():
    d = rec(ATT=12.0).to_json()
    assert d["outcome"] == "success" and d["init_pose"] == [0.0, 0.0, 0.0]
    assert np.isclose(d["ATT"], 12.0)
