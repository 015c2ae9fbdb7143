"""Ingestion, synthesis, and statistics contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bidlab import logstore
from bidlab.logstore import (
    EmptyInputError,
    Impression,
    InvalidSpecError,
    IpinyouColumns,
    ParseError,
    SynthSpec,
    ingest_log,
    make_episode,
    round_half_up,
    stats,
    synth_log,
    write_native_csv,
)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestNativeIngest:
    def test_one_day_groups_to_one_episode(self, tmp_path):
        path = tmp_path / "log.csv"
        write_lines(
            path,
            [
                "period_id,seq,pctr,market_price,click",
                "d1,0,0.001,50,0",
                "d1,1,0.002,60,1",
                "d1,2,0.003,70,0",
            ],
        )
        episodes = ingest_log(path)
        assert len(episodes) == 1
        assert len(episodes[0]) == 3
        assert [i.seq for i in episodes[0].impressions] == [0, 1, 2]
        assert episodes[0].budget == 180

    def test_two_days_preserve_per_day_order(self, tmp_path):
        path = tmp_path / "log.csv"
        write_lines(
            path,
            [
                "period_id,seq,pctr,market_price,click",
                "d2,0,0.001,10,0",
                "d1,5,0.002,20,1",
                "d2,1,0.001,30,0",
                "d1,9,0.004,40,0",
            ],
        )
        episodes = ingest_log(path)
        assert [ep.period_id for ep in episodes] == ["d1", "d2"]
        assert [i.seq for i in episodes[0].impressions] == [5, 9]
        assert [i.market_price for i in episodes[1].impressions] == [10, 30]

    def test_out_of_range_pctr_is_rejected_with_line(self, tmp_path):
        path = tmp_path / "log.csv"
        write_lines(
            path,
            [
                "period_id,seq,pctr,market_price,click",
                "d1,0,0.5,50,0",
                "d1,1,1.3,50,0",
            ],
        )
        with pytest.raises(ParseError) as err:
            ingest_log(path)
        assert err.value.line == 3

    def test_negative_market_price_rejected(self, tmp_path):
        path = tmp_path / "log.csv"
        write_lines(
            path,
            ["period_id,seq,pctr,market_price,click", "d1,0,0.5,-2,0"],
        )
        with pytest.raises(ParseError):
            ingest_log(path)

    def test_duplicate_seq_rejected(self, tmp_path):
        path = tmp_path / "log.csv"
        write_lines(
            path,
            [
                "period_id,seq,pctr,market_price,click",
                "d1,3,0.5,1,0",
                "d1,3,0.5,1,0",
            ],
        )
        with pytest.raises(ParseError):
            ingest_log(path)

    def test_empty_file_raises_empty_input(self, tmp_path):
        path = tmp_path / "log.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(EmptyInputError):
            ingest_log(path)

    def test_header_only_raises_empty_input(self, tmp_path):
        path = tmp_path / "log.csv"
        write_lines(path, ["period_id,seq,pctr,market_price,click"])
        with pytest.raises(EmptyInputError):
            ingest_log(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ingest_log(tmp_path / "nope.csv")


class TestIpinyouIngest:
    def header_row(self):
        cols = ["x"] * 24
        cols[0] = "click"
        cols[4] = "timestamp"
        cols[23] = "payprice"
        return "\t".join(cols)

    def row(self, click, ts, pay):
        cols = ["x"] * 24
        cols[0] = str(click)
        cols[4] = ts
        cols[23] = str(pay)
        return "\t".join(cols)

    def test_groups_by_date_and_orders_by_timestamp(self, tmp_path):
        path = tmp_path / "log.txt"
        write_lines(
            path,
            [
                self.header_row(),
                self.row(0, "20130607000000100", 40),
                self.row(1, "20130606235959000", 77),
                self.row(0, "20130606120000000", 50),
            ],
        )
        episodes = ingest_log(path, format="ipinyou-tsv")
        assert [ep.period_id for ep in episodes] == ["20130606", "20130607"]
        first = episodes[0].impressions
        assert [i.market_price for i in first] == [50, 77]
        assert [i.seq for i in first] == [0, 1]
        # pctr column absent: sentinel requires a CTR model before replay
        assert not first[0].has_pctr

    def test_payprice_above_ceiling_rejected(self, tmp_path):
        path = tmp_path / "log.txt"
        write_lines(path, [self.row(0, "20130606120000000", 301)])
        with pytest.raises(ParseError):
            ingest_log(path, format="ipinyou-tsv")

    def test_optional_pctr_column(self, tmp_path):
        path = tmp_path / "log.txt"
        cols = ["x"] * 25
        cols[0] = "1"
        cols[4] = "20130606120000000"
        cols[23] = "88"
        cols[24] = "0.0042"
        write_lines(path, ["\t".join(cols)])
        episodes = ingest_log(
            path, format="ipinyou-tsv", ipinyou_columns=IpinyouColumns(pctr=24)
        )
        imp = episodes[0].impressions[0]
        assert imp.pctr == 0.0042
        assert imp.market_price == 88
        assert imp.click == 1


class TestSynth:
    def test_same_spec_and_seed_bit_identical(self):
        spec = SynthSpec(imps=1000, periods=1)
        a = synth_log(spec, seed=7)
        b = synth_log(spec, seed=7)
        assert a == b

    def test_different_seed_differs(self):
        spec = SynthSpec(imps=1000, periods=1)
        assert synth_log(spec, seed=7) != synth_log(spec, seed=8)

    def test_empirical_ctr_within_3_sigma_of_mean_pctr(self):
        # clicks ~ Bernoulli(pctr): Var(sum) = sum p(1-p)
        spec = SynthSpec(imps=60_000, periods=3)
        episodes = synth_log(spec, seed=123)
        pctr = np.concatenate([ep.arrays[0] for ep in episodes])
        clicks = sum(int(ep.arrays[2].sum()) for ep in episodes)
        expected = pctr.sum()
        sigma = math.sqrt(float((pctr * (1 - pctr)).sum()))
        assert abs(clicks - expected) <= 3 * sigma

    def test_zero_imps_invalid(self):
        with pytest.raises(InvalidSpecError):
            synth_log(SynthSpec(imps=0), seed=1)

    def test_bad_params_invalid(self):
        with pytest.raises(InvalidSpecError):
            synth_log(SynthSpec(imps=10, periods=0), seed=1)
        with pytest.raises(InvalidSpecError):
            synth_log(SynthSpec(imps=10, pctr_alpha=-1), seed=1)
        with pytest.raises(InvalidSpecError):
            synth_log(SynthSpec(imps=3, periods=5), seed=1)

    @settings(max_examples=25, deadline=None)
    @given(
        imps=st.integers(min_value=1, max_value=400),
        periods=st.integers(min_value=1, max_value=5),
        seed=st.integers(min_value=0, max_value=2**31),
        alpha=st.floats(min_value=0.5, max_value=5.0),
        beta=st.floats(min_value=10.0, max_value=5000.0),
    )
    def test_every_synthetic_log_satisfies_impression_invariants(
        self, imps, periods, seed, alpha, beta
    ):
        if imps < periods:
            imps = periods
        episodes = synth_log(
            SynthSpec(imps=imps, periods=periods, pctr_alpha=alpha, pctr_beta=beta),
            seed=seed,
        )
        assert sum(len(ep) for ep in episodes) == imps
        for ep in episodes:
            assert ep.budget > 0
            prev = -1
            for imp in ep.impressions:
                assert 0.0 <= imp.pctr <= 1.0
                assert imp.market_price >= 0
                assert imp.click in (0, 1)
                assert imp.seq > prev
                prev = imp.seq


class TestStats:
    def test_simple_arithmetic(self):
        imps = [
            Impression(0, 0.5, 40, 1, "d"),
            Impression(1, 0.25, 60, 0, "d"),
        ]
        s = stats([make_episode("d", imps)])
        assert (s.imps, s.clicks, s.cost) == (2, 1, 100)
        assert s.ctr == 0.5
        assert s.cpm == 50
        assert s.cpc == 100
        assert s.avg_pctr == 0.375

    def test_zero_clicks_cpc_undefined_marker(self):
        s = stats([make_episode("d", [Impression(0, 0.1, 5, 0, "d")])])
        assert s.cpc is None

    def test_all_click_degenerate(self):
        imps = [Impression(i, 1.0, 10, 1, "d") for i in range(4)]
        s = stats([make_episode("d", imps)])
        assert s.ctr == 1.0
        assert s.cpc == s.cpm

    def test_permutation_invariant_across_episodes(self):
        episodes = synth_log(SynthSpec(imps=300, periods=3), seed=5)
        assert stats(episodes) == stats(list(reversed(episodes)))

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            stats([])

    def test_unset_pctr_yields_nan_avg(self):
        ep = make_episode("d", [Impression(0, math.nan, 5, 0, "d")])
        s = stats([ep])
        assert math.isnan(s.avg_pctr)
        assert s.imps == 1


class TestRoundTrip:
    def test_serialize_then_ingest_is_identity(self, tmp_path):
        episodes = synth_log(SynthSpec(imps=500, periods=2), seed=99)
        path = tmp_path / "out.csv"
        write_native_csv(episodes, path)
        back = ingest_log(path)
        assert [ep.impressions for ep in back] == [
            ep.impressions for ep in episodes
        ]

    def test_written_twice_is_byte_identical(self, tmp_path):
        episodes = synth_log(SynthSpec(imps=100), seed=1)
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_native_csv(episodes, a)
        write_native_csv(episodes, b)
        assert a.read_bytes() == b.read_bytes()


class TestRounding:
    def test_half_up(self):
        assert round_half_up(0.5) == 1
        assert round_half_up(1.5) == 2
        assert round_half_up(2.4999) == 2
        assert round_half_up(277.5) == 278
        assert round_half_up(0.0) == 0
