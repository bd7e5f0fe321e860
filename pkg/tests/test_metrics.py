import math
from dataclasses import replace

import pytest

from coevolve import EUREKA, ROSKA, ROSKA_U, FixedAlpha, Schedule
from coevolve.coevolution import SCHEDULE_PRESETS
from coevolve.metrics import DegenerateBaseline, compute_hns, compute_tts, mts, summarize

DEFAULT = SCHEDULE_PRESETS["default"]


def test_hns_endpoints():
    assert compute_hns(10.35, 6.59, 10.35) == 1.0
    assert compute_hns(6.59, 6.59, 10.35) == 0.0


def test_hns_ant_row():
    # MTS values of the Ant row; oracle is the formula by hand
    expected = (10.25 - 6.59) / abs(10.35 - 6.59)
    assert compute_hns(10.25, 6.59, 10.35) == pytest.approx(expected, abs=1e-15)
    assert abs(compute_hns(10.25, 6.59, 10.35) - 0.973) <= 0.001


def test_hns_affine_invariance():
    for a, b in [(2.0, 0.0), (0.5, -3.0), (10.0, 7.0)]:
        base = compute_hns(3.0, 1.0, 5.0)
        assert compute_hns(a * 3.0 + b, a * 1.0 + b, a * 5.0 + b) == pytest.approx(base, abs=1e-12)


def test_hns_degenerate():
    with pytest.raises(DegenerateBaseline):
        compute_hns(1.0, 2.0, 2.0)


def test_tts_roska_default():
    r = compute_tts(DEFAULT, ROSKA)
    assert (r.first_round, r.per_dp_round, r.subsequent, r.total_epochs) == (5500, 18700, 74800, 80300)
    assert r.ratio_vs_eureka == 80300 / 90000
    assert abs(r.ratio_vs_eureka - 0.89) <= 0.005
    assert r.discrepancy is None


def test_tts_eureka():
    r = compute_tts(DEFAULT, EUREKA)
    assert r.total_epochs == 90000 and r.ratio_vs_eureka == 1.0


def test_tts_variants():
    r = compute_tts(SCHEDULE_PRESETS["roska-0.74"], ROSKA)
    assert r.total_epochs == 66800 and abs(r.ratio_vs_eureka - 0.74) <= 0.005
    r = compute_tts(SCHEDULE_PRESETS["roska-0.56"], ROSKA)
    assert r.total_epochs == 50400 and abs(r.ratio_vs_eureka - 0.56) <= 0.005


def test_tts_roska_u_discrepancy_surfaced():
    r = compute_tts(DEFAULT, ROSKA_U)
    assert (r.first_round, r.subsequent, r.total_epochs) == (18000, 192000, 210000)
    assert r.ratio_vs_eureka == pytest.approx(2.3333, abs=1e-4)
    assert r.reference_ratio == 2.2
    assert "2.2" in r.discrepancy and "210000" in r.discrepancy


def test_tts_custom_schedule_has_no_reference():
    r = compute_tts(replace(DEFAULT, finish_epochs=100), ROSKA)
    assert r.reference_ratio is None and r.discrepancy is None


def test_fixed_alpha_costs_like_roska():
    assert compute_tts(DEFAULT, FixedAlpha(0.0)).total_epochs == 80300


def test_tts_ratio_uses_same_n_and_k():
    s = Schedule(n_rounds=3, batch_size=2, eureka_epochs=100, first_round_probe_epochs=10,
                 first_round_finish_epochs=20, bo_J=6, bo_T_BO=5, post_bo_epochs=3, finish_epochs=7)
    r = compute_tts(s, ROSKA)
    assert r.eureka_epochs == 3 * 2 * 100
    assert r.total_epochs == (2 * 10 + 20) + 2 * (2 * 6 * 5 + 2 * 3 + 7)


def test_mts_is_trace_max():
    assert mts([(10, 0.2), (20, 0.9), (30, 0.4)]) == 0.9
    assert mts([]) is None


def test_summarize():
    s = summarize([1.0, 2.0, 3.0])
    assert s["mean"] == 2.0 and s["std"] == 1.0
    one = summarize([4.0])
    assert one["std"] == 0.0 and one["note"]
    assert summarize([math.inf])["n"] == 0
