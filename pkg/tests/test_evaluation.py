import csv
import io
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ecgrecon.errors import MissingExperimentsError
from ecgrecon.evaluation import (
    TABLE_COLUMNS,
    LeadMetrics,
    MetricsTable,
    TableRow,
    build_information_table,
    evaluate_experiment,
    pearson_cc,
    rank_leads,
    read_segment_metrics,
    score_reconstruction,
    select_typical,
    write_ranking,
    write_segment_metrics,
)
from ecgrecon.experiments import ExperimentSpec, enumerate_lead_configs
from ecgrecon.leads import PRECORDIAL_LEADS, LeadLabel
from oracles import pcc_two_pass

REGISTRY = enumerate_lead_configs()


# -- PCC --------------------------------------------------------------------

def test_pcc_identity_and_negation(rng):
    x = rng.normal(size=500)
    assert pearson_cc(x, x) == pytest.approx(1.0, abs=1e-12)
    assert pearson_cc(x, -x) == pytest.approx(-1.0, abs=1e-12)


def test_pcc_constant_is_undefined(rng):
    assert pearson_cc(np.full(100, 0.4), rng.normal(size=100)) is None
    assert pearson_cc(rng.normal(size=100), np.zeros(100)) is None


def test_pcc_matches_oracle(rng):
    x = rng.normal(size=1024)
    y = np.sin(x) + 0.1 * rng.normal(size=1024)
    assert pearson_cc(x, y) == pytest.approx(pcc_two_pass(list(x), list(y)), rel=1e-12)


def test_pcc_length_mismatch():
    with pytest.raises(ValueError):
        pearson_cc([1.0, 2.0], [1.0, 2.0, 3.0])


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 32, elements=finite), arrays(np.float64, 32, elements=finite),
       st.floats(0.1, 10), st.floats(-5, 5))
def test_pcc_symmetry_and_affine_invariance(x, y, a, b):
    assume(np.std(x) > 1e-3 and np.std(y) > 1e-3)
    r = pearson_cc(x, y)
    assert r is not None and -1.0 <= r <= 1.0
    assert pearson_cc(y, x) == pytest.approx(r, abs=1e-9)
    assert pearson_cc(a * x + b, y) == pytest.approx(r, abs=1e-9)
    assert pearson_cc(-a * x + b, y) == pytest.approx(-r, abs=1e-9)


# -- scoring ----------------------------------------------------------------

def test_identity_model_scores_perfectly(windows):
    from ecgrecon.dataio import select_leads

    spec = ExperimentSpec.parse("I+II+V3")
    truth = select_leads(windows, spec.output_leads)
    # one batch holds every window, so the oracle can hand back the truth as is
    metrics = evaluate_experiment(lambda x: truth, spec, windows, batch_size=len(windows))
    assert [m.lead for m in metrics] == list(spec.output_leads)
    for m in metrics:
        assert m.mean_pcc == pytest.approx(1.0, abs=1e-12)
        assert m.mean_mse == 0.0


def test_zero_model_gives_undefined_pcc(windows):
    spec = ExperimentSpec.parse("I")
    metrics = evaluate_experiment(lambda x: np.zeros((x.shape[0], 6, x.shape[2])), spec, windows)
    for m in metrics:
        assert m.n_undefined == len(windows)
        assert m.mean_pcc is None
        assert m.mean_mse > 0
    table = build_information_table(metrics)
    assert table.row("I").mean is None
    assert "I,,,,,,,," in table.to_csv()


def test_score_reconstruction_shapes(rng):
    pred = rng.normal(size=(4, 2, 64))
    metrics = score_reconstruction("e", ["V1", "V2"], pred, pred + 0.1, keys=[("r", k) for k in range(4)])
    assert [m.mean_mse for m in metrics] == pytest.approx([0.01, 0.01])
    with pytest.raises(Exception):
        score_reconstruction("e", ["V1"], pred, pred)


def test_segment_metrics_roundtrip(tmp_path, rng):
    pred = rng.normal(size=(3, 2, 32))
    target = pred + rng.normal(size=pred.shape)
    target[1, 0] = 0.0
    metrics = score_reconstruction("I+II+V3+V4", ["V1", "V2"], pred, target,
                                   keys=[("a", 0), ("a", 1), ("b", 0)])
    path = write_segment_metrics(metrics, tmp_path / "s.jsonl")
    lines = path.read_text().splitlines()
    assert len(lines) == 6 and '"lead": "V1"' in lines[0] and '"lead": "V2"' in lines[1]
    back = read_segment_metrics(path)
    assert back[0].per_segment_pcc == metrics[0].per_segment_pcc
    assert back[0].per_segment_pcc[1] is None
    assert back[1].segment_keys == [("a", 0), ("a", 1), ("b", 0)]


def fake_metrics(spec, level, n=5, jitter=0.01):
    return [
        LeadMetrics(spec.experiment_id, v,
                    [level - jitter * k - 0.001 * v.index for k in range(n)],
                    [1.0 - level] * n, [("r", k) for k in range(n)])
        for v in spec.output_leads
    ]


def test_select_typical_picks_segment_nearest_mean():
    m = [LeadMetrics("x", "V1", [0.9, 0.5, 0.71, 0.2], [0, 0, 0, 0], [("r", k) for k in range(4)])]
    # mean 0.5775 -> segment 1 (0.5) is nearest
    assert select_typical(m) == 1


def test_select_typical_tie_break():
    m = [LeadMetrics("x", "V1", [0.4, 0.6], [0, 0], [("b", 0), ("a", 0)])]
    assert select_typical(m) == 1


# -- tables -----------------------------------------------------------------

def test_table_limb_and_one_chest():
    group = REGISTRY.table_group("limb_and_one_chest")
    metrics = [m for k, s in enumerate(group) for m in fake_metrics(s, 0.5 + 0.02 * k)]
    table = build_information_table(metrics, group=group)
    assert len(table.rows) == 10
    assert [r.experiment_id for r in table.rows][:4] == ["I", "II", "III", "I+II"]
    row = table.row("I+II+V3")
    assert row.cells.keys() == {LeadLabel(v) for v in ("V1", "V2", "V4", "V5", "V6")}
    pooled = [p for m in metrics if m.experiment_id == "I+II+V3" for p in m.per_segment_pcc]
    assert row.mean == pytest.approx(np.mean(pooled), abs=1e-15)
    assert row.median == pytest.approx(np.median(pooled), abs=1e-15)


def test_table_limb_and_two_chest():
    group = REGISTRY.table_group("limb_and_two_chest")
    metrics = [m for s in group for m in fake_metrics(s, 0.8)]
    table = build_information_table(metrics, group=group)
    assert len(table.rows) == 15
    assert all(len(r.cells) == 4 for r in table.rows)
    parsed = list(csv.reader(io.StringIO(table.to_csv())))
    assert tuple(parsed[0]) == TABLE_COLUMNS
    v1v2 = parsed[1]
    assert v1v2[0] == "I+II+V1+V2" and v1v2[1] == "" and v1v2[2] == ""
    assert all(cell for cell in v1v2[3:])


def test_single_row_table():
    spec = REGISTRY.get("I+II+V3")
    table = build_information_table(fake_metrics(spec, 0.7), group=[spec])
    assert len(table.rows) == 1


def test_missing_experiment_raises():
    group = REGISTRY.table_group("limb_and_two_chest")
    metrics = [m for s in group[:-1] for m in fake_metrics(s, 0.8)]
    with pytest.raises(MissingExperimentsError) as info:
        build_information_table(metrics, group=group)
    assert info.value.missing == ["I+II+V5+V6"]


def test_csv_formatting_fixed_precision():
    row = TableRow("I", {LeadLabel.V1: 1 / 3}, 0.5, None, 0.1)
    text = MetricsTable([row]).to_csv()
    assert text.splitlines()[1] == "I,0.333333,,,,,,0.500000,"


# -- ranking ----------------------------------------------------------------

def _pair_one_table(levels, mse=None):
    rows = []
    for v, level in zip(PRECORDIAL_LEADS, levels):
        rows.append(TableRow(f"I+II+{v.value}", {}, level, level, (mse or {}).get(v.value, 0.1)))
    return MetricsTable(rows)


def test_rank_orders_by_mean_pcc():
    ranking = rank_leads(_pair_one_table([0.80, 0.85, 0.90, 0.84, 0.83, 0.70]))
    assert [v.value for v, _ in ranking] == ["V3", "V2", "V4", "V5", "V1", "V6"]


def test_rank_dominance_law(rng):
    levels = list(rng.uniform(0.5, 0.9, size=6))
    levels[2] = 0.99
    assert rank_leads(_pair_one_table(levels))[0][0] == LeadLabel.V3


def test_rank_tie_break_by_mse():
    ranking = rank_leads(_pair_one_table([0.8] * 6, mse={"V5": 0.01, "V2": 0.05}))
    assert [v.value for v, _ in ranking][:3] == ["V5", "V2", "V1"]


def test_rank_needs_all_six():
    table = _pair_one_table([0.8] * 6)
    table.rows.pop()
    with pytest.raises(MissingExperimentsError):
        rank_leads(table)


def test_write_ranking(tmp_path):
    ranking = rank_leads(_pair_one_table([0.80, 0.85, 0.90, 0.84, 0.83, 0.70]))
    lines = write_ranking(ranking, tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "rank,input_lead,mean_pcc"
    assert lines[1] == "1,V3,0.900000"
    assert len(lines) == 7


def test_nan_pcc_skipped_in_mean():
    m = LeadMetrics("x", "V1", [0.5, None, 0.7], [0.1, 0.2, 0.3])
    assert m.mean_pcc == pytest.approx(0.6)
    assert m.n_undefined == 1
    assert not math.isnan(m.median_pcc)
