
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spillover.data import (ClusterData, ExposureSummaryFn, GroupSummary, HouseholdRecord,
                            HouseholdSample, InfectStudy, TrialTable, cluster_features,
                            format_clusters, format_group_summary, format_households,
                            parse_clusters, parse_group_summary, parse_households,
                            summarize_households)
from spillover.errors import EstimationError, ParseError, ValidationError

HEADER = "group_id,assignment,n_treated,cases_treated,n_control,cases_control\n"


def test_cholera_table_labels(cholera):
    labels = [g.assignment for g in cholera.groups]
    assert labels.count("50") == 2 and labels.count("30") == 3
    g1 = cholera.groups[0]
    assert (g1.assignment, g1.n_treated, g1.cases_treated, g1.n_control, g1.cases_control) == \
        ("50", 12541, 16, 12541, 18)


def test_tab_delimited_and_comments():
    text = "# a comment\n" + HEADER.replace(",", "\t") + "a\tx\t10\t1\t10\t2\n\n"
    t = parse_group_summary(text)
    assert t.groups[0].cases_control == 2


def test_empty_body_is_no_groups():
    with pytest.raises(ValidationError, match="no groups"):
        parse_group_summary(HEADER)


def test_cases_exceeding_n_rejected():
    with pytest.raises(ValidationError, match="cases_treated"):
        parse_group_summary(HEADER + "a,x,5,6,10,1\n")


def test_malformed_row_reports_row_number():
    with pytest.raises(ParseError, match="row 3"):
        parse_group_summary(HEADER + "a,x,5,1,10,1\nb,x,five,1,10,1\n")


def test_missing_value_rejected():
    with pytest.raises(ParseError, match="missing"):
        parse_group_summary(HEADER + "a,x,5,,10,1\n")


def test_missing_column_rejected():
    with pytest.raises(ParseError, match="cases_control"):
        parse_group_summary("group_id,assignment,n_treated,cases_treated,n_control\n")


def test_duplicate_ids_rejected():
    g = GroupSummary("a", "x", 1, 0, 1, 0)
    with pytest.raises(ValidationError, match="unique"):
        TrialTable((g, g))


def test_declared_label_without_groups():
    with pytest.raises(ValidationError):
        TrialTable((GroupSummary("a", "x", 1, 0, 1, 0),), ("x", "y"))


group_rows = st.lists(
    st.tuples(st.integers(0, 500), st.integers(0, 500)).flatmap(
        lambda nn: st.tuples(st.just(nn[0]), st.integers(0, nn[0]),
                             st.just(nn[1]), st.integers(0, nn[1]))
    ).filter(lambda r: r[0] + r[2] >= 1),
    min_size=1, max_size=8)


@given(group_rows)
def test_group_summary_round_trip(rows):
    groups = tuple(GroupSummary(f"g{i}", "ab"[i % 2], *r) for i, r in enumerate(rows))
    t = TrialTable(groups)
    again = parse_group_summary(format_group_summary(t))
    assert again.groups == t.groups


def test_summarize_households_counting():
    recs = [HouseholdRecord("1", 1, 1, 1), HouseholdRecord("2", 1, 1, 0),
            HouseholdRecord("3", 0, 1, 1), HouseholdRecord("4", 0, 1, 1)]
    s = summarize_households(recs)
    assert (s.p1, s.p0, s.attack1, s.attack0) == (0.5, 1.0, 1.0, 1.0)


def test_no_infected_index_cases():
    recs = [HouseholdRecord(str(i), i % 2, 0, 0) for i in range(4)]
    with pytest.raises(EstimationError, match="no infected index cases"):
        summarize_households(recs)


def test_empty_cell_named():
    recs = [HouseholdRecord("1", 1, 0, 0), HouseholdRecord("2", 0, 1, 0)]
    with pytest.raises(EstimationError, match="z1=1, y1=1"):
        summarize_households(recs)


households = st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)),
                      min_size=4, max_size=40)


@given(households, st.randoms(use_true_random=False))
def test_summarize_invariant_to_order(rows, rnd):
    rows = rows + [(1, 1, 0), (0, 1, 1), (1, 0, 0), (0, 0, 0)]
    recs = [HouseholdRecord(str(i), *r) for i, r in enumerate(rows)]
    shuffled = recs[:]
    rnd.shuffle(shuffled)
    assert summarize_households(recs) == summarize_households(shuffled)


def test_household_round_trip_and_columnar_equivalence():
    recs = [HouseholdRecord(str(i), i % 2, (i // 2) % 2, (i // 3) % 2) for i in range(12)]
    assert parse_households(format_households(recs)) == recs
    sample = HouseholdSample.from_records(recs)
    assert list(sample) == recs
    assert summarize_households(sample) == summarize_households(recs)


def test_household_values_must_be_binary():
    with pytest.raises(ParseError, match="row 2"):
        parse_households("household_id,z1,y1,y2\n1,2,0,0\n")


def test_infect_study_fractions():
    s = InfectStudy(0.2, 0.3, 0.3, 0.5)
    assert s.doomed_fraction == pytest.approx(0.6)
    assert s.protected_fraction == pytest.approx(0.4)
    with pytest.raises(ValidationError):
        InfectStudy(0.2, 1.3, 0.3, 0.5)
    with pytest.raises(ValidationError, match="monotonicity"):
        InfectStudy(0.2, 0.3, 0.6, 0.5).check_monotone()


def _cluster(z, l=None, cid="c"):
    n = len(z)
    l = np.zeros((n, 1)) if l is None else l
    return ClusterData(cid, tuple(str(j) for j in range(n)), np.array(z, float), np.zeros(n), l)


@pytest.mark.parametrize("z,kind,expected", [
    ((1, 0, 1), "count-of-others", (1, 2, 1)),
    ((0, 0), "mean-of-others", (0, 0)),
    ((1, 1, 0, 0), "mean-of-others", (1 / 3, 1 / 3, 2 / 3, 2 / 3)),
])
def test_exposure_summaries(z, kind, expected):
    f = cluster_features(_cluster(z), g=ExposureSummaryFn(kind))
    np.testing.assert_allclose(f.g, expected, rtol=0, atol=1e-15)


def test_identity_vector_summary():
    out = ExposureSummaryFn("identity-vector")(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(out, [[2, 3], [1, 3], [1, 2]])


@settings(max_examples=50)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=8),
       st.sampled_from(["count-of-others", "mean-of-others"]), st.randoms(use_true_random=False))
def test_summary_invariant_to_reordering_others(z, kind, rnd):
    f = ExposureSummaryFn(kind)
    z = np.array(z, float)
    base = f(z)
    for j in range(len(z)):
        others = [i for i in range(len(z)) if i != j]
        rnd.shuffle(others)
        perm = [j] + others
        assert f(z[perm])[0] == base[j]


def test_cluster_size_and_dimension_checks():
    with pytest.raises(ValidationError, match="size 1"):
        _cluster([1])
    a = _cluster([1, 0], np.zeros((2, 1)), "a")
    b = _cluster([1, 0], np.zeros((2, 2)), "b")
    with pytest.raises(ValidationError, match="dimension"):
        cluster_features([a, b])


def test_cluster_round_trip_groups_noncontiguous_rows():
    text = ("cluster_id,individual_id,z,y,l_1,l_2\n"
            "a,1,1,0.5,1,2\nb,1,0,1.5,0,0\na,2,0,2.5,3,4\nb,2,1,-1,1,1\n")
    cl = parse_clusters(text)
    assert [c.cluster_id for c in cl] == ["a", "b"]
    np.testing.assert_array_equal(cl[0].l, [[1, 2], [3, 4]])
    again = parse_clusters(format_clusters(cl))
    for x, y in zip(cl, again):
        np.testing.assert_array_equal(x.y, y.y)
        np.testing.assert_array_equal(x.l, y.l)


def test_cluster_missing_y_rejected():
    with pytest.raises(ParseError, match="row 2"):
        parse_clusters("cluster_id,individual_id,z,y\na,1,1,\n")
