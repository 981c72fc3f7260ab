import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import true_calibration_dict
from shiftcal.errors import InvalidInputError, ParseError, ShapeError, SupportError
from shiftcal.scenarios import (
    BOX_FLOOR,
    BOX_LO,
    Dataset,
    EnumerableDomain,
    box_label_rule,
    box_shift_grid,
    box_shift_weight,
    get_scenario,
    grid_domain,
    load_csv,
    oracle_discriminator,
    oracle_true_calibration,
    oracle_weight,
    sample,
    sample_indices,
    save_csv,
)


def two_point(p, q, labels=((1.0, 0.0), (0.0, 1.0))):
    return EnumerableDomain(np.array([[0.0], [1.0]]), np.array(p), np.array(q), np.array(labels))


def random_domain(seed, m=12, K=3):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(m))
    q = rng.dirichlet(np.ones(m))
    return EnumerableDomain(rng.normal(size=(m, 2)), p, q, rng.dirichlet(np.ones(K), size=m))


class TestOracleWeight:
    def test_equal_measures(self):
        d = two_point([0.5, 0.5], [0.5, 0.5])
        assert [oracle_weight(d, i) for i in range(2)] == [1.0, 1.0]

    def test_arithmetic(self):
        d = two_point([0.5, 0.5], [1.0, 0.0])
        assert [oracle_weight(d, i) for i in range(2)] == [2.0, 0.0]

    @pytest.mark.parametrize("seed", range(5))
    def test_mean_one_under_p(self, seed):
        d = random_domain(seed)
        assert abs(d.p @ d.weights() - 1.0) <= 1e-12

    def test_outside_support(self):
        d = two_point([1.0, 0.0], [1.0, 0.0])
        with pytest.raises(SupportError):
            oracle_weight(d, 1)

    @pytest.mark.parametrize("seed", range(5))
    def test_importance_identity(self, seed):
        d = random_domain(seed)
        h = np.random.default_rng(seed + 100).normal(size=d.size)
        assert abs(d.p @ (d.weights() * h) - d.q @ h) <= 1e-12


class TestOracleDiscriminator:
    def test_equal_measures(self):
        d = two_point([0.5, 0.5], [0.5, 0.5])
        assert [oracle_discriminator(d, i) for i in range(2)] == [0.5, 0.5]

    def test_w_three_gives_quarter(self):
        d = two_point([0.2, 0.8], [0.6, 0.4])
        assert oracle_weight(d, 0) == pytest.approx(3.0)
        assert oracle_discriminator(d, 0) == pytest.approx(0.25)

    @pytest.mark.parametrize("seed", range(5))
    def test_range_and_relation(self, seed):
        d = random_domain(seed)
        g, w = d.discriminator(), d.weights()
        assert (g >= 1 / (1 + d.U) - 1e-15).all() and (g <= 1).all()
        np.testing.assert_allclose(g, 1 / (1 + w), rtol=1e-15, atol=0)

    def test_outside_mixture_support(self):
        d = EnumerableDomain(np.zeros((3, 1)), np.array([0.5, 0.5, 0.0]), np.array([0.5, 0.5, 0.0]), np.full((3, 2), 0.5))
        with pytest.raises(SupportError):
            oracle_discriminator(d, 2)


class TestDomainValidation:
    def test_q_outside_p_support(self):
        with pytest.raises(SupportError):
            two_point([1.0, 0.0], [0.5, 0.5])

    def test_not_normalized(self):
        with pytest.raises(InvalidInputError):
            two_point([0.5, 0.6], [0.5, 0.5])

    def test_bad_label_rows(self):
        with pytest.raises(InvalidInputError):
            two_point([0.5, 0.5], [0.5, 0.5], labels=((0.7, 0.7), (0.0, 1.0)))

    def test_shape(self):
        with pytest.raises(ShapeError):
            EnumerableDomain(np.zeros((2, 1)), np.array([1.0]), np.array([1.0]), np.ones((2, 1)))


class TestTrueCalibration:
    def test_injective_gives_label_table(self, grid):
        f = np.random.default_rng(1).dirichlet(np.ones(3), size=grid.size)
        np.testing.assert_array_equal(oracle_true_calibration(grid, f), grid.label_table)

    @pytest.mark.parametrize("measure", ["p", "q"])
    def test_constant_forecaster_gives_base_rate(self, grid, measure):
        f = np.tile([0.2, 0.3, 0.5], (grid.size, 1))
        c = oracle_true_calibration(grid, f, measure)
        base = grid.measure(measure) @ grid.label_table
        np.testing.assert_allclose(c, np.tile(base, (grid.size, 1)), atol=1e-15)

    def test_two_point_tie_by_hand(self):
        # both points forecast 0.5 on every coordinate; under p = (0.25, 0.75)
        # c_0 = 0.25*1 + 0.75*0 = 0.25 and c_1 = 0.75
        d = two_point([0.25, 0.75], [0.25, 0.75])
        c = oracle_true_calibration(d, np.full((2, 2), 0.5), "p")
        np.testing.assert_allclose(c, [[0.25, 0.75], [0.25, 0.75]], atol=1e-15)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_dict_oracle_with_ties(self, grid, seed):
        rng = np.random.default_rng(seed)
        levels = rng.dirichlet(np.ones(3), size=4)
        f = levels[rng.integers(0, 4, grid.size)]
        expect = true_calibration_dict(f.tolist(), grid.label_table.tolist(), grid.q.tolist())
        np.testing.assert_allclose(oracle_true_calibration(grid, f, "q"), expect, atol=1e-14)


class TestSampling:
    def test_frequencies_within_clt_band(self, grid):
        n = 10_000
        idx = sample_indices(grid, n, seed=3, measure="p")
        freq = np.bincount(idx, minlength=grid.size) / n
        assert (np.abs(freq - grid.p) <= 3 * np.sqrt(grid.p / n) + 1e-12).all()

    @pytest.mark.parametrize("name", ["box-shift", "no-shift", "gauss-shift", "grid-K3"])
    def test_seed_determinism(self, name):
        s = get_scenario(name)
        a, b = sample(s, 200, 7), sample(s, 200, 7)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_target_unlabeled_and_labeled(self):
        s = get_scenario("box-shift")
        assert not sample(s, 10, 0, "target").labeled
        assert sample(s, 10, 0, "target-labeled").labeled

    def test_target_labels_follow_shared_rule(self):
        s = get_scenario("box-shift")
        d = sample(s, 20000, 4, "target-labeled")
        inside = (d.features >= BOX_LO).all(axis=1)
        # empirical label frequencies in the target box match the rule's mean probabilities
        probs = box_label_rule(d.features[inside]).mean(axis=0)
        freq = np.bincount(d.labels[inside], minlength=3) / inside.sum()
        assert np.abs(freq - probs).max() < 0.02

    def test_n_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            sample(get_scenario("box-shift"), 0, 1)

    def test_unknown_scenario(self):
        with pytest.raises(InvalidInputError):
            get_scenario("nope")


class TestBoxShift:
    def test_weight_is_piecewise_constant_with_known_U(self):
        s = get_scenario("box-shift")
        hi = (1 - BOX_FLOOR) / (1 - BOX_LO) ** 2 + BOX_FLOOR
        assert s.U == pytest.approx(hi)
        assert box_shift_weight(np.array([[0.1, 0.9]]))[0] == pytest.approx(BOX_FLOOR)
        assert box_shift_weight(np.array([[0.5, 0.9]]))[0] == pytest.approx(hi)

    @pytest.mark.parametrize("cells", [10, 20])
    def test_grid_refinement_matches(self, cells):
        d = box_shift_grid(cells)
        np.testing.assert_allclose(d.weights(), box_shift_weight(d.points), rtol=1e-12)
        assert d.U == pytest.approx(get_scenario("box-shift").U, rel=1e-12)

    def test_target_sampler_matches_weight(self):
        s = get_scenario("box-shift")
        X = sample(s, 40000, 2, "target").features
        inside = (X >= BOX_LO).all(axis=1).mean()
        expected = BOX_FLOOR * (1 - BOX_LO) ** 2 + (1 - BOX_FLOOR)
        assert abs(inside - expected) < 0.01

    def test_labels_are_probability_vectors(self):
        X = np.random.default_rng(0).random((100, 2))
        P = box_label_rule(X)
        assert (P >= 0).all() and np.allclose(P.sum(axis=1), 1, atol=1e-12)


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        d = Dataset(rng.normal(size=(30, 3)) * 1e3, rng.integers(0, 4, 30), 4)
        save_csv(d, tmp_path / "d.csv")
        back = load_csv(tmp_path / "d.csv", 4)
        assert back.features.tobytes() == d.features.tobytes()
        np.testing.assert_array_equal(back.labels, d.labels)

    @given(values=st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=6))
    def test_any_float_round_trips(self, values, tmp_path_factory):
        path = tmp_path_factory.mktemp("csv") / "v.csv"
        d = Dataset(np.array(values)[:, None])
        save_csv(d, path)
        assert load_csv(path).features.tobytes() == d.features.tobytes()

    def test_unlabeled(self, tmp_path):
        (tmp_path / "u.csv").write_text("f0,f1,label\n1,2,\n3,4,\n")
        d = load_csv(tmp_path / "u.csv")
        assert not d.labeled
        np.testing.assert_array_equal(d.features, [[1, 2], [3, 4]])

    def test_hand_written(self, tmp_path):
        (tmp_path / "h.csv").write_text("f0,f1,label\n0.5,-1,1\n2,3e-1,0\n")
        d = load_csv(tmp_path / "h.csv")
        np.testing.assert_array_equal(d.features, [[0.5, -1.0], [2.0, 0.3]])
        np.testing.assert_array_equal(d.labels, [1, 0])

    def test_lf_line_endings(self, tmp_path):
        save_csv(Dataset(np.ones((2, 1)), np.array([0, 1])), tmp_path / "e.csv")
        assert b"\r" not in (tmp_path / "e.csv").read_bytes()

    @pytest.mark.parametrize(
        "text,line",
        [
            ("x0,label\n1,0\n", 1),
            ("f0,label\nabc,0\n", 2),
            ("f0,label\n1,0\n2,-1\n", 3),
            ("f0,label\n1,0\n2,1.5\n", 3),
            ("f0,label\n1,0\n2\n", 3),
            ("f0,label\n1,0\n2,\n", 3),
            ("f0,label\n1,5\n", 2),
        ],
    )
    def test_parse_errors_name_line(self, tmp_path, text, line):
        (tmp_path / "bad.csv").write_text(text)
        with pytest.raises(ParseError) as info:
            load_csv(tmp_path / "bad.csv", n_classes=3)
        assert info.value.line == line
        assert str(info.value).startswith(f"line {line}:")

    def test_dataset_rejects_bad_labels(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.zeros((2, 1)), np.array([0, 3]), 2)

    def test_dataset_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.array([[np.nan]]))


def test_grid_domain_shape():
    d = grid_domain()
    assert d.size == 64 and d.n_classes == 3 and np.isfinite(d.U)
