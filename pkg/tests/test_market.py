import numpy as np
import pytest

from mrpdesign.errors import DataError
from mrpdesign.market import (
    LogPriceMatrix,
    SpreadPanel,
    load_csv,
    load_hedge_csv,
    make_spreads,
    write_csv,
)


def _write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_raw_prices_are_logged(self, tmp_path):
        e = np.e
        rows = [[1.0, e], [e, e**2], [e**2, e**3]]
        text = "a,b\n" + "".join(f"{x!r},{y!r}\n" for (x, y) in rows)
        path = _write_text(tmp_path / "raw.csv", text)
        prices = load_csv(path, prices="raw")
        np.testing.assert_allclose(
            prices.values, [[0, 1], [1, 2], [2, 3]], atol=1e-12
        )
        assert prices.asset_names == ("a", "b")

    def test_log_prices_pass_through(self, tmp_path):
        path = _write_text(tmp_path / "log.csv", "a,b\n0.5,-1.25\n0.75,2\n")
        prices = load_csv(path, prices="log")
        np.testing.assert_array_equal(prices.values, [[0.5, -1.25], [0.75, 2.0]])

    def test_blank_cell_cites_row_and_column(self, tmp_path):
        lines = ["a,b"] + [f"{t},{t}" for t in range(1, 7)]
        lines[5] = "5,"
        path = _write_text(tmp_path / "blank.csv", "\n".join(lines) + "\n")
        with pytest.raises(DataError) as excinfo:
            load_csv(path)
        assert excinfo.value.row == 5
        assert excinfo.value.column == "b"
        assert "row 5" in str(excinfo.value)

    def test_non_numeric_cell(self, tmp_path):
        path = _write_text(tmp_path / "text.csv", "a,b\n1,2\nthree,4\n")
        with pytest.raises(DataError) as excinfo:
            load_csv(path)
        assert (excinfo.value.row, excinfo.value.column) == (2, "a")

    def test_raw_prices_must_be_positive(self, tmp_path):
        path = _write_text(tmp_path / "neg.csv", "a,b\n1,2\n0,4\n")
        with pytest.raises(DataError):
            load_csv(path, prices="raw")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "nothing.csv")

    def test_single_row(self, tmp_path):
        path = _write_text(tmp_path / "short.csv", "a,b\n1,2\n")
        with pytest.raises(DataError):
            load_csv(path)

    def test_single_asset(self, tmp_path):
        path = _write_text(tmp_path / "one.csv", "a\n1\n2\n3\n")
        with pytest.raises(DataError):
            load_csv(path)

    def test_unknown_price_kind(self, tmp_path):
        path = _write_text(tmp_path / "log.csv", "a,b\n1,2\n3,4\n")
        with pytest.raises(DataError):
            load_csv(path, prices="percent")


def test_round_trip_with_metadata(tmp_path, rng):
    prices = LogPriceMatrix(rng.standard_normal((25, 3)), ["x", "y", "z"])
    path = write_csv(
        prices, tmp_path / "out" / "prices.csv", metadata={"seed": 3, "version": "1"}
    )
    assert path.read_text().startswith("# seed: 3\n# version: 1\n")
    reloaded = load_csv(path)
    np.testing.assert_allclose(reloaded.values, prices.values, rtol=0, atol=1e-12)
    assert reloaded.asset_names == prices.asset_names


class TestMakeSpreads:
    def test_identity_hedge(self, rng):
        prices = LogPriceMatrix(rng.standard_normal((10, 3)), ["a", "b", "c"])
        spreads = make_spreads(prices, np.eye(3))
        np.testing.assert_array_equal(spreads.values, prices.values)
        assert spreads.spread_names == ("spread_1", "spread_2", "spread_3")

    def test_single_pair(self):
        prices = LogPriceMatrix([[2.0, 0.5], [1.0, 1.0]], ["a", "b"])
        spreads = make_spreads(prices, [1.0, -1.0])
        assert spreads.values[0, 0] == pytest.approx(1.5)
        assert spreads.N == 1

    def test_matches_double_loop(self, rng):
        y = rng.standard_normal((10, 4))
        hedge = rng.standard_normal((3, 4))
        spreads = make_spreads(LogPriceMatrix(y, list("abcd")), hedge)
        expected = np.zeros((10, 3))
        for t in range(10):
            for n in range(3):
                for m in range(4):
                    expected[t, n] += hedge[n, m] * y[t, m]
        np.testing.assert_allclose(spreads.values, expected, atol=1e-12)

    def test_linear_in_hedge(self, rng):
        prices = LogPriceMatrix(rng.standard_normal((12, 3)), list("abc"))
        (A, B) = (rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))
        combined = make_spreads(prices, 2.0 * A - 0.5 * B).values
        separate = 2.0 * make_spreads(prices, A).values - 0.5 * make_spreads(
            prices, B
        ).values
        np.testing.assert_allclose(combined, separate, atol=1e-12)

    def test_zero_hedge_row(self, rng):
        prices = LogPriceMatrix(rng.standard_normal((5, 2)), ["a", "b"])
        with pytest.raises(DataError):
            make_spreads(prices, [[1.0, -1.0], [0.0, 0.0]])

    def test_hedge_with_wrong_width(self, rng):
        prices = LogPriceMatrix(rng.standard_normal((5, 2)), ["a", "b"])
        with pytest.raises(DataError):
            make_spreads(prices, [[1.0, -1.0, 0.5]])

    def test_rows_keep_hedge(self, rng):
        prices = LogPriceMatrix(rng.standard_normal((8, 2)), ["a", "b"])
        spreads = make_spreads(prices, [[1.0, -1.0]], ["pair"])
        sub = spreads.rows(range(2, 5))
        assert isinstance(sub, SpreadPanel)
        assert sub.T == 3
        assert sub.spread_names == ("pair",)
        np.testing.assert_array_equal(sub.hedge, spreads.hedge)


class TestLoadHedgeCsv:
    prices = LogPriceMatrix(np.arange(12.0).reshape(4, 3), ["a", "b", "c"])

    def test_columns_reordered_to_prices(self, tmp_path):
        path = _write_text(
            tmp_path / "hedge.csv", "spread,c,a,b\nab,0,1,-1\nbc,-2,0,1\n"
        )
        (hedge, names) = load_hedge_csv(path, self.prices)
        np.testing.assert_array_equal(hedge, [[1, -1, 0], [0, 1, -2]])
        assert names == ["ab", "bc"]

    def test_without_labels(self, tmp_path):
        path = _write_text(tmp_path / "hedge.csv", "a,b,c\n1,-1,0\n")
        (hedge, names) = load_hedge_csv(path, self.prices)
        assert hedge.shape == (1, 3)
        assert names is None

    def test_asset_mismatch(self, tmp_path):
        path = _write_text(tmp_path / "hedge.csv", "a,b,d\n1,-1,0\n")
        with pytest.raises(DataError):
            load_hedge_csv(path, self.prices)

    def test_invalid_cell(self, tmp_path):
        path = _write_text(tmp_path / "hedge.csv", "a,b,c\n1,-1,0\n1,x,0\n")
        with pytest.raises(DataError) as excinfo:
            load_hedge_csv(path, self.prices)
        assert (excinfo.value.row, excinfo.value.column) == (2, "b")
