import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import pytest

from shdbench import plots


def _results(n_variants=3, seeds=(0, 1)):
    rows = []
    for v in range(n_variants):
        for s in seeds:
            rows.append({"variant": f"v{v}", "seed": str(s), "trainable_params": 10 ** (v + 3), "auroc": 0.7 + 0.05 * v + 0.01 * s, "auprc": 0.3 + 0.05 * v})
        rows.append({"variant": f"v{v}", "seed": "mean", "trainable_params": 10 ** (v + 3), "auroc": 0.0, "auprc": 0.0})
    return pd.DataFrame(rows)


def test_perf_data_drops_aggregate_rows():
    data = plots.perf_efficiency_data(_results())
    assert len(data) == 6 and "mean" not in set(data["seed"])


def test_perf_plot_has_one_point_per_row():
    data = plots.perf_efficiency_data(_results())
    fig = plt.figure()
    plots._render_perf(data, fig)
    for ax in fig.axes:
        assert sum(len(c.get_offsets()) for c in ax.collections) == 6
        assert ax.get_xscale() == "log"
    plt.close(fig)


def test_emit_is_byte_stable_and_reproducible_from_sidecar(tmp_path):
    data = plots.perf_efficiency_data(_results())
    png, csv_path = plots.emit("perf_efficiency", data, tmp_path / "a")
    png2, _ = plots.emit("perf_efficiency", data, tmp_path / "b")
    assert png.read_bytes() == png2.read_bytes()
    again = plots.render("perf_efficiency", plots.read_sidecar(csv_path), tmp_path / "c.png")
    assert again.read_bytes() == png.read_bytes()
    back = plots.read_sidecar(csv_path)
    np.testing.assert_array_equal(back["auroc"].to_numpy(), data["auroc"].to_numpy())


def test_topk_sorted():
    data = plots.topk_data(pd.DataFrame({"k": [10, 5, 166], "val_macro_auroc": [0.8, 0.7, 0.81]}))
    assert data["k"].tolist() == [5, 10, 166]


def test_error_types():
    out = plots.error_type([0.9, 0.9, 0.1, 0.1, 0.5], [1, 0, 1, 0, 0])
    assert out.tolist() == ["TP", "FP", "FN", "TN", "FP"]


def test_embedding_table_and_render(tmp_path, rng):
    coords = rng.normal(size=(20, 2))
    probs = rng.uniform(0.01, 0.99, size=(20, 6))
    labels = (rng.uniform(size=(20, 6)) < 0.3).astype(int)
    data = plots.embedding_data(coords, ["test"] * 20, [f"r{i}" for i in range(20)], probs, labels)
    err_cols = [c for c in data.columns if c.startswith("err:")]
    assert len(err_cols) == 6
    assert data[err_cols[0]].tolist() == plots.error_type(probs[:, 0], labels[:, 0]).tolist()
    png, _ = plots.emit("embedding", data, tmp_path / "emb")
    assert png.stat().st_size > 0
    with pytest.raises(ValueError):
        plots.embedding_data(coords, probabilities=probs)


def test_nothing_to_plot():
    with pytest.raises(plots.NothingToPlotError):
        plots.perf_efficiency_data(_results().iloc[0:0])
    with pytest.raises(ValueError, match="valid kinds"):
        plots.render("pie", pd.DataFrame({"a": [1]}), "x.png")
