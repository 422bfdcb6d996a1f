import json
import math
from pathlib import Path

import numpy as np
import pytest

import bignet

DATA = Path(__file__).resolve().parents[2] / "tests" / "data"


def two_component_graph(mode=bignet.GraphMode.heterogeneous):
    graphs = bignet.build_graphs((DATA / "two_component.json").read_text(), 0.3, mode)
    assert len(graphs) == 1
    return graphs[0]


def test_feature_widths():
    het, homo = bignet.GraphMode.heterogeneous, bignet.GraphMode.homogeneous
    assert [bignet.feature_width(het, t) for t in
            (bignet.NodeType.semantic, bignet.NodeType.topological, bignet.NodeType.spatial)] == [144, 3, 11]
    assert bignet.feature_width(homo, bignet.NodeType.semantic) == 158


def test_two_component_graph():
    g = two_component_graph()
    assert g.node_count == 3
    assert g.edge_count == 2
    assert list(g.count_by_type()) == [2, 1, 0]
    assert g.features(bignet.NodeType.semantic).shape == (2, 144)
    assert g.features(bignet.NodeType.topological).shape == (1, 3)
    assert g.edges.shape == (2, 2)
    assert all(label == "correct" for label in g.labels)
    g.check_invariants()


def test_homogeneous_features_and_normalisation_range():
    g = two_component_graph(bignet.GraphMode.homogeneous)
    x = g.features(bignet.NodeType.semantic)
    assert x.shape == (2, 158)
    assert np.all(np.abs(x) <= 1.0 + 1e-6)


def test_save_load_round_trip(tmp_path):
    g = two_component_graph()
    path = tmp_path / "g.bgraph"
    bignet.save_graph(g, path)
    h = bignet.load_graph(path)
    assert h.node_count == g.node_count
    np.testing.assert_array_equal(h.edges, g.edges)
    np.testing.assert_array_equal(h.features(bignet.NodeType.semantic), g.features(bignet.NodeType.semantic))


def test_hash_embed_is_unit_or_zero():
    v = bignet.hash_embed("Basic Wall")
    assert v.shape == (64,)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12
    np.testing.assert_array_equal(bignet.hash_embed("Basic Wall"), v)
    assert not bignet.hash_embed("").any()


def test_metrics_and_class_weights():
    r = bignet.evaluate_predictions([1, 1, 0, 2], [1, 0, 1, 2])
    assert r["per_class"][1]["precision"] == pytest.approx(0.5)
    assert r["per_class"][2]["f1"] == pytest.approx(1.0)
    w = [1.0, 1.0, 1.0, 1.0]
    for expected in (1.05, 1.1025, 1.157625):
        w = bignet.update_class_weights_raw(w, [0.5] * 4, 0.1)
        assert abs(w[0] - expected) <= math.ulp(expected)
    assert w[0] == 1.0 * (1 + 0.1 * 0.5) * (1 + 0.1 * 0.5) * (1 + 0.1 * 0.5)


def test_parse_error_is_value_error():
    with pytest.raises(ValueError):
        bignet.build_graphs('{"bimlite_version":"1","floors":[', 0.3)


def test_synth_and_cli(tmp_path):
    doc = bignet.synth_building(json.dumps({"bays": 2, "spans": 2, "storeys": 1, "mep_runs": 1}))
    graphs = bignet.build_graphs(doc)
    assert len(graphs) == 1 and graphs[0].node_count > 0
    model = tmp_path / "m.json"
    model.write_text(doc)
    code, out, err = bignet.run_cli(["convert", "--input", str(model), "--out-dir", str(tmp_path / "g")])
    assert code == 0, err
    pairs = bignet.load_dataset(tmp_path / "g" / "manifest.json")
    assert len(pairs) == 1 and pairs[0][1] == "pretrain"
    assert pairs[0][0].node_count == graphs[0].node_count
    code, _, err = bignet.run_cli(["convert", "--bogus"])
    assert code == 2
