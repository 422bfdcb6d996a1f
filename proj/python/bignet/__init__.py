"""BIM graph encoding, masked graph autoencoder pretraining and error classification."""

from ._core import (
    Graph,
    GraphIoError,
    GraphMode,
    NodeType,
    ParseError,
    ValidationError,
    build_graphs,
    evaluate_predictions,
    feature_width,
    hash_embed,
    load_dataset,
    load_graph,
    run_cli,
    save_graph,
    synth_building,
    update_class_weights_raw,
)

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "GraphIoError",
    "GraphMode",
    "NodeType",
    "ParseError",
    "ValidationError",
    "build_graphs",
    "evaluate_predictions",
    "feature_width",
    "hash_embed",
    "load_dataset",
    "load_graph",
    "run_cli",
    "save_graph",
    "synth_building",
    "update_class_weights_raw",
]
