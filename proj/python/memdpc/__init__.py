"""Memory-augmented dense predictive coding: Python bindings."""

import sys

from ._core import (
    MemdpcError,
    contrastive_loss_oracle,
    critic,
    dense_contrastive_loss,
    encode_displacement,
    expect_future,
    gen_synthetic,
    preprocess_flow,
    read_embeddings,
    retrieve,
    run_cli,
)

__all__ = [
    "MemdpcError",
    "contrastive_loss_oracle",
    "critic",
    "dense_contrastive_loss",
    "encode_displacement",
    "expect_future",
    "gen_synthetic",
    "main",
    "preprocess_flow",
    "read_embeddings",
    "retrieve",
    "run_cli",
]


def main(argv=None):
    """Console entry point mirroring the `memdpc` executable."""
    code, out, err = run_cli(list(sys.argv[1:] if argv is None else argv))
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code
