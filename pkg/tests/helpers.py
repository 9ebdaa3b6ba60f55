"""Shared builders for block-level tests and the acceptance suite."""

import numpy as np

from recsearch import blocks as B
from recsearch import tensor as T
from recsearch.tensor import Parameter

from conftest import scalarize

BATCH = 3

# (label, block, local hyperparameters, input dims; vocab sizes for mappers)
BLOCK_CASES = [
    ("LatentFactorMapper", B.LatentFactorMapper("m", "user"), {"dim": 4}, [6]),
    ("DenseFeatureMapper", B.DenseFeatureMapper("m", ["I1", "I2", "I3"]), {"dim": 4}, [1, 1, 1]),
    ("SparseFeatureMapper", B.SparseFeatureMapper("m", ["C1", "C2"]), {"dim": 4}, [5, 7]),
    ("MLPInteraction", B.MLPInteraction("i", ["a", "b"]), {"layers": 2, "units": 16}, [4, 3]),
    ("ConcatenateInteraction", B.ConcatenateInteraction("i", ["a", "b"]), {}, [4, 3]),
    ("FMInteraction", B.FMInteraction("i", ["a", "b", "c"]), {}, [4, 4, 4]),
    ("CrossNetInteraction", B.CrossNetInteraction("i", ["a", "b"]), {"layers": 3}, [4, 3]),
    ("SelfAttentionInteraction", B.SelfAttentionInteraction("i", ["a", "b", "c"]), {"heads": 2, "blocks": 2}, [4, 4, 4]),
    ("Elementwise-sum", B.ElementwiseInteraction("i", ["a", "b"]), {"mode": "sum"}, [4, 4]),
    ("Elementwise-average", B.ElementwiseInteraction("i", ["a", "b"]), {"mode": "average"}, [4, 4]),
    ("Elementwise-multiply", B.ElementwiseInteraction("i", ["a", "b"]), {"mode": "multiply"}, [4, 4]),
    ("Elementwise-max", B.ElementwiseInteraction("i", ["a", "b"]), {"mode": "max"}, [4, 4]),
    ("Elementwise-min", B.ElementwiseInteraction("i", ["a", "b"]), {"mode": "min"}, [4, 4]),
    ("RandomSelectInteraction", B.RandomSelectInteraction("i", ["a", "b"]), {"index": 1}, [4, 3]),
    ("HyperInteraction-CrossNet", B.HyperInteraction("i", ["a", "b"]), {"interactor_type": "CrossNet", "crossnet/layers": 2}, [4, 3]),
    ("RatingHead-sum", B.RatingHead("h", ["a"]), {"head_type": "sum"}, [4]),
    ("RatingHead-linear", B.RatingHead("h", ["a", "b"]), {"head_type": "linear"}, [4, 3]),
    ("CTRHead", B.CTRHead("h", ["a", "b"]), {}, [4, 3]),
]


def make_params(block, hp, in_dims, rng, scale=0.5):
    shapes = block.param_shapes(hp, in_dims)
    return {local: Parameter(f"{block.name}/{local}", rng.normal(0.0, scale, size=shape)) for local, (shape, _) in shapes.items()}


def block_loss_builder(block, hp, in_dims, rng):
    """Return (params, build_loss) for a random point of ``block``.

    Interactor and head inputs are trainable too, so the input gradients
    are checked along with the block's own parameters.
    """
    params = make_params(block, hp, in_dims, rng)
    all_params = list(params.values())
    feats = None
    inputs = []
    if isinstance(block, B.Mapper):
        if isinstance(block, B.DenseFeatureMapper):
            feats = [rng.normal(size=(BATCH, len(in_dims)))]
        elif isinstance(block, B.SparseFeatureMapper):
            feats = [np.stack([rng.integers(0, v + 1, size=BATCH) for v in in_dims], axis=1)]
        else:
            feats = [rng.integers(0, in_dims[0] + 1, size=BATCH)]
    else:
        inputs = [Parameter(f"input{j}", rng.normal(size=(BATCH, d))) for j, d in enumerate(in_dims)]
        all_params += inputs
    if isinstance(block, B.CTRHead):
        targets = rng.integers(0, 2, size=BATCH).astype(float)
    else:
        targets = rng.normal(size=BATCH)
    weights = None

    def build(tape, nodes):
        nonlocal weights
        pn = {local: nodes[p.id] for local, p in params.items()}
        if feats is not None:
            if isinstance(block, B.DenseFeatureMapper):
                out = block.forward(hp, pn, [tape.constant(feats[0])])
            else:
                out = block.forward(hp, pn, feats)
        else:
            xs = [nodes[p.id] for p in inputs]
            if isinstance(block, B.Head):
                return block.loss(block.predict(hp, pn, xs), targets)
            out = [block.forward(hp, pn, xs)]
        if weights is None:
            weights = [rng.normal(size=o.shape) for o in out]
        terms = [scalarize(o, w) for o, w in zip(out, weights)]
        total = terms[0]
        for t in terms[1:]:
            total = T.add(total, t)
        return total

    return all_params, build


def block_grad_error(block, hp, in_dims, rng):
    params, build = block_loss_builder(block, hp, in_dims, rng)
    return T.check_gradients(build, params, h=1e-5)
