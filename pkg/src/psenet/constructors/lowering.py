"""Rewrite a generalized PSENet as a shared-weight PSENet of (n+1)x width."""

from __future__ import annotations

import numpy as np

from ..models import Network, PseGeneralizedLayer, PseSharedLayer


def selector_alpha(n: int, d: int) -> np.ndarray:
    """Row ``j`` is 1 on block ``j`` (entries ``j*d .. (j+1)*d - 1``), 0 elsewhere."""
    alpha = np.zeros((n + 1, (n + 1) * d))
    for j in range(n + 1):
        alpha[j, j * d : (j + 1) * d] = 1.0
    return alpha


def lower_generalized(f: Network) -> Network:
    """Shared-weight network computing exactly the same function as ``f``.

    Block ``j`` of the new hidden state holds ``relu^j(W_{i,j} h + b_{i,j})``;
    the old ``alpha`` vectors move into the next layer's weights as diagonal
    scalings of the column blocks.
    """
    if not f.layers or not all(isinstance(l, PseGeneralizedLayer) for l in f.layers):
        raise TypeError("lower_generalized: every hidden layer must be a PseGeneralizedLayer")
    ns = {l.n for l in f.layers}
    if len(ns) != 1:
        raise ValueError(f"lower_generalized: layers mix maximal powers {sorted(ns)}")
    n = ns.pop()

    layers = []
    prev = None
    for layer in f.layers:
        if prev is None:
            W = np.concatenate(list(layer.W), axis=0)
        else:
            # block (r, c) = W_{i,r} @ Diag(alpha_{i-1,c})
            W = np.block([[layer.W[r] * prev.alpha[c][None, :] for c in range(n + 1)] for r in range(n + 1)])
        b = np.concatenate(list(layer.b))
        layers.append(PseSharedLayer(n, W, b, selector_alpha(n, layer.d_out)))
        prev = layer

    W_out = np.concatenate([f.W_out * prev.alpha[c][None, :] for c in range(n + 1)], axis=1)
    return Network(layers, W_out, f.b_out.copy())
