"""Walk through the multi-blank lattice on a two-frame, one-label utterance.

Every alignment is listed with its weight, then the dynamic-programming loss
is checked against the sum over paths. Raising sigma penalizes each emission,
so alignments that use the two-frame blank lose less weight than the rest.
"""

import numpy as np

from multiblank import BlankSet, LossConfig, loss_and_grad
from multiblank.oracle import arc_weights, brute_force_loss, enumerate_paths, path_weight

T, labels = 2, [0]
blanks = BlankSet((1, 2))
# uniform activations: one label plus blanks of duration 1 and 2
z = np.zeros((T, len(labels) + 1, 1 + len(blanks)))

for sigma in (0.0, 0.05):
    arcs = arc_weights(z, sigma)
    print(f"sigma = {sigma}")
    for path in enumerate_paths(T, len(labels), blanks, labels):
        moves = " ".join(
            f"y{e.symbol}" if e.kind == "label" else f"b{e.symbol}" for e in path.emissions
        )
        w = path_weight(path, arcs, blanks, labels)
        print(f"  {moves:<12} length {len(path.emissions)}  prob {np.exp(w):.4f}")
    res = loss_and_grad(z, labels, LossConfig(sigma, blanks))
    ref = brute_force_loss(z, labels, LossConfig(sigma, blanks))
    print(f"  loss {res.loss:.6f}  (sum over paths {ref:.6f})\n")

print("ln(27/5) =", np.log(27 / 5))
