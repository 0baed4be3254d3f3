"""Small builders shared by the test modules."""

import numpy as np

from coevalign import msa
from coevalign.lattice import vertex_valid_mask


def random_features(rng, m, n, F):
    """Uniform features on reachable vertices, zero elsewhere."""
    feats = rng.uniform(-1, 1, (3, m + 1, n + 1, F))
    feats[~np.moveaxis(vertex_valid_mask(m, n), 2, 0)] = 0.0
    return feats


def fasta(rows):
    return "".join(f">s{i}\n{r}\n" for i, r in enumerate(rows))


def make_msa(rows):
    return msa.parse_msa(fasta(rows))


def random_marginals(rng, L, conc=0.3):
    return rng.dirichlet(np.full(msa.N_SYMBOLS, conc), size=L)
