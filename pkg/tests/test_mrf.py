import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coevalign import msa, mrf, synthetic
from coevalign.mrf import DEFAULT_BINS, EdgeBudget, Mrf, MrfEdge, MrfFormatError, TwoBin

from helpers import make_msa, random_marginals


def family(seed=0, L=20, n=80):
    rng = np.random.default_rng(seed)
    contacts = synthetic.random_contacts(L, 4, rng, max_degree=1)
    Om, _ = synthetic.latent_precision(L, contacts, rng, strength=0.9)
    return synthetic.sample_family(Om, L, n, rng)


def coupling_text(L, pairs):
    return "".join(f"{i} {k} {v}\n" for (i, k), v in pairs.items())


def test_zero_coupling_map_gives_no_edges():
    a = family()
    m = mrf.build_mrf(a, np.ones(a.n_rows), "file", EdgeBudget(threshold=0.1),
                      coupling_text=coupling_text(a.L, {}))
    assert m.edges == ()


def test_first_node_context_is_zero_padded():
    a = family()
    m = mrf.build_mrf(a, np.ones(a.n_rows))
    ctx = m.nodes[0].context
    assert ctx.shape == (21, 11)
    assert not ctx[:, :5].any()
    np.testing.assert_allclose(ctx[:, 5:].sum(axis=0), 1.0, atol=1e-9)
    last = m.nodes[-1].context
    assert not last[:, 6:].any()


def test_node_marginals_equal_profile():
    a = family(1)
    w = msa.sequence_weights(a)
    m = mrf.build_mrf(a, w)
    assert np.array_equal(m.marginals, msa.build_profile(a, w).p)


def test_top_k_budget_bounds_edge_count():
    a = family(2)
    m = mrf.build_mrf(a, np.ones(a.n_rows), "mi", EdgeBudget(top_k=1))
    assert len(m.edges) <= a.L
    assert all(e.k - e.i >= 6 for e in m.edges)


def test_build_is_deterministic():
    a = family(3)
    w = msa.sequence_weights(a)
    for source in ("mi", "mi_power_sum"):
        assert mrf.build_mrf(a, w, source) == mrf.build_mrf(a, w, source)


def test_file_coupling_source():
    a = family(4)
    text = coupling_text(a.L, {(1, 15): 0.7, (2, 4): 0.9, (3, 12): 0.2})
    m = mrf.build_mrf(a, np.ones(a.n_rows), "file", EdgeBudget(threshold=0.5), coupling_text=text)
    assert [(e.i, e.k) for e in m.edges] == [(0, 14)]  # (2, 4) is too close
    with pytest.raises(msa.MsaFormatError):
        mrf.build_mrf(a, np.ones(a.n_rows), "file", coupling_text="1 2\n")


def test_mi_power_sum_is_normalized():
    a = family(5)
    mi = msa.mutual_information(a, np.ones(a.n_rows))
    s = mrf.mi_power_sum(mi)
    off = s[~np.eye(a.L, dtype=bool)]
    # every power is scaled to a unit maximum, so eleven terms stay below 11
    assert 1.0 <= off.max() <= 11.0 + 1e-12


def test_edge_validation():
    marg = random_marginals(np.random.default_rng(0), 10)
    with pytest.raises(ValueError):
        Mrf(marg, [MrfEdge(0, 3, 1.0)])  # min_sep
    with pytest.raises(ValueError):
        Mrf(marg, [MrfEdge(0, 7, 1.0), MrfEdge(0, 7, 2.0)])
    with pytest.raises(ValueError):
        MrfEdge(0, 7, -1.0)
    with pytest.raises(ValueError):
        MrfEdge(0, 7, 1.0, (0.5, 0.6))


# --- distance distributions ---------------------------------------------------------------


def test_two_bin_fallback_examples():
    marg = random_marginals(np.random.default_rng(1), 20)
    base = Mrf(marg, [MrfEdge(0, 8, 0.0), MrfEdge(1, 12, 0.5), MrfEdge(2, 19, 2.0)])
    out = mrf.attach_distance_distributions(base, TwoBin(a=4.0, b=0.0))
    assert out.bins == mrf.TWO_BINS
    assert out.edges[0].dist == pytest.approx((0.5, 0.5))
    pc = [e.dist[0] for e in out.edges]
    assert pc == sorted(pc) and pc[0] < pc[-1]
    for e in out.edges:
        assert sum(e.dist) == pytest.approx(1.0, abs=1e-12)


def test_distance_file_point_mass():
    marg = random_marginals(np.random.default_rng(2), 20)
    base = Mrf(marg, [MrfEdge(0, 8, 0.3)])
    row = ["0"] * 13
    row[2] = "1"
    text = "#bins " + " ".join(DEFAULT_BINS) + "\n1 9 " + " ".join(row) + "\n"
    out = mrf.attach_distance_distributions(base, text)
    assert out.edges[0].dist == tuple(np.eye(13)[2])
    assert out.bins == DEFAULT_BINS


@pytest.mark.parametrize("text, match", [
    ("#bins a b\n1 9 0.5 0.6\n", "sum to 1"),
    ("1 9 0.5 0.5\n", "header"),
    ("#bins a b\n1 9 0.5\n", "fields"),
    ("#bins a b\n2 9 0.5 0.5\n", "no distance"),
])
def test_distance_file_errors(text, match):
    base = Mrf(random_marginals(np.random.default_rng(3), 20), [MrfEdge(0, 8, 0.3)])
    with pytest.raises(MrfFormatError, match=match):
        mrf.attach_distance_distributions(base, text)


def test_distance_file_tolerates_small_rounding():
    bins, rows = mrf.parse_distance_file("#bins a b\n1 9 0.5 0.5000005\n")
    assert sum(rows[(0, 8)]) == pytest.approx(1.0, abs=1e-12)


# --- binary format ----------------------------------------------------------------------------


def sample_mrf(seed=0, with_dist=True):
    rng = np.random.default_rng(seed)
    m = Mrf(random_marginals(rng, 25), [MrfEdge(0, 9, 0.4), MrfEdge(3, 20, 1.1)], provenance="mi",
            name="fam", meta={"k": "v"})
    return mrf.attach_distance_distributions(m, TwoBin()) if with_dist else m


@pytest.mark.parametrize("with_dist", [True, False])
def test_round_trip(with_dist):
    m = sample_mrf(with_dist=with_dist)
    assert mrf.load_mrf(mrf.serialize_mrf(m)) == m


def test_round_trip_through_files(tmp_path):
    m = sample_mrf()
    mrf.write_mrf(m, tmp_path / "x.mrf")
    assert mrf.read_mrf(tmp_path / "x.mrf") == m


def test_truncated_and_corrupted_streams_rejected():
    data = mrf.serialize_mrf(sample_mrf())
    for cut in (5, 20, len(data) // 2, len(data) - 1):
        with pytest.raises(MrfFormatError):
            mrf.load_mrf(data[:cut])
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    with pytest.raises(MrfFormatError, match="checksum"):
        mrf.load_mrf(bytes(flipped))
    with pytest.raises(MrfFormatError):
        mrf.load_mrf(b"not an mrf file at all")


def test_newer_major_version_refused():
    data = bytearray(mrf.serialize_mrf(sample_mrf()))
    n = len(mrf._MAGIC)
    data[n:n + 2] = struct.pack("<H", mrf.FORMAT_VERSION[0] + 1)
    body = bytes(data[:-4])
    data[-4:] = struct.pack("<I", zlib.crc32(body))
    with pytest.raises(MrfFormatError, match="newer"):
        mrf.load_mrf(bytes(data))


@given(st.integers(12, 40), st.integers(0, 10**6), st.integers(1, 5))
def test_selected_edges_respect_min_sep(L, seed, k):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0, 1, (L, L))
    s = s + s.T
    edges = mrf.select_edges(s, EdgeBudget(top_k=k), 6)
    assert all(e.k - e.i >= 6 for e in edges)
    assert len({(e.i, e.k) for e in edges}) == len(edges)


def test_fasta_family_builds(tmp_path):
    a = make_msa(["ACDEFGHIKLMN", "ACDEFGHIKLMQ", "ACEEFGHIKLMN"])
    m = mrf.build_mrf(msa.clean(a), np.ones(3))
    assert m.L == 12
