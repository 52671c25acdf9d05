import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fuelmix.hierarchy import FuelHierarchy, Tier

H = FuelHierarchy.default()


class TestStructure:
    def test_nodes(self):
        assert H.nu_nodes == ["solid", "kerosene", "gas", "electricity",
                              "biomass", "charcoal", "wood", "cropwaste"]
        assert H.S == 8 and H.kmax == 5
        assert sorted(H.leaves) == sorted(["kerosene", "gas", "electricity", "others",
                                           "charcoal", "coal", "wood", "cropwaste", "dung"])
        assert H.parent_of("wood") == "biomass" and H.parent_of("coal") == "solid"
        assert H.parent_of("gas") is None

    def test_bad_trees(self):
        with pytest.raises(ValueError):
            FuelHierarchy([Tier("mid", "solid", ("a", "b"))])
        with pytest.raises(ValueError):
            FuelHierarchy([Tier("top", None, ("a", "b")), Tier("x", "c", ("d", "e"))])
        with pytest.raises(ValueError):
            FuelHierarchy([Tier("top", None, ("a", "b")), Tier("x", "a", ("b", "e"))])
        with pytest.raises(ValueError):
            Tier("t", None, ("only",))

    def test_round_trip_list(self):
        assert FuelHierarchy(H.to_list()).nodes == H.nodes


nu_vectors = arrays(float, 8, elements=st.floats(1e-6, 1 - 1e-6))


class TestMeans:
    def test_known_values(self):
        mu = H.absolute_means(np.full(8, 0.5))
        assert mu[H.node_index["solid"]] == 0.5
        assert mu[H.node_index["others"]] == 0.0625
        assert mu[H.node_index["biomass"]] == 0.25
        assert mu[H.node_index["dung"]] == 0.0625

    @given(nu_vectors)
    def test_tier_sums(self, nu):
        mu = H.absolute_means(nu)
        leaves = [H.node_index[n] for n in H.leaves]
        assert abs(mu[leaves].sum() - 1.0) < 1e-10
        for tier in H.tiers:
            kids = mu[[H.node_index[c] for c in tier.children]].sum()
            parent = 1.0 if tier.parent is None else mu[H.node_index[tier.parent]]
            assert abs(kids - parent) < 1e-10

    @given(nu_vectors)
    def test_inverse(self, nu):
        np.testing.assert_allclose(H.relative_from_absolute(H.absolute_means(nu)), nu,
                                   rtol=1e-6, atol=1e-9)
