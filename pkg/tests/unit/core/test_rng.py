"""Tests for named random streams (fedspace/core/rng.py)."""

import numpy as np
import pytest
import torch

from fedspace.core.rng import derive_rng, derive_torch_generator, seed_sequence


class TestDeriveRng:
    """Test numpy stream derivation."""

    def test_same_key_same_stream(self):
        """Test identical keys reproduce the sequence."""
        a = derive_rng(7, "client", 3, 1).random(5)
        b = derive_rng(7, "client", 3, 1).random(5)

        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize(
        "other",
        [(8, "client", 3, 1), (7, "client", 4, 1), (7, "client", 3, 2), (7, "select", 3, 1)],
    )
    def test_different_keys_differ(self, other):
        """Test changing any key component changes the stream."""
        assert not np.array_equal(derive_rng(7, "client", 3, 1).random(5), derive_rng(*other).random(5))

    def test_string_keys_are_stable(self):
        """Test string keys hash to a fixed spawn key."""
        assert seed_sequence(0, "blobs").spawn_key == seed_sequence(0, "blobs").spawn_key

    def test_negative_key_rejected(self):
        """Test negative integer keys raise ValueError."""
        with pytest.raises(ValueError):
            derive_rng(0, -1)

    def test_bool_key_rejected(self):
        """Test bool keys raise TypeError."""
        with pytest.raises(TypeError):
            derive_rng(0, True)


class TestTorchGenerators:
    """Test torch generator derivation."""

    def test_same_key_same_draws(self):
        """Test identical keys give identical torch draws."""
        a = torch.randn(4, generator=derive_torch_generator(1, "x"))
        b = torch.randn(4, generator=derive_torch_generator(1, "x"))

        assert torch.equal(a, b)

    def test_streams_independent_of_global_state(self):
        """Test torch.manual_seed does not affect derived generators."""
        torch.manual_seed(0)
        a = torch.rand(3, generator=derive_torch_generator(2, "y"))
        torch.manual_seed(99)
        b = torch.rand(3, generator=derive_torch_generator(2, "y"))

        assert torch.equal(a, b)
