import numpy as np
import pytest

from luq.container import IMAGE_TOKEN, stack_to_container, write_container
from luq.entropy import layer_entropy_profile
from luq.net import LINEARS, capture_activations
from luq.synth import gaussian_inputs, multimodal_pool, synth_stack, text_pool


def test_shape_contract():
    st = synth_stack(8, 32, [32] * 8, seed=7)
    shapes = st.config.weight_shapes()
    assert st.num_layers == 8
    for layer in st.layers:
        assert sorted(layer) == sorted(LINEARS)
        assert all(layer[n].shape == shapes[n] for n in LINEARS)


def test_pure_function_of_arguments():
    a = write_container(stack_to_container(synth_stack(4, 16, [2, 4, 8, 16], seed=1)))
    b = write_container(stack_to_container(synth_stack(4, 16, [2, 4, 8, 16], seed=1)))
    c = write_container(stack_to_container(synth_stack(4, 16, [2, 4, 8, 16], seed=2)))
    assert a == b and a != c


@pytest.mark.parametrize("profile", [[0, 4], [4, 17], [4]])
def test_bad_profiles(profile):
    with pytest.raises(ValueError):
        synth_stack(2, 16, profile, seed=0)


def test_matrix_rank_follows_profile():
    st = synth_stack(2, 32, [3, 32], seed=0)
    assert np.linalg.matrix_rank(st.layers[0]["w1"].astype(np.float64), tol=1e-4) == 3
    assert np.linalg.matrix_rank(st.layers[1]["w1"].astype(np.float64), tol=1e-4) == 32


def test_planted_complexity_ranks_low_layers_first():
    st = synth_stack(8, 32, [2, 2, 2, 2, 32, 32, 32, 32], seed=0)
    acts = capture_activations(st, gaussian_inputs(64, 16, 32, seed=0))
    prof = layer_entropy_profile(acts, 100, seed=0)
    assert set(prof.pi[:4]) == {1, 2, 3, 4}
    assert max(prof.H[:4]) < min(prof.H[4:])


def test_pools(small_stack):
    ids = text_pool(small_stack, 5, 10, seed=0)
    assert ids.shape == (5, 10) and ids.dtype == np.uint32 and ids.max() < 16
    emb, mm_ids = multimodal_pool(small_stack, 5, 10, seed=0, prefix=4)
    assert np.all(mm_ids[:, :4] == IMAGE_TOKEN) and np.all(mm_ids[:, 4:] < 16)
    assert np.all(emb[:, 4:] == 0) and np.any(emb[:, :4] != 0)
