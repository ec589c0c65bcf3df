import numpy as np
import pytest

from rawgat_st import ops
from rawgat_st.encoder import ResBlock, ResidualEncoder, encoder_output_width
from rawgat_st.tensor import Tensor


def test_time_chain():
    widths = [21490]
    for _ in range(6):
        widths.append(widths[-1] // 3)
    assert widths == [21490, 7163, 2387, 795, 265, 88, 29]
    assert encoder_output_width(21490) == 29


@pytest.mark.slow
def test_table_shapes_full_width():
    enc = ResidualEncoder(np.random.default_rng(0))
    rows = []
    x = Tensor(np.random.default_rng(1).standard_normal((1, 1, 23, 21490)).astype(np.float32))
    out = enc(x, trace=lambda n, s: rows.append((n, s)))
    assert rows == [("res_stack1", (32, 23, 2387)), ("res_stack2", (64, 23, 29))]
    assert out.shape == (1, 64, 23, 29)


def test_reduced_shapes():
    enc = ResidualEncoder(np.random.default_rng(0), dtype=np.float64)
    out = enc(Tensor(np.random.default_rng(1).standard_normal((2, 1, 5, 800))))
    assert out.shape == (2, 64, 5, encoder_output_width(800))


def test_rejects_3d():
    enc = ResidualEncoder(np.random.default_rng(0))
    with pytest.raises(ops.ShapeError):
        enc(Tensor(np.zeros((1, 23, 100))))


def test_zero_input_constant_over_interior_time():
    # zero padding of the (2,3) convolutions perturbs the first and last frame
    enc = ResidualEncoder(np.random.default_rng(0), dtype=np.float64)
    enc.eval()
    x = Tensor(np.zeros((1, 1, 4, 3 ** 6 * 8)))
    out = enc(x).data
    assert out.shape[-1] == 8
    np.testing.assert_allclose(out[..., 1:-1], out[..., 1:2] * np.ones(6), atol=1e-12)
    np.testing.assert_array_equal(out, enc(x).data)


def test_zero_convs_reduce_block_to_pooled_skip():
    rng = np.random.default_rng(2)
    blk = ResBlock(3, 5, rng, np.float64)
    for conv in (blk.conv1, blk.conv2):
        conv.weight.data[...] = 0
        conv.bias.data[...] = 0
    x = Tensor(rng.standard_normal((2, 3, 4, 9)))
    expect = ops.maxpool2d(blk.skip(x), (1, 3)).data
    np.testing.assert_allclose(blk(x).data, expect, atol=1e-12)


def test_identity_skip_when_channels_match():
    blk = ResBlock(4, 4, np.random.default_rng(0), np.float64)
    assert blk.skip is None


def test_gradient_reaches_first_conv():
    enc = ResidualEncoder(np.random.default_rng(0), dtype=np.float64)
    x = Tensor(np.random.default_rng(1).standard_normal((2, 1, 3, 3 ** 6)))
    enc(x).sum().backward()
    assert np.linalg.norm(enc.blocks[0].conv1.weight.grad) > 0
