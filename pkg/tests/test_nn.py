import numpy as np
import pytest

from src.errors import ShapeError
from src.gradcheck import check_gradients
from src.nn import (
    Activation,
    ConvBlock,
    Dense,
    PlainBlock,
    ResidualBlock,
    make_stage,
    residual_forward,
    stage_parameter_count,
)
from src.tensor import Tensor, relu


def _zero_path(channels, rng):
    path = [
        ConvBlock(channels, channels, 3, 1, 1, Activation.RELU, rng),
        ConvBlock(channels, channels, 3, 1, 1, Activation.NONE, rng),
    ]
    for conv in path:
        conv.kernel.data[...] = 0.0
        conv.bias.data[...] = 0.0
    return path


def test_zero_residual_path_is_identity(rng):
    block = ResidualBlock(_zero_path(4, rng), activation=Activation.NONE)
    assert block.is_identity
    for _ in range(100):
        x = Tensor(rng.normal(size=(2, 4, 6, 6)))
        assert np.array_equal(residual_forward(block, x).data, x.data)


def test_zero_residual_path_with_relu_is_relu(rng):
    block = ResidualBlock(_zero_path(4, rng), activation=Activation.RELU)
    x = Tensor(rng.normal(size=(1, 4, 5, 5)))
    assert np.array_equal(block(x).data, relu(x).data)


def test_residual_forward_equals_path_plus_input(rng):
    block = ResidualBlock.basic(4, 4, 1, rng)
    x = Tensor(rng.normal(size=(1, 4, 8, 8)))
    residual = block.f_path[1](block.f_path[0](x))
    expected = np.maximum(residual.data + x.data, 0.0)
    assert np.max(np.abs(block(x).data - expected)) <= 1e-12


def test_projection_shortcut_when_shape_changes(rng):
    block = ResidualBlock.basic(4, 8, 2, rng)
    assert not block.is_identity
    assert block.shortcut.kernel_size == 1
    assert block.shortcut.stride == 2
    out = block(Tensor(rng.normal(size=(2, 4, 8, 8))))
    assert out.shape == (2, 8, 4, 4)


def test_residual_block_validates_shortcut(rng):
    same = [ConvBlock(4, 4, 3, 1, 1, rng=rng)]
    changing = [ConvBlock(4, 8, 3, 2, 1, rng=rng)]
    with pytest.raises(ValueError):
        ResidualBlock(same, shortcut=ConvBlock(4, 4, 1, 1, 0, rng=rng))
    with pytest.raises(ValueError):
        ResidualBlock(changing)
    with pytest.raises(ValueError):
        ResidualBlock(changing, shortcut=ConvBlock(4, 8, 3, 2, 1, rng=rng))
    with pytest.raises(ValueError):
        ResidualBlock([])


def test_residual_forward_rejects_wrong_channels(rng):
    block = ResidualBlock.basic(4, 4, 1, rng)
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((1, 3, 8, 8))))


def test_residual_block_gradients(rng):
    block = ResidualBlock.basic(3, 4, 2, rng)
    x = Tensor(rng.normal(size=(1, 3, 6, 6)), requires_grad=True)
    weights = Tensor(rng.normal(size=(1, 4, 3, 3)))
    named = [("x", x)] + list(block.named_parameters())
    result = check_gradients(lambda: (block(x) * weights).sum(), named, max_entries=8)
    assert result.passed, result.errors


def test_make_stage_single_block_is_identity_shortcut(rng):
    stage = make_stage(1, 8, 8, 1, rng)
    assert len(stage) == 1
    assert stage[0].is_identity


def test_make_stage_first_block_carries_stride_and_channels(rng):
    stage = make_stage(2, 8, 16, 2, rng)
    assert not stage[0].is_identity
    assert stage[0].f_path[0].stride == 2
    assert stage[0].shortcut.stride == 2
    assert stage[1].is_identity
    assert all(conv.stride == 1 for conv in stage[1].f_path)


def test_stage_halves_spatial_size_once(rng):
    x = Tensor(rng.normal(size=(1, 8, 16, 16)))
    for block in make_stage(3, 8, 8, 2, rng):
        x = block(x)
    assert x.shape == (1, 8, 8, 8)


@pytest.mark.parametrize("size", [5, 8, 9, 16, 33])
@pytest.mark.parametrize("kernel_size,stride,padding", [(3, 1, 1), (3, 2, 1), (1, 2, 0), (3, 1, 0)])
def test_conv_block_output_size_formula(rng, size, kernel_size, stride, padding):
    conv = ConvBlock(2, 3, kernel_size, stride, padding, rng=rng)
    out = conv(Tensor(rng.normal(size=(1, 2, size, size))))
    expected = (size + 2 * padding - kernel_size) // stride + 1
    assert conv.output_size(size) == expected
    assert out.shape == (1, 3, expected, expected)


@pytest.mark.parametrize(
    "num_blocks,in_channels,out_channels,stride,block",
    [(1, 8, 8, 1, "residual"), (2, 8, 16, 2, "residual"), (3, 16, 16, 2, "residual"), (2, 8, 16, 2, "plain")],
)
def test_stage_parameter_count_closed_form(rng, num_blocks, in_channels, out_channels, stride, block):
    stage = make_stage(num_blocks, in_channels, out_channels, stride, rng, block)
    counted = sum(b.num_parameters() for b in stage)
    assert counted == stage_parameter_count(num_blocks, in_channels, out_channels, 3, stride, block)


def test_make_stage_rejects_bad_arguments(rng):
    with pytest.raises(ValueError):
        make_stage(0, 8, 8, 1, rng)
    with pytest.raises(ValueError):
        make_stage(1, 8, 8, 1, rng, block="bottleneck")


def test_plain_block_has_no_shortcut(rng):
    block = PlainBlock(4, 8, 2, rng)
    names = [name for name, _ in block.named_parameters()]
    assert names == ["f_path.0.kernel", "f_path.0.bias", "f_path.1.kernel", "f_path.1.bias"]
    assert block(Tensor(rng.normal(size=(1, 4, 8, 8)))).shape == (1, 8, 4, 4)


def test_dense_layer(rng):
    dense = Dense(5, 3, rng)
    x = Tensor(rng.normal(size=(2, 5)))
    out = dense(x)
    assert np.allclose(out.data, x.data @ dense.weight.data + dense.bias.data)
    assert dense.num_parameters() == 5 * 3 + 3


def test_named_parameters_order_and_zero_grad(rng):
    block = ResidualBlock.basic(4, 8, 2, rng)
    names = [name for name, _ in block.named_parameters()]
    assert names == [
        "f_path.0.kernel",
        "f_path.0.bias",
        "f_path.1.kernel",
        "f_path.1.bias",
        "shortcut.kernel",
        "shortcut.bias",
    ]
    block(Tensor(rng.normal(size=(1, 4, 8, 8)))).sum().backward()
    assert all(p.grad is not None for p in block.parameters())
    block.zero_grad()
    assert all(p.grad is None for p in block.parameters())


def test_same_seed_gives_same_initialization():
    a = ConvBlock(3, 4, 3, rng=np.random.default_rng(5))
    b = ConvBlock(3, 4, 3, rng=np.random.default_rng(5))
    assert np.array_equal(a.kernel.data, b.kernel.data)
    bound = np.sqrt(1.0 / (3 * 3 * 3))
    assert np.all(np.abs(a.kernel.data) <= bound)
