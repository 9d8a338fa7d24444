import math

import numpy as np
import pytest
import torch

from pipeinv.encoders import (
    ConvLayerSpec,
    EncoderSpec,
    ProjectionHeadSpec,
    ViewModel,
    activation_shapes,
    alexnet3d_spec,
    build_encoder,
    dcgan_spec,
    extract_activations,
    forward,
    load_model,
    parameter_count,
    parameter_hash,
    propagate_shapes,
    save_model,
)
from pipeinv.errors import InvalidInputError, SpecError
from pipeinv.evaluation import unflatten_activations


def test_dcgan_shapes():
    shapes = propagate_shapes(dcgan_spec())
    assert [s[0] for s in shapes] == [32, 64, 128, 64]
    assert [s[1:] for s in shapes] == [(16, 16), (8, 8), (4, 4), (1, 1)]
    assert build_encoder(dcgan_spec()).representation_dim == 64


def test_alexnet3d_shapes():
    shapes = propagate_shapes(alexnet3d_spec())
    assert [s[0] for s in shapes] == [64, 128, 192, 192, 64]
    assert [s[1:] for s in shapes] == [(62,) * 3, (18,) * 3, (6,) * 3, (6,) * 3, (6,) * 3]
    assert activation_shapes(alexnet3d_spec())["conv1"] == (64, 62, 62, 62)
    assert math.prod(activation_shapes(alexnet3d_spec())["conv1"]) == 64 * 62**3


def test_alexnet3d_forward_matches_declared_dims():
    model = ViewModel(alexnet3d_spec(), 10)
    model.eval()
    x = torch.rand(1, 1, 91, 109, 91)
    out = forward(model, x, capture=["conv1", "conv5"])
    assert out.z.shape == (1, 64)
    assert tuple(out.activations["conv1"].shape) == (1, 64, 62, 62, 62)
    assert tuple(out.activations["conv5"].shape) == (1, 64, 6, 6, 6)


def test_shape_mismatch_names_layer():
    spec = dcgan_spec()
    layers = list(spec.layers)
    layers[2] = ConvLayerSpec(128, 4, 2, 1, output_dims=(5, 5))
    bad = EncoderSpec("bad", spec.input_shape, tuple(layers))
    with pytest.raises(SpecError) as err:
        propagate_shapes(bad)
    assert err.value.layer_index == 2


def test_empty_output_is_rejected():
    bad = EncoderSpec("bad", (1, 4, 4), (ConvLayerSpec(8, 5),))
    with pytest.raises(SpecError) as err:
        propagate_shapes(bad)
    assert err.value.layer_index == 0


def test_identity_kernel_layer():
    spec = EncoderSpec("id", (1, 5, 5), (ConvLayerSpec(1, 1, normalization=None),))
    enc = build_encoder(spec)
    with torch.no_grad():
        enc.blocks[0][0].weight.fill_(1.0)
    x = torch.randn(3, 1, 5, 5)
    z, _ = enc(x)
    torch.testing.assert_close(z, torch.relu(x).flatten(1))


def test_forward_shapes_and_determinism():
    model = ViewModel(dcgan_spec(), 10, seed=3)
    model.eval()
    batch = np.random.default_rng(0).uniform(size=(4, 32, 32, 1)).astype(np.float32)
    a = forward(model, batch, capture=True)
    b = forward(model, batch, capture=True)
    assert a.z.shape == (4, 64) and a.logits.shape == (4, 10)
    assert torch.equal(a.z, b.z) and torch.equal(a.logits, b.logits)
    assert set(a.activations) == {"conv1", "conv2", "conv3", "conv4"}


def test_forward_rejects_wrong_shape():
    model = ViewModel(dcgan_spec(), 10)
    with pytest.raises(InvalidInputError):
        forward(model, np.zeros((2, 28, 28, 1), np.float32))


def test_zero_weights_give_zero_representation():
    model = ViewModel(dcgan_spec(), 10)
    with torch.no_grad():
        for p in model.encoder.parameters():
            p.zero_()
    model.eval()
    out = forward(model, torch.rand(2, 1, 32, 32))
    assert torch.count_nonzero(out.z) == 0


def test_seeded_init_is_reproducible():
    a, b, c = ViewModel(dcgan_spec(), 10, seed=7), ViewModel(dcgan_spec(), 10, seed=7), ViewModel(dcgan_spec(), 10, seed=8)
    assert parameter_hash(a) == parameter_hash(b)
    assert parameter_hash(a) != parameter_hash(c)


def test_init_statistics():
    enc = build_encoder(dcgan_spec(), seed=0)
    w = enc.blocks[2][0].weight.detach().numpy()
    assert abs(w.mean()) < 2e-3
    assert abs(w.std() - 0.02) < 2e-3


@pytest.mark.parametrize("kind,extra", [("identity", 0), ("linear", 64 * 64 + 64), ("mlp_1", 2 * (64 * 64 + 64)), ("mlp_3", 4 * (64 * 64 + 64))])
def test_projection_heads(kind, extra):
    base = parameter_count(ViewModel(dcgan_spec(), 10))
    model = ViewModel(dcgan_spec(), 10, ProjectionHeadSpec(kind))
    assert parameter_count(model) - base == extra
    h = model.project(torch.randn(5, 64))
    assert h.shape == (5, 64)


def test_extract_activations_canonical_order():
    model = ViewModel(dcgan_spec(), 10, seed=1)
    rng = np.random.default_rng(0)
    images = rng.uniform(size=(20, 32, 32, 1)).astype(np.float32)
    ids = rng.permutation(100)[:20]
    acts = extract_activations(model, images, ids, ["conv3", "conv4"])
    assert acts[0].values.shape == (20, 128 * 4 * 4)
    assert acts[1].values.shape == (20, 64)
    np.testing.assert_array_equal(acts[0].sample_ids, np.sort(ids))
    # row r is the sample with the r-th smallest id
    order = np.argsort(ids)
    single = extract_activations(model, images[order[:1]], ids[order[:1]], ["conv3"])[0]
    np.testing.assert_allclose(single.values[0], acts[0].values[0], rtol=1e-5, atol=1e-6)
    other = ViewModel(dcgan_spec(), 10, seed=2)
    acts_other = extract_activations(other, images, ids, ["conv3"])
    np.testing.assert_array_equal(acts_other[0].sample_ids, acts[0].sample_ids)


def test_flatten_round_trip():
    model = ViewModel(dcgan_spec(), 10)
    images = np.random.default_rng(1).uniform(size=(6, 32, 32, 1)).astype(np.float32)
    act = extract_activations(model, images, np.arange(6), ["conv2"])[0]
    block = forward(model.eval(), images, capture=["conv2"]).activations["conv2"].numpy()
    np.testing.assert_array_equal(act.unflatten(), block)
    np.testing.assert_array_equal(unflatten_activations(act.values, act.block_shape), block)


def test_unknown_layer():
    model = ViewModel(dcgan_spec(), 10)
    with pytest.raises(InvalidInputError):
        extract_activations(model, np.zeros((2, 32, 32, 1), np.float32), [0, 1], ["conv9"])


def test_checkpoint_round_trip(tmp_path):
    model = ViewModel(dcgan_spec(3), 10, ProjectionHeadSpec("mlp_2"), seed=4, metadata={"config_hash": "abc"})
    path = save_model(model, tmp_path / "m.pt")
    loaded = load_model(path)
    assert parameter_hash(loaded) == parameter_hash(model)
    assert loaded.metadata["config_hash"] == "abc"
    assert loaded.spec == model.spec
