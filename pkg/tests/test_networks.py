import pytest
import torch
import torch.nn as nn

from pyhiclust.models.ConfigModels import ContrastHeadSpec, EncoderSpec
from pyhiclust.networks import (
    ContrastHead,
    HierarchyNet,
    RouterHead,
    build_encoder,
    encode,
    infer_routing,
)
from pyhiclust.utils.exceptions import ConfigError, InvalidArgumentError, NumericError


def test_mlp_encoder_shape():
    spec = EncoderSpec(architecture="mlp-small", embed_dim=32, input_shape=(16,))
    encoder = build_encoder(spec)
    z = encode(encoder, torch.randn(4, 16), spec.input_shape)
    assert z.shape == (4, 32)
    assert torch.isfinite(z).all()


def test_encode_checks_input_shape():
    spec = EncoderSpec(architecture="mlp-small", embed_dim=8, input_shape=(16,))
    with pytest.raises(InvalidArgumentError):
        encode(build_encoder(spec), torch.randn(4, 15), spec.input_shape)


def test_encode_rejects_non_finite_output():
    spec = EncoderSpec(architecture="mlp-small", embed_dim=8, input_shape=(4,))
    with pytest.raises(NumericError):
        encode(build_encoder(spec), torch.full((2, 4), float("inf")), spec.input_shape)


def test_identical_inputs_identical_embeddings(mlp_net):
    mlp_net.eval()
    x = torch.randn(1, 6).repeat(3, 1)
    z = mlp_net.encode(x)
    assert torch.equal(z[0], z[1]) and torch.equal(z[1], z[2])


def test_routing_follows_batch_order(mlp_net):
    mlp_net.eval()
    x = torch.randn(9, 6, generator=torch.Generator().manual_seed(4))
    order = torch.randperm(9, generator=torch.Generator().manual_seed(5))
    with torch.no_grad():
        routing = mlp_net.route(mlp_net.encode(x))
        permuted = mlp_net.route(mlp_net.encode(x[order]))
    torch.testing.assert_close(permuted, routing[order])


def test_zero_weight_encoder_gives_bias_rows():
    spec = EncoderSpec(architecture="mlp-small", embed_dim=4, hidden_width=8, input_shape=(5,))
    encoder = build_encoder(spec)
    for module in encoder.modules():
        if isinstance(module, nn.Linear):
            nn.init.zeros_(module.weight)
    z = encode(encoder, torch.randn(3, 5), spec.input_shape)
    final_bias = encoder.net[-1].bias
    torch.testing.assert_close(z, final_bias.expand(3, -1))


def test_cnn_encoder_on_grayscale():
    spec = EncoderSpec(architecture="cnn-small", embed_dim=16, input_shape=(1, 28, 28))
    z = build_encoder(spec)(torch.randn(2, 1, 28, 28))
    assert z.shape == (2, 16)


def test_resnet_stem_adapts_to_channels():
    spec = EncoderSpec(architecture="resnet18", embed_dim=512, input_shape=(1, 16, 16))
    encoder = build_encoder(spec)
    assert encoder.conv1.in_channels == 1
    assert isinstance(encoder.fc, nn.Identity)
    encoder.eval()
    assert encoder(torch.randn(2, 1, 16, 16)).shape == (2, 512)


def test_image_architecture_needs_image_shape():
    with pytest.raises(ValueError):
        EncoderSpec(architecture="cnn-small", input_shape=(16,))


# --------------------------------------------------
# Router
# --------------------------------------------------


def test_router_zero_parameters_give_half():
    router = RouterHead(embed_dim=4, depth=2)
    nn.init.zeros_(router.output.weight)
    nn.init.zeros_(router.output.bias)
    probs = router(torch.randn(5, 4))
    assert probs.shape == (5, 3)
    assert torch.all(probs == 0.5)


def test_router_bias_saturates_root():
    router = RouterHead(embed_dim=4, depth=2)
    nn.init.zeros_(router.output.weight)
    with torch.no_grad():
        router.output.bias[0] = 20.0
    assert router(torch.zeros(1, 4))[0, 0] > 0.999


def test_router_logits_are_clamped():
    router = RouterHead(embed_dim=2, depth=1, logit_clamp=15.0)
    nn.init.zeros_(router.output.weight)
    with torch.no_grad():
        router.output.bias[0] = 100.0
    assert router.logits(torch.zeros(1, 2)).item() == 15.0
    assert router(torch.zeros(1, 2)).item() < 1.0


def test_router_two_layer_mode():
    router = RouterHead(embed_dim=6, depth=3, mode="two-layer")
    assert router(torch.randn(2, 6)).shape == (2, 7)


def test_router_unknown_mode():
    with pytest.raises(ConfigError):
        RouterHead(embed_dim=4, depth=2, mode="deep")


def test_route_checks_embedding_width(mlp_net):
    with pytest.raises(InvalidArgumentError):
        mlp_net.route(torch.randn(2, 5))


# --------------------------------------------------
# Contrast head
# --------------------------------------------------


def test_identity_head_is_exact():
    head = ContrastHead(8, ContrastHeadSpec(mode="identity"))
    z = torch.randn(3, 8)
    assert torch.equal(head(z), z)


def test_two_layer_head_shape():
    head = ContrastHead(8, ContrastHeadSpec(mode="two-layer", output_dim=5))
    out = head(torch.randn(4, 8))
    assert out.shape == (4, 5)
    assert torch.isfinite(out).all()


def test_identity_head_dimension_mismatch():
    with pytest.raises(ConfigError):
        ContrastHead(8, ContrastHeadSpec(mode="identity", output_dim=4))


# --------------------------------------------------
# Whole network
# --------------------------------------------------


def test_build_is_seeded():
    spec = EncoderSpec(architecture="mlp-small", embed_dim=8, input_shape=(6,))
    a = HierarchyNet.build(spec, depth=2, seed=5)
    b = HierarchyNet.build(spec, depth=2, seed=5)
    for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(pa, pb)


def test_forward_shapes(mlp_net):
    routing, embed = mlp_net(torch.randn(4, 6))
    assert routing.shape == (4, 3)
    assert embed.shape == (4, 8)
    assert ((routing > 0) & (routing < 1)).all()


def test_pretrain_parameters_exclude_router(mlp_net):
    pretrain = {id(p) for p in mlp_net.pretrain_parameters()}
    assert not any(id(p) in pretrain for p in mlp_net.router.parameters())


def test_infer_routing_restores_mode(mlp_net):
    mlp_net.train()
    routing = infer_routing(mlp_net, torch.randn(10, 6), batch_size=3)
    assert routing.shape == (10, 3)
    assert routing.dtype == torch.float64
    assert mlp_net.training
