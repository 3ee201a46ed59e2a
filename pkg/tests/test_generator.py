import numpy as np
import pytest
import torch

from attrflip.errors import ConfigError, ShapeError
from attrflip.generator import Generator, GeneratorConfig, skip_bottleneck_channels


# ---------------------------------------------------------------- channel rule


def test_half_rule_high_level():
    cfg = GeneratorConfig(resolution=128, depth=7, base_channels=64, level_boundary=3)
    assert skip_bottleneck_channels(512, 4, cfg) == 256


def test_quarter_rule_low_level():
    cfg = GeneratorConfig(resolution=128, depth=7, base_channels=64, level_boundary=3)
    assert skip_bottleneck_channels(64, 0, cfg) == 16


def test_minimum_one_channel():
    cfg = GeneratorConfig(resolution=32, depth=5, base_channels=16, level_boundary=3)
    assert skip_bottleneck_channels(2, 0, cfg) == 1


def test_monotone_gating():
    cfg = GeneratorConfig(resolution=32, depth=4, base_channels=8, level_boundary=2)
    for in_ch in (1, 2, 7, 16, 64, 513):
        high = skip_bottleneck_channels(in_ch, cfg.level_boundary, cfg)
        low = skip_bottleneck_channels(in_ch, cfg.level_boundary - 1, cfg)
        assert high >= low


def test_level_range_checked():
    cfg = GeneratorConfig(resolution=32, depth=4, base_channels=8)
    with pytest.raises(ConfigError):
        skip_bottleneck_channels(8, 4, cfg)


# ---------------------------------------------------------------- construction


def test_config_validation():
    with pytest.raises(ConfigError):
        GeneratorConfig(resolution=128, depth=8)  # 2^8 > 128
    with pytest.raises(ConfigError):
        GeneratorConfig(resolution=33, depth=2)
    with pytest.raises(ConfigError):
        GeneratorConfig(resolution=32, depth=3, high_level_ratio=0.0)
    with pytest.raises(ConfigError):
        GeneratorConfig(resolution=32, depth=3, level_boundary=4)


def test_default_level_boundary_is_half_depth():
    assert GeneratorConfig(resolution=32, depth=5).level_boundary == 2
    assert GeneratorConfig(resolution=64, depth=6).level_boundary == 3


def test_shape_preserved_desk_config():
    g = Generator(GeneratorConfig(resolution=32, depth=5, base_channels=16))
    x = torch.rand(2, 3, 32, 32) * 2 - 1
    assert g(x).shape == x.shape


def test_bottleneck_reaches_1x1_at_full_depth():
    g = Generator(GeneratorConfig(resolution=128, depth=7, base_channels=8, max_channels=64))
    h = torch.zeros(1, 3, 128, 128)
    for block in g.encoder:
        h = block(h)
    assert h.shape[-2:] == (1, 1)
    assert g(torch.rand(1, 3, 128, 128) * 2 - 1).shape == (1, 3, 128, 128)


@pytest.mark.parametrize("seed", range(8))
def test_randomized_config_invariants(seed):
    rng = np.random.default_rng(seed)
    resolution = int(rng.choice([8, 16, 32]))
    depth = int(rng.integers(1, int(np.log2(resolution)) + 1))
    cfg = GeneratorConfig(
        resolution=resolution,
        depth=depth,
        base_channels=int(rng.choice([2, 4, 8])),
        max_channels=int(rng.choice([16, 64, 512])),
        high_level_ratio=float(rng.uniform(0.3, 1.0)),
        low_level_ratio=float(rng.uniform(0.05, 0.5)),
        level_boundary=int(rng.integers(0, depth + 1)),
    )
    g = Generator(cfg)
    batch = int(rng.integers(1, 9))
    x = torch.rand(batch, 3, resolution, resolution) * 2 - 1
    out = g(x)
    assert out.shape == x.shape
    assert out.min() >= -1.0 and out.max() <= 1.0
    # built bottlenecks obey the channel rule
    enc = cfg.encoder_channels()
    for level, conv in enumerate(g.skips):
        assert conv.out_channels == skip_bottleneck_channels(enc[level], level, cfg)
        assert conv.kernel_size == (1, 1)


def test_output_within_tanh_range():
    g = Generator(GeneratorConfig(resolution=16, depth=3, base_channels=4))
    x = torch.rand(4, 3, 16, 16) * 2 - 1
    out = g(x)
    assert out.min() >= -1.0 and out.max() <= 1.0


# ---------------------------------------------------------------- forward


def test_forward_shape_mismatch():
    g = Generator(GeneratorConfig(resolution=16, depth=3, base_channels=4))
    with pytest.raises(ShapeError):
        g(torch.zeros(1, 3, 32, 32))
    with pytest.raises(ShapeError):
        g(torch.zeros(1, 1, 16, 16))


def test_forward_deterministic():
    g = Generator(GeneratorConfig(resolution=16, depth=3, base_channels=4)).eval()
    x = torch.rand(2, 3, 16, 16) * 2 - 1
    assert torch.equal(g(x), g(x))


def test_gradient_flow_to_every_parameter():
    g = Generator(GeneratorConfig(resolution=16, depth=4, base_channels=4))
    x = torch.rand(2, 3, 16, 16) * 2 - 1
    g(x).mean().backward()
    for name, p in g.named_parameters():
        assert p.grad is not None, name
        assert torch.isfinite(p.grad).all(), name


def test_finite_difference_spot_check():
    torch.manual_seed(123)
    g = Generator(GeneratorConfig(resolution=8, depth=2, base_channels=4)).double()
    x = (torch.rand(1, 3, 8, 8, dtype=torch.float64) * 2 - 1) * 0.8

    g.zero_grad()
    g(x).mean().backward()
    params = [p for p in g.parameters() if p.numel() >= 3]
    probes = [(params[0], 0), (params[1], 1), (params[-1], 0), (params[len(params) // 2], 2)]
    eps = 1e-5
    for tensor, idx in probes:
        analytic = tensor.grad.reshape(-1)[idx].item()
        flat = tensor.data.reshape(-1)
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + eps
            f_plus = g(x).mean().item()
            flat[idx] = orig - eps
            f_minus = g(x).mean().item()
            flat[idx] = orig
        fd = (f_plus - f_minus) / (2 * eps)
        assert abs(analytic - fd) <= 1e-3 * max(abs(fd), 1e-8), (analytic, fd)
        assert np.isfinite(analytic)


# ---------------------------------------------------------------- cycle


def test_cycle_shapes_and_shared_parameters():
    g = Generator(GeneratorConfig(resolution=16, depth=3, base_channels=4))
    x = torch.rand(2, 3, 16, 16) * 2 - 1
    x1, x0_rec = g.cycle(x)
    assert x1.shape == x.shape and x0_rec.shape == x.shape
    # single generator: both applications read the same parameter objects
    assert g.cycle.__self__ is g
    assert len({id(p) for p in g.parameters()}) == sum(1 for _ in g.parameters())


def test_cycle_on_identity_generator():
    class IdentityGenerator(Generator):
        def forward(self, x):
            self._check_input(x)
            return x

    g = IdentityGenerator(GeneratorConfig(resolution=16, depth=3, base_channels=4))
    x = torch.rand(2, 3, 16, 16) * 2 - 1
    x1, x0_rec = g.cycle(x)
    assert torch.equal(x1, x)
    assert torch.equal(x0_rec, x)
