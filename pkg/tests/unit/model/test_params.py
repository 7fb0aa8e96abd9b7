import numpy as np
import pytest
from pydantic import ValidationError

from est_engine.autodiff import get_dtype, set_precision
from est_engine.model import ARCHITECTURES, ModelConfig, ModelParams, init_params
from est_engine.sampler import STREAM_INIT, SamplerSeed


def test_named_config():
    config = ModelConfig.named("desk")

    assert config.n_layers == 4
    assert config.attention_width == 128
    assert config.vocab == 256


def test_named_config__overrides():
    assert ModelConfig.named("desk", seq_len=32).seq_len == 32


def test_named_config__unknown():
    with pytest.raises(LookupError) as ex:
        ModelConfig.named("gpt5")

    assert str(ex.value) == 'Architecture "gpt5" not found'


def test_config__name_key():
    config = ModelConfig.model_validate({"name": "gpt2-base", "seq_len": 128})

    assert config.hidden == 768
    assert config.seq_len == 128


def test_config__unknown_name_key():
    with pytest.raises(ValidationError):
        ModelConfig.model_validate({"name": "nope"})


@pytest.mark.parametrize(
    "field", ["n_layers", "n_heads", "head_dim", "hidden", "mlp_inner"]
)
def test_config__positive_dimensions(field: str):
    values = {**ARCHITECTURES["desk"], field: 0}

    with pytest.raises(ValidationError):
        ModelConfig(**values)


def test_init_params__shapes(tiny_params, tiny_config):
    layer = tiny_params.layers[0]

    assert tiny_params.token_embedding.shape == (16, 8)
    assert tiny_params.position_embedding.shape == (8, 8)
    assert layer.w_q.shape == (2, 8, 4)
    assert layer.w_o.shape == (2, 4, 8)
    assert layer.w_1.shape == (8, 16)
    assert layer.w_2.shape == (8, 16)
    assert len(tiny_params.layers) == tiny_config.n_layers


def test_init_params__parameter_count(tiny_params):
    per_layer = 4 * 8 + 4 * (2 * 8 * 4) + 2 * (8 * 16)
    expected = 16 * 8 + 8 * 8 + 2 * per_layer + 2 * 8

    assert tiny_params.num_parameters == expected
    assert tiny_params.flatten().shape == (expected,)


def test_init_params__deterministic(tiny_config):
    a = init_params(tiny_config, SamplerSeed(seed=1).generator(STREAM_INIT))
    b = init_params(tiny_config, SamplerSeed(seed=1).generator(STREAM_INIT))
    c = init_params(tiny_config, SamplerSeed(seed=2).generator(STREAM_INIT))

    np.testing.assert_array_equal(a.flatten(), b.flatten())
    assert not np.array_equal(a.flatten(), c.flatten())


def test_init_params__scales_and_norms():
    config = ModelConfig.named("desk")
    params = init_params(config, np.random.default_rng(0))
    layer = params.layers[0]

    assert params.token_embedding.data.std() == pytest.approx(0.02, rel=0.05)
    assert layer.w_2.data.std() == pytest.approx(0.02 / np.sqrt(8), rel=0.05)
    np.testing.assert_array_equal(layer.ln1_gain.data, 1.0)
    np.testing.assert_array_equal(layer.ln2_bias.data, 0.0)


def test_named_parameters(tiny_params):
    names = [name for name, _ in tiny_params.named_parameters()]

    assert names[:3] == ["token_embedding", "position_embedding", "layers.0.ln1_gain"]
    assert names[-1] == "final_norm_bias"
    assert tiny_params.layers[1].w_v.name == "layers.1.w_v"


@pytest.mark.parametrize(
    "name, decays",
    [
        ("layers.0.w_q", True),
        ("layers.3.w_2", True),
        ("layers.0.ln1_gain", False),
        ("token_embedding", False),
        ("final_norm_bias", False),
    ],
)
def test_decays(name: str, decays: bool):
    assert ModelParams.decays(name) is decays


def test_assign_flat__round_trip(tiny_params):
    vector = np.arange(tiny_params.num_parameters, dtype=get_dtype())

    tiny_params.assign_flat(vector)

    np.testing.assert_array_equal(tiny_params.flatten(), vector)
    assert tiny_params.token_embedding.data[0, 1] == 1


def test_assign_flat__wrong_length(tiny_params):
    with pytest.raises(ValueError):
        tiny_params.assign_flat(np.zeros(3))


def test_flat_grad__missing_counts_as_zero(tiny_params):
    assert np.all(tiny_params.flat_grad() == 0.0)


def test_snapshot_is_independent(tiny_params):
    copy = tiny_params.snapshot()

    tiny_params.token_embedding.data[...] = 0.0

    assert np.any(copy.token_embedding.data != 0.0)


def test_converted(tiny_params):
    set_precision("fp64")

    converted = tiny_params.converted()

    assert converted.layers[0].w_q.data.dtype == np.float64
    assert tiny_params.layers[0].w_q.data.dtype == np.float32
    np.testing.assert_array_equal(converted.flatten(), tiny_params.flatten())
