# /tests/test_checkpoint_client.py

import hashlib

import numpy as np
import pytest

from clients.checkpoint_client import MAGIC, CheckpointClient, pack_container, unpack_container
from core.errors import CorruptionError, SchemaError, VersionError
from core.policy import RLConfig, init_policy


@pytest.fixture
def client():
    return CheckpointClient()


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_weights_round_trip_bit_exact(client, tiny_weights, tmp_path, dtype):
    weights = tiny_weights.astype(dtype)
    path = client.save_weights(weights, tmp_path / "w.pnet", meta={"iteration": 3})
    back = client.load_weights(path)
    assert back.config == weights.config
    assert set(back.params) == set(weights.params)
    for name, value in weights.params.items():
        assert back.params[name].dtype == value.dtype
        assert back.params[name].tobytes() == value.tobytes()
    assert client.read_meta(path) == {"iteration": 3}
    assert not list(tmp_path.glob("*.tmp"))


def test_flipped_byte_is_detected(client, tiny_weights, tmp_path):
    path = client.save_weights(tiny_weights, tmp_path / "w.pnet")
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptionError):
        client.load_weights(path)


def test_truncated_file(client, tiny_weights, tmp_path):
    path = client.save_weights(tiny_weights, tmp_path / "w.pnet")
    path.write_bytes(path.read_bytes()[:20])
    with pytest.raises(CorruptionError):
        client.load_weights(path)


def test_other_version_is_rejected(tmp_path, client):
    path = tmp_path / "v2.pnet"
    path.write_bytes(pack_container({"kind": "net"}, {"a": np.zeros(2)}, version=2))
    with pytest.raises(VersionError) as err:
        client.load_weights(path)
    assert (err.value.found, err.value.expected) == (2, 1)


def test_bad_magic_with_valid_checksum():
    body = pack_container({}, {})[:-32]
    body = b"NOTACKPT" + body[len(MAGIC):]
    with pytest.raises(SchemaError):
        unpack_container(body + hashlib.sha256(body).digest())


def test_container_preserves_shapes_and_scalars():
    tensors = {"scalar": np.array(2.5), "int": np.arange(6, dtype=np.int32).reshape(2, 3), "empty": np.zeros((0, 4))}
    header, back = unpack_container(pack_container({"x": [1, 2]}, tensors))
    assert header == {"x": [1, 2]}
    for name, value in tensors.items():
        assert back[name].shape == value.shape and back[name].dtype == value.dtype
        np.testing.assert_array_equal(back[name], value)


def test_policy_round_trip_and_kind_check(client, tmp_path):
    config = RLConfig(hidden=8, feature_channels=(4, 4, 4))
    policy = init_policy(config, (8, 4, 4), np.random.default_rng(0))
    policy.log_temperature = -1.7
    path = client.save_policy(policy, tmp_path / "policy.pnet")
    back = client.load_policy(path)
    assert back.config == config
    assert back.latent_shape == (8, 4, 4)
    assert back.log_temperature == -1.7
    for name, value in policy.params.items():
        np.testing.assert_array_equal(back.params[name], value)
    assert set(back.target) == set(policy.target)
    with pytest.raises(SchemaError):
        client.load_weights(path)
    with pytest.raises(FileNotFoundError):
        client.load_policy(tmp_path / "missing.pnet")
