import struct

import numpy as np
import pytest

from segraph.diffnet import checkpoint
from segraph.diffnet.checkpoint import CheckpointError
from segraph.gnn import GnnConfig, SceneGnn


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    state = {
        "a.weight": rng.normal(size=(3, 4)),
        "b": np.array([np.pi, -0.0, 1e-310, np.finfo(float).max]),
        "scalar": np.array(2.5),
        "empty": np.zeros((0, 3)),
    }
    path = tmp_path / "x.ckpt"
    checkpoint.save(path, state)
    back = checkpoint.load(path)
    assert list(back) == list(state)
    for k in state:
        assert back[k].shape == state[k].shape
        assert back[k].tobytes() == np.asarray(state[k], dtype="<f8").tobytes()
    assert checkpoint.dumps(back) == path.read_bytes()


def test_header_layout():
    blob = checkpoint.dumps({"w": np.ones((2, 3))})
    assert blob[:4] == b"SGRF"
    assert struct.unpack_from("<II", blob, 4) == (1, 1)
    assert struct.unpack_from("<I", blob, 12) == (1,)
    assert blob[16:17] == b"w"
    assert struct.unpack_from("<I2Q", blob, 17) == (2, 2, 3)
    assert len(blob) == 17 + 4 + 16 + 6 * 8


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 9) + b[8:],
    lambda b: b[:-3],
    lambda b: b + b"\0",
    lambda b: b[:6],
])
def test_corrupt_blobs_rejected(mutate):
    blob = checkpoint.dumps({"w": np.ones((2, 3)), "v": np.zeros(4)})
    with pytest.raises(CheckpointError):
        checkpoint.loads(mutate(blob))


def test_model_state_round_trip(tmp_path):
    model = SceneGnn(GnnConfig(), seed=3)
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, model.state_dict())
    other = SceneGnn(GnnConfig(), seed=4)
    other.load_state_dict(checkpoint.load(path))
    for (n1, a), (n2, b) in zip(sorted(model.state_dict().items()), sorted(other.state_dict().items())):
        assert n1 == n2 and np.array_equal(a, b)


def test_load_state_shape_mismatch():
    model = SceneGnn(GnnConfig(hidden_dim=16))
    with pytest.raises(ValueError):
        model.load_state_dict(SceneGnn(GnnConfig(hidden_dim=8)).state_dict())
