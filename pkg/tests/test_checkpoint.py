import json

import numpy as np
import pytest

from abductive.models import NEURAL_KINDS, CheckpointError, build_model, load_checkpoint, save_checkpoint
from abductive.models.checkpoint import FORMAT, checkpoint_bytes
from abductive.verify import TOY_DIMS, toy_config, toy_inputs


@pytest.mark.parametrize("kind", NEURAL_KINDS)
def test_round_trip_logits(kind, tmp_path, rng):
    model = build_model(toy_config(kind), TOY_DIMS, seed=8)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, extra={"seed": 8})
    back = load_checkpoint(path)
    assert back.kind == kind and back.checkpoint_extra == {"seed": 8}
    for n in (1, 4):
        inp = toy_inputs(rng, n)
        np.testing.assert_allclose(back.forward(inp)[0], model.forward(inp)[0], rtol=0, atol=1e-5)


def test_manifest_layout(rng):
    model = build_model(toy_config("rbp"), TOY_DIMS)
    raw = checkpoint_bytes(model)
    head, blob = raw.split(b"\n", 1)
    m = json.loads(head)
    assert m["format"] == FORMAT and m["model_kind"] == "rbp"
    assert len(blob) == 4 * model.store.n_params()
    off = 0
    for e, p in zip(m["params"], model.store):
        assert e["name"] == p.name and e["dtype"] == "f32" and e["offset"] == off
        np.testing.assert_array_equal(
            np.frombuffer(blob, "<f4", p.value.size, off).reshape(p.value.shape),
            p.value.astype(np.float32))
        off += 4 * p.value.size
    assert checkpoint_bytes(model) == raw


def _corrupt(tmp_path, edit, blob_edit=None):
    raw = checkpoint_bytes(build_model(toy_config("mlp"), TOY_DIMS))
    head, blob = raw.split(b"\n", 1)
    m = json.loads(head)
    edit(m)
    path = tmp_path / "bad.ckpt"
    path.write_bytes(json.dumps(m).encode() + b"\n" + (blob_edit(blob) if blob_edit else blob))
    return path


@pytest.mark.parametrize("edit,field", [
    (lambda m: m.pop("format"), "format"),
    (lambda m: m.update(format="other/2"), "format"),
    (lambda m: m.pop("config"), "config"),
    (lambda m: m["params"][0].update(shape=[1, 1]), "shape"),
    (lambda m: m["params"][0].update(dtype="f64"), "dtype"),
    (lambda m: m["params"][-1].update(offset=10**9), "offset"),
    (lambda m: m["params"].pop(), "params"),
    (lambda m: m["config"].update(model_kind="gnned"), "model_kind"),
])
def test_corruption_names_field(tmp_path, edit, field):
    with pytest.raises(CheckpointError, match=field):
        load_checkpoint(_corrupt(tmp_path, edit))


def test_truncated_blob(tmp_path):
    with pytest.raises(CheckpointError, match="offset"):
        load_checkpoint(_corrupt(tmp_path, lambda m: None, lambda b: b[:-8]))


def test_garbage_manifest(tmp_path):
    path = tmp_path / "g.ckpt"
    path.write_bytes(b"{not json\n")
    with pytest.raises(CheckpointError, match="JSON"):
        load_checkpoint(path)
    path.write_bytes(b"no newline")
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(path)
