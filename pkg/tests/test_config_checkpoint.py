import json
import zipfile

import numpy as np
import pytest

from rawgat_st import config as cfgmod
from rawgat_st.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from rawgat_st.model import ConfigError, ModelConfig, RawGatST
from rawgat_st.tensor import no_grad
from rawgat_st.train import state_dict


class TestConfig:
    def test_defaults_build(self):
        s = cfgmod.load()
        assert s.model_config() == ModelConfig().validate()
        assert s.train_config().lr == 1e-4

    def test_file_sections_and_overrides(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed = 3  # comment\nmodel.fusion = concat\n[train]\nepochs = 7\nlr=0.001\n")
        s = cfgmod.load(str(p), ["train.epochs=9", "model.res_blocks=1,2"])
        assert s["seed"] == 3 and s["model.fusion"] == "concat"
        assert s["train.epochs"] == 9 and s["train.lr"] == 0.001
        assert s["model.res_blocks"] == (1, 2)
        assert s.train_config().seed == 3 and s.model_config().seed == 3
        assert {"seed", "model.fusion", "train.epochs"} <= s.explicit

    def test_unknown_key_named(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("model.fusoin = add\n")
        with pytest.raises(ConfigError, match="model.fusoin"):
            cfgmod.load(str(p))
        with pytest.raises(ConfigError, match="train.bogus"):
            cfgmod.load(None, ["train.bogus=1"])

    def test_bad_values_named(self):
        with pytest.raises(ConfigError, match="train.epochs"):
            cfgmod.load(None, ["train.epochs=many"])
        with pytest.raises(ConfigError, match="model.use_pooling"):
            cfgmod.load(None, ["model.use_pooling=perhaps"])
        with pytest.raises(ConfigError, match="model.k_spec"):
            cfgmod.load(None, ["model.k_spec=2.0"]).model_config()
        with pytest.raises(ConfigError, match="train.mask_limit"):
            cfgmod.load(None, ["train.mask_limit=40"]).model_config()

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="--config"):
            cfgmod.load("/nonexistent/file.cfg")

    def test_require(self):
        with pytest.raises(ConfigError, match="data.train"):
            cfgmod.load().require("data.train")

    def test_describe_lists_every_key(self):
        text = cfgmod.describe_keys()
        for key in cfgmod.KEYS:
            assert key in text


def small_model(**kw):
    return RawGatST(ModelConfig(segment_length=2400, **kw))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        m = small_model(fusion="concat", seed=5)
        m.frontend.bn.running_mean[...] = 0.25  # make a buffer non-default
        path = save_checkpoint(tmp_path / "m.npz", m, epoch=3)
        loaded, meta = load_checkpoint(path)
        assert meta["epoch"] == 3 and meta["seed"] == 5 and meta["version"] == 1
        a, b = state_dict(m), state_dict(loaded)
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        x = np.random.default_rng(0).standard_normal((2, 2400)).astype(np.float32)
        m.eval()
        with no_grad():
            np.testing.assert_array_equal(m(x).data, loaded(x).data)

    def test_blob_dtypes(self, tmp_path):
        save_checkpoint(tmp_path / "m.npz", small_model())
        _, arrays = read_checkpoint(tmp_path / "m.npz")
        assert all(v.dtype == np.dtype("<f4") for k, v in arrays.items() if k.startswith("param:"))
        assert all(v.dtype == np.dtype("<f8") for k, v in arrays.items() if k.startswith("buffer:"))

    def test_no_temp_files_left(self, tmp_path):
        save_checkpoint(tmp_path / "m.npz", small_model())
        assert [p.name for p in tmp_path.iterdir()] == ["m.npz"]

    def test_truncated(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.npz", small_model())
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_garbage_and_missing(self, tmp_path):
        (tmp_path / "g.npz").write_bytes(b"garbage" * 10)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "g.npz")
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "none.npz")

    def test_version_checked(self, tmp_path):
        path = tmp_path / "v.npz"
        meta = {"format": "rawgat-st-checkpoint", "version": 99}
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))
        with pytest.raises(CheckpointError, match="version 99"):
            read_checkpoint(path)

    def test_mismatch_names_field(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.npz", small_model(fusion="add"))
        with pytest.raises(CheckpointError, match="fusion"):
            load_checkpoint(path, expect=ModelConfig(fusion="mul", segment_length=2400))
        with pytest.raises(CheckpointError, match="use_pooling"):
            load_checkpoint(path, expect=ModelConfig(fusion="add", use_pooling=False))

    def test_missing_blob(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.npz", small_model())
        with zipfile.ZipFile(path) as z:
            names = z.namelist()
            blobs = {n: z.read(n) for n in names}
        victim = next(n for n in names if n.startswith("param:"))
        with zipfile.ZipFile(path, "w") as z:
            for n, b in blobs.items():
                if n != victim:
                    z.writestr(n, b)
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(path)
