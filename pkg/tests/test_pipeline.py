import inspect
import io
import json
import zipfile

import numpy as np
import pytest
from sklearn.base import clone

from deepsc.embedding import EmbeddingMap, initial_embedding
from deepsc.exceptions import (
    ChainingError,
    CorruptModelError,
    InvalidInputError,
    ModelInvariantError,
    ModelVersionError,
)
from deepsc.pipeline import (
    DeepSC,
    DeepSCModel,
    LayerConfig,
    LayerParams,
    dumps_model,
    extract_features,
    extract_many,
    features_from_codes,
    forward,
    load_model,
    loads_model,
    save_model,
    train_model,
)
from deepsc.sparse_coding import Dictionary

from .conftest import tiny_layers


def unit_columns(rng, rows, cols):
    M = rng.randn(rows, cols)
    return M / np.linalg.norm(M, axis=0)


def random_model(rng, sizes, embed_dim=128):
    layers = [LayerParams(Dictionary(unit_columns(rng, 128, sizes[0])), 0.15)]
    for prev, K in zip(sizes, sizes[1:]):
        layers.append(LayerParams(Dictionary(unit_columns(rng, embed_dim, K)), 0.15,
                                  EmbeddingMap(unit_columns(rng, embed_dim, prev) * 0.5)))
    return DeepSCModel(layers).validate()


def test_one_layer_model(textures):
    images, _ = textures
    model = train_model(images[:5], tiny_layers(1), max_dict_samples=300, seed=0)
    assert len(model.layers) == 1
    assert model.layers[0].embedding is None
    assert model.dict_sizes == [8]
    assert extract_features(model, images[0]).shape == (21 * 8,)


def test_three_layer_grid_chain(trained, textures):
    model, codes = trained
    assert [layer.embedding is None for layer in model.layers] == [True, False, False]
    grids = [c.grid for c in forward(model, textures[0][0])]
    assert [(g.nx, g.ny) for g in grids] == [(13, 13), (5, 5), (1, 1)]
    fields = [g.receptive_field for g in grids]
    assert fields == sorted(set(fields)) == [16, 28, 52]
    for prev, layer in zip(model.layers, model.layers[1:]):
        assert layer.embedding.in_dim == prev.dictionary.size
        assert layer.embedding.out_dim == layer.dictionary.dim
    assert model.feature_dim() == 21 * 24
    log = model.training_log
    assert len(log["drlim_loss"]) == 2 and len(log["dictionary_objective"]) == 3


def test_cached_codes_reproduced_bitwise(trained, textures):
    model, codes = trained
    for k, img in enumerate(textures[0]):
        for layer_codes, fresh in zip(codes, forward(model, img)):
            assert fresh.data.tobytes() == layer_codes[k].data.tobytes()


def test_features(trained, textures):
    model, codes = trained
    img = textures[0][2]
    f = extract_features(model, img)
    assert f.shape == (model.feature_dim(),)
    cached = features_from_codes(model, [c[2] for c in codes])
    assert f.tobytes() == cached.tobytes()
    blocks = np.split(f, np.cumsum([21 * K for K in model.dict_sizes])[:-1])
    for block in blocks:
        assert np.linalg.norm(block) == pytest.approx(1.0) or not block.any()
    assert extract_features(model, img, n_layers=1).tobytes() == blocks[0].tobytes()


def test_blank_image_gives_zero_features(trained):
    model, _ = trained
    assert not extract_features(model, np.full((64, 64), 0.5)).any()


def test_small_image_zero_block_for_unreachable_layer(trained, rng):
    model, _ = trained
    with pytest.warns(RuntimeWarning):
        f = extract_features(model, rng.rand(32, 32))
    assert f.shape == (model.feature_dim(),)
    assert not f[21 * 16:].any()
    with pytest.raises(InvalidInputError):
        extract_features(model, rng.rand(8, 8))


def test_extract_many_independent_of_jobs(trained, textures):
    model, _ = trained
    a = extract_many(model, textures[0], n_jobs=1)
    b = extract_many(model, textures[0], n_jobs=2)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("sizes,dim", [((1024,), 21504), ((1024, 1024, 1024), 64512)])
def test_feature_dim_full_size(sizes, dim):
    model = random_model(np.random.RandomState(1), sizes)
    assert model.feature_dim() == dim
    img = np.random.RandomState(2).rand(64, 64)
    assert extract_features(model, img).shape == (dim,)


def test_training_deterministic(textures):
    images, _ = textures
    a = train_model(images, tiny_layers(2), max_dict_samples=300, seed=11)
    b = train_model(images, tiny_layers(2), max_dict_samples=300, seed=11)
    assert dumps_model(a) == dumps_model(b)


def test_training_takes_no_labels():
    params = inspect.signature(train_model).parameters
    assert not {"labels", "y", "targets"} & set(params)


def test_layer_without_pairs_keeps_initial_embedding(trained):
    model, _ = trained
    third = model.layers[2]
    start = initial_embedding(model.layers[1].dictionary.size, third.embedding.out_dim, third.drlim)
    assert third.embedding.W.tobytes() == start.W.tobytes()
    assert model.training_log["drlim_loss"][1] == []


def test_save_load_save(trained, tmp_path):
    model, _ = trained
    path = tmp_path / "m.zip"
    save_model(model, path)
    loaded = load_model(path)
    assert dumps_model(loaded) == path.read_bytes()
    for a, b in zip(model.layers, loaded.layers):
        assert a.dictionary.atoms.tobytes() == b.dictionary.atoms.tobytes()
        if a.embedding is not None:
            assert a.embedding.W.tobytes() == b.embedding.W.tobytes()
            assert a.drlim == b.drlim


def rewrite(data, edit):
    src = zipfile.ZipFile(io.BytesIO(data))
    files = {n: src.read(n).decode() for n in src.namelist()}
    edit(files)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, text in files.items():
            zf.writestr(name, text)
    return buf.getvalue()


def test_tampered_norm_rejected(trained):
    data = dumps_model(trained[0])

    def inflate(files):
        lines = files["layer1/dictionary.txt"].splitlines()
        lines[1] = " ".join(repr(2 * float(v)) for v in lines[1].split())
        files["layer1/dictionary.txt"] = "\n".join(lines) + "\n"

    with pytest.raises(ModelInvariantError):
        loads_model(rewrite(data, inflate))


def test_missing_embedding_is_chaining_error(trained):
    data = dumps_model(trained[0])
    with pytest.raises(ChainingError):
        loads_model(rewrite(data, lambda f: f.pop("layer2/embedding.txt")))


def test_version_mismatch(trained):
    data = dumps_model(trained[0])

    def bump(files):
        manifest = json.loads(files["manifest.json"])
        manifest["version"] = 99
        files["manifest.json"] = json.dumps(manifest)

    with pytest.raises(ModelVersionError):
        loads_model(rewrite(data, bump))


def test_corrupt_payloads(trained):
    data = dumps_model(trained[0])
    with pytest.raises(CorruptModelError):
        loads_model(b"not a zip at all")
    with pytest.raises(CorruptModelError):
        loads_model(rewrite(data, lambda f: f.update({"manifest.json": "{oops"})))

    def truncate(files):
        files["layer2/dictionary.txt"] = files["layer2/dictionary.txt"].splitlines()[0] + "\n"

    with pytest.raises(CorruptModelError):
        loads_model(rewrite(data, truncate))
    # the three failure kinds are distinct
    assert not issubclass(CorruptModelError, (ModelVersionError, ModelInvariantError))
    assert not issubclass(ModelVersionError, ModelInvariantError)


def test_validate_chaining(rng):
    d128 = Dictionary(unit_columns(rng, 128, 4))
    d6 = Dictionary(unit_columns(rng, 6, 5))
    good_emb = EmbeddingMap(unit_columns(rng, 6, 4))
    DeepSCModel([LayerParams(d128, 0.1), LayerParams(d6, 0.1, good_emb)]).validate()
    with pytest.raises(ChainingError):
        DeepSCModel([LayerParams(d128, 0.1, good_emb)]).validate()
    with pytest.raises(ChainingError):
        DeepSCModel([LayerParams(d128, 0.1), LayerParams(d6, 0.1)]).validate()
    with pytest.raises(ChainingError):
        DeepSCModel([LayerParams(d128, 0.1),
                     LayerParams(d6, 0.1, EmbeddingMap(unit_columns(rng, 6, 3)))]).validate()
    with pytest.raises(ChainingError):
        DeepSCModel([LayerParams(d6, 0.1)]).validate()
    with pytest.raises(ChainingError):
        DeepSCModel([]).validate()


def test_layer_config_validation():
    with pytest.raises(InvalidInputError):
        LayerConfig(n_atoms=0)
    with pytest.raises(InvalidInputError):
        LayerConfig(alpha=0.0)


def test_estimator(textures):
    images, _ = textures
    est = DeepSC(layers=tuple(tiny_layers(2)), max_dict_samples=300, random_state=3)
    assert clone(est).get_params()["random_state"] == 3
    F = est.fit(images).transform(images)
    assert F.shape == (len(images), 21 * 16)
    est.set_params(n_layers=1)
    assert est.transform(images[:2]).shape == (2, 21 * 8)
