"""Multi-layer training, feature extraction and model archives.

Layer 1 encodes dense descriptors against a learned dictionary. Every later
layer max-pools the previous layer's codes onto a coarser grid, embeds the
pooled codes with a contrastive linear map, and sparse-codes the result. The
image feature is the concatenation of every layer's L2-normalized pyramid
pooling.
"""

import io
import json
import logging
import warnings
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image, check_int, check_positive
from .descriptors import DESCRIPTOR_DIM, compute_descriptors
from .embedding import (
    DrlimConfig,
    EmbeddingMap,
    dumps_embedding,
    embed_grid,
    generate_pairs,
    initial_embedding,
    loads_embedding,
    train_embedding,
)
from .exceptions import (
    ChainingError,
    CorruptModelError,
    FormatError,
    InvalidInputError,
    ModelInvariantError,
    ModelVersionError,
    NumericalError,
)
from .grid import N_REGIONS, build_grid, can_coarsen
from .pooling import l2_normalize, local_spatial_pool, spm_pool
from .sparse_coding import (
    Dictionary,
    dumps_dictionary,
    encode_grid,
    learn_dictionary,
    loads_dictionary,
)

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
MODEL_FORMAT = "deepsc-model"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class LayerConfig:
    """Training parameters of one layer.

    The embedding fields (`embed_dim` through `pairs_per_image`) are ignored
    for the first layer, which codes descriptors directly.
    """

    n_atoms: int = 1024
    alpha: float = 0.15
    dict_epochs: int = 1
    embed_dim: int = DESCRIPTOR_DIM
    sigma: float = 16.0
    beta: float = 2.0
    step_size: float = 0.05
    epochs: int = 20
    batch_size: int = 64
    pairs_per_image: int = 2000

    def __post_init__(self):
        check_int(self.n_atoms, "n_atoms", minimum=1)
        check_positive(self.alpha, "alpha")
        check_int(self.dict_epochs, "dict_epochs", minimum=1)
        check_int(self.embed_dim, "embed_dim", minimum=1)

    def drlim(self, seed):
        return DrlimConfig(sigma=self.sigma, beta=self.beta, step_size=self.step_size,
                           epochs=self.epochs, seed=seed, pairs_per_image=self.pairs_per_image,
                           batch_size=self.batch_size)


@dataclass
class LayerParams:
    dictionary: Dictionary
    alpha: float
    embedding: EmbeddingMap = None
    drlim: DrlimConfig = None


@dataclass
class DeepSCModel:
    layers: list
    patch_size: int = 16
    spacing: int = 4
    descriptor_dim: int = DESCRIPTOR_DIM
    version: int = MODEL_VERSION
    training_log: dict = field(default_factory=dict, compare=False, repr=False)

    def validate(self):
        """Check the dimension chain between layers; raises `ChainingError`."""
        if not self.layers:
            raise ChainingError("a model needs at least one layer")
        first = self.layers[0]
        if first.embedding is not None:
            raise ChainingError("layer 1 must not have an embedding")
        if first.dictionary.dim != self.descriptor_dim:
            raise ChainingError(
                f"layer 1 dictionary dim {first.dictionary.dim} != descriptor dim {self.descriptor_dim}"
            )
        for n, (prev, layer) in enumerate(zip(self.layers, self.layers[1:]), start=2):
            if layer.embedding is None:
                raise ChainingError(f"layer {n} is missing its embedding")
            if layer.embedding.in_dim != prev.dictionary.size:
                raise ChainingError(f"layer {n} embedding input dim != layer {n - 1} dictionary size")
            if layer.embedding.out_dim != layer.dictionary.dim:
                raise ChainingError(f"layer {n} embedding output dim != its dictionary dim")
        return self

    @property
    def dict_sizes(self):
        return [layer.dictionary.size for layer in self.layers]

    def feature_dim(self, n_layers=None):
        return N_REGIONS * sum(self.dict_sizes[:n_layers])


# --------------------------------------------------------------------------
# training


def _subsample_rows(blocks, cap, rng):
    X = np.vstack(blocks)
    if cap is not None and X.shape[0] > cap:
        X = X[np.sort(rng.choice(X.shape[0], cap, replace=False))]
    return X


def train_model(images, layers, *, patch_size=16, spacing=4, max_dict_samples=200_000,
                seed=0, n_jobs=1, return_codes=False):
    """Greedy layer-wise unsupervised training.

    Parameters
    ----------
    images : sequence of 2-D arrays in [0, 1]
    layers : sequence of LayerConfig
    max_dict_samples : int or None
        Cap on the number of points sampled (uniformly, seeded) to train
        each dictionary.
    seed : int
    return_codes : bool
        Also return the per-layer code grids computed during training
        (None for images excluded from a layer).

    Returns
    -------
    DeepSCModel, or (DeepSCModel, list of list of CodeGrid)
    """
    images = [check_image(img) for img in images]
    if not images:
        raise InvalidInputError("no training images")
    layers = list(layers)
    if not layers:
        raise InvalidInputError("at least one layer is required")
    seeds = np.random.SeedSequence(seed).generate_state(4 * len(layers) + 1)
    log = {"dictionary_objective": [], "drlim_loss": [], "n_images": []}

    def grid_of(img):
        return build_grid(img.shape[1], img.shape[0], patch_size, spacing)

    descs = Parallel(n_jobs=n_jobs)(delayed(compute_descriptors)(img, grid_of(img)) for img in images)

    params = []
    codes = None
    all_codes = []
    for n, cfg in enumerate(layers):
        s_samples, s_dict, s_pairs, s_drlim = (int(v) for v in seeds[4 * n:4 * n + 4])
        if n == 0:
            inputs = descs
            embedding = drlim = None
        else:
            live = [k for k, cg in enumerate(codes) if cg is not None and can_coarsen(cg.grid)]
            dropped = sum(cg is not None for cg in codes) - len(live)
            if dropped:
                warnings.warn(f"layer {n + 1}: {dropped} image(s) too small to coarsen, excluded",
                              RuntimeWarning, stacklevel=2)
            if not live:
                raise InvalidInputError(f"no image can reach layer {n + 1}")
            pooled = {k: local_spatial_pool(codes[k]) for k in live}
            pair_rng = np.random.RandomState(s_pairs)
            yi, yj, lab = [], [], []
            for k in live:
                pairs = generate_pairs(pooled[k].grid, cfg.sigma, cap=cfg.pairs_per_image,
                                       seed=pair_rng.randint(2**31 - 1))
                if not pairs:
                    continue
                ij = np.array([(p.i, p.j) for p in pairs])
                yi.append(pooled[k].data[ij[:, 0]])
                yj.append(pooled[k].data[ij[:, 1]])
                lab.append([p.label for p in pairs])
            drlim = cfg.drlim(s_drlim)
            if lab:
                embedding = train_embedding(np.vstack(yi), np.vstack(yj), np.concatenate(lab),
                                            cfg.embed_dim, drlim)
            else:
                warnings.warn(f"layer {n + 1}: coarse grids are 1x1 so no training pairs exist; "
                              "the embedding keeps its seeded initialization",
                              RuntimeWarning, stacklevel=2)
                embedding = initial_embedding(codes[live[0]].dim, cfg.embed_dim, drlim)
            log["drlim_loss"].append(embedding.loss_history)
            inputs = [embed_grid(pooled[k], embedding) if k in pooled else None
                      for k in range(len(images))]

        live_inputs = [g for g in inputs if g is not None]
        X = _subsample_rows([g.data for g in live_inputs], max_dict_samples,
                            np.random.RandomState(s_samples))
        dictionary, hist = learn_dictionary(X, cfg.n_atoms, cfg.alpha, n_epochs=cfg.dict_epochs,
                                            random_state=s_dict, return_history=True)
        log["dictionary_objective"].append(hist)
        log["n_images"].append(len(live_inputs))
        live_idx = [k for k, g in enumerate(inputs) if g is not None]
        encoded = Parallel(n_jobs=n_jobs)(
            delayed(encode_grid)(inputs[k], dictionary, cfg.alpha) for k in live_idx)
        codes = [None] * len(images)
        for k, cg in zip(live_idx, encoded):
            codes[k] = cg
        all_codes.append(codes)
        params.append(LayerParams(dictionary, float(cfg.alpha), embedding, drlim))
        logger.info("layer %d trained: K=%d on %d samples", n + 1, cfg.n_atoms, X.shape[0])

    model = DeepSCModel(params, patch_size=patch_size, spacing=spacing, training_log=log).validate()
    return (model, all_codes) if return_codes else model


# --------------------------------------------------------------------------
# inference


def forward(model, img, n_layers=None):
    """Code grids of `img` at every layer (None where the grid became too small)."""
    img = check_image(img)
    layers = model.layers[:n_layers]
    grid = build_grid(img.shape[1], img.shape[0], model.patch_size, model.spacing)
    first = layers[0]
    codes = encode_grid(compute_descriptors(img, grid), first.dictionary, first.alpha)
    out = [codes]
    for layer in layers[1:]:
        if codes is None or not can_coarsen(codes.grid):
            codes = None
        else:
            z = embed_grid(local_spatial_pool(codes), layer.embedding)
            codes = encode_grid(z, layer.dictionary, layer.alpha)
        out.append(codes)
    return out


def features_from_codes(model, per_layer_codes):
    blocks = []
    for layer, codes in zip(model.layers, per_layer_codes):
        if codes is None:
            blocks.append(np.zeros(N_REGIONS * layer.dictionary.size))
        else:
            blocks.append(l2_normalize(spm_pool(codes)))
    return np.concatenate(blocks)


def extract_features(model, img, n_layers=None):
    """Concatenated per-layer pyramid features, length ``21 * sum(K_l)``.

    A layer the image is too small to reach contributes a zero block.
    """
    codes = forward(model, img, n_layers)
    if any(c is None for c in codes):
        warnings.warn("image too small for the deepest layers; their features are zero",
                      RuntimeWarning, stacklevel=2)
    feat = features_from_codes(model, codes)
    if not np.all(np.isfinite(feat)):
        raise NumericalError("non-finite feature")
    return feat


def extract_many(model, images, n_layers=None, n_jobs=1):
    rows = Parallel(n_jobs=n_jobs)(delayed(extract_features)(model, img, n_layers) for img in images)
    if not rows:
        return np.zeros((0, model.feature_dim(n_layers)))
    return np.vstack(rows)


class DeepSC(TransformerMixin, BaseEstimator):
    """Unsupervised multi-layer sparse-coding feature extractor.

    ``fit`` consumes a list of grayscale images and never looks at labels;
    ``transform`` returns one feature row per image.

    Parameters
    ----------
    layers : sequence of LayerConfig
    patch_size : int, default=16
    spacing : int, default=4
    max_dict_samples : int or None, default=200000
    n_layers : int or None, default=None
        Use only the first `n_layers` layers in ``transform``.
    random_state : int, default=0
    n_jobs : int, default=1
    """

    def __init__(self, layers=(LayerConfig(),), patch_size=16, spacing=4,
                 max_dict_samples=200_000, n_layers=None, random_state=0, n_jobs=1):
        self.layers = layers
        self.patch_size = patch_size
        self.spacing = spacing
        self.max_dict_samples = max_dict_samples
        self.n_layers = n_layers
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        self.model_ = train_model(X, self.layers, patch_size=self.patch_size, spacing=self.spacing,
                                  max_dict_samples=self.max_dict_samples,
                                  seed=self.random_state, n_jobs=self.n_jobs)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return extract_many(self.model_, X, self.n_layers, self.n_jobs)


# --------------------------------------------------------------------------
# archive


def _manifest(model):
    layers = []
    for layer in model.layers:
        entry = {"alpha": layer.alpha, "dict_dim": layer.dictionary.dim,
                 "dict_size": layer.dictionary.size, "embedding": layer.embedding is not None}
        if layer.drlim is not None:
            entry["drlim"] = asdict(layer.drlim)
        layers.append(entry)
    return {"format": MODEL_FORMAT, "version": model.version, "patch_size": model.patch_size,
            "spacing": model.spacing, "descriptor_dim": model.descriptor_dim, "layers": layers}


def _zip_write(zf, name, text):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, text.encode("utf-8"))


def dumps_model(model):
    """Serialize to archive bytes; identical models give identical bytes."""
    model.validate()
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _zip_write(zf, "manifest.json", json.dumps(_manifest(model), indent=2, sort_keys=True) + "\n")
        for n, layer in enumerate(model.layers, start=1):
            _zip_write(zf, f"layer{n}/dictionary.txt", dumps_dictionary(layer.dictionary))
            if layer.embedding is not None:
                _zip_write(zf, f"layer{n}/embedding.txt", dumps_embedding(layer.embedding))
    return buf.getvalue()


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def loads_model(data):
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile as exc:
        raise CorruptModelError(f"not a model archive: {exc}") from exc
    with zf:
        names = set(zf.namelist())

        def read(name):
            try:
                return zf.read(name).decode("utf-8")
            except (KeyError, zipfile.BadZipFile, UnicodeDecodeError, EOFError) as exc:
                raise CorruptModelError(f"cannot read {name}: {exc}") from exc

        try:
            manifest = json.loads(read("manifest.json"))
        except json.JSONDecodeError as exc:
            raise CorruptModelError(f"bad manifest: {exc}") from exc
        if manifest.get("format") != MODEL_FORMAT:
            raise CorruptModelError("manifest does not describe a DeepSC model")
        if manifest.get("version") != MODEL_VERSION:
            raise ModelVersionError(
                f"model version {manifest.get('version')!r}, expected {MODEL_VERSION}")

        layers = []
        try:
            for n, entry in enumerate(manifest["layers"], start=1):
                dictionary = loads_dictionary(read(f"layer{n}/dictionary.txt"))
                embedding = drlim = None
                emb_name = f"layer{n}/embedding.txt"
                if emb_name in names:
                    embedding = loads_embedding(read(emb_name))
                elif entry.get("embedding"):
                    raise ChainingError(f"layer {n} embedding is listed but missing")
                if "drlim" in entry:
                    drlim = DrlimConfig(**entry["drlim"])
                if (dictionary.dim, dictionary.size) != (entry["dict_dim"], entry["dict_size"]):
                    raise ChainingError(f"layer {n} dictionary shape disagrees with the manifest")
                layers.append(LayerParams(dictionary, float(entry["alpha"]), embedding, drlim))
            model = DeepSCModel(layers, patch_size=int(manifest["patch_size"]),
                                spacing=int(manifest["spacing"]),
                                descriptor_dim=int(manifest["descriptor_dim"]))
        except ModelInvariantError:
            raise
        except (InvalidInputError, NumericalError) as exc:
            raise ModelInvariantError(str(exc)) from exc
        except (FormatError, KeyError, TypeError, ValueError) as exc:
            raise CorruptModelError(f"corrupt model payload: {exc}") from exc
    return model.validate()


def load_model(path):
    with open(path, "rb") as fh:
        return loads_model(fh.read())
