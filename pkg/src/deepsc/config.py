"""INI run configuration.

Example::

    [data]
    root = data/textures
    train_per_class = 50
    ; test_per_class = 50        (default: all remaining images)

    [model]
    patch_size = 16
    spacing = 4
    seed = 0
    max_dict_samples = 200000

    [layer1]
    K = 64
    alpha = 0.15

    [layer2]
    K = 64
    alpha = 0.15
    sigma = 16
    beta = 2
    step = 0.05
    epochs = 20
    embed_dim = 128

    [svm]
    C = 1.0
    epochs = 50
    ; C_grid = 0.1, 1, 10

    [output]
    dir = runs/textures

Layer sections must be numbered consecutively from 1. Embedding keys
(sigma, beta, step, epochs, embed_dim, batch_size, pairs_per_image) are
rejected in ``[layer1]`` since the first layer reads descriptors directly.
"""

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .descriptors import DESCRIPTOR_DIM
from .exceptions import DeepSCError, InvalidInputError
from .pipeline import LayerConfig


class ConfigError(DeepSCError, ValueError):
    pass


_LAYER_KEYS = {
    "k": ("n_atoms", int),
    "alpha": ("alpha", float),
    "dict_epochs": ("dict_epochs", int),
    "embed_dim": ("embed_dim", int),
    "sigma": ("sigma", float),
    "beta": ("beta", float),
    "step": ("step_size", float),
    "epochs": ("epochs", int),
    "batch_size": ("batch_size", int),
    "pairs_per_image": ("pairs_per_image", int),
}
_EMBED_KEYS = {"embed_dim", "sigma", "beta", "step", "epochs", "batch_size", "pairs_per_image"}


@dataclass
class RunConfig:
    layers: list
    data_root: Path = None
    train_per_class: int = 30
    test_per_class: int = None
    patch_size: int = 16
    spacing: int = 4
    seed: int = 0
    max_dict_samples: int = 200_000
    svm_C: float = 1.0
    svm_epochs: int = 50
    C_grid: list = field(default_factory=list)
    output_dir: Path = Path("deepsc-run")


def _get(section, key, conv, default=None):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a valid {conv.__name__}") from None


def _layer(section, n):
    unknown = set(section) - set(_LAYER_KEYS)
    if unknown:
        raise ConfigError(f"[{section.name}] unknown keys: {', '.join(sorted(unknown))}")
    if "k" not in section or "alpha" not in section:
        raise ConfigError(f"[{section.name}] needs both K and alpha")
    if n == 1 and _EMBED_KEYS & set(section):
        raise ConfigError(
            f"[layer1] has embedding keys {sorted(_EMBED_KEYS & set(section))}; "
            f"layer 1 reads {DESCRIPTOR_DIM}-d descriptors directly"
        )
    kwargs = {name: _get(section, key, conv) for key, (name, conv) in _LAYER_KEYS.items()
              if key in section}
    try:
        return LayerConfig(**kwargs)
    except InvalidInputError as exc:
        raise ConfigError(f"[{section.name}] {exc}") from None


def parse_config(text, base_dir=None):
    """Parse INI text into a `RunConfig`; every check runs before any compute."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    numbers = []
    for name in cp.sections():
        if name.startswith("layer"):
            try:
                numbers.append(int(name[5:]))
            except ValueError:
                raise ConfigError(f"bad layer section name [{name}]") from None
    numbers.sort()
    if not numbers:
        raise ConfigError("config defines no [layerN] sections")
    if numbers != list(range(1, len(numbers) + 1)):
        raise ConfigError(f"layer sections must be numbered 1..n without gaps, got {numbers}")
    layers = [_layer(cp[f"layer{n}"], n) for n in numbers]

    cfg = RunConfig(layers=layers)
    if cp.has_section("data"):
        d = cp["data"]
        if "root" in d:
            root = Path(d["root"].strip())
            cfg.data_root = root if root.is_absolute() else base / root
        cfg.train_per_class = _get(d, "train_per_class", int, cfg.train_per_class)
        cfg.test_per_class = _get(d, "test_per_class", int, None)
    if cp.has_section("model"):
        m = cp["model"]
        cfg.patch_size = _get(m, "patch_size", int, cfg.patch_size)
        cfg.spacing = _get(m, "spacing", int, cfg.spacing)
        cfg.seed = _get(m, "seed", int, cfg.seed)
        cfg.max_dict_samples = _get(m, "max_dict_samples", int, cfg.max_dict_samples)
    if cp.has_section("svm"):
        s = cp["svm"]
        cfg.svm_C = _get(s, "c", float, cfg.svm_C)
        cfg.svm_epochs = _get(s, "epochs", int, cfg.svm_epochs)
        if "c_grid" in s:
            try:
                cfg.C_grid = [float(v) for v in s["c_grid"].split(",") if v.strip()]
            except ValueError:
                raise ConfigError("[svm] C_grid must be a comma-separated list of numbers") from None
    if cp.has_section("output") and "dir" in cp["output"]:
        out = Path(cp["output"]["dir"].strip())
        cfg.output_dir = out if out.is_absolute() else base / out

    if cfg.train_per_class < 1:
        raise ConfigError("train_per_class must be >= 1")
    if cfg.patch_size % 4 or cfg.patch_size < 4 or cfg.spacing < 1:
        raise ConfigError("patch_size must be a positive multiple of 4 and spacing >= 1")
    if cfg.svm_C <= 0 or any(c <= 0 for c in cfg.C_grid):
        raise ConfigError("SVM C values must be positive")
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)
