"""Experiment protocols behind the CLI: config-driven training, evaluation
under corruption grids, and the two-class feature-deletion benchmark.

A config is a JSON document with three sections:

    model: kind (cp|ht), components (gaussian|categorical), n_components,
           patch [ph, pw], image [H, W], pooling (ht arity),
           layers [{width, sharing}, ...] (ht) or rank (cp)
    train: iterations, batch_size, beta, weight_decay, optimizer,
           learning_rate {base, milestones, factors}, adam_beta1, adam_beta2,
           momentum, marginalization_rates, seed, checkpoint_interval
    data:  source (sklearn-digits|idx), plus per-source fields: digits
           [a, b], per_class_train, per_class_test, upscale, seed; or path
           (directory holding train-images/train-labels/t10k-* IDX files)

Schema violations are reported with their key path. Everything downstream is
deterministic given the config seeds.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .components import GAUSSIAN, gaussian_family
from .data_io import load_idx, load_sklearn_digits, patchify, write_csv
from .factorization import random_cp, random_ht
from .inference import predict_batch, uniform_prior
from .instances import MaskedInstance
from .missingness import MaskSpec, generate_mask, impute, knn_predict
from .network import Network
from .training import Dataset, LearningRateSchedule, TrainConfig, train

DEFAULT_SIGMA2 = 0.05


class ConfigError(Exception):
    """Config file violates the schema; message carries the key path."""


def _expect(cond, path, msg):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _get(d, path, key, types, default=None, required=False):
    if key not in d:
        _expect(not required, f"{path}.{key}", "missing required key")
        return default
    val = d[key]
    _expect(isinstance(val, types), f"{path}.{key}",
            f"expected {getattr(types, '__name__', types)}, got {type(val).__name__}")
    return val


def validate_config(cfg: dict) -> dict:
    _expect(isinstance(cfg, dict), "$", "config must be a JSON object")
    for section in ("model", "train", "data"):
        _expect(section in cfg, f"$.{section}", "missing section")
        _expect(isinstance(cfg[section], dict), f"$.{section}", "must be an object")
    m = cfg["model"]
    kind = _get(m, "model", "kind", str, required=True)
    _expect(kind in ("cp", "ht"), "model.kind", "must be 'cp' or 'ht'")
    comp = _get(m, "model", "components", str, default="gaussian")
    _expect(comp in ("gaussian", "categorical"), "model.components",
            "must be 'gaussian' or 'categorical'")
    _get(m, "model", "n_components", int, required=True)
    patch = _get(m, "model", "patch", list, required=True)
    _expect(len(patch) == 2 and all(isinstance(v, int) and v > 0 for v in patch),
            "model.patch", "must be two positive ints")
    image = _get(m, "model", "image", list, required=True)
    _expect(len(image) == 2 and all(isinstance(v, int) and v > 0 for v in image),
            "model.image", "must be two positive ints")
    if kind == "ht":
        layers = _get(m, "model", "layers", list, required=True)
        _expect(len(layers) >= 1, "model.layers", "needs at least one layer")
        for i, layer in enumerate(layers):
            _expect(isinstance(layer, dict), f"model.layers[{i}]", "must be an object")
            width = _get(layer, f"model.layers[{i}]", "width", int, required=True)
            _expect(width >= 1, f"model.layers[{i}].width", "must be positive")
            share = _get(layer, f"model.layers[{i}]", "sharing", str, default="none")
            _expect(share in ("none", "window", "all"),
                    f"model.layers[{i}].sharing", "must be none|window|all")
        pooling = _get(m, "model", "pooling", int, default=4)
        gh, gw = image[0] // patch[0], image[1] // patch[1]
        _expect(gh * patch[0] == image[0] and gw * patch[1] == image[1],
                "model.image", "image extents must be divisible by the patch")
        _expect(pooling ** len(layers) == gh * gw, "model.layers",
                f"pooling**len(layers) = {pooling ** len(layers)} must equal the "
                f"patch count {gh * gw}")
    else:
        rank = _get(m, "model", "rank", int, required=True)
        _expect(rank >= 1, "model.rank", "must be positive")
    t = cfg["train"]
    for key in ("iterations", "batch_size"):
        v = _get(t, "train", key, int, required=True)
        _expect(v >= 0, f"train.{key}", "must be non-negative")
    lr = _get(t, "train", "learning_rate", dict, default={"base": 0.03})
    _get(lr, "train.learning_rate", "base", (int, float), required=True)
    d = cfg["data"]
    source = _get(d, "data", "source", str, required=True)
    _expect(source in ("sklearn-digits", "idx"), "data.source",
            "must be 'sklearn-digits' or 'idx'")
    if source == "idx":
        _get(d, "data", "path", str, required=True)
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"$: not valid JSON ({exc})") from exc
    return validate_config(cfg)


@dataclass
class PreparedData:
    """Images plus their patchified view, ready for the network."""

    train_images: np.ndarray   # (n, H, W)
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    patch_shape: tuple
    grid_shape: tuple
    n_classes: int

    def patchify_images(self, images, masks=None):
        values, flags = [], []
        for i, img in enumerate(images):
            mask = None if masks is None else masks[i]
            v, f, _ = patchify(img, self.patch_shape, grid_shape=self.grid_shape, mask=mask)
            values.append(v)
            flags.append(f)
        return np.stack(values), np.stack(flags)

    @property
    def mean_image(self):
        return self.train_images.mean(axis=0)


def prepare_data(cfg: dict) -> PreparedData:
    m, d = cfg["model"], cfg["data"]
    patch = tuple(m["patch"])
    image = tuple(m["image"])
    grid = (image[0] // patch[0], image[1] // patch[1])
    if d["source"] == "sklearn-digits":
        digits = d.get("digits")
        upscale = d.get("upscale", 2)
        images, labels = load_sklearn_digits(
            digit_pair=tuple(digits) if digits else None, upscale=upscale
        )
        if images.shape[1:] != image:
            raise ConfigError(
                f"data: digits arrive as {images.shape[1:]}, config expects {image}"
            )
        rng = np.random.default_rng(d.get("seed", 0))
        per_train = d.get("per_class_train", 140)
        per_test = d.get("per_class_test", 0)  # 0 = everything left
        train_idx, test_idx = [], []
        for cls in np.unique(labels):
            pool = np.flatnonzero(labels == cls)
            pool = pool[rng.permutation(len(pool))]
            take = min(per_train, len(pool) - 1)
            train_idx.extend(pool[:take])
            rest = pool[take:]
            test_idx.extend(rest if per_test == 0 else rest[:per_test])
        train_idx, test_idx = np.array(train_idx), np.array(test_idx)
        return PreparedData(images[train_idx], labels[train_idx],
                            images[test_idx], labels[test_idx],
                            patch, grid, int(labels.max()) + 1)
    root = d["path"]
    sets = {}
    for split, img_name, lab_name in (
        ("train", "train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("test", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ):
        images, _ = load_idx(os.path.join(root, img_name))
        labels, _ = load_idx(os.path.join(root, lab_name), scale=False)
        labels = labels.astype(np.int64)
        digits = d.get("digits")
        if digits:
            keep = np.isin(labels, digits)
            images, labels = images[keep], labels[keep]
            labels = (labels == digits[1]).astype(np.int64)
        sets[split] = (images, labels)
    (tr_img, tr_lab), (te_img, te_lab) = sets["train"], sets["test"]
    rng = np.random.default_rng(d.get("seed", 0))
    per_train = d.get("per_class_train", 0)
    if per_train:
        keep = []
        for cls in np.unique(tr_lab):
            pool = np.flatnonzero(tr_lab == cls)
            keep.extend(pool[rng.permutation(len(pool))][:per_train])
        keep = np.array(keep)
        tr_img, tr_lab = tr_img[keep], tr_lab[keep]
    # pad to the configured image extents
    h, w = tuple(cfg["model"]["image"])
    def pad(imgs):
        out = np.zeros((len(imgs), h, w))
        ih, iw = imgs.shape[1:]
        out[:, :ih, :iw] = imgs
        return out
    n_classes = int(max(tr_lab.max(), te_lab.max())) + 1
    return PreparedData(pad(tr_img), tr_lab, pad(te_img), te_lab, patch, grid, n_classes)


def build_network(cfg: dict, n_classes: int, seed: int) -> Network:
    m = cfg["model"]
    rng = np.random.default_rng(seed)
    patch = tuple(m["patch"])
    image = tuple(m["image"])
    grid = (image[0] // patch[0], image[1] // patch[1])
    n = grid[0] * grid[1]
    s = patch[0] * patch[1]
    n_comp = m["n_components"]
    if m.get("components", "gaussian") == "gaussian":
        means = rng.uniform(0.0, 1.0, size=(n_comp, s))
        fam = gaussian_family(means, DEFAULT_SIGMA2)
    else:
        from .components import random_family, CATEGORICAL

        fam = random_family(CATEGORICAL, n_comp, s, rng, alphabet=m.get("alphabet", 2))
    if m["kind"] == "cp":
        params = random_cp(n, n_comp, m["rank"], n_classes, rng)
        return Network(fam, params, grid_shape=grid)
    ranks = [layer["width"] for layer in m["layers"]]
    sharing = [layer.get("sharing", "none") for layer in m["layers"]]
    params = random_ht(m.get("pooling", 4), ranks, n_comp, n_classes, rng, sharing=sharing)
    return Network(fam, params, grid_shape=grid)


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    lr = t.get("learning_rate", {"base": 0.03})
    return TrainConfig(
        beta=t.get("beta", 0.01),
        weight_decay=t.get("weight_decay", 0.0),
        learning_rate=LearningRateSchedule(
            base=lr.get("base", 0.03),
            milestones=tuple(lr.get("milestones", ())),
            factors=tuple(lr.get("factors", ())),
        ),
        optimizer=t.get("optimizer", "adam"),
        adam_beta1=t.get("adam_beta1", 0.9),
        adam_beta2=t.get("adam_beta2", 0.9),
        momentum=t.get("momentum", 0.9),
        batch_size=t.get("batch_size", 32),
        iterations=t.get("iterations", 1000),
        marginalization_rates=tuple(t.get("marginalization_rates", ())),
        seed=t.get("seed", 0),
        checkpoint_interval=t.get("checkpoint_interval", 0),
    )


def train_from_config(cfg: dict, seed_override=None, on_checkpoint=None):
    """Build the dataset and network, run training. Returns (net, trace, data)."""
    data = prepare_data(cfg)
    tcfg = train_config(cfg)
    if seed_override is not None:
        tcfg.seed = seed_override
    net = build_network(cfg, data.n_classes, tcfg.seed)
    values, flags = data.patchify_images(data.train_images)
    dataset = Dataset(values=values, labels=data.train_labels, mask=flags)
    trace = train(net, dataset, tcfg, on_checkpoint=on_checkpoint)
    return net, trace, data


def accuracy(pred, labels) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))


def eval_grid(net: Network, data: PreparedData, specs, seed=0, threads=1):
    """Accuracy of the four predictors per corruption cell.

    Returns rows [kind, param, acc_marginalized, acc_knn, acc_zero, acc_mean].
    The marginalized predictor sees (values, mask); imputation baselines see
    completed instances through the same network; KNN votes on raw pixels
    with the mask-aware metric.
    """
    rng = np.random.default_rng(seed)
    prior = uniform_prior(net.n_classes)
    train_flat = data.train_images.reshape(len(data.train_images), -1)
    mean_img = data.mean_image
    mean_patches, _, _ = patchify(mean_img, data.patch_shape, grid_shape=data.grid_shape)
    rows = []
    for spec in specs:
        pixel_masks = np.stack([
            generate_mask(spec, img, rng) for img in data.test_images
        ])
        if spec.kind == "feature_deletion":
            shown = np.where(pixel_masks, data.test_images, 0.0)
        else:
            shown = data.test_images
        values, flags = data.patchify_images(shown, masks=pixel_masks)
        marg_pred = predict_batch(net, values, flags, prior=prior, threads=threads)
        zero_values, zero_flags = [], []
        mean_values = []
        for i in range(len(values)):
            inst = MaskedInstance(values[i], flags[i])
            zi = impute(inst, "zero")
            mi = impute(inst, "mean", dataset_mean=mean_patches)
            zero_values.append(zi.values)
            mean_values.append(mi.values)
            zero_flags.append(zi.mask)
        full = np.stack(zero_flags)
        zero_pred = predict_batch(net, np.stack(zero_values), full, prior=prior, threads=threads)
        mean_pred = predict_batch(net, np.stack(mean_values), full, prior=prior, threads=threads)
        knn_pred = np.array([
            knn_predict(train_flat, data.train_labels,
                        shown[i].reshape(-1), pixel_masks[i].reshape(-1), k=5)
            for i in range(len(shown))
        ])
        rows.append([
            spec.kind, spec.param_label,
            accuracy(marg_pred, data.test_labels),
            accuracy(knn_pred, data.test_labels),
            accuracy(zero_pred, data.test_labels),
            accuracy(mean_pred, data.test_labels),
        ])
    return rows


EVAL_COLUMNS = ["mask_kind", "mask_param", "acc_marginalized", "acc_knn",
                "acc_zero_impute", "acc_mean_impute"]


def feature_deletion_benchmark(net: Network, data: PreparedData, deletions,
                               repeats=10, seed=0, threads=1):
    """Mean marginalized-Bayes accuracy per deletion count.

    Within each repeat the deletion sets are nested (one random order of each
    image's non-zero pixels, truncated per cell), so cells share all
    randomness except the marginal deletions. That keeps the estimated curve
    an unbiased per-cell estimate while removing mask-redraw noise from the
    comparison between neighbouring cells.

    Returns rows [n_deleted, mean_accuracy].
    """
    rng = np.random.default_rng(seed)
    prior = uniform_prior(net.n_classes)
    deletions = [int(n) for n in deletions]
    sums = {n: 0.0 for n in deletions}
    for _ in range(repeats):
        orders = []
        for img in data.test_images:
            nonzero = np.argwhere(img != 0.0)
            orders.append(nonzero[rng.permutation(len(nonzero))])
        for n_del in deletions:
            masks = np.ones((len(data.test_images),) + data.test_images.shape[1:], dtype=bool)
            for i, order in enumerate(orders):
                take = order[: min(n_del, len(order))]
                if len(take):
                    masks[i, take[:, 0], take[:, 1]] = False
            shown = np.where(masks, data.test_images, 0.0)
            values, flags = data.patchify_images(shown, masks=masks)
            pred = predict_batch(net, values, flags, prior=prior, threads=threads)
            sums[n_del] += accuracy(pred, data.test_labels)
    return [[n, sums[n] / repeats] for n in deletions]


FEATURE_DELETION_COLUMNS = ["n_deleted", "mean_accuracy"]


def parse_mask_specs(kind: str, params: str):
    """CLI grid: comma list of cell parameters for one mask kind.

    iid: probabilities; rectangles: 'NxW' pairs; feature_deletion: counts.
    An empty parameter string is an empty grid.
    """
    if not params.strip():
        return []
    specs = []
    for tok in params.split(","):
        tok = tok.strip()
        if kind == "iid":
            specs.append(MaskSpec("iid", p=float(tok)))
        elif kind == "rectangles":
            n, w = tok.lower().split("x")
            specs.append(MaskSpec("rectangles", n_rects=int(n), rect_size=int(w)))
        elif kind == "feature_deletion":
            specs.append(MaskSpec("feature_deletion", n_delete=int(tok)))
        else:
            raise ValueError(f"unknown mask kind {kind!r}")
    return specs
