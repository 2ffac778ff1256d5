"""Evaluation protocols: per-user LOOCV, location and environment holdouts.

Splits are built from sample provenance metadata (user_id, location_id,
environment). Every fold trains a fresh seeded model, selects the best
epoch on a validation slice carved from its training samples, and counts a
confusion matrix on the held-out samples. Fold accuracies are averaged
unweighted.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ManifestError
from .model import CnnTcnConfig, TrainConfig, build_model, evaluate_accuracy, train_model
from .seeding import child_seed, substream

PROTOCOLS = ("loocv", "location", "environment", "random")

# the designated training position for the location-holdout protocol
TRAIN_LOCATION = (0.75, 0.0)


@dataclass
class SplitPlan:
    kind: str
    fold_id: str
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def validate(self, n_total: int | None = None) -> None:
        tr, va, te = set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())
        if tr & te or tr & va or va & te:
            raise ConfigError(f"fold {self.fold_id}: train/val/test overlap")
        if not tr or not te:
            raise ConfigError(f"fold {self.fold_id}: empty train or test split")
        if n_total is not None:
            if not (tr | va | te) <= set(range(n_total)):
                raise ConfigError(f"fold {self.fold_id}: index out of range")
            # holdout protocols cover only the involved groups; full coverage
            # is required for the partitioning kinds
            if self.kind in ("loocv", "random") and len(tr) + len(va) + len(te) != n_total:
                raise ConfigError(f"fold {self.fold_id}: indices do not cover the dataset")


def _carve_validation(train_ids, labels, rng, fraction=0.15):
    """Per-class validation slice; always leaves >= 1 training sample per class."""
    train_ids = np.asarray(train_ids, dtype=np.intp)
    val = []
    for c in np.unique(labels[train_ids]):
        ids = train_ids[labels[train_ids] == c]
        ids = ids[rng.permutation(len(ids))]
        n_val = min(int(round(fraction * len(ids))), len(ids) - 1)
        val.extend(ids[:n_val].tolist())
    val_set = set(val)
    train = np.array(sorted(i for i in train_ids.tolist() if i not in val_set), dtype=np.intp)
    return train, np.array(sorted(val), dtype=np.intp)


def _require(meta, key):
    missing = [i for i, m in enumerate(meta) if key not in m]
    if missing:
        raise ManifestError(f"manifest row {missing[0]} lacks required field {key!r}")
    return np.array([m[key] for m in meta])


def make_splits(meta: list, kind: str, labels=None, val_fraction: float = 0.15,
                seed: int = 0) -> list:
    """Build SplitPlans from per-sample metadata dicts.

    loocv: one fold per user (test = that user). location: train at
    TRAIN_LOCATION, one test fold per other location. environment: train in
    the Classroom analog, one test fold per other environment. random: a
    single shuffled 70/15/15-style split."""
    if kind not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {kind!r}; expected one of {PROTOCOLS}")
    n = len(meta)
    if labels is None:
        labels = _require(meta, "class_id").astype(np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    all_idx = np.arange(n, dtype=np.intp)
    rng = substream(seed, "val-carve")
    plans = []

    if kind == "loocv":
        users = _require(meta, "user_id").astype(int)
        for u in sorted(set(users.tolist())):
            test = all_idx[users == u]
            train, val = _carve_validation(all_idx[users != u], labels, rng, val_fraction)
            plans.append(SplitPlan(kind, f"user:{u}", train, val, test))
    elif kind == "location":
        loc = _require(meta, "location_id").astype(int)
        ranges = _require(meta, "base_range").astype(float)
        azim = _require(meta, "azimuth_deg").astype(float)
        at_train = (np.abs(ranges - TRAIN_LOCATION[0]) < 1e-9) & \
                   (np.abs(azim - TRAIN_LOCATION[1]) < 1e-9)
        if not at_train.any():
            raise ManifestError(
                f"no samples at the training location {TRAIN_LOCATION}; cannot hold out"
            )
        train_pool = all_idx[at_train]
        for l in sorted(set(loc[~at_train].tolist())):
            test = all_idx[(loc == l) & ~at_train]
            train, val = _carve_validation(train_pool, labels, rng, val_fraction)
            plans.append(SplitPlan(kind, f"location:{l}", train, val, test))
    elif kind == "environment":
        env = _require(meta, "environment")
        is_classroom = env == "Classroom"
        if not is_classroom.any():
            raise ManifestError("no Classroom samples to train the environment holdout")
        train_pool = all_idx[is_classroom]
        for e in sorted(set(env[~is_classroom].tolist())):
            test = all_idx[env == e]
            train, val = _carve_validation(train_pool, labels, rng, val_fraction)
            plans.append(SplitPlan(kind, f"environment:{e}", train, val, test))
    else:  # random
        order = substream(seed, "random-split").permutation(n)
        n_test = max(1, int(round(0.2 * n)))
        test = np.sort(order[:n_test]).astype(np.intp)
        train, val = _carve_validation(np.sort(order[n_test:]), labels, rng, val_fraction)
        plans.append(SplitPlan(kind, "random:0", train, val, test))

    for p in plans:
        p.validate(n)
    return plans


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [K, K], rows = true class, cols = predicted
    class_names: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else float("nan")

    @property
    def per_class_recall(self) -> np.ndarray:
        row = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(row > 0, np.diag(self.counts) / row, np.nan)

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "counts": self.counts.tolist(),
            "accuracy": self.accuracy,
        }

    @classmethod
    def from_predictions(cls, y_true, y_pred, class_names) -> "ConfusionMatrix":
        k = len(class_names)
        counts = np.zeros((k, k), dtype=np.int64)
        for t, p in zip(np.asarray(y_true, int), np.asarray(y_pred, int)):
            counts[t, p] += 1
        return cls(counts, tuple(class_names))


@dataclass
class FoldResult:
    fold_id: str
    accuracy: float
    confusion: ConfusionMatrix
    best_epoch: int
    best_val_acc: float
    train_seed: int


@dataclass
class ProtocolResult:
    protocol: str
    model_kind: str
    folds: list
    master_seed: int

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds]))

    @property
    def total_confusion(self) -> ConfusionMatrix:
        total = sum(f.confusion.counts for f in self.folds)
        return ConfusionMatrix(total, self.folds[0].confusion.class_names)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "model": self.model_kind,
            "master_seed": self.master_seed,
            "mean_accuracy": self.mean_accuracy,
            "folds": [
                {
                    "id": f.fold_id,
                    "accuracy": f.accuracy,
                    "best_epoch": f.best_epoch,
                    "best_val_acc": f.best_val_acc,
                    "train_seed": f.train_seed,
                    "confusion": f.confusion.to_dict(),
                }
                for f in self.folds
            ],
        }


def run_protocol(
    x: np.ndarray,
    labels: np.ndarray,
    plans: list,
    model_kind: str = "cnn-tcn",
    model_cfg: CnnTcnConfig | None = None,
    train_cfg: TrainConfig | None = None,
    master_seed: int = 0,
    class_names=None,
    log=None,
    workers: int = 1,
) -> ProtocolResult:
    """Train one fresh model per fold and aggregate confusion counts.

    Folds are independent (fresh model, derived seed), so `workers` > 1 runs
    them on a thread pool without changing any result."""
    model_cfg = model_cfg or CnnTcnConfig()
    train_cfg = train_cfg or TrainConfig()
    if class_names is None:
        class_names = [str(i) for i in range(model_cfg.n_classes)]
    labels = np.asarray(labels, dtype=np.intp)

    def run_fold(fi: int, plan: SplitPlan) -> FoldResult:
        fold_seed = child_seed(master_seed, "fold", fi)
        model = build_model(model_kind, model_cfg, init_seed=fold_seed)
        fold_train = TrainConfig(
            lr=train_cfg.lr, batch_size=train_cfg.batch_size, epochs=train_cfg.epochs,
            seed=fold_seed, patience=train_cfg.patience,
        )
        res = train_model(model, x, labels, plan.train, plan.val, fold_train,
                          class_names=class_names,
                          log=(lambda s, _f=plan.fold_id: log(f"[{_f}] {s}")) if log else None)
        preds = []
        for i in range(0, len(plan.test), 64):
            chunk = x[plan.test[i : i + 64]]
            preds.extend(model.forward(chunk, train=False).argmax(axis=1).tolist())
        conf = ConfusionMatrix.from_predictions(labels[plan.test], preds, class_names)
        if log:
            log(f"[{plan.fold_id}] test accuracy {conf.accuracy:.4f}")
        return FoldResult(plan.fold_id, conf.accuracy, conf,
                          res.best_epoch, res.best_val_acc, fold_seed)

    if workers > 1 and len(plans) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            folds = list(pool.map(run_fold, range(len(plans)), plans))
    else:
        folds = [run_fold(fi, plan) for fi, plan in enumerate(plans)]
    return ProtocolResult(protocol=plans[0].kind if plans else "none",
                          model_kind=model_kind, folds=folds, master_seed=master_seed)
