"""Training loop with validation-based early stopping, plus k-fold
cross-validation producing the evaluation report.

Training minimizes the combined task loss; early stopping watches the
yield-only validation loss and restores the best-validation parameters.
Folds are plant-grouped and deterministic per seed, so single-task and
multi-task runs with the same seed share a fold plan and can be paired
fold-by-fold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import CordonExample, FoldPlan, VIEW_ORDER, make_folds, split_validation
from .imageops import PreprocessConfig, RgbImage, load_image, preprocess_image
from .metrics import ci95, mae, mean_accuracy
from .model import MtlModel, ModelConfig, mtl_loss
from .optim import OptimizerState, optimizer_step, zero_grads
from .tensor import Tensor


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 300
    batch_size: int = 8
    learning_rate: float = 1e-3
    patience: int = 25
    seed: int = 0
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError(
                f"patience must be in (0, max_epochs), got {self.patience} of {self.max_epochs}"
            )


@dataclass
class PreparedExample:
    plant: int
    cordon: str
    weight_g: float
    tensors: dict[tuple[str, int], np.ndarray]

    @property
    def key(self) -> tuple[int, str]:
        return (self.plant, self.cordon)


def prepare_examples(examples: list[CordonExample], canvas: tuple[int, int],
                     config: PreprocessConfig, reference: RgbImage,
                     cache: dict[str, np.ndarray] | None = None) -> list[PreparedExample]:
    """Run the image pipeline over every view of every example."""
    prepared = []
    for ex in examples:
        tensors = {}
        for (side, cam), path in ex.images.items():
            key = f"{ex.plant}{ex.cordon}{side}{cam}"
            if cache is not None and key in cache:
                tensors[(side, cam)] = cache[key]
                continue
            t = preprocess_image(load_image(path), reference, canvas, config)
            tensors[(side, cam)] = t
            if cache is not None:
                cache[key] = t
        prepared.append(PreparedExample(ex.plant, ex.cordon, ex.weight_g, tensors))
    return prepared


def assemble_inputs(batch: list[PreparedExample],
                    view: tuple[str, int] | None) -> list[Tensor]:
    """Stack a batch into the 4 channel tensors; a single view is duplicated
    into all channels when ``view`` is given."""
    if view is None:
        return [Tensor(np.stack([ex.tensors[v] for ex in batch])) for v in VIEW_ORDER]
    stacked = Tensor(np.stack([ex.tensors[view] for ex in batch]))
    return [stacked for _ in VIEW_ORDER]


@dataclass
class TrainRecord:
    epochs_trained: int
    best_val_loss: float
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)


def _validation_yield_loss(model: MtlModel, val: list[PreparedExample],
                           batch_size: int, view) -> float:
    sse, n = 0.0, 0
    s_g = model.config.target_scale_g
    for lo in range(0, len(val), batch_size):
        batch = val[lo:lo + batch_size]
        out = model.forward(assemble_inputs(batch, view), with_reconstructions=False)
        target = np.array([ex.weight_g for ex in batch]) / s_g
        sse += float(np.sum((out.yield_scaled.data - target) ** 2))
        n += len(batch)
    return sse / n


def train_one(model: MtlModel, train: list[PreparedExample],
              val: list[PreparedExample], config: TrainConfig,
              view: tuple[str, int] | None = None,
              shuffle_seed: int | None = None) -> TrainRecord:
    """Optimize in place; early-stop on the yield-only validation loss and
    restore the best-validation parameters."""
    if not train or not val:
        raise ValueError("train_one needs non-empty train and validation sets")
    rng = np.random.default_rng(config.seed if shuffle_seed is None else shuffle_seed)
    params = model.parameters()
    opt = OptimizerState(learning_rate=config.learning_rate)
    use_recons = model.config.use_decoders and model.config.recon_weight > 0.0

    record = TrainRecord(epochs_trained=0, best_val_loss=np.inf)
    best_state = model.state_arrays()
    wait = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        for lo in range(0, len(train), config.batch_size):
            batch = [train[i] for i in order[lo:lo + config.batch_size]]
            inputs = assemble_inputs(batch, view)
            out = model.forward(inputs, with_reconstructions=use_recons)
            weights = np.array([ex.weight_g for ex in batch])
            loss = mtl_loss(out, inputs, weights, model.config)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise DivergenceError(
                    f"non-finite training loss {loss_val} at epoch {epoch}, batch {lo // config.batch_size}"
                )
            loss.backward()
            optimizer_step(params, opt)
            zero_grads(params)
            epoch_loss += loss_val * len(batch)
        record.train_losses.append(epoch_loss / len(train))

        val_loss = _validation_yield_loss(model, val, config.batch_size, view)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        record.val_losses.append(val_loss)
        record.epochs_trained = epoch + 1
        if val_loss < record.best_val_loss:
            record.best_val_loss = val_loss
            best_state = model.state_arrays()
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    model.load_state(best_state)
    return record


def predict_batch(model: MtlModel, examples: list[PreparedExample],
                  batch_size: int, view) -> np.ndarray:
    """Clamped gram predictions for a list of examples."""
    preds = []
    s_g = model.config.target_scale_g
    for lo in range(0, len(examples), batch_size):
        batch = examples[lo:lo + batch_size]
        out = model.forward(assemble_inputs(batch, view), with_reconstructions=False)
        preds.append(np.maximum(out.yield_scaled.data, 0.0) * s_g)
    return np.concatenate(preds)


def reconstruction_mse(model: MtlModel, examples: list[PreparedExample],
                       batch_size: int, view) -> float | None:
    """Per-pixel reconstruction MSE over all views of the given examples."""
    if not model.config.use_decoders:
        return None
    sse, n = 0.0, 0
    for lo in range(0, len(examples), batch_size):
        batch = examples[lo:lo + batch_size]
        inputs = assemble_inputs(batch, view)
        out = model.forward(inputs, with_reconstructions=True)
        for recon, x in zip(out.reconstructions, inputs):
            sse += float(np.sum((recon.data - x.data) ** 2))
            n += x.size
    return sse / n


@dataclass
class FoldResult:
    fold: int
    n_test: int
    mae_g: float
    mean_accuracy: float          # against this fold's test-set mean weight
    mean_accuracy_global: float   # against the whole dataset's mean weight
    recon_mse: float | None
    epochs_trained: int
    best_val_loss: float

    def to_json_obj(self) -> dict:
        return {
            "fold": self.fold,
            "n_test": self.n_test,
            "mae_g": self.mae_g,
            "mean_accuracy": self.mean_accuracy,
            "mean_accuracy_global": self.mean_accuracy_global,
            "recon_mse": self.recon_mse,
            "epochs_trained": self.epochs_trained,
            "best_val_loss": self.best_val_loss,
        }


@dataclass
class CvReport:
    k: int
    seed: int
    fold_plan: FoldPlan
    folds: list[FoldResult]
    aggregate_mae_g: float
    aggregate_accuracy: float
    aggregate_accuracy_global: float
    ci95_mae_g: float
    aggregate_recon_mse: float | None
    predictions: list[dict]
    paired_comparison: dict | None = None

    def fold_maes(self) -> list[float]:
        return [f.mae_g for f in self.folds]

    def to_json_obj(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "fold_plan": self.fold_plan.to_json_obj(),
            "folds": [f.to_json_obj() for f in self.folds],
            "aggregate_mae_g": self.aggregate_mae_g,
            "aggregate_accuracy": self.aggregate_accuracy,
            "aggregate_accuracy_global": self.aggregate_accuracy_global,
            "ci95_mae_g": self.ci95_mae_g,
            "aggregate_recon_mse": self.aggregate_recon_mse,
            "predictions": self.predictions,
            "paired_comparison": self.paired_comparison,
        }


def _fold_seeds(seed: int, fold: int) -> tuple[int, int, int]:
    state = np.random.SeedSequence([seed, fold]).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def cross_validate(examples: list[PreparedExample], model_factory, k: int,
                   config: TrainConfig,
                   view: tuple[str, int] | None = None,
                   on_fold=None) -> CvReport:
    """Train and test across a plant-grouped k-fold plan.

    ``model_factory(seed)`` must return a fresh model; ``view`` switches on
    single-view duplication; ``on_fold(fold, model, test)`` runs after each
    fold's evaluation. Deterministic per config.seed.
    """
    plan = make_folds(examples, k, config.seed)
    dataset_mean = float(np.mean([ex.weight_g for ex in examples]))

    folds: list[FoldResult] = []
    predictions: list[dict] = []
    all_preds: list[float] = []
    all_truths: list[float] = []
    recon_sse, recon_n = 0.0, 0

    for fold in range(k):
        test = [ex for ex in examples if plan.assignments[ex.key] == fold]
        rest = [ex for ex in examples if plan.assignments[ex.key] != fold]
        model_seed, shuffle_seed, split_seed = _fold_seeds(config.seed, fold)
        train, val = split_validation(rest, config.validation_fraction, split_seed)
        model = model_factory(model_seed)
        record = train_one(model, train, val, config, view=view, shuffle_seed=shuffle_seed)

        preds = predict_batch(model, test, config.batch_size, view)
        truths = np.array([ex.weight_g for ex in test])
        fold_mae = mae(preds, truths)
        rmse = reconstruction_mse(model, test, config.batch_size, view)
        folds.append(FoldResult(
            fold=fold,
            n_test=len(test),
            mae_g=fold_mae,
            mean_accuracy=mean_accuracy(fold_mae, float(truths.mean())),
            mean_accuracy_global=mean_accuracy(fold_mae, dataset_mean),
            recon_mse=rmse,
            epochs_trained=record.epochs_trained,
            best_val_loss=record.best_val_loss,
        ))
        if rmse is not None:
            n_el = 4 * sum(ex.tensors[VIEW_ORDER[0]].size for ex in test)
            recon_sse += rmse * n_el
            recon_n += n_el
        for ex, p in zip(test, preds):
            predictions.append({
                "plant": ex.plant, "cordon": ex.cordon, "fold": fold,
                "weight_g": ex.weight_g, "predicted_g": float(p),
            })
        all_preds.extend(preds.tolist())
        all_truths.extend(truths.tolist())
        if on_fold is not None:
            on_fold(fold, model, test)

    agg_mae = mae(all_preds, all_truths)
    pooled_mean = float(np.mean(all_truths))
    return CvReport(
        k=k,
        seed=config.seed,
        fold_plan=plan,
        folds=folds,
        aggregate_mae_g=agg_mae,
        aggregate_accuracy=mean_accuracy(agg_mae, pooled_mean),
        aggregate_accuracy_global=mean_accuracy(agg_mae, dataset_mean),
        ci95_mae_g=ci95([f.mae_g for f in folds]),
        aggregate_recon_mse=(recon_sse / recon_n) if recon_n else None,
        predictions=sorted(predictions, key=lambda r: (r["plant"], r["cordon"])),
    )
