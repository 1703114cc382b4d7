"""Gradient training loop with validation-based model selection and
early stopping, plus checkpoint save/load."""

from __future__ import annotations

import copy
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import blocks
from .baselines import RecurrentBaseline
from .config import ExperimentConfig
from .data import Dataset, log_gap_stats, split_dataset
from .metrics import headline_nll
from .model import VAETPP


class TrainingDiverged(RuntimeError):
    """Raised when the optimization produces a non-finite loss."""


def build_model(config: ExperimentConfig, num_types: int) -> VAETPP | RecurrentBaseline:
    config.validate()
    if config.model in ("vaetpp", "vaetpp-static"):
        intervals = 1 if config.model == "vaetpp-static" else config.num_intervals
        return VAETPP(
            num_types=num_types,
            num_intervals=intervals,
            embed_dim=config.embed_dim,
            hidden_dim=config.hidden_dim,
            num_mix_components=config.num_mix_components,
            num_edge_types=config.num_edge_types,
            dtype=config.torch_dtype,
        )
    return RecurrentBaseline(
        kind=config.model,
        num_types=num_types,
        hidden_dim=config.hidden_dim,
        num_mix_components=config.num_mix_components,
        dtype=config.torch_dtype,
    )


@dataclass
class TrainResult:
    checkpoint_dir: str | None
    best_epoch: int
    best_val_nll: float
    final_train_nll: float
    history: list[dict] = field(default_factory=list)
    model: VAETPP | RecurrentBaseline | None = None
    splits: dict[str, str] = field(default_factory=dict)


def train(
    config: ExperimentConfig, dataset: Dataset, out_dir: str | None = None
) -> TrainResult:
    """Optimize the composite loss; keep the best validation-NLL parameters.

    Deterministic given the config seed: model init, batch order and concrete
    samples all derive from it.
    """
    config.validate()
    if not dataset.splits:
        dataset = split_dataset(dataset, config.split_fractions, config.seed)
    train_seqs = dataset.split("train")
    val_seqs = dataset.split("val")
    if not train_seqs:
        raise ValueError("training split is empty")
    selection_seqs = val_seqs if val_seqs else train_seqs
    num_types = dataset.num_types

    torch.manual_seed(config.seed)
    model = build_model(config, num_types)
    model.set_feature_standardization(*log_gap_stats(train_seqs))
    gumbel = torch.Generator().manual_seed(config.seed * 9973 + 7)
    shuffle = np.random.default_rng(config.seed + 1)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    best_val = float("inf")
    best_epoch = -1
    best_state = copy.deepcopy(model.state_dict())
    bad_epochs = 0
    history: list[dict] = []
    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        temperature = config.temperature_at(epoch)
        order = shuffle.permutation(len(train_seqs))
        epoch_loss = 0.0
        for lo in range(0, len(order), config.batch_size):
            group = [train_seqs[i] for i in order[lo : lo + config.batch_size]]
            batch = model.collate(group)
            losses, _ = model.composite_loss_batch(
                batch,
                weights=config.loss_weights,
                num_samples=config.num_elbo_samples,
                temperature=temperature,
                generator=gumbel,
            )
            loss = losses.mean()
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} "
                    f"(lr={config.learning_rate}, model={config.model})"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss) * len(group)
        val_nll = headline_nll(model, selection_seqs)
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / len(train_seqs),
            "val_nll": val_nll,
            "temperature": temperature,
            "seconds": time.perf_counter() - start,
        }
        if config.log_train_nll:
            record["train_nll"] = headline_nll(model, train_seqs)
        history.append(record)
        if val_nll < best_val:
            best_val = val_nll
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break
    model.load_state_dict(best_state)
    final_train_nll = headline_nll(model, train_seqs)
    result = TrainResult(
        checkpoint_dir=out_dir,
        best_epoch=best_epoch,
        best_val_nll=best_val,
        final_train_nll=final_train_nll,
        history=history,
        model=model,
        splits=dict(dataset.splits),
    )
    if out_dir is not None:
        save_checkpoint(out_dir, model, config, result, num_types)
    return result


def save_checkpoint(
    out_dir: str,
    model: VAETPP | RecurrentBaseline,
    config: ExperimentConfig,
    result: TrainResult,
    num_types: int,
) -> None:
    os.makedirs(out_dir, exist_ok=True)
    blocks.save_named_tensors(
        os.path.join(out_dir, "params.npz"), dict(model.state_dict())
    )
    meta = {
        "config": config.to_dict(),
        "num_types": num_types,
        "best_epoch": result.best_epoch,
        "best_val_nll": result.best_val_nll,
        "final_train_nll": result.final_train_nll,
    }
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    with open(os.path.join(out_dir, "log.jsonl"), "w", encoding="utf-8") as fh:
        for record in result.history:
            fh.write(json.dumps(record) + "\n")
    with open(os.path.join(out_dir, "splits.json"), "w", encoding="utf-8") as fh:
        json.dump(result.splits, fh)


def load_checkpoint(
    ckpt_dir: str,
) -> tuple[VAETPP | RecurrentBaseline, ExperimentConfig, dict]:
    """Rebuild the model from a checkpoint directory."""
    with open(os.path.join(ckpt_dir, "config.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    config = ExperimentConfig.from_dict(meta["config"])
    model = build_model(config, meta["num_types"])
    state = blocks.load_named_tensors(os.path.join(ckpt_dir, "params.npz"))
    model.load_state_dict(state)
    splits_path = os.path.join(ckpt_dir, "splits.json")
    if os.path.exists(splits_path):
        with open(splits_path, "r", encoding="utf-8") as fh:
            meta["splits"] = json.load(fh)
    return model, config, meta
