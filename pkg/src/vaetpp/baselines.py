"""Reference models: constant-intensity exponential and log-normal mixture
decoders over a shared recurrent history embedding.

Both consume exactly the same per-type inter-event targets as the
dynamic-graph model (no representational advantage): the recurrent encoder
reads the global event stream and, at each event, the density heads read
the hidden state from just before that event.  The static-graph ablation is
the main model with ``num_intervals=1`` and lives in :mod:`vaetpp.model`.
"""

from __future__ import annotations

import torch
from torch import nn

from .blocks import MixtureHeads, lognormal_mixture_logpdf
from .data import EventSequence
from .model import EventBatch, make_batch

BASELINE_KINDS = ("exponential", "lognormmix")


class RecurrentBaseline(nn.Module):
    """GRU history encoder with an exponential or log-normal mixture head."""

    def __init__(
        self,
        kind: str,
        num_types: int,
        hidden_dim: int = 64,
        num_mix_components: int = 16,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
        self.kind = kind
        self.num_types = num_types
        self.hidden_dim = hidden_dim
        feat = 1 + num_types
        self.encoder = nn.GRU(feat, hidden_dim, batch_first=True)
        if kind == "exponential":
            self.rate_head = nn.Linear(hidden_dim, 1)
        else:
            self.mixture_heads = MixtureHeads(hidden_dim, num_mix_components)
        self.time_readout = nn.Linear(hidden_dim, 1)
        self.type_readout = nn.Linear(hidden_dim, num_types)
        self.register_buffer("log_gap_mean", torch.tensor(0.0))
        self.register_buffer("log_gap_std", torch.tensor(1.0))
        self.to(dtype)
        self._dtype = dtype

    def set_feature_standardization(self, mean: float, std: float) -> None:
        self.log_gap_mean.fill_(mean)
        self.log_gap_std.fill_(max(std, 1e-6))

    def collate(self, sequences: list[EventSequence]) -> EventBatch:
        return make_batch(sequences, 1, self.num_types, self._dtype)

    def _features(self, batch: EventBatch) -> torch.Tensor:
        std_gap = (batch.log_gap - self.log_gap_mean) / self.log_gap_std
        onehot = torch.nn.functional.one_hot(batch.types, self.num_types).to(std_gap.dtype)
        return torch.cat([std_gap.unsqueeze(-1), onehot], dim=-1)

    def history_states(self, batch: EventBatch) -> torch.Tensor:
        """Hidden state preceding each event: h[:, i] encodes events < i."""
        out, _ = self.encoder(self._features(batch))  # (B,L,H)
        return torch.cat([torch.zeros_like(out[:, :1]), out[:, :-1]], dim=1)

    def event_outputs(self, batch: EventBatch) -> dict:
        """Per-event log-density and point predictions (same keys as the
        dynamic model's decoder output)."""
        h = self.history_states(batch)
        if self.kind == "exponential":
            log_rate = self.rate_head(h).squeeze(-1)  # (B,L)
            logpdf = log_rate - torch.exp(log_rate) * batch.tau
        else:
            logpdf = lognormal_mixture_logpdf(batch.tau, self.mixture_heads(h))
        return {
            "logpdf": logpdf,
            "tau_pred": self.time_readout(h).squeeze(-1),
            "type_logits": self.type_readout(h),
        }

    def log_likelihood_batch(self, batch: EventBatch) -> tuple[torch.Tensor, dict]:
        out = self.event_outputs(batch)
        ll = (out["logpdf"] * batch.mask.to(out["logpdf"].dtype)).sum(dim=1)
        return ll, out

    def log_likelihood(self, seq: EventSequence) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-event log-likelihoods and their sum for one sequence."""
        batch = self.collate([seq])
        ll, out = self.log_likelihood_batch(batch)
        return out["logpdf"][0, : len(seq)], ll[0]

    def composite_loss_batch(
        self,
        batch: EventBatch,
        weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
        **_: object,
    ) -> tuple[torch.Tensor, dict]:
        """-w0*loglik + w1*squared time error + w2*type cross-entropy.

        Accepts and ignores the sampling keywords of the dynamic model so the
        training loop can treat all models uniformly.
        """
        ll, out = self.log_likelihood_batch(batch)
        mask = batch.mask.to(ll.dtype)
        sq = ((out["tau_pred"] - batch.tau) ** 2 * mask).sum(dim=1)
        log_probs = torch.log_softmax(out["type_logits"], dim=-1)
        picked = log_probs.gather(-1, batch.types.unsqueeze(-1)).squeeze(-1)
        pred_mask = mask.clone()
        pred_mask[:, 0] = 0.0
        xent = -(picked * pred_mask).sum(dim=1)
        loss = weights[0] * (-ll) + weights[1] * sq + weights[2] * xent
        return loss, {"log_likelihood": ll, "squared_error": sq, "cross_entropy": xent}
