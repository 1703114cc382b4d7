"""Dynamic-graph variational auto-encoder over marked event sequences.

The model partitions each sequence's horizon into K regular sub-intervals
and infers, per ordered type pair and sub-interval, a categorical edge
latent (edge type 0 = no dependency).  A fully-connected GNN over per-event
embeddings feeds interval-level relation states into forward/backward
recurrences that parameterize the prior and posterior over the latents; a
graph recurrent decoder, whose messages are gated by the sampled latents,
parameterizes log-normal mixtures over per-type inter-event times.

Tensor shape conventions: B sequences, L padded events, U types,
P = U*(U-1) ordered pairs, K sub-intervals, E edge types.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import blocks
from .data import EventSequence, SubIntervalPartition, type_view
from .blocks import (
    MLP,
    ConcreteSample,
    MixtureHeads,
    MixtureParams,
    categorical_kl,
    gumbel_softmax_sample,
    lognormal_mixture_logpdf,
    lognormal_mixture_mean,
)

DEFAULT_TEMPERATURE = 0.5


@dataclass
class EventBatch:
    """Padded tensor view of a list of sequences."""

    types: torch.Tensor         # (B, L) long
    mask: torch.Tensor          # (B, L) bool
    times: torch.Tensor         # (B, L)
    tau: torch.Tensor           # (B, L) same-type inter-event time (target)
    log_gap: torch.Tensor       # (B, L) log tau, unstandardized
    interval_ids: torch.Tensor  # (B, L) long
    last_idx: torch.Tensor      # (B, L, U) long; latest event index of each type, -1 if none
    lengths: torch.Tensor       # (B,) long
    seq_ids: list[str]
    num_types: int
    num_intervals: int

    @property
    def batch_size(self) -> int:
        return self.types.shape[0]

    @property
    def num_events(self) -> int:
        return int(self.mask.sum().item())


def make_batch(
    sequences: list[EventSequence],
    num_intervals: int,
    num_types: int,
    dtype: torch.dtype = torch.float64,
) -> EventBatch:
    """Collate sequences into padded tensors.

    Per-event targets are the same-type inter-event times from
    :func:`vaetpp.data.type_view` (first gap measured from t=0, zero gaps
    jittered).  Padded positions carry tau=1 and are masked out.
    """
    batch = len(sequences)
    max_len = max(1, max((len(s) for s in sequences), default=1))
    types = np.zeros((batch, max_len), dtype=np.int64)
    mask = np.zeros((batch, max_len), dtype=bool)
    times = np.zeros((batch, max_len), dtype=np.float64)
    tau = np.ones((batch, max_len), dtype=np.float64)
    interval_ids = np.zeros((batch, max_len), dtype=np.int64)
    last_idx = np.full((batch, max_len, num_types), -1, dtype=np.int64)
    lengths = np.zeros(batch, dtype=np.int64)
    for b, seq in enumerate(sequences):
        if seq.num_types != num_types:
            raise ValueError(
                f"sequence {seq.seq_id} has {seq.num_types} types, expected {num_types}"
            )
        n = len(seq)
        lengths[b] = n
        if n == 0:
            continue
        t = seq.times
        ty = seq.type_ids
        types[b, :n] = ty
        mask[b, :n] = True
        times[b, :n] = t
        part = SubIntervalPartition.regular(seq.horizon, num_intervals)
        interval_ids[b, :n] = part.assign(t)
        view = type_view(seq)
        cursor = np.zeros(num_types, dtype=np.int64)
        current = np.full(num_types, -1, dtype=np.int64)
        for i in range(n):
            u = ty[i]
            tau[b, i] = view.inter_event_times[u][cursor[u]]
            cursor[u] += 1
            current[u] = i
            last_idx[b, i] = current
    return EventBatch(
        types=torch.from_numpy(types),
        mask=torch.from_numpy(mask),
        times=torch.from_numpy(times).to(dtype),
        tau=torch.from_numpy(tau).to(dtype),
        log_gap=torch.from_numpy(np.log(tau)).to(dtype),
        interval_ids=torch.from_numpy(interval_ids),
        last_idx=torch.from_numpy(last_idx),
        lengths=torch.from_numpy(lengths),
        seq_ids=[s.seq_id for s in sequences],
        num_types=num_types,
        num_intervals=num_intervals,
    )


@dataclass
class EdgeLatentField:
    """Prior/posterior logits and (optionally) a sampled relaxation, per
    (interval, ordered pair)."""

    prior_logits: torch.Tensor      # (K, P, E)
    posterior_logits: torch.Tensor  # (K, P, E)
    sample: ConcreteSample | None = None


@dataclass
class NextEventPrediction:
    """Per-type next-event time predictions and a next-type distribution."""

    expected_times: np.ndarray  # (U,) previous same-type time + mixture mean
    point_times: np.ndarray     # (U,) previous same-type time + linear readout
    type_probs: np.ndarray      # (U,)


class VAETPP(nn.Module):
    """Variational auto-encoder temporal point process with per-interval
    edge latents.  ``num_intervals=1`` is the static-graph ablation."""

    def __init__(
        self,
        num_types: int,
        num_intervals: int,
        embed_dim: int = 64,
        hidden_dim: int = 64,
        num_mix_components: int = 16,
        num_edge_types: int = 2,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if num_types < 2:
            raise ValueError("dynamic-graph model needs at least two event types")
        if num_intervals < 1:
            raise ValueError("num_intervals must be >= 1")
        if num_edge_types < 2:
            raise ValueError("need at least two edge types (type 0 = no dependency)")
        self.num_types = num_types
        self.num_intervals = num_intervals
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.num_mix_components = num_mix_components
        self.num_edge_types = num_edge_types

        u, d, h, e = num_types, embed_dim, hidden_dim, num_edge_types
        feat = 1 + u  # standardized log-gap + type one-hot
        # prior/encoder (shared up to the output heads)
        self.embed = nn.Linear(feat, d)
        self.node_mlp1 = MLP([d, h, h], "elu")
        self.edge_mlp1 = MLP([2 * h, h, h], "elu")
        self.node_mlp2 = MLP([h, h, h], "elu")
        self.edge_mlp2 = MLP([2 * h, h, h], "elu")
        self.interval_mlp = MLP([h, h, h], ["relu", "identity"])
        self.interval_rnn_fwd = nn.GRUCell(h, h)
        self.interval_rnn_bwd = nn.GRUCell(h, h)
        self.prior_head = MLP([h, h, e], ["relu", "identity"])
        self.posterior_head = MLP([2 * h, h, e], ["relu", "identity"])
        # decoder (one message MLP per non-null edge type)
        self.decoder_embed = nn.Linear(feat, h)
        self.decoder_edge_mlps = nn.ModuleList(
            MLP([2 * h, h, h], "elu") for _ in range(e - 1)
        )
        self.decoder_rnn = nn.GRUCell(2 * h, h)
        self.mixture_heads = MixtureHeads(h, num_mix_components)
        self.time_readout = nn.Linear(h, 1)
        self.type_readout = nn.Linear(h, u)

        target, source = zip(*[(v, w) for v in range(u) for w in range(u) if w != v])
        self.register_buffer("pair_target", torch.tensor(target, dtype=torch.long))
        self.register_buffer("pair_source", torch.tensor(source, dtype=torch.long))
        self.register_buffer("log_gap_mean", torch.tensor(0.0))
        self.register_buffer("log_gap_std", torch.tensor(1.0))
        self.to(dtype)
        self._dtype = dtype

    @property
    def num_pairs(self) -> int:
        return self.num_types * (self.num_types - 1)

    def set_feature_standardization(self, mean: float, std: float) -> None:
        self.log_gap_mean.fill_(mean)
        self.log_gap_std.fill_(max(std, 1e-6))

    # ------------------------------------------------------------------ #
    # shared featurization and batching                                  #
    # ------------------------------------------------------------------ #

    def collate(self, sequences: list[EventSequence]) -> EventBatch:
        return make_batch(sequences, self.num_intervals, self.num_types, self._dtype)

    def _single(self, seq: EventSequence) -> EventBatch:
        return self.collate([seq])

    def _features(self, batch: EventBatch) -> torch.Tensor:
        std_gap = (batch.log_gap - self.log_gap_mean) / self.log_gap_std
        onehot = torch.nn.functional.one_hot(batch.types, self.num_types).to(std_gap.dtype)
        return torch.cat([std_gap.unsqueeze(-1), onehot], dim=-1)

    # ------------------------------------------------------------------ #
    # prior / posterior over edge latents                                #
    # ------------------------------------------------------------------ #

    def _encode(self, batch: EventBatch) -> dict:
        bsz, max_len = batch.types.shape
        u, h = self.num_types, self.hidden_dim
        y = self.embed(self._features(batch))  # (B,L,D)
        # carry-forward node features: each type's most recent event embedding
        idx = batch.last_idx.clamp(min=0).reshape(bsz, max_len * u, 1)
        node_y = y.gather(1, idx.expand(-1, -1, self.embed_dim))
        node_y = node_y.reshape(bsz, max_len, u, self.embed_dim)
        node_y = node_y * (batch.last_idx >= 0).unsqueeze(-1)
        # fully-connected GNN: node -> edge -> node -> edge
        h1 = self.node_mlp1(node_y)  # (B,L,U,H)
        e1 = self.edge_mlp1(
            torch.cat([h1[..., self.pair_target, :], h1[..., self.pair_source, :]], -1)
        )  # (B,L,P,H)
        incoming = torch.zeros_like(h1).index_add(2, self.pair_target, e1)
        h2 = self.node_mlp2(incoming)
        rel = self.edge_mlp2(
            torch.cat([h2[..., self.pair_target, :], h2[..., self.pair_source, :]], -1)
        )  # (B,L,P,H)
        # per-interval mean pooling (empty interval -> zero vector)
        pooled = []
        for k in range(self.num_intervals):
            w = ((batch.interval_ids == k) & batch.mask).to(rel.dtype)  # (B,L)
            count = w.sum(dim=1).clamp(min=1.0)
            pooled.append((rel * w[:, :, None, None]).sum(dim=1) / count[:, None, None])
        interval_states = self.interval_mlp(torch.stack(pooled, dim=1))  # (B,K,P,H)
        # forward / backward recurrences over intervals, zero initial states
        flat = interval_states.reshape(bsz, self.num_intervals, -1, h)
        state = flat.new_zeros(bsz * self.num_pairs, h)
        fwd = []
        for k in range(self.num_intervals):
            state = self.interval_rnn_fwd(flat[:, k].reshape(-1, h), state)
            fwd.append(state.reshape(bsz, self.num_pairs, h))
        fwd = torch.stack(fwd, dim=1)  # (B,K,P,H)
        state = flat.new_zeros(bsz * self.num_pairs, h)
        bwd = [None] * self.num_intervals
        for k in reversed(range(self.num_intervals)):
            state = self.interval_rnn_bwd(flat[:, k].reshape(-1, h), state)
            bwd[k] = state.reshape(bsz, self.num_pairs, h)
        bwd = torch.stack(bwd, dim=1)
        return {
            "event_embeddings": y,
            "relation_embeddings": rel,
            "interval_states": interval_states,
            "forward_states": fwd,
            "backward_states": bwd,
            "prior_logits": self.prior_head(fwd),
            "posterior_logits": self.posterior_head(torch.cat([bwd, fwd], dim=-1)),
        }

    def sample_edges(
        self,
        posterior_logits: torch.Tensor,
        temperature: float = DEFAULT_TEMPERATURE,
        generator: torch.Generator | None = None,
        hard: bool = False,
    ) -> ConcreteSample:
        return gumbel_softmax_sample(posterior_logits, temperature, generator, hard)

    @staticmethod
    def mode_latents(logits: torch.Tensor) -> torch.Tensor:
        """Hard one-hot at the argmax of the given per-edge logits."""
        index = logits.argmax(dim=-1, keepdim=True)
        return torch.zeros_like(logits).scatter_(-1, index, 1.0)

    def no_edge_latents(self, batch_size: int = 1) -> torch.Tensor:
        """Hard latents fixed to edge type 0 (no dependency) everywhere."""
        z = torch.zeros(
            batch_size,
            self.num_intervals,
            self.num_pairs,
            self.num_edge_types,
            dtype=self._dtype,
        )
        z[..., 0] = 1.0
        return z

    # ------------------------------------------------------------------ #
    # decoder                                                            #
    # ------------------------------------------------------------------ #

    def _decode(self, batch: EventBatch, z: torch.Tensor, record_states: bool = False) -> dict:
        """Run the edge-gated graph recurrence over the batch.

        ``z`` has shape (B, K, P, E).  A type's hidden state updates at an
        event timestamp only if it fired or receives a non-zero aggregate
        message, so hard no-dependency latents leave it untouched by other
        types' events.
        """
        bsz, max_len = batch.types.shape
        u, h = self.num_types, self.hidden_dim
        if z.shape != (bsz, self.num_intervals, self.num_pairs, self.num_edge_types):
            raise ValueError(f"latent field has shape {tuple(z.shape)}")
        feats = self._features(batch)
        states = z.new_zeros(bsz, u, h)
        rows = torch.arange(bsz)
        type_range = torch.arange(u)
        logpdf, tau_pred, next_type_logits = [], [], []
        omegas, mus, sigmas = [], [], []
        trajectory = [states] if record_states else None
        for i in range(max_len):
            fired = batch.types[:, i]
            step_mask = batch.mask[:, i]
            pre = states[rows, fired]  # (B,H) state preceding the event
            mix = self.mixture_heads(pre)
            logpdf.append(lognormal_mixture_logpdf(batch.tau[:, i], mix))
            tau_pred.append(self.time_readout(pre).squeeze(-1))
            omegas.append(mix.omega)
            mus.append(mix.mu)
            sigmas.append(mix.sigma)
            # edge-gated messages between current states
            z_i = z[rows, batch.interval_ids[:, i]]  # (B,P,E)
            pair_in = torch.cat(
                [states[:, self.pair_target], states[:, self.pair_source]], dim=-1
            )
            msg = z_i[..., 1:2] * self.decoder_edge_mlps[0](pair_in)
            for e, mlp in enumerate(self.decoder_edge_mlps[1:], start=2):
                msg = msg + z_i[..., e : e + 1] * mlp(pair_in)
            agg = z.new_zeros(bsz, u, h).index_add(1, self.pair_target, msg)
            own = z.new_zeros(bsz, u, h)
            own[rows, fired] = self.decoder_embed(feats[:, i])
            gru_in = torch.cat([agg, own], dim=-1)
            new_states = self.decoder_rnn(gru_in.reshape(bsz * u, 2 * h), states.reshape(bsz * u, h))
            update = (type_range[None, :] == fired[:, None]) | (agg != 0).any(dim=-1)
            update = update & step_mask[:, None]
            states = torch.where(update[..., None], new_states.reshape(bsz, u, h), states)
            next_type_logits.append(self.type_readout(states[rows, fired]))
            if record_states:
                trajectory.append(states)
        type_logits = torch.stack(
            [torch.zeros_like(next_type_logits[0])] + next_type_logits[:-1], dim=1
        )
        out = {
            "logpdf": torch.stack(logpdf, dim=1),          # (B,L)
            "tau_pred": torch.stack(tau_pred, dim=1),      # (B,L)
            "type_logits": type_logits,                    # (B,L,U)
            "final_states": states,                        # (B,U,H)
            "mixture": MixtureParams(
                omega=torch.stack(omegas, dim=1),
                mu=torch.stack(mus, dim=1),
                sigma=torch.stack(sigmas, dim=1),
            ),
        }
        if record_states:
            out["state_trajectory"] = torch.stack(trajectory, dim=1)  # (B,L+1,U,H)
        return out

    # ------------------------------------------------------------------ #
    # objectives (batched)                                               #
    # ------------------------------------------------------------------ #

    def elbo_batch(
        self,
        batch: EventBatch,
        num_samples: int = 1,
        temperature: float = DEFAULT_TEMPERATURE,
        generator: torch.Generator | None = None,
        hard: bool = False,
        encoded: dict | None = None,
    ) -> tuple[torch.Tensor, dict]:
        """Per-sequence ELBO: E_q[sum log p(tau|z)] - sum_k KL(q(z^k)||p(z^k))."""
        enc = encoded if encoded is not None else self._encode(batch)
        kl_pairs = categorical_kl(enc["posterior_logits"], enc["prior_logits"])  # (B,K,P)
        kl_per_interval = kl_pairs.sum(dim=-1)  # (B,K)
        kl = kl_per_interval.sum(dim=-1)        # (B,)
        mask = batch.mask.to(kl.dtype)
        recon = 0.0
        last_decode = None
        for _ in range(num_samples):
            sample = self.sample_edges(enc["posterior_logits"], temperature, generator, hard)
            last_decode = self._decode(batch, sample.value)
            recon = recon + (last_decode["logpdf"] * mask).sum(dim=1)
        recon = recon / num_samples
        elbo = recon - kl
        diagnostics = {
            "reconstruction": recon,
            "kl": kl,
            "kl_per_interval": kl_per_interval,
            "decode": last_decode,
            "encoded": enc,
        }
        return elbo, diagnostics

    def prediction_losses(self, batch: EventBatch, decode: dict) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-sequence squared time error and type cross-entropy."""
        mask = batch.mask.to(decode["tau_pred"].dtype)
        sq = ((decode["tau_pred"] - batch.tau) ** 2 * mask).sum(dim=1)
        log_probs = torch.log_softmax(decode["type_logits"], dim=-1)
        picked = log_probs.gather(-1, batch.types.unsqueeze(-1)).squeeze(-1)  # (B,L)
        pred_mask = mask.clone()
        pred_mask[:, 0] = 0.0  # the first event has no history to predict from
        xent = -(picked * pred_mask).sum(dim=1)
        return sq, xent

    def composite_loss_batch(
        self,
        batch: EventBatch,
        weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
        num_samples: int = 1,
        temperature: float = DEFAULT_TEMPERATURE,
        generator: torch.Generator | None = None,
        hard: bool = False,
    ) -> tuple[torch.Tensor, dict]:
        """-w0*ELBO + w1*squared time error + w2*type cross-entropy, per sequence."""
        elbo, diag = self.elbo_batch(batch, num_samples, temperature, generator, hard)
        sq, xent = self.prediction_losses(batch, diag["decode"])
        loss = weights[0] * (-elbo) + weights[1] * sq + weights[2] * xent
        diag.update({"squared_error": sq, "cross_entropy": xent})
        return loss, diag

    # ------------------------------------------------------------------ #
    # single-sequence operations                                         #
    # ------------------------------------------------------------------ #

    def embed_events(self, seq: EventSequence) -> torch.Tensor:
        """Per-event embeddings of width ``embed_dim``."""
        batch = self._single(seq)
        return self.embed(self._features(batch))[0, : len(seq)]

    def relation_embeddings(self, seq: EventSequence) -> torch.Tensor:
        """Per-timestamp relation embeddings, shape (L, P, H)."""
        batch = self._single(seq)
        return self._encode(batch)["relation_embeddings"][0, : len(seq)]

    def aggregate_interval(self, seq: EventSequence) -> torch.Tensor:
        """Per-interval relation states h^k, shape (K, P, H)."""
        return self._encode(self._single(seq))["interval_states"][0]

    def prior_logits(self, seq: EventSequence) -> torch.Tensor:
        return self._encode(self._single(seq))["prior_logits"][0]

    def posterior_logits(self, seq: EventSequence) -> torch.Tensor:
        return self._encode(self._single(seq))["posterior_logits"][0]

    def infer_latents(
        self,
        seq: EventSequence,
        temperature: float = DEFAULT_TEMPERATURE,
        generator: torch.Generator | None = None,
        hard: bool = False,
        sample: bool = True,
    ) -> EdgeLatentField:
        enc = self._encode(self._single(seq))
        drawn = (
            self.sample_edges(enc["posterior_logits"][0], temperature, generator, hard)
            if sample
            else None
        )
        return EdgeLatentField(
            prior_logits=enc["prior_logits"][0],
            posterior_logits=enc["posterior_logits"][0],
            sample=drawn,
        )

    def decode_hidden(self, seq: EventSequence, z: EdgeLatentField | torch.Tensor) -> dict:
        """Decoder states and per-event mixture parameters under given latents."""
        if isinstance(z, EdgeLatentField):
            if z.sample is None:
                raise ValueError("latent field has no sample; draw one first")
            z = z.sample.value
        batch = self._single(seq)
        out = self._decode(batch, z.unsqueeze(0), record_states=True)
        n = len(seq)
        return {
            "logpdf": out["logpdf"][0, :n],
            "tau_pred": out["tau_pred"][0, :n],
            "type_logits": out["type_logits"][0, :n],
            "mixture": MixtureParams(
                omega=out["mixture"].omega[0, :n],
                mu=out["mixture"].mu[0, :n],
                sigma=out["mixture"].sigma[0, :n],
            ),
            "state_trajectory": out["state_trajectory"][0],
            "final_states": out["final_states"][0],
        }

    def elbo(
        self,
        seq: EventSequence,
        num_samples: int = 1,
        temperature: float = DEFAULT_TEMPERATURE,
        generator: torch.Generator | None = None,
        hard: bool = False,
    ) -> tuple[torch.Tensor, dict]:
        value, diag = self.elbo_batch(
            self._single(seq), num_samples, temperature, generator, hard
        )
        return value[0], {
            "reconstruction": diag["reconstruction"][0],
            "kl": diag["kl"][0],
            "kl_per_interval": diag["kl_per_interval"][0],
        }

    def reconstruction_logprob(self, seq: EventSequence, z: torch.Tensor) -> torch.Tensor:
        """log p(tau | z) for a fixed latent field (K, P, E)."""
        batch = self._single(seq)
        out = self._decode(batch, z.unsqueeze(0))
        return (out["logpdf"] * batch.mask.to(z.dtype)).sum()

    def composite_loss(
        self,
        seq: EventSequence,
        weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
        num_samples: int = 1,
        temperature: float = DEFAULT_TEMPERATURE,
        generator: torch.Generator | None = None,
        hard: bool = False,
    ) -> torch.Tensor:
        loss, _ = self.composite_loss_batch(
            self._single(seq), weights, num_samples, temperature, generator, hard
        )
        return loss[0]

    @torch.no_grad()
    def predict_next(self, prefix: EventSequence) -> NextEventPrediction:
        """Next-event predictions given a (possibly empty) prefix.

        Uses the posterior-mode hard latents inferred from the prefix.  With
        an empty prefix the decoder state is the initial state, so predictions
        come from the readout biases.
        """
        batch = self._single(prefix)
        enc = self._encode(batch)
        z = self.mode_latents(enc["posterior_logits"])
        out = self._decode(batch, z)
        states = out["final_states"][0]  # (U,H)
        mix = self.mixture_heads(states)
        last_times = np.zeros(self.num_types)
        view = type_view(prefix)
        for u in range(self.num_types):
            if len(view.timestamps[u]):
                last_times[u] = view.timestamps[u][-1]
        expected = last_times + lognormal_mixture_mean(mix).cpu().numpy()
        point = last_times + self.time_readout(states).squeeze(-1).cpu().numpy()
        if len(prefix):
            read_state = states[prefix.events[-1].type_id]
        else:
            read_state = states.new_zeros(self.hidden_dim)
        type_probs = torch.softmax(self.type_readout(read_state), dim=-1).cpu().numpy()
        return NextEventPrediction(
            expected_times=expected, point_times=point, type_probs=type_probs
        )
