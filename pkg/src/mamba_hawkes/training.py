"""Training loop, evaluation metrics, and experiment configuration.

Runs are deterministic given (seed, config, single worker): batch order,
Monte Carlo draws, and parameter updates all derive from the seed, and the
reported likelihood uses deterministic trapezoid quadrature. Wall-clock
timings therefore live in the JSON summary; the metrics CSV keeps a fixed
`seconds` column that is written as 0.0 unless wall-clock output is
explicitly requested (it would break byte-level reproducibility).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .checkpoint import build_model, load_checkpoint, save_checkpoint
from .data import Dataset, EventSequence, batch, load_jsonl

logger = logging.getLogger(__name__)

CSV_HEADER = "epoch,split,ll_per_event,accuracy,rmse,seconds"

_MODEL_FIELDS = (
    "d_model", "d_state", "d_conv", "expand", "n_layers", "mlp_hidden",
    "mc_samples", "event_loss_weight", "time_loss_weight", "loglik_mode",
    "delta_transform", "delta_clamp_min", "delta_clamp_max",
)
_HYBRID_FIELDS = ("mamba_layers", "attn_blocks", "n_heads", "ff_width")


class NumericsError(RuntimeError):
    """Training hit a non-finite loss; carries the offending epoch/batch."""

    def __init__(self, message, epoch=None, batch_index=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass
class TrainConfig:
    """Flat run configuration; mirrors the JSON config file field for field."""

    arch: str = "mhp"
    # model architecture
    d_model: int = 64
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    n_layers: int = 4
    mlp_hidden: int = 0
    mc_samples: int = 100
    event_loss_weight: float = 1.0
    time_loss_weight: float = 1e-4
    loglik_mode: str = "marked"
    delta_transform: str = "softplus_clamp"
    delta_clamp_min: float = 1e-6
    delta_clamp_max: float = 1e4
    # hybrid-only architecture
    mamba_layers: int = 2
    attn_blocks: int = 4
    n_heads: int = 4
    ff_width: int = 0
    # optimization
    lr: float = 1e-4
    batch_size: int = 4
    epochs: int = 50
    patience: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    # evaluation
    eval_quad_points: int = 1024
    normalize_times: bool = False
    # paths and output
    data: str = ""
    out: str = ""
    wall_clock_csv: bool = False

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**d)

    def model_config_dict(self, K):
        cfg = {name: getattr(self, name) for name in _MODEL_FIELDS}
        cfg["K"] = K
        if self.arch == "mhp-e":
            cfg.update({name: getattr(self, name) for name in _HYBRID_FIELDS})
        return cfg


@dataclass
class Metrics:
    ll_per_event: float
    accuracy: float | None = None  # percent
    rmse: float | None = None
    n_events: int = 0
    n_sequences: int = 0

    def __post_init__(self):
        if not np.isfinite(self.ll_per_event):
            raise ValueError(f"log-likelihood per event is not finite: {self.ll_per_event}")
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"accuracy must be a percentage, got {self.accuracy}")
        if self.rmse is not None and self.rmse < 0.0:
            raise ValueError(f"rmse must be non-negative, got {self.rmse}")


class Adam:
    """Adam with bias correction; state order follows the parameter list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def clip_gradients(params, max_norm):
    """Scale all gradients by a common factor so the global norm is <= max_norm.

    A uniform positive scale cannot change the gradient direction; that is
    asserted on the computed factor each step.
    """
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(sq))
    factor = 1.0 if norm <= max_norm else max_norm / norm
    assert 0.0 < factor <= 1.0 and np.isfinite(factor), \
        f"gradient clip factor must be a positive scale, got {factor}"
    if factor < 1.0:
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm, factor


def loss_on_batch(model, bat, base_seed):
    """Sum of per-sequence total losses over a padded batch.

    Padding never enters any term: the mask trims each row back to its true
    events, and per-sequence Monte Carlo seeds depend only on content, so the
    batched total equals the sum of unbatched losses exactly.
    """
    total = None
    ll_value = 0.0
    n_events = 0
    for seq in bat.unpadded():
        parts = model.losses(seq, seed=base_seed)
        total = parts.total if total is None else ag.add(total, parts.total)
        ll_value += float(parts.log_likelihood.data)
        n_events += len(seq) - 1
    return total, ll_value, n_events


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model, dataset, n_quad=1024):
    """Test-style metrics: LL/event via trapezoid quadrature, next-type
    accuracy (percent), RMSE of predicted vs true inter-event gaps."""
    if model.cfg.K != dataset.K:
        raise ValueError(f"K-mismatch: model has K={model.cfg.K}, dataset has K={dataset.K}")
    ll_sum = 0.0
    n_events = 0
    correct = 0
    sq_err = 0.0
    with ag.no_grad():
        for seq in dataset:
            hidden = model.encode(seq)
            ll_sum += float(model.log_likelihood(
                seq, integrator="trapezoid", n_quad=n_quad, hidden=hidden).data)
            logits = model.pred.logits(hidden[:len(seq) - 1]).data
            pred_types = np.argmax(logits, axis=1) + 1
            correct += int(np.sum(pred_types == seq.types[1:]))
            pred_gaps = np.diff(model.predicted_times(hidden, seq).data)
            sq_err += float(np.sum((pred_gaps - np.diff(seq.timestamps)) ** 2))
            n_events += len(seq) - 1
    return Metrics(
        ll_per_event=ll_sum / n_events,
        accuracy=100.0 * correct / n_events,
        rmse=float(np.sqrt(sq_err / n_events)),
        n_events=n_events,
        n_sequences=len(dataset),
    )


def dev_ll_per_event(model, dataset, n_quad=1024):
    """Quadrature LL/event only (the per-epoch dev metric)."""
    ll_sum = 0.0
    n_events = 0
    with ag.no_grad():
        for seq in dataset:
            ll_sum += float(model.log_likelihood(
                seq, integrator="trapezoid", n_quad=n_quad).data)
            n_events += len(seq) - 1
    return ll_sum / n_events


def fit_poisson_baseline(dataset):
    """Closed-form marked homogeneous-Poisson rates from a training split.

    Total rate is the pooled MLE (sum of (n-1)) / (sum of observed spans);
    per-type rates split it by the empirical frequency of scored (second
    through last) events, with half-count smoothing so unseen types keep a
    positive rate.
    """
    events = sum(len(s) - 1 for s in dataset)
    span = sum(s.duration for s in dataset)
    rate = events / span
    counts = np.full(dataset.K, 0.5)
    for s in dataset:
        counts += np.bincount(s.type_indices[1:], minlength=dataset.K)
    return rate * counts / counts.sum()


def poisson_log_likelihood(rates, seq):
    rates = np.asarray(rates, dtype=np.float64)
    return float(np.sum(np.log(rates[seq.type_indices[1:]])) - rates.sum() * seq.duration)


def poisson_ll_per_event(rates, dataset):
    ll = sum(poisson_log_likelihood(rates, s) for s in dataset)
    return ll / sum(len(s) - 1 for s in dataset)


# ---------------------------------------------------------------------------
# metrics output


def _fmt(x):
    if x is None or x == "":
        return ""
    return repr(float(x))


def metrics_rows_to_csv(rows):
    lines = [CSV_HEADER]
    for epoch, split, ll, acc, rmse, seconds in rows:
        lines.append(",".join([str(epoch), split, _fmt(ll), _fmt(acc), _fmt(rmse), _fmt(seconds)]))
    return "\n".join(lines) + "\n"


def write_metrics(out_dir, stem, rows, summary):
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(metrics_rows_to_csv(rows))
    json_path = os.path.join(out_dir, f"{stem}.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return csv_path, json_path


# ---------------------------------------------------------------------------
# training


def load_split(data_dir, split):
    path = os.path.join(data_dir, f"{split}.jsonl")
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing data file: {path}")
    return load_jsonl(path, split)


def scale_times(dataset, scale):
    seqs = [EventSequence(s.timestamps * scale, s.types, s.K) for s in dataset]
    return Dataset(seqs, dataset.K, dataset.split)


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_csv: str
    metrics_json: str
    best_epoch: int
    best_dev_ll: float
    epochs_run: int
    test_metrics: Metrics | None = None


def train(cfg):
    """Minimize the mean total loss with Adam; early-stop on dev LL.

    Writes metrics.csv (one row per epoch and split), metrics.json (summary
    with real wall-clock timings), and checkpoint.json (best dev epoch) into
    cfg.out. Returns a TrainResult.
    """
    train_ds = load_split(cfg.data, "train")
    dev_ds = load_split(cfg.data, "dev")
    test_path = os.path.join(cfg.data, "test.jsonl")
    test_ds = load_jsonl(test_path, "test") if os.path.exists(test_path) else None

    meta = {}
    if cfg.normalize_times:
        gaps = np.concatenate([np.diff(s.timestamps) for s in train_ds])
        scale = 1.0 / float(gaps.mean())
        meta["time_scale"] = scale
        train_ds, dev_ds = scale_times(train_ds, scale), scale_times(dev_ds, scale)
        test_ds = scale_times(test_ds, scale) if test_ds else None

    model = build_model(cfg.arch, cfg.model_config_dict(train_ds.K), seed=cfg.seed)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
               eps=cfg.adam_eps)
    shuffle_rng = np.random.default_rng(cfg.seed)

    os.makedirs(cfg.out, exist_ok=True)
    ckpt_path = os.path.join(cfg.out, "checkpoint.json")
    rows = []
    epoch_seconds = []
    best_dev = -np.inf
    best_epoch = 0
    epochs_run = 0
    sequences = list(train_ds)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(sequences))
        batches = batch(Dataset([sequences[i] for i in order], train_ds.K, "train"),
                        cfg.batch_size)
        epoch_ll = 0.0
        epoch_events = 0
        for bi, bat in enumerate(batches):
            model.zero_grad()
            total, ll_value, n_events = loss_on_batch(model, bat, base_seed=cfg.seed)
            mean_total = ag.div(total, float(len(bat.unpadded())))
            if not np.isfinite(mean_total.data):
                raise NumericsError(
                    f"non-finite loss at epoch {epoch}, batch {bi}",
                    epoch=epoch, batch_index=bi)
            ag.backward(mean_total)
            clip_gradients(params, cfg.clip_norm)
            opt.step()
            epoch_ll += ll_value
            epoch_events += n_events
        dev_ll = dev_ll_per_event(model, dev_ds, n_quad=cfg.eval_quad_points)
        seconds = time.perf_counter() - t0
        epoch_seconds.append(seconds)
        csv_seconds = seconds if cfg.wall_clock_csv else 0.0
        rows.append((epoch, "train", epoch_ll / epoch_events, "", "", csv_seconds))
        rows.append((epoch, "dev", dev_ll, "", "", csv_seconds))
        logger.info("epoch %d: train ll/event %.4f, dev ll/event %.4f (%.1fs)",
                    epoch, epoch_ll / epoch_events, dev_ll, seconds)
        epochs_run = epoch
        if dev_ll > best_dev:
            best_dev = dev_ll
            best_epoch = epoch
            meta.update({"best_epoch": epoch, "dev_ll_per_event": dev_ll,
                         "arch": cfg.arch, "seed": cfg.seed})
            save_checkpoint(model, ckpt_path, meta)
        elif epoch - best_epoch >= cfg.patience:
            logger.info("early stop at epoch %d (no dev improvement since %d)",
                        epoch, best_epoch)
            break

    model, meta = load_checkpoint(ckpt_path)
    test_metrics = None
    if test_ds is not None:
        test_metrics = evaluate(model, test_ds, n_quad=cfg.eval_quad_points)
        rows.append((best_epoch, "test", test_metrics.ll_per_event,
                     test_metrics.accuracy, test_metrics.rmse, 0.0))

    summary = {
        "config": dataclasses.asdict(cfg),
        "best_epoch": best_epoch,
        "best_dev_ll_per_event": best_dev,
        "epochs_run": epochs_run,
        "wall_clock_seconds": epoch_seconds,
        "total_seconds": float(sum(epoch_seconds)),
    }
    if test_metrics is not None:
        summary["test"] = dataclasses.asdict(test_metrics)
    csv_path, json_path = write_metrics(cfg.out, "metrics", rows, summary)
    return TrainResult(ckpt_path, csv_path, json_path, best_epoch, best_dev,
                       epochs_run, test_metrics)
