"""SpikeAwareLSTM: next-step demand regression plus spike classification.

Two stacked LSTM layers (64 then 32 units by default) read a window of
standardised RAN demand. Layer norm follows the first layer and dropout sits
between the layers. The last hidden state of layer 2 feeds a linear
regression head and a sigmoid spike head.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .errors import ConfigError, NonFiniteError, ShapeError, TrainingDiverged
from .nn import ParamStore, Tensor, ops
from .rng import stream
from .traces import (Scaler, TraceSeries, WindowedDataset, label_spikes, make_windows,
                     normalize_ran_demand, spike_threshold)

log = logging.getLogger(__name__)


@dataclass
class ForecasterConfig:
    hidden: tuple[int, int] = (64, 32)
    dropout: float = 0.2
    seq_len: int = 10
    batch_size: int = 256
    epochs: int = 1000
    lr: float = 1e-3
    lambda_detect: float = 1.0
    spike_percentile: float = 90.0
    layer_norm: bool = True
    cell_activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigError("forecaster.hidden must be two positive sizes")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("forecaster.dropout must lie in [0, 1)")
        if self.seq_len < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("forecaster.seq_len/batch_size must be >= 1 and epochs >= 0")
        if self.lr < 0 or self.lambda_detect < 0:
            raise ConfigError("forecaster.lr and lambda_detect must be >= 0")
        if self.cell_activation not in ("tanh", "relu"):
            raise ConfigError("forecaster.cell_activation must be 'tanh' or 'relu'")


@dataclass(frozen=True)
class ForecastBundle:
    """H-step demand forecast for one channel plus the first-step spike probability."""
    d_hat: np.ndarray
    spike_prob: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.d_hat, dtype=np.float64).reshape(-1)
        if d.size < 1:
            raise ConfigError("a forecast needs H >= 1 values")
        object.__setattr__(self, "d_hat", np.clip(d, 0.0, 1.0))

    @property
    def horizon(self) -> int:
        return int(self.d_hat.size)


class SpikeAwareLSTM:
    def __init__(self, config: ForecasterConfig | None = None, rng: np.random.Generator | None = None,
                 scaler: Scaler | None = None):
        self.config = config or ForecasterConfig()
        self.scaler = scaler or Scaler()
        self.spike_threshold: float | None = None
        rng = rng if rng is not None else stream(self.config.seed, "forecaster:init")
        h1, h2 = self.config.hidden
        self.params = ParamStore()
        nn.init_lstm(self.params, "lstm1", 1, h1, rng)
        if self.config.layer_norm:
            nn.init_layer_norm(self.params, "ln1", h1)
        nn.init_lstm(self.params, "lstm2", h1, h2, rng)
        nn.init_dense(self.params, "reg", h2, 1, rng)
        nn.init_dense(self.params, "spike", h2, 1, rng)

    # ---------------------------------------------------------- forward
    def forward(self, windows, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Standardised windows ``(B, T)`` (or ``(T,)``) -> ``(r_hat[B], spike_prob[B])``."""
        x = np.asarray(windows.data if isinstance(windows, Tensor) else windows, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.config.seq_len:
            raise ShapeError(f"expected windows of length {self.config.seq_len}, got shape {np.shape(windows)}")
        p = self.params
        act = self.config.cell_activation
        B = x.shape[0]
        h1, h2 = self.config.hidden
        s1 = (np.zeros((B, h1)), np.zeros((B, h1)))
        s2 = (np.zeros((B, h2)), np.zeros((B, h2)))
        for t in range(x.shape[1]):
            s1 = ops.lstm_cell(x[:, t:t + 1], s1[0], s1[1], p["lstm1.W_ih"], p["lstm1.W_hh"], p["lstm1.b"], act)
            y = s1[0]
            if self.config.layer_norm:
                y = ops.layer_norm(y, p["ln1.gain"], p["ln1.bias"])
            y = ops.dropout(y, self.config.dropout, training, rng)
            s2 = ops.lstm_cell(y, s2[0], s2[1], p["lstm2.W_ih"], p["lstm2.W_hh"], p["lstm2.b"], act)
        last = s2[0]
        r_hat = ops.dense(last, p["reg.W"], p["reg.b"]).reshape(B)
        prob = ops.sigmoid(ops.dense(last, p["spike.W"], p["spike.b"])).reshape(B)
        if single:
            r_hat, prob = r_hat.reshape(()), prob.reshape(())
        return r_hat, prob

    def predict_std(self, windows) -> tuple[np.ndarray, np.ndarray]:
        """Inference on standardised windows, no tape and no dropout."""
        with nn.no_grad():
            r, s = self.forward(windows, training=False)
        return r.data, s.data

    # ------------------------------------------------------ persistence
    def save(self, path: str | Path) -> Path:
        meta = {"kind": "spike-aware-lstm", "config": asdict(self.config),
                "scaler": self.scaler.to_dict(), "spike_threshold": self.spike_threshold}
        return nn.save_checkpoint(path, self.params.state_dict(), meta)

    @classmethod
    def load(cls, path: str | Path) -> "SpikeAwareLSTM":
        arrays, meta = nn.load_checkpoint(path)
        if meta.get("kind") != "spike-aware-lstm":
            raise ConfigError(f"{path}: not a forecaster checkpoint")
        model = cls(ForecasterConfig(**meta["config"]), np.random.default_rng(0),
                    Scaler.from_dict(meta["scaler"]))
        model.spike_threshold = meta.get("spike_threshold")
        model.params.load_state_dict(arrays)
        return model

    # ---------------------------------------------------------- rollout
    def rollout(self, histories, H: int) -> tuple[np.ndarray, np.ndarray]:
        """Recursive H-step forecast for raw (unstandardised) histories ``(B, >=T)``.

        Each clamped, de-standardised prediction is appended to the window
        for the next step. Returns ``(d_hat[B, H], spike_prob[B])`` with the
        spike probability of the first step.
        """
        hist = np.asarray(histories, dtype=np.float64)
        if hist.ndim == 1:
            hist = hist[None, :]
        T = self.config.seq_len
        if hist.shape[1] < T:
            raise ConfigError(f"need at least {T} history values, got {hist.shape[1]}")
        if H < 1:
            raise ConfigError("H must be >= 1")
        window = self.scaler.transform(hist[:, -T:])
        preds = np.empty((hist.shape[0], H))
        first_prob = None
        for k in range(H):
            z, prob = self.predict_std(window)
            value = np.clip(self.scaler.inverse(z), 0.0, 1.0)
            preds[:, k] = value
            if first_prob is None:
                first_prob = prob
            window = np.concatenate([window[:, 1:], self.scaler.transform(value)[:, None]], axis=1)
        return preds, first_prob


class PersistenceForecaster:
    """Predicts that every future value equals the last observed one."""

    def __init__(self, seq_len: int = 10):
        self.config = ForecasterConfig(seq_len=seq_len)

    def rollout(self, histories, H: int) -> tuple[np.ndarray, np.ndarray]:
        hist = np.asarray(histories, dtype=np.float64)
        if hist.ndim == 1:
            hist = hist[None, :]
        last = np.clip(hist[:, -1], 0.0, 1.0)
        return np.repeat(last[:, None], H, axis=1), np.zeros(hist.shape[0])


def predict_horizon(model, history, H: int) -> ForecastBundle:
    preds, prob = model.rollout(np.asarray(history, dtype=np.float64)[None, :], H)
    return ForecastBundle(preds[0], float(prob[0]))


# ------------------------------------------------------------------ losses
def composite_loss(r_hat, r_true, spike_prob, s_true, lambda_detect: float = 1.0) -> Tensor:
    """``MSE(r_true, r_hat) + lambda_detect * BCE(s_true, spike_prob)``."""
    return ops.mse(r_hat, r_true) + lambda_detect * ops.bce(spike_prob, s_true)


# ---------------------------------------------------------------- data prep
@dataclass
class ForecastData:
    scaler: Scaler
    threshold: float
    train: WindowedDataset
    test: WindowedDataset | None = None
    train_values: list = field(default_factory=list, repr=False)


def prepare_data(train_series: Sequence[TraceSeries], test_series: TraceSeries | None = None,
                 seq_len: int = 10, percentile: float = 90.0) -> ForecastData:
    """Normalise each file, z-score with training statistics, label spikes on raw counts.

    The spike threshold is the percentile of the pooled training counts and
    is reused unchanged on the test file.
    """
    if not train_series:
        raise ConfigError("at least one training trace is required")
    normed = [normalize_ran_demand(s.rnti_count) for s in train_series]
    scaler = Scaler.fit(np.concatenate(normed))
    tau = spike_threshold(np.concatenate([s.rnti_count for s in train_series]), percentile)
    parts = [make_windows(scaler.transform(d), label_spikes(s.rnti_count, threshold=tau), seq_len)
             for d, s in zip(normed, train_series)]
    train = WindowedDataset(np.concatenate([p.inputs for p in parts]),
                            np.concatenate([p.targets for p in parts]),
                            np.concatenate([p.spike_labels for p in parts]))
    test = None
    if test_series is not None:
        d = normalize_ran_demand(test_series.rnti_count)
        test = make_windows(scaler.transform(d), label_spikes(test_series.rnti_count, threshold=tau), seq_len)
    return ForecastData(scaler, tau, train, test, normed)


# ----------------------------------------------------------------- training
@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)  # full training set, inference mode
    loss_epochs: list[int] = field(default_factory=list)  # epochs after which ``loss`` was taken
    batch_loss: list[float] = field(default_factory=list)  # per-epoch mean mini-batch loss (dropout on)

    @property
    def initial_loss(self) -> float:
        return self.loss[0]

    @property
    def final_loss(self) -> float:
        return self.loss[-1]


def dataset_loss(model: SpikeAwareLSTM, data: WindowedDataset, lambda_detect: float) -> float:
    r, s = model.predict_std(data.inputs)
    with nn.no_grad():
        return composite_loss(r, data.targets, s, data.spike_labels, lambda_detect).item()


def train(model: SpikeAwareLSTM, data: WindowedDataset, epochs: int | None = None,
          batch_size: int | None = None, lr: float | None = None, seed: int | None = None,
          checkpoint: str | Path | None = None, eval_every: int = 1) -> TrainHistory:
    """Mini-batch Adam on the composite loss.

    ``history.batch_loss`` has one entry per epoch. ``history.loss`` holds the
    full-set loss with dropout off before training (epoch 0), after every
    ``eval_every`` epochs and after the last epoch.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else int(epochs)
    batch_size = cfg.batch_size if batch_size is None else int(batch_size)
    lr = cfg.lr if lr is None else float(lr)
    seed = cfg.seed if seed is None else int(seed)
    if len(data) == 0:
        raise ConfigError("empty training set")
    shuffle_rng = stream(seed, "forecaster:shuffle")
    drop_rng = stream(seed, "forecaster:dropout")
    opt = nn.Adam(model.params, lr=lr)
    hist = TrainHistory()
    hist.loss.append(dataset_loss(model, data, cfg.lambda_detect))
    hist.loss_epochs.append(0)
    n = len(data)
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            try:
                r, s = model.forward(data.inputs[idx], training=True, rng=drop_rng)
                loss = composite_loss(r, data.targets[idx], s, data.spike_labels[idx], cfg.lambda_detect)
                nn.backward(loss)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"forecaster diverged in epoch {epoch}: {exc}") from exc
            for name, p in model.params.items():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise TrainingDiverged(f"non-finite gradient for {name} in epoch {epoch}")
            opt.step()
            total += loss.item() * idx.size
        hist.batch_loss.append(total / n)
        if (epoch + 1) % eval_every == 0 or epoch + 1 == epochs:
            try:
                hist.loss.append(dataset_loss(model, data, cfg.lambda_detect))
            except NonFiniteError as exc:
                raise TrainingDiverged(f"forecaster diverged after epoch {epoch}: {exc}") from exc
            hist.loss_epochs.append(epoch + 1)
    if checkpoint is not None:
        model.save(checkpoint)
    return hist


# --------------------------------------------------------------- evaluation
def forecast_metrics(pred, target, prob, labels, threshold: float = 0.5) -> dict[str, float]:
    """MSE plus spike precision/recall/F1 with the decision rule ``prob > threshold``."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    hit = np.asarray(prob) > threshold
    truth = np.asarray(labels) > 0.5
    tp = int(np.sum(hit & truth))
    fp = int(np.sum(hit & ~truth))
    fn = int(np.sum(~hit & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"mse": float(np.mean((pred - target) ** 2)), "spike_precision": precision,
            "spike_recall": recall, "spike_f1": f1, "tp": tp, "fp": fp, "fn": fn,
            "n": int(target.size)}


def evaluate(model: SpikeAwareLSTM, test: WindowedDataset) -> dict[str, float]:
    """Metrics in demand units (predictions and targets de-standardised)."""
    if len(test) == 0:
        raise ConfigError("empty test set")
    z, prob = model.predict_std(test.inputs)
    return forecast_metrics(model.scaler.inverse(z), model.scaler.inverse(test.targets),
                            prob, test.spike_labels)


def persistence_metrics(scaler: Scaler, test: WindowedDataset) -> dict[str, float]:
    last = scaler.inverse(test.inputs[:, -1])
    return forecast_metrics(last, scaler.inverse(test.targets), np.zeros(len(test)), test.spike_labels)


def fit_forecaster(train_series: Sequence[TraceSeries], test_series: TraceSeries | None = None,
                   config: ForecasterConfig | None = None, epochs: int | None = None,
                   checkpoint: str | Path | None = None, eval_every: int = 10):
    """Prepare data, build and train a model. Returns ``(model, history, data)``."""
    cfg = config or ForecasterConfig()
    data = prepare_data(train_series, test_series, cfg.seq_len, cfg.spike_percentile)
    model = SpikeAwareLSTM(cfg, scaler=data.scaler)
    model.spike_threshold = data.threshold
    history = train(model, data.train, epochs=epochs, checkpoint=checkpoint, eval_every=eval_every)
    return model, history, data
