"""Datasets, batch SGD with momentum and the two training loops.

The static emissions network is fit record-by-record (MSE on the normalized
output scale). The recurrent model is fit on windows: from each measured start
state it is rolled over the control horizon under the recorded inputs and the
loss averages the squared error of every predicted state, differentiated
through the whole rolled chain.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericError, StructuralError
from .nn import (FNN_CHANNELS, Gradient, Layer, NnParams, Normalization, backward, fnn_architecture,
                 forward_cache, init_params, net_view, rnn_architecture)

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
PARAM_LIMIT = 1e8  # any |parameter| beyond this counts as a blown-up run
PROVENANCE = ("steady_state", "transient", "synthetic")
OUTPUT_CHANNELS = ("nox", "soot")
CHANNEL_UNITS = {
    "injection_pressure": "bar", "main_injection_timing": "degCA",
    "main_injection_fuel_rate": "mg/stroke", "engine_torque": "Nm", "engine_speed": "rpm",
    "intake_manifold_pressure": "kPa", "exhaust_manifold_pressure": "kPa",
    "mass_air_flow": "kg/h", "egr_position": "%open", "vgt_position": "%closed",
    "nox": "ppm", "soot": "%",
}


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    decay_factor: float = 0.5
    decay_period: int = 100
    epochs: int = 1000
    batch_size: int = 40

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError("momentum must lie in [0, 1)")
        if not 0.0 < self.decay_factor <= 1.0:
            raise DomainError("decay_factor must lie in (0, 1]")
        if self.decay_period < 1 or self.batch_size < 1 or self.epochs < 0:
            raise DomainError("decay_period and batch_size must be >= 1, epochs >= 0")


# --- static datasets ---------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, d_in)
    targets: np.ndarray  # (n, d_out)
    provenance: np.ndarray  # (n,) str
    split: np.ndarray  # (n,) str, "" when unassigned

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_2d(np.asarray(self.targets, dtype=float))
        n = len(x)
        prov = np.asarray(self.provenance, dtype=object)
        spl = np.asarray(self.split, dtype=object) if len(self.split) else np.array([""] * n, dtype=object)
        if len(y) != n or len(prov) != n or len(spl) != n:
            raise StructuralError("dataset columns have different lengths")
        if set(prov) - set(PROVENANCE):
            raise StructuralError(f"unknown provenance tags {set(prov) - set(PROVENANCE)}")
        for name, arr in (("inputs", x), ("targets", y), ("provenance", prov), ("split", spl)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, inputs, targets, provenance: str | Sequence[str]) -> "Dataset":
        n = len(inputs)
        prov = [provenance] * n if isinstance(provenance, str) else list(provenance)
        return cls(np.asarray(inputs, dtype=float).reshape(n, -1),
                   np.asarray(targets, dtype=float).reshape(n, -1), prov, [""] * n)

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.inputs[mask], self.targets[mask], self.provenance[mask], self.split[mask])

    def part(self, name: str) -> "Dataset":
        return self.subset(self.split == name)

    def with_split(self, split) -> "Dataset":
        return Dataset(self.inputs, self.targets, self.provenance, np.asarray(split, dtype=object))


def merge_emissions_datasets(steady: Dataset, transient: Dataset, soot_cutoff: float = 20.0) -> Dataset:
    """Transient records plus the steady-state records with Soot <= cutoff."""
    for d, name in ((steady, "steady"), (transient, "transient")):
        if len(d) and (d.inputs.shape[1] != len(FNN_CHANNELS) or d.targets.shape[1] != 2):
            raise StructuralError(f"{name} set does not follow the 10-input/2-output schema")
    keep = steady.subset(steady.targets[:, 1] <= soot_cutoff) if len(steady) else steady
    if not len(keep):
        return transient
    if not len(transient):
        return keep
    return Dataset(np.vstack([transient.inputs, keep.inputs]),
                   np.vstack([transient.targets, keep.targets]),
                   np.concatenate([transient.provenance, keep.provenance]),
                   np.concatenate([transient.split, keep.split]))


def _split_counts(n: int, fractions) -> tuple[int, int, int]:
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise DomainError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_train = int(round(fr[0] * n))
    n_val = int(round(fr[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_dataset(data: Dataset, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> Dataset:
    """Seeded shuffle into train/validation/test."""
    n_train, n_val, _ = _split_counts(len(data), fractions)
    order = np.random.default_rng(seed).permutation(len(data))
    labels = np.empty(len(data), dtype=object)
    labels[order[:n_train]] = "train"
    labels[order[n_train:n_train + n_val]] = "validation"
    labels[order[n_train + n_val:]] = "test"
    return data.with_split(labels)


# --- trajectory datasets -----------------------------------------------------

@dataclass(frozen=True)
class Episode:
    name: str
    dt: float
    t: np.ndarray  # (T,)
    u: np.ndarray  # (T, 4) p_im, chi_egr, n_e, w_inj
    x: np.ndarray  # (T, 2) nox, soot

    def __len__(self) -> int:
        return len(self.t)

    def segment(self, start: int, stop: int, suffix: str = "") -> "Episode":
        return Episode(self.name + suffix, self.dt, self.t[start:stop], self.u[start:stop], self.x[start:stop])


@dataclass(frozen=True)
class TrajectoryDataset:
    episodes: tuple[Episode, ...]

    def __post_init__(self):
        for ep in self.episodes:
            if len(ep) > 1 and np.ptp(np.diff(ep.t)) > 1e-9 * max(ep.dt, 1.0):
                raise DomainError(f"episode {ep.name} is not uniformly sampled")
            if ep.u.shape != (len(ep), 4) or ep.x.shape != (len(ep), 2):
                raise StructuralError(f"episode {ep.name} must carry 4 input and 2 state channels")

    def __len__(self) -> int:
        return sum(len(e) for e in self.episodes)


def split_trajectory(data: TrajectoryDataset, fractions=(0.7, 0.15, 0.15)) -> dict[str, TrajectoryDataset]:
    """Contiguous in time per episode: train first, validation next, test is the final slice."""
    parts = {s: [] for s in SPLITS}
    for ep in data.episodes:
        n_train, n_val, _ = _split_counts(len(ep), fractions)
        bounds = {"train": (0, n_train), "validation": (n_train, n_train + n_val),
                  "test": (n_train + n_val, len(ep))}
        for s, (a, b) in bounds.items():
            if b > a:
                parts[s].append(ep.segment(a, b, f":{s}"))
    return {s: TrajectoryDataset(tuple(v)) for s, v in parts.items()}


# --- optimizer -----------------------------------------------------------------

def apply_lr_decay(hp: HyperParams, epoch: int) -> float:
    """Step decay: lr * decay_factor ** floor(epoch / decay_period)."""
    if epoch < 0:
        raise DomainError("epoch must be >= 0")
    return hp.learning_rate * hp.decay_factor ** (epoch // hp.decay_period)


def _momentum_update(theta, grad, velocity, rho, lr):
    d = grad.copy() if velocity is None else grad + rho * velocity
    return theta - lr * d, d


def sgd_momentum_step(params: NnParams, grad: Gradient, velocity: Gradient | None,
                      hp: HyperParams, lr: float | None = None) -> tuple[NnParams, Gradient]:
    """``d = grad + rho * d_prev`` (``d = grad`` on the first call), ``theta -= lr * d``."""
    if not grad.is_congruent(params) or (velocity is not None and not velocity.is_congruent(params)):
        raise StructuralError("gradient/velocity shapes do not match the network")
    g = grad.flat()
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient")
    v = None if velocity is None else velocity.flat()
    theta, d = _momentum_update(params.flat(), g, v, hp.momentum,
                                hp.learning_rate if lr is None else lr)
    return params.with_flat(theta), Gradient.from_flat(params, d)


# --- static network training ---------------------------------------------------

def fit_fnn_normalization(data: Dataset) -> Normalization:
    """Mean/std on inputs; outputs scaled by their RMS with zero offset so that
    non-negative network outputs stay non-negative in physical units."""
    mu = data.inputs.mean(axis=0)
    sd = data.inputs.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    rms = np.sqrt(np.mean(data.targets ** 2, axis=0))
    rms = np.where(rms > 1e-12, rms, 1.0)
    return Normalization(mu, sd, np.zeros(data.targets.shape[1]), rms)


def _batch_loss_grad(net, z, t):
    cache = forward_cache(net, z)
    r = cache[-1][1] - t
    loss = float(np.sum(r * r) / len(z))
    g = backward(net, cache, 2.0 * r / len(z))
    return loss, np.concatenate([np.r_[w.ravel(), b] for w, b in zip(g.weights, g.biases)])


def _normalized(params: NnParams, data: Dataset):
    return params.norm.normalize_input(data.inputs), params.norm.normalize_output(data.targets)


def mse_loss(params: NnParams, data: Dataset) -> float:
    """Mean over records of the squared output error, on the normalized scale."""
    if len(data) == 0:
        raise DomainError("empty dataset")
    if data.inputs.shape[1] != params.input_dim or data.targets.shape[1] != params.output_dim:
        raise StructuralError("dataset dims do not match the network")
    z, t = _normalized(params, data)
    r = forward_cache(params, z)[-1][1] - t
    return float(np.sum(r * r) / len(data))


@dataclass
class TrainResult:
    params: NnParams
    curves: list[tuple[int, float, float, float]] = field(default_factory=list)  # epoch, train, val, lr
    diverged: bool = False


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled disjoint batches covering every index once; the short remainder batch is kept."""
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _active_output_start(params: NnParams, train: Dataset) -> NnParams:
    """Start the output biases at the mean normalized target.

    A ReLU output unit whose pre-activation starts negative on every record never
    receives a gradient; centering the bias on the targets keeps both heads alive.
    """
    _, t = _normalized(params, train)
    last = params.layers[-1]
    layers = params.layers[:-1] + (Layer(last.weight, t.mean(axis=0), last.activation),)
    return NnParams(layers, params.norm)


def train_fnn(data: Dataset, hp: HyperParams, seed: int = 0, hidden=(32, 32, 16),
              init: NnParams | None = None) -> TrainResult:
    """Batch SGD with momentum and step learning-rate decay.

    Uses the ``train`` split (every record if no split is assigned) and reports
    validation loss when a ``validation`` split exists. Stops at the last finite
    checkpoint if the training loss blows up.
    """
    train = data.part("train") if np.any(data.split == "train") else data
    val = data.part("validation")
    if len(train) == 0:
        raise DomainError("no training records")
    rng = np.random.default_rng(seed)
    if init is None:
        sizes, acts = fnn_architecture(hidden)
        init = _active_output_start(init_params(sizes, acts, rng, fit_fnn_normalization(train)), train)
    params = init
    z, t = _normalized(params, train)
    zv, tv = _normalized(params, val) if len(val) else (None, None)
    theta = params.flat()
    velocity = None
    result = TrainResult(params)

    def losses(th):
        net = net_view(params, th)
        tr = float(np.mean(np.sum((forward_cache(net, z)[-1][1] - t) ** 2, axis=1)))
        va = float(np.mean(np.sum((forward_cache(net, zv)[-1][1] - tv) ** 2, axis=1))) if zv is not None else math.nan
        return tr, va

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(hp.epochs):
            lr = apply_lr_decay(hp, epoch)
            checkpoint = theta.copy()
            try:
                for idx in epoch_batches(len(train), hp.batch_size, rng):
                    _, g = _batch_loss_grad(net_view(params, theta), z[idx], t[idx])
                    if not np.all(np.isfinite(g)):
                        raise NumericError("non-finite gradient")
                    theta, velocity = _momentum_update(theta, g, velocity, hp.momentum, lr)
                tr, va = losses(theta)
            except NumericError:
                tr = math.inf
            if not math.isfinite(tr) or np.max(np.abs(theta)) > PARAM_LIMIT:
                log.warning("train_fnn: diverged in epoch %d, keeping last finite checkpoint", epoch)
                result.params = params.with_flat(checkpoint)
                result.diverged = True
                return result
            result.curves.append((epoch, tr, va, lr))
    result.params = params.with_flat(theta)
    return result


@dataclass
class GridSearchReport:
    grid: list[tuple[float, float, float]]  # (momentum, learning_rate, validation loss)
    best: tuple[float, float]
    heatmap_path: Path | None = None


def _grid_key(cell):
    rho, lam, loss = cell
    return (loss if math.isfinite(loss) else math.inf, lam, rho)


def grid_search(grid, train: Dataset, val: Dataset, epochs_per_cell: int = 1, seed: int = 0,
                batch_size: int = 40, hidden=(32, 32, 16), heatmap_path=None) -> GridSearchReport:
    """Train a freshly initialized network per (momentum, learning rate) cell and
    record the validation loss; diverging cells score +inf."""
    grid = list(grid)
    if not grid:
        raise DomainError("empty hyperparameter grid")
    if len(val) == 0:
        raise DomainError("grid search needs validation records")
    cells = []
    for rho, lam in grid:
        hp = HyperParams(learning_rate=lam, momentum=rho, decay_factor=1.0,
                         epochs=epochs_per_cell, batch_size=batch_size)
        res = train_fnn(train.with_split(["train"] * len(train)), hp, seed=seed, hidden=hidden)
        if res.diverged:
            loss = math.inf
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    loss = mse_loss(res.params, val)
                except NumericError:
                    loss = math.inf
            loss = loss if math.isfinite(loss) else math.inf
        cells.append((float(rho), float(lam), float(loss)))
    best = min(cells, key=_grid_key)
    report = GridSearchReport(cells, (best[0], best[1]))
    if heatmap_path is not None:
        report.heatmap_path = write_heatmap_csv(report, heatmap_path)
    return report


# --- recurrent training --------------------------------------------------------

def fit_rnn_normalization(data: TrajectoryDataset, margin: float = 1.4) -> Normalization:
    """Mean/std on [x, u]; states mapped so the observed range sits inside (-1/margin, 1/margin)."""
    x = np.vstack([e.x for e in data.episodes])
    u = np.vstack([e.u for e in data.episodes])
    xu = np.hstack([x, u])
    mu, sd = xu.mean(axis=0), xu.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    lo, hi = x.min(axis=0), x.max(axis=0)
    half = np.where(hi > lo, 0.5 * (hi - lo), 1.0) * margin
    return Normalization(mu, sd, 0.5 * (hi + lo), half)


@dataclass(frozen=True)
class Windows:
    x: np.ndarray  # (B, N+1, 2) measured states
    u: np.ndarray  # (B, N, 4) recorded inputs

    def __len__(self) -> int:
        return len(self.x)

    def take(self, idx) -> "Windows":
        return Windows(self.x[idx], self.u[idx])


def make_windows(data: TrajectoryDataset, horizon: int) -> tuple[Windows, int]:
    """All length-``horizon`` windows; returns (windows, number of skipped short episodes)."""
    xs, us, skipped = [], [], 0
    for ep in data.episodes:
        if len(ep) < horizon + 1:
            skipped += 1
            continue
        for s in range(len(ep) - horizon):
            xs.append(ep.x[s:s + horizon + 1])
            us.append(ep.u[s:s + horizon])
    if skipped:
        log.warning("make_windows: skipped %d episode(s) shorter than horizon + 1", skipped)
    if not xs:
        return Windows(np.empty((0, horizon + 1, 2)), np.empty((0, horizon, 4))), skipped
    return Windows(np.array(xs), np.array(us)), skipped


def horizon_loss_grad(params: NnParams, net, win: Windows, need_grad: bool = True):
    """Mean over windows of (1/N) sum_j ||x_hat_j - x_j||^2 on the output scale,
    and its gradient w.r.t. the flat parameters (backprop through the rollout)."""
    norm = params.norm
    b, n = win.u.shape[0], win.u.shape[1]
    mu_x, sd_x = norm.in_offset[:2], norm.in_scale[:2]
    zu = (win.u - norm.in_offset[2:]) / norm.in_scale[2:]
    x_hat = win.x[:, 0]
    caches, resid = [], []
    loss = 0.0
    for j in range(n):
        z = np.hstack([(x_hat - mu_x) / sd_x, zu[:, j]])
        cache = forward_cache(net, z)
        x_hat = norm.out_offset + norm.out_scale * cache[-1][1]
        r = (x_hat - win.x[:, j + 1]) / norm.out_scale
        loss += float(np.sum(r * r))
        caches.append(cache)
        resid.append(r)
    loss /= b * n
    if not need_grad:
        return loss, None
    grad = None
    g_x = np.zeros((b, 2))  # dL/dx_hat_{j+1}
    for j in range(n - 1, -1, -1):
        g_x = g_x + 2.0 * resid[j] / norm.out_scale / (b * n)
        gr = backward(net, caches[j], g_x * norm.out_scale)
        flat = np.concatenate([np.r_[w.ravel(), bb] for w, bb in zip(gr.weights, gr.biases)])
        grad = flat if grad is None else grad + flat
        g_x = gr.inputs[:, :2] / sd_x
    return loss, grad


def train_rnn_horizon(data: TrajectoryDataset, horizon: int, hp: HyperParams, seed: int = 0,
                      val: TrajectoryDataset | None = None, hidden=(15, 5),
                      init: NnParams | None = None) -> TrainResult:
    """Fit the recurrent model on the multi-step horizon loss."""
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    win, _ = make_windows(data, horizon)
    if len(win) == 0:
        raise DomainError("no episode is long enough for the horizon")
    vwin = make_windows(val, horizon)[0] if val is not None else None
    rng = np.random.default_rng(seed)
    if init is None:
        sizes, acts = rnn_architecture(hidden)
        init = init_params(sizes, acts, rng, fit_rnn_normalization(data))
    params = init
    theta = params.flat()
    velocity = None
    result = TrainResult(params)
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(hp.epochs):
            lr = apply_lr_decay(hp, epoch)
            checkpoint = theta.copy()
            try:
                for idx in epoch_batches(len(win), hp.batch_size, rng):
                    _, g = horizon_loss_grad(params, net_view(params, theta), win.take(idx))
                    if not np.all(np.isfinite(g)):
                        raise NumericError("non-finite gradient")
                    theta, velocity = _momentum_update(theta, g, velocity, hp.momentum, lr)
                net = net_view(params, theta)
                tr = horizon_loss_grad(params, net, win, need_grad=False)[0]
                va = horizon_loss_grad(params, net, vwin, need_grad=False)[0] if vwin is not None and len(vwin) else math.nan
            except NumericError:
                tr = math.inf
            if not math.isfinite(tr) or np.max(np.abs(theta)) > PARAM_LIMIT:
                log.warning("train_rnn_horizon: diverged in epoch %d", epoch)
                result.params = params.with_flat(checkpoint)
                result.diverged = True
                return result
            result.curves.append((epoch, tr, va, lr))
    result.params = params.with_flat(theta)
    return result


# --- evaluation ------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    nox_mae: float
    soot_mae: float
    mse: float
    n: int
    by_provenance: dict


def _eval(params: NnParams, data: Dataset) -> tuple[float, float, float]:
    z = params.norm.normalize_input(data.inputs)
    pred = params.norm.denormalize_output(forward_cache(params, z)[-1][1])
    err = pred - data.targets
    r = err / params.norm.out_scale
    return (float(np.mean(np.abs(err[:, 0]))), float(np.mean(np.abs(err[:, 1]))),
            float(np.sum(r * r) / len(data)))


def evaluate_model(params: NnParams, data: Dataset, split: str | None = "test") -> EvalReport:
    """NOx and Soot mean absolute errors (physical units) and normalized MSE,
    overall and per provenance tag."""
    part = data.part(split) if split else data
    if len(part) == 0:
        raise DomainError(f"no records in split {split!r}")
    nox, soot, mse = _eval(params, part)
    by = {}
    for tag in PROVENANCE:
        sub = part.subset(part.provenance == tag)
        if len(sub):
            by[tag] = dict(zip(("nox_mae", "soot_mae", "mse"), _eval(params, sub)), n=len(sub))
    return EvalReport(nox, soot, mse, len(part), by)


# --- CSV interfaces ----------------------------------------------------------------

def _header(name: str) -> str:
    return f"{name}[{CHANNEL_UNITS[name]}]"


def write_dataset_csv(data: Dataset, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([_header(c) for c in FNN_CHANNELS + OUTPUT_CHANNELS] + ["provenance", "split"])
        for x, y, p, s in zip(data.inputs, data.targets, data.provenance, data.split):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y] + [p, s])
    return path


def read_dataset_csv(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    expected = [_header(c) for c in FNN_CHANNELS + OUTPUT_CHANNELS] + ["provenance", "split"]
    if header != expected:
        raise StructuralError(f"{path}: unexpected header {header}")
    vals = np.array([[float(v) for v in row[:12]] for row in rows]).reshape(len(rows), 12)
    return Dataset(vals[:, :10], vals[:, 10:], [row[12] for row in rows], [row[13] for row in rows])


def write_heatmap_csv(report: GridSearchReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["momentum", "learning_rate", "validation_loss"])
        for rho, lam, loss in report.grid:
            w.writerow([repr(rho), repr(lam), repr(loss)])
    return path


def write_curves_csv(curves, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for e, tr, va, lr in curves:
            w.writerow([e, repr(tr), repr(va), repr(lr)])
    return path


TRAJ_COLUMNS = ("episode", "t", "p_im", "chi_egr", "n_e", "w_inj", "nox", "soot")


def write_trajectories_csv(data: TrajectoryDataset, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJ_COLUMNS)
        for ep in data.episodes:
            for t, u, x in zip(ep.t, ep.u, ep.x):
                w.writerow([ep.name, repr(float(t))] + [repr(float(v)) for v in (*u, *x)])
    return path


def read_trajectories_csv(path) -> TrajectoryDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    episodes, order = {}, []
    for row in rows:
        name = row["episode"]
        if name not in episodes:
            episodes[name] = []
            order.append(name)
        episodes[name].append([float(row[c]) for c in TRAJ_COLUMNS[1:]])
    out = []
    for name in order:
        a = np.array(episodes[name])
        dt = float(a[1, 0] - a[0, 0]) if len(a) > 1 else 0.0
        out.append(Episode(name, dt, a[:, 0], a[:, 1:5], a[:, 5:7]))
    return TrajectoryDataset(tuple(out))


__all__ = [
    "HyperParams", "Dataset", "Episode", "TrajectoryDataset", "GridSearchReport", "TrainResult",
    "EvalReport", "Windows", "mse_loss", "sgd_momentum_step", "apply_lr_decay", "grid_search",
    "merge_emissions_datasets", "split_dataset", "split_trajectory", "train_fnn",
    "train_rnn_horizon", "evaluate_model", "make_windows", "horizon_loss_grad", "epoch_batches",
    "fit_fnn_normalization", "fit_rnn_normalization", "write_dataset_csv", "read_dataset_csv",
    "write_heatmap_csv", "write_curves_csv", "write_trajectories_csv", "read_trajectories_csv",
]
