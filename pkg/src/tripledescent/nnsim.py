"""Teacher-student 3-layer MLPs trained by full-batch heavy-ball gradient descent.

Network D -> H -> H -> 1, activation after layers 1 and 2, linear output.
Every weight and bias starts Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).

Update per epoch (weight decay folded into the gradient, velocity starts at 0):

    g = grad mean((f(x) - y)^2) + weight_decay * w
    v = momentum * v + g
    w = w - lr * v

Batch reductions are plain numpy matmuls and means in a fixed order; run
under a single BLAS thread for bitwise reproducibility.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .activation import ActivationSpec, get_activation
from .rfcore import derive_seed

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
_MAGIC = b"TDCK"


class NNError(RuntimeError):
    pass


class DegenerateTeacherError(NNError):
    pass


@dataclass(eq=False)
class MLP:
    params: list
    activation: ActivationSpec
    init_seed: Optional[int] = None

    @classmethod
    def init(cls, D: int, width: int, activation, seed: int) -> "MLP":
        act = get_activation(activation)
        rng = np.random.default_rng(seed)
        shapes = [(width, D), (width, width), (1, width)]
        params = []
        for out_dim, fan_in in shapes:
            bound = 1.0 / math.sqrt(fan_in)
            params.append(rng.uniform(-bound, bound, (out_dim, fan_in)))
            params.append(rng.uniform(-bound, bound, out_dim))
        return cls(params, act, seed)

    @property
    def D(self) -> int:
        return self.params[0].shape[1]

    @property
    def width(self) -> int:
        return self.params[0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "MLP":
        return MLP([p.copy() for p in self.params], self.activation, self.init_seed)

    def hidden(self, X):
        W1, b1, W2, b2, _, _ = self.params
        h1 = self.activation(X @ W1.T + b1)
        return self.activation(h1 @ W2.T + b2)

    def forward(self, X) -> np.ndarray:
        W3, b3 = self.params[4], self.params[5]
        return self.hidden(X) @ W3[0] + b3[0]

    __call__ = forward

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))


def loss_and_grad(model: MLP, X, y, need_grad: bool = True):
    """Mean squared error and its gradient with respect to every parameter."""
    W1, b1, W2, b2, W3, b3 = model.params
    act = model.activation
    a1 = X @ W1.T + b1
    h1 = act(a1)
    a2 = h1 @ W2.T + b2
    h2 = act(a2)
    out = h2 @ W3[0] + b3[0]
    r = out - y
    loss = float(r @ r / len(y))
    if not need_grad:
        return loss, None
    d_out = 2.0 * r / len(y)
    gW3 = (d_out @ h2)[None, :]
    gb3 = np.array([d_out.sum()])
    d_a2 = np.outer(d_out, W3[0]) * act.derivative(a2)
    gW2 = d_a2.T @ h1
    gb2 = d_a2.sum(axis=0)
    d_a1 = (d_a2 @ W2) * act.derivative(a1)
    gW1 = d_a1.T @ X
    gb1 = d_a1.sum(axis=0)
    return loss, [gW1, gb1, gW2, gb2, gW3, gb3]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    loss: str = "mse"

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss != "mse":
            raise ValueError("only the mean-square loss is supported")


@dataclass
class Trajectory:
    train_loss: np.ndarray
    checkpoints: dict
    diverged: bool = False
    last_epoch: int = 0
    test_loss: dict = field(default_factory=dict)


def train(student: MLP, X, y, config: TrainConfig, checkpoint_epochs: Iterable[int] = (),
          trainable: Optional[Sequence[int]] = None, evaluate=None) -> Trajectory:
    """Full-batch heavy-ball training of ``student`` in place.

    ``train_loss[e]`` is the loss before update e + 1, so entry 0 is the
    initial loss.  ``checkpoints`` maps an epoch mark to a copy of the model
    after that many updates; ``evaluate(model)`` (if given) is recorded in
    ``test_loss`` at the same marks.  ``trainable`` restricts updates to the
    listed parameter indices (0..5 in PARAM_NAMES order).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NNError("training data contains non-finite values")
    marks = sorted({int(e) for e in checkpoint_epochs if 0 <= int(e) <= config.epochs})
    active = range(6) if trainable is None else sorted(set(trainable))
    vel = {i: np.zeros_like(student.params[i]) for i in active}
    losses = np.full(config.epochs + 1, np.nan)
    traj = Trajectory(losses, {})

    def mark(epoch):
        if epoch in marks:
            traj.checkpoints[epoch] = student.copy()
            if evaluate is not None:
                traj.test_loss[epoch] = evaluate(student)

    mark(0)
    # overflow is detected through the loss and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            loss, grads = loss_and_grad(student, X, y)
            losses[epoch] = loss
            if not math.isfinite(loss):
                traj.diverged = True
                traj.last_epoch = epoch
                return traj
            for i in active:
                g = grads[i] + config.weight_decay * student.params[i]
                vel[i] = config.momentum * vel[i] + g
                student.params[i] = student.params[i] - config.lr * vel[i]
            mark(epoch + 1)
        losses[config.epochs], _ = loss_and_grad(student, X, y, need_grad=False)
    traj.last_epoch = config.epochs
    if not math.isfinite(losses[config.epochs]):
        traj.diverged = True
    return traj


# ---------------------------------------------------------------------------
# teacher


@dataclass(eq=False)
class Teacher:
    model: MLP
    scale: float

    def __call__(self, X):
        return self.scale * self.model(X)

    def labels(self, X, snr: float, seed: int):
        clean = self(X)
        if math.isinf(snr):
            return clean
        return clean + np.random.default_rng(seed).standard_normal(len(clean)) / math.sqrt(snr)


def make_teacher(D: int, width: int = 100, seed: int = 0, probe_size: int = 100_000,
                 probe_seed: Optional[int] = None) -> Teacher:
    """Untrained ReLU MLP scaled to unit output variance on a Gaussian probe."""
    model = MLP.init(D, width, "relu", seed)
    probe_seed = derive_seed(seed, "teacher-probe") if probe_seed is None else probe_seed
    probe = np.random.default_rng(probe_seed).standard_normal((probe_size, D))
    var = float(model(probe).var())
    if not var > 1e-12:
        raise DegenerateTeacherError(f"teacher output variance {var:.3g}; choose another seed")
    return Teacher(model, 1.0 / math.sqrt(var))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: MLP, **meta) -> None:
    """Flat little-endian float64 arrays after a length-prefixed JSON header."""
    header = {
        "format": 1, "dtype": "<f8", "activation": model.activation.token,
        "names": list(PARAM_NAMES), "shapes": [list(p.shape) for p in model.params],
        "init_seed": model.init_seed, **meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<Q", len(blob)) + blob)
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[MLP, dict]:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise NNError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[4:12])
    header = json.loads(data[12:12 + n])
    offset = 12 + n
    params = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise NNError(f"{path}: truncated checkpoint")
        params.append(np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy())
        offset = end
    return MLP(params, get_activation(header["activation"]), header.get("init_seed")), header


# ---------------------------------------------------------------------------
# phase space


@dataclass(frozen=True)
class NNRecord:
    width: int
    N: int
    epoch: int
    member: int
    test_loss: float
    train_loss: float
    diverged: bool
    seed: int

    def as_dict(self):
        return asdict(self)


def run_cell(D: int, width: int, N: int, snr: float, config: TrainConfig, activation,
             checkpoint_epochs: Sequence[int], member: int, master: int = 0,
             teacher_seed: int = 0, m_test: int = 10_000, n_index: int = 0,
             teacher_width: int = 100, experiment: str = "nn", predictions: Optional[dict] = None
             ) -> list:
    """Train one student and report test loss at every checkpoint.

    If ``predictions`` is a dict, test-set predictions at each checkpoint are
    stored in it under the epoch (used for prediction ensembles).
    """
    teacher = make_teacher(D, teacher_width, teacher_seed)
    X_test = np.random.default_rng(derive_seed(master, experiment, "test")).standard_normal((m_test, D))
    f_test = teacher(X_test)
    data_seed = derive_seed(master, experiment, "data", n_index, member)
    X = np.random.default_rng(data_seed).standard_normal((N, D))
    y = teacher.labels(X, snr, derive_seed(master, experiment, "noise", n_index, member))
    init_seed = derive_seed(master, experiment, "init", width, member)
    student = MLP.init(D, width, activation, init_seed)

    def evaluate(model):
        pred = model(X_test)
        r = pred - f_test
        return float(r @ r / len(r)), pred

    marks = sorted(set(checkpoint_epochs) | {config.epochs})
    traj = train(student, X, y, config, marks, evaluate=evaluate)
    out = []
    for e in marks:
        ok = e in traj.test_loss and math.isfinite(traj.test_loss[e][0])
        if ok and predictions is not None:
            predictions[e] = traj.test_loss[e][1]
        out.append(NNRecord(width, N, e, member,
                            traj.test_loss[e][0] if ok else float("nan"),
                            float(traj.train_loss[e]) if ok else float("nan"),
                            not ok, init_seed))
    return out


def nn_phase_space(D: int, width_grid: Sequence[int], n_grid: Sequence[int], snr: float,
                   config: TrainConfig = TrainConfig(), K: int = 1,
                   checkpoint_epochs: Sequence[int] = (50, 100, 200, 500, 1000),
                   activation="tanh", m_test: int = 10_000, master: int = 0,
                   teacher_seed: int = 0, teacher_width: int = 100,
                   ensemble: bool = False) -> list:
    """Records for every (width, N, member, checkpoint); serial reference
    implementation (the orchestrator parallelises over cells).

    With ``ensemble`` the K members' test predictions are averaged and one
    extra record per checkpoint with member = -1 holds the ensemble loss.
    """
    teacher = make_teacher(D, teacher_width, teacher_seed)
    X_test = np.random.default_rng(derive_seed(master, "nn", "test")).standard_normal((m_test, D))
    f_test = teacher(X_test)
    records = []
    for width in width_grid:
        for j, N in enumerate(n_grid):
            preds = []
            for k in range(K):
                store = {} if ensemble else None
                records.extend(run_cell(D, int(width), int(N), snr, config, activation,
                                        checkpoint_epochs, k, master, teacher_seed, m_test, j,
                                        teacher_width, predictions=store))
                preds.append(store)
            if ensemble:
                records.extend(ensemble_records(preds, f_test, int(width), int(N)))
    return records


def ensemble_records(preds: list, f_test, width: int, N: int) -> list:
    """Loss of the mean prediction per checkpoint; epochs where any member
    diverged are reported as diverged."""
    out = []
    for e in sorted(set().union(*[p.keys() for p in preds])):
        if all(e in p for p in preds):
            r = np.mean([p[e] for p in preds], axis=0) - f_test
            out.append(NNRecord(width, N, e, -1, float(r @ r / len(r)), float("nan"), False, 0))
        else:
            out.append(NNRecord(width, N, e, -1, float("nan"), float("nan"), True, 0))
    return out
