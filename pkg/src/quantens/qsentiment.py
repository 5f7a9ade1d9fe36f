"""Four-qubit variational sentiment circuit on a statevector simulator.

States are complex arrays of shape ``(..., 16)``; basis index ``k`` has
qubit ``i`` in state ``(k >> i) & 1`` (qubit 0 is the least significant
bit). Every gate accepts batched states and broadcastable angles, so one
call can push a whole dataset (or every parameter shift) through the
circuit.

Rotations follow R_A(phi) = exp(-i phi A / 2).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

N_QUBITS = 4
DIM = 2**N_QUBITS
ANGLES_PER_QUBIT = 3
PARAMS_PER_LAYER = N_QUBITS * ANGLES_PER_QUBIT
N_LAYERS = 2
N_PARAMS = N_LAYERS * PARAMS_PER_LAYER
RING = ((0, 1), (1, 2), (2, 3), (3, 0))
AXES = ("X", "Y", "Z")

log = logging.getLogger(__name__)

_BITS = ((np.arange(DIM)[:, None] >> np.arange(N_QUBITS)) & 1).astype(float)
_Z_SIGNS = 1.0 - 2.0 * _BITS  # (16, 4)


def param_index(layer: int, qubit: int, axis: int) -> int:
    """Flat position of the angle for (layer, qubit, RX/RY/RZ)."""
    return layer * PARAMS_PER_LAYER + qubit * ANGLES_PER_QUBIT + axis


def zero_state(batch_shape=()) -> np.ndarray:
    state = np.zeros(tuple(batch_shape) + (DIM,), dtype=complex)
    state[..., 0] = 1.0
    return state


def rotation_matrix(axis: str, angle) -> np.ndarray:
    """2x2 matrices of shape ``angle.shape + (2, 2)``."""
    a = np.asarray(angle, dtype=float)
    c = np.cos(a / 2)
    s = np.sin(a / 2)
    m = np.zeros(a.shape + (2, 2), dtype=complex)
    if axis == "X":
        m[..., 0, 0] = c
        m[..., 1, 1] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
    elif axis == "Y":
        m[..., 0, 0] = c
        m[..., 1, 1] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
    elif axis == "Z":
        m[..., 0, 0] = np.exp(-0.5j * a)
        m[..., 1, 1] = np.exp(0.5j * a)
    else:
        raise ValueError(f"unknown rotation axis {axis!r}")
    return m


def _check_qubit(q: int) -> None:
    if not 0 <= q < N_QUBITS:
        raise ValueError(f"qubit index {q} out of range")


def apply_single(state: np.ndarray, gate: np.ndarray, qubit: int) -> np.ndarray:
    """Apply a (batched) 2x2 gate to one qubit."""
    _check_qubit(qubit)
    batch = np.broadcast_shapes(state.shape[:-1], gate.shape[:-2])
    state = np.broadcast_to(state, batch + (DIM,))
    # index = high * 2^(q+1) + bit * 2^q + low
    psi = state.reshape(batch + (DIM >> (qubit + 1), 2, 1 << qubit))
    a0 = psi[..., 0, :]
    a1 = psi[..., 1, :]
    g = gate[..., None, None]
    out = np.empty(batch + (DIM >> (qubit + 1), 2, 1 << qubit), dtype=complex)
    out[..., 0, :] = g[..., 0, 0, :, :] * a0 + g[..., 0, 1, :, :] * a1
    out[..., 1, :] = g[..., 1, 0, :, :] * a0 + g[..., 1, 1, :, :] * a1
    return out.reshape(batch + (DIM,))


def apply_rotation(state: np.ndarray, axis: str, angle, qubit: int) -> np.ndarray:
    return apply_single(state, rotation_matrix(axis, angle), qubit)


def apply_cnot(state: np.ndarray, control: int, target: int) -> np.ndarray:
    _check_qubit(control)
    _check_qubit(target)
    if control == target:
        raise ValueError("CNOT control and target must differ")
    idx = np.arange(DIM)
    perm = np.where((idx >> control) & 1, idx ^ (1 << target), idx)
    return state[..., perm]


def encode(x) -> np.ndarray:
    """|0000> followed by RY(pi * x_i) on qubit i."""
    x = np.asarray(x, dtype=float)
    state = zero_state(x.shape[:-1])
    for q in range(N_QUBITS):
        state = apply_rotation(state, "Y", math.pi * x[..., q], q)
    return state


def run_circuit(theta, x, entangle: bool = True) -> np.ndarray:
    """Encode ``x`` then apply the variational layers in ``theta``.

    ``theta`` has shape ``(..., 12 * n_layers)`` and must broadcast against
    the batch shape of ``x``. Each layer applies RX, RY, RZ per qubit and
    then the CNOT ring 0->1, 1->2, 2->3, 3->0.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.shape[-1] % PARAMS_PER_LAYER:
        raise ValueError("theta length must be a multiple of 12")
    n_layers = theta.shape[-1] // PARAMS_PER_LAYER
    batch = np.broadcast_shapes(theta.shape[:-1], x.shape[:-1])
    state = encode(np.broadcast_to(x, batch + (N_QUBITS,)))
    for layer in range(n_layers):
        for q in range(N_QUBITS):
            for a, axis in enumerate(AXES):
                state = apply_rotation(state, axis, theta[..., param_index(layer, q, a)], q)
        if entangle:
            for c, t in RING:
                state = apply_cnot(state, c, t)
    return state


def variational_unitary(theta, entangle: bool = True) -> np.ndarray:
    """16x16 matrix of the variational layers alone, shape ``theta.shape[:-1] + (16, 16)``."""
    theta = np.asarray(theta, dtype=float)
    n_layers = theta.shape[-1] // PARAMS_PER_LAYER
    # Row k of ``cols`` is the circuit applied to basis state |k>.
    cols = np.broadcast_to(np.eye(DIM, dtype=complex), theta.shape[:-1] + (DIM, DIM))
    th = theta[..., None, :]
    for layer in range(n_layers):
        for q in range(N_QUBITS):
            for a, axis in enumerate(AXES):
                cols = apply_rotation(cols, axis, th[..., param_index(layer, q, a)], q)
        if entangle:
            for c, t in RING:
                cols = apply_cnot(cols, c, t)
    return np.swapaxes(cols, -1, -2)


def z_expectations(state: np.ndarray) -> np.ndarray:
    """<Z_i> for each qubit, shape ``(..., 4)``."""
    return (np.abs(state) ** 2) @ _Z_SIGNS


def mean_z(theta, x, entangle: bool = True) -> np.ndarray:
    return z_expectations(run_circuit(theta, x, entangle)).mean(axis=-1)


def sentiment(theta, x) -> np.ndarray:
    """tanh of the mean Pauli-Z expectation; scalar for a single input."""
    return np.tanh(mean_z(theta, x))


def param_shift_gradient(theta, x, entangle: bool = True) -> np.ndarray:
    """d(mean <Z>)/d(theta_j) for every angle by the +/- pi/2 shift rule.

    All ``2 * n_params`` shifted circuits are evaluated in one batch.
    Output shape is ``batch + (n_params,)``.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    p = theta.shape[-1]
    shifts = np.eye(p) * (math.pi / 2)
    # Axis -2 of the shifted stacks enumerates which angle was moved.
    plus = theta[..., None, :] + shifts
    minus = theta[..., None, :] - shifts
    if theta.ndim == 1:
        # Angles shared by the whole batch: build the 2p shifted unitaries once.
        u = variational_unitary(np.stack([plus, minus]), entangle)  # (2, p, 16, 16)
        enc = encode(x)  # (..., 16)
        psi = np.einsum("spij,...j->...spi", u, enc)
        m = z_expectations(psi).mean(axis=-1)  # (..., 2, p)
        return (m[..., 0, :] - m[..., 1, :]) / 2.0
    xb = x[..., None, :]
    return (mean_z(plus, xb, entangle) - mean_z(minus, xb, entangle)) / 2.0


def init_params(seed: int, n_layers: int = N_LAYERS) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.01, 0.01, size=n_layers * PARAMS_PER_LAYER)


def pretrain_loss(theta, inputs, targets) -> float:
    s = sentiment(theta, inputs)
    return float(np.mean((s - targets) ** 2))


def pretrain(theta0, inputs, targets, epochs: int = 100, learn_rate: float = 0.05):
    """Full-batch gradient descent on mean squared error to ``targets``.

    ``targets`` are already squashed into (-1, 1) (the pipeline uses
    ``tanh(r_next / sigma_train)``). Returns the final angles and the
    per-epoch loss history (loss before each update, then the final loss).
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(inputs) == 0:
        raise ValueError("pretraining dataset is empty")
    theta = np.array(theta0, dtype=float)
    history = []
    for epoch in range(epochs):
        s = sentiment(theta, inputs)
        history.append(float(np.mean((s - targets) ** 2)))
        dm = param_shift_gradient(theta, inputs)
        ds = (1.0 - s**2)[:, None] * dm
        grad = np.mean(2.0 * (s - targets)[:, None] * ds, axis=0)
        theta = theta - learn_rate * grad
        log.debug("quantum pretrain epoch %d loss %.6f", epoch, history[-1])
    history.append(pretrain_loss(theta, inputs, targets))
    if any(b > a for a, b in zip(history, history[1:])):
        log.info("quantum pretraining loss was not monotone")
    return theta, history


@dataclass
class CircuitParams:
    theta: np.ndarray
    seed: int = 0
    layers: int = N_LAYERS
    qubits: int = N_QUBITS
    training_meta: dict = field(default_factory=dict)

    VERSION = 1

    def to_json(self) -> str:
        doc = {
            "version": self.VERSION,
            "layers": self.layers,
            "qubits": self.qubits,
            "theta": [float(format(v, ".17g")) for v in self.theta],
            "seed": self.seed,
            "training_meta": self.training_meta,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CircuitParams":
        doc = json.loads(text)
        if doc.get("version") != cls.VERSION:
            raise ValueError(f"unsupported circuit params version {doc.get('version')}")
        theta = np.array(doc["theta"], dtype=float)
        if theta.shape != (doc["layers"] * doc["qubits"] * ANGLES_PER_QUBIT,):
            raise ValueError("theta length does not match layers x qubits x 3")
        return cls(theta, doc["seed"], doc["layers"], doc["qubits"], doc.get("training_meta", {}))
