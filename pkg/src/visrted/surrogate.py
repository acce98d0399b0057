"""ReLU surrogates for the frequency nadir and IBR peak power.

Datasets are sampled from the closed forms, networks are trained with
momentum SGD in plain numpy, and trained networks are compiled into big-M
mixed-integer fragments with per-neuron interval bounds.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from . import freq_dynamics as fd
from .milp_solver import MilpProblem, solve_milp

NADIR_FEATURES = ("M", "D", "dPe")
PEAK_FEATURES = ("M", "D", "M_ibr", "D_ibr", "dPe")
TARGETS = {"nadir": NADIR_FEATURES, "peak_power": PEAK_FEATURES}
BLOCK = 1024  # samples per counter-based RNG stream


# ---------------------------------------------------------------------------
# data


@dataclass
class Scaler:
    """Affine map ``(v - shift) / scale`` onto [0, 1]."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_box(cls, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.atleast_1d(np.asarray(hi, float))
        width = hi - lo
        return cls(lo.copy(), np.where(width > 0, width, 1.0))

    def forward(self, v):
        return (np.asarray(v, float) - self.shift) / self.scale

    def inverse(self, u):
        return np.asarray(u, float) * self.scale + self.shift

    def to_dict(self):
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["shift"], float), np.array(d["scale"], float))


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    feature_names: list
    target_name: str
    scaler: Scaler
    seed: int
    box: dict = field(default_factory=dict)
    context: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.feature_names) + [self.target_name])
            for row, t in zip(self.inputs, self.targets):
                w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
        return Path(path)

    @classmethod
    def from_csv(cls, path, seed: int = -1, context: dict | None = None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        X, y = body[:, :-1], body[:, -1]
        box = {n: (float(X[:, k].min()), float(X[:, k].max())) for k, n in enumerate(header[:-1])}
        target = "nadir" if tuple(header[:-1]) == NADIR_FEATURES else "peak_power"
        ctx = _context(context) if context is not None else {}
        return cls(X, y, header[:-1], target, Scaler.from_box(X.min(0), X.max(0)), seed, box, ctx)


def _box_arrays(box, names):
    missing = [n for n in names if n not in box]
    if missing:
        raise ValueError(f"box lacks features {missing}")
    lo = np.array([float(box[n][0]) for n in names])
    hi = np.array([float(box[n][1]) for n in names])
    if np.any(hi < lo):
        raise ValueError("box has min > max")
    return lo, hi


def evaluate_targets(target, X, context):
    """Closed-form targets for a feature matrix; NaN where zeta >= 1."""
    R, F, T = context["R_agg"], context["F_agg"], context["T"]
    M, D = X[:, 0], X[:, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        _, zeta, _ = fd.second_order(M, D, R, F, T)
        if target == "nadir":
            _, y = fd.nadir_kernel(M, D, R, F, T, X[:, 2])
        else:
            _, y = fd.peak_kernel(M, D, R, F, T, X[:, 2], X[:, 3], X[:, 4])
    ok = (zeta < 1) & np.isfinite(y)
    return np.where(ok, y, np.nan)


def _context(fixed) -> dict:
    if isinstance(fixed, fd.SyntheticParams):
        return {"R_agg": fixed.R_agg, "F_agg": fixed.F_agg, "T": fixed.T, "f0": fixed.f0}
    return dict(fixed)


def generate_dataset(target: str, box: dict, n: int, seed: int, fixed) -> Dataset:
    """Sample ``n`` feasible (zeta < 1) points uniformly from ``box``.

    Sample ``i`` belongs to block ``i // BLOCK``; each block draws from its
    own stream keyed by ``(seed, block)``, so any block can be produced
    independently and the result does not depend on how blocks are scheduled.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    if n < 1:
        raise ValueError("n must be >= 1")
    names = TARGETS[target]
    lo, hi = _box_arrays(box, names)
    ctx = _context(fixed)
    blocks = []
    budget = 10 * n
    drawn = 0
    for b in range(math.ceil(n / BLOCK)):
        need = min(BLOCK, n - b * BLOCK)
        rng = np.random.default_rng([seed, b])
        got_x, got_y = [], []
        have = 0
        while have < need:
            if drawn >= budget:
                raise ValueError(f"box infeasible: no zeta < 1 point found in {budget} draws")
            k = min(need - have, budget - drawn)
            X = lo + (hi - lo) * rng.random((max(k, 8), len(names)))
            drawn += len(X)
            y = evaluate_targets(target, X, ctx)
            keep = np.isfinite(y)
            got_x.append(X[keep])
            got_y.append(y[keep])
            have += int(keep.sum())
        blocks.append((np.concatenate(got_x)[:need], np.concatenate(got_y)[:need]))
    X = np.concatenate([b[0] for b in blocks])
    y = np.concatenate([b[1] for b in blocks])
    box_used = {nm: (float(a), float(b)) for nm, a, b in zip(names, lo, hi)}
    return Dataset(X, y, list(names), target, Scaler.from_box(lo, hi), int(seed), box_used, ctx)


# ---------------------------------------------------------------------------
# network


@dataclass
class Mlp:
    weights: list  # W_m with shape (out, in)
    biases: list
    input_scaler: Scaler
    output_scaler: Scaler
    feature_names: list = field(default_factory=list)
    target_name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k in range(1, len(self.weights)):
            if self.weights[k].shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} input dim does not chain")
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != b.shape[0]:
                raise ValueError("bias length does not match layer width")

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def hidden_sizes(self) -> list:
        return [W.shape[0] for W in self.weights[:-1]]

    def input_box(self):
        lo = self.input_scaler.shift
        return lo, lo + self.input_scaler.scale

    def to_dict(self) -> dict:
        return {
            "dims": [self.n_inputs] + [W.shape[0] for W in self.weights],
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(self.weights, self.biases)],
            "activation": "relu",
            "input_scaler": self.input_scaler.to_dict(),
            "output_scaler": self.output_scaler.to_dict(),
            "feature_names": list(self.feature_names),
            "target_name": self.target_name,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d) -> "Mlp":
        return cls(
            [np.array(L["W"], float).reshape(-1, din) for L, din in zip(d["layers"], d["dims"][:-1])],
            [np.array(L["b"], float) for L in d["layers"]],
            Scaler.from_dict(d["input_scaler"]),
            Scaler.from_dict(d["output_scaler"]),
            d.get("feature_names", []),
            d.get("target_name", ""),
            d.get("meta", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return Path(path)

    @classmethod
    def load(cls, path) -> "Mlp":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _forward_scaled(m: Mlp, U):
    h = U
    for W, b in zip(m.weights[:-1], m.biases[:-1]):
        h = np.maximum(h @ W.T + b, 0.0)
    return h @ m.weights[-1].T + m.biases[-1]


def predict_batch(m: Mlp, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != m.n_inputs:
        raise ValueError(f"expected {m.n_inputs} features, got {X.shape[1]}")
    out = _forward_scaled(m, m.input_scaler.forward(X))[:, 0]
    return m.output_scaler.inverse(out)


def predict(m: Mlp, x) -> float:
    """Forward pass in engineering units; warns outside the training box."""
    x = np.asarray(x, float).ravel()
    if x.shape[0] != m.n_inputs:
        raise ValueError(f"expected {m.n_inputs} features, got {x.shape[0]}")
    lo, hi = m.input_box()
    if np.any(x < lo - 1e-9 * (1 + np.abs(lo))) or np.any(x > hi + 1e-9 * (1 + np.abs(hi))):
        warnings.warn("input outside the surrogate training box", RuntimeWarning, stacklevel=2)
    return float(predict_batch(m, x[None])[0])


def relative_errors(m: Mlp, X, y) -> np.ndarray:
    p = predict_batch(m, X)
    return np.abs(p - y) / np.maximum(np.abs(y), 1e-300)


def train_mlp(
    ds: Dataset,
    hidden: int = 16,
    epochs: int = 1000,
    lr: float = 1e-2,
    seed: int = 0,
    momentum: float = 0.9,
    batch: int = 256,
    decay_every: int = 200,
    decay: float = 0.5,
    val_fraction: float = 0.1,
) -> Mlp:
    """Momentum SGD on mean-squared error of [0, 1]-scaled targets.

    Returns the parameters with the lowest validation loss. Everything is
    driven by one seeded generator, so equal seeds give equal weights.
    """
    if hidden < 1 or epochs < 1:
        raise ValueError("hidden and epochs must be >= 1")
    rng = np.random.default_rng(seed)
    X = ds.scaler.forward(ds.inputs)
    out_scaler = Scaler.from_box(ds.targets.min(), ds.targets.max())
    Y = out_scaler.forward(ds.targets)[:, None]
    n = len(X)
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n))) if n > 1 else 0
    val, tr = perm[:n_val], perm[n_val:] if n > 1 else perm
    Xt, Yt, Xv, Yv = X[tr], Y[tr], X[val], Y[val]
    if len(Xv) == 0:
        Xv, Yv = Xt, Yt
    d_in = X.shape[1]
    W1 = rng.normal(0.0, math.sqrt(2.0 / d_in), (hidden, d_in))
    b1 = np.zeros(hidden)
    W2 = rng.normal(0.0, math.sqrt(1.0 / hidden), (1, hidden))
    b2 = np.zeros(1)
    params = [W1, b1, W2, b2]
    vel = [np.zeros_like(p) for p in params]

    def loss(Xs, Ys):
        h = np.maximum(Xs @ W1.T + b1, 0.0)
        return float(np.mean((h @ W2.T + b2 - Ys) ** 2))

    best = (loss(Xv, Yv), [p.copy() for p in params], 0)
    history = []
    rate = lr
    for ep in range(1, epochs + 1):
        if ep > 1 and (ep - 1) % decay_every == 0:
            rate *= decay
        order = rng.permutation(len(Xt))
        for s in range(0, len(order), batch):
            idx = order[s : s + batch]
            xb, yb = Xt[idx], Yt[idx]
            pre = xb @ W1.T + b1
            h = np.maximum(pre, 0.0)
            err = (h @ W2.T + b2 - yb) * (2.0 / len(idx))
            gW2 = err.T @ h
            gb2 = err.sum(0)
            dh = (err @ W2) * (pre > 0)
            gW1 = dh.T @ xb
            gb1 = dh.sum(0)
            for p, v, g in zip(params, vel, (gW1, gb1, gW2, gb2)):
                v *= momentum
                v -= rate * g
                p += v
        vl = loss(Xv, Yv)
        if not math.isfinite(vl):
            raise FloatingPointError("training diverged (try a lower lr)")
        history.append(vl)
        if vl < best[0]:
            best = (vl, [p.copy() for p in params], ep)
    W1, b1, W2, b2 = best[1]
    meta = {
        "seed": int(seed),
        "epochs": int(epochs),
        "lr": lr,
        "hidden": int(hidden),
        "best_epoch": best[2],
        "best_val_loss": best[0],
        "val_loss_history": history,
        "dataset_seed": ds.seed,
        "n_samples": int(n),
        "context": ds.context,
        "box": {k: list(v) for k, v in ds.box.items()},
    }
    m = Mlp([W1, W2], [b1, b2], Scaler(ds.scaler.shift.copy(), ds.scaler.scale.copy()), out_scaler,
            list(ds.feature_names), ds.target_name, meta)
    if ds.box and ds.context:
        meta["max_underprediction"] = max_underprediction(m)
    return m


def max_underprediction(m: Mlp, n: int = 50000, seed: int = 2024) -> float:
    """Largest ``target - prediction`` over a dense sample of the training box.

    Needs the box and frozen context recorded in ``m.meta`` by ``train_mlp``.
    """
    box, ctx = m.meta.get("box"), m.meta.get("context")
    if not box or not ctx:
        raise ValueError("model metadata lacks the training box or context")
    ds = generate_dataset(m.target_name, {k: tuple(v) for k, v in box.items()}, n, seed, ctx)
    return float(max(0.0, np.max(ds.targets - predict_batch(m, ds.inputs))))


def zero_network(n_inputs: int, hidden: int, bias: float, box_lo, box_hi) -> Mlp:
    """Network whose output is the constant ``bias`` (useful as a stub)."""
    return Mlp(
        [np.zeros((hidden, n_inputs)), np.zeros((1, hidden))],
        [np.zeros(hidden), np.array([bias])],
        Scaler.from_box(box_lo, box_hi),
        Scaler(np.zeros(1), np.ones(1)),
    )


# ---------------------------------------------------------------------------
# bounds and MILP encoding


@dataclass
class NeuronBounds:
    lo: list  # per hidden layer arrays
    hi: list
    input_lo: np.ndarray
    input_hi: np.ndarray

    def active(self, k=0):
        return self.lo[k] >= 0

    def inactive(self, k=0):
        return self.hi[k] <= 0


def _folded_layers(m: Mlp):
    """Layers acting on engineering-unit inputs, output in engineering units."""
    Ws = [W.copy() for W in m.weights]
    bs = [b.copy() for b in m.biases]
    s = m.input_scaler
    bs[0] = bs[0] - Ws[0] @ (s.shift / s.scale)
    Ws[0] = Ws[0] / s.scale
    o = m.output_scaler
    Ws[-1] = Ws[-1] * o.scale[0]
    bs[-1] = bs[-1] * o.scale[0] + o.shift[0]
    return Ws, bs


def _affine_interval(W, b, lo, hi):
    Wp, Wn = np.maximum(W, 0.0), np.minimum(W, 0.0)
    return Wp @ lo + Wn @ hi + b, Wp @ hi + Wn @ lo + b


def propagate_bounds(m: Mlp, input_box, input_map=None) -> NeuronBounds:
    """Interval arithmetic through every affine layer and ReLU.

    With ``input_map = (G, g)`` the network input is ``G v + g`` and
    ``input_box`` bounds ``v``; the map is folded into the first layer so
    correlated inputs do not widen its bounds.
    """
    lo, hi = (np.asarray(v, float) for v in input_box)
    Ws, bs = _folded_layers(m)
    if input_map is not None:
        G, g = np.asarray(input_map[0], float), np.asarray(input_map[1], float)
        if G.shape != (m.n_inputs, lo.size) or g.shape != (m.n_inputs,):
            raise ValueError("input_map must be (G, g) with G of shape (n_inputs, len(v))")
        if np.any(hi < lo):
            raise ValueError("input_box must be (lo, hi) vectors with lo <= hi")
        x_lo, x_hi = _affine_interval(G, g, lo, hi)
        bs[0] = bs[0] + Ws[0] @ g
        Ws[0] = Ws[0] @ G
    else:
        if lo.shape != (m.n_inputs,) or hi.shape != lo.shape or np.any(hi < lo):
            raise ValueError("input_box must be (lo, hi) vectors with lo <= hi")
        x_lo, x_hi = lo, hi
    L, H = [], []
    a_lo, a_hi = lo, hi
    for W, b in zip(Ws[:-1], bs[:-1]):
        zl, zh = _affine_interval(W, b, a_lo, a_hi)
        L.append(zl)
        H.append(zh)
        a_lo, a_hi = np.maximum(zl, 0.0), np.maximum(zh, 0.0)
    return NeuronBounds(L, H, x_lo.copy(), x_hi.copy())


def _affine_terms(prev, w, b):
    """Linear terms and constant of ``w @ prev + b``; ``prev`` holds (var, None) or (None, value)."""
    terms, const = [], float(b)
    for (v, val), a in zip(prev, w):
        if a == 0.0:
            continue
        if v is None:
            const += a * val
        else:
            terms.append((v, float(a)))
    return terms, const


@dataclass
class MilpFragment:
    """Mixed-integer linear model of a ReLU network.

    ``layers`` holds folded (W, b) acting on engineering-unit inputs.
    ``mode`` per hidden neuron: ``"free"`` (binary, big-M rows),
    ``"active"`` (z = zhat) or ``"inactive"`` (z = 0).
    """

    layers: list
    bounds: NeuronBounds
    modes: list
    feature_names: list

    @property
    def n_binaries(self) -> int:
        return sum(int(np.sum(md == "free")) for md in self.modes)

    def attach(self, p: MilpProblem, prefix: str, input_lo=None, input_hi=None):
        """Add the fragment to ``p``; returns (input var indices, output var index)."""
        lo = self.bounds.input_lo if input_lo is None else np.asarray(input_lo, float)
        hi = self.bounds.input_hi if input_hi is None else np.asarray(input_hi, float)
        xs = [p.add_var(f"{prefix}x_{n}", lo[k], hi[k]) for k, n in enumerate(self.feature_names)]
        # affine pre-activations stay implicit: each row carries W @ prev + b
        prev = [(v, None) for v in xs]
        for k, (W, b) in enumerate(self.layers[:-1]):
            L, H, mode = self.bounds.lo[k], self.bounds.hi[k], self.modes[k]
            cur = []
            for i in range(W.shape[0]):
                aff, const = _affine_terms(prev, W[i], b[i])
                if mode[i] == "inactive":
                    cur.append((None, 0.0))
                    continue
                z = p.add_var(f"{prefix}z{k}_{i}", max(L[i], 0.0), max(H[i], 0.0))
                neg = [(v, -a) for v, a in aff]
                if mode[i] == "active":
                    p.add_constraint([(z, 1.0)] + neg, "==", const, name=f"{prefix}act{k}_{i}")
                else:
                    a = p.add_var(f"{prefix}a{k}_{i}", 0.0, 1.0, integer=True)
                    p.add_constraint([(z, 1.0)] + neg, ">=", const, name=f"{prefix}ge{k}_{i}")
                    p.add_constraint([(z, 1.0), (a, -L[i])] + neg, "<=", const - L[i], name=f"{prefix}lo{k}_{i}")
                    p.add_constraint([(z, 1.0), (a, -H[i])], "<=", 0.0, name=f"{prefix}hi{k}_{i}")
                cur.append((z, None))
            prev = cur
        W, b = self.layers[-1]
        y = p.add_var(f"{prefix}y", -math.inf, math.inf)
        aff, const = _affine_terms(prev, W[0], b[0])
        p.add_constraint([(y, 1.0)] + [(v, -a) for v, a in aff], "==", const, name=f"{prefix}out")
        return xs, y

    def complete_binaries(self, prefix: str, x) -> dict:
        """Activation binaries ``{name: 0/1}`` for engineering-unit input ``x``."""
        out = {}
        v = np.asarray(x, float)
        for k, (W, b) in enumerate(self.layers[:-1]):
            zh = W @ v + b
            for i in np.flatnonzero(self.modes[k] == "free"):
                out[f"{prefix}a{k}_{i}"] = 1.0 if zh[i] > 0 else 0.0
            v = np.maximum(zh, 0.0)
        return out

    def to_problem(self, name="fragment") -> tuple[MilpProblem, list, int]:
        p = MilpProblem(name)
        xs, y = self.attach(p, "")
        return p, xs, y


def encode_relu_milp(m: Mlp, bounds: NeuronBounds, fix_stable: bool = True) -> MilpFragment:
    """Big-M encoding with per-neuron bounds; stable neurons need no binary."""
    for L, H in zip(bounds.lo, bounds.hi):
        if np.any(L > H):
            raise ValueError("neuron bounds with lo > hi")
    Ws, bs = _folded_layers(m)
    modes = []
    for L, H in zip(bounds.lo, bounds.hi):
        md = np.full(L.shape, "free", dtype=object)
        if fix_stable:
            md[L >= 0] = "active"
            md[H <= 0] = "inactive"
        else:
            # a degenerate [0, 0] box still needs hi > lo for the big-M rows
            pass
        modes.append(md)
    return MilpFragment(list(zip(Ws, bs)), bounds, modes, list(m.feature_names) or
                        [f"f{k}" for k in range(m.n_inputs)])


def verify_encoding(m: Mlp, frag: MilpFragment, n: int = 100, seed: int = 0, tol: float = 1e-6) -> dict:
    """Fix random inputs in the fragment and compare min/max output with the forward pass."""
    rng = np.random.default_rng(seed)
    lo, hi = frag.bounds.input_lo, frag.bounds.input_hi
    p, xs, y = frag.to_problem()
    worst, witness = 0.0, None
    for _ in range(n):
        x = lo + (hi - lo) * rng.random(len(lo))
        ref = float(predict_batch(m, x[None])[0])
        q = p.copy()
        for j, v in zip(xs, x):
            q.set_bounds(j, v, v)
        vals = []
        for sgn in (1.0, -1.0):
            q.obj = [0.0] * q.n_vars
            q.obj[y] = sgn
            sol = solve_milp(q)
            vals.append(sol.x[y] if sol.status == "optimal" else math.nan)
        diff = max(abs(v - ref) if math.isfinite(v) else math.inf for v in vals)
        if diff > worst:
            worst = diff
            if diff > tol:
                witness = {"x": x.tolist(), "forward": ref, "milp_min": vals[0], "milp_max": vals[1]}
    return {"ok": witness is None, "max_abs_diff": worst, "n": n, "witness": witness}
