"""Robot-conditioned pedestrian trajectory predictor.

The model sees the last eight pedestrian and robot positions and the robot's
next eight planned positions, all in the current robot frame, and outputs
eight pedestrian velocities that are integrated into positions.  Feeding an
all-zero robot plan asks what the pedestrian would do if the robot stopped
where it is (the give-way counterfactual).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import DT, Track, points_to_frame
from .socialforce import Rollout
from .tinynet import (CHECKPOINT_VERSION, CREATED_BY, Adam, CheckpointError, Network, load_json,
                      mlp, save_json)

log = logging.getLogger(__name__)

N_PAST = 8  # alpha + 1 points, alpha = N_s - 1
N_FUTURE = 8  # beta = N_s
V_LIMIT = 1.5  # m/s, per component
MIN_PED_SPEED = 0.1


@dataclass
class PredictorSamples:
    """Arrays of samples, every track in the robot frame at the current step."""

    h_past: np.ndarray  # (S, 8, 2)
    r_past: np.ndarray  # (S, 8, 2)
    r_future: np.ndarray  # (S, 8, 2)
    h_future: np.ndarray  # (S, 8, 2)
    scenario: np.ndarray  # (S,) source scenario id

    def __len__(self) -> int:
        return len(self.h_past)

    def take(self, idx) -> "PredictorSamples":
        return PredictorSamples(self.h_past[idx], self.r_past[idx], self.r_future[idx],
                                self.h_future[idx], self.scenario[idx])

    @classmethod
    def concat(cls, parts: list["PredictorSamples"]) -> "PredictorSamples":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("h_past", "r_past", "r_future", "h_future", "scenario")))

    @classmethod
    def empty(cls) -> "PredictorSamples":
        z = np.zeros((0, N_PAST, 2))
        return cls(z, z.copy(), z.copy(), z.copy(), np.zeros(0, dtype=int))

    def split(self, val_fraction: float, seed: int = 0):
        """Split by scenario so no rollout contributes to both halves."""
        ids = np.unique(self.scenario)
        rng = np.random.default_rng(seed)
        held = set(rng.choice(ids, size=max(1, int(round(len(ids) * val_fraction))), replace=False).tolist())
        mask = np.array([s in held for s in self.scenario])
        return self.take(~mask), self.take(mask)


def nearest_moving_ped(robot_xy, ped_xy, ped_speed_past, min_speed=MIN_PED_SPEED):
    """Index of the nearest pedestrian whose mean past speed exceeds ``min_speed``, or -1."""
    d = np.linalg.norm(ped_xy - robot_xy, axis=-1)
    d = np.where(ped_speed_past > min_speed, d, np.inf)
    if not np.isfinite(d).any():
        return -1
    return int(np.argmin(d))


def samples_from_rollout(r: Rollout, stride: int = 1) -> PredictorSamples:
    robots, peds = r.index("robot"), r.index("ped")
    if len(robots) != 1 or not peds:
        return PredictorSamples.empty()
    T = r.n_steps
    ts = np.arange(N_PAST - 1, T - N_FUTURE, stride)
    if len(ts) == 0:
        return PredictorSamples.empty()
    robot = r.states[:, robots[0]]  # (T, 5)
    ped = r.states[:, peds]  # (T, P, 5)
    speed = np.linalg.norm(ped[..., 3:5], axis=-1)  # (T, P)
    out = {k: [] for k in ("hp", "rp", "rf", "hf")}
    kept = []
    for t in ts:
        past = slice(t - N_PAST + 1, t + 1)
        mean_speed = speed[past].mean(axis=0)
        j = nearest_moving_ped(robot[t, :2], ped[t, :, :2], mean_speed)
        if j < 0:
            continue
        frame = robot[t, :3]
        fut = slice(t + 1, t + 1 + N_FUTURE)
        out["hp"].append(points_to_frame(ped[past, j, :2], frame))
        out["rp"].append(points_to_frame(robot[past, :2], frame))
        out["rf"].append(points_to_frame(robot[fut, :2], frame))
        out["hf"].append(points_to_frame(ped[fut, j, :2], frame))
        kept.append(t)
    if not kept:
        return PredictorSamples.empty()
    return PredictorSamples(np.array(out["hp"]), np.array(out["rp"]), np.array(out["rf"]),
                            np.array(out["hf"]), np.full(len(kept), r.scenario_id))


def build_samples(rollouts: list[Rollout], stride: int = 1, id_offset: int = 0) -> PredictorSamples:
    parts = []
    for r in rollouts:
        s = samples_from_rollout(r, stride)
        s.scenario = s.scenario + id_offset
        parts.append(s)
    return PredictorSamples.concat(parts)


class PedestrianPredictor:
    """fc1 embeds the two pasts; fc2 maps (embedding, robot plan) to velocities."""

    def __init__(self, hidden: int = 256, embed: int = 64, seed: int = 0, dt: float = DT):
        self.dt = dt
        self.fc1 = mlp([2 * N_PAST * 2, hidden, hidden, embed], seed=seed, batchnorm_last=True)
        self.fc2 = mlp([embed + N_FUTURE * 2, hidden, hidden, N_FUTURE * 2], seed=seed + 1,
                       out_scale=V_LIMIT)
        self.meta: dict = {}

    def networks(self) -> list[Network]:
        return [self.fc1, self.fc2]

    def parameters(self) -> list[np.ndarray]:
        return self.fc1.parameters() + self.fc2.parameters()

    def train(self):
        self.fc1.train()
        self.fc2.train()
        return self

    def eval(self):
        self.fc1.eval()
        self.fc2.eval()
        return self

    def checksum(self) -> float:
        return self.fc1.checksum() + self.fc2.checksum()

    # forward pieces, all batched
    def embed(self, h_past, r_past):
        x = np.concatenate([np.reshape(h_past, (-1, N_PAST * 2)), np.reshape(r_past, (-1, N_PAST * 2))], axis=1)
        return self.fc1(x)

    def velocities(self, z, r_future):
        x = np.concatenate([z, np.reshape(r_future, (-1, N_FUTURE * 2))], axis=1)
        return self.fc2(x).reshape(-1, N_FUTURE, 2)

    def integrate(self, h_now, vel):
        return h_now[:, None, :] + np.cumsum(vel, axis=1) * self.dt

    def predict(self, h_past, r_past, r_future):
        h_past = np.asarray(h_past, dtype=float).reshape(-1, N_PAST, 2)
        z = self.embed(h_past, r_past)
        return self.integrate(h_past[:, -1], self.velocities(z, r_future))

    def backward_positions(self, dpos, need_params=False):
        """Push dL/d(predicted positions) through the last ``velocities`` call.

        Returns (fc2 param grads, dL/dz, dL/dr_future).
        """
        dvel = np.flip(np.cumsum(np.flip(dpos, 1), axis=1), 1) * self.dt
        pg, dx = self.fc2.backward(dvel.reshape(len(dvel), -1), need_params)
        e = dx.shape[1] - N_FUTURE * 2
        return pg, dx[:, :e], dx[:, e:].reshape(-1, N_FUTURE, 2)

    def to_dict(self, meta: dict | None = None) -> dict:
        return {"version": CHECKPOINT_VERSION, "model": "predictor", "dt": self.dt,
                "fc1": self.fc1.to_dict(), "fc2": self.fc2.to_dict(),
                "meta": {"created": CREATED_BY, **self.meta, **(meta or {})}}

    @classmethod
    def from_dict(cls, d: dict) -> "PedestrianPredictor":
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint version {d.get('version')} != {CHECKPOINT_VERSION}")
        if d.get("model") != "predictor":
            raise CheckpointError(f"not a predictor checkpoint (model={d.get('model')!r})")
        p = cls.__new__(cls)
        p.dt = float(d.get("dt", DT))
        p.fc1 = Network.from_dict(d["fc1"])
        p.fc2 = Network.from_dict(d["fc2"])
        p.meta = d.get("meta", {})
        return p.eval()

    def save(self, path, meta: dict | None = None) -> None:
        save_json(self.to_dict(meta), path)

    @classmethod
    def load(cls, path) -> "PedestrianPredictor":
        return cls.from_dict(load_json(path))


def _as_points(t, n):
    pts = t.points if isinstance(t, Track) else np.asarray(t, dtype=float)
    if pts.shape[-2:] != (n, 2):
        raise ValueError(f"expected {n} points per track, got shape {pts.shape}")
    return pts


def _check_frames(*tracks):
    frames = {t.frame for t in tracks if isinstance(t, Track)}
    if len(frames) > 1:
        raise ValueError(f"tracks are in different frames: {sorted(frames)}")


def predict_future(net: PedestrianPredictor, h_past, r_past, r_future):
    """Predicted pedestrian positions given the robot's planned positions.

    Accepts :class:`Track` objects (returns a Track) or stacked arrays.
    """
    _check_frames(h_past, r_past, r_future)
    hp, rp, rf = _as_points(h_past, N_PAST), _as_points(r_past, N_PAST), _as_points(r_future, N_FUTURE)
    out = net.predict(hp, rp, rf)
    if isinstance(h_past, Track):
        return Track(out[0], dt=h_past.dt, frame=h_past.frame)
    return out if hp.ndim == 3 else out[0]


def predict_giveway(net: PedestrianPredictor, h_past, r_past):
    """Prediction when the robot stops at its current pose (zero plan)."""
    hp = _as_points(h_past, N_PAST)
    zeros = np.zeros(hp.shape[:-2] + (N_FUTURE, 2))
    if isinstance(h_past, Track):
        zeros = Track(zeros, dt=h_past.dt, frame=h_past.frame)
    return predict_future(net, h_past, r_past, zeros)


def eval_predictor(net: PedestrianPredictor, data: PredictorSamples, batch: int = 4096,
                   min_disp: float = 1e-6) -> tuple[float, float]:
    """Mean squared position error (m^2 per step) and mean displacement cosine."""
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    net.eval()
    preds = np.concatenate([net.predict(data.h_past[i:i + batch], data.r_past[i:i + batch],
                                        data.r_future[i:i + batch]) for i in range(0, len(data), batch)])
    return prediction_scores(preds, data.h_future, data.h_past[:, -1], min_disp)


def prediction_scores(pred, true, h_now, min_disp=1e-6):
    mse = float(np.mean(np.sum((pred - true) ** 2, axis=-1)))
    dp = pred - h_now[:, None]
    dtru = true - h_now[:, None]
    nt, npd = np.linalg.norm(dtru, axis=-1), np.linalg.norm(dp, axis=-1)
    ok = nt >= min_disp
    cos = np.sum(dp * dtru, axis=-1)[ok] / np.maximum(nt[ok] * npd[ok], 1e-12)
    return mse, float(cos.mean()) if cos.size else float("nan")


def train_predictor(primary: PredictorSamples, secondary: PredictorSamples | None = None, *,
                    epochs: int = 5, seed: int = 0, batch: int = 80, lr: float = 1e-3,
                    hidden: int = 256, val: PredictorSamples | None = None,
                    curve_path=None, init: PedestrianPredictor | None = None,
                    lr_decay: float = 0.5, dt: float = DT) -> PedestrianPredictor:
    """Fit the predictor by minimizing mean squared future-position error.

    When ``secondary`` is given each batch is half ``primary`` and half
    ``secondary`` (e.g. collected data mixed with the social-force corpus).
    """
    if len(primary) == 0 or (secondary is not None and len(secondary) == 0):
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(seed)
    net = init or PedestrianPredictor(hidden=hidden, seed=seed, dt=dt)
    net.train()
    opt = Adam(net.parameters(), lr=lr)
    sources = [primary] if secondary is None else [primary, secondary]
    shares = [batch] if secondary is None else [batch // 2, batch - batch // 2]
    total = sum(len(s) for s in sources)
    iters = max(1, total // batch)
    orders = [rng.permutation(len(s)) for s in sources]
    cursors = [0] * len(sources)
    rows = []
    for epoch in range(1, epochs + 1):
        net.train()
        losses = []
        for it in range(iters):
            idx_parts = []
            for k, (src, n) in enumerate(zip(sources, shares)):
                if cursors[k] + n > len(src):
                    orders[k] = rng.permutation(len(src))
                    cursors[k] = 0
                idx_parts.append((src, orders[k][cursors[k]:cursors[k] + n]))
                cursors[k] += n
            b = PredictorSamples.concat([s.take(i) for s, i in idx_parts])
            loss = _train_step(net, opt, b)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite predictor loss at epoch {epoch}, iteration {it}")
            losses.append(loss)
        train_mse = float(np.mean(losses))
        row = {"epoch": epoch, "train_mse": train_mse}
        if val is not None and len(val):
            row["val_mse"], row["val_cosine"] = eval_predictor(net, val)
        rows.append(row)
        log.info("predictor epoch %d: %s", epoch, row)
        if lr_decay and epoch >= max(2, epochs // 2):
            opt.lr *= lr_decay
    net.eval()
    net.meta = {"seed": seed, "epochs": epochs, "batch": batch, "lr": lr}
    net.curve = rows
    if curve_path is not None:
        write_curve(rows, curve_path, ["epoch", "train_mse", "val_mse", "val_cosine"])
    return net


def _train_step(net: PedestrianPredictor, opt: Adam, b: PredictorSamples) -> float:
    pred = net.predict(b.h_past, b.r_past, b.r_future)
    err = pred - b.h_future
    n = len(err) * N_FUTURE
    loss = float(np.sum(err ** 2) / n)
    g2, dz, _ = net.backward_positions(2.0 * err / n, need_params=True)
    g1, _ = net.fc1.backward(dz)
    opt.step(g1 + g2)
    return loss


def write_curve(rows: list[dict], path, fields: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([r["epoch"]] + [format(r[f], ".10g") if f in r else "" for f in fields[1:]])
