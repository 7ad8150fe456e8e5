"""Differentiable trajectory objectives for the navigation and collection policies.

Every term takes twists of shape (B, N, 2) holding (v, omega) per step,
integrates them from the robot's current pose and returns
``(value, dL/dtwists)`` with values of shape (B,).  A single horizon of
shape (N, 2) is also accepted and gives scalar values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DT, Twist, clamp_distance, rollout_backward, rollout_batch, wrap_angle

PS_VARIANTS = ("literal_min", "mean", "max_penetration")


@dataclass(frozen=True)
class ObjectiveWeights:
    w_c: float = 10.0
    w_r: float = 5.0
    w_cp: float = 10.0
    w_ps: float = 100.0
    w_i: float = 1.5
    r_h: float = 0.45
    r_r: float = 0.25

    def __post_init__(self):
        for k, v in vars(self).items():
            if v < 0:
                raise ValueError(f"weight {k} must be non-negative")

    @property
    def personal_bound(self) -> float:
        return self.r_h + self.r_r

    def scaled(self, c: float) -> "ObjectiveWeights":
        return ObjectiveWeights(self.w_c * c, self.w_r * c, self.w_cp * c, self.w_ps * c,
                                self.w_i * c, self.r_h, self.r_r)


def as_twists(twists) -> np.ndarray:
    if len(twists) and isinstance(twists[0], Twist):
        return np.array([[t.v, t.omega] for t in twists])
    return np.asarray(twists, dtype=float)


def _batched(fn):
    """Let objectives accept one horizon (N, 2) as well as a batch."""

    def wrapper(twists, *args, **kwargs):
        tw = as_twists(twists)
        if tw.ndim == 2:
            args = [np.asarray(a)[None] if isinstance(a, (np.ndarray, list, tuple)) else a for a in args]
            val, grad = fn(tw[None], *args, **kwargs)
            return float(val[0]), grad[0]
        return fn(tw, *args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_batched
def j_pose(twists, goal, dt=DT, heading_weight=0.1):
    """Squared distance from the final pose to the goal plus weighted heading error."""
    ro = rollout_batch(twists, dt)
    goal = np.asarray(goal, dtype=float)
    err = ro.pos[:, -1] - goal[:, :2]
    dth = wrap_angle(ro.theta[:, -1] - goal[:, 2])
    val = np.sum(err ** 2, axis=-1) + heading_weight * dth ** 2
    dpos = np.zeros_like(ro.pos)
    dpos[:, -1] = 2.0 * err
    dtheta = np.zeros_like(ro.theta)
    dtheta[:, -1] = 2.0 * heading_weight * dth
    return val, rollout_backward(ro, dpos, dtheta)


@_batched
def j_col(twists, obstacle_points, mask=None, dt=DT, radius=0.25, margin=0.05):
    """Sum over the horizon of the squared clearance shortfall to the nearest obstacle point."""
    ro = rollout_batch(twists, dt)
    pts = np.asarray(obstacle_points, dtype=float).reshape(len(ro.pos), -1, 2)
    if pts.shape[1] == 0:
        return np.zeros(len(ro.pos)), np.zeros(ro.pos.shape)
    diff = ro.pos[:, :, None, :] - pts[:, None, :, :]  # (B, N, M, 2)
    d = np.linalg.norm(diff, axis=-1)
    if mask is not None:
        d = np.where(np.asarray(mask, dtype=bool).reshape(len(ro.pos), 1, -1), d, np.inf)
    j = np.argmin(d, axis=-1)
    dmin = np.take_along_axis(d, j[..., None], -1)[..., 0]
    short = np.maximum(radius + margin - dmin, 0.0)
    val = np.sum(short ** 2, axis=-1)
    near = np.take_along_axis(diff, j[..., None, None], 2)[:, :, 0]
    safe = np.where(np.isfinite(dmin) & (dmin > 1e-12), dmin, 1.0)
    dpos = (-2.0 * short / safe)[..., None] * near
    return val, rollout_backward(ro, dpos)


@_batched
def j_reg(twists):
    """Mean squared change between successive twists plus mean squared turn rate."""
    n = twists.shape[1]
    diff = np.diff(twists, axis=1)
    val = np.sum(diff ** 2, axis=(1, 2)) / max(n - 1, 1) + np.mean(twists[..., 1] ** 2, axis=1)
    g = np.zeros_like(twists)
    if n > 1:
        g[:, 1:] += 2.0 * diff / (n - 1)
        g[:, :-1] -= 2.0 * diff / (n - 1)
    g[..., 1] += 2.0 * twists[..., 1] / n
    return val, g


@_batched
def j_int(twists, h_future, valid=None, dt=DT):
    """Closest approach between the planned robot path and the pedestrian's path."""
    ro = rollout_batch(twists, dt)
    diff = ro.pos - np.asarray(h_future, dtype=float)
    d = np.linalg.norm(diff, axis=-1)
    i = np.argmin(d, axis=-1)
    b = np.arange(len(d))
    val = d[b, i]
    dpos = np.zeros_like(ro.pos)
    dpos[b, i] = diff[b, i] / np.maximum(val, 1e-12)[:, None]
    if valid is not None:
        valid = np.asarray(valid, dtype=bool).reshape(-1)
        val = np.where(valid, val, 0.0)
        dpos[~valid] = 0.0
    return val, rollout_backward(ro, dpos)


def ps_penalty(d, bound=0.7, variant="literal_min"):
    """Personal-space terms |bound - clamp(d_i)| reduced over the horizon.

    ``literal_min`` takes the minimum term, ``mean`` averages them and
    ``max_penetration`` takes the largest.  Returns (value, dvalue/dd).
    """
    d = np.asarray(d, dtype=float)
    terms = np.abs(bound - clamp_distance(d, bound))
    inside = (d > 0) & (d < bound)
    dterm = np.where(inside, -1.0, 0.0)
    n = d.shape[-1]
    if variant == "mean":
        return terms.mean(axis=-1), dterm / n
    if variant == "literal_min":
        i = np.argmin(terms, axis=-1)
    elif variant == "max_penetration":
        i = np.argmax(terms, axis=-1)
    else:
        raise ValueError(f"unknown personal-space variant {variant!r}; pick one of {PS_VARIANTS}")
    val = np.take_along_axis(terms, i[..., None], -1)[..., 0]
    g = np.zeros_like(d)
    np.put_along_axis(g, i[..., None], np.take_along_axis(dterm, i[..., None], -1), -1)
    return val, g


@_batched
def j_ps(twists, h_hat, valid=None, dt=DT, bound=0.7, variant="literal_min"):
    """Personal-space objective for a fixed predicted pedestrian path ``h_hat``."""
    ro = rollout_batch(twists, dt)
    diff = np.asarray(h_hat, dtype=float) - ro.pos
    d = np.linalg.norm(diff, axis=-1)
    val, gd = ps_penalty(d, bound, variant)
    dpos = -(gd / np.maximum(d, 1e-12))[..., None] * diff
    if valid is not None:
        valid = np.asarray(valid, dtype=bool).reshape(-1)
        val = np.where(valid, val, 0.0)
        dpos[~valid] = 0.0
    return val, rollout_backward(ro, dpos)


def counterfactual_terms(predictor, h_past, r_past, twists, valid=None, *, w_cp=1.0, w_ps=1.0,
                         dt=DT, bound=0.7, variant="literal_min"):
    """Counterfactual perturbation and personal-space terms through a frozen predictor.

    The conditioned prediction depends on the robot plan, so both terms
    propagate gradients through the predictor's input gradients.  Returns
    (j_cp (B,), j_ps (B,), d(w_cp*j_cp + w_ps*j_ps)/dtwists, h_hat).
    """
    twists = as_twists(twists)
    single = twists.ndim == 2
    if single:
        twists, h_past, r_past = twists[None], np.asarray(h_past)[None], np.asarray(r_past)[None]
    predictor.eval()
    ro = rollout_batch(twists, dt)
    h_past = np.asarray(h_past, dtype=float)
    z = predictor.embed(h_past, r_past)
    h_now = h_past[:, -1]
    h_gw = predictor.integrate(h_now, predictor.velocities(z, np.zeros_like(ro.pos)))
    # conditioned pass last so its activations are the ones cached for backward
    h_hat = predictor.integrate(h_now, predictor.velocities(z, ro.pos))
    n = ro.pos.shape[1]
    gap = h_hat - h_gw
    jcp = np.sum(gap ** 2, axis=(1, 2)) / n
    diff = h_hat - ro.pos
    d = np.linalg.norm(diff, axis=-1)
    jps, gd = ps_penalty(d, bound, variant)
    unit = diff / np.maximum(d, 1e-12)[..., None]
    dh = w_cp * 2.0 * gap / n + w_ps * gd[..., None] * unit
    dr_direct = -w_ps * gd[..., None] * unit
    if valid is not None:
        valid = np.asarray(valid, dtype=bool).reshape(-1)
        jcp, jps = np.where(valid, jcp, 0.0), np.where(valid, jps, 0.0)
        dh[~valid] = 0.0
        dr_direct[~valid] = 0.0
    _, _, dr_pred = predictor.backward_positions(dh)
    grad = rollout_backward(ro, dr_direct + dr_pred)
    if single:
        return float(jcp[0]), float(jps[0]), grad[0], h_hat[0]
    return jcp, jps, grad, h_hat


def j_cp(predictor, h_past, r_past, twists, valid=None, dt=DT):
    """Mean squared gap between conditioned and give-way predictions; returns (value, grad)."""
    jcp, _, g, _ = counterfactual_terms(predictor, h_past, r_past, twists, valid, w_cp=1.0, w_ps=0.0, dt=dt)
    return jcp, g


def j_ps_predicted(predictor, h_past, r_past, twists, valid=None, dt=DT, bound=0.7, variant="literal_min"):
    _, jps, g, _ = counterfactual_terms(predictor, h_past, r_past, twists, valid, w_cp=0.0, w_ps=1.0,
                                        dt=dt, bound=bound, variant=variant)
    return jps, g


def j_nav(j_pose_val, j_col_val, j_reg_val, w: ObjectiveWeights):
    return j_pose_val + w.w_c * j_col_val + w.w_r * j_reg_val


def total_loss_social(j_nav_val, j_cp_val, j_ps_val, w: ObjectiveWeights):
    return j_nav_val + w.w_cp * j_cp_val + w.w_ps * j_ps_val


def total_loss_collect(j_nav_val, j_int_val, w: ObjectiveWeights):
    return j_nav_val + w.w_i * j_int_val
