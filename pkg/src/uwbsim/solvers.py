"""Position solvers: CFO-corrected two-way ranging, trilateration, downlink TDOA.

All measurement times are float seconds in the measuring node's own clock
units; positions are meters. The forward models here mirror exactly what the
protocol layer puts on the air, so solving a noise-free round reproduces the
true position to numerical precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import SPEED_OF_LIGHT
from .core import Position3


class SolverError(ValueError):
    pass


class ImplausibleRange(SolverError):
    """A corrected range fell far outside what the radio can span."""


class InsufficientMeasurements(SolverError):
    pass


class DegenerateGeometry(SolverError):
    """Anchor geometry cannot constrain the requested dimensions."""


class NoConvergence(SolverError):
    pass


class MissingReference(SolverError):
    """A TDOA set needs exactly one reference measurement."""


class AllWeightsZero(SolverError):
    """Every particle weight underflowed; residual_sigma is misconfigured."""


@dataclass(frozen=True, slots=True)
class TwrMeasurement:
    """One poll/response exchange as the initiating tag measured it.

    cfo is the anchor-clock-over-tag-clock ratio the tag's PHY reported.
    t_reply_reported_s is the reply delay the anchor embedded in its frame;
    when absent the solver falls back to the nominal schedule value.
    """

    anchor_position: Position3
    t_round_s: float
    t_reply_nominal_s: float
    t_reply_reported_s: Optional[float] = None
    cfo: float = 1.0


@dataclass(frozen=True, slots=True)
class TdoaMeasurement:
    """One frame arrival at a passive listener.

    The reference row is the initiator's own frame (delta_t_s = 0); response
    rows carry the transmitting anchor's position, its scheduled reply delay,
    and the measured CFO ratio of that anchor against the listener.
    """

    t_arrival_s: float
    is_reference: bool = False
    anchor_position: Optional[Position3] = None
    delta_t_s: float = 0.0
    cfo: float = 1.0


@dataclass(frozen=True, slots=True)
class SolverParams:
    dimension: str = "2d"
    fixed_z_m: float = 0.0
    n_particles: int = 10_000
    residual_sigma_s: float = 0.3e-9
    max_iters: int = 25
    step_tol_m: float = 1e-6
    damping: float = 1e-3
    bounding_box: Optional[tuple[tuple[float, float, float], tuple[float, float, float]]] = None
    box_margin_m: float = 5.0

    def __post_init__(self) -> None:
        if self.dimension not in ("2d", "3d"):
            raise ValueError(f"dimension must be '2d' or '3d', got {self.dimension!r}")
        if self.n_particles < 100:
            raise ValueError("n_particles must be at least 100")
        if self.residual_sigma_s <= 0.0:
            raise ValueError("residual_sigma_s must be positive")


@dataclass(frozen=True, slots=True)
class TrilaterationResult:
    position: Position3
    covariance: np.ndarray
    residual_rms_m: float
    iterations: int


@dataclass(frozen=True, slots=True)
class TdoaSolution:
    position: Position3
    spread_m: float
    converged: bool
    n_measurements: int


def cc_ss_twr_range(measurement: TwrMeasurement, max_range_m: float = 50.0) -> float:
    """Distance from a single-sided exchange with CFO correction.

    time_of_flight = (t_round - cfo * t_reply) / 2. The cfo factor converts
    the anchor-reported reply delay into tag clock units, cancelling the
    first-order skew bias of plain single-sided ranging.
    """
    t_reply = measurement.t_reply_reported_s
    if t_reply is None:
        t_reply = measurement.t_reply_nominal_s
    tof = (measurement.t_round_s - measurement.cfo * t_reply) / 2.0
    rng_m = tof * SPEED_OF_LIGHT
    if rng_m > 2.0 * max_range_m or rng_m < -0.5:
        raise ImplausibleRange(f"corrected range {rng_m:.3f} m not plausible")
    return max(rng_m, 0.0)


def _positions_array(positions: Sequence[Position3]) -> np.ndarray:
    return np.array([p.as_tuple() for p in positions], dtype=float)


def _check_geometry(anchors: np.ndarray, dimension: str) -> None:
    centered = anchors - anchors.mean(axis=0)
    if dimension == "2d":
        centered = centered[:, :2]
        needed = 2
    else:
        needed = 3
    sv = np.linalg.svd(centered, compute_uv=False)
    if len(sv) < needed or sv[0] == 0.0 or sv[needed - 1] / sv[0] < 1e-6:
        raise DegenerateGeometry(
            "anchors are collinear" if dimension == "2d" else "anchors are coplanar"
        )


def _lift(xy_or_xyz: np.ndarray, params: SolverParams) -> np.ndarray:
    if params.dimension == "2d":
        return np.array([xy_or_xyz[0], xy_or_xyz[1], params.fixed_z_m])
    return xy_or_xyz


def trilaterate(
    ranges: Sequence[tuple[Position3, float]],
    params: SolverParams,
) -> TrilaterationResult:
    """Least-squares position from anchor/range pairs via damped Gauss-Newton.

    Starts at the anchor centroid and minimizes the sum of squared range
    residuals; 2d solves keep z pinned at params.fixed_z_m. The covariance is
    the standard (J^T J)^-1 sigma^2 proxy with sigma the residual RMS.
    """
    needed = 3 if params.dimension == "2d" else 4
    if len(ranges) < needed:
        raise InsufficientMeasurements(
            f"{params.dimension} trilateration needs {needed} ranges, got {len(ranges)}"
        )
    anchors = _positions_array([p for p, _ in ranges])
    dists = np.array([r for _, r in ranges], dtype=float)
    if np.any(dists < 0.0):
        raise ValueError("negative range")
    _check_geometry(anchors, params.dimension)

    dims = 2 if params.dimension == "2d" else 3
    x = anchors.mean(axis=0)[:dims].copy()

    lam = params.damping
    iterations = 0
    residuals = _range_residuals(_lift(x, params), anchors, dists)
    cost = float(residuals @ residuals)
    for iterations in range(1, params.max_iters + 1):
        jac = _range_jacobian(_lift(x, params), anchors)[:, :dims]
        gradient = jac.T @ residuals
        hessian = jac.T @ jac
        step = np.linalg.solve(hessian + lam * np.eye(dims), -gradient)
        candidate = x + step
        cand_res = _range_residuals(_lift(candidate, params), anchors, dists)
        cand_cost = float(cand_res @ cand_res)
        if cand_cost <= cost:
            x, residuals, cost = candidate, cand_res, cand_cost
            lam = max(lam * 0.3, 1e-12)
            if float(np.linalg.norm(step)) < params.step_tol_m:
                break
        else:
            lam *= 10.0
    else:
        raise NoConvergence(f"no step below {params.step_tol_m} m in {params.max_iters} iterations")

    dof = len(ranges) - dims
    sigma_sq = cost / dof if dof > 0 else 0.0
    jac = _range_jacobian(_lift(x, params), anchors)[:, :dims]
    covariance = np.linalg.inv(jac.T @ jac) * sigma_sq
    return TrilaterationResult(
        position=Position3(*_lift(x, params)),
        covariance=covariance,
        residual_rms_m=math.sqrt(cost / len(ranges)),
        iterations=iterations,
    )


def _range_residuals(p: np.ndarray, anchors: np.ndarray, dists: np.ndarray) -> np.ndarray:
    return np.linalg.norm(anchors - p, axis=1) - dists


def _range_jacobian(p: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    diff = p - anchors
    norms = np.linalg.norm(diff, axis=1)
    norms = np.where(norms == 0.0, 1e-12, norms)
    return diff / norms[:, None]


def _split_reference(
    measurements: Sequence[TdoaMeasurement],
) -> tuple[TdoaMeasurement, list[TdoaMeasurement]]:
    refs = [m for m in measurements if m.is_reference]
    if len(refs) != 1:
        raise MissingReference(f"need exactly 1 reference measurement, got {len(refs)}")
    others = [m for m in measurements if not m.is_reference]
    if any(m.anchor_position is None for m in others):
        raise ValueError("response measurement without anchor position")
    return refs[0], others


def tdoa_predicted_arrivals(
    positions: np.ndarray,
    initiator: Position3,
    others: Sequence[TdoaMeasurement],
) -> np.ndarray:
    """Predicted (response - reference) arrival gaps for candidate positions.

    For a listener at p, response i arrives at
        t_init + d(initiator, X_i)/c + delta_t_i * cfo_i + d(X_i, p)/c
    and the initiator's own frame at t_init + d(initiator, p)/c; the unknown
    t_init cancels in the difference. positions is (n, 3); returns (n, k).
    """
    init = np.asarray(initiator.as_tuple())
    anchors = _positions_array([m.anchor_position for m in others])
    fixed = (
        np.linalg.norm(anchors - init, axis=1) / SPEED_OF_LIGHT
        + np.array([m.delta_t_s * m.cfo for m in others])
    )
    d_anchor = np.linalg.norm(positions[:, None, :] - anchors[None, :, :], axis=2)
    d_init = np.linalg.norm(positions - init, axis=1)
    return fixed[None, :] + (d_anchor - d_init[:, None]) / SPEED_OF_LIGHT


def tdoa_residuals(
    position: Position3,
    measurements: Sequence[TdoaMeasurement],
    initiator: Position3,
) -> np.ndarray:
    """Measured-minus-predicted arrival gaps, in seconds, at one position."""
    ref, others = _split_reference(measurements)
    measured = np.array([m.t_arrival_s - ref.t_arrival_s for m in others])
    predicted = tdoa_predicted_arrivals(
        np.asarray(position.as_tuple())[None, :], initiator, others
    )[0]
    return measured - predicted


def tdoa_jacobian(
    position: Position3,
    others: Sequence[TdoaMeasurement],
    initiator: Position3,
) -> np.ndarray:
    """Analytic d(residual)/d(position), shape (k, 3)."""
    p = np.asarray(position.as_tuple())
    init = np.asarray(initiator.as_tuple())
    anchors = _positions_array([m.anchor_position for m in others])
    to_anchor = p - anchors
    na = np.linalg.norm(to_anchor, axis=1)
    na = np.where(na == 0.0, 1e-12, na)
    to_init = p - init
    ni = np.linalg.norm(to_init)
    ni = ni if ni > 0.0 else 1e-12
    return -(to_anchor / na[:, None] - to_init / ni) / SPEED_OF_LIGHT


def _default_box(
    others: Sequence[TdoaMeasurement],
    initiator: Position3,
    params: SolverParams,
) -> tuple[np.ndarray, np.ndarray]:
    pts = _positions_array([m.anchor_position for m in others] + [initiator])
    lo = pts.min(axis=0) - params.box_margin_m
    hi = pts.max(axis=0) + params.box_margin_m
    return lo, hi


def particle_filter_solve(
    measurements: Sequence[TdoaMeasurement],
    initiator: Position3,
    params: SolverParams,
    rng: np.random.Generator,
) -> TdoaSolution:
    """Static particle filter over the bounding box, then local refinement.

    Particles are weighted by exp(-|residuals|^2 / (2 sigma^2)); the weighted
    mean seeds a damped Gauss-Newton polish. If the polish fails to converge
    the weighted mean is returned with converged=False.
    """
    ref, others = _split_reference(measurements)
    needed = 3 if params.dimension == "2d" else 4
    if len(others) < needed:
        raise InsufficientMeasurements(
            f"{params.dimension} TDOA needs {needed} responses, got {len(others)}"
        )

    if params.bounding_box is not None:
        lo = np.asarray(params.bounding_box[0], dtype=float)
        hi = np.asarray(params.bounding_box[1], dtype=float)
    else:
        lo, hi = _default_box(others, initiator, params)

    n = params.n_particles
    particles = rng.uniform(lo, hi, size=(n, 3))
    if params.dimension == "2d":
        particles[:, 2] = params.fixed_z_m

    measured = np.array([m.t_arrival_s - ref.t_arrival_s for m in others])
    predicted = tdoa_predicted_arrivals(particles, initiator, others)
    cost = np.sum((measured[None, :] - predicted) ** 2, axis=1)

    scale = 2.0 * params.residual_sigma_s**2
    min_cost = float(cost.min())
    if min_cost / scale > 700.0:
        raise AllWeightsZero(
            "all particle weights underflow; residual_sigma_s is far too small "
            "for the observed residuals"
        )
    weights = np.exp(-(cost - min_cost) / scale)
    total = float(weights.sum())
    mean = (weights[:, None] * particles).sum(axis=0) / total
    var = (weights[:, None] * (particles - mean) ** 2).sum(axis=0) / total
    spread = float(np.sqrt(var.sum()))

    if params.dimension == "2d":
        mean[2] = params.fixed_z_m

    try:
        refined = _refine_tdoa(mean, measured, others, initiator, params)
        return TdoaSolution(Position3(*refined), spread, True, len(others) + 1)
    except NoConvergence:
        return TdoaSolution(Position3(*mean), spread, False, len(others) + 1)


def _refine_tdoa(
    start: np.ndarray,
    measured: np.ndarray,
    others: Sequence[TdoaMeasurement],
    initiator: Position3,
    params: SolverParams,
) -> np.ndarray:
    dims = 2 if params.dimension == "2d" else 3
    x = start[:dims].copy()
    lam = params.damping

    def res(v: np.ndarray) -> np.ndarray:
        p = _lift(v, params) if dims == 2 else v
        pred = tdoa_predicted_arrivals(p[None, :], initiator, others)[0]
        return measured - pred

    residuals = res(x)
    cost = float(residuals @ residuals)
    for _ in range(params.max_iters):
        jac = tdoa_jacobian(Position3(*_lift(x, params)), others, initiator)[:, :dims]
        gradient = jac.T @ residuals
        hessian = jac.T @ jac
        step = np.linalg.solve(hessian + lam * np.trace(hessian) / dims * np.eye(dims), -gradient)
        candidate = x + step
        cand_res = res(candidate)
        cand_cost = float(cand_res @ cand_res)
        if cand_cost <= cost:
            x, residuals, cost = candidate, cand_res, cand_cost
            lam = max(lam * 0.3, 1e-12)
            if float(np.linalg.norm(step)) < params.step_tol_m:
                return _lift(x, params)
        else:
            lam *= 10.0
    raise NoConvergence("TDOA refinement did not reach step tolerance")
