"""Closed-form hyperparameters of the convergence analysis and runtime
monitors for the step-by-step inequalities it rests on.

Monitors never abort a run: every check yields a signed slack (positive
means satisfied) and a three-way verdict. "Not applicable" is distinct
from failure, because each inequality has preconditions and a negative
control run is a first-class experiment, not an error.

All log-of-loss quantities come from the loss's log channel, never from
log(value): instrumented runs hold the loss near 1e-13 and below, where
relative error in the value would contaminate log(1/J).
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .activations import Activation
from .linalg import WeightStack, frobenius_norm, stack_axpy
from .network import Dataset, LossValue, gradient

CSV_COLUMNS = (
    "t",
    "J",
    "logJ",
    "grad_norm",
    "weight_norm",
    "lower_bound",
    "upper_bound",
    "rate_bound",
    "i1",
    "i2",
    "i3",
    "descent_ok",
    "alignment_ok",
    "phase",
)

CHECK_KEYS = (
    "i1",
    "i2",
    "i3",
    "i3_sqrtp",
    "descent",
    "alignment",
    "lower",
    "upper",
    "floor",
)


class Verdict(enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    NA = "na"


@dataclass(frozen=True)
class Tolerances:
    """Slack thresholds below which a monitored inequality counts as failed.

    Slacks are relative unless noted; they separate genuine violations
    from double-precision rounding in the measured quantities.
    """

    i1_log: float = 1e-12  # absolute, in log-loss space
    i2_rel: float = 1e-12
    i3_rel: float = 1e-12
    descent_rel: float = 1e-12  # relative to J_t
    lower_rel: float = 1e-12
    alignment_rel: float = 1e-12
    upper_rel: float = 1e-10
    floor_abs: float = 0.0  # the floor inequality is strict


DEFAULT_TOLERANCES = Tolerances()


def _as_loss(J) -> LossValue:
    if isinstance(J, LossValue):
        return J
    return LossValue.from_value(float(J))


@dataclass(frozen=True)
class TheoryConstants:
    h_max: float
    alpha_max: float
    q_tilde: float
    inputs_echo: dict


def compute_h_max(J1, p: int, L: int, normV1: float) -> float:
    """min{ L^(L/2-3) log(1/J1) / (24 sqrt(p) ||V1||^L), 1 }."""
    J1 = _as_loss(J1)
    _check_constants_inputs(J1, p, L, normV1)
    raw = L ** (L / 2.0 - 3.0) * J1.log_inverse() / (24.0 * math.sqrt(p) * normV1**L)
    return min(raw, 1.0)


def compute_alpha_max(h: float, J1, p: int, L: int, normV1: float) -> float:
    """Two-term minimum: a smoothness budget and a rate-quadratic budget."""
    J1 = _as_loss(J1)
    _check_constants_inputs(J1, p, L, normV1)
    if not (0.0 < h <= compute_h_max(J1, p, L, normV1)):
        raise ValueError("h must be positive and at most h_max for these inputs")
    term_smooth = h / (1024.0 * (L + 1) ** 2 * p * J1.value * normV1 ** (3 * L + 5))
    log_inv = J1.log_inverse()
    term_rate = (L + 0.5) * normV1**2 / (
        2.0 * L * (L + 0.75) ** 2 * J1.value * log_inv ** (2.0 / L)
    )
    return min(term_smooth, term_rate)


def compute_q_tilde(alpha: float, J1, L: int, normV1: float) -> float:
    """L (L+3/4)^2 alpha J1 log^(2/L)(1/J1) / ((L+1/2) ||V1||^2)."""
    J1 = _as_loss(J1)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    log_inv = J1.log_inverse()
    return (
        L * (L + 0.75) ** 2 * alpha * J1.value * log_inv ** (2.0 / L)
        / ((L + 0.5) * normV1**2)
    )


def theory_constants(
    J1, p: int, L: int, normV1: float, n: int, h: float, alpha: float | None = None
) -> TheoryConstants:
    """Evaluate all three constants for one run and echo the inputs.

    q_tilde is evaluated at `alpha` when given, else at alpha_max(h).
    """
    J1 = _as_loss(J1)
    alpha_max = compute_alpha_max(h, J1, p, L, normV1)
    if alpha is None:
        alpha = alpha_max
    return TheoryConstants(
        h_max=compute_h_max(J1, p, L, normV1),
        alpha_max=alpha_max,
        q_tilde=compute_q_tilde(alpha, J1, L, normV1),
        inputs_echo={
            "J1": J1.value,
            "logJ1": J1.log_value,
            "p": p,
            "L": L,
            "normV1": normV1,
            "n": n,
            "h": h,
            "alpha": alpha,
        },
    )


def _check_constants_inputs(J1: LossValue, p: int, L: int, normV1: float) -> None:
    if not (J1.log_value < 0.0):
        raise ValueError("initial loss must be in (0, 1)")
    if p < 1 or L < 1:
        raise ValueError("need p >= 1 and L >= 1")
    if not normV1 > 0:
        raise ValueError("initial weight norm must be positive")


def grad_lower_bound(J_t, normVt: float, L: int) -> float:
    """(L+3/4) J_t log(1/J_t) / ||V_t||, log taken from the log channel."""
    J_t = _as_loss(J_t)
    if math.isnan(J_t.value) or J_t.value < 0:
        raise ValueError("loss must be a nonnegative number")
    if J_t.value > 0:
        prod = J_t.value * J_t.log_inverse()
    elif math.isfinite(J_t.log_value):
        # value channel underflowed; J log(1/J) = exp(logJ + log(-logJ))
        prod = math.exp(J_t.log_value + math.log(-J_t.log_value))
    else:
        prod = 0.0
    return (L + 0.75) * prod / normVt


def grad_upper_bound(J, normV: float, p: int, L: int) -> float:
    """sqrt((L+1) p) ||V||^(L+1) min{J, 1}; valid once ||V|| >= sqrt(L+1/2)."""
    J = _as_loss(J)
    return math.sqrt((L + 1) * p) * normV ** (L + 1) * min(J.value, 1.0)


def grad_upper_bound_applicable(normV: float, L: int) -> bool:
    return normV >= math.sqrt(L + 0.5)


def smoothness_bound(J, normV: float, p: int, L: int, h: float) -> float:
    """256 (L+1) sqrt(p) ||V||^(3L+5) J / h; valid for h <= 1 and large ||V||."""
    J = _as_loss(J)
    return 256.0 * (L + 1) * math.sqrt(p) * normV ** (3 * L + 5) * J.value / h


def weight_norm_floor(L: int) -> float:
    """sqrt(L+1): every iterate below the small-loss threshold exceeds it."""
    if L < 1:
        raise ValueError("need L >= 1")
    return math.sqrt(L + 1.0)


def small_loss_log_threshold(n: int, L: int) -> float:
    """log of 1/n^(1+24L), the loss level below which the rate analysis engages."""
    return -(1 + 24 * L) * math.log(n)


@dataclass(frozen=True)
class RunContext:
    """Everything fixed along one monitored run.

    `instrumented=False` marks a phase outside the small-loss analysis
    (no admissible constants exist there); the constant-dependent checks
    then report not-applicable while regime-free ones keep running.
    """

    p: int
    L: int
    n: int
    h: float
    alpha: float
    Q: float
    J1: LossValue
    normV1: float
    constants: TheoryConstants | None
    instrumented: bool = True
    tolerances: Tolerances = DEFAULT_TOLERANCES


@dataclass(frozen=True)
class StepState:
    """Raw measurements at one iterate, input to the monitor."""

    t: int
    loss: LossValue
    grad_norm: float
    weight_norm: float
    grad_dot_weights: float  # gradient . weights (positive means misaligned)


@dataclass(frozen=True)
class StepRecord:
    t: int
    loss: LossValue
    grad_norm: float
    weight_norm: float
    lower_bound: float
    upper_bound: float
    rate_bound: float
    descent_lhs: float | None
    descent_rhs: float | None
    verdicts: Mapping[str, Verdict]
    slacks: Mapping[str, float]
    phase: int = 1

    def failed_checks(self) -> list[str]:
        return [k for k, v in self.verdicts.items() if v is Verdict.FAIL]


def _verdict(slack: float, tol: float, applicable: bool) -> Verdict:
    if not applicable:
        return Verdict.NA
    return Verdict.PASS if slack >= -tol else Verdict.FAIL


def monitor_transition(
    prev: StepState, nxt: StepState | None, ctx: RunContext, phase: int = 1
) -> StepRecord:
    """Evaluate every bound and invariant at `prev`, using `nxt` for the
    one-step descent inequality (skipped on the final recorded step).

    Checks whose preconditions fail are marked not-applicable, never
    failed: every inequality here is conditional on the run being inside
    its regime, and a monitor that cried wolf outside the regime would
    be useless for negative controls.
    """
    tol = ctx.tolerances
    L, p, n = ctx.L, ctx.p, ctx.n
    J = prev.loss
    normV = prev.weight_norm
    small_loss = J.log_value < small_loss_log_threshold(n, L)
    inst = ctx.instrumented
    verdicts: dict[str, Verdict] = {}
    slacks: dict[str, float] = {}

    # I1, the headline rate: J_t <= J_1 / (Q (t-1) + 1), checked in log space
    rate_bound_log = ctx.J1.log_value - math.log1p(ctx.Q * (prev.t - 1))
    rate_bound = ctx.J1.value / (ctx.Q * (prev.t - 1) + 1.0)
    slacks["i1"] = rate_bound_log - J.log_value if inst else math.nan
    slacks["i1_value"] = (rate_bound - J.value) / ctx.J1.value if inst else math.nan
    verdicts["i1"] = _verdict(slacks["i1"], tol.i1_log, inst)

    # I2: log(1/J_t)/||V_t||^L never drops below its initial value
    if inst:
        m_t = J.log_inverse() / normV**L
        m_1 = ctx.J1.log_inverse() / ctx.normV1**L
        slacks["i2"] = (m_t - m_1) / m_1
    else:
        slacks["i2"] = math.nan
    verdicts["i2"] = _verdict(slacks["i2"], tol.i2_rel, inst)

    # I3: step size small against the smoothness scale, p as stated; the
    # sqrt(p) variant appears in one proof display and is recorded too
    i3_bound = ctx.h / (1024.0 * (L + 1) ** 2 * p * normV ** (3 * L + 5))
    slacks["i3"] = (i3_bound - ctx.alpha * J.value) / i3_bound if inst else math.nan
    verdicts["i3"] = _verdict(slacks["i3"], tol.i3_rel, inst)
    i3s_bound = i3_bound * math.sqrt(p)
    slacks["i3_sqrtp"] = (
        (i3s_bound - ctx.alpha * J.value) / i3s_bound if inst else math.nan
    )
    verdicts["i3_sqrtp"] = _verdict(slacks["i3_sqrtp"], tol.i3_rel, inst)

    # gradient lower bound and the alignment that produces it
    lower = grad_lower_bound(J, normV, L) if J.log_value < 0 else math.nan
    lower_applicable = (
        inst
        and ctx.constants is not None
        and ctx.h <= ctx.constants.h_max
        and small_loss
        and slacks["i2"] >= -tol.i2_rel
    )
    slacks["lower"] = (
        (prev.grad_norm - lower) / lower if lower and lower > 0 else math.nan
    )
    verdicts["lower"] = _verdict(slacks["lower"], tol.lower_rel, lower_applicable)
    align_rhs = (L + 0.75) * J.value * J.log_inverse()
    align_lhs = -prev.grad_dot_weights
    slacks["alignment"] = (
        (align_lhs - align_rhs) / align_rhs if align_rhs > 0 else math.nan
    )
    verdicts["alignment"] = _verdict(
        slacks["alignment"], tol.alignment_rel, lower_applicable
    )

    # gradient upper bound
    upper = grad_upper_bound(J, normV, p, L)
    upper_applicable = grad_upper_bound_applicable(normV, L)
    slacks["upper"] = (upper - prev.grad_norm) / upper if upper > 0 else 0.0
    verdicts["upper"] = _verdict(slacks["upper"], tol.upper_rel, upper_applicable)

    # weight-norm floor under the (slightly looser) 2/n^(1+24L) threshold
    floor_applicable = J.log_value <= math.log(2.0) + small_loss_log_threshold(n, L)
    slacks["floor"] = normV - weight_norm_floor(L)
    verdicts["floor"] = (
        Verdict.NA
        if not floor_applicable
        else (Verdict.PASS if slacks["floor"] > tol.floor_abs else Verdict.FAIL)
    )

    # one-step descent, needs the next iterate
    if nxt is None:
        descent_lhs = descent_rhs = None
        verdicts["descent"] = Verdict.NA
        slacks["descent"] = math.nan
    else:
        descent_lhs = nxt.loss.value
        descent_rhs = J.value - (L / (L + 0.5)) * ctx.alpha * prev.grad_norm**2
        descent_applicable = (
            inst and ctx.h <= 1.0 and small_loss and verdicts["i3"] is Verdict.PASS
        )
        slacks["descent"] = (descent_rhs - descent_lhs) / J.value
        verdicts["descent"] = _verdict(slacks["descent"], tol.descent_rel, descent_applicable)

    return StepRecord(
        t=prev.t,
        loss=J,
        grad_norm=prev.grad_norm,
        weight_norm=normV,
        lower_bound=lower,
        upper_bound=upper,
        rate_bound=rate_bound if inst else math.nan,
        descent_lhs=descent_lhs,
        descent_rhs=descent_rhs,
        verdicts=verdicts,
        slacks=slacks,
        phase=phase,
    )


def probe_local_lipschitz(
    V: WeightStack,
    act: Activation,
    data: Dataset,
    radius: float,
    k: int = 16,
    seed: int = 0,
) -> float:
    """Lower estimate of the local Lipschitz constant of the loss gradient.

    Takes k seeded random pairs inside the Frobenius ball of the given
    radius and returns the largest gradient difference quotient. Being a
    max over finitely many secants, the estimate sits below the true
    local constant, which the smoothness bound upper-bounds.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if k < 2:
        raise ValueError("need at least 2 probe pairs")
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(k):
        a = _random_point_in_ball(V, radius, rng)
        b = _random_point_in_ball(V, radius, rng)
        diff = stack_axpy(a, -1.0, b)
        dist = frobenius_norm(diff)
        if dist == 0.0:
            continue  # duplicate probes carry no secant information
        ga = gradient(a, act, data)
        gb = gradient(b, act, data)
        quot = frobenius_norm(stack_axpy(ga, -1.0, gb)) / dist
        best = max(best, quot)
    return best


def _random_point_in_ball(V: WeightStack, radius: float, rng: np.random.Generator) -> WeightStack:
    direction = WeightStack.from_layers(
        [rng.standard_normal(m.shape) for m in V.layers()]
    )
    norm = frobenius_norm(direction)
    r = radius * float(rng.uniform(0.0, 1.0))
    return stack_axpy(V, r / norm, direction)


# ---------------------------------------------------------------------------
# trajectory containers and serialization


@dataclass
class RunLog:
    config_echo: dict
    records: list[StepRecord] = field(default_factory=list)
    phase_boundary: int | None = None  # first step index belonging to phase 2
    summary: dict = field(default_factory=dict)


def summarize(records: Sequence[StepRecord]) -> dict:
    """Worst slack, first violation, and verdict counts per check."""
    out: dict = {"invariants": {}, "failed": False}
    for key in CHECK_KEYS:
        worst = math.inf
        worst_t = None
        first_fail = None
        counts = {"pass": 0, "fail": 0, "na": 0}
        for rec in records:
            v = rec.verdicts.get(key, Verdict.NA)
            counts[v.value] += 1
            if v is Verdict.NA:
                continue
            s = rec.slacks.get(key, math.nan)
            if not math.isnan(s) and s < worst:
                worst, worst_t = s, rec.t
            if v is Verdict.FAIL and first_fail is None:
                first_fail = rec.t
        out["invariants"][key] = {
            "worst_slack": None if math.isinf(worst) else worst,
            "worst_slack_step": worst_t,
            "first_violation_step": first_fail,
            "counts": counts,
        }
        if first_fail is not None:
            out["failed"] = True
    if records:
        last = records[-1]
        out["final_loss"] = last.loss.value
        out["final_log_loss"] = last.loss.log_value
        out["steps"] = len(records)
    return out


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(records: Sequence[StepRecord], path: str | Path) -> None:
    """One row per step, fixed column order (see CSV_COLUMNS / README)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(
                [
                    rec.t,
                    _fmt(rec.loss.value),
                    _fmt(rec.loss.log_value),
                    _fmt(rec.grad_norm),
                    _fmt(rec.weight_norm),
                    _fmt(rec.lower_bound),
                    _fmt(rec.upper_bound),
                    _fmt(rec.rate_bound),
                    rec.verdicts["i1"].value,
                    rec.verdicts["i2"].value,
                    rec.verdicts["i3"].value,
                    rec.verdicts["descent"].value,
                    rec.verdicts["alignment"].value,
                    rec.phase,
                ]
            )


def write_summary_json(runlog: RunLog, path: str | Path) -> None:
    doc = {
        **runlog.config_echo,
        "phase_boundary": runlog.phase_boundary,
        "summary": runlog.summary,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
