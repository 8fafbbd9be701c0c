"""
Statistical audits of the mechanism.

Each audit estimates interim quantities by Monte Carlo over rival draws and
compares them with z standard errors of slack. Every cell gets its own seed
spawned from the master seed, and every report inside a cell reuses that
seed, so truthful and misreported estimates see identical rivals and the
comparison is made on paired differences.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .mechanism import allocation_samples, run_mechanism_episode, utility_samples
from .model import BuyerType

logger = logging.getLogger(__name__)

Z_DEFAULT = 3.0
HARD_Z = 5.0
ABS_TOLERANCE = 1e-9
TRUTH_EPSILON = 1e-6
ENVELOPE_NODES = 8

PASS = "PASS"
NOISE = "NOISE"
FAIL = "FAIL"

CSV_HEADER = [
    "kind",
    "v",
    "q",
    "report_v",
    "report_q",
    "truthful",
    "estimate",
    "gap",
    "stderr",
    "bound",
    "verdict",
]


@dataclass(frozen=True)
class AuditCell:
    kind: str
    v: float
    q: float
    report_v: float
    report_q: float
    truthful: float
    estimate: float
    gap: float
    stderr: float
    bound: float
    verdict: str

    def as_list(self):
        numbers = [self.v, self.q, self.report_v, self.report_q, self.truthful, self.estimate, self.gap, self.stderr, self.bound]
        return [self.kind, *(f"{x:.6g}" for x in numbers), self.verdict]


@dataclass(frozen=True)
class AuditReport:
    """Cells of one audit. `gap` is the amount by which a cell breaks its property."""

    name: str
    z: float
    cells: tuple = field(default_factory=tuple)

    @property
    def passed(self):
        return all(cell.verdict == PASS for cell in self.cells)

    @property
    def hard_violations(self):
        return sum(cell.verdict == FAIL for cell in self.cells)

    @property
    def noise_violations(self):
        return sum(cell.verdict == NOISE for cell in self.cells)

    @property
    def worst(self):
        return max(self.cells, key=lambda cell: cell.gap, default=None)

    def summary(self):
        worst = self.worst
        where = f" at (v={worst.v:.4g}, q={worst.q:.4g})" if worst is not None else ""
        gap = worst.gap if worst is not None else 0.0
        return (
            f"{self.name}: {len(self.cells)} cells, {self.hard_violations} hard, "
            f"{self.noise_violations} noise-level; worst gap {gap:.4g}{where}; "
            f"{'PASS' if self.passed else 'FAIL'}"
        )

    def write_csv(self, stream):
        writer = csv.writer(stream)
        writer.writerow(CSV_HEADER)
        for cell in self.cells:
            writer.writerow(cell.as_list())


def verdict(gap, stderr, z, bound=0.0):
    if gap <= z * stderr + bound + ABS_TOLERANCE:
        return PASS
    if gap <= HARD_Z * stderr + bound + ABS_TOLERANCE:
        return NOISE
    return FAIL


def paired(draws):
    """Mean and standard error of per-sample draws."""
    draws = np.asarray(draws, dtype=float)
    n = draws.shape[0]
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(draws.shape[1:])
    return draws.mean(axis=0), stderr


def cell_seeds(seed, count):
    return np.random.SeedSequence(seed).spawn(count)


def type_grid(spec, points=5):
    """Grid of (v, q) types spanning the bulk of the type distribution."""
    upper = spec.quantities.upper
    low_q = max(spec.quantities.lower, 0.1 * upper)
    v_max = float(spec.values.quantile(0.9, upper))
    return [(float(v), float(q)) for v in np.linspace(0.0, v_max, points) for q in np.linspace(low_q, upper, points)]


def _is_truth(report, truth):
    return abs(report[0] - truth[0]) <= TRUTH_EPSILON and abs(report[1] - truth[1]) <= TRUTH_EPSILON


def audit_ic(
    spec,
    approx,
    true_grid,
    misreport_grid,
    stock,
    mc_samples,
    period=1,
    seed=0,
    z=Z_DEFAULT,
    quad_points=64,
    penalty_samples=10_000,
):
    """Gain from each misreport over truthful reporting, per true type."""
    cells = []
    for (v, q), cell_seed in zip(true_grid, cell_seeds(seed, len(true_grid))):
        truth = BuyerType(v, q)

        def utilities(report):
            rng = np.random.default_rng(cell_seed)
            return utility_samples(
                truth, report, stock, spec, approx, period, mc_samples, rng, quad_points, penalty_samples
            )

        truthful = utilities(truth)
        for report_v, report_q in misreport_grid:
            if _is_truth((report_v, report_q), (v, q)):
                continue
            report = BuyerType(report_v, report_q)
            draws = utilities(report)
            gap, stderr = paired(draws - truthful)
            cells.append(
                AuditCell(
                    kind="ic",
                    v=v,
                    q=q,
                    report_v=report_v,
                    report_q=report_q,
                    truthful=float(truthful.mean()),
                    estimate=float(draws.mean()),
                    gap=float(gap),
                    stderr=float(stderr),
                    bound=0.0,
                    verdict=verdict(gap, stderr, z),
                )
            )
        logger.info(f"audit_ic: cell (v={v:.3g}, q={q:.3g}) done")
    return AuditReport("ic", z, tuple(cells))


def audit_ir(spec, approx, grid, stock, mc_samples, period=1, seed=0, z=Z_DEFAULT, quad_points=64):
    """Truthful interim utility must be nonnegative; `gap` is how far below zero it falls."""
    cells = []
    for (v, q), cell_seed in zip(grid, cell_seeds(seed, len(grid))):
        truth = BuyerType(v, q)
        draws = utility_samples(
            truth, truth, stock, spec, approx, period, mc_samples, np.random.default_rng(cell_seed), quad_points
        )
        mean, stderr = paired(draws)
        cells.append(
            AuditCell(
                kind="ir",
                v=v,
                q=q,
                report_v=v,
                report_q=q,
                truthful=float(mean),
                estimate=float(mean),
                gap=float(-mean),
                stderr=float(stderr),
                bound=0.0,
                verdict=verdict(-mean, stderr, z),
            )
        )
    logger.info(f"audit_ir: {len(cells)} cells done")
    return AuditReport("ir", z, tuple(cells))


def _line_cells(kind, line, draws, z):
    # draws[k] are paired allocation samples at line[k]; ex-post drops fail outright.
    cells = []
    for k in range(len(line) - 1):
        drop = draws[k] - draws[k + 1]
        mean_drop, stderr = paired(drop)
        ex_post = int(np.sum(drop > ABS_TOLERANCE))
        result = verdict(mean_drop, stderr, z) if ex_post == 0 else FAIL
        (v, q), (next_v, next_q) = line[k], line[k + 1]
        cells.append(
            AuditCell(
                kind=kind,
                v=v,
                q=q,
                report_v=next_v,
                report_q=next_q,
                truthful=float(draws[k].mean()),
                estimate=float(draws[k + 1].mean()),
                gap=float(mean_drop),
                stderr=float(stderr),
                bound=float(ex_post),
                verdict=result,
            )
        )
    return cells


def audit_monotonicity(
    spec, approx, values, quantities, stock, mc_samples, period=1, seed=0, z=Z_DEFAULT
):
    """Allocation must not fall when a buyer raises the reported value or quantity.

    Along each grid line the samples are paired, so the check is exact per
    draw as well as on the means. `bound` holds the count of ex-post drops.
    """
    lines = [("value", [(float(v), float(q)) for v in values]) for q in quantities]
    lines += [("quantity", [(float(v), float(q)) for q in quantities]) for v in values]
    cells = []
    for (kind, line), line_seed in zip(lines, cell_seeds(seed, len(lines))):
        draws = np.array(
            [
                allocation_samples(
                    BuyerType(v, q), stock, spec, approx, period, mc_samples, np.random.default_rng(line_seed)
                )
                for v, q in line
            ]
        )
        cells.extend(_line_cells(kind, line, draws, z))
    logger.info(f"audit_monotonicity: {len(cells)} steps checked")
    return AuditReport("monotonicity", z, tuple(cells))


def _value_sweep(q, v_max, stock, spec, approx, period, mc_samples, seed, quad_points):
    taus = np.linspace(0.0, v_max, quad_points + 1)
    allocations = np.array(
        [
            allocation_samples(BuyerType(float(t), q), stock, spec, approx, period, mc_samples, np.random.default_rng(seed))
            for t in taus
        ]
    )
    return taus, allocations


def audit_envelope(
    spec,
    approx,
    q,
    stock,
    mc_samples,
    quad_points=64,
    v_max=None,
    nodes=ENVELOPE_NODES,
    period=1,
    seed=0,
    z=Z_DEFAULT,
):
    """Interim utility against the integral of interim allocation over value.

    `bound` is the trapezoid error for a nondecreasing integrand, half a
    step times the rise of the allocation.
    """
    v_max = float(v_max if v_max is not None else spec.values.quantile(0.9, q))
    taus, allocations = _value_sweep(q, v_max, stock, spec, approx, period, mc_samples, seed, quad_points)
    integrals = integrate.cumulative_trapezoid(allocations, taus, axis=0, initial=0.0)
    step = taus[1] - taus[0] if taus.size > 1 else 0.0

    cells = []
    for k in np.unique(np.round(np.linspace(0, quad_points, nodes)).astype(int)):
        v = float(taus[k])
        truth = BuyerType(v, q)
        utilities = utility_samples(
            truth, truth, stock, spec, approx, period, mc_samples, np.random.default_rng(seed)
        )
        diff, stderr = paired(utilities - integrals[k])
        bound = 0.5 * step * float(np.mean(allocations[k] - allocations[0]))
        cells.append(
            AuditCell(
                kind="envelope",
                v=v,
                q=float(q),
                report_v=v,
                report_q=float(q),
                truthful=float(utilities.mean()),
                estimate=float(integrals[k].mean()),
                gap=float(abs(diff)),
                stderr=float(stderr),
                bound=bound,
                verdict=verdict(abs(diff), stderr, z, bound),
            )
        )
    logger.info(f"audit_envelope: q={q:.3g}, {len(cells)} nodes")
    return AuditReport("envelope", z, tuple(cells))


def audit_convexity(spec, approx, q, values, stock, mc_samples, period=1, seed=0, z=Z_DEFAULT):
    """Interim utility is convex in value and its slope is bracketed by the allocation.

    On an evenly spaced value grid each interior point is checked against the
    midpoint of its neighbours, and each increment U(v') - U(v) against
    A(v) (v' - v) below and A(v') (v' - v) above.
    """
    values = np.asarray(values, dtype=float)
    utilities = []
    allocations = []
    for v in values:
        truth = BuyerType(float(v), q)
        utilities.append(
            utility_samples(truth, truth, stock, spec, approx, period, mc_samples, np.random.default_rng(seed))
        )
        allocations.append(
            allocation_samples(truth, stock, spec, approx, period, mc_samples, np.random.default_rng(seed))
        )
    utilities = np.array(utilities)
    allocations = np.array(allocations)

    cells = []
    for k in range(1, values.size - 1):
        excess = utilities[k] - 0.5 * (utilities[k - 1] + utilities[k + 1])
        gap, stderr = paired(excess)
        cells.append(_convexity_cell("convexity", values[k], q, gap, stderr, utilities[k], z))
    for k in range(values.size - 1):
        width = values[k + 1] - values[k]
        rise = utilities[k + 1] - utilities[k]
        below = allocations[k] * width - rise
        above = rise - allocations[k + 1] * width
        for kind, draws in (("slope-lower", below), ("slope-upper", above)):
            gap, stderr = paired(draws)
            cells.append(_convexity_cell(kind, values[k], q, gap, stderr, utilities[k], z))
    logger.info(f"audit_convexity: q={q:.3g}, {len(cells)} checks")
    return AuditReport("convexity", z, tuple(cells))


def _convexity_cell(kind, v, q, gap, stderr, utilities, z):
    return AuditCell(
        kind=kind,
        v=float(v),
        q=float(q),
        report_v=float(v),
        report_q=float(q),
        truthful=float(utilities.mean()),
        estimate=float(utilities.mean()),
        gap=float(gap),
        stderr=float(stderr),
        bound=0.0,
        verdict=verdict(gap, stderr, z),
    )


def audit_revenue_identity(spec, approx, episodes, seed=0, z=Z_DEFAULT, quad_points=64):
    """Discounted payments against discounted virtual surplus over whole episodes."""
    rng = np.random.default_rng(seed)
    samples = [run_mechanism_episode(spec, approx, rng, quad_points) for _ in range(episodes)]
    payments = np.array([s.payments for s in samples])
    surplus = np.array([s.virtual_surplus for s in samples])
    diff, stderr = paired(payments - surplus)
    cell = AuditCell(
        kind="revenue",
        v=0.0,
        q=0.0,
        report_v=0.0,
        report_q=0.0,
        truthful=float(surplus.mean()),
        estimate=float(payments.mean()),
        gap=float(abs(diff)),
        stderr=float(stderr),
        bound=0.0,
        verdict=verdict(abs(diff), stderr, z),
    )
    logger.info(f"audit_revenue_identity: payments {payments.mean():.4f} vs virtual surplus {surplus.mean():.4f}")
    return AuditReport("revenue", z, (cell,))
