"""Truth-by-consensus: reputation-weighted claim resolution.

Each resolved request's winning value is the claim group with the largest
reputation-weighted mass (exact rational arithmetic; an exact tie is
CONTESTED).  Coordination among witnesses is measured with a weighted
principal component analysis over the epoch's agreement matrix: rows are
witnesses, columns are requests, entries indicate agreement with the winning
value, and each row is weighted by the witness's reputation share.  The
per-row projection onto the dominant eigenvector exposes groups of witnesses
that deviate *together*, which is the signature of collusion.

A witness's deviation blends its plain disagreement rate with its normalized
coordination score.  Witnesses that agreed with every winning value have
deviation 0 by definition; the coordination term only grades how suspicious
the actual deviators are.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import NoConvergence
from .hashing import digest
from .reputation import EpochVerdict, ReputationLedger

log = logging.getLogger(__name__)

POWER_TOL = 1e-9
POWER_MAX_ITER = 1000
DISAGREEMENT_WEIGHT = Fraction(1, 2)
_DEVIATION_QUANTUM = 10**6


class _Contested:
    """Singleton marking a request whose claims tied exactly."""

    _instance = None

    def __new__(cls) -> "_Contested":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "CONTESTED"


CONTESTED = _Contested()


@dataclass(frozen=True)
class Claim:
    """One witness's canonical retrieval result for one request."""

    request_id: bytes
    witness: bytes
    canonical_value: bytes

    @property
    def value_digest(self) -> bytes:
        return digest(self.canonical_value)


@dataclass(frozen=True)
class Verdict:
    """Per-request outcome: the winning value, who backed it, who deviated."""

    winning_value: bytes | _Contested
    supporters: frozenset[bytes] = frozenset()
    deviators: Mapping[bytes, Fraction] = field(default_factory=dict)

    @property
    def contested(self) -> bool:
        return self.winning_value is CONTESTED


@dataclass(frozen=True)
class ClaimMatrix:
    """Witnesses-by-requests agreement matrix with reputation row weights.

    ``entries[i][j]`` is 1.0 when witness i's claim matched request j's
    winning value, 0.0 when it contradicted it, and NaN when the witness was
    not assigned to the request.  Rows and columns are sorted by identifier
    so every downstream computation is order-stable.
    """

    rows: tuple[bytes, ...]
    cols: tuple[bytes, ...]
    entries: np.ndarray
    weights: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        if self.entries.shape != (len(self.rows), len(self.cols)):
            raise ValueError("matrix shape does not match row/col labels")
        if len(self.weights) != len(self.rows):
            raise ValueError("one weight per row required")
        if self.rows and sum(self.weights, Fraction(0)) != 1:
            raise ValueError("row weights must sum to 1")


def modal_claim(claims: Sequence[Claim],
                rep: ReputationLedger) -> bytes | _Contested:
    """Winning value among ``claims`` by reputation-weighted plurality.

    Claims compare by exact canonical bytes.  An exact tie in weighted mass
    between the leading groups is CONTESTED.
    """
    if not claims:
        raise ValueError("modal_claim requires at least one claim")
    request_ids = {c.request_id for c in claims}
    if len(request_ids) != 1:
        raise ValueError("claims must all target one request")
    mass: dict[bytes, Fraction] = {}
    for claim in claims:
        mass[claim.canonical_value] = (
            mass.get(claim.canonical_value, Fraction(0)) + rep.score(claim.witness)
        )
    best = max(mass.values())
    winners = [value for value, m in sorted(mass.items()) if m == best]
    if len(winners) > 1:
        return CONTESTED
    return winners[0]


def build_claim_matrix(
    claims: Sequence[Claim],
    winning: Mapping[bytes, bytes],
    rep: ReputationLedger,
) -> ClaimMatrix:
    """Agreement matrix of the epoch's claims against the winning values.

    Only requests present in ``winning`` (i.e. not contested) contribute
    columns; witnesses appear if they claimed on any such request.
    """
    cols = tuple(sorted(winning))
    col_index = {rid: j for j, rid in enumerate(cols)}
    rows = tuple(sorted({c.witness for c in claims if c.request_id in col_index}))
    row_index = {pk: i for i, pk in enumerate(rows)}
    entries = np.full((len(rows), len(cols)), np.nan)
    for claim in claims:
        j = col_index.get(claim.request_id)
        if j is None:
            continue
        i = row_index[claim.witness]
        entries[i, j] = 1.0 if claim.canonical_value == winning[claim.request_id] else 0.0
    total = sum((rep.score(pk) for pk in rows), Fraction(0))
    weights = tuple(rep.score(pk) / total for pk in rows) if rows else ()
    return ClaimMatrix(rows=rows, cols=cols, entries=entries, weights=weights)


def first_weighted_component(
    matrix: ClaimMatrix,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
) -> np.ndarray:
    """Per-row projections onto the dominant weighted principal component.

    Absent entries are imputed with the weighted column mean, rows are
    centered about those means, and the weighted covariance's dominant
    eigenvector is found by power iteration from the all-ones start vector.
    Zero covariance (for instance when all rows agree everywhere) yields
    all-zero scores.  Raises NoConvergence past the iteration budget.
    """
    if not matrix.rows or not matrix.cols:
        raise ValueError("matrix must have at least one row and one column")
    w = np.array([float(x) for x in matrix.weights])
    data = matrix.entries.copy()

    present = ~np.isnan(data)
    means = np.empty(data.shape[1])
    for j in range(data.shape[1]):
        mask = present[:, j]
        wj = w[mask]
        means[j] = float(data[mask, j] @ wj / wj.sum()) if wj.sum() > 0 else 0.0
        data[~mask, j] = means[j]

    centered = data - means
    correction = 1.0 - float(w @ w)
    if correction <= 0:
        return np.zeros(len(matrix.rows))
    cov = (centered.T * w) @ centered / correction
    if not np.any(np.abs(cov) > 0):
        return np.zeros(len(matrix.rows))

    # A single all-ones start can be orthogonal to the dominant eigenvector
    # and then falsely settle on a lesser one, so iterate from all-ones and
    # from every standard basis vector, keeping the converged direction with
    # the largest Rayleigh quotient.  At least one basis vector overlaps the
    # dominant eigenspace, so the maximum is the dominant component.
    dim = cov.shape[0]
    starts = [np.ones(dim) / np.sqrt(dim)]
    starts.extend(np.eye(dim)[j] for j in range(dim))
    best: np.ndarray | None = None
    best_value = -1.0
    any_converged = False
    for v in starts:
        for _ in range(max_iter):
            nxt = cov @ v
            norm = np.linalg.norm(nxt)
            if norm == 0:
                break
            nxt = nxt / norm
            if nxt[np.argmax(np.abs(nxt))] < 0:
                nxt = -nxt
            if np.max(np.abs(nxt - v)) < tol:
                any_converged = True
                rayleigh = float(nxt @ cov @ nxt)
                if rayleigh > best_value * (1 + 1e-12):
                    best_value = rayleigh
                    best = nxt
                break
            v = nxt
    if not any_converged:
        raise NoConvergence(
            "power iteration did not converge in %d steps" % max_iter)
    assert best is not None
    return centered @ best


def _quantize(value: float) -> Fraction:
    """Deviations become small exact rationals so reputation stays bounded."""
    return Fraction(round(value * _DEVIATION_QUANTUM), _DEVIATION_QUANTUM)


def resolve_epoch(
    claims: Sequence[Claim],
    rep: ReputationLedger,
) -> tuple[dict[bytes, Verdict], EpochVerdict]:
    """Resolve every request claimed this epoch and classify the witnesses.

    Pipeline: per-request weighted plurality fixes the winning values;
    the agreement matrix against those values feeds the weighted PCA; each
    witness's deviation is the even blend of its disagreement rate and its
    normalized coordination score, gated to 0 for witnesses that matched
    every winning value.  Contested requests are excluded throughout and
    have no reputation effect.
    """
    by_request: dict[bytes, list[Claim]] = {}
    for claim in claims:
        by_request.setdefault(claim.request_id, []).append(claim)

    winning: dict[bytes, bytes] = {}
    verdicts: dict[bytes, Verdict] = {}
    for rid in sorted(by_request):
        value = modal_claim(by_request[rid], rep)
        if value is CONTESTED:
            verdicts[rid] = Verdict(winning_value=CONTESTED)
            log.info("request %s contested: exact reputation tie", rid[:4].hex())
        else:
            winning[rid] = value

    matrix = build_claim_matrix(claims, winning, rep)
    if matrix.rows and matrix.cols:
        try:
            coordination = first_weighted_component(matrix)
        except NoConvergence:
            log.warning("coordination scores did not converge; using zeros")
            coordination = np.zeros(len(matrix.rows))
    else:
        coordination = np.zeros(len(matrix.rows))
    peak = float(np.max(np.abs(coordination))) if len(coordination) else 0.0

    disagreement: dict[bytes, Fraction] = {}
    claim_counts: dict[bytes, int] = {}
    for rid, value in winning.items():
        for claim in by_request[rid]:
            claim_counts[claim.witness] = claim_counts.get(claim.witness, 0) + 1
            if claim.canonical_value != value:
                disagreement[claim.witness] = (
                    disagreement.get(claim.witness, Fraction(0)) + 1
                )

    deviations: dict[bytes, Fraction] = {}
    for i, pk in enumerate(matrix.rows):
        missed = disagreement.get(pk, Fraction(0))
        if missed == 0:
            continue
        rate = missed / claim_counts[pk]
        coord = _quantize(abs(float(coordination[i])) / peak) if peak > 0 else Fraction(0)
        deviation = DISAGREEMENT_WEIGHT * rate + (1 - DISAGREEMENT_WEIGHT) * coord
        deviations[pk] = min(deviation, Fraction(1))

    honest: set[bytes] = set()
    for rid, value in winning.items():
        supporters = frozenset(
            c.witness for c in by_request[rid]
            if c.canonical_value == value and c.witness not in deviations
        )
        deviators = {
            c.witness: deviations[c.witness]
            for c in sorted(by_request[rid], key=lambda c: c.witness)
            if c.witness in deviations
        }
        verdicts[rid] = Verdict(winning_value=value, supporters=supporters,
                                deviators=deviators)
        honest |= supporters

    epoch_verdict = EpochVerdict(
        honest=frozenset(honest - set(deviations)),
        dishonest=dict(sorted(deviations.items())),
        task_fulfillers=frozenset(honest - set(deviations)),
    )
    return verdicts, epoch_verdict
