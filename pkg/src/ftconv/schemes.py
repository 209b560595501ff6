"""Detection and correction schemes operating on checksums, summations and O.

All logic runs independently per output position (x, y). Differences are
taken as checksum - summation, i.e. correct - corrupted, so corrections add
them. A corrected value is rebuilt from the checksum and the *other* blocks
of its family rather than by adding the difference to the corrupted value;
this stays exact when the corrupted value is huge (exponent bit flips).

Every scheme re-verifies O against all checksums it was handed before it
reports ``corrected``; on failure it restores O and escalates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

from .checksums import (
    ACC,
    OutputChecksums,
    OutputSummations,
    bias_offset,
    mismatch,
    output_summations,
    tolerance,
)
from .errors import ChecksumError

Status = Literal["corrected", "checksum_corruption_discard", "escalate"]

# location ratios must round to an integer within this band
LOCATE_BAND = 0.01


@dataclass
class DetectionResult:
    clean: bool
    mismatch_mask: np.ndarray
    max_rel_dev: float


@dataclass
class CorrectionOutcome:
    status: Status
    corrected_blocks: list[tuple[int, int]] = field(default_factory=list)
    scheme_used: str = ""
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status != "escalate"


def detect_coc_d(cs: OutputChecksums, s: OutputSummations, tau: float) -> DetectionResult:
    c, v = cs.co5, s.so5
    if c is None or v is None:
        raise ChecksumError("CoC-D needs Co5 and So5")
    mask = mismatch(c, v, tau)
    with np.errstate(invalid="ignore", over="ignore"):
        rel = np.abs(c - v) / np.maximum(np.maximum(np.abs(c), np.abs(v)), 1.0)
    rel = np.where(np.isfinite(rel), rel, np.inf)
    return DetectionResult(not mask.any(), mask, float(rel.max(initial=0.0)))


class _Diff:
    """Checksum/summation differences and tolerances for one checksum."""

    def __init__(self, cs: OutputChecksums, s: OutputSummations, k: str, tau: float):
        c, v = cs.get(k), s.get(k)
        if c is None or v is None:
            raise ChecksumError(f"scheme needs {k} and its summation")
        self.c = c
        self.d = c - v
        self.tol = tolerance(c, v, tau)
        self.flag = mismatch(c, v, tau)


def _need(cs, s, tau, *keys) -> dict[str, _Diff]:
    return {k: _Diff(cs, s, k, tau) for k in keys}


def _ratio(num, den, num_tol, den_tol) -> tuple[np.ndarray, np.ndarray]:
    """num/den and a bound on its error implied by the comparison tolerances.

    The bound is infinite where |den| does not clear its own tolerance.
    """
    num = np.asarray(num, dtype=ACC)
    den = np.asarray(den, dtype=ACC)
    margin = np.abs(den) - den_tol
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = num / den
        bound = (num_tol + np.abs(r) * den_tol) / np.where(margin > 0, margin, np.nan)
    r = np.nan_to_num(r, nan=-1.0, posinf=-1.0, neginf=-1.0)
    return r, np.nan_to_num(bound, nan=np.inf, posinf=np.inf)


def locate(num, den, num_tol, den_tol, upper: int) -> tuple[np.ndarray, np.ndarray]:
    """Round num/den to a block index; return (index, valid).

    The accepted rounding band is the error bound implied by the comparison
    tolerances on num and den, capped at LOCATE_BAND.
    """
    r, bound = _ratio(num, den, num_tol, den_tol)
    idx = np.rint(r).astype(np.int64)
    band = np.minimum(LOCATE_BAND, bound)
    valid = (np.abs(r - idx) <= band) & (idx >= 0) & (idx < upper)
    return idx, valid


def _consensus(num, den, num_tol, den_tol, upper: int) -> int | None:
    """The single block index all flagged entries agree on, or None.

    Entries that locate (see :func:`locate`) must all give the same index.
    Entries too close to the tolerance to locate on their own only need to
    be consistent with that index within their error bound.
    """
    idx, valid = locate(num, den, num_tol, den_tol, upper)
    if not valid.any():
        return None
    ks = set(idx[valid].tolist())
    if len(ks) != 1:
        return None
    k = ks.pop()
    r, bound = _ratio(num, den, num_tol, den_tol)
    if not (np.abs(r[~valid] - k) <= bound[~valid]).all():
        return None
    return int(k)


def _per_position(flag: np.ndarray, num: _Diff, den: _Diff, upper: int) -> np.ndarray | None:
    """Consensus index per output position over the flagged entries there.

    ``flag`` and the diffs are (K, E, E). Returns rows (index, x, y), or None
    if some flagged position has no single index.
    """
    rows = []
    for x, y in zip(*np.nonzero(flag.any(axis=0))):
        f = flag[:, x, y]
        k = _consensus(num.d[f, x, y], den.d[f, x, y], num.tol[f, x, y], den.tol[f, x, y], upper)
        if k is None:
            return None
        rows.append((k, x, y))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def _line_fixes(per_pos: np.ndarray, width: int, axis: int) -> np.ndarray:
    """(n, m, x, y) for a whole block row (axis=0) or column (axis=1) at each position."""
    k, x, y = (np.repeat(v, width) for v in per_pos.T)
    other = np.tile(np.arange(width), len(per_pos))
    return np.stack([k, other, x, y] if axis == 0 else [other, k, x, y], axis=1)


def _grid(E: int) -> tuple[np.ndarray, np.ndarray]:
    x, y = np.meshgrid(np.arange(E), np.arange(E), indexing="ij")
    return x.reshape(-1), y.reshape(-1)


def _block_fixes(n, m, N: int, M: int, E: int) -> np.ndarray:
    """Every element of block row n (m=None), block column m (n=None) or block (n, m)."""
    x, y = _grid(E)
    ns = np.arange(N) if n is None else np.array([n])
    ms = np.arange(M) if m is None else np.array([m])
    nn, mm = np.meshgrid(ns, ms, indexing="ij")
    nn, mm = nn.reshape(-1), mm.reshape(-1)
    k = len(x)
    return np.stack([np.repeat(nn, k), np.repeat(mm, k), np.tile(x, len(nn)), np.tile(y, len(nn))], axis=1)


def _offset(s: OutputSummations, k: str, N: int):
    if s.bias is None:
        return 0.0
    return bias_offset(k, s.bias, N)


def _rebuild(O: np.ndarray, fixes: np.ndarray, family: str, c: np.ndarray, off) -> np.ndarray:
    """New values for blocks listed in ``fixes`` (rows of (n, m, x, y)).

    family 'col': checksum c is (M,E,E) over column m; 'row': (N,E,E) over
    row n; 'all': (E,E) over every block.
    """
    n, m, x, y = fixes.T
    k = np.arange(len(fixes))
    off = np.broadcast_to(np.asarray(off, dtype=ACC), c.shape)
    if family == "col":
        blocks = O[:, m, x, y].astype(ACC)  # (N, K)
        blocks[n, k] = 0.0
        target = c[m, x, y] + off[m, x, y]
    elif family == "row":
        blocks = O[n, :, x, y].astype(ACC).T  # (M, K)
        blocks[m, k] = 0.0
        target = c[n, x, y] + off[n, x, y]
    else:
        blocks = O[:, :, x, y].astype(ACC).reshape(-1, len(fixes))
        blocks[n * O.shape[1] + m, k] = 0.0
        target = c[x, y] + off[x, y]
    return target - blocks.sum(axis=0)


def _verify(O, cs: OutputChecksums, s: OutputSummations, tau: float,
            loose: dict[str, tuple[str, int]] | None = None) -> bool:
    """All present checksums agree with fresh summations of O.

    ``loose`` maps a checksum to ('row', i) or ('col', j): mismatches confined
    to that single block row/column are tolerated (known-corrupted checksum).
    """
    loose = loose or {}
    fresh = output_summations(O, cs.present, bias=s.bias)
    for k in cs.present:
        bad = mismatch(cs.get(k), fresh.get(k), tau)
        if k in loose and bad.ndim == 3:
            _, idx = loose[k]
            bad = bad.copy()
            bad[idx] = False
        if bad.any():
            return False
    return True


def _commit(O, cs, s, tau, fixes: np.ndarray, values: np.ndarray, scheme: str,
            loose=None) -> CorrectionOutcome:
    n, m, x, y = fixes.T
    saved = O[n, m, x, y].copy()
    O[n, m, x, y] = values.astype(O.dtype)
    if _verify(O, cs, s, tau, loose):
        new = O[n, m, x, y]
        changed = mismatch(saved.astype(ACC), new.astype(ACC), tau)
        blocks = sorted({(int(a), int(b)) for a, b in zip(n[changed], m[changed])})
        return CorrectionOutcome("corrected", blocks, scheme)
    O[n, m, x, y] = saved
    return CorrectionOutcome("escalate", [], scheme, "post-correction verification failed")


def _noop(O, cs, s, tau, scheme: str) -> CorrectionOutcome:
    if _verify(O, cs, s, tau):
        return CorrectionOutcome("corrected", [], scheme)
    return CorrectionOutcome("escalate", [], scheme, "no located error but checksums disagree")


def correct_coc(cs: OutputChecksums, s: OutputSummations, O: np.ndarray, tau: float) -> CorrectionOutcome:
    """Locate and fix one corrupted block per position from Co5/Co6/Co7.

    When every flagged position points at the same block, that whole block
    is rebuilt from Co5 (positions whose error is too small to flag are
    repaired too). Otherwise each flagged position is fixed on its own.
    """
    N, M, E = O.shape[0], O.shape[1], O.shape[2]
    dd = _need(cs, s, tau, "co5", "co6", "co7")
    d5, d6, d7 = dd["co5"], dd["co6"], dd["co7"]
    flag = d5.flag
    if not flag.any():
        return _noop(O, cs, s, tau, "coc")
    off = _offset(s, "co5", N)
    args7 = (d7.d[flag], d5.d[flag], d7.tol[flag], d5.tol[flag])
    args6 = (d6.d[flag], d5.d[flag], d6.tol[flag], d5.tol[flag])
    i, j = _consensus(*args7, N), _consensus(*args6, M)
    if i is not None and j is not None:
        fixes = _block_fixes(i, j, N, M, E)
        out = _commit(O, cs, s, tau, fixes, _rebuild(O, fixes, "all", d5.c, off), "coc")
        if out.status == "corrected":
            return out
    xs, ys = np.nonzero(flag)
    i, vi = locate(*args7, N)
    j, vj = locate(*args6, M)
    if (vi & vj).all():
        fixes = np.stack([i, j, xs, ys], axis=1)
        return _commit(O, cs, s, tau, fixes, _rebuild(O, fixes, "all", d5.c, off), "coc")
    # Cd1 corrupted: Co5, Co6 off, Co7 consistent. Cw1 corrupted: Co5, Co7 off, Co6 consistent.
    co7_ok = ~d7.flag[flag]
    co6_ok = ~d6.flag[flag]
    if co7_ok.all() and not vj.all():
        return CorrectionOutcome("checksum_corruption_discard", [], "coc", "Co5/Co6 inconsistent, Co7 consistent")
    if co6_ok.all() and not vi.all():
        return CorrectionOutcome("checksum_corruption_discard", [], "coc", "Co5/Co7 inconsistent, Co6 consistent")
    return CorrectionOutcome("escalate", [], "coc", "errors span several blocks at one position")


def correct_rc(cs: OutputChecksums, s: OutputSummations, O: np.ndarray, tau: float) -> CorrectionOutcome:
    """Per column m: row index from (Co3 - So3)/(Co1 - So1), fix with Co1.

    When every flagged entry points at the same block row i, row i is
    rebuilt column by column from Co1. Otherwise each position must point at
    a single row of its own, which is rebuilt at that position only.
    """
    N, M, E = O.shape[0], O.shape[1], O.shape[2]
    dd = _need(cs, s, tau, "co1", "co3")
    d1, d3 = dd["co1"], dd["co3"]
    flag = d1.flag
    if not flag.any():
        return _noop(O, cs, s, tau, "rc")
    off = _offset(s, "co1", N)
    i = _consensus(d3.d[flag], d1.d[flag], d3.tol[flag], d1.tol[flag], N)
    if i is not None:
        fixes = _block_fixes(i, None, N, M, E)
        out = _commit(O, cs, s, tau, fixes, _rebuild(O, fixes, "col", d1.c, off), "rc")
        if out.status == "corrected":
            return out
    per_pos = _per_position(flag, d3, d1, N)
    if per_pos is None:
        return CorrectionOutcome("escalate", [], "rc", "no single integral row index")
    fixes = _line_fixes(per_pos, M, axis=0)
    return _commit(O, cs, s, tau, fixes, _rebuild(O, fixes, "col", d1.c, off), "rc")


def correct_clc(cs: OutputChecksums, s: OutputSummations, O: np.ndarray, tau: float) -> CorrectionOutcome:
    """Per row n: column index from (Co4 - So4)/(Co2 - So2), fix with Co2.

    Mirror of :func:`correct_rc`: a common block column j is rebuilt row by
    row from Co2, else each position's own column is rebuilt there.
    """
    N, M, E = O.shape[0], O.shape[1], O.shape[2]
    dd = _need(cs, s, tau, "co2", "co4")
    d2, d4 = dd["co2"], dd["co4"]
    flag = d2.flag
    if not flag.any():
        return _noop(O, cs, s, tau, "clc")
    off = _offset(s, "co2", N)
    j = _consensus(d4.d[flag], d2.d[flag], d4.tol[flag], d2.tol[flag], M)
    if j is not None:
        fixes = _block_fixes(None, j, N, M, E)
        out = _commit(O, cs, s, tau, fixes, _rebuild(O, fixes, "row", d2.c, off), "clc")
        if out.status == "corrected":
            return out
    per_pos = _per_position(flag, d4, d2, M)
    if per_pos is None:
        return CorrectionOutcome("escalate", [], "clc", "no single integral column index")
    fixes = _line_fixes(per_pos, N, axis=1)
    return _commit(O, cs, s, tau, fixes, _rebuild(O, fixes, "row", d2.c, off), "clc")


def _single(mask: np.ndarray) -> set[int]:
    return {int(v) for v in np.nonzero(mask.any(axis=(1, 2)))[0]}


def _coc_index(num: _Diff, d5: _Diff, upper: int) -> int | None:
    """Block index agreed on by every Co5-flagged position, or None."""
    f = d5.flag
    if not f.any():
        return None
    return _consensus(num.d[f], d5.d[f], num.tol[f], d5.tol[f], upper)


def correct_fc(cs: OutputChecksums, s: OutputSummations, O: np.ndarray, tau: float) -> CorrectionOutcome:
    """Full checksum scheme: row or column errors, tolerating a corrupted Co1 or Co2.

    Row hypothesis: the corrupted block row i comes from the rows where Co2
    disagrees; if Co2 shows nothing (it was corrupted along with the row),
    from Co7/Co5. Row i is then rebuilt from Co1. The column hypothesis is
    symmetric (Co1, Co6/Co5, rebuilt from Co2).
    """
    N, M, E = O.shape[0], O.shape[1], O.shape[2]
    dd = _need(cs, s, tau, "co1", "co2", "co5", "co6", "co7")
    d1, d2, d5 = dd["co1"], dd["co2"], dd["co5"]
    any1, any2, any5 = bool(d1.flag.any()), bool(d2.flag.any()), bool(d5.flag.any())
    if not (any1 or any2 or any5):
        return _noop(O, cs, s, tau, "fc")
    if any1 + any2 + any5 == 1:
        which = "Co1" if any1 else "Co2" if any2 else "Co5"
        return CorrectionOutcome("checksum_corruption_discard", [], "fc",
                                 f"only {which} disagrees; O consistent with the others")

    for hyp in ("row", "col"):
        if hyp == "row":
            fixer, other, locator, upper = d1, d2, dd["co7"], N
        else:
            fixer, other, locator, upper = d2, d1, dd["co6"], M
        cands = _single(other.flag)
        if len(cands) == 1:
            idx = cands.pop()
        elif not cands:
            idx = _coc_index(locator, d5, upper)
            # index 0 carries zero weight: indistinguishable from a corrupted Cd1/Cw1
            if idx is None or idx == 0:
                continue
        else:
            continue
        if hyp == "row":
            fixes = _block_fixes(idx, None, N, M, E)
            values = _rebuild(O, fixes, "col", d1.c, _offset(s, "co1", N))
            loose = {"co2": ("row", idx), "co4": ("row", idx)}
        else:
            fixes = _block_fixes(None, idx, N, M, E)
            values = _rebuild(O, fixes, "row", d2.c, _offset(s, "co2", N))
            loose = {"co1": ("col", idx), "co3": ("col", idx)}
        out = _commit(O, cs, s, tau, fixes, values, "fc", loose)
        if out.status == "corrected":
            return out
    return CorrectionOutcome("escalate", [], "fc", "no consistent row or column pattern")


SCHEMES = {
    "coc": (correct_coc, ("co5", "co6", "co7")),
    "rc": (correct_rc, ("co1", "co3")),
    "clc": (correct_clc, ("co2", "co4")),
    "fc": (correct_fc, ("co1", "co2", "co5", "co6", "co7")),
}


def required_checksums(scheme: str) -> tuple[str, ...]:
    return SCHEMES[scheme][1]


def run_scheme(scheme: str, cs: OutputChecksums, s: OutputSummations, O: np.ndarray,
               tau: float) -> CorrectionOutcome:
    return SCHEMES[scheme][0](cs, s, O, tau)


def scheme_names() -> Iterable[str]:
    return SCHEMES.keys()
