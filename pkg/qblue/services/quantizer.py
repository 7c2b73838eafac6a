"""L-level quantizer: ideal construction, INL perturbation, transition files."""

import logging
import math
import re
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from qblue.config import TRANSITION_COLUMNS, get_settings
from qblue.errors import InlMonotonicityError, QuantizerSpecError, TableFormatError
from qblue.models import InlKind, InlProfile, QuantizerSpec
from qblue.utils.csvio import read_comment, read_table, write_table

logger = logging.getLogger(__name__)

MAX_BITS = 24
_STEP_COMMENT = re.compile(r"step_volts\s*=\s*(\S+)")


def make_uniform(bits: int, full_scale: tuple[float, float] = (-1.0, 1.0)) -> QuantizerSpec:
    """
    Build the mid-tread uniform quantizer of 2**bits levels over ``full_scale``.

    The step is the interval width divided by 2**bits, output levels follow
    y[k] = -(L/2 - 1) * step + k * step and transitions sit halfway between
    adjacent output levels, so code L/2 - 1 (output 0) covers [-step/2, step/2).
    """
    if not isinstance(bits, (int, np.integer)) or not 1 <= bits <= MAX_BITS:
        raise QuantizerSpecError(f"bits must be an integer in [1, {MAX_BITS}], got {bits!r}")
    lo, hi = (float(v) for v in full_scale)
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        raise QuantizerSpecError(f"invalid full-scale interval [{lo}, {hi})")

    level_count = 2**bits
    step = (hi - lo) / level_count
    k = np.arange(1, level_count)
    transitions = -(level_count / 2 - 1) * step + (k - 0.5) * step
    return QuantizerSpec(level_count=level_count, step=step, transitions=transitions)


def make_comparator(threshold: float = 0.0, step: float = 1.0) -> QuantizerSpec:
    """Single-bit quantizer (comparator) with one transition at ``threshold``."""
    return QuantizerSpec(level_count=2, step=step, transitions=[threshold])


def quantize(x, spec: QuantizerSpec):
    """
    Map inputs to output codes.

    Code k satisfies T[k] <= x < T[k+1] with T[0] = -inf and T[L] = +inf, so
    inputs outside the transition span saturate to codes 0 and L-1.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    codes = np.searchsorted(spec.transitions, x_arr, side="right")
    return int(codes) if x_arr.ndim == 0 else codes.astype(np.int64)


def output_level(codes, spec: QuantizerSpec):
    """Output level y[code] for a code or an array of codes."""
    levels = spec.output_levels[np.asarray(codes, dtype=np.int64)]
    return float(levels) if np.ndim(levels) == 0 else levels


def apply_inl(spec: QuantizerSpec, profile: InlProfile) -> QuantizerSpec:
    """
    Perturb every transition by an independent uniform draw of half width
    ``profile.half_width`` steps.

    Draw ``attempt`` uses the stream seeded by (profile.seed, attempt); a draw
    that breaks strict ordering is discarded and redrawn, up to the retry budget.
    """
    if profile.kind == InlKind.NONE or profile.half_width == 0.0:
        return spec

    budget = get_settings().inl_retry_budget
    width = profile.half_width * spec.step
    for attempt in range(budget):
        rng = np.random.default_rng(np.random.SeedSequence([profile.seed, attempt]))
        offsets = rng.uniform(-width, width, size=spec.transitions.size)
        perturbed = spec.transitions + offsets
        if np.all(np.diff(perturbed) > 0):
            if attempt:
                logger.info("INL draw accepted after %d redraws", attempt)
            return QuantizerSpec(
                level_count=spec.level_count, step=spec.step, transitions=perturbed
            )

    raise InlMonotonicityError(
        f"INL half width {profile.half_width} broke transition ordering in all {budget} draws"
    )


def save_transitions(spec: QuantizerSpec, path: Union[str, Path]) -> Path:
    """Write transitions as index,transition_volts (17 significant digits)."""
    df = pd.DataFrame(
        {
            "index": np.arange(1, spec.level_count),
            "transition_volts": spec.transitions,
        }
    )
    return write_table(df, path, digits=17, comment=f"step_volts={spec.step!r}")


def load_transitions(
    path: Union[str, Path],
    level_count: Optional[int] = None,
    step: Optional[float] = None,
) -> QuantizerSpec:
    """
    Read a transition-level file.

    ``level_count`` defaults to rows + 1; when given, the row count must be
    exactly level_count - 1. ``step`` defaults to the ``# step_volts=`` header
    comment, then to the least-squares slope of the transitions against their
    index.
    """
    try:
        df = read_table(path, TRANSITION_COLUMNS)
    except TableFormatError as e:
        raise QuantizerSpecError(str(e)) from e

    rows = len(df)
    if level_count is None:
        level_count = rows + 1
    if rows != level_count - 1:
        raise QuantizerSpecError(
            f"{path}: {rows} transitions for declared L={level_count} (expected {level_count - 1})"
        )

    index = df["index"].to_numpy()
    if not np.array_equal(index, np.arange(1, rows + 1)):
        raise QuantizerSpecError(f"{path}: index column must run 1..{rows} ascending")

    transitions = df["transition_volts"].to_numpy(dtype=np.float64)
    gaps = np.diff(transitions)
    if np.any(gaps <= 0):
        k = int(np.argmax(gaps <= 0)) + 1
        raise QuantizerSpecError(
            f"{path}: transitions not strictly increasing at index {k + 1} (T[{k + 1}] <= T[{k}])"
        )

    if step is None:
        step = _step_from_comment(path)
    if step is None:
        if rows < 2:
            raise QuantizerSpecError(f"{path}: step cannot be inferred from a single transition")
        step = float(np.polyfit(index.astype(np.float64), transitions, 1)[0])

    logger.info("Loaded %d transitions from %s", rows, path)
    return QuantizerSpec(level_count=level_count, step=step, transitions=transitions)


def _step_from_comment(path: Union[str, Path]) -> Optional[float]:
    comment = read_comment(path)
    if not comment:
        return None
    match = _STEP_COMMENT.search(comment)
    if not match:
        return None
    try:
        return float(match.group(1))
    except ValueError as e:
        raise QuantizerSpecError(f"{path}: malformed step comment '{comment}'") from e
