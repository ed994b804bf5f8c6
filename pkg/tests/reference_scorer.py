"""Independent straight-line reward scorer used as the oracle.

Deliberately written with plain loops and math (no numpy vectorization,
no shared helpers with the package) so it exercises the same documented
semantics through a completely separate path.
"""

from __future__ import annotations

import math


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _norm(a):
    return math.sqrt(sum(x * x for x in a))


def _cos(a, b):
    na, nb = _norm(a), _norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return _dot(a, b) / (na * nb)


def reference_breakdown(
    trajectory,
    report,
    label,
    collab_rows,
    text_rows,
    provider,
    invocation_cap,
    k_final,
    rank_step,
    stage,
    dim,
):
    """Returns the eight-field breakdown dict the package should match."""
    flags_all_ok = (
        report.structure_ok
        and report.list_shape_ok
        and report.preference_tags_ok
        and report.grounding_ok
        and report.invoked_at_least_once
    )
    r_format = 0.0 if flags_all_ok else -1.0

    m = len(trajectory.turns)
    if m > invocation_cap:
        r_invocation = 1.0
    elif 1 < m <= invocation_cap:
        r_invocation = (m - 1) * 0.5
    else:
        r_invocation = 0.0

    vectors = []
    for turn in trajectory.turns:
        if turn.preference.strip():
            vectors.append(list(provider.embed(turn.preference).values))
        else:
            vectors.append([0.0] * dim)
    if m <= 1:
        r_diversity = 0.0
    else:
        total = 0.0
        pairs = 0
        for i in range(m):
            for j in range(i + 1, m):
                total += _dot(vectors[i], vectors[j])
                pairs += 1
        r_diversity = 1.0 - total / pairs

    final = trajectory.final_items
    if label is not None and final:
        k_eff = len(final)
        num = 0.0
        den = 0.0
        for pos, item in enumerate(final, start=1):
            w = (k_eff - pos + 1) ** 2
            s_t = _cos(list(text_rows[item]), list(text_rows[label]))
            s_c = _cos(list(collab_rows[item]), list(collab_rows[label]))
            num += w * (s_t + s_c)
            den += w
        r_point = num / (2.0 * den)
        r_hit = 1.0 if label in final else 0.0
        if r_hit:
            k_y = final.index(label) + 1
            k_rank = max(k_final, len(final))
            r_rank = (k_rank - k_y + 1) * rank_step
        else:
            r_rank = 0.0
    else:
        r_point = 0.0
        r_hit = 0.0
        r_rank = 0.0

    if stage == "cold_start":
        total = r_format + r_invocation + r_diversity
    else:
        total = r_format + r_point + r_hit + r_rank

    return {
        "format": r_format,
        "invocation": r_invocation,
        "diversity": r_diversity,
        "point": r_point,
        "hit": r_hit,
        "rank": r_rank,
        "stage": stage,
        "stage_total": total,
    }
