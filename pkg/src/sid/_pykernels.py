"""Pure-Python versions of the hot kernels.

Both kernels work on plain integer encodings so that the compiled module
in ``_ckernels.pyx`` can share the exact same calling convention.
"""

from __future__ import annotations

from typing import Sequence


def bisimilar(
    tags_a: Sequence[int],
    kids_a: Sequence[Sequence[int]],
    root_a: int,
    tags_b: Sequence[int],
    kids_b: Sequence[Sequence[int]],
    root_b: int,
) -> bool:
    """Decide bisimilarity of two rooted, deterministic labelled graphs.

    Node labels are integer tags and the children of a node are ordered.
    The graphs are bisimilar iff no pair reachable in the product graph
    carries different tags.
    """
    seen = {(root_a, root_b)}
    stack = [(root_a, root_b)]
    while stack:
        x, y = stack.pop()
        if tags_a[x] != tags_b[y]:
            return False
        kx, ky = kids_a[x], kids_b[y]
        if len(kx) != len(ky):
            return False
        for cx, cy in zip(kx, ky):
            pair = (cx, cy)
            if pair not in seen:
                seen.add(pair)
                stack.append(pair)
    return True


def _popcount(x: int) -> int:
    return bin(x).count("1")


def wp_search(
    plus: Sequence[int], minus: Sequence[int], leaf_ok: Sequence[bool]
) -> object:
    """Search every binary arrangement of a thread multiset.

    ``plus[i]``/``minus[i]`` are bitsets of the names occurring in thread
    ``i`` with positive/negative polarity.  A split of a group into two
    halves is admissible when at most one name occurs with opposite
    polarities across the halves.  Returns a witness tree whose leaves are
    thread indices, ``()`` for the empty multiset, or ``None``.

    The search is a dynamic programme over subsets, which explores the same
    space as enumerating trees because admissibility of a node depends only
    on the set of leaves below it.
    """
    n = len(plus)
    if n == 0:
        return ()
    if not all(leaf_ok):
        return None
    size = 1 << n
    up = [0] * size
    down = [0] * size
    for mask in range(1, size):
        low = mask & -mask
        i = low.bit_length() - 1
        up[mask] = up[mask ^ low] | plus[i]
        down[mask] = down[mask ^ low] | minus[i]
    ok = bytearray(size)
    choice = [0] * size
    for mask in range(1, size):
        if mask & (mask - 1) == 0:
            ok[mask] = 1
            continue
        low = mask & -mask
        rest = mask ^ low
        sub = rest
        while True:
            left = low | sub
            right = mask ^ left
            if right and ok[left] and ok[right]:
                clash = _popcount(up[left] & down[right]) + _popcount(down[left] & up[right])
                if clash <= 1:
                    ok[mask] = 1
                    choice[mask] = left
                    break
            if sub == 0:
                break
            sub = (sub - 1) & rest
    full = size - 1
    if not ok[full]:
        return None

    def build(mask: int):
        if mask & (mask - 1) == 0:
            return mask.bit_length() - 1
        left = choice[mask]
        return (build(left), build(mask ^ left))

    return build(full)
