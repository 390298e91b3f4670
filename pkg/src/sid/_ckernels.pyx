# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled versions of the kernels in ``_pykernels`` (same signatures)."""

from libc.stdlib cimport malloc, free


def bisimilar(tags_a, kids_a, int root_a, tags_b, kids_b, int root_b):
    cdef set seen = {(root_a, root_b)}
    cdef list stack = [(root_a, root_b)]
    cdef int x, y, i, n
    while stack:
        x, y = stack.pop()
        if tags_a[x] != tags_b[y]:
            return False
        kx = kids_a[x]
        ky = kids_b[y]
        n = len(kx)
        if n != len(ky):
            return False
        for i in range(n):
            pair = (kx[i], ky[i])
            if pair not in seen:
                seen.add(pair)
                stack.append(pair)
    return True


cdef inline int _popcount(unsigned long long x) nogil:
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


def wp_search(plus, minus, leaf_ok):
    cdef Py_ssize_t n = len(plus)
    if n == 0:
        return ()
    if not all(leaf_ok):
        return None
    if n > 24:
        raise ValueError("wp_search supports at most 24 threads")
    if max(list(plus) + list(minus)).bit_length() > 64:
        from . import _pykernels
        return _pykernels.wp_search(plus, minus, leaf_ok)
    cdef unsigned long size = 1UL << n
    cdef unsigned long long *up = <unsigned long long *> malloc(size * sizeof(unsigned long long))
    cdef unsigned long long *down = <unsigned long long *> malloc(size * sizeof(unsigned long long))
    cdef unsigned long *choice = <unsigned long *> malloc(size * sizeof(unsigned long))
    cdef unsigned char *ok = <unsigned char *> malloc(size)
    cdef unsigned long long[64] p
    cdef unsigned long long[64] m
    cdef unsigned long mask, low, rest, sub, left, right
    cdef int i, clash
    if up == NULL or down == NULL or choice == NULL or ok == NULL:
        free(up); free(down); free(choice); free(ok)
        raise MemoryError()
    try:
        for i in range(n):
            p[i] = plus[i]
            m[i] = minus[i]
        up[0] = 0
        down[0] = 0
        ok[0] = 0
        with nogil:
            for mask in range(1, size):
                low = mask & (~mask + 1)
                i = 0
                while (1UL << i) != low:
                    i += 1
                up[mask] = up[mask ^ low] | p[i]
                down[mask] = down[mask ^ low] | m[i]
                choice[mask] = 0
                if mask & (mask - 1) == 0:
                    ok[mask] = 1
                    continue
                ok[mask] = 0
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
        if not ok[size - 1]:
            return None
        return _build(choice, size - 1)
    finally:
        free(up)
        free(down)
        free(choice)
        free(ok)


cdef object _build(unsigned long *choice, unsigned long mask):
    if mask & (mask - 1) == 0:
        return (<object> mask).bit_length() - 1
    cdef unsigned long left = choice[mask]
    return (_build(choice, left), _build(choice, mask ^ left))
