"""Compiled inner loop of the greedy map-equation search.

Works on a generic flow network: node codebook rates ``rate``, per-node total
outgoing flow ``out`` (to other nodes plus any flow leaving the network), a
symmetric CSR matrix of per-direction link flows, and the exit rate of the
enclosing module (``parent_exit``, 0 at the root). The objective is

    plogp(parent_exit + sum_exit) - plogp(parent_exit) - 2 sum plogp(exit_m)
        + sum plogp(exit_m + rate_m) - sum plogp(rate_node)
"""

import numpy as np
from numba import njit

# Minimum decrease (bits) for a move to count as an improvement.
MIN_GAIN = 1e-12
_TIE = 1e-14


@njit(cache=True, inline="always")
def plogp(x):
    if x > 0.0:
        return x * np.log2(x)
    return 0.0


@njit(cache=True, inline="always")
def _next(state):
    # splitmix64
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _shuffle(order, state):
    for i in range(len(order) - 1, 0, -1):
        j = np.int64(_next(state) % np.uint64(i + 1))
        tmp = order[i]
        order[i] = order[j]
        order[j] = tmp


@njit(cache=True, nogil=True)
def local_moves(indptr, indices, flow, rate, out, module, parent_exit, seed, max_sweeps):
    """Move single nodes between modules until no move shortens the code.

    ``module`` holds the starting assignment (ids in [0, n)) and is updated in
    place. Each sweep visits nodes in a fresh pseudo-random order derived from
    ``seed``; a node moves to the neighbouring (or an empty) module with the
    largest strictly positive gain, ties going to the lowest module id.
    Returns the number of moves made.
    """
    n = len(rate)
    mod_exit = np.zeros(n)
    mod_rate = np.zeros(n)
    mod_size = np.zeros(n, dtype=np.int64)
    for a in range(n):
        m = module[a]
        mod_rate[m] += rate[a]
        mod_exit[m] += out[a]
        mod_size[m] += 1
        for k in range(indptr[a], indptr[a + 1]):
            if module[indices[k]] == m:
                mod_exit[m] -= flow[k]
    for m in range(n):
        if mod_exit[m] < 0.0:
            mod_exit[m] = 0.0

    free = np.empty(n, dtype=np.int64)
    n_free = 0
    for m in range(n - 1, -1, -1):
        if mod_size[m] == 0:
            free[n_free] = m
            n_free += 1

    sum_exit = 0.0
    for m in range(n):
        sum_exit += mod_exit[m]

    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    order = np.arange(n)
    nbr_flow = np.zeros(n)
    touched = np.empty(n, dtype=np.int64)
    is_touched = np.zeros(n, dtype=np.bool_)

    total_moves = 0
    for _sweep in range(max_sweeps):
        _shuffle(order, state)
        moves = 0
        for idx in range(n):
            a = order[idx]
            A = module[a]
            n_touched = 0
            for k in range(indptr[a], indptr[a + 1]):
                b = indices[k]
                if b == a:
                    continue
                M = module[b]
                if not is_touched[M]:
                    is_touched[M] = True
                    touched[n_touched] = M
                    n_touched += 1
                    nbr_flow[M] = 0.0
                nbr_flow[M] += flow[k]

            f_A = nbr_flow[A] if is_touched[A] else 0.0
            exit_A_new = mod_exit[A] - out[a] + 2.0 * f_A
            if exit_A_new < 0.0:
                exit_A_new = 0.0
            rate_A_new = mod_rate[A] - rate[a]
            old_A = -2.0 * plogp(mod_exit[A]) + plogp(mod_exit[A] + mod_rate[A])
            new_A = -2.0 * plogp(exit_A_new) + plogp(exit_A_new + rate_A_new)
            base = plogp(parent_exit + sum_exit)

            best_gain = 0.0
            best_mod = -1
            best_exit_B = 0.0
            n_cand = n_touched + 1
            for c in range(n_cand):
                if c < n_touched:
                    B = touched[c]
                    if B == A:
                        continue
                    f_B = nbr_flow[B]
                else:
                    # an empty module, only meaningful if `a` is not alone
                    if mod_size[A] <= 1 or n_free == 0:
                        continue
                    B = free[n_free - 1]
                    f_B = 0.0
                exit_B_new = mod_exit[B] + out[a] - 2.0 * f_B
                if exit_B_new < 0.0:
                    exit_B_new = 0.0
                rate_B_new = mod_rate[B] + rate[a]
                old_B = -2.0 * plogp(mod_exit[B]) + plogp(mod_exit[B] + mod_rate[B])
                new_B = -2.0 * plogp(exit_B_new) + plogp(exit_B_new + rate_B_new)
                new_sum = sum_exit - mod_exit[A] - mod_exit[B] + exit_A_new + exit_B_new
                delta = (plogp(parent_exit + new_sum) - base) + (new_A - old_A) + (new_B - old_B)
                gain = -delta
                if gain > best_gain + _TIE or (
                    best_mod >= 0 and abs(gain - best_gain) <= _TIE and B < best_mod
                ):
                    best_gain = gain
                    best_mod = B
                    best_exit_B = exit_B_new

            for c in range(n_touched):
                is_touched[touched[c]] = False

            if best_mod >= 0 and best_gain > MIN_GAIN:
                B = best_mod
                if mod_size[B] == 0:
                    n_free -= 1
                sum_exit += exit_A_new + best_exit_B - mod_exit[A] - mod_exit[B]
                mod_exit[A] = exit_A_new
                mod_rate[A] = rate_A_new
                mod_size[A] -= 1
                mod_exit[B] = best_exit_B
                mod_rate[B] += rate[a]
                mod_size[B] += 1
                module[a] = B
                if mod_size[A] == 0:
                    mod_exit[A] = 0.0
                    mod_rate[A] = 0.0
                    free[n_free] = A
                    n_free += 1
                moves += 1
        total_moves += moves
        if moves == 0:
            break
    return total_moves
