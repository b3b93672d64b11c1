"""Compiled inner loops over sorted per-shot tag arrays.

All kernels release the GIL so callers can run disjoint shot ranges on
threads.  Outputs are integer counts, so the reduction order of partial
results never changes the answer.
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def count_band(bins, chans, offsets, shot_lo, shot_hi, block_of_shot, block0, K, band, lags):
    """Accumulate ch1/ch2 pairs with |bin2 - bin1| <= K.

    ``band[a, b - a + K]`` counts pairs (ch1 in bin a, ch2 in bin b);
    ``lags[block, b - a + K]`` counts the same pairs per bootstrap block.
    """
    for s in range(shot_lo, shot_hi):
        i0 = offsets[s]
        i1 = offsets[s + 1]
        blk = block_of_shot[s] - block0
        jlo = i0
        for i in range(i0, i1):
            if chans[i] != 1:
                continue
            a = bins[i]
            while jlo < i1 and bins[jlo] < a - K:
                jlo += 1
            j = jlo
            while j < i1 and bins[j] <= a + K:
                if chans[j] == 2:
                    k = bins[j] - a + K
                    band[a, k] += 1
                    lags[blk, k] += 1
                j += 1


@njit(nogil=True, cache=True)
def count_close_pairs(times, chans, offsets, tau_c):
    n = 0
    for s in range(len(offsets) - 1):
        i1 = offsets[s + 1]
        for i in range(offsets[s], i1):
            j = i + 1
            while j < i1 and times[j] - times[i] < tau_c:
                if chans[j] != chans[i]:
                    n += 1
                j += 1
    return n


@njit(nogil=True, cache=True)
def list_close_pairs(times, chans, offsets, tau_c, first, second):
    """Cross-channel pairs closer than ``tau_c``, ordered by the earlier tag."""
    n = 0
    for s in range(len(offsets) - 1):
        i1 = offsets[s + 1]
        for i in range(offsets[s], i1):
            j = i + 1
            while j < i1 and times[j] - times[i] < tau_c:
                if chans[j] != chans[i]:
                    first[n] = i
                    second[n] = j
                    n += 1
                j += 1


@njit(nogil=True, cache=True)
def greedy_delete(first, second, u_delete, u_member, p, alive):
    for m in range(len(first)):
        i = first[m]
        j = second[m]
        if alive[i] and alive[j] and u_delete[m] < p:
            if u_member[m] < 0.5:
                alive[i] = False
            else:
                alive[j] = False


@njit(nogil=True, cache=True)
def dead_time_mask(times, chans, offsets, dead_time):
    """Keep a tag only if its channel was not fired within ``dead_time`` before."""
    keep = np.ones(len(times), dtype=np.bool_)
    for s in range(len(offsets) - 1):
        last1 = -1
        last2 = -1
        for i in range(offsets[s], offsets[s + 1]):
            t = np.int64(times[i])
            if chans[i] == 1:
                if last1 >= 0 and t - last1 < dead_time:
                    keep[i] = False
                else:
                    last1 = t
            else:
                if last2 >= 0 and t - last2 < dead_time:
                    keep[i] = False
                else:
                    last2 = t
    return keep
