"""Compiled inner loops of the medium; arrays are channel-major ``(2, n)`` or ``(2, slots, n)``."""

from numba import njit


@njit(cache=True)
def refresh_channel(contrib, max_interf, active, total, c, started):
    """Recompute the received-power sum on channel ``c``; on starts, raise per-frame max interference."""
    k_cap = contrib.shape[1]
    n = contrib.shape[2]
    for r in range(n):
        s = 0.0
        for k in range(k_cap):
            if active[c, k]:
                s += contrib[c, k, r]
        total[c, r] = s
    if started:
        for k in range(k_cap):
            if active[c, k]:
                for r in range(n):
                    v = total[c, r] - contrib[c, k, r]
                    if v > max_interf[c, k, r]:
                        max_interf[c, k, r] = v


@njit(cache=True)
def compute_lock(row, on_ch0, on_ch1, total, primary, transmitting, pd_mw, snr, noise, lock, pd_count):
    """Preamble lock at frame start on each receiver's primary channel."""
    n = row.shape[0]
    for r in range(n):
        lk = False
        if not transmitting[r]:
            c = primary[r]
            if (c == 0 and on_ch0) or (c == 1 and on_ch1):
                sig = row[r]
                if sig >= pd_mw and sig >= snr * (noise + total[c, r] - sig):
                    lk = True
                    pd_count[c, r] += 1
        lock[r] = lk


@njit(cache=True)
def finish_frame(row, on_ch0, slot0, on_ch1, slot1, max_interf, lock, transmitting, last_tx_end, start,
                 snr, noise, wide_capable, primary, pd_count, ok_ch, ok_union, sender, success):
    """Decode outcome per receiver plus episode bookkeeping; returns nothing."""
    n = row.shape[0]
    wide = on_ch0 and on_ch1
    for r in range(n):
        lk = lock[r]
        ok = lk and not transmitting[r] and last_tx_end[r] <= start
        if ok and on_ch0 and row[r] < snr * (noise + max_interf[0, slot0, r]):
            ok = False
        if ok and on_ch1 and row[r] < snr * (noise + max_interf[1, slot1, r]):
            ok = False
        if ok and wide and not wide_capable[r]:
            ok = False
        success[r] = ok
        if lk:
            pd_count[primary[r], r] -= 1
        if ok or lk:
            if on_ch0:
                ok_ch[0, r] = ok
            if on_ch1:
                ok_ch[1, r] = ok
            ok_union[r] = ok
    if on_ch0:
        ok_ch[0, sender] = True
    if on_ch1:
        ok_ch[1, sender] = True
    ok_union[sender] = True


@njit(cache=True)
def update_busy(total, noise, ed_mw, pd_count, own_tx, busy, since, ok_ch, ok_union, sec_involved,
                secondary, listening, now, out_idx, out_flags):
    """Apply busy/idle edges in place; return how many listening receivers changed state."""
    n = total.shape[1]
    k = 0
    for r in range(n):
        u_old = busy[0, r] or busy[1, r]
        flags = 0
        for c in range(2):
            b = (total[c, r] + noise > ed_mw) or pd_count[c, r] > 0 or own_tx[c, r]
            if b != busy[c, r]:
                busy[c, r] = b
                since[c, r] = now
                if b:
                    ok_ch[c, r] = False
                flags |= 1 << c
        if flags:
            u_new = busy[0, r] or busy[1, r]
            if u_new and not u_old:
                ok_union[r] = False
                sec_involved[r] = False
        if busy[secondary[r], r]:
            sec_involved[r] = True
        if flags and listening[r] > 0:
            out_idx[k] = r
            out_flags[k] = flags
            k += 1
    return k
