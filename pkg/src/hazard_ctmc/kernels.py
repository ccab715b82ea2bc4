"""Hot inner loops.

All functions here take plain arrays (the parameter matrix, item index
arrays, pre-drawn uniforms) and are jitted by numba unless disabled, see
:mod:`hazard_ctmc._jit`.  Randomness is always passed in as uniforms in
``[0, 1)`` so that the jitted and numpy paths consume identical streams.

Notation: ``r[j]`` is the log-rate of adding item ``j`` to the current state,
``theta[j, j] + sum(theta[i, j] for i in state)``.
"""

import numpy as np

from ._jit import njit


@njit
def state_rates(r, present):
    """Rates out of the current state; zero for items already present."""
    ex = np.exp(r)
    ex[present] = 0.0
    return ex


@njit
def marginal_seq_logp(theta, seq):
    """log p(seq) of a partial sequence, marginal over an Exp(1) observation time."""
    n = theta.shape[0]
    k = seq.shape[0]
    r = np.diag(theta).copy()
    present = np.zeros(n, dtype=np.bool_)
    logp = 0.0
    for i in range(k + 1):
        ex = state_rates(r, present)
        logp -= np.log1p(ex.sum())
        if i < k:
            x = seq[i]
            logp += r[x]
            present[x] = True
            r += theta[x]
    return logp


@njit
def full_seq_logp(theta, seq):
    """log-probability of the jump chain visiting ``seq`` (no observation time)."""
    n = theta.shape[0]
    r = np.diag(theta).copy()
    present = np.zeros(n, dtype=np.bool_)
    logp = 0.0
    for i in range(seq.shape[0]):
        ex = state_rates(r, present)
        x = seq[i]
        logp += r[x] - np.log(ex.sum())
        present[x] = True
        r += theta[x]
    return logp


@njit
def exit_rates_along(theta, seq):
    """Exit rates of the states ``seq[:0], seq[:1], ..., seq[:k]``."""
    n = theta.shape[0]
    k = seq.shape[0]
    out = np.empty(k + 1)
    r = np.diag(theta).copy()
    present = np.zeros(n, dtype=np.bool_)
    for i in range(k + 1):
        out[i] = state_rates(r, present).sum()
        if i < k:
            present[seq[i]] = True
            r += theta[seq[i]]
    return out


@njit
def rates_along(theta, seq):
    """(k+1) x n matrix of transition rates out of every prefix state."""
    n = theta.shape[0]
    k = seq.shape[0]
    out = np.empty((k + 1, n))
    r = np.diag(theta).copy()
    present = np.zeros(n, dtype=np.bool_)
    for i in range(k + 1):
        out[i] = state_rates(r, present)
        if i < k:
            present[seq[i]] = True
            r += theta[seq[i]]
    return out


@njit
def accumulate_seq_grad(seq, rates, coef, scale, out):
    """Add ``scale`` times a sequence log-probability gradient into ``out``.

    The gradient has the form shared by every sequence probability here:
    +1 for each realised transition ``(a, seq[i])`` with ``a`` earlier in the
    sequence or ``a == seq[i]``, plus ``coef[i] * d(exit rate of state i)``
    for every prefix state.  ``rates`` is the output of :func:`rates_along`.
    """
    k = seq.shape[0]
    n = rates.shape[1]
    for i in range(k):
        b = seq[i]
        out[b, b] += scale
        for p in range(i):
            out[seq[p], b] += scale
    # d qh_R / d theta_ab = rate(R, b) when a in R or a == b
    weighted = np.empty((k + 1, n))
    for i in range(k + 1):
        weighted[i] = coef[i] * rates[i]
    total = weighted.sum(axis=0)
    for b in range(n):
        out[b, b] += scale * total[b]
    suffix = np.zeros(n)
    for p in range(k - 1, -1, -1):
        suffix += weighted[p + 1]
        out[seq[p]] += scale * suffix


@njit
def accumulate_marginal_grad(theta, seq, scale, out):
    rates = rates_along(theta, seq)
    coef = -1.0 / (1.0 + rates.sum(axis=1))
    accumulate_seq_grad(seq, rates, coef, scale, out)


@njit
def accumulate_full_grad(theta, seq, scale, out):
    rates = rates_along(theta, seq)[:-1]
    coef = -1.0 / rates.sum(axis=1)
    k = seq.shape[0]
    # the final (empty-sum) state contributes nothing; pad to k+1 rows
    padded = np.zeros((k + 1, rates.shape[1]))
    padded[:k] = rates
    c = np.zeros(k + 1)
    c[:k] = coef
    accumulate_seq_grad(seq, padded, c, scale, out)


@njit
def guided_log_weights(theta, weights, r, present, rem, m):
    """Unnormalised log proposal weights of the ``m`` remaining candidates."""
    n = theta.shape[0]
    logu = np.empty(m)
    for c in range(m):
        v = rem[c]
        # log d, d = 1 + exit rate of state + {v}; summed in log space since
        # subtracting v's own term from the full sum can cancel to <= 0
        mx = 0.0
        for j in range(n):
            if not present[j] and j != v and theta[v, j] + r[j] > mx:
                mx = theta[v, j] + r[j]
        d = np.exp(-mx)
        for j in range(n):
            if not present[j] and j != v:
                d += np.exp(theta[v, j] + r[j] - mx)
        s = 0.0
        for c2 in range(m):
            if c2 != c:
                s += theta[v, rem[c2]]
        logu[c] = s - mx - np.log(d)
    return logu


@njit
def guided_draw(theta, weights, items, u):
    """Draw a permutation of ``items`` from the guided proposal.

    Returns ``(perm, log_q)`` with ``log_q`` the normalised log proposal
    probability.  Consumes ``len(items)`` uniforms.
    """
    n = theta.shape[0]
    k = items.shape[0]
    perm = np.empty(k, dtype=np.int64)
    rem = items.copy()
    r = np.diag(theta).copy()
    present = np.zeros(n, dtype=np.bool_)
    log_q = 0.0
    for step in range(k):
        m = k - step
        logu = guided_log_weights(theta, weights, r, present, rem, m)
        mx = logu.max()
        p = np.exp(logu - mx)
        total = p.sum()
        target = u[step] * total
        acc = 0.0
        pick = m - 1
        for c in range(m):
            acc += p[c]
            if acc > target:
                pick = c
                break
        log_q += np.log(p[pick] / total)
        x = rem[pick]
        for c in range(pick, m - 1):
            rem[c] = rem[c + 1]
        perm[step] = x
        present[x] = True
        r += theta[x]
    return perm, log_q


@njit
def guided_logq(theta, weights, perm):
    """Normalised log proposal probability of a given permutation."""
    n = theta.shape[0]
    k = perm.shape[0]
    rem = perm.copy()
    r = np.diag(theta).copy()
    present = np.zeros(n, dtype=np.bool_)
    log_q = 0.0
    for step in range(k):
        m = k - step
        logu = guided_log_weights(theta, weights, r, present, rem, m)
        mx = logu.max()
        # perm[step] sits at rem[0] because rem keeps perm's order
        log_q += logu[0] - mx - np.log(np.exp(logu - mx).sum())
        x = rem[0]
        for c in range(m - 1):
            rem[c] = rem[c + 1]
        present[x] = True
        r += theta[x]
    return log_q


@njit
def uniform_draw(items, u):
    """Fisher-Yates shuffle driven by ``u``; returns ``(perm, log(1/k!))``."""
    k = items.shape[0]
    perm = items.copy()
    for i in range(k - 1, 0, -1):
        j = int(u[i] * (i + 1))
        if j > i:
            j = i
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    log_q = 0.0
    for i in range(2, k + 1):
        log_q -= np.log(i)
    return perm, log_q


@njit
def propose(theta, weights, items, u, guided):
    if guided:
        return guided_draw(theta, weights, items, u)
    return uniform_draw(items, u)


@njit
def mh_chain(theta, weights, items, u, burn_in, num_samples, guided, out):
    """Independence Metropolis-Hastings over orderings of ``items``.

    ``u`` has shape ``(1 + burn_in + num_samples, len(items) + 1)``: row 0
    initialises the chain, each later row drives one proposal plus the
    acceptance test in its last column.  Adds the average marginal-sequence
    gradient over the retained states into ``out`` and returns the number of
    accepted moves.
    """
    k = items.shape[0]
    scale = 1.0 / num_samples
    cur, cur_lq = propose(theta, weights, items, u[0], guided)
    cur_lp = marginal_seq_logp(theta, cur)
    count = 0
    accepted = 0
    for step in range(1, 1 + burn_in + num_samples):
        new, new_lq = propose(theta, weights, items, u[step], guided)
        new_lp = marginal_seq_logp(theta, new)
        log_ratio = new_lp - cur_lp + cur_lq - new_lq
        if log_ratio >= 0.0 or u[step, k] < np.exp(log_ratio):
            if count > 0:
                accumulate_marginal_grad(theta, cur, count * scale, out)
                count = 0
            cur = new
            cur_lq = new_lq
            cur_lp = new_lp
            accepted += 1
        if step > burn_in:
            count += 1
    if count > 0:
        accumulate_marginal_grad(theta, cur, count * scale, out)
    return accepted


@njit
def mh_trace(theta, weights, items, u, guided):
    """Run the chain and return the visited states (one row per step)."""
    k = items.shape[0]
    steps = u.shape[0]
    states = np.empty((steps, k), dtype=np.int64)
    cur, cur_lq = propose(theta, weights, items, u[0], guided)
    cur_lp = marginal_seq_logp(theta, cur)
    states[0] = cur
    for step in range(1, steps):
        new, new_lq = propose(theta, weights, items, u[step], guided)
        new_lp = marginal_seq_logp(theta, new)
        log_ratio = new_lp - cur_lp + cur_lq - new_lq
        if log_ratio >= 0.0 or u[step, k] < np.exp(log_ratio):
            cur = new
            cur_lq = new_lq
            cur_lp = new_lp
        states[step] = cur
    return states


@njit
def next_permutation(a):
    """Advance ``a`` to the next lexicographic permutation in place."""
    k = a.shape[0]
    i = k - 2
    while i >= 0 and a[i] >= a[i + 1]:
        i -= 1
    if i < 0:
        return False
    j = k - 1
    while a[j] <= a[i]:
        j -= 1
    tmp = a[i]
    a[i] = a[j]
    a[j] = tmp
    lo = i + 1
    hi = k - 1
    while lo < hi:
        tmp = a[lo]
        a[lo] = a[hi]
        a[hi] = tmp
        lo += 1
        hi -= 1
    return True


@njit
def enumerate_logp(theta, items):
    """log p(sigma) for every ordering of sorted ``items``, lexicographic order."""
    k = items.shape[0]
    count = 1
    for i in range(2, k + 1):
        count *= i
    out = np.empty(count)
    perm = np.sort(items)
    for c in range(count):
        out[c] = marginal_seq_logp(theta, perm)
        next_permutation(perm)
    return out


@njit
def logsumexp(x):
    mx = x.max()
    if not np.isfinite(mx):
        return mx
    return mx + np.log(np.exp(x - mx).sum())


@njit
def exact_set_grad(theta, items, scale, out):
    """Add ``scale * grad log p(S)`` into ``out`` by full enumeration; returns log p(S)."""
    logps = enumerate_logp(theta, items)
    lse = logsumexp(logps)
    perm = np.sort(items)
    for c in range(logps.shape[0]):
        w = np.exp(logps[c] - lse)
        if w > 0.0:
            accumulate_marginal_grad(theta, perm, scale * w, out)
        next_permutation(perm)
    return lse


@njit
def trajectory_until(theta, t_obs, u, seq_out, hold_out):
    """Run the jump chain up to time ``t_obs``; ``u[1:]`` drives the jumps.

    Fills the first ``k`` entries of ``seq_out`` / ``hold_out`` and returns
    ``k``.  An item is added only if its jump time is before ``t_obs``.
    """
    n = theta.shape[0]
    r = np.diag(theta).copy()
    present = np.zeros(n, dtype=np.bool_)
    t = 0.0
    k = 0
    while k < n:
        ex = state_rates(r, present)
        qh = ex.sum()
        if qh <= 0.0:
            break
        h = -np.log1p(-u[1 + 2 * k]) / qh
        if t + h >= t_obs:
            break
        target = u[2 + 2 * k] * qh
        acc = 0.0
        x = -1
        for j in range(n):
            if not present[j]:
                x = j
                acc += ex[j]
                if acc > target:
                    break
        t += h
        seq_out[k] = x
        hold_out[k] = h
        present[x] = True
        r += theta[x]
        k += 1
    return k


@njit
def sample_trajectory(theta, u, seq_out, hold_out):
    """Run the jump chain up to an Exp(1) observation time.

    ``u`` holds ``2n + 1`` uniforms, the first one for the observation time.
    Returns ``(k, t_obs)``.
    """
    t_obs = -np.log1p(-u[0])
    k = trajectory_until(theta, t_obs, u, seq_out, hold_out)
    return k, t_obs


@njit
def sample_batch(theta, u, seqs, lens, holds, tobs):
    for d in range(u.shape[0]):
        k, t = sample_trajectory(theta, u[d], seqs[d], holds[d])
        lens[d] = k
        tobs[d] = t


@njit
def sample_codes(theta, u, code_map, base):
    """Sampled sequences restricted to mapped items, as base-``base`` integers.

    ``code_map[j]`` is the restricted index of item ``j`` or -1.  A restricted
    sequence ``(c_1..c_k)`` is encoded as the digits ``c_i + 1`` with the first
    item most significant.
    """
    n = theta.shape[0]
    draws = u.shape[0]
    codes = np.empty(draws, dtype=np.int64)
    seq = np.empty(n, dtype=np.int64)
    hold = np.empty(n)
    for d in range(draws):
        k, _ = sample_trajectory(theta, u[d], seq, hold)
        code = 0
        for i in range(k):
            c = code_map[seq[i]]
            if c >= 0:
                code = code * base + c + 1
        codes[d] = code
    return codes


@njit
def sample_set_bits(theta, u):
    """Sampled sets as bitmasks (requires n <= 62)."""
    n = theta.shape[0]
    draws = u.shape[0]
    bits = np.empty(draws, dtype=np.int64)
    seq = np.empty(n, dtype=np.int64)
    hold = np.empty(n)
    for d in range(draws):
        k, _ = sample_trajectory(theta, u[d], seq, hold)
        b = 0
        for i in range(k):
            b |= np.int64(1) << seq[i]
        bits[d] = b
    return bits


@njit
def pair_order_counts(theta, u, before, both):
    """Accumulate, for every ordered pair (a, b), how often a precedes b and
    how often both occur, over sampled marginal sequences."""
    n = theta.shape[0]
    seq = np.empty(n, dtype=np.int64)
    hold = np.empty(n)
    for d in range(u.shape[0]):
        k, _ = sample_trajectory(theta, u[d], seq, hold)
        for i in range(k):
            a = seq[i]
            for j in range(i + 1, k):
                b = seq[j]
                before[a, b] += 1
                both[a, b] += 1
                both[b, a] += 1


@njit
def stage_closed_form(lam, t):
    """Closed-form P(T_k <= t < T_{k+1}) and its gradient in the k+1 rates.

    The last rate may be 0.  Near-equal rates get the same relative jitter as
    :mod:`hazard_ctmc.hypoexp`.  Returns ``(value, grad, ok)``; ``ok`` is False
    when rounding in the alternating sums could exceed ~1e-9 relative, and
    the caller must then use the matrix-exponential route.
    """
    size = lam.shape[0]
    k = size - 1
    scale = np.ones(size)
    srt = np.sort(lam)
    if size > 1 and np.min(np.diff(srt)) < 1e-8 * srt[-1]:
        for i in range(size):
            scale[i] = 1.0 + 1e-7 * i
    lam = lam * scale
    grad = np.zeros(size)
    prod = 1.0
    for i in range(k):
        prod *= lam[i]
    terms = np.empty(size)
    inv_sum = np.zeros(size)
    for i in range(size):
        c = prod
        for j in range(size):
            if j != i:
                c /= lam[j] - lam[i]
                inv_sum[i] += 1.0 / (lam[j] - lam[i])
        terms[i] = c * np.exp(-lam[i] * t)
    value = terms.sum()
    spread = 0.0
    for i in range(size):
        spread = max(spread, np.abs(inv_sum[i]) * srt[-1])
    err = 2.2e-16 * size * np.abs(terms).sum() * (1.0 + spread)
    if not value > 0.0 or err > 1e-9 * value:
        return value, grad, False
    for m in range(size):
        g = terms[m] * (inv_sum[m] - t)
        for i in range(size):
            if i != m:
                g -= terms[i] / (lam[m] - lam[i])
        if m < k:
            g += value / lam[m]
        grad[m] = g * scale[m]
    return value, grad, True


@njit
def given_time_set_terms(theta, items, t):
    """Per-ordering terms of log p(S | t), orderings of sorted ``items`` in
    lexicographic order.

    Returns ``(logs, coefs, ok)`` where ``coefs[c]`` are the exit-rate
    coefficients for :func:`accumulate_seq_grad`.  Orderings with
    ``ok[c] == False`` must be recomputed by the caller.
    """
    k = items.shape[0]
    count = 1
    for i in range(2, k + 1):
        count *= i
    logs = np.empty(count)
    coefs = np.zeros((count, k + 1))
    ok = np.zeros(count, dtype=np.bool_)
    perm = np.sort(items)
    for c in range(count):
        rates = rates_along(theta, perm)
        lam = rates.sum(axis=1)
        log_path = 0.0
        for i in range(k):
            log_path += np.log(rates[i, perm[i]]) - np.log(lam[i])
        value, dval, good = stage_closed_form(lam, t)
        ok[c] = good
        if good:
            logs[c] = log_path + np.log(value)
            for i in range(k + 1):
                coefs[c, i] = dval[i] / value
            for i in range(k):
                coefs[c, i] -= 1.0 / lam[i]
        else:
            logs[c] = log_path
        next_permutation(perm)
    return logs, coefs, ok


@njit
def accumulate_weighted_orderings(theta, items, weights, coefs, out):
    """Add ``sum_c weights[c] * grad`` over orderings in lexicographic order."""
    perm = np.sort(items)
    for c in range(weights.shape[0]):
        if weights[c] > 0.0:
            rates = rates_along(theta, perm)
            accumulate_seq_grad(perm, rates, coefs[c], weights[c], out)
        next_permutation(perm)
