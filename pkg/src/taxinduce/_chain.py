"""Compiled Gibbs kernel over parent-index trees.

State: ``parent`` (root slot -1), explicit child lists ``kids[m, :nk[m]]`` and
``depth``.  All scores are in log space.  Layer indices are zero-based and
already clamped to the last weight row.
"""
import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _bin_slot(value, edges):
    k = 0
    for e in edges:
        if e <= value:
            k += 1
    return 1 + k


@njit(cache=True)
def _sibling_slots(c, p, members, nmem, vis, has_img, cos, has_word, sv_edges, st_edges):
    """(S-V1 slot, S-T1 slot) of child ``c`` under ``p`` among ``members[:nmem]``."""
    if p == 0:
        return 0, 0
    sv = 0
    if has_img[c]:
        mx = NEG_INF
        cnt = 0
        for j in range(nmem):
            s = members[j]
            if s != c and has_img[s]:
                cnt += 1
                if vis[c, s] > mx:
                    mx = vis[c, s]
        if cnt > 0:
            acc = 0.0
            for j in range(nmem):
                s = members[j]
                if s != c and has_img[s]:
                    acc += np.exp(vis[c, s] - mx)
            sv = _bin_slot(mx + np.log(acc) - np.log(cnt), sv_edges)
    st = 0
    if has_word[c]:
        cnt = 0
        acc = 0.0
        for j in range(nmem):
            s = members[j]
            if s != c and has_word[s]:
                cnt += 1
                acc += cos[c, s]
        if cnt > 0:
            st = _bin_slot(acc / cnt, st_edges)
    return sv, st


@njit(cache=True)
def _group_score(m, members, nmem, lay, static, w_sv, w_st,
                 vis, has_img, cos, has_word, sv_edges, st_edges):
    s = 0.0
    for j in range(nmem):
        c = members[j]
        sv, st = _sibling_slots(c, m, members, nmem, vis, has_img, cos, has_word,
                                sv_edges, st_edges)
        s += static[lay, m, c] + w_sv[lay, sv] + w_st[lay, st]
    return s


@njit(cache=True)
def _layer(d, n_layers):
    if d > n_layers:
        return n_layers - 1
    if d < 1:
        return 0
    return d - 1


@njit(cache=True)
def _detach(n, parent, kids, nk):
    old = parent[n]
    for j in range(nk[old]):
        if kids[old, j] == n:
            kids[old, j] = kids[old, nk[old] - 1]
            nk[old] -= 1
            break
    parent[n] = -1
    return old


@njit(cache=True)
def _attach(n, m, parent, kids, nk, depth, sub, nsub):
    parent[n] = m
    kids[m, nk[m]] = n
    nk[m] += 1
    shift = depth[m] + 1 - depth[n]
    for j in range(nsub):
        depth[sub[j]] += shift


@njit(cache=True)
def _collect_subtree(n, kids, nk, sub, in_sub):
    """Fill ``sub`` with n and all its descendants (BFS order); returns the count."""
    sub[0] = n
    in_sub[n] = True
    head = 0
    tail = 1
    while head < tail:
        u = sub[head]
        head += 1
        for j in range(nk[u]):
            v = kids[u, j]
            sub[tail] = v
            in_sub[v] = True
            tail += 1
    return tail


@njit(cache=True)
def _logits(n, parent, kids, nk, depth, sub, nsub, in_sub, static, w_sv, w_st,
            vis, has_img, cos, has_word, sv_edges, st_edges, alpha, out):
    """Unnormalized log conditional of every parent for the detached node ``n``.

    Exact ratio of the collapsed joint: the new parent's Dirichlet factor,
    its child-group change, and the depth shift of n's subtree.
    """
    n_layers = static.shape[0]
    n1 = parent.shape[0]
    # per relative depth r and layer l, summed score of the subtree's internal edges
    acc = np.zeros((nsub + 1, n_layers))
    maxr = 0
    for j in range(1, nsub):
        c = sub[j]
        p = parent[c]
        r = depth[c] - depth[n]
        if r > maxr:
            maxr = r
        sv, st = _sibling_slots(c, p, kids[p], nk[p], vis, has_img, cos, has_word,
                                sv_edges, st_edges)
        for lay in range(n_layers):
            acc[r, lay] += static[lay, p, c] + w_sv[lay, sv] + w_st[lay, st]
    for m in range(n1):
        if in_sub[m]:
            out[m] = NEG_INF
            continue
        dn = depth[m] + 1
        lay = _layer(dn, n_layers)
        before = _group_score(m, kids[m], nk[m], lay, static, w_sv, w_st,
                              vis, has_img, cos, has_word, sv_edges, st_edges)
        kids[m, nk[m]] = n
        after = _group_score(m, kids[m], nk[m] + 1, lay, static, w_sv, w_st,
                             vis, has_img, cos, has_word, sv_edges, st_edges)
        s = np.log(nk[m] + alpha[m]) + after - before
        for r in range(1, maxr + 1):
            s += acc[r, _layer(dn + r, n_layers)]
        out[m] = s


@njit(cache=True)
def _init_state(parent0):
    n1 = parent0.shape[0]
    parent = parent0.copy()
    kids = np.zeros((n1, n1), dtype=np.int64)
    nk = np.zeros(n1, dtype=np.int64)
    for c in range(1, n1):
        p = parent[c]
        kids[p, nk[p]] = c
        nk[p] += 1
    depth = np.zeros(n1, dtype=np.int64)
    # nodes are visited in BFS order from the root
    queue = np.zeros(n1, dtype=np.int64)
    head = 0
    tail = 1
    while head < tail:
        u = queue[head]
        head += 1
        for j in range(nk[u]):
            v = kids[u, j]
            depth[v] = depth[u] + 1
            queue[tail] = v
            tail += 1
    return parent, kids, nk, depth


@njit(cache=True)
def _is_tree(parent):
    n1 = parent.shape[0]
    for c in range(1, n1):
        u = c
        steps = 0
        while u != 0:
            u = parent[u]
            steps += 1
            if u < 0 or steps > n1:
                return False
    return True


@njit(cache=True)
def conditional_logits(parent0, n, static, w_sv, w_st, vis, has_img, cos, has_word,
                       sv_edges, st_edges, alpha):
    parent, kids, nk, depth = _init_state(parent0)
    n1 = parent.shape[0]
    sub = np.zeros(n1, dtype=np.int64)
    in_sub = np.zeros(n1, dtype=np.bool_)
    _detach(n, parent, kids, nk)
    nsub = _collect_subtree(n, kids, nk, sub, in_sub)
    out = np.empty(n1)
    _logits(n, parent, kids, nk, depth, sub, nsub, in_sub, static, w_sv, w_st,
            vis, has_img, cos, has_word, sv_edges, st_edges, alpha, out)
    return out


@njit(cache=True)
def _accumulate_features(parent, kids, nk, depth, static_idx, sv_off, st_off,
                         vis, has_img, cos, has_word, sv_edges, st_edges, sums):
    n_layers = sums.shape[0]
    for c in range(1, parent.shape[0]):
        p = parent[c]
        lay = _layer(depth[c], n_layers)
        for k in range(static_idx.shape[2]):
            i = static_idx[p, c, k]
            if i >= 0:
                sums[lay, i] += 1.0
        sv, st = _sibling_slots(c, p, kids[p], nk[p], vis, has_img, cos, has_word,
                                sv_edges, st_edges)
        sums[lay, sv_off + sv] += 1.0
        sums[lay, st_off + st] += 1.0


@njit(cache=True)
def run(parent0, free, burn_in, samples, seed, static, w_sv, w_st, vis, has_img, cos,
        has_word, sv_edges, st_edges, alpha, static_idx, sv_off, st_off, width,
        collect_features, check, soft):
    """Scan-order Gibbs chain.

    Returns (parent-count table, per-layer feature sums, final parents, number of
    invalid intermediate states seen when ``check`` is set).  With ``soft`` the
    table accumulates each free node's full conditional at its update instead of
    the sampled parent (Rao-Blackwellized marginals).
    """
    np.random.seed(seed)
    parent, kids, nk, depth = _init_state(parent0)
    n1 = parent.shape[0]
    n_layers = static.shape[0]
    counts = np.zeros((n1, n1))
    sums = np.zeros((n_layers, width))
    sub = np.zeros(n1, dtype=np.int64)
    in_sub = np.zeros(n1, dtype=np.bool_)
    logits = np.empty(n1)
    bad = 0
    for sweep in range(burn_in + samples):
        for n in range(1, n1):
            if not free[n]:
                continue
            _detach(n, parent, kids, nk)
            nsub = _collect_subtree(n, kids, nk, sub, in_sub)
            _logits(n, parent, kids, nk, depth, sub, nsub, in_sub, static, w_sv, w_st,
                    vis, has_img, cos, has_word, sv_edges, st_edges, alpha, logits)
            mx = NEG_INF
            for m in range(n1):
                if logits[m] > mx:
                    mx = logits[m]
            total = 0.0
            for m in range(n1):
                logits[m] = np.exp(logits[m] - mx)
                total += logits[m]
            if soft and sweep >= burn_in:
                for m in range(n1):
                    counts[n, m] += logits[m] / total
            u = np.random.random() * total
            pick = -1
            for m in range(n1):
                if logits[m] > 0.0:
                    pick = m
                    u -= logits[m]
                    if u < 0.0:
                        break
            _attach(n, pick, parent, kids, nk, depth, sub, nsub)
            for j in range(nsub):
                in_sub[sub[j]] = False
            if check and not _is_tree(parent):
                bad += 1
        if sweep >= burn_in:
            for c in range(1, n1):
                if not (soft and free[c]):
                    counts[c, parent[c]] += 1.0
            if collect_features:
                _accumulate_features(parent, kids, nk, depth, static_idx, sv_off, st_off,
                                     vis, has_img, cos, has_word, sv_edges, st_edges, sums)
    return counts, sums, parent, bad
