"""Pure-Python lattice kernels.

Reference implementation of the hot loops in ``_dp.pyx``. Both modules
expose the same functions with identical semantics:

``E`` is a ``(3, 3, m+1, n+1)`` array of transition scores, ``E[u, v, x, y]``
being the score of entering vertex ``(x, y, v)`` from a vertex in state
``u``. Steps leaving the virtual origin score 0 whatever ``E`` holds.
Tables returned are ``(m+1, n+1, 3)`` arrays indexed ``[x, y, state]``.
"""

import math

import numpy as np

NEG_INF = -math.inf
_STEP = ((1, 1), (1, 0), (0, 1))


def _lse3(a, b, c):
    mx = a
    if b > mx:
        mx = b
    if c > mx:
        mx = c
    if mx == NEG_INF:
        return NEG_INF
    return mx + math.log(math.exp(a - mx) + math.exp(b - mx) + math.exp(c - mx))


def forward(E):
    _, _, m1, n1 = E.shape
    e = E.tolist()
    F = [[[NEG_INF] * 3 for _ in range(n1)] for _ in range(m1)]
    for x in range(m1):
        for y in range(n1):
            if x == 0 and y == 0:
                continue
            cell = F[x][y]
            for v in range(3):
                dx, dy = _STEP[v]
                px, py = x - dx, y - dy
                if px < 0 or py < 0:
                    continue
                if px == 0 and py == 0:
                    cell[v] = 0.0
                    continue
                p = F[px][py]
                cell[v] = _lse3(
                    p[0] + e[0][v][x][y], p[1] + e[1][v][x][y], p[2] + e[2][v][x][y]
                )
    return np.array(F, dtype=float)


def backward(E):
    _, _, m1, n1 = E.shape
    m, n = m1 - 1, n1 - 1
    e = E.tolist()
    B = [[[NEG_INF] * 3 for _ in range(n1)] for _ in range(m1)]
    B[m][n] = [0.0, 0.0, 0.0]
    for x in range(m, -1, -1):
        for y in range(n, -1, -1):
            if x == m and y == n:
                continue
            cell = B[x][y]
            for u in range(3):
                terms = [NEG_INF, NEG_INF, NEG_INF]
                for v in range(3):
                    dx, dy = _STEP[v]
                    sx, sy = x + dx, y + dy
                    if sx > m or sy > n:
                        continue
                    terms[v] = e[u][v][sx][sy] + B[sx][sy][v]
                cell[u] = _lse3(terms[0], terms[1], terms[2])
    return np.array(B, dtype=float)


def expect_forward(E, F, g):
    """Forward pass of the expectation semiring.

    Returns ``GF[x, y, v]``, the expected value of the additive vertex
    functional ``g`` over prefixes ending at ``(x, y, v)``, under the
    prefix distribution implied by ``F``.
    """
    _, _, m1, n1 = E.shape
    e = E.tolist()
    f = F.tolist()
    gg = g.tolist()
    G = [[[0.0] * 3 for _ in range(n1)] for _ in range(m1)]
    for x in range(m1):
        for y in range(n1):
            if x == 0 and y == 0:
                continue
            for v in range(3):
                fv = f[x][y][v]
                if fv == NEG_INF:
                    continue
                dx, dy = _STEP[v]
                px, py = x - dx, y - dy
                acc = gg[x][y][v]
                if not (px == 0 and py == 0):
                    fp = f[px][py]
                    gp = G[px][py]
                    for u in range(3):
                        if fp[u] == NEG_INF:
                            continue
                        acc += math.exp(fp[u] + e[u][v][x][y] - fv) * gp[u]
                G[x][y][v] = acc
    return np.array(G, dtype=float)


def expect_backward(E, B, g):
    """Backward pass of the expectation semiring.

    Returns ``GB[x, y, u]``, the expected value of ``g`` summed over the
    vertices strictly after ``(x, y, u)`` on suffixes leaving it.
    """
    _, _, m1, n1 = E.shape
    m, n = m1 - 1, n1 - 1
    e = E.tolist()
    b = B.tolist()
    gg = g.tolist()
    G = [[[0.0] * 3 for _ in range(n1)] for _ in range(m1)]
    for x in range(m, -1, -1):
        for y in range(n, -1, -1):
            if x == m and y == n:
                continue
            for u in range(3):
                bu = b[x][y][u]
                if bu == NEG_INF:
                    continue
                acc = 0.0
                for v in range(3):
                    dx, dy = _STEP[v]
                    sx, sy = x + dx, y + dy
                    if sx > m or sy > n:
                        continue
                    w = math.exp(e[u][v][sx][sy] + b[sx][sy][v] - bu)
                    acc += w * (gg[sx][sy][v] + G[sx][sy][v])
                G[x][y][u] = acc
    return np.array(G, dtype=float)


def viterbi(E):
    """Best path under transition scores.

    Ties prefer the lower state code (M, then I_T, then I_S) both for the
    incoming state at each vertex and for the final state.

    Returns
    -------
    states : ndarray of int
        State sequence of the best path.
    score : float
        Its total score.
    """
    _, _, m1, n1 = E.shape
    m, n = m1 - 1, n1 - 1
    e = E.tolist()
    V = [[[NEG_INF] * 3 for _ in range(n1)] for _ in range(m1)]
    P = [[[-1] * 3 for _ in range(n1)] for _ in range(m1)]
    for x in range(m1):
        for y in range(n1):
            if x == 0 and y == 0:
                continue
            for v in range(3):
                dx, dy = _STEP[v]
                px, py = x - dx, y - dy
                if px < 0 or py < 0:
                    continue
                if px == 0 and py == 0:
                    V[x][y][v] = 0.0
                    continue
                best = NEG_INF
                arg = -1
                pv = V[px][py]
                for u in range(3):
                    if pv[u] == NEG_INF:
                        continue
                    s = pv[u] + e[u][v][x][y]
                    if arg < 0 or s > best:
                        best = s
                        arg = u
                V[x][y][v] = best
                P[x][y][v] = arg
    end = V[m][n]
    v = -1
    best = NEG_INF
    for s in range(3):
        if end[s] == NEG_INF:
            continue
        if v < 0 or end[s] > best:
            best = end[s]
            v = s
    states = []
    x, y = m, n
    while not (x == 0 and y == 0):
        states.append(v)
        u = P[x][y][v]
        dx, dy = _STEP[v]
        x, y = x - dx, y - dy
        v = u
    states.reverse()
    return np.array(states, dtype=np.int64), best
