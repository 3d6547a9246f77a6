"""The base surface: a genus-2 hyperbolic quotient given by an explicit
discrete Moebius group (the regular-octagon surface), with enumeration of
unoriented conjugacy classes (= free homotopy classes = closed geodesics)
and exact base lengths from traces.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NotHyperbolic, NodeBudgetExceeded
from . import hyperbolic as hyp

DET_TOL = 1e-12

# translation length of the octagon side pairings = systole of the surface
SYSTOLE = 2.0 * np.arccosh(1.0 + np.sqrt(2.0))
# inradius / circumradius (vertex distance) of the regular octagon domain:
# cosh(R_CIRC) = cosh(R_IN)^2 from the right triangle center-edge-vertex
R_IN = np.arccosh(1.0 + np.sqrt(2.0))
R_CIRC = np.arccosh(3.0 + 2.0 * np.sqrt(2.0))

# defining relator of the genus-2 group over the returned generators:
# [g1,g2][g3,g4] = 1; letters are +-1..+-4, negative = inverse
RELATOR = (1, 2, -1, -2, 3, 4, -3, -4)


# --- words over the generators -------------------------------------------------
#
# Public words are tuples of signed ints.  The conjugacy machinery runs on a
# bytes encoding (letter -> (abs-1)*2 + (sign<0), so inversion is byte^1 and
# bytes lexicographic order equals the canonical letter order
# 1 < -1 < 2 < -2 < 3 < -3 < 4 < -4).

def _enc(w):
    return bytes((abs(x) - 1) * 2 + (x < 0) for x in w)


def _dec(bw):
    return tuple(((b >> 1) + 1) * (1 if (b & 1) == 0 else -1) for b in bw)


def inverse_word(w):
    return tuple(-x for x in reversed(w))


def _binv(bw):
    return bytes(b ^ 1 for b in reversed(bw))


def free_reduce(w):
    out = []
    for x in w:
        if out and out[-1] == -x:
            out.pop()
        else:
            out.append(x)
    return tuple(out)


def _bfree_reduce(bw):
    out = bytearray()
    for b in bw:
        if out and out[-1] == b ^ 1:
            out.pop()
        else:
            out.append(b)
    return bytes(out)


def cyclic_reduce(w):
    return _dec(_bcyclic_reduce(_enc(free_reduce(w))))


def _bcyclic_reduce(bw):
    bw = _bfree_reduce(bw)
    while len(bw) >= 2 and bw[0] == bw[-1] ^ 1:
        bw = _bfree_reduce(bw[1:-1])
    return bw


def _shifts(bw):
    return [bw[i:] + bw[:i] for i in range(len(bw))] or [bw]


_BREL = _enc(RELATOR)
_BREL_SHIFTS = _shifts(_BREL) + _shifts(_binv(_BREL))
# 5-letter prefixes witness any match of length >= 5
_PAT5 = [(sh[:5], sh) for sh in _BREL_SHIFTS]
_PAT4 = [(sh[:4], sh) for sh in _BREL_SHIFTS]


def _bdehn_shorten_once(bw):
    """Replace one relator piece of length >= 5 by its shorter complement."""
    n = len(bw)
    if n < 5:
        return None
    ww = bw + bw
    for pat, sh in _PAT5:
        i = ww.find(pat)
        while 0 <= i < n:
            L = 5
            while L < min(8, n) and ww[i + L] == sh[L]:
                L += 1
            rot = ww[i : i + n]
            return _bcyclic_reduce(_binv(sh[L:]) + rot[L:])
        # no full-word wrap occurrences beyond n-1 matter (covered by shifts)
    return None


def _bdehn_reduce(bw):
    bw = _bcyclic_reduce(bw)
    while True:
        r = _bdehn_shorten_once(bw)
        if r is None:
            return bw
        bw = r


def dehn_reduce(w):
    """A cyclically reduced word of minimal length in the conjugacy class of w."""
    return _dec(_bdehn_reduce(_enc(free_reduce(w))))


def _min_rotation(bw):
    n = len(bw)
    if n == 0:
        return bw
    ww = bw + bw
    return min(ww[i : i + n] for i in range(n))


_PAT_SPLICE = {k: [(sh[:k], sh) for sh in _BREL_SHIFTS] for k in (2, 3, 4)}


def _bsplice_moves(bw, max_len):
    """Rewrites replacing a cyclic subword that is a relator piece of length
    k (k = 2, 3, 4) by the inverse complement; k = 4 preserves length, smaller
    k lengthens, capped at max_len.  Shortening pieces (k >= 5) are handled by
    Dehn reduction."""
    n = len(bw)
    out = []
    ww = bw + bw
    for k, pats in _PAT_SPLICE.items():
        if n < k or n + 8 - 2 * k > max_len:
            continue
        for pat, sh in pats:
            start = 0
            while True:
                i = ww.find(pat, start)
                if i < 0 or i >= n:
                    break
                rot = ww[i : i + n]
                out.append(_binv(sh[k:]) + rot[k:])
                start = i + 1
    return out


def _bcanonical_closure(bw, slack=4):
    """Minimal rotations of every minimal-length word conjugate to bw (or its
    inverse), as a set; the canonical word is the set minimum.

    Conjugate minimal words need not be connected by length-preserving moves
    alone (annular diagrams can pass through longer intermediates), so the
    search explores relator splices up to `slack` letters above minimal.
    """
    bw = _bdehn_reduce(bw)
    while True:
        min_len = len(bw)
        budget = min_len + slack
        seen = set()
        minimal = set()
        stack = []
        for s in (_min_rotation(bw), _min_rotation(_bdehn_reduce(_binv(bw)))):
            if s not in seen:
                seen.add(s)
                stack.append(s)
        restart = None
        while stack:
            u = stack.pop()
            if len(u) == min_len:
                minimal.add(u)
            for v in _bsplice_moves(u, budget):
                v = _bcyclic_reduce(v)
                if len(v) > min_len:
                    v = _bdehn_reduce(v)
                if len(v) < min_len:
                    restart = v
                    break
                if len(v) > budget:
                    continue
                m = _min_rotation(v)
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
            if restart is not None:
                break
        if restart is None:
            # include inverses of every minimal word found
            for u in list(minimal):
                minimal.add(_min_rotation(_bdehn_reduce(_binv(u))))
            return minimal
        bw = _bdehn_reduce(restart)


def canonical_class_word(w):
    """Canonical representative of the unoriented conjugacy class of w:
    lexicographic minimum over cyclic shifts, relator rewrites, and inversion."""
    w = free_reduce(w)
    if not cyclic_reduce(w):
        return ()
    return _dec(min(_bcanonical_closure(_enc(w))))


def word_period(w):
    """Smallest u with w = u^k as a cyclic word; returns (u, k)."""
    n = len(w)
    for plen in range(1, n + 1):
        if n % plen:
            continue
        if w[:plen] * (n // plen) == w:
            return w[:plen], n // plen
    return w, 1


# --- group elements -------------------------------------------------------------

class MoebiusElement:
    """2x2 real matrix with det 1 (identified with its negation) plus the word
    over the group generators that produced it."""

    __slots__ = ("mat", "word", "_so21")

    def __init__(self, mat, word=()):
        mat = np.asarray(mat, dtype=float)
        det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
        # the det estimate carries cancellation noise ~ |M|^2 eps, so for large
        # entries renormalizing by it would corrupt the matrix; scale the gate
        scale = max(1.0, float(np.abs(mat).max()) ** 2 * 10.0)
        if abs(det - 1.0) > DET_TOL * scale:
            mat = mat / np.sqrt(det)
        self.mat = mat
        self.word = tuple(word)
        self._so21 = None

    @property
    def trace(self):
        return self.mat[0, 0] + self.mat[1, 1]

    @property
    def trace_abs(self):
        return abs(self.trace)

    def __matmul__(self, other):
        return MoebiusElement(self.mat @ other.mat, free_reduce(self.word + other.word))

    def inverse(self):
        a, b, c, d = self.mat.ravel()
        return MoebiusElement(np.array([[d, -b], [-c, a]]), inverse_word(self.word))

    def conjugate_by(self, g):
        return MoebiusElement(
            g.mat @ self.mat @ g.inverse().mat,
            free_reduce(g.word + self.word + inverse_word(g.word)),
        )

    def is_identity(self, tol=1e-9):
        return min(np.abs(self.mat - np.eye(2)).max(), np.abs(self.mat + np.eye(2)).max()) < tol

    def so21(self):
        """Induced isometry of the hyperboloid chart (3x3 matrix)."""
        if self._so21 is None:
            self._so21 = _sl2_to_so21(self.mat)
        return self._so21

    def apply(self, X):
        """Act on hyperboloid points (rows)."""
        return np.asarray(X) @ self.so21().T

    def __repr__(self):
        return "MoebiusElement(word=%s, trace=%.6f)" % (format_word(self.word), self.trace)


# change of basis between (X1, X2, X0) and the symmetric-matrix coords (p, q, r)
_B_PQR = np.array([[1.0, 0.0, 1.0], [0.0, -1.0, 0.0], [-1.0, 0.0, 1.0]])
_B_XYZ = np.array([[0.5, 0.0, -0.5], [0.0, -1.0, 0.0], [0.5, 0.0, 0.5]])


def _sl2_to_so21(M):
    """SL(2,R) -> SO(2,1) for the disk-compatible hyperboloid chart.

    Uses the symmetric-matrix model S = [[p, q], [q, r]] with p = X0+X1,
    r = X0-X1, q = -X2: the action S -> M S M^T is linear in (p, q, r).
    """
    a, b, c, d = M.ravel()
    T = np.array(
        [
            [a * a, 2 * a * b, b * b],
            [a * c, a * d + b * c, b * d],
            [c * c, 2 * c * d, d * d],
        ]
    )
    return _B_XYZ @ T @ _B_PQR


def class_length(c):
    """Translation length 2*arccosh(|tr|/2) of a hyperbolic element."""
    tr = c.trace_abs if isinstance(c, MoebiusElement) else abs(np.trace(np.asarray(c)))
    if tr <= 2.0 + 1e-12:
        raise NotHyperbolic("element with |trace| = %.12g is not hyperbolic" % tr)
    return 2.0 * np.arccosh(tr / 2.0)


def axis_of(c):
    """Ideal endpoints of the invariant axis on the boundary circle of the
    disk model; returns (attracting, repelling) unit-modulus complex numbers."""
    if c.trace_abs <= 2.0 + 1e-12:
        raise NotHyperbolic("no axis: |trace| = %.12g" % c.trace_abs)
    L = c.so21()
    evals, evecs = np.linalg.eig(L)
    order = np.argsort(evals.real)
    out = []
    for col, mat in ((order[2], L), (order[0], np.linalg.inv(L))):
        n = evecs[:, col].real
        # power-refine the dominant null direction of `mat` to machine precision
        for _ in range(4):
            n = mat @ n
            n = n / np.abs(n).max()
        if n[2] < 0:
            n = -n
        out.append((n[0] + 1j * n[1]) / n[2])
    return out[0], out[1]


def axis_basis(c):
    """Hyperboloid parameterization of the axis of c: X(s) = P cosh s + V sinh s,
    unit speed, oriented so that c maps X(s) to X(s + class_length(c))."""
    z_att, z_rep = axis_of(c)
    n_p = np.array([z_att.real, z_att.imag, 1.0])
    n_m = np.array([z_rep.real, z_rep.imag, 1.0])
    q = -hyp.mink(n_p, n_m)
    P = (n_p + n_m) / np.sqrt(2.0 * q)
    V = (n_p - n_m) / np.sqrt(2.0 * q)
    # pin exactly to the hyperboloid/tangent against eigenvector roundoff
    P = P / np.sqrt(-hyp.mink(P, P))
    V = V + hyp.mink(V, P) * P
    V = V / np.sqrt(hyp.mink(V, V))
    ell = class_length(c)
    img = c.apply(P)
    scale = max(1.0, float(np.abs(img).max()))
    Xp = P * np.cosh(ell) + V * np.sinh(ell)
    if np.abs(img - Xp).max() > 1e-8 * scale:
        V = -V
        Xp = P * np.cosh(ell) + V * np.sinh(ell)
        if np.abs(img - Xp).max() > 1e-8 * scale:
            raise RuntimeError("axis orientation failed for %s" % format_word(c.word))
    return P, V


def axis_so21(c):
    """SO(2,1) matrix of c rebuilt as the exact hyperbolic translation along
    its axis frame.  Agrees with c.so21() up to roundoff but is consistent
    with axis_basis to machine precision, which keeps the twisted wrap of
    discrete curves built on the axis free of spurious kinks."""
    P, V = axis_basis(c)
    W = hyp.ETA @ np.cross(P, V)
    W = W / np.sqrt(hyp.mink(W, W))
    ell = class_length(c)
    B = np.stack([V, W, P], axis=1)
    Binv = np.diag([1.0, 1.0, -1.0]) @ B.T @ hyp.ETA
    T = np.array(
        [
            [np.cosh(ell), 0.0, np.sinh(ell)],
            [0.0, 1.0, 0.0],
            [np.sinh(ell), 0.0, np.cosh(ell)],
        ]
    )
    return B @ T @ Binv


# --- the octagon surface ----------------------------------------------------------

def _rotation(phi):
    return np.array([[np.cos(phi), np.sin(phi)], [-np.sin(phi), np.cos(phi)]])


def _inv_mat(M):
    return np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]])


def octagon_translations():
    """The four opposite-side-pairing translations of the regular octagon,
    axes through the origin at successive angles pi/4."""
    D = np.diag([np.exp(SYSTOLE / 2.0), np.exp(-SYSTOLE / 2.0)])
    return [_rotation(k * np.pi / 8.0) @ D @ _rotation(-k * np.pi / 8.0) for k in range(4)]


# octagon translations written over the returned (commutator-form) generators
_T_WORDS = {1: (1, -2, 3, 4), 2: (-2, 3, 4), 3: (3,), 4: (-4,)}


def bolza_group():
    """Generators of the genus-2 regular-octagon surface group.

    Returns four MoebiusElements g1..g4 satisfying [g1,g2][g3,g4] = +-Id;
    obtained from the opposite-side octagon translations by the standard
    handle-collecting change of generators.
    """
    t = octagon_translations()
    a, b, c, d = t[0], _inv_mat(t[1]), t[2], _inv_mat(t[3])
    return [
        MoebiusElement(a @ b, (1,)),
        MoebiusElement(c @ d @ b, (2,)),
        MoebiusElement(c, (3,)),
        MoebiusElement(d, (4,)),
    ]


def side_pairings():
    """The 8 octagon side pairings, words expressed over the bolza_group
    generators; this is the alphabet of the tessellation BFS."""
    t = octagon_translations()
    out = []
    for k, M in enumerate(t):
        out.append(MoebiusElement(M, _T_WORDS[k + 1]))
    for k, M in enumerate(t):
        out.append(MoebiusElement(_inv_mat(M), inverse_word(_T_WORDS[k + 1])))
    return out


def word_matrix(word, generators=None):
    """Product of generator matrices along a word."""
    if generators is None:
        generators = bolza_group()
    M = MoebiusElement(np.eye(2))
    for x in word:
        g = generators[abs(x) - 1]
        M = M @ (g if x > 0 else g.inverse())
    return M


class BolzaSurface:
    """Bundles the group data: generators, side pairings, translate shells and
    Dirichlet-domain point reduction.  Immutable after construction."""

    def __init__(self):
        self.generators = bolza_group()
        self.pairings = side_pairings()
        self._pairing_so21 = np.array([g.so21() for g in self.pairings])
        self._shells = {}

    @property
    def systole(self):
        return SYSTOLE

    @property
    def injectivity_radius(self):
        return SYSTOLE / 2.0

    def reduce_points(self, X):
        """Map hyperboloid points into the octagon Dirichlet domain by greedily
        applying side pairings that decrease the distance to the chart origin."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        X = X.copy()
        for _ in range(256):
            images = np.einsum("gij,nj->gni", self._pairing_so21, X)
            cand = images[:, :, 2]
            best = np.argmin(cand, axis=0)
            rows = np.arange(len(X))
            better = cand[best, rows] < X[:, 2] - 1e-15
            if not better.any():
                break
            X[better] = images[best[better], rows[better]]
        return X

    def reduce_points_with_matrices(self, X):
        """Vectorized Dirichlet reduction returning (X_reduced, M) where M are
        the accumulated SO(2,1) matrices with X_reduced = M @ X."""
        X = np.atleast_2d(np.asarray(X, dtype=float)).copy()
        M = np.broadcast_to(np.eye(3), (len(X), 3, 3)).copy()
        for _ in range(256):
            images = np.einsum("gij,nj->gni", self._pairing_so21, X)
            cand = images[:, :, 2]
            best = np.argmin(cand, axis=0)
            rows = np.arange(len(X))
            better = cand[best, rows] < X[:, 2] - 1e-15
            if not better.any():
                break
            sel = rows[better]
            X[sel] = images[best[sel], sel]
            M[sel] = np.einsum("nij,njk->nik", self._pairing_so21[best[sel]], M[sel])
        return X, M

    def reduce_point_with_element(self, X):
        """Dirichlet reduction of a single point, returning (X_reduced, h) with
        X_reduced = h(X) in the fundamental domain."""
        X = np.asarray(X, dtype=float)
        h = MoebiusElement(np.eye(2))
        for _ in range(256):
            best_gain = 0.0
            best = None
            for g in self.pairings:
                Y = g.apply(X)
                if Y[2] < X[2] - 1e-15 and X[2] - Y[2] > best_gain:
                    best_gain = X[2] - Y[2]
                    best = g
            if best is None:
                break
            X = best.apply(X)
            h = best @ h
        return X, h

    def normalized_conjugate(self, element):
        """Conjugate h g h^-1 whose axis passes through the fundamental domain
        (bounded lift coordinates for curves built on it)."""
        P, _ = axis_basis(element)
        _, h = self.reduce_point_with_element(P)
        return element.conjugate_by(h)

    def translates(self, radius):
        """All group elements g with d(o, g o) <= radius, as MoebiusElements."""
        key = round(float(radius), 9)
        if key not in self._shells:
            mats, words = _ball_elements(self.pairings, key)
            self._shells[key] = [MoebiusElement(m, free_reduce(w)) for m, w in zip(mats, words)]
        return self._shells[key]


# --- ball enumeration --------------------------------------------------------------

_KEY_TOL = 1e-5
_KEY_DTYPE = np.dtype([("a", "<i8"), ("b", "<i8")])


def _quant_keys(mats):
    """Two dedup keys per matrix (quantization offsets 0 and 1/2), each with a
    deterministic sign choice made on the quantized integers; a bin-boundary
    wobble can perturb at most one of the two offsets."""
    flat = mats.reshape(-1, 4)
    out = []
    for off in (0.0, 0.5):
        q = np.round(flat / _KEY_TOL + off).astype(np.int64)
        qn = np.round(-flat / _KEY_TOL + off).astype(np.int64)
        # canonical sign: first nonzero entry positive (integer-level decision)
        first = np.argmax(q != 0, axis=1)
        neg = q[np.arange(len(q)), first] < 0
        qq = np.where(neg[:, None], qn, q)
        packed = np.zeros(len(qq), dtype=_KEY_DTYPE)
        packed["a"] = (qq[:, 0] << 32) ^ (qq[:, 1] & 0xFFFFFFFF)
        packed["b"] = (qq[:, 2] << 32) ^ (qq[:, 3] & 0xFFFFFFFF)
        out.append(packed)
    return out


class _VisitedSet:
    """Sorted-array membership structure over packed keys."""

    def __init__(self):
        self._sorted = np.zeros(0, dtype=_KEY_DTYPE)

    def contains(self, keys):
        if len(self._sorted) == 0:
            return np.zeros(len(keys), dtype=bool)
        idx = np.searchsorted(self._sorted, keys)
        idx = np.minimum(idx, len(self._sorted) - 1)
        return self._sorted[idx] == keys

    def add(self, keys):
        self._sorted = np.sort(np.concatenate([self._sorted, keys]))


def _ball_elements(pairings, radius, node_budget=None, with_arrays=False, chunk=400_000):
    """BFS over the side-pairing tessellation collecting all group elements
    with d(o, g o) <= radius.

    Returns (mats, words) lists, or with_arrays=True a dict of flat numpy
    arrays {mats, disp, parent, letter} for bulk post-processing.
    """
    P = np.array([g.mat for g in pairings])
    n_gen = len(pairings)
    blocks = [np.eye(2)[None]]
    disps = [np.zeros(1)]
    parents = [np.array([-1], dtype=np.int64)]
    letters = [np.array([-1], dtype=np.int8)]
    visited = _VisitedSet()
    k0, k1 = _quant_keys(np.eye(2)[None])
    visited.add(np.concatenate([k0, k1]))
    total = 1
    frontier = np.eye(2)[None]
    frontier_idx = np.zeros(1, dtype=np.int64)
    while len(frontier):
        new_mats = []
        new_disp = []
        new_parent = []
        new_letter = []
        layer_seen = _VisitedSet()
        for lo in range(0, len(frontier), chunk):
            F = frontier[lo : lo + chunk]
            Fi = frontier_idx[lo : lo + chunk]
            for gi in range(n_gen):
                prod = F @ P[gi]
                det = prod[:, 0, 0] * prod[:, 1, 1] - prod[:, 0, 1] * prod[:, 1, 0]
                prod /= np.sqrt(det)[:, None, None]
                ssq = (prod**2).sum(axis=(1, 2)) / 2.0
                disp = np.arccosh(np.maximum(ssq, 1.0))
                ok = disp <= radius
                if not ok.any():
                    continue
                prod, disp, pidx = prod[ok], disp[ok], Fi[ok]
                k0, k1 = _quant_keys(prod)
                dup = visited.contains(k0) | visited.contains(k1)
                dup |= layer_seen.contains(k0) | layer_seen.contains(k1)
                # also dedup within this candidate batch
                first0 = np.zeros(len(k0), dtype=bool)
                order = np.argsort(k0)
                srt = k0[order]
                uniq = np.ones(len(srt), dtype=bool)
                uniq[1:] = srt[1:] != srt[:-1]
                first0[order] = uniq
                keep = (~dup) & first0
                if not keep.any():
                    continue
                layer_seen.add(np.concatenate([k0[keep], k1[keep]]))
                new_mats.append(prod[keep])
                new_disp.append(disp[keep])
                new_parent.append(pidx[keep])
                new_letter.append(np.full(int(keep.sum()), gi, dtype=np.int8))
        if not new_mats:
            break
        cm = np.concatenate(new_mats)
        cd = np.concatenate(new_disp)
        cp = np.concatenate(new_parent)
        cl = np.concatenate(new_letter)
        visited.add(np.concatenate(_quant_keys(cm)))
        blocks.append(cm)
        disps.append(cd)
        parents.append(cp)
        letters.append(cl)
        frontier_idx = np.arange(total, total + len(cm), dtype=np.int64)
        total += len(cm)
        if node_budget is not None and total > node_budget:
            raise NodeBudgetExceeded("ball enumeration exceeded %d nodes" % node_budget)
        frontier = cm
    mats = np.concatenate(blocks)
    disp = np.concatenate(disps)
    parent = np.concatenate(parents)
    letter = np.concatenate(letters)
    if with_arrays:
        return {"mats": mats, "disp": disp, "parent": parent, "letter": letter}
    pair_words = [g.word for g in pairings]
    words = _recover_words(parent, letter, pair_words, np.arange(len(mats)))
    return list(mats), words


def _recover_words(parent, letter, pair_words, indices):
    out = []
    for i in indices:
        w = []
        j = int(i)
        while parent[j] >= 0:
            w.append(pair_words[letter[j]])
            j = parent[j]
        word = []
        for piece in reversed(w):
            word.extend(piece)
        out.append(free_reduce(tuple(word)))
    return out


# --- conjugacy classes and the base spectrum -----------------------------------------

@dataclass(frozen=True)
class ConjugacyClass:
    """Unoriented free homotopy class of a closed geodesic on the base surface."""

    representative: MoebiusElement
    trace_abs: float
    base_length: float
    primitive: bool
    root_word: tuple = ()  # canonical word of the primitive root (iterates only)
    power: int = 1

    @property
    def word(self):
        return self.representative.word

    @property
    def support_word(self):
        """Canonical word of the underlying primitive geodesic (point set)."""
        return self.root_word if not self.primitive else self.word

    def __repr__(self):
        extra = "" if self.primitive else ", =%s^%d" % (format_word(self.root_word), self.power)
        return "ConjugacyClass(%s, length=%.6f%s)" % (format_word(self.word), self.base_length, extra)


@dataclass
class BaseSpectrum:
    cutoff_T: float
    classes: list
    counting_ratio: float = field(default=0.0)

    def __post_init__(self):
        if not self.counting_ratio:
            self.counting_ratio = counting_ratio(self)

    def primitive_classes(self):
        return [c for c in self.classes if c.primitive]

    def by_word(self):
        return {c.word: c for c in self.classes}


def counting_ratio(spectrum):
    """#classes * 2T * exp(-T): tends to 1 as the cutoff grows."""
    n = len(spectrum.classes)
    if n == 0:
        return 0.0
    T = spectrum.cutoff_T
    return float(n * 2.0 * T * np.exp(-T))


def capture_radius(cutoff_T):
    """Displacement radius guaranteeing a representative per class: an axis
    through the fundamental domain gives d(o, g o) <= 2 asinh(cosh(R) sinh(T/2))."""
    return 2.0 * np.arcsinh(np.cosh(R_CIRC) * np.sinh(cutoff_T / 2.0))


def enumerate_classes(generators, cutoff_T, node_budget=40_000_000, surface=None):
    """Enumerate all unoriented conjugacy classes with base length <= cutoff_T.

    Ball BFS over the octagon tessellation with displacement pruning; per-class
    capture by the axis-through-domain displacement bound; exact dedup by the
    canonical conjugacy word.
    """
    if cutoff_T <= 0:
        raise ValueError("cutoff_T must be positive")
    if surface is None:
        surface = BolzaSurface()
    radius = capture_radius(cutoff_T) + R_CIRC + 0.3
    data = _ball_elements(surface.pairings, radius, node_budget=node_budget, with_arrays=True)
    mats, disp = data["mats"], data["disp"]

    tr = np.abs(mats[:, 0, 0] + mats[:, 1, 1])
    hyperbolic = tr > 2.0 + 1e-12
    ell = np.zeros(len(mats))
    ell[hyperbolic] = 2.0 * np.arccosh(tr[hyperbolic] / 2.0)
    # keep one displacement-minimal band per class: every class has a
    # representative within its own capture radius
    cap = capture_radius(np.maximum(ell, 1e-9)) + 1e-6
    sel = hyperbolic & (ell <= cutoff_T) & (disp <= cap)
    idx = np.nonzero(sel)[0]

    pair_words = [g.word for g in surface.pairings]
    words = _recover_words(data["parent"], data["letter"], pair_words, idx)

    # group by quantized length, then dedup exactly by conjugacy closure
    buckets = {}
    for i, w in zip(idx, words):
        buckets.setdefault(round(ell[i], 9), []).append((float(tr[i]), float(ell[i]), w))

    classes = []
    for _, items in sorted(buckets.items()):
        closures = []  # list of (closure_set, canonical_bytes, trace, length)
        prekeys = {}
        for trace, length, w in items:
            bw = _bdehn_reduce(_enc(w))
            pre = min(_min_rotation(bw), _min_rotation(_bdehn_reduce(_binv(bw))))
            if pre in prekeys:
                continue
            hit = None
            for cs, _cb, _t, _l in closures:
                if pre in cs:
                    hit = cs
                    break
            prekeys[pre] = True
            if hit is not None:
                continue
            cs = _bcanonical_closure(bw)
            closures.append((cs, min(cs), trace, length))
        for _cs, cb, trace, length in closures:
            classes.append((cb, trace, length))

    out = []
    for cb, trace, length in classes:
        cw = _dec(cb)
        root, k = word_period(cw)
        primitive = k == 1
        root_word = canonical_class_word(root) if not primitive else ()
        rep = word_matrix(cw, surface.generators)
        rep = MoebiusElement(rep.mat, cw)
        out.append(
            ConjugacyClass(
                representative=rep,
                trace_abs=float(rep.trace_abs),
                base_length=float(class_length(rep)),
                primitive=primitive,
                root_word=root_word,
                power=k,
            )
        )
    out.sort(key=lambda c: (c.base_length, _enc(c.word)))
    return BaseSpectrum(cutoff_T=float(cutoff_T), classes=out)


# --- export ---------------------------------------------------------------------------

_LETTERS = "abcd"


def format_word(w):
    """Compact word string: generators a..d, inverses in upper case."""
    if not w:
        return "e"
    return "".join(_LETTERS[abs(x) - 1] if x > 0 else _LETTERS[abs(x) - 1].upper() for x in w)


def parse_word(s):
    if s == "e" or s == "":
        return ()
    out = []
    for ch in s:
        idx = _LETTERS.index(ch.lower()) + 1
        out.append(idx if ch.islower() else -idx)
    return tuple(out)


def spectrum_to_csv(spectrum, path):
    """Deterministic CSV export: canonical_word, trace_abs, base_length, primitive."""
    lines = ["canonical_word,trace_abs,base_length,primitive"]
    for c in spectrum.classes:
        lines.append(
            "%s,%r,%r,%d" % (format_word(c.word), c.trace_abs, c.base_length, int(c.primitive))
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return path
