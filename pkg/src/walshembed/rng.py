"""Counter-based random streams (Philox4x32-10) usable inside numba kernels.

Every draw is a pure function of ``(seed, path, step, tag)``, so a path
produces the same numbers whether it is simulated alone, in a batch, or on
another worker, and kernels can skip draws they do not need.
"""

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

TAG_NORMAL = 0
TAG_AUX = 1
TAG_INIT = 2
TAG_ZIG = 3

_INV32 = 2.3283064365386963e-10  # 2**-32


@nb.njit(inline="always", cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on a 128-bit counter under a 64-bit key."""
    for _ in range(10):
        p0 = np.uint64(c0) * _M0
        p1 = np.uint64(c2) * _M1
        hi0 = np.uint32(p0 >> _S32)
        lo0 = np.uint32(p0 & _LO)
        hi1 = np.uint32(p1 >> _S32)
        lo1 = np.uint32(p1 & _LO)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = np.uint32(k0 + _W0)
        k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


@nb.njit(inline="always", cache=True)
def draw(k0, k1, path, step, tag):
    """Four 32-bit words for (path, step, tag)."""
    p = np.uint64(path)
    return philox4x32(
        np.uint32(step),
        np.uint32(tag),
        np.uint32(p & _LO),
        np.uint32(p >> _S32),
        k0,
        k1,
    )


@nb.njit(inline="always", cache=True)
def open_unit(word):
    """Uniform on (0, 1) from one 32-bit word."""
    return (np.float64(word) + 0.5) * _INV32


def _ziggurat_tables():
    # 128-layer ziggurat for the standard normal (Marsaglia-Tsang constants)
    dn = _R_TAIL
    tn = dn
    vn = 9.91256303526217e-3
    m1 = 2147483648.0
    kn = np.zeros(128, np.int64)
    wn = np.zeros(128)
    fn = np.zeros(128)
    q = vn / math.exp(-0.5 * dn * dn)
    kn[0] = int((dn / q) * m1)
    wn[0] = q / m1
    wn[127] = dn / m1
    fn[0] = 1.0
    fn[127] = math.exp(-0.5 * dn * dn)
    for i in range(126, 0, -1):
        dn = math.sqrt(-2.0 * math.log(vn / dn + math.exp(-0.5 * dn * dn)))
        kn[i + 1] = int((dn / tn) * m1)
        tn = dn
        fn[i] = math.exp(-0.5 * dn * dn)
        wn[i] = dn / m1
    return kn, wn, fn


_R_TAIL = 3.442619855899
_ZK, _ZW, _ZF = _ziggurat_tables()


@nb.njit(cache=True)
def _zig_fallback(hz, iz, k0, k1, path, index):
    # rare path (about 1.2% of draws); extra uniforms come from TAG_ZIG
    sub = 1
    while True:
        x = hz * _ZW[iz]
        a, b, c, _ = draw(k0, k1, path, index, TAG_ZIG | (sub << 8))
        sub += 1
        if iz == 0:
            xx = -math.log(open_unit(a)) / _R_TAIL
            yy = -math.log(open_unit(b))
            if yy + yy >= xx * xx:
                return _R_TAIL + xx if hz > 0 else -_R_TAIL - xx
            continue
        if _ZF[iz] + open_unit(a) * (_ZF[iz - 1] - _ZF[iz]) < math.exp(-0.5 * x * x):
            return x
        hz = np.int64(np.int32(b))
        iz = np.int64(c & np.uint32(127))
        if abs(hz) < _ZK[iz]:
            return hz * _ZW[iz]


@nb.njit(inline="always", cache=True)
def _zig(value_word, index_word, k0, k1, path, index):
    hz = np.int64(np.int32(value_word))
    iz = np.int64(index_word & np.uint32(127))
    if abs(hz) < _ZK[iz]:
        return hz * _ZW[iz]
    return _zig_fallback(hz, iz, k0, k1, path, index)


@nb.njit(inline="always", cache=True)
def normal_triple(k0, k1, path, block):
    """Normals 3*block .. 3*block + 2 of a path (ziggurat).

    Three words carry the values; the fourth supplies the three layer indices.
    """
    a, b, c, d = draw(k0, k1, path, block, TAG_NORMAL)
    n = 3 * block
    z0 = _zig(a, d, k0, k1, path, n)
    z1 = _zig(b, d >> np.uint32(8), k0, k1, path, n + 1)
    z2 = _zig(c, d >> np.uint32(16), k0, k1, path, n + 2)
    return z0, z1, z2


def split_seed(seed: int) -> tuple[np.uint32, np.uint32]:
    """64-bit seed -> Philox key words."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.uint32(seed & 0xFFFFFFFF), np.uint32(seed >> 32)


@nb.njit(cache=True)
def _uniform_block(k0, k1, path, n, tag):
    out = np.empty(n)
    for i in range(n):
        a, _, _, _ = draw(k0, k1, path, i, tag)
        out[i] = open_unit(a)
    return out


@nb.njit(cache=True)
def _normal_block(k0, k1, path, n):
    out = np.empty(3 * ((n + 2) // 3))
    for j in range((n + 2) // 3):
        out[3 * j], out[3 * j + 1], out[3 * j + 2] = normal_triple(k0, k1, path, j)
    return out[:n]


def uniforms(seed: int, path: int, n: int, tag: int = TAG_AUX) -> np.ndarray:
    k0, k1 = split_seed(seed)
    return _uniform_block(k0, k1, np.uint64(path), n, tag)


def normals(seed: int, path: int, n: int) -> np.ndarray:
    """The standard normals a path of ``n`` steps consumes, in order."""
    k0, k1 = split_seed(seed)
    return _normal_block(k0, k1, np.uint64(path), n)


@nb.njit(cache=True)
def _raw(c0, c1, c2, c3, k0, k1):
    return philox4x32(c0, c1, c2, c3, k0, k1)


def philox_words(counter, key) -> tuple[int, int, int, int]:
    """Plain Philox4x32-10 on explicit counter/key words (for known-answer checks)."""
    c = [np.uint32(x) for x in counter]
    k = [np.uint32(x) for x in key]
    return tuple(int(x) for x in _raw(c[0], c[1], c[2], c[3], k[0], k[1]))
