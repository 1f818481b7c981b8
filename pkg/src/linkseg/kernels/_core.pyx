# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Direct-summation convolution kernels.

Plain quadruple loops over (batch, channel, kernel offset) with the valid
output range hoisted out of the inner loop, so no branch runs per element.
Serves as the production path and as the arithmetic reference the numpy
backend is checked against. Accumulation happens in double regardless of
the input precision.
"""

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t p, Py_ssize_t off, Py_ssize_t s) nogil:
    # smallest i with i*s + off - p >= 0
    if p > off:
        return (p - off + s - 1) // s
    return 0


cdef inline Py_ssize_t _hi(Py_ssize_t limit, Py_ssize_t p, Py_ssize_t off,
                           Py_ssize_t s, Py_ssize_t cap) nogil:
    # one past the largest i with i*s + off - p <= limit - 1
    cdef Py_ssize_t t = limit - 1 - off + p
    if t < 0:
        return 0
    t = t // s + 1
    if t > cap:
        return cap
    return t


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw,
                   real[:, :, :, ::1] y):
    cdef Py_ssize_t n_, c, o, u, v, i, j, ih, iw, i0, i1, j0, j1
    cdef Py_ssize_t nb = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = y.shape[2], wo = y.shape[3]
    cdef real wv
    with nogil:
        for n_ in range(nb):
            for o in range(cout):
                for c in range(cin):
                    for u in range(kh):
                        i0 = _lo(ph, u, sh)
                        i1 = _hi(h, ph, u, sh, ho)
                        for v in range(kw):
                            j0 = _lo(pw, v, sw)
                            j1 = _hi(wd, pw, v, sw, wo)
                            wv = w[o, c, u, v]
                            for i in range(i0, i1):
                                ih = i * sh + u - ph
                                iw = j0 * sw + v - pw
                                for j in range(j0, j1):
                                    y[n_, o, i, j] += wv * x[n_, c, ih, iw]
                                    iw += sw


def conv2d_backward_w(real[:, :, :, ::1] x, real[:, :, :, ::1] grad_y,
                      Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw,
                      real[:, :, :, ::1] grad_w):
    cdef Py_ssize_t n_, c, o, u, v, i, j, ih, iw, i0, i1, j0, j1
    cdef Py_ssize_t nb = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = grad_w.shape[0], kh = grad_w.shape[2], kw = grad_w.shape[3]
    cdef Py_ssize_t ho = grad_y.shape[2], wo = grad_y.shape[3]
    cdef double acc
    with nogil:
        for o in range(cout):
            for c in range(cin):
                for u in range(kh):
                    i0 = _lo(ph, u, sh)
                    i1 = _hi(h, ph, u, sh, ho)
                    for v in range(kw):
                        j0 = _lo(pw, v, sw)
                        j1 = _hi(wd, pw, v, sw, wo)
                        acc = 0.0
                        for n_ in range(nb):
                            for i in range(i0, i1):
                                ih = i * sh + u - ph
                                iw = j0 * sw + v - pw
                                for j in range(j0, j1):
                                    acc += grad_y[n_, o, i, j] * x[n_, c, ih, iw]
                                    iw += sw
                        grad_w[o, c, u, v] = <real> acc


def conv2d_backward_x(real[:, :, :, ::1] w, real[:, :, :, ::1] grad_y,
                      Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw,
                      real[:, :, :, ::1] grad_x):
    cdef Py_ssize_t n_, c, o, u, v, i, j, ih, iw, i0, i1, j0, j1
    cdef Py_ssize_t nb = grad_x.shape[0], cin = grad_x.shape[1]
    cdef Py_ssize_t h = grad_x.shape[2], wd = grad_x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = grad_y.shape[2], wo = grad_y.shape[3]
    cdef real wv
    with nogil:
        for n_ in range(nb):
            for o in range(cout):
                for c in range(cin):
                    for u in range(kh):
                        i0 = _lo(ph, u, sh)
                        i1 = _hi(h, ph, u, sh, ho)
                        for v in range(kw):
                            j0 = _lo(pw, v, sw)
                            j1 = _hi(wd, pw, v, sw, wo)
                            wv = w[o, c, u, v]
                            for i in range(i0, i1):
                                ih = i * sh + u - ph
                                iw = j0 * sw + v - pw
                                for j in range(j0, j1):
                                    grad_x[n_, c, ih, iw] += wv * grad_y[n_, o, i, j]
                                    iw += sw


def tconv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                    Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw,
                    real[:, :, :, ::1] y):
    cdef Py_ssize_t n_, c, o, u, v, i, j, ih, iw, i0, i1, j0, j1
    cdef Py_ssize_t nb = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = y.shape[2], wo = y.shape[3]
    cdef real wv
    with nogil:
        for n_ in range(nb):
            for c in range(cin):
                for o in range(cout):
                    for u in range(kh):
                        i0 = _lo(ph, u, sh)
                        i1 = _hi(ho, ph, u, sh, h)
                        for v in range(kw):
                            j0 = _lo(pw, v, sw)
                            j1 = _hi(wo, pw, v, sw, wd)
                            wv = w[c, o, u, v]
                            for i in range(i0, i1):
                                ih = i * sh + u - ph
                                iw = j0 * sw + v - pw
                                for j in range(j0, j1):
                                    y[n_, o, ih, iw] += wv * x[n_, c, i, j]
                                    iw += sw


def tconv2d_backward_x(real[:, :, :, ::1] w, real[:, :, :, ::1] grad_y,
                       Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw,
                       real[:, :, :, ::1] grad_x):
    cdef Py_ssize_t n_, c, o, u, v, i, j, ih, iw, i0, i1, j0, j1
    cdef Py_ssize_t nb = grad_x.shape[0], cin = grad_x.shape[1]
    cdef Py_ssize_t h = grad_x.shape[2], wd = grad_x.shape[3]
    cdef Py_ssize_t cout = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = grad_y.shape[2], wo = grad_y.shape[3]
    cdef real wv
    with nogil:
        for n_ in range(nb):
            for c in range(cin):
                for o in range(cout):
                    for u in range(kh):
                        i0 = _lo(ph, u, sh)
                        i1 = _hi(ho, ph, u, sh, h)
                        for v in range(kw):
                            j0 = _lo(pw, v, sw)
                            j1 = _hi(wo, pw, v, sw, wd)
                            wv = w[c, o, u, v]
                            for i in range(i0, i1):
                                ih = i * sh + u - ph
                                iw = j0 * sw + v - pw
                                for j in range(j0, j1):
                                    grad_x[n_, c, i, j] += wv * grad_y[n_, o, ih, iw]
                                    iw += sw


def tconv2d_backward_w(real[:, :, :, ::1] x, real[:, :, :, ::1] grad_y,
                       Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw,
                       real[:, :, :, ::1] grad_w):
    cdef Py_ssize_t n_, c, o, u, v, i, j, ih, iw, i0, i1, j0, j1
    cdef Py_ssize_t nb = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = grad_w.shape[1], kh = grad_w.shape[2], kw = grad_w.shape[3]
    cdef Py_ssize_t ho = grad_y.shape[2], wo = grad_y.shape[3]
    cdef double acc
    with nogil:
        for c in range(cin):
            for o in range(cout):
                for u in range(kh):
                    i0 = _lo(ph, u, sh)
                    i1 = _hi(ho, ph, u, sh, h)
                    for v in range(kw):
                        j0 = _lo(pw, v, sw)
                        j1 = _hi(wo, pw, v, sw, wd)
                        acc = 0.0
                        for n_ in range(nb):
                            for i in range(i0, i1):
                                ih = i * sh + u - ph
                                iw = j0 * sw + v - pw
                                for j in range(j0, j1):
                                    acc += x[n_, c, i, j] * grad_y[n_, o, ih, iw]
                                    iw += sw
                        grad_w[c, o, u, v] = <real> acc
