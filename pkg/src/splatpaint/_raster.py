"""Compiled per-pixel compositing kernels for the splat rasterizer.

Front-to-back alpha compositing over globally depth-sorted footprints. The
kernels are deliberately single-threaded so renders are bit-reproducible;
contributions with a footprint weight below 1/255 are skipped and compositing
stops per pixel once transmittance drops below 1e-4. The backward kernel
replays the forward tape so the exact same contribution set is differentiated.
"""

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


G_MIN = 1.0 / 255.0
QF_MAX = 2.0 * math.log(255.0)  # footprint weight equals G_MIN at this quadratic form
T_MIN = 1e-4
COV_DILATION = 0.3  # screen-space variance floor, px^2


@njit(cache=True)
def composite_forward(
    order,
    mean2d,
    ainv,
    bbox,
    alpha,
    rgb,
    zdepth,
    height,
    width,
    tape_g,
    tape_t,
    tape_off,
    keep_tape,
):
    color = np.zeros((height, width, 3))
    opac = np.zeros((height, width))
    dsum = np.zeros((height, width))
    trans = np.ones((height, width))
    for si in range(order.shape[0]):
        i = order[si]
        x0 = bbox[i, 0]
        x1 = bbox[i, 1]
        y0 = bbox[i, 2]
        y1 = bbox[i, 3]
        if x1 < x0 or y1 < y0:
            continue
        a = ainv[i, 0]
        b = ainv[i, 1]
        c = ainv[i, 2]
        mx = mean2d[i, 0]
        my = mean2d[i, 1]
        al = alpha[i]
        z = zdepth[i]
        r0 = rgb[i, 0]
        r1 = rgb[i, 1]
        r2 = rgb[i, 2]
        off = tape_off[i]
        bw = x1 - x0 + 1
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                t = trans[y, x]
                dx = (x + 0.5) - mx
                dy = (y + 0.5) - my
                qf = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                g = 0.0
                if qf < QF_MAX:
                    g = math.exp(-0.5 * qf)
                if keep_tape:
                    k = off + (y - y0) * bw + (x - x0)
                    tape_g[k] = g
                    tape_t[k] = t
                if g >= G_MIN and t >= T_MIN:
                    sig = al * g
                    w = sig * t
                    color[y, x, 0] += w * r0
                    color[y, x, 1] += w * r1
                    color[y, x, 2] += w * r2
                    opac[y, x] += w
                    dsum[y, x] += w * z
                    trans[y, x] = t * (1.0 - sig)
    return color, opac, dsum, trans


@njit(cache=True)
def composite_backward(
    order,
    mean2d,
    ainv,
    bbox,
    alpha,
    rgb,
    tape_g,
    tape_t,
    tape_off,
    d_color,
    d_opac,
    g_mean2d,
    g_ainv,
    g_alpha,
    g_rgb,
):
    height, width = d_opac.shape
    # suffix sums over contributions strictly behind the current one
    suf_c = np.zeros((height, width, 3))
    suf_o = np.zeros((height, width))
    for si in range(order.shape[0] - 1, -1, -1):
        i = order[si]
        x0 = bbox[i, 0]
        x1 = bbox[i, 1]
        y0 = bbox[i, 2]
        y1 = bbox[i, 3]
        if x1 < x0 or y1 < y0:
            continue
        a = ainv[i, 0]
        b = ainv[i, 1]
        c = ainv[i, 2]
        mx = mean2d[i, 0]
        my = mean2d[i, 1]
        al = alpha[i]
        r0 = rgb[i, 0]
        r1 = rgb[i, 1]
        r2 = rgb[i, 2]
        off = tape_off[i]
        bw = x1 - x0 + 1
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                k = off + (y - y0) * bw + (x - x0)
                g = tape_g[k]
                t = tape_t[k]
                if g < G_MIN or t < T_MIN:
                    continue
                sig = al * g
                w = sig * t
                om = 1.0 - sig
                # if om underflows every later contribution saw T == 0, so the
                # suffix sums are zero and the quotient is defined as zero
                inv_om = 1.0 / om if om > 1e-12 else 0.0
                dc0 = d_color[y, x, 0]
                dc1 = d_color[y, x, 1]
                dc2 = d_color[y, x, 2]
                do = d_opac[y, x]
                dsig = (
                    dc0 * (t * r0 - suf_c[y, x, 0] * inv_om)
                    + dc1 * (t * r1 - suf_c[y, x, 1] * inv_om)
                    + dc2 * (t * r2 - suf_c[y, x, 2] * inv_om)
                    + do * (t - suf_o[y, x] * inv_om)
                )
                g_rgb[i, 0] += dc0 * w
                g_rgb[i, 1] += dc1 * w
                g_rgb[i, 2] += dc2 * w
                g_alpha[i] += g * dsig
                dg = al * dsig
                dqf = -0.5 * g * dg
                dx = (x + 0.5) - mx
                dy = (y + 0.5) - my
                g_mean2d[i, 0] -= dqf * (2.0 * a * dx + 2.0 * b * dy)
                g_mean2d[i, 1] -= dqf * (2.0 * b * dx + 2.0 * c * dy)
                g_ainv[i, 0] += dqf * dx * dx
                g_ainv[i, 1] += dqf * 2.0 * dx * dy
                g_ainv[i, 2] += dqf * dy * dy
                suf_c[y, x, 0] += w * r0
                suf_c[y, x, 1] += w * r1
                suf_c[y, x, 2] += w * r2
                suf_o[y, x] += w
    return
