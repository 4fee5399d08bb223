"""
Independent reference values for the interferometer tests.

Nothing here goes through the engine: amplitudes are pushed around by hand
with dictionaries, and probabilities are products of closed-form factors.
"""
from __future__ import annotations

import cmath
import math


def walk(layout, space_points, n_steps, start=("a",), phases=None):
    """Amplitudes ``{(x, ch): amp}`` after ``n_steps`` ticks of the combined device.

    Splitter sites map ``a -> (a + b)/sqrt2`` and ``b -> (a - b)/sqrt2`` one
    site ahead; the phase site multiplies by ``exp(i phi_ch)``; everything
    else just moves ahead. Positions wrap around the space circle.
    """
    lo, n_x = space_points[0], len(space_points)
    ph = {"a": layout.phi_a, "b": layout.phi_b}
    state = {(layout.x_Z, start[0]): 1.0 + 0j}
    r2 = 1 / math.sqrt(2)
    for _ in range(n_steps):
        nxt = {}

        def add(x, ch, v):
            key = ((x - lo) % n_x + lo, ch)
            nxt[key] = nxt.get(key, 0) + v

        for (x, ch), v in state.items():
            if x in (layout.x_BS1, layout.x_BS2):
                add(x + 1, "a", r2 * v)
                add(x + 1, "b", (r2 if ch == "a" else -r2) * v)
            elif x == layout.x_PS:
                add(x + 1, ch, cmath.exp(1j * ph[ch]) * v)
            else:
                add(x + 1, ch, v)
        state = nxt
    return state


def model2_path_probability(layout, time_points, space_points, chi, l, det):
    """Path ``(0, l, det)`` from ``|0, x_Z, a>``: ``|chi_l(0)|^2 |chi_l(t_D)|^2 |<x_D, ch| S^t_D |x_Z, a>|^2``.

    ``det`` is ``(t_D, ch)`` or ``"⊥"`` (one minus the detector clicks).
    """
    i0 = time_points.index(0)
    p_free = abs(chi[l][i0]) ** 2
    if det == "⊥":
        clicks = sum(model2_path_probability(layout, time_points, space_points, chi, l, (t, c)) for t in time_points for c in "ab")
        return p_free - clicks
    t_d, ch = det
    if t_d < 0:
        return 0.0
    x = layout.x_Da if ch == "a" else layout.x_Db
    amp = walk(layout, space_points, t_d).get((x, ch), 0.0)
    return p_free * abs(chi[l][time_points.index(t_d)]) ** 2 * abs(amp) ** 2


def model1_forward_channel_amplitudes(phi_a, phi_b):
    """Channel amplitudes after splitter, shifter and the mirrored splitter."""
    al, be = 1 / math.sqrt(2), 1 / math.sqrt(2)
    al, be = cmath.exp(1j * phi_a) * al, cmath.exp(1j * phi_b) * be
    return {"a": (al + be) / math.sqrt(2), "b": (be - al) / math.sqrt(2)}


def model1_forward_path_probability(layout, time_points, n_space, chi, labels):
    """Stepwise product along one forward model-I path from ``|0, x_Z, a>``.

    ``labels`` = (t_Z, l1, (1,t1), l2, (1,t2), l3, (1,t3), l4, (t_D, ch)).
    Between devices the particle is a single time slice, so each free step
    contributes ``|chi_l(t_now)|^2`` and the next device ``|chi_l(t_dev)|^2``,
    where ``t_dev`` is the time at which the free orbit reaches the device.
    """
    n_t = len(time_points)

    def it(t):
        return (t - time_points[0]) % n_t

    t_z, l1, bs1, l2, ps, l3, bs2, l4, det = labels
    if t_z != 0 or det == "⊥":
        return None
    p = 1.0
    t_now, x_now = 0, layout.x_Z
    route = [(l1, bs1, layout.x_BS1, 0), (l2, ps, layout.x_PS, 1), (l3, bs2, layout.x_BS2, 0)]
    for l, dev, x_dev, extra in route:
        p *= abs(chi[l][it(t_now)]) ** 2
        if (x_now + dev[1] - t_now - x_dev) % n_space:
            return 0.0
        p *= abs(chi[l][it(dev[1])]) ** 2
        # splitters hand over one site ahead, the shifter one tick later
        t_now = time_points[it(dev[1] + extra)]
        x_now = x_dev + (1 - extra)
    p *= abs(chi[l4][it(t_now)]) ** 2
    t_d, ch = det
    if (x_now + t_d - t_now - layout.x_D) % n_space:
        return 0.0
    amp = model1_forward_channel_amplitudes(layout.phi_a, layout.phi_b)[ch]
    return p * abs(chi[l4][it(t_d)]) ** 2 * abs(amp) ** 2


def zeno_leak(n):
    """Mass lost to the complementary projections along an n-step ramp."""
    return 1 - math.cos(math.pi / (2 * n)) ** (2 * n)
