"""Independent reference implementations shared by the test modules."""

import itertools


def lattice_images(src, room, max_order):
    """Every mirror image of ``src`` with at most ``max_order`` reflections.

    Along one axis the images are 2nL + x (|2n| reflections) and 2nL - x
    (|2n - 1| reflections).
    """
    per_axis = []
    for x, L in zip(src, room):
        opts = []
        for n in range(-max_order, max_order + 1):
            opts.append((2 * n * L + x, abs(2 * n)))
            opts.append((2 * n * L - x, abs(2 * n - 1)))
        per_axis.append([o for o in opts if o[1] <= max_order])
    out = []
    for combo in itertools.product(*per_axis):
        k = sum(c[1] for c in combo)
        if k <= max_order:
            out.append((tuple(c[0] for c in combo), k))
    return out
