"""Exact geometric orientation and circumsphere predicates.

Both predicates evaluate a determinant sign with a cheap floating-point
pass first and fall back to exact arithmetic only when the float result is
within its forward error bound.  The fallback rescales the inputs (every
float is a dyadic rational) to Python integers with a common power-of-two
denominator and evaluates the determinant in integer arithmetic, so the
returned sign is always exact.
"""

from __future__ import annotations

# Forward error bounds for the float filters (Shewchuk's static bounds).
_EPS = 2.0 ** -53
_O3D_BOUND = (7.0 + 56.0 * _EPS) * _EPS
_ISP_BOUND = (16.0 + 224.0 * _EPS) * _EPS


def _scaled_ints(values):
    """Map floats to integers by their common power-of-two denominator.

    The common positive scale preserves determinant signs, and integer
    arithmetic is exact, which is all the fallbacks need.
    """
    ratios = [float(v).as_integer_ratio() for v in values]
    den = max(d for _, d in ratios)
    return [n * (den // d) for n, d in ratios]


def sign_det2(a, b, c, d) -> int:
    """Exact sign of the 2x2 determinant a*d - b*c of float entries."""
    x = a * d
    y = b * c
    det = x - y
    errbound = 4.0 * _EPS * (abs(x) + abs(y))
    if det > errbound:
        return 1
    if det < -errbound:
        return -1
    ia, ib, ic, id_ = _scaled_ints((a, b, c, d))
    exact = ia * id_ - ib * ic
    if exact > 0:
        return 1
    if exact < 0:
        return -1
    return 0


def orient3d(a, b, c, d) -> int:
    """Sign of det[b-a; c-a; d-a]: +1 if d is on the positive side of the
    plane through a, b, c (a, b, c counter-clockwise seen from d), -1
    opposite, 0 exactly coplanar."""
    bax = b[0] - a[0]
    bay = b[1] - a[1]
    baz = b[2] - a[2]
    cax = c[0] - a[0]
    cay = c[1] - a[1]
    caz = c[2] - a[2]
    dax = d[0] - a[0]
    day = d[1] - a[1]
    daz = d[2] - a[2]

    caxday = cax * day
    daxcay = dax * cay
    daxbay = dax * bay
    baxday = bax * day
    baxcay = bax * cay
    caxbay = cax * bay

    det = (baz * (caxday - daxcay)
           + caz * (daxbay - baxday)
           + daz * (baxcay - caxbay))

    permanent = ((abs(caxday) + abs(daxcay)) * abs(baz)
                 + (abs(daxbay) + abs(baxday)) * abs(caz)
                 + (abs(baxcay) + abs(caxbay)) * abs(daz))
    errbound = _O3D_BOUND * permanent
    if det > errbound:
        return 1
    if det < -errbound:
        return -1
    return _orient3d_exact(a, b, c, d)


def _orient3d_exact(a, b, c, d) -> int:
    (ax, ay, az, bx, by, bz,
     cx, cy, cz, dx, dy, dz) = _scaled_ints(
        (a[0], a[1], a[2], b[0], b[1], b[2],
         c[0], c[1], c[2], d[0], d[1], d[2]))
    bax = bx - ax
    bay = by - ay
    baz = bz - az
    cax = cx - ax
    cay = cy - ay
    caz = cz - az
    dax = dx - ax
    day = dy - ay
    daz = dz - az
    det = (baz * (cax * day - dax * cay)
           + caz * (dax * bay - bax * day)
           + daz * (bax * cay - cax * bay))
    if det > 0:
        return 1
    if det < 0:
        return -1
    return 0


class DegenerateTetError(ValueError):
    """in_sphere was asked about a flat (zero-volume) reference tet."""


def in_sphere(a, b, c, d, e) -> int:
    """+1 if e lies strictly inside the circumsphere of positively oriented
    tet (a, b, c, d), -1 strictly outside, 0 exactly on the sphere.

    Raises DegenerateTetError when (a, b, c, d) is degenerate (a flat tet
    has no circumsphere) and ValueError when it is negatively oriented.
    """
    orient = orient3d(a, b, c, d)
    if orient == 0:
        raise DegenerateTetError("circumsphere undefined for a flat tet")
    if orient < 0:
        raise ValueError("in_sphere requires a positively oriented tet")
    return _in_sphere_oriented(a, b, c, d, e)


def _in_sphere_oriented(a, b, c, d, e) -> int:
    # Assumes orient3d(a, b, c, d) > 0; used directly by the Delaunay
    # insertion loop, which maintains that invariant by construction.
    aex = a[0] - e[0]
    aey = a[1] - e[1]
    aez = a[2] - e[2]
    bex = b[0] - e[0]
    bey = b[1] - e[1]
    bez = b[2] - e[2]
    cex = c[0] - e[0]
    cey = c[1] - e[1]
    cez = c[2] - e[2]
    dex = d[0] - e[0]
    dey = d[1] - e[1]
    dez = d[2] - e[2]

    aexbey = aex * bey
    bexaey = bex * aey
    ab = aexbey - bexaey
    bexcey = bex * cey
    cexbey = cex * bey
    bc = bexcey - cexbey
    cexdey = cex * dey
    dexcey = dex * cey
    cd = cexdey - dexcey
    dexaey = dex * aey
    aexdey = aex * dey
    da = dexaey - aexdey
    aexcey = aex * cey
    cexaey = cex * aey
    ac = aexcey - cexaey
    bexdey = bex * dey
    dexbey = dex * bey
    bd = bexdey - dexbey

    abc = aez * bc - bez * ac + cez * ab
    bcd = bez * cd - cez * bd + dez * bc
    cda = cez * da + dez * ac + aez * cd
    dab = dez * ab + aez * bd + bez * da

    alift = aex * aex + aey * aey + aez * aez
    blift = bex * bex + bey * bey + bez * bez
    clift = cex * cex + cey * cey + cez * cez
    dlift = dex * dex + dey * dey + dez * dez

    # Negated relative to the classic arrangement so that "+" means inside
    # for tets satisfying orient3d(a, b, c, d) > 0 in this module's
    # det[b-a; c-a; d-a] convention.
    det = (clift * dab - dlift * abc) + (alift * bcd - blift * cda)

    aezplus = abs(aez)
    bezplus = abs(bez)
    cezplus = abs(cez)
    dezplus = abs(dez)
    aexbeyplus = abs(aexbey)
    bexaeyplus = abs(bexaey)
    bexceyplus = abs(bexcey)
    cexbeyplus = abs(cexbey)
    cexdeyplus = abs(cexdey)
    dexceyplus = abs(dexcey)
    dexaeyplus = abs(dexaey)
    aexdeyplus = abs(aexdey)
    aexceyplus = abs(aexcey)
    cexaeyplus = abs(cexaey)
    bexdeyplus = abs(bexdey)
    dexbeyplus = abs(dexbey)
    permanent = (((cexdeyplus + dexceyplus) * bezplus
                  + (dexbeyplus + bexdeyplus) * cezplus
                  + (bexceyplus + cexbeyplus) * dezplus) * alift
                 + ((dexaeyplus + aexdeyplus) * cezplus
                    + (aexceyplus + cexaeyplus) * dezplus
                    + (cexdeyplus + dexceyplus) * aezplus) * blift
                 + ((aexbeyplus + bexaeyplus) * dezplus
                    + (bexdeyplus + dexbeyplus) * aezplus
                    + (dexaeyplus + aexdeyplus) * bezplus) * clift
                 + ((bexceyplus + cexbeyplus) * aezplus
                    + (cexaeyplus + aexceyplus) * bezplus
                    + (aexbeyplus + bexaeyplus) * cezplus) * dlift)
    errbound = _ISP_BOUND * permanent
    if det > errbound:
        return 1
    if det < -errbound:
        return -1
    return _in_sphere_exact(a, b, c, d, e)


def _in_sphere_exact(a, b, c, d, e) -> int:
    ints = _scaled_ints((a[0], a[1], a[2], b[0], b[1], b[2],
                         c[0], c[1], c[2], d[0], d[1], d[2],
                         e[0], e[1], e[2]))
    ex, ey, ez = ints[12], ints[13], ints[14]
    rows = []
    for k in range(4):
        px = ints[3 * k] - ex
        py = ints[3 * k + 1] - ey
        pz = ints[3 * k + 2] - ez
        rows.append((px, py, pz, px * px + py * py + pz * pz))
    # det[x y z lift] is negative when e is inside for a positively
    # oriented (a,b,c,d), hence the flip.
    det = -_det4(rows)
    if det > 0:
        return 1
    if det < 0:
        return -1
    return 0


def _det4(rows) -> Fraction:
    (a0, a1, a2, a3), (b0, b1, b2, b3), (c0, c1, c2, c3), (d0, d1, d2, d3) = rows
    m01 = c0 * d1 - c1 * d0
    m02 = c0 * d2 - c2 * d0
    m03 = c0 * d3 - c3 * d0
    m12 = c1 * d2 - c2 * d1
    m13 = c1 * d3 - c3 * d1
    m23 = c2 * d3 - c3 * d2
    return (a0 * (b1 * m23 - b2 * m13 + b3 * m12)
            - a1 * (b0 * m23 - b2 * m03 + b3 * m02)
            + a2 * (b0 * m13 - b1 * m03 + b3 * m01)
            - a3 * (b0 * m12 - b1 * m02 + b2 * m01))
