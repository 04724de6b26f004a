"""Quadrature rules on the reference triangle and on edges.

Reference triangle is conv{(0,0), (1,0), (0,1)} with area 1/2.  All rules
have positive weights; weights sum to the reference area.
"""

import numpy as np

__all__ = ["QuadratureRule", "triangle_rule", "edge_rule"]


class QuadratureRule:
    """Points (nq, dim) and weights (nq,) plus the polynomial degree
    integrated exactly."""

    def __init__(self, points, weights, exactness):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.exactness = int(exactness)
        if np.any(self.weights <= 0.0):
            raise ValueError("quadrature weights must be positive")
        self.points.setflags(write=False)
        self.weights.setflags(write=False)


def _dunavant_group3(a):
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)]


def _dunavant_group6(a, b):
    c = 1.0 - a - b
    return [(a, b), (b, a), (a, c), (c, a), (b, c), (c, b)]


def triangle_rule(exactness):
    """Symmetric positive-weight rule on the reference triangle, exact for
    polynomials up to the requested total degree.

    Supported exactness degrees: 1, 2, 4, 6 (requests in between are
    rounded up).
    """
    if exactness <= 1:
        pts = [(1.0 / 3.0, 1.0 / 3.0)]
        w = [0.5]
        deg = 1
    elif exactness <= 2:
        pts = [(1.0 / 6.0, 1.0 / 6.0), (2.0 / 3.0, 1.0 / 6.0),
               (1.0 / 6.0, 2.0 / 3.0)]
        w = [1.0 / 6.0] * 3
        deg = 2
    elif exactness <= 4:
        a1, w1 = 0.445948490915965, 0.223381589678011
        a2, w2 = 0.091576213509771, 0.109951743655322
        pts = _dunavant_group3(a1) + _dunavant_group3(a2)
        w = [w1 / 2.0] * 3 + [w2 / 2.0] * 3
        deg = 4
    elif exactness <= 6:
        a1, w1 = 0.249286745170910, 0.116786275726379
        a2, w2 = 0.063089014491502, 0.050844906370207
        a3, b3 = 0.310352451033785, 0.053145049844816
        w3 = 0.082851075618374
        pts = (_dunavant_group3(a1) + _dunavant_group3(a2)
               + _dunavant_group6(a3, b3))
        w = [w1 / 2.0] * 3 + [w2 / 2.0] * 3 + [w3 / 2.0] * 6
        deg = 6
    else:
        raise ValueError("no triangle rule of exactness %d available"
                         % exactness)
    return QuadratureRule(pts, w, deg)


def edge_rule(npoints=2):
    """Gauss-Legendre rule on [0, 1] with `npoints` points (exact for
    polynomials of degree 2*npoints - 1)."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return QuadratureRule(((x + 1.0) / 2.0).reshape(-1, 1), w / 2.0,
                          2 * npoints - 1)
