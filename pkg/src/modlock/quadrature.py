"""Composite Gauss-Legendre quadrature over interpolated integrands."""

import numpy as np

NODES_PER_PANEL = 8

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(NODES_PER_PANEL)


def gl_points(a, b, n_panels):
    """Nodes and weights of composite Gauss-Legendre on [a, b] with n_panels panels."""
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    wts = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return pts, wts


def quad_gl(f, a, b, n_panels=64):
    """Integrate a vectorized scalar function f over [a, b]."""
    pts, wts = gl_points(a, b, n_panels)
    return float(np.dot(wts, f(pts)))


def cumulative_gl(f, a, b, n_panels=256):
    """Cumulative integral of a vectorized f at panel edges; returns (edges, values)."""
    pts, wts = gl_points(a, b, n_panels)
    vals = (wts * f(pts)).reshape(n_panels, NODES_PER_PANEL).sum(axis=1)
    edges = np.linspace(a, b, n_panels + 1)
    return edges, np.concatenate(([0.0], np.cumsum(vals)))
