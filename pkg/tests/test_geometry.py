import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boltzlab.geometry import (
    Domain,
    GeometryError,
    boundary_nodes,
    disk_quadrature,
    entry_exit_times,
    exit_time,
    outgoing_quadrature,
    transported_quadrature,
)


@pytest.fixture(scope="module")
def dom():
    return Domain(d=1.0, T=1.0)


def test_exit_time_from_center(dom):
    tau = exit_time(dom, np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]), sign=1)
    assert abs(tau[0] - 1.0) < 1e-14


def test_exit_time_known_chord(dom):
    # from (0.5, 0) along +e2: hits the circle at height sqrt(1 - 0.25)
    tau = exit_time(dom, np.array([[0.5, 0.0]]), np.array([[0.0, 1.0]]), sign=1)
    assert abs(tau[0] - np.sqrt(0.75)) < 1e-14


@settings(deadline=None, max_examples=100)
@given(
    x1=st.floats(-0.7, 0.7),
    x2=st.floats(-0.7, 0.7),
    ang=st.floats(0, 2 * np.pi),
    speed=st.floats(0.1, 4.0),
)
def test_exit_point_on_boundary(x1, x2, ang, speed):
    dom = Domain(d=1.0, T=1.0)
    x = np.array([[x1, x2]])
    v = speed * np.array([[np.cos(ang), np.sin(ang)]])
    for sign in (1, -1):
        tau = exit_time(dom, x, v, sign=sign)
        assert tau[0] >= 0
        hit = x + sign * tau[0] * v
        assert abs(np.linalg.norm(hit[0]) - dom.d) < 1e-10


def test_entry_exit_consistency(dom):
    rng = np.random.default_rng(0)
    y = rng.uniform(-2, 2, (200, 2))
    v = rng.normal(size=(200, 2))
    s_in, s_out, hits = entry_exit_times(dom, y, v)
    inside = np.linalg.norm(y, axis=1) < dom.d
    assert np.all(hits[inside])
    ok = hits
    assert np.all(s_out[ok] >= s_in[ok])
    mid = y[ok] + 0.5 * (s_in[ok] + s_out[ok])[:, None] * v[ok]
    assert np.all(np.linalg.norm(mid, axis=1) <= dom.d + 1e-9)


def test_boundary_mass(dom):
    _, _, dsigma = boundary_nodes(dom, 64)
    assert abs(dsigma.sum() - 2 * np.pi * dom.d) < 1e-12


def test_outgoing_quadrature_mass(dom):
    # integral over Gamma_+ of (v.n) dsigma dv = (2 pi d) * (2 R^3 / 3)
    r_v = 2.0
    bset = outgoing_quadrature(dom, 48, 48, r_v)
    exact = 2 * np.pi * dom.d * (2.0 * r_v**3 / 3.0)
    assert np.all(np.einsum("ij,ij->i", bset.v, bset.normal) > 0)
    assert abs(bset.weight.sum() - exact) / exact < 5e-3


def test_disk_quadrature_mass():
    pts, w = disk_quadrature(1.5, 24, 32)
    assert abs(w.sum() - np.pi * 1.5**2) < 1e-12
    assert np.all(np.linalg.norm(pts, axis=1) < 1.5)
    # quadratic moment of the disk: int |z|^2 = pi R^4 / 2
    m2 = w @ np.einsum("ij,ij->i", pts, pts)
    assert abs(m2 - np.pi * 1.5**4 / 2) / m2 < 1e-3


class TestTransportedQuadrature:
    def test_classification(self, dom):
        # slow ray from the center: alive at t = T -> final sample
        tq = transported_quadrature(
            dom, np.array([[0.0, 0.0]]), np.array([[0.3, 0.0]]), np.ones(1)
        )
        assert tq.kind[0] == 1
        assert tq.t[0] == dom.T
        # fast ray: exits before T -> boundary sample at the exit point
        tq = transported_quadrature(
            dom, np.array([[0.0, 0.0]]), np.array([[3.0, 0.0]]), np.ones(1)
        )
        assert tq.kind[0] == 0
        assert abs(np.linalg.norm(tq.x[0]) - dom.d) < 1e-12
        # ray that never meets the domain in [0, T]
        tq = transported_quadrature(
            dom, np.array([[5.0, 5.0]]), np.array([[0.1, 0.0]]), np.ones(1)
        )
        assert tq.kind[0] == 2
        assert tq.weight[0] == 0.0

    def test_weight_preserved_for_interior_rays(self, dom):
        # every ray starting inside the domain contributes exactly once
        rng = np.random.default_rng(1)
        y = 0.5 * rng.uniform(-1, 1, (500, 2))
        ang = rng.uniform(0, 2 * np.pi, 500)
        v = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        w = rng.uniform(0.1, 1.0, 500)
        tq = transported_quadrature(dom, y, v, w)
        assert np.all(tq.kind < 2)
        assert abs(tq.weight.sum() - w.sum()) < 1e-12

    def test_sample_points_on_ray(self, dom):
        rng = np.random.default_rng(2)
        y = rng.uniform(-1.5, 1.5, (300, 2))
        v = rng.normal(size=(300, 2))
        tq = transported_quadrature(dom, y, v, np.ones(300))
        live = tq.kind < 2
        assert np.allclose(tq.x[live], y[live] + tq.t[live, None] * v[live])
        assert np.all(tq.t[live] <= dom.T + 1e-12)


def test_bad_quadrature_counts(dom):
    with pytest.raises(GeometryError):
        outgoing_quadrature(dom, 2, 8, 1.0)
