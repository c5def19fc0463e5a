import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parnewt.calculus import (SpaceTimeField, default_holder_exponent, diff_t, diff_x, diff_xx, holder_quotient,
                              lp_norm, read_field_csv, sup_norm, w1inf_norm, w21p_norm, w21p_parts,
                              x_continuity_modulus)
from parnewt.mesh import build_grid

G1 = build_grid(1, [1.0], [11], 1.0, 11)
G2 = build_grid(2, [1.0, 1.0], [9, 9], 0.5, 5)


def field(grid, fn):
    return SpaceTimeField.from_function(grid, fn)


def test_field_rejects_bad_values():
    with pytest.raises(ValueError):
        SpaceTimeField(G1, np.zeros(5))
    v = np.zeros(G1.shape)
    v[3, 3] = np.nan
    with pytest.raises(ValueError):
        SpaceTimeField(G1, v)


def test_diff_x_exact_cases():
    assert np.allclose(diff_x(field(G1, lambda x, t: 0 * x + 3.0), 0).values, 0)
    assert np.allclose(diff_x(field(G1, lambda x, t: x), 0).values, 1, atol=1e-13)
    d = diff_x(field(G1, lambda x, t: x**2), 0).values
    assert np.allclose(d[:, 1:-1], 2 * G1.coords[0][:, 1:-1], atol=1e-13)
    with pytest.raises(ValueError):
        diff_x(field(G1, lambda x, t: x), 1)


def test_diff_xx_exact_cases():
    d = diff_xx(field(G1, lambda x, t: x**2), 0, 0).values
    assert np.allclose(d[:, 1:-1], 2, atol=1e-11)
    xy = diff_xx(field(G2, lambda x, y, t: x * y), 0, 1).values
    assert np.allclose(xy[:, 1:-1, 1:-1], 1, atol=1e-12)
    assert np.allclose(diff_xx(field(G2, lambda x, y, t: 0 * x + 1), 1, 1).values, 0)
    with pytest.raises(ValueError):
        diff_xx(field(G1, lambda x, t: x), 0, 1)


def test_diff_t_cases():
    assert np.allclose(diff_t(field(G1, lambda x, t: t + 0 * x)).values[1:], 1)
    assert np.allclose(diff_t(field(G1, lambda x, t: 0 * x + 2.0)).values, 0)
    d = diff_t(field(G1, lambda x, t: t**2 + 0 * x)).values
    assert d[5, 4] == pytest.approx(0.9)


def test_lp_norm_cases():
    one = field(G1, lambda x, t: 0 * x + 1)
    for p in (1, 2, 3.5):
        assert lp_norm(one, p) == pytest.approx(1.0)
        assert lp_norm(one * -2.5, p) == pytest.approx(2.5)
    g = build_grid(1, [1.0], [81], 1.0, 11)
    s = field(g, lambda x, t: np.sin(np.pi * x))
    assert lp_norm(s, 2) == pytest.approx(np.sqrt(0.5), abs=1e-3)
    with pytest.raises(ValueError):
        lp_norm(one, 0.5)


def test_constant_norms():
    c = field(G1, lambda x, t: 0 * x - 3.0)
    assert w1inf_norm(c) == pytest.approx(3.0)
    assert w21p_norm(c, 4) == pytest.approx(3.0)
    z = SpaceTimeField.zeros(G1)
    assert sup_norm(z) == w1inf_norm(z) == w21p_norm(z, 2) == 0.0
    with pytest.raises(ValueError):
        w21p_norm(c, 1)


def test_w21p_parts_match_integrals():
    # u = x(1-x)t: ||u||^2 = 1/90, ||Du||^2 = 1/9, ||D2u||^2 = 4/3, ||Dtu||^2 = 1/30
    g = build_grid(1, [1.0], [161], 1.0, 161)
    u = field(g, lambda x, t: x * (1 - x) * t)
    parts = w21p_parts(u, 2)
    exact = {"u": np.sqrt(1 / 90), "Du": np.sqrt(1 / 9), "D2u": np.sqrt(4 / 3), "Dtu": np.sqrt(1 / 30)}
    for k, v in exact.items():
        assert parts[k] == pytest.approx(v, rel=2e-2), k


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_norm_axioms_and_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    u = SpaceTimeField(G2, rng.normal(size=G2.shape))
    v = SpaceTimeField(G2, rng.normal(size=G2.shape))
    for norm in (lambda f: lp_norm(f, 3), sup_norm, w1inf_norm, lambda f: w21p_norm(f, 5)):
        assert norm(u * a) == pytest.approx(abs(a) * norm(u), rel=1e-12, abs=1e-12)
        assert norm(u + v) <= norm(u) + norm(v) + 1e-12
    assert w21p_norm(u, 5) >= lp_norm(u, 5)
    w = u * a + v * b
    assert np.allclose(diff_xx(w, 0, 1).values, a * diff_xx(u, 0, 1).values + b * diff_xx(v, 0, 1).values)
    assert np.allclose(diff_t(w).values, a * diff_t(u).values + b * diff_t(v).values)
    assert np.allclose(diff_x(w, 1).values, a * diff_x(u, 1).values + b * diff_x(v, 1).values)


def test_second_difference_order():
    errs, hs = [], []
    for n in (11, 21, 41, 81):
        g = build_grid(1, [1.0], [n], 1.0, 3)
        u = field(g, lambda x, t: np.sin(3 * x) + 0 * t)
        d = diff_xx(u, 0, 0).values[:, 1:-1]
        errs.append(np.max(np.abs(d + 9 * np.sin(3 * g.coords[0][:, 1:-1]))))
        hs.append(g.spacing[0])
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 1.7


def test_x_continuity_modulus():
    assert x_continuity_modulus(field(G1, lambda x, t: 0 * x + 4.0), 0.3) == 0.0
    assert x_continuity_modulus(field(G1, lambda x, t: x + 0 * t), 0.25) == pytest.approx(0.2)
    u = field(G2, lambda x, y, t: np.sin(4 * x * y) * t)
    vals = [x_continuity_modulus(u, r) for r in (0.125, 0.2, 0.3, 0.5)]
    assert vals == sorted(vals)
    with pytest.raises(ValueError):
        x_continuity_modulus(u, 0.01)


def test_x_continuity_matches_pair_enumeration():
    rng = np.random.default_rng(1)
    g = build_grid(2, [1.0, 1.0], [6, 6], 1.0, 3)
    u = SpaceTimeField(g, rng.normal(size=g.shape))
    r = 0.45
    pts = np.stack([c[0].ravel() for c in g.coords[:-1]], axis=1)
    best = 0.0
    for k in range(g.steps):
        vals = u.values[k].ravel()
        for i in range(len(pts)):
            for j in range(len(pts)):
                if np.linalg.norm(pts[i] - pts[j]) < r:
                    best = max(best, abs(vals[i] - vals[j]))
    assert x_continuity_modulus(u, r) == pytest.approx(best, rel=1e-15)


def test_holder_quotient():
    assert holder_quotient(SpaceTimeField.zeros(G1), 1.0) == 0.0
    g = build_grid(1, [1.0], [11], 1.0, 5)
    u = field(g, lambda x, t: t * np.sin(np.pi * x))
    # ||g||_{C^1} |s - s'|^{1/2} is largest for the largest time gap
    gx = np.sin(np.pi * g.axes[0])
    c1 = np.max(np.abs(gx)) + np.max(np.abs(np.gradient(gx, g.spacing[0], edge_order=2)))
    assert holder_quotient(u, 1.0) == pytest.approx(c1 * 1.0**0.5, rel=1e-12)
    assert holder_quotient(u * -3.0, 0.5) == pytest.approx(3 * holder_quotient(u, 0.5))
    with pytest.raises(ValueError):
        holder_quotient(u, 0.0)
    assert default_holder_exponent(2, 8) == pytest.approx(0.5)


def test_csv_round_trip(tmp_path):
    u = field(G2, lambda x, y, t: np.exp(x - y) * t + 1 / 3)
    u.to_csv(tmp_path / "u.csv", name="u")
    back = read_field_csv(tmp_path / "u.csv", G2, "u")
    assert np.array_equal(back.values, u.values)
