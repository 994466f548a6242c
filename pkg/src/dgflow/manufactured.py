"""Manufactured flow scenarios: exact fields, matching sources, boundary data.

A :class:`ManufacturedCase` is built from closed-form expressions for the
liquid pressure and the two saturations.  The source term of each phase is
expanded symbolically from the mass-conservation divergence form with the
package's closure laws, then lambdified to fast numpy callables, so the
discrete error is free of differentiation noise.  An independent
finite-difference oracle in the test suite guards the algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .physics import FluidProperties, PCA_SCALE, PCV_SCALE

_T, _X, _Y = sp.symbols("t x y", real=True)

ALL_SIDES = ("left", "right", "bottom", "top")

#: default exact fields for the verification scenarios
PRESSURE_EXPR = "2 + x*y**2 + x**2*sin(t + y)"
SAT_A_EXPR = "(1 + 2*x**2*y**2 + cos(t + x)) / 8"
SAT_V_EXPR = "(3 - cos(t + x)) / 8"


_SYMBOLS = {"t": _T, "x": _X, "y": _Y}


def _as_expr(expr):
    """Sympify and rebind any plain t/x/y symbols to the module's own."""
    e = sp.sympify(expr, locals=_SYMBOLS)
    rebind = {s: _SYMBOLS[s.name] for s in e.free_symbols if s.name in _SYMBOLS}
    return e.subs(rebind) if rebind else e


def _lambdify(expr):
    fn = sp.lambdify((_T, _X, _Y), expr, modules="numpy")

    def wrapped(t, x, y):
        shape = np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(y))
        out = np.empty(shape, dtype=float)
        out[...] = fn(t, x, y)
        return float(out) if out.ndim == 0 else out

    return wrapped


def _lambdify_vec(expr_x, expr_y):
    fx, fy = _lambdify(expr_x), _lambdify(expr_y)

    def wrapped(t, x, y):
        return np.stack([np.asarray(fx(t, x, y)), np.asarray(fy(t, x, y))], axis=0)

    return wrapped


@dataclass(frozen=True)
class ExactState:
    """Exact fields and first derivatives at given points."""

    p: np.ndarray
    s_a: np.ndarray
    s_v: np.ndarray
    grad_p: np.ndarray      # (2, ...)
    grad_s_a: np.ndarray
    grad_s_v: np.ndarray
    ds_a_dt: np.ndarray
    ds_v_dt: np.ndarray


class ManufacturedCase:
    """Exact solution triple with PDE-consistent sources and boundary data.

    Parameters
    ----------
    name : str
        Scenario label used by the study harness.
    fluids : FluidProperties
        Constant fluid/rock data including the gravity vector; the
        permeability must be a scalar for symbolic source expansion.
    pressure, sat_a, sat_v : str or sympy expression
        Closed-form exact fields in the symbols ``t, x, y``.
    dirichlet_sides : dict, optional
        Per-unknown Dirichlet boundary sides, keys ``pressure`` /
        ``sat_a`` / ``sat_v``; every side defaults to Dirichlet.
        Non-Dirichlet sides are Neumann and served by the ``neumann_*``
        flux providers.
    """

    def __init__(self, name: str, fluids: FluidProperties,
                 pressure=PRESSURE_EXPR, sat_a=SAT_A_EXPR, sat_v=SAT_V_EXPR,
                 dirichlet_sides: dict | None = None):
        if np.ndim(fluids.permeability) != 0:
            raise ValueError("manufactured cases need a scalar permeability")
        self.name = name
        self.fluids = fluids
        sides = dict(dirichlet_sides or {})
        self.dirichlet_sides = {
            "pressure": tuple(sides.get("pressure", ALL_SIDES)),
            "sat_a": tuple(sides.get("sat_a", ALL_SIDES)),
            "sat_v": tuple(sides.get("sat_v", ALL_SIDES)),
        }

        p = _as_expr(pressure)
        sa = _as_expr(sat_a)
        sv = _as_expr(sat_v)
        self._exprs = (p, sa, sv)

        self.pressure = _lambdify(p)
        self.sat_a = _lambdify(sa)
        self.sat_v = _lambdify(sv)
        self.pressure_grad = _lambdify_vec(sp.diff(p, _X), sp.diff(p, _Y))
        self.sat_a_grad = _lambdify_vec(sp.diff(sa, _X), sp.diff(sa, _Y))
        self.sat_v_grad = _lambdify_vec(sp.diff(sv, _X), sp.diff(sv, _Y))
        self.sat_a_dt = _lambdify(sp.diff(sa, _T))
        self.sat_v_dt = _lambdify(sp.diff(sv, _T))

        self._build_sources(p, sa, sv)

        # Dirichlet data are the exact traces.
        self.boundary_pressure = self.pressure
        self.boundary_sat_a = self.sat_a
        self.boundary_sat_v = self.sat_v

    def _build_sources(self, p, sa, sv):
        f = self.fluids
        kappa = float(np.asarray(f.permeability))
        gx, gy = (float(c) for c in f.gravity)

        sl = 1 - sa - sv
        k_rl = sl * (sl + sa) * (1 - sa)
        lam = {
            "l": k_rl / f.mu_l,
            "v": sv**2 / f.mu_v,
            "a": sa**2 / f.mu_a,
        }
        rho = {"l": f.rho_l, "v": f.rho_v, "a": f.rho_a}
        p_cv = PCV_SCALE * sp.log(sp.Float(1.01) - sv)
        p_ca = PCA_SCALE * sp.log(sa + sp.Float(0.01))
        phase_p = {"l": p, "v": p + p_cv, "a": p - p_ca}
        s_of = {"l": sl, "v": sv, "a": sa}

        flux = {}
        q = {}
        for j in ("l", "v", "a"):
            fx = kappa * lam[j] * (sp.diff(phase_p[j], _X) - rho[j] * gx)
            fy = kappa * lam[j] * (sp.diff(phase_p[j], _Y) - rho[j] * gy)
            flux[j] = (fx, fy)
            q[j] = f.porosity * sp.diff(s_of[j], _T) - sp.diff(fx, _X) - sp.diff(fy, _Y)

        self.source_liquid = _lambdify(q["l"])
        self.source_vapor = _lambdify(q["v"])
        self.source_aqueous = _lambdify(q["a"])
        self.source_total = _lambdify(q["l"] + q["v"] + q["a"])

        lam_t = lam["l"] + lam["v"] + lam["a"]
        rho_lam_t = sum(rho[j] * lam[j] for j in ("l", "v", "a"))
        self._flux_p = _lambdify_vec(
            kappa * lam_t * sp.diff(p, _X) + kappa * lam["v"] * sp.diff(p_cv, _X)
            - kappa * lam["a"] * sp.diff(p_ca, _X) - kappa * rho_lam_t * gx,
            kappa * lam_t * sp.diff(p, _Y) + kappa * lam["v"] * sp.diff(p_cv, _Y)
            - kappa * lam["a"] * sp.diff(p_ca, _Y) - kappa * rho_lam_t * gy,
        )
        dpca_dsa = PCA_SCALE / (sa + sp.Float(0.01))
        self._flux_sa = _lambdify_vec(
            -kappa * lam["a"] * dpca_dsa * sp.diff(sa, _X)
            + kappa * lam["a"] * sp.diff(p, _X) - rho["a"] * kappa * lam["a"] * gx,
            -kappa * lam["a"] * dpca_dsa * sp.diff(sa, _Y)
            + kappa * lam["a"] * sp.diff(p, _Y) - rho["a"] * kappa * lam["a"] * gy,
        )
        dpcv_dsv = -PCV_SCALE / (sp.Float(1.01) - sv)
        self._flux_sv = _lambdify_vec(
            kappa * lam["v"] * dpcv_dsv * sp.diff(sv, _X)
            + kappa * lam["v"] * sp.diff(p, _X) - rho["v"] * kappa * lam["v"] * gx,
            kappa * lam["v"] * dpcv_dsv * sp.diff(sv, _Y)
            + kappa * lam["v"] * sp.diff(p, _Y) - rho["v"] * kappa * lam["v"] * gy,
        )

    # -- spec-level conveniences ------------------------------------------

    def exact_solution(self, t, x, y) -> ExactState:
        """Exact values with gradients and saturation time derivatives."""
        return ExactState(
            p=self.pressure(t, x, y),
            s_a=self.sat_a(t, x, y),
            s_v=self.sat_v(t, x, y),
            grad_p=self.pressure_grad(t, x, y),
            grad_s_a=self.sat_a_grad(t, x, y),
            grad_s_v=self.sat_v_grad(t, x, y),
            ds_a_dt=self.sat_a_dt(t, x, y),
            ds_v_dt=self.sat_v_dt(t, x, y),
        )

    def source_terms(self, t, x, y):
        """Phase sources (q_l, q_v, q_a) matching the exact fields."""
        return (self.source_liquid(t, x, y),
                self.source_vapor(t, x, y),
                self.source_aqueous(t, x, y))

    def neumann_pressure(self, t, x, y, normal):
        F = self._flux_p(t, x, y)
        return F[0] * normal[0] + F[1] * normal[1]

    def neumann_sat_a(self, t, x, y, normal):
        F = self._flux_sa(t, x, y)
        return F[0] * normal[0] + F[1] * normal[1]

    def neumann_sat_v(self, t, x, y, normal):
        F = self._flux_sv(t, x, y)
        return F[0] * normal[0] + F[1] * normal[1]

    def __repr__(self):
        return f"ManufacturedCase({self.name!r})"


def constant_densities_case() -> ManufacturedCase:
    """Verification scenario with constant densities and no gravity."""
    return ManufacturedCase("constant_densities", FluidProperties())


def gravity_case() -> ManufacturedCase:
    """Same exact fields with gravity g = (0, -0.1)."""
    return ManufacturedCase("gravity", FluidProperties(gravity=(0.0, -0.1)))


_FACTORIES = {
    "constant_densities": constant_densities_case,
    "gravity": gravity_case,
}


def case_by_name(name: str) -> ManufacturedCase:
    try:
        return _FACTORIES[name]()
    except KeyError:
        raise KeyError(f"unknown case {name!r}; known: {sorted(_FACTORIES)}") from None
