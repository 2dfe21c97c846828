"""Entropic risk minimization: solved value, feedback and closed form.

Run with ``python3 demos/riskmin.py``.
"""
import numpy as np

from fbsde_hjb import MarketParams, build_riskmin, default_grid, riskmin_closed_form, solve


def main():
    for label, b in (("constant b = 0.2", 0.2), ("b(t) = 0.2 t", lambda t: 0.2 * t)):
        params = MarketParams(b=b, sigma=0.4, T=1.0, x0=1.0)
        spec = build_riskmin(params)
        report = solve(spec, default_grid(spec, 200, 400))
        sol = riskmin_closed_form(params)
        t = report.grid.t_nodes
        u_exact = np.array([sol.u_hat(s) for s in t])
        u_err = np.abs(report.control_field - u_exact[:, None]).max()
        print(label)
        print(f"  y(0, x0) solver      = {report.y0_at_x0:.10f}")
        print(f"  y(0, x0) closed form = {sol.y_hat(0.0, 1.0):.10f}")
        print(f"  minimal risk         = {sol.rho_min:.10f}")
        print(f"  max |u - b/sigma^2|  = {u_err:.2e}")


if __name__ == "__main__":
    main()
