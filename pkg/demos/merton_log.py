"""Merton log-utility portfolio: solve the HJB grid and compare with the closed form.

Run with ``python3 demos/merton_log.py``.
"""
import numpy as np

from fbsde_hjb import MarketParams, build_merton, default_grid, merton_log_value, solve
from fbsde_hjb.solver import classical_hjb_crosscheck


def main():
    params = MarketParams(b=0.05, sigma=0.2, T=1.0, x0=1.0)
    spec = build_merton(params)
    report = solve(spec, default_grid(spec, 200, 400))
    x = report.grid.x_nodes
    exact = merton_log_value(0.0, x, params)
    err = np.abs(report.field.y_values[0] - exact)

    print(f"y(0, 1) solver      = {report.y0_at_x0:.8f}")
    print(f"y(0, 1) closed form = {merton_log_value(0.0, 1.0, params):.8f}")
    for lo, hi in ((0.5, 2.5), (2.5, 4.0), (4.0, 5.0)):
        band = (x >= lo) & (x <= hi)
        print(f"max |error| on [{lo}, {hi}]: {err[band].max():.2e}")

    # feedback: fraction of wealth in the risky asset should be b / sigma^2
    inner = (x > 0.5) & (x < 2.5)
    share = report.control_field[0][inner] / x[inner]
    print(f"u/x on [0.5, 2.5]: {share.min():.4f} .. {share.max():.4f} (target 1.25)")

    cross = classical_hjb_crosscheck(spec, report.grid, report)
    print(f"classical HJB feedback discrepancy: {cross.max_discrepancy:.1e}")


if __name__ == "__main__":
    main()
