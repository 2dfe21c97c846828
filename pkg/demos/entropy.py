"""Relative entropy of the martingale measure by Monte Carlo.

Run with ``python3 demos/entropy.py [n_paths]``.
"""
import sys

from fbsde_hjb import MarketParams, girsanov_entropy, riskmin_closed_form


def main(n_paths=100_000):
    for label, b in (("constant b = 0.2", 0.2), ("b(t) = 0.2 t", lambda t: 0.2 * t)):
        est = girsanov_entropy(b, 0.4, 1.0, n_paths, 1e-3, seed=42, threads=4)
        rho = riskmin_closed_form(MarketParams(b=b, sigma=0.4)).rho_min
        print(label)
        print(f"  H(Q|P) estimate = {est.entropy_hat:.5f} +/- {est.std_err:.5f}")
        print(f"  closed form     = {est.closed_form:.5f} (z = {est.z_score:+.2f})")
        print(f"  -rho_min - x0   = {-rho - 1.0:.5f}")
        print(f"  E[Gamma_T]      = {est.gamma_mean:.5f} +/- {est.gamma_std_err:.5f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 100_000)
