"""Monte-Carlo check of the first-step regressor update variance.

One plain gradient step on ``L = 1/(2B) sum_i (phi . z_i - Y_i)^2`` moves the
regressor by ``dphi = -(eta/B) sum_i z_i E_i`` with ``E_i = phi . z_i - Y_i``.
For iid ``z ~ N(0, s_z^2 I_d)``, ``Y ~ N(0, s_Y^2)``, ``phi ~ N(0, s_phi^2 I_d)``:

* product form (treats ``z_ij`` and ``E_i`` as independent)::

      Var(dphi_j) = eta^2/B * s_z^2 * (s_Y^2 + d s_z^2 s_phi^2)

* exact iid value, which also counts ``E[z_ij^2 E_i^2]`` picking up the
  ``phi_j z_ij`` term and the cross-sample coupling through the shared phi::

      Var(dphi_j) = eta^2/B * s_z^2 * (s_Y^2 + (d + B + 1) s_z^2 s_phi^2)

Both agree at ``s_phi = 0``, where the value is ``eta^2/B * s_z^2 s_Y^2``
(one power of B, not two).
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Rng
from ..errors import SpecError

MIN_TRIALS = 10_000
CSV_COLUMNS = ("sigma_z", "sigma_phi", "measured", "predicted_random", "predicted_zero", "trials")


@dataclass
class VarianceLawParams:
    sigma_z: float = 1.0
    sigma_y: float = 1.0
    sigma_phi: float = 0.0
    d: int = 16
    batch: int = 8
    eta: float = 0.01
    trials: int = 100_000
    seed: int = 0

    def validate(self):
        for k in ("sigma_z", "sigma_y", "sigma_phi", "eta"):
            if getattr(self, k) < 0:
                raise SpecError(f"{k} must be >= 0")
        if self.d < 0 or self.batch < 1:
            raise SpecError("need d >= 0 and batch >= 1")
        if self.trials < MIN_TRIALS:
            raise SpecError(f"{self.trials} trials cannot resolve a 10% interval; use at least {MIN_TRIALS}")


def predicted_product(p):
    return p.eta**2 / p.batch * p.sigma_z**2 * (p.sigma_y**2 + p.d * p.sigma_z**2 * p.sigma_phi**2)


def predicted_exact(p):
    extra = (p.d + p.batch + 1) if p.d > 0 else 0
    return p.eta**2 / p.batch * p.sigma_z**2 * (p.sigma_y**2 + extra * p.sigma_z**2 * p.sigma_phi**2)


def predicted_zero(p, batch_power=1):
    return p.eta**2 / p.batch**batch_power * p.sigma_z**2 * p.sigma_y**2


def _draw_updates(p, rng, chunk=20_000):
    """``(trials, d)`` first-step updates, drawn in chunks."""
    out = np.empty((p.trials, p.d))
    for s in range(0, p.trials, chunk):
        n = min(chunk, p.trials - s)
        z = rng.normal(0.0, 1.0, size=(n, p.batch, p.d)) * p.sigma_z
        y = rng.normal(0.0, 1.0, size=(n, p.batch)) * p.sigma_y
        phi = rng.normal(0.0, 1.0, size=(n, p.d)) * p.sigma_phi
        err = np.einsum("nbd,nd->nb", z, phi) - y
        out[s : s + n] = -(p.eta / p.batch) * np.einsum("nbd,nb->nd", z, err)
    return out


def variance_law_mc(p):
    """Measured ``Var(dphi_j)`` (averaged over j) against the closed forms."""
    p.validate()
    if p.d == 0:
        meas = 0.0
        rel_se = 0.0
    else:
        upd = _draw_updates(p, Rng(p.seed).child(f"vlaw:{p.sigma_z}:{p.sigma_phi}"))
        per_j = upd.var(axis=0)
        meas = float(per_j.mean())
        # standard error of a variance estimate from the fourth moment
        m4 = float(np.mean(upd**4))
        rel_se = float(np.sqrt(max(m4 / meas**2 - 1.0, 0.0) / (p.trials * p.d))) if meas > 0 else 0.0
    return {
        **asdict(p),
        "measured": meas,
        "rel_se": rel_se,
        "predicted_random": predicted_product(p),
        "predicted_exact": predicted_exact(p),
        "predicted_zero": predicted_zero(p),
        "predicted_zero_b2": predicted_zero(p, 2),
    }


def variance_ratio(p_random, **mc_kw):
    """Random-init vs zero-init variance ratio, measured and in closed form."""
    p_zero = VarianceLawParams(**{**asdict(p_random), "sigma_phi": 0.0})
    r = variance_law_mc(p_random)
    z = variance_law_mc(p_zero)
    s = p_random
    return {
        "measured": r["measured"] / z["measured"] if z["measured"] else float("nan"),
        "predicted": 1.0 + s.d * s.sigma_z**2 * s.sigma_phi**2 / s.sigma_y**2,
        "exact": 1.0 + (s.d + s.batch + 1) * s.sigma_z**2 * s.sigma_phi**2 / s.sigma_y**2,
        "random": r,
        "zero": z,
    }


def batch_exponent_note(zero_result):
    """Which power of B the zero-init measurement supports."""
    m = zero_result["measured"]
    b1, b2 = zero_result["predicted_zero"], zero_result["predicted_zero_b2"]
    if m == 0 or b1 == 0:
        return "degenerate: zero features or zero labels give zero variance under both forms"
    pick = "eta^2/B" if abs(np.log(m / b1)) < abs(np.log(m / b2)) else "eta^2/B^2"
    return (f"zero-init variance {m:.4g}: eta^2/B form gives {b1:.4g}, eta^2/B^2 form gives {b2:.4g}; "
            f"measurement supports {pick}")


def grid(sigma_zs=(0.5, 1.0, 2.0), sigma_phis=(0.0, 0.5, 1.0), **base):
    rows = []
    for sz in sigma_zs:
        for sp in sigma_phis:
            rows.append(variance_law_mc(VarianceLawParams(sigma_z=sz, sigma_phi=sp, **base)))
    return rows


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in CSV_COLUMNS})
