"""Numerical verification of the standing hypotheses of the control loop.

Estimates the constants that enter the small-data contraction argument:
the L1-in-time kernel norm A1, the pseudo-inverse gain mu, the L2 norm of
the scalar kernel g_alpha, an empirical Lipschitz modulus of the
nonlinearity, the admissible target radius kappa with its margins m_kappa
and rho_kappa, the contraction factor A_s, and a Gram-spectrum proxy for
approximate controllability of the linearized system.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .mittag import check_order, ml

__all__ = [
    "HypothesisReport",
    "FNTable",
    "Constants",
    "GramSpectrum",
    "estimate_A1",
    "estimate_FN",
    "compute_constants",
    "gram_spectrum",
    "pinv_gain",
    "g_alpha_norm",
    "hypothesis_report",
]


def estimate_A1(basis, grid, alpha, q, rtol=1e-8):
    """Integral over [0, T] of the kernel operator norm into the fractional
    power space of order q.

    The norm at time t is the supremum over basis modes of
    (lam + 1)^q * t^(alpha-1) * E_(alpha,alpha)(-lam t^alpha); the spectrum
    is shifted by one because the constant Neumann mode has eigenvalue
    zero.  Substituting u = t^alpha removes the weakly singular factor,
    leaving a bounded integrand with a boundary layer of width
    1/lam_max near u = 0 that the adaptive rule is pointed at.
    """
    alpha = check_order(alpha)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"fractional power q must be in [0, 1], got {q}")
    lam = np.unique(np.asarray(basis.eigenvalues, dtype=float))
    shift = (lam + 1.0) ** q
    gamma_a = math.gamma(alpha)

    def sup_norm(u):
        if u <= 0.0:
            return float(shift.max()) / gamma_a
        vals = shift * np.array([ml(alpha, alpha, -lm * u) for lm in lam])
        return float(vals.max())

    Ta = grid.T**alpha
    layer = 1.0 / (lam.max() + 1.0)
    pts = [p for p in (0.1 * layer, layer, 10.0 * layer, 100.0 * layer)
           if p < Ta]
    # full_output silences the roundoff report the boundary layer
    # provokes; accuracy there is far beyond what the bound needs
    out = quad(
        sup_norm, 0.0, Ta, points=pts, limit=300, epsrel=rtol,
        epsabs=0.0, full_output=1,
    )
    return out[0] / alpha


def pinv_gain(H):
    """Operator norm of the regularized pseudo-inverse (the constant mu):
    max over singular values sigma of sigma / (sigma^2 + lambda_reg)."""
    sig = np.linalg.svd(H.Mw, compute_uv=False)
    lam = H.lambda_reg
    if lam <= 0.0:
        smallest = sig[sig > 0.0]
        if smallest.size == 0:
            return math.inf
        return 1.0 / float(smallest.min())
    return float(np.max(sig / (sig**2 + lam)))


def g_alpha_norm(grid, alpha, s=2.0):
    """Discrete L^s norm of the scalar kernel g_alpha(t) = t^(alpha-1) /
    Gamma(alpha) on the run's time grid (midpoint rule).

    For alpha <= 1/2 the continuum L2 norm diverges at t = 0, so the value
    depends on the time resolution; it is reported as the grid-level
    constant actually seen by the discrete loop.
    """
    alpha = check_order(alpha)
    dt = grid.dt
    mids = (np.arange(grid.K) + 0.5) * dt
    g = mids ** (alpha - 1.0) / math.gamma(alpha)
    return float(np.sum(dt * g**s) ** (1.0 / s))


@dataclass(frozen=True)
class FNTable:
    """Empirical Lipschitz modulus of the nonlinearity on nested balls.

    values[i, j] is a randomized lower bound on
    sup { |F(z) - F(y)| / |z - y| : |z| <= radii[i], |y| <= radii[j] }
    in the discrete L2 norm; bound holds the quadratic-growth estimate
    c_emb * c_diff * (r_i + r_j) when F is a square nonlinearity, where
    c_emb and c_diff are the largest L4/L2 ratios seen over the sampled
    fields and over the sampled difference directions respectively.
    """

    radii: np.ndarray
    values: np.ndarray
    kind: str
    c_emb: float = 0.0
    c_diff: float = 0.0
    bound: np.ndarray = None

    def fn_zero(self, i):
        """F_N(radii[i], 0), the modulus against the zero state."""
        return float(self.values[i, 0])


def estimate_FN(F, radii, basis, n_samples=200, seed=0):
    """Randomized estimate of the Lipschitz modulus table of F.

    Samples smooth random fields (spectral coefficients damped by
    (1 + lam)^-1) on nested balls and records the largest Lipschitz ratio
    seen; the result is a seed-fixed lower bound on the true supremum, not
    a certificate.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size == 0 or np.any(radii < 0.0):
        raise ValueError("radii must be a non-empty 1-D array of radii >= 0")
    if not np.all(np.diff(radii) > 0.0):
        raise ValueError("radii must be strictly increasing")
    n = radii.size
    if F.is_zero:
        return FNTable(
            radii=radii, values=np.zeros((n, n)), kind="none",
            bound=np.zeros((n, n)),
        )

    domain = basis.domain
    wx, wy = domain.quad_weights()
    w = np.outer(wx, wy)
    lam = np.asarray(basis.eigenvalues, dtype=float)
    damp = (1.0 + lam).reshape(basis.mx, basis.my) ** -1.0
    rng = np.random.default_rng(seed)

    def sample_unit():
        coeffs = rng.standard_normal((basis.mx, basis.my)) * damp
        v = basis.from_spectral(coeffs)
        nrm = math.sqrt(float(np.sum(w * v**2)))
        return v / nrm

    pairs = [
        (sample_unit(), sample_unit(), rng.uniform(), rng.uniform())
        for _ in range(n_samples)
    ]
    values = np.zeros((n, n))
    c_emb = 0.0
    for v, _, _, _ in pairs:
        l4 = float(np.sum(w * v**4)) ** 0.25
        c_emb = max(c_emb, l4)  # discrete L2 -> L4 embedding constant
    c_diff = 0.0
    for i, r1 in enumerate(radii):
        for j, r2 in enumerate(radii):
            best = 0.0
            for v1, v2, s1, s2 in pairs:
                z = r1 * s1 * v1
                y = r2 * s2 * v2
                dz = z - y
                dnorm = math.sqrt(float(np.sum(w * dz**2)))
                if dnorm == 0.0:
                    continue
                c_diff = max(
                    c_diff, float(np.sum(w * dz**4)) ** 0.25 / dnorm
                )
                df = F(z) - F(y)
                ratio = math.sqrt(float(np.sum(w * df**2))) / dnorm
                best = max(best, ratio)
            values[i, j] = best
    bound = None
    if F.kind == "power" and F.power == 2:
        # |z^2 - y^2|_2 <= |z + y|_4 |z - y|_4 <= c_emb (r1 + r2)
        # * c_diff |z - y|_2 over the sampled fields and differences
        bound = abs(F.coeff) * c_emb * c_diff * np.add.outer(radii, radii)
    return FNTable(
        radii=radii, values=values, kind=F.kind, c_emb=c_emb,
        c_diff=c_diff, bound=bound,
    )


@dataclass(frozen=True)
class Constants:
    """Small-data constants: the admissible target radius and its margins."""

    kappa: float
    m_kappa: float
    rho_kappa: float
    a_s: float
    admissible: bool
    sup_fn: float


def compute_constants(a1, mu, g_norm, fn_table):
    """Largest admissible target radius kappa and the derived constants.

    kappa is the largest radius on the table grid with
    sup_(theta <= kappa) F_N(theta, 0) < 1 / (A1 + A2), A2 = mu * |g|;
    then m_kappa = (kappa/mu) (1 - A1 sup F_N),
    rho_kappa = (kappa/mu) (1 - (A1 + A2) sup F_N) and
    A_s = mu |g| sup F_N / (1 - A1 sup F_N).  When no radius qualifies the
    result carries admissible=False (hypothesis violated, not an error).
    """
    if a1 < 0.0 or mu <= 0.0 or g_norm < 0.0:
        raise ValueError("a1, g_norm must be >= 0 and mu > 0")
    a2 = mu * g_norm
    limit = 1.0 / (a1 + a2)
    best = None
    running_sup = 0.0
    for i, r in enumerate(fn_table.radii):
        running_sup = max(running_sup, fn_table.fn_zero(i))
        if running_sup < limit:
            best = (r, running_sup)
    if best is None:
        return Constants(
            kappa=0.0, m_kappa=0.0, rho_kappa=0.0, a_s=math.inf,
            admissible=False, sup_fn=float(fn_table.fn_zero(0)),
        )
    kappa, sup_fn = best
    m_kappa = (kappa / mu) * (1.0 - a1 * sup_fn)
    rho_kappa = (kappa / mu) * (1.0 - (a1 + a2) * sup_fn)
    a_s = a2 * sup_fn / (1.0 - a1 * sup_fn)
    return Constants(
        kappa=kappa, m_kappa=m_kappa, rho_kappa=rho_kappa, a_s=a_s,
        admissible=True, sup_fn=sup_fn,
    )


@dataclass(frozen=True)
class GramSpectrum:
    """Extreme singular values of the reachability matrix."""

    sigma_min: float
    sigma_max: float
    effective_rank: int
    n_dofs: int
    tol: float

    @property
    def verdict(self):
        if self.sigma_max <= 0.0 or self.sigma_min <= 0.0:
            return "violated"
        return "satisfied"


def gram_spectrum(H, tol=1e-8):
    """Singular-value summary of the weighted reachability matrix: the
    discrete proxy for approximate controllability of the linear system."""
    sig = np.linalg.svd(H.Mw, compute_uv=False)
    smax = float(sig[0]) if sig.size else 0.0
    smin = float(sig[-1]) if sig.size else 0.0
    rank = int(np.count_nonzero(sig > tol * smax)) if smax > 0.0 else 0
    return GramSpectrum(
        sigma_min=smin, sigma_max=smax, effective_rank=rank,
        n_dofs=H.Mw.shape[0], tol=tol,
    )


@dataclass
class HypothesisReport:
    """Everything the verify command prints, in one structure."""

    a1: float
    mu: float
    g_norm: float
    kappa: float
    m_kappa: float
    rho_kappa: float
    a_s: float
    gram_sigma_min: float
    gram_sigma_max: float
    effective_rank: int
    verdicts: dict = field(default_factory=dict)

    @property
    def violated(self):
        return any(v == "violated" for v in self.verdicts.values())

    def to_text(self):
        lines = [
            "hypothesis report",
            f"  A1 (kernel L1 norm)        : {self.a1:.6e}",
            f"  mu (pseudo-inverse gain)   : {self.mu:.6e}",
            f"  |g_alpha| (L2, grid level) : {self.g_norm:.6e}",
            f"  kappa (admissible radius)  : {self.kappa:.6e}",
            f"  m_kappa                    : {self.m_kappa:.6e}",
            f"  rho_kappa                  : {self.rho_kappa:.6e}",
            f"  A_s (contraction factor)   : {self.a_s:.6e}",
            f"  Gram sigma_min / sigma_max : {self.gram_sigma_min:.6e}"
            f" / {self.gram_sigma_max:.6e}",
            f"  effective rank             : {self.effective_rank}",
        ]
        for name, verdict in sorted(self.verdicts.items()):
            lines.append(f"  {name:<27}: {verdict}")
        return "\n".join(lines)


def hypothesis_report(problem, q=0.5, radii=None, n_samples=200, seed=0):
    """Full hypothesis check for a control problem.

    Verdicts: 'controllability' from the Gram spectrum (violated when the
    reachability matrix is identically zero), 'small-data-contraction'
    from the existence of an admissible radius with A_s < 1.
    """
    if radii is None:
        radii = np.geomspace(1e-4, 1.0, 9)
    H = problem.operator()
    spectrum = gram_spectrum(H)
    a1 = estimate_A1(problem.basis, problem.grid, problem.alpha, q)
    mu = pinv_gain(H)
    g_norm = g_alpha_norm(problem.grid, problem.alpha)
    fn = estimate_FN(
        problem.F, radii, problem.basis, n_samples=n_samples, seed=seed
    )
    if mu > 0.0 and math.isfinite(mu):
        consts = compute_constants(a1, mu, g_norm, fn)
    else:
        # dead actuator: no control authority, so no admissible radius
        consts = Constants(
            kappa=0.0, m_kappa=0.0, rho_kappa=0.0, a_s=math.inf,
            admissible=False, sup_fn=float(fn.fn_zero(0)),
        )
    verdicts = {
        "controllability": spectrum.verdict,
        "small-data-contraction": (
            "satisfied" if consts.admissible and consts.a_s < 1.0
            else "violated"
        ),
    }
    return HypothesisReport(
        a1=a1, mu=mu, g_norm=g_norm, kappa=consts.kappa,
        m_kappa=consts.m_kappa, rho_kappa=consts.rho_kappa, a_s=consts.a_s,
        gram_sigma_min=spectrum.sigma_min,
        gram_sigma_max=spectrum.sigma_max,
        effective_rank=spectrum.effective_rank, verdicts=verdicts,
    )
