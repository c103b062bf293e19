"""Noise schedules: per-step mixing weights alpha_t and variances sigma2_t.

Bridge-family kinds (linear, log, bridge) pin alpha_0 = 1 and alpha_T = 0 so
the forward marginal interpolates data -> endpoint y. The ddpm-linear kind is
the baseline used for step-trimming comparisons; it additionally carries the
cumulative products alphabar_t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("linear", "log", "bridge", "ddpm-linear")


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    T: int
    alpha: np.ndarray       # T+1 values, alpha[0..T]
    sigma2: np.ndarray      # T+1 values
    peak_variance: float
    alphabar: np.ndarray | None = None  # ddpm-linear only

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=np.float64))
        object.__setattr__(self, "sigma2", np.asarray(self.sigma2, dtype=np.float64))
        if self.alphabar is not None:
            object.__setattr__(self, "alphabar",
                               np.asarray(self.alphabar, dtype=np.float64))


def make_schedule(kind, T, peak_variance=1.0, bridge_scale_to_peak=False):
    """Build a validated schedule.

    linear:  alpha_t = 1 - t/T,                sigma2_t = peak * (1 - alpha_t)
    log:     alpha_t = 1 - log(1+t)/log(1+T),  sigma2_t = peak * (1 - alpha_t)
    bridge:  alpha_t = 1 - t/T,                sigma2_t = peak * (alpha_t - alpha_t^2)
             (bridge_scale_to_peak=True multiplies by 4 so max sigma2 == peak)
    ddpm-linear: per-step beta ramps 1e-4 -> 0.02 with beta_T forced to 1 so
             the terminal marginal carries zero signal (SNR(T) = 0 exactly).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    T = int(T)
    if T < 1:
        raise ValueError("T must be >= 1")
    peak_variance = float(peak_variance)
    if not (0.0 < peak_variance <= 1.0):
        raise ValueError("peak_variance must be in (0, 1]")

    t = np.arange(T + 1, dtype=np.float64)
    if kind == "ddpm-linear":
        beta = np.zeros(T + 1)
        if T > 1:
            beta[1:T] = np.linspace(1e-4, 0.02, T - 1)
        beta[T] = 1.0
        alpha = 1.0 - beta
        alphabar = np.cumprod(alpha)
        return NoiseSchedule(kind, T, alpha, beta, peak_variance, alphabar)

    if kind in ("linear", "bridge"):
        alpha = 1.0 - t / T
    else:  # log
        alpha = 1.0 - np.log1p(t) / np.log1p(T)
    alpha[0], alpha[T] = 1.0, 0.0

    if kind == "bridge":
        scale = peak_variance * (4.0 if bridge_scale_to_peak else 1.0)
        sigma2 = scale * (alpha - alpha * alpha)
    else:
        sigma2 = peak_variance * (1.0 - alpha)
    sigma2[0] = 0.0
    return NoiseSchedule(kind, T, alpha, sigma2, peak_variance)


SNR_INF = np.inf


def snr(sched, t):
    """Signal-to-noise ratio alpha_t / sigma2_t; +inf where sigma2_t == 0.

    For ddpm-linear the marginal ratio alphabar_t / (1 - alphabar_t) is used.
    """
    t = int(t)
    if not (0 <= t <= sched.T):
        raise ValueError(f"t={t} out of range [0, {sched.T}]")
    if sched.kind == "ddpm-linear":
        ab = sched.alphabar[t]
        noise = 1.0 - ab
        return SNR_INF if noise == 0.0 else ab / noise
    s2 = sched.sigma2[t]
    if s2 == 0.0:
        # 0/0 at a pinned endpoint (bridge kind at t=T) carries no signal.
        return SNR_INF if sched.alpha[t] > 0.0 else 0.0
    return sched.alpha[t] / s2


def validate(sched):
    """Return the list of violated invariants (empty when all hold)."""
    issues = []
    a, s2, T = sched.alpha, sched.sigma2, sched.T
    if len(a) != T + 1 or len(s2) != T + 1:
        issues.append("alpha/sigma2 length != T+1")
        return issues
    if sched.kind in ("linear", "log", "bridge"):
        if a[0] != 1.0:
            issues.append("alpha_0 != 1")
        if a[T] != 0.0:
            issues.append("alpha_T != 0")
        if np.any(np.diff(a) >= 0):
            issues.append("alpha not strictly decreasing")
    if s2[0] != 0.0:
        issues.append("sigma2_0 != 0")
    if np.any(s2 < 0):
        issues.append("sigma2 has negative entries")
    if sched.kind != "ddpm-linear" and np.max(s2) > sched.peak_variance + 1e-12:
        issues.append("max sigma2 exceeds peak_variance")
    if sched.kind == "bridge" and s2[T] != 0.0:
        issues.append("bridge sigma2_T != 0")
    if sched.kind == "ddpm-linear":
        if sched.alphabar is None:
            issues.append("ddpm-linear schedule missing alphabar")
        elif np.max(np.abs(sched.alphabar - np.cumprod(a))) > 1e-12:
            issues.append("alphabar does not match cumulative product")
    snrs = [snr(sched, t) for t in range(T + 1)]
    finite = np.array([v if np.isfinite(v) else np.inf for v in snrs])
    if np.any(np.diff(finite) > 1e-12):
        issues.append("snr not non-increasing in t")
    return issues


def to_csv(sched, path):
    """Export (t, alpha, sigma2, snr) rows for plotting."""
    with open(path, "w") as f:
        f.write("t,alpha,sigma2,snr\n")
        for t in range(sched.T + 1):
            v = snr(sched, t)
            f.write(f"{t},{float(sched.alpha[t])!r},{float(sched.sigma2[t])!r},"
                    f"{'inf' if np.isinf(v) else repr(float(v))}\n")
