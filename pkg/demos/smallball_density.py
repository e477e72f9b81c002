"""Small-ball behavior of the derivative mass and density smoothness of the
solution.  With sigma bounded below the mass stays away from zero in a
quantified way; the solution density at a fixed point comes out smooth.

Run as: python demos/smallball_density.py
"""

import numpy as np

import levyheat as lh

exp2 = lh.make_power_exponent(1.0, 2.0)
grid = lh.GridSpec(m_space=16, k_time=16, horizon=0.25)
u0 = lh.field_from_function(lambda x: 0.0 * x, 16)
cfg = lh.RunConfig(grid=grid, exponent=exp2, sigma=lh.get_sigma("shifted_sine"),
                   u0=u0, seed=7, replicas=512)

print("small-ball frequencies of |Du|^2 at the final-time probe")
rep = lh.smallball_probability(cfg)
print(f"  replicas {rep.replicas}, sample range "
      f"[{rep.samples.min():.4f}, {rep.samples.max():.4f}]")
print(f"  {'eps':>10} {'freq':>8} {'wilson 95% ci':>22} {'certified floor':>16}")
for e, f, lo, hi, lm in zip(rep.eps, rep.freq, rep.ci_lo, rep.ci_hi,
                            rep.lower_mass):
    print(f"  {e:10.4f} {f:8.4f}   [{lo:7.4f}, {hi:7.4f}]    {lm:12.6f}")

mask = (rep.freq > 0) & (rep.freq < 1)
fit = lh.fit_slope(rep.eps[mask], rep.freq[mask])
print(f"  log-log trend: slope {fit.slope:+.2f}, r2 {fit.r2:.4f}")

print()
print("negative moment of the mass (floor-regularized)")
neg = lh.negative_moment_estimate(cfg, p=2, replicas=256,
                                  samples=rep.samples[:256])
print(f"  E[|Du|^-2] ~ {neg.estimate:.3f} +- {neg.stderr:.3f}"
      f"   floor hits {neg.floor_fraction:.1%}  reliable={neg.reliable}")

print()
print("density of u(T, 0) over the ensemble")
sset = lh.run_ensemble(lh.RunConfig(grid=grid, exponent=exp2,
                                    sigma=lh.get_sigma("shifted_sine"),
                                    u0=u0, seed=7, replicas=2000,
                                    observables=[(0.25, 0.0)]))[0]
for mult in (1.0, 2.0):
    bw = mult * lh.silverman_bandwidth(sset.values)
    dens = lh.kde(sset.values, bandwidth=bw)
    smooth = lh.smoothness_report(dens)
    print(f"  bandwidth {dens.bandwidth:.5f} ({mult:.0f}x silverman): "
          f"integral {dens.integral():.5f}, max |f'| {smooth.max_d1:.3f}, "
          f"curvature sign changes {smooth.d2_sign_changes}, "
          f"under-smoothed {smooth.under_smoothed}")
print("  the diagnostic flags residual sampling wiggle at the default"
      " bandwidth; doubling it leaves the clean unimodal shape")
