//! Registry of the ODE systems a bundle can be trained on.
//!
//! Every system is explicit, `dx/dt = f(t, x; θ)`, and its residual is
//! canonicalized as `ẋ − f(t, x; θ)`.

use std::fmt;
use std::str::FromStr;

use crate::ad::Scalar;
use crate::error::{Error, Result};

/// Distance from a primary inside which the three-body field is rejected.
pub const CRTBP_SINGULAR_RADIUS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OdeSystem {
    /// Planar circular restricted three-body problem, rotating frame.
    /// State `(x, y, u, v)`, parameter `μ`.
    Crtbp,
    /// Pendulum with a damped spring for negative angles.
    /// State `(θ, ω)`, parameters `(k, c)`; `g = ℓ = m = 1`.
    ReboundPendulum,
    /// State `(v, w)`, parameters `(a, b, τ, I)`.
    FitzHughNagumo,
    /// Simple harmonic oscillator with `m = 1`. State `(x, v)`, parameter `k`.
    Sho,
}

impl OdeSystem {
    pub const ALL: [OdeSystem; 4] = [
        OdeSystem::Crtbp,
        OdeSystem::ReboundPendulum,
        OdeSystem::FitzHughNagumo,
        OdeSystem::Sho,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OdeSystem::Crtbp => "crtbp",
            OdeSystem::ReboundPendulum => "rebound_pendulum",
            OdeSystem::FitzHughNagumo => "fitzhugh_nagumo",
            OdeSystem::Sho => "sho",
        }
    }

    /// State dimension `n`.
    pub fn state_dim(self) -> usize {
        match self {
            OdeSystem::Crtbp => 4,
            _ => 2,
        }
    }

    pub fn state_labels(self) -> &'static [&'static str] {
        match self {
            OdeSystem::Crtbp => &["x", "y", "u", "v"],
            OdeSystem::ReboundPendulum => &["theta", "omega"],
            OdeSystem::FitzHughNagumo => &["v", "w"],
            OdeSystem::Sho => &["x", "v"],
        }
    }

    /// Names of the full parameter vector, in the order `rhs` expects.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            OdeSystem::Crtbp => &["mu"],
            OdeSystem::ReboundPendulum => &["k", "c"],
            OdeSystem::FitzHughNagumo => &["a", "b", "tau", "I"],
            OdeSystem::Sho => &["k"],
        }
    }

    pub fn default_params(self) -> &'static [f64] {
        match self {
            OdeSystem::Crtbp => &[0.01],
            OdeSystem::ReboundPendulum => &[3.5, 1.0],
            OdeSystem::FitzHughNagumo => &[0.7, 0.6, 12.5, 0.8],
            OdeSystem::Sho => &[1.0],
        }
    }

    /// Floating-point operations in one `rhs` call, with transcendental
    /// functions (sin, sqrt, pow) costing `transcendental` each.
    pub fn rhs_flops(self, transcendental: u64) -> u64 {
        match self {
            // -k*x
            OdeSystem::Sho => 2,
            // sin, H, relu argument (2 mul, 1 sub, 1 neg), product, sum
            OdeSystem::ReboundPendulum => transcendental + 8,
            // v - v³/3 - w + I ; (v + a - b w)/τ
            OdeSystem::FitzHughNagumo => 12,
            // two distances cubed (pow), quotients and frame terms
            OdeSystem::Crtbp => 2 * transcendental + 30,
        }
    }

    pub fn rhs_f64(self, t: f64, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        self.rhs(t, x, p)
    }

    /// `f(t, x; θ)` for the full parameter vector `p`.
    pub fn rhs<S: Scalar>(self, t: S, x: &[S], p: &[S]) -> Result<Vec<S>> {
        self.check_dims(x.len(), p.len())?;
        match self {
            OdeSystem::Crtbp => crtbp_rhs(t, x, p[0]),
            OdeSystem::ReboundPendulum => Ok(pendulum_rhs(x, p[0], p[1])),
            OdeSystem::FitzHughNagumo => fhn_rhs(x, p),
            OdeSystem::Sho => sho_rhs(x, p[0]),
        }
    }

    /// `ẋ − f(t, x; θ)`.
    pub fn residual<S: Scalar>(self, x: &[S], xdot: &[S], t: S, p: &[S]) -> Result<Vec<S>> {
        if xdot.len() != x.len() {
            return Err(Error::Dimension {
                context: "residual derivative",
                expected: x.len(),
                got: xdot.len(),
            });
        }
        let f = self.rhs(t, x, p)?;
        Ok(xdot.iter().zip(f).map(|(&d, fi)| d - fi).collect())
    }

    fn check_dims(self, n: usize, p: usize) -> Result<()> {
        if n != self.state_dim() {
            return Err(Error::Dimension {
                context: "state vector",
                expected: self.state_dim(),
                got: n,
            });
        }
        if p != self.param_names().len() {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected: self.param_names().len(),
                got: p,
            });
        }
        Ok(())
    }
}

impl fmt::Display for OdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OdeSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OdeSystem::ALL
            .into_iter()
            .find(|sys| sys.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "system",
                    format!("unknown system `{s}` (expected crtbp, rebound_pendulum, fitzhugh_nagumo or sho)"),
                )
            })
    }
}

fn crtbp_rhs<S: Scalar>(t: S, q: &[S], mu: S) -> Result<Vec<S>> {
    let (x, y, u, v) = (q[0], q[1], q[2], q[3]);
    let xm1 = x - 1.0;
    let r2_moon = xm1 * xm1 + y * y;
    let r2_earth = x * x + y * y;
    let lim = CRTBP_SINGULAR_RADIUS * CRTBP_SINGULAR_RADIUS;
    if r2_earth.value() <= lim || r2_moon.value() <= lim {
        return Err(Error::Singularity {
            t: t.value(),
            message: format!(
                "three-body state ({}, {}) at a primary",
                x.value(),
                y.value()
            ),
        });
    }
    let d_moon = r2_moon.powf(1.5);
    let d_earth = r2_earth.powf(1.5);
    let one_minus_mu = -mu + 1.0;
    let du = x - mu + v * 2.0 - (mu * xm1 / d_moon + one_minus_mu * x / d_earth);
    let dv = y - u * 2.0 - (mu * y / d_moon + one_minus_mu * y / d_earth);
    Ok(vec![u, v, du, dv])
}

fn pendulum_rhs<S: Scalar>(s: &[S], k: S, c: S) -> Vec<S> {
    let (theta, omega) = (s[0], s[1]);
    let spring = (-theta).heaviside() * (-(k * theta) - c * omega).relu();
    vec![omega, -theta.sin() + spring]
}

fn fhn_rhs<S: Scalar>(s: &[S], p: &[S]) -> Result<Vec<S>> {
    let (v, w) = (s[0], s[1]);
    let (a, b, tau, i) = (p[0], p[1], p[2], p[3]);
    if tau.value() <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "FitzHugh-Nagumo time scale tau must be positive, got {}",
            tau.value()
        )));
    }
    let dv = v - v * v * v / 3.0 - w + i;
    let dw = (v + a - b * w) / tau;
    Ok(vec![dv, dw])
}

fn sho_rhs<S: Scalar>(s: &[S], k: S) -> Result<Vec<S>> {
    if k.value() <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "oscillator spring constant must be positive, got {}",
            k.value()
        )));
    }
    Ok(vec![s[1], -(k * s[0])])
}

/// Closed-form oscillator solution `(x(t), v(t))` from `(x0, v0)` at `t = 0`.
pub fn sho_exact(x0: f64, v0: f64, k: f64, t: f64) -> [f64; 2] {
    let w = k.sqrt();
    let (s, c) = (w * t).sin_cos();
    [x0 * c + v0 / w * s, -x0 * w * s + v0 * c]
}

/// Cubic nullcline of the FitzHugh-Nagumo model, `w = v − v³/3 + I`.
pub fn fhn_cubic_nullcline(v: f64, i: f64) -> f64 {
    v - v * v * v / 3.0 + i
}

/// Linear nullcline, `w = (v + a)/b`.
pub fn fhn_linear_nullcline(v: f64, a: f64, b: f64) -> f64 {
    (v + a) / b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Dual, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Second evaluation of the three-body field written from the potential
    /// gradient form, with explicit distances.
    fn crtbp_reference(q: [f64; 4], mu: f64) -> [f64; 4] {
        let [x, y, u, v] = q;
        let r1 = (x * x + y * y).sqrt();
        let r2 = ((x - 1.0).powi(2) + y * y).sqrt();
        let g1 = (1.0 - mu) / (r1 * r1 * r1);
        let g2 = mu / (r2 * r2 * r2);
        let ax = (x - mu) + 2.0 * v - g1 * x - g2 * (x - 1.0);
        let ay = y - 2.0 * u - g1 * y - g2 * y;
        [u, v, ax, ay]
    }

    #[test]
    fn crtbp_matches_independent_evaluator() {
        let q = [1.05, 0.1, -0.45, -0.25];
        let f = OdeSystem::Crtbp.rhs_f64(0.0, &q, &[0.01]).unwrap();
        let r = crtbp_reference(q, 0.01);
        for i in 0..4 {
            assert!(f[i].is_finite());
            assert!(
                (f[i] - r[i]).abs() <= 1e-14 * r[i].abs().max(1.0),
                "{i}: {} vs {}",
                f[i],
                r[i]
            );
        }
    }

    #[test]
    fn crtbp_on_axis_has_no_vertical_acceleration() {
        let f = OdeSystem::Crtbp
            .rhs_f64(0.0, &[0.5, 0.0, 0.0, 0.0], &[0.01])
            .unwrap();
        assert_eq!(f[1], 0.0);
        assert_eq!(f[3], 0.0);
    }

    #[test]
    fn crtbp_without_moon_is_two_body_rotating_field() {
        let q = [0.7, 0.3, 0.1, -0.2];
        let f = OdeSystem::Crtbp.rhs_f64(0.0, &q, &[0.0]).unwrap();
        let r3 = (0.7f64 * 0.7 + 0.09).powf(1.5);
        assert!((f[2] - (0.7 + 2.0 * -0.2 - 0.7 / r3)).abs() < 1e-15);
        assert!((f[3] - (0.3 - 2.0 * 0.1 - 0.3 / r3)).abs() < 1e-15);
    }

    #[test]
    fn crtbp_rejects_primaries() {
        for pos in [[0.0, 0.0], [1.0, 0.0], [1.0 + 1e-10, 0.0]] {
            let err = OdeSystem::Crtbp
                .rhs_f64(0.25, &[pos[0], pos[1], 0.0, 0.0], &[0.01])
                .unwrap_err();
            assert!(matches!(err, Error::Singularity { t, .. } if t == 0.25));
        }
    }

    #[test]
    fn crtbp_reflection_symmetry() {
        // y -> -y at rest: x-components even, y-components odd
        let mu = [0.01];
        let a = OdeSystem::Crtbp
            .rhs_f64(0.0, &[0.8, 0.2, 0.0, 0.0], &mu)
            .unwrap();
        let b = OdeSystem::Crtbp
            .rhs_f64(0.0, &[0.8, -0.2, 0.0, 0.0], &mu)
            .unwrap();
        assert_eq!(a[2], b[2]);
        assert_eq!(a[3], -b[3]);
    }

    #[test]
    fn pendulum_cases() {
        let sys = OdeSystem::ReboundPendulum;
        let f = sys.rhs_f64(0.0, &[0.5, 0.0], &[3.0, 1.0]).unwrap();
        assert_eq!(f[1], -(0.5f64.sin()));
        let f = sys.rhs_f64(0.0, &[-0.1, 0.0], &[3.0, 1.0]).unwrap();
        assert!((f[1] - (0.1f64.sin() + 0.3)).abs() < 1e-15);
        let f = sys.rhs_f64(0.0, &[-0.1, 1.0], &[3.0, 10.0]).unwrap();
        assert_eq!(f[1], 0.1f64.sin());
        // contact point: spring off
        let f = sys.rhs_f64(0.0, &[0.0, -1.0], &[3.0, 1.0]).unwrap();
        assert_eq!(f[1], 0.0);
    }

    #[test]
    fn fhn_nullclines_and_values() {
        let p = [0.7, 0.6, 12.0, 0.8];
        let sys = OdeSystem::FitzHughNagumo;
        for v in [-1.5, -0.3, 0.0, 0.9, 2.0] {
            let w = fhn_cubic_nullcline(v, p[3]);
            let f = sys.rhs_f64(0.0, &[v, w], &p).unwrap();
            assert!(f[0].abs() < 1e-15);
            let w = fhn_linear_nullcline(v, p[0], p[1]);
            let f = sys.rhs_f64(0.0, &[v, w], &p).unwrap();
            assert!(f[1].abs() < 1e-15);
        }
        let f = sys.rhs_f64(0.0, &[0.0, 0.0], &p).unwrap();
        assert_eq!(f, vec![0.8, 0.7 / 12.0]);
        assert!(sys
            .rhs_f64(0.0, &[0.0, 0.0], &[0.7, 0.6, 0.0, 0.8])
            .is_err());
    }

    #[test]
    fn sho_cases() {
        let sys = OdeSystem::Sho;
        assert_eq!(
            sys.rhs_f64(0.0, &[1.0, 0.0], &[1.0]).unwrap(),
            vec![0.0, -1.0]
        );
        assert_eq!(
            sys.rhs_f64(0.0, &[0.0, 1.0], &[2.0]).unwrap(),
            vec![1.0, -0.0]
        );
        assert!(sys.rhs_f64(0.0, &[0.0, 1.0], &[0.0]).is_err());
        // energy is conserved along the field: d/dt(v²/2 + k x²/2) = v·(-kx) + kx·v
        let (x, v, k) = (0.3, -0.8, 1.7);
        let f = sys.rhs_f64(0.0, &[x, v], &[k]).unwrap();
        assert_eq!(v * f[1] + k * x * f[0], 0.0);
    }

    #[test]
    fn residual_examples() {
        let r = OdeSystem::Sho
            .residual(&[1.0, 0.0], &[0.0, 0.0], 0.0, &[1.0])
            .unwrap();
        assert_eq!(r, vec![0.0, 1.0]);
    }

    fn random_state(sys: OdeSystem, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        match sys {
            OdeSystem::Crtbp => (
                vec![
                    rng.gen_range(1.0..1.1),
                    rng.gen_range(0.05..0.15),
                    rng.gen_range(-0.5..-0.4),
                    rng.gen_range(-0.3..-0.2),
                ],
                vec![0.01],
            ),
            OdeSystem::ReboundPendulum => (
                vec![rng.gen_range(-0.5..1.0), rng.gen_range(-1.0..1.0)],
                vec![rng.gen_range(2.0..5.0), rng.gen_range(0.0..2.0)],
            ),
            OdeSystem::FitzHughNagumo => (
                vec![rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..2.0)],
                vec![
                    rng.gen_range(0.6..0.9),
                    rng.gen_range(0.6..0.9),
                    rng.gen_range(10.0..14.0),
                    rng.gen_range(0.6..1.0),
                ],
            ),
            OdeSystem::Sho => (
                vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                vec![rng.gen_range(0.5..2.0)],
            ),
        }
    }

    #[test]
    fn residual_vanishes_on_the_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for sys in OdeSystem::ALL {
            for _ in 0..1000 {
                let (x, p) = random_state(sys, &mut rng);
                let t = rng.gen_range(0.0..5.0);
                let f = sys.rhs_f64(t, &x, &p).unwrap();
                let r = sys.residual(&x, &f, t, &p).unwrap();
                assert!(r.iter().all(|v| v.abs() <= 1e-14), "{sys}: {r:?}");
            }
        }
    }

    #[test]
    fn scalar_types_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for sys in OdeSystem::ALL {
            let (x, p) = random_state(sys, &mut rng);
            let plain = sys.rhs_f64(0.3, &x, &p).unwrap();
            let xd: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
            let pd: Vec<Dual> = p.iter().map(|&v| Dual::constant(v)).collect();
            let dual = sys.rhs(Dual::constant(0.3), &xd, &pd).unwrap();
            let tape = Tape::new();
            let xv: Vec<_> = x.iter().map(|&v| tape.leaf(v)).collect();
            let pv: Vec<_> = p.iter().map(|&v| tape.constant(v)).collect();
            let taped = sys.rhs(tape.constant(0.3), &xv, &pv).unwrap();
            for i in 0..plain.len() {
                assert_eq!(plain[i], dual[i].re);
                assert_eq!(plain[i], taped[i].primal());
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for sys in OdeSystem::ALL {
            assert_eq!(sys.name().parse::<OdeSystem>().unwrap(), sys);
        }
        assert!("lorenz".parse::<OdeSystem>().is_err());
    }

    #[test]
    fn exact_oscillator() {
        let [x, v] = sho_exact(1.0, 0.0, 1.0, std::f64::consts::FRAC_PI_2);
        assert!(x.abs() < 1e-15 && (v + 1.0).abs() < 1e-15);
    }
}
