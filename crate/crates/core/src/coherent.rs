//! Spin-coherent-state instanton.
//!
//! Each spin carries a Bloch vector
//! `n_j = (sin θ_j cosh φ_j, -i sin θ_j sinh φ_j, cos θ_j)` with real `θ_j`
//! and real `φ_j` (the azimuthal angle is `-i φ_j`). For
//! `H = -Γ Σ n_x,j - N g(Σ n_z,j / N)` the imaginary-time instanton
//! equations become real:
//!
//! ```text
//! dθ_j/dτ = -2Γ sinh φ_j
//! dφ_j/dτ = -2λ + 2Γ cot θ_j cosh φ_j,   λ = g'(Σ cos θ_j / N)
//! ```
//!
//! which for equal spins reproduce the vector equations of the instanton
//! module with `(m_x, i m_y, m_z) = (sin θ cosh φ, sin θ sinh φ, cos θ)`.
//! The action is `𝓐 = ½ Σ_j ∫ (1 - cos θ_j) dφ_j/dτ dτ + ∫ H dτ` with `ℏ = 1`.
//!
//! Only initial-value problems are integrated here; boundary data come from
//! the instanton module.

use crate::instanton::{vector_rhs, InstantonTrajectory};
use crate::model::ModelSpec;
use crate::numerics::{dopri5, simpson};
use crate::Error;

/// Uniform grid size for coherent trajectories (1024 intervals).
pub const DEFAULT_GRID: usize = 1025;

#[derive(Debug, Clone, PartialEq)]
pub struct BlochTrajectory {
    pub taus: Vec<f64>,
    /// `theta[j][k] = θ_j(τ_k)`
    pub theta: Vec<Vec<f64>>,
    pub varphi: Vec<Vec<f64>>,
    pub action: f64,
}

/// Berry and energy parts of the action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionParts {
    pub berry: f64,
    pub energy: f64,
}

impl ActionParts {
    pub fn total(&self) -> f64 {
        self.berry + self.energy
    }
}

/// Derivative of the packed state `[θ_1..θ_N, φ_1..φ_N]`.
pub fn bloch_rhs(state: &[f64], spec: &ModelSpec, d: &mut [f64]) {
    let n = state.len() / 2;
    let (theta, varphi) = state.split_at(n);
    let mean = theta.iter().map(|t| t.cos()).sum::<f64>() / n as f64;
    let lambda = spec.cost.g1(mean);
    let g = spec.gamma;
    for j in 0..n {
        let (st, ct) = theta[j].sin_cos();
        d[j] = -2.0 * g * varphi[j].sinh();
        d[n + j] = -2.0 * lambda + 2.0 * g * ct / st * varphi[j].cosh();
    }
}

/// `H[n_1..n_N]` with the hyperbolic parametrisation.
pub fn energy(theta: &[f64], varphi: &[f64], spec: &ModelSpec) -> f64 {
    let n = theta.len() as f64;
    let mean = theta.iter().map(|t| t.cos()).sum::<f64>() / n;
    let trans: f64 = theta.iter().zip(varphi).map(|(t, p)| t.sin() * p.cosh()).sum();
    -spec.gamma * trans - n * spec.cost.g(mean)
}

/// Integrate from `(θ_j(0), φ_j(0))` over `[0, beta]` on `grid` points.
pub fn integrate(
    spec: &ModelSpec,
    theta0: &[f64],
    varphi0: &[f64],
    beta: f64,
    grid: usize,
) -> Result<BlochTrajectory, Error> {
    if theta0.len() != varphi0.len() || theta0.is_empty() {
        return Err(Error::Dimension("θ and φ must have equal nonzero length".into()));
    }
    if grid < 3 {
        return Err(Error::Parameter("grid needs at least 3 points".into()));
    }
    let n = theta0.len();
    let y0: Vec<f64> = theta0.iter().chain(varphi0).copied().collect();
    let taus: Vec<f64> = (0..grid).map(|k| beta * k as f64 / (grid - 1) as f64).collect();
    let sol = dopri5(|_, y, d| bloch_rhs(y, spec, d), &y0, &taus, 1e-13, 1e-15)
        .map_err(|e| Error::Numerical(format!("coherent integration failed: {e:?}")))?;
    let theta = (0..n).map(|j| sol.y.iter().map(|y| y[j]).collect()).collect();
    let varphi = (0..n).map(|j| sol.y.iter().map(|y| y[n + j]).collect()).collect();
    let mut t = BlochTrajectory { taus, theta, varphi, action: 0.0 };
    t.action = action(&t, spec)?.total();
    Ok(t)
}

/// Start every spin at the instanton's initial point and integrate.
pub fn from_instanton(inst: &InstantonTrajectory, n_spins: usize, grid: usize) -> Result<BlochTrajectory, Error> {
    let s0 = inst.state_at(0.0);
    let theta0 = s0.m_z.acos();
    let varphi0 = s0.p;
    integrate(inst.spec(), &vec![theta0; n_spins], &vec![varphi0; n_spins], inst.beta, grid)
}

impl BlochTrajectory {
    pub fn n_spins(&self) -> usize {
        self.theta.len()
    }

    /// `(n_x, i n_y, n_z)` of spin `j` at grid index `k`.
    pub fn vector(&self, j: usize, k: usize) -> [f64; 3] {
        let (st, ct) = self.theta[j][k].sin_cos();
        let p = self.varphi[j][k];
        [st * p.cosh(), st * p.sinh(), ct]
    }

    /// Time-reversed trajectory `τ → β - τ`.
    pub fn reversed(&self) -> Self {
        let rev = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().rev().copied().collect()).collect();
        Self { taus: self.taus.clone(), theta: rev(&self.theta), varphi: rev(&self.varphi), action: self.action }
    }

    fn state(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        (self.theta.iter().map(|r| r[k]).collect(), self.varphi.iter().map(|r| r[k]).collect())
    }
}

/// Berry and energy integrals by Simpson's rule. The Berry integrand uses
/// the grid derivative of `φ`, so the result holds for any sampled path;
/// a half-grid estimate guards against under-resolution.
pub fn action(traj: &BlochTrajectory, spec: &ModelSpec) -> Result<ActionParts, Error> {
    let full = action_on(traj, spec, 1);
    let k = traj.taus.len();
    if k >= 9 && (k - 1) % 4 == 0 {
        let half = action_on(traj, spec, 2);
        let scale = 1.0 + full.total().abs();
        if (half.total() - full.total()).abs() > 1e-4 * scale {
            return Err(Error::Convergence(format!(
                "action not resolved: {} on the full grid vs {} on the half grid",
                full.total(),
                half.total()
            )));
        }
    }
    Ok(full)
}

fn action_on(traj: &BlochTrajectory, spec: &ModelSpec, stride: usize) -> ActionParts {
    let idx: Vec<usize> = (0..traj.taus.len()).step_by(stride).collect();
    let h = traj.taus[idx[1]] - traj.taus[idx[0]];
    let e: Vec<f64> = idx
        .iter()
        .map(|&k| {
            let (t, p) = traj.state(k);
            energy(&t, &p, spec)
        })
        .collect();
    let mut berry = 0.0;
    for (th, ph) in traj.theta.iter().zip(&traj.varphi) {
        let t: Vec<f64> = idx.iter().map(|&k| th[k]).collect();
        let p: Vec<f64> = idx.iter().map(|&k| ph[k]).collect();
        let dp = grid_derivative(&p, h);
        let y: Vec<f64> = t.iter().zip(&dp).map(|(t, d)| (1.0 - t.cos()) * d).collect();
        berry += 0.5 * simpson(&y, h);
    }
    ActionParts { berry, energy: simpson(&e, h) }
}

/// Fourth-order finite differences, one-sided near the ends.
fn grid_derivative(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    if n < 5 {
        return (0..n)
            .map(|k| {
                let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
                (y[b] - y[a]) / ((b - a) as f64 * h)
            })
            .collect();
    }
    let first = |s: [f64; 5]| (-25.0 * s[0] + 48.0 * s[1] - 36.0 * s[2] + 16.0 * s[3] - 3.0 * s[4]) / (12.0 * h);
    let second = |s: [f64; 5]| (-3.0 * s[0] - 10.0 * s[1] + 18.0 * s[2] - 6.0 * s[3] + s[4]) / (12.0 * h);
    let head = [y[0], y[1], y[2], y[3], y[4]];
    let tail = [y[n - 1], y[n - 2], y[n - 3], y[n - 4], y[n - 5]];
    (0..n)
        .map(|k| match k {
            0 => first(head),
            1 => second(head),
            k if k == n - 1 => -first(tail),
            k if k == n - 2 => -second(tail),
            k => (y[k - 2] - 8.0 * y[k - 1] + 8.0 * y[k + 1] - y[k + 2]) / (12.0 * h),
        })
        .collect()
}

/// `𝓐(n*)` of a converged trajectory. The prefactor is not computed.
pub fn tunneling_exponent(traj: &BlochTrajectory) -> f64 {
    traj.action
}

/// `N [βε + ½((p2 - p1) - (m2 p2 - m1 p1) + ∫p dm)]`, the action of a
/// symmetric coherent path in terms of instanton quantities.
pub fn instanton_action(inst: &InstantonTrajectory, n_spins: usize) -> f64 {
    let (m1, m2, p1, p2) = (inst.m1, inst.m2, inst.p1, inst.p2);
    n_spins as f64 * (inst.beta * inst.energy + 0.5 * ((p2 - p1) - (m2 * p2 - m1 * p1) + inst.wkb_action))
}

/// Maximum pointwise deviation in `(m_z, i m_y, m_x)` between a coherent
/// trajectory and an instanton trajectory, over all spins and grid points.
pub fn max_deviation(coh: &BlochTrajectory, inst: &InstantonTrajectory) -> f64 {
    let mut dev: f64 = 0.0;
    for (k, &tau) in coh.taus.iter().enumerate() {
        let s = inst.state_at(tau);
        for j in 0..coh.n_spins() {
            let [x, y, z] = coh.vector(j, k);
            dev = dev.max((x - s.m_x).abs()).max((y - s.i_m_y).abs()).max((z - s.m_z).abs());
        }
    }
    dev
}

/// Residual of the vector equations for the mean Bloch vector, with the
/// time derivative obtained from the angle equations by the chain rule.
pub fn vector_residual(coh: &BlochTrajectory, spec: &ModelSpec) -> f64 {
    let n = coh.n_spins();
    let mut worst: f64 = 0.0;
    for k in 0..coh.taus.len() {
        let (t, p) = coh.state(k);
        let y: Vec<f64> = t.iter().chain(&p).copied().collect();
        let mut d = vec![0.0; 2 * n];
        bloch_rhs(&y, spec, &mut d);
        let mut mean = [0.0; 3];
        let mut dmean = [0.0; 3];
        for j in 0..n {
            let (st, ct) = t[j].sin_cos();
            let (sh, ch) = (p[j].sinh(), p[j].cosh());
            let (dt, dp) = (d[j], d[n + j]);
            mean[0] += st * ch / n as f64;
            mean[1] += st * sh / n as f64;
            mean[2] += ct / n as f64;
            dmean[0] += (ct * ch * dt + st * sh * dp) / n as f64;
            dmean[1] += (ct * sh * dt + st * ch * dp) / n as f64;
            dmean[2] += -st * dt / n as f64;
        }
        let mut v = [0.0; 3];
        vector_rhs(spec, &mean, &mut v);
        for i in 0..3 {
            worst = worst.max((v[i] - dmean[i]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instanton::{shoot, Branch};
    use crate::model::CostFunction;

    fn p3(n: usize) -> ModelSpec {
        ModelSpec::new(n, 4.0, 0.5, CostFunction::p_spin(3)).unwrap()
    }

    #[test]
    fn aligned_with_field_is_stationary() {
        let s = ModelSpec::new(2, 1.0, 0.7, CostFunction::polynomial(vec![0.0, 0.0, 1.0]).unwrap()).unwrap();
        let y = [std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, 0.0, 0.0];
        let mut d = [1.0; 4];
        bloch_rhs(&y, &s, &mut d);
        assert!(d.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn unit_vector_under_hyperbolic_parametrisation() {
        let s = p3(3);
        let t = integrate(&s, &[1.0, 1.2, 1.4], &[0.1, -0.2, 0.05], 1.0, 65).unwrap();
        for j in 0..3 {
            for k in 0..65 {
                let [x, y, z] = t.vector(j, k);
                assert!((x * x - y * y + z * z - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn symmetric_initial_data_stay_symmetric() {
        let s = p3(2);
        let t = integrate(&s, &[1.3, 1.3], &[0.2, 0.2], 2.0, 257).unwrap();
        for k in 0..257 {
            assert!((t.theta[0][k] - t.theta[1][k]).abs() < 1e-10);
            assert!((t.varphi[0][k] - t.varphi[1][k]).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_instanton_trajectory() {
        let s = p3(4);
        let inst = shoot(&s, 4.0, Branch::Saddle).unwrap();
        let coh = from_instanton(&inst, 4, DEFAULT_GRID).unwrap();
        assert!(max_deviation(&coh, &inst) < 1e-6);
        assert!(vector_residual(&coh, &s) < 1e-8);
    }

    #[test]
    fn action_equals_instanton_expression() {
        let s = p3(4);
        let inst = shoot(&s, 4.0, Branch::Saddle).unwrap();
        let coh = from_instanton(&inst, 4, DEFAULT_GRID).unwrap();
        let a = tunneling_exponent(&coh);
        assert!((a - instanton_action(&inst, 4)).abs() < 1e-6, "{a} vs {}", instanton_action(&inst, 4));
    }

    #[test]
    fn static_action_has_no_berry_term() {
        let s = ModelSpec::new(3, 2.0, 0.5, CostFunction::polynomial(vec![0.0, 0.0, 1.0]).unwrap()).unwrap();
        let h = std::f64::consts::FRAC_PI_2;
        let t = integrate(&s, &[h; 3], &[0.0; 3], 2.0, 33).unwrap();
        let parts = action(&t, &s).unwrap();
        assert!(parts.berry.abs() < 1e-14);
        assert!((parts.energy - 2.0 * energy(&[h; 3], &[0.0; 3], &s)).abs() < 1e-12);
    }

    #[test]
    fn reversal_flips_berry_term() {
        let s = p3(4);
        let inst = shoot(&s, 4.0, Branch::Saddle).unwrap();
        let coh = from_instanton(&inst, 4, DEFAULT_GRID).unwrap();
        let a = action(&coh, &s).unwrap();
        let b = action(&coh.reversed(), &s).unwrap();
        assert!((a.berry + b.berry).abs() < 1e-8);
        assert!((a.energy - b.energy).abs() < 1e-12);
    }

    #[test]
    fn exponent_scales_with_n_and_ignores_labels() {
        let inst = shoot(&p3(4), 4.0, Branch::Saddle).unwrap();
        let a = from_instanton(&inst, 3, DEFAULT_GRID).unwrap();
        let b = from_instanton(&inst, 6, DEFAULT_GRID).unwrap();
        assert!((tunneling_exponent(&b) / tunneling_exponent(&a) - 2.0).abs() < 1e-8);
        let s = p3(3);
        let x = integrate(&s, &[1.0, 1.2, 1.4], &[0.1, -0.2, 0.05], 1.0, 129).unwrap();
        let y = integrate(&s, &[1.4, 1.0, 1.2], &[0.05, 0.1, -0.2], 1.0, 129).unwrap();
        assert!((x.action - y.action).abs() < 1e-12);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let s = p3(2);
        let t = integrate(&s, &[0.3, 0.3], &[2.5, 2.5], 0.5, 9);
        assert!(t.is_err());
    }

    #[test]
    fn exponent_grows_with_barrier() {
        // 𝓐 carries the baseline β N ε, so compare the part beyond it
        let mut last = (0.0, 0.0);
        for (k, c) in [1.5, 1.2, 1.0, 0.8].into_iter().enumerate() {
            let s = ModelSpec::new(4, 4.0, 0.5, CostFunction::polynomial(vec![0.0, 0.0, 0.0, c]).unwrap()).unwrap();
            let inst = shoot(&s, 4.0, Branch::Saddle).unwrap();
            let coh = from_instanton(&inst, 4, DEFAULT_GRID).unwrap();
            let excess = (tunneling_exponent(&coh) - 4.0 * 4.0 * inst.energy).abs();
            let db = crate::instanton::barrier(&s, 4.0).unwrap().0;
            if k > 0 {
                assert!(db > last.0 && excess > last.1);
            }
            last = (db, excess);
        }
    }
}
