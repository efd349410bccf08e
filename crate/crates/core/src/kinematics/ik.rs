//! Parameter-relaxed inverse kinematics.
//!
//! Each round runs damped, weighted least-squares descent on
//! `λp‖p(q) − p*‖² + λr‖ξ(q) ⊖ ξ*‖²` from the caller's seed and a handful of
//! perturbed seeds, projecting every iterate onto the joint box. If no
//! candidate meets the round's tolerances they are widened geometrically and
//! the next round starts; the loop gives up after `max_relax_rounds`.

use nalgebra::{DMatrix, DVector, Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::KinematicChain;
use super::pose::{log_unit, Pose7};
use super::KinematicsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkParams {
    pub lambda_p: f64,
    pub lambda_r: f64,
    /// Strict position tolerance (m).
    pub eps_p0: f64,
    /// Strict orientation tolerance (rad).
    pub eps_r0: f64,
    pub pos_relax_factor: f64,
    pub rot_relax_factor: f64,
    pub max_relax_rounds: u32,
    pub seeds_per_round: u32,
    /// Half-width (rad) of the uniform box perturbed seeds are drawn from.
    pub seed_spread: f64,
    pub max_iterations: u32,
    /// Levenberg damping for the least-squares step.
    pub damping: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_r: 1.0,
            eps_p0: 0.01,
            eps_r0: 0.02,
            pos_relax_factor: 5.0,
            rot_relax_factor: 2.0,
            max_relax_rounds: 3,
            seeds_per_round: 8,
            seed_spread: 0.3,
            max_iterations: 100,
            damping: 0.02,
        }
    }
}

impl IkParams {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let ok = self.lambda_p > 0.0
            && self.lambda_r > 0.0
            && self.eps_p0 > 0.0
            && self.eps_r0 > 0.0
            && self.pos_relax_factor > 1.0
            && self.rot_relax_factor > 1.0
            && self.seed_spread >= 0.0
            && self.damping >= 0.0
            && self.max_iterations > 0;
        if ok {
            Ok(())
        } else {
            Err(KinematicsError::InvalidArgument(format!(
                "invalid IK parameters: {self:?}"
            )))
        }
    }

    /// Tolerances `(ε_p, ε_r)` active in relaxation round `k`.
    pub fn tolerances_at(&self, round: u32) -> (f64, f64) {
        let k = round as i32;
        (
            self.eps_p0 * self.pos_relax_factor.powi(k),
            self.eps_r0 * self.rot_relax_factor.powi(k),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub position_error: f64,
    pub orientation_error: f64,
    pub relax_rounds_used: u32,
}

/// Hooks into the relaxation loop, used for instrumentation and tests.
pub trait IkObserver {
    fn round_started(&mut self, _round: u32, _eps_p: f64, _eps_r: f64) {}
    fn candidate(&mut self, _round: u32, _position_error: f64, _orientation_error: f64) {}
}

pub struct NoopObserver;

impl IkObserver for NoopObserver {}

#[derive(Debug, Clone)]
struct Candidate {
    q: Vec<f64>,
    pos_err: f64,
    rot_err: f64,
    cost: f64,
}

struct Problem<'a> {
    chain: &'a KinematicChain,
    target_p: Vector3<f64>,
    target_q: Quaternion<f64>,
    params: &'a IkParams,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Problem<'_> {
    /// World-frame residual `[p* − p, log(ξ* ξ⁻¹)]` and the Jacobian at `q`.
    fn residual(&self, q: &[f64]) -> (Vector3<f64>, Vector3<f64>, DMatrix<f64>) {
        let (eef, jac) = self.chain.fk_with_jacobian(q);
        let dp = self.target_p - eef.translation;
        let cur = nalgebra::UnitQuaternion::from_rotation_matrix(&eef.rotation);
        let dr = log_unit(&(self.target_q * cur.quaternion().conjugate()));
        (dp, dr, jac)
    }

    fn cost(&self, dp: &Vector3<f64>, dr: &Vector3<f64>) -> f64 {
        self.params.lambda_p * dp.norm_squared() + self.params.lambda_r * dr.norm_squared()
    }

    fn descend(&self, seed: &[f64]) -> Candidate {
        let n = seed.len();
        let wp = self.params.lambda_p.sqrt();
        let wr = self.params.lambda_r.sqrt();
        let mu2 = self.params.damping * self.params.damping;
        let mut q = seed.to_vec();
        self.chain.clamp(&mut q);
        let (mut dp, mut dr, mut jac) = self.residual(&q);
        let mut cost = self.cost(&dp, &dr);

        for _ in 0..self.params.max_iterations {
            if dp.norm() < 1e-9 && dr.norm() < 1e-9 {
                break;
            }
            let mut err = DVector::zeros(6);
            for r in 0..3 {
                err[r] = wp * dp[r];
                err[r + 3] = wr * dr[r];
            }
            let mut jw = jac.clone();
            for c in 0..n {
                for r in 0..3 {
                    jw[(r, c)] *= wp;
                    jw[(r + 3, c)] *= wr;
                }
            }

            // Active set: joints pinned at a bound whose step points outward are frozen.
            let mut free = vec![true; n];
            let mut step = DVector::zeros(n);
            for _ in 0..=n {
                let mut jf = jw.clone();
                for (c, f) in free.iter().enumerate() {
                    if !f {
                        jf.column_mut(c).fill(0.0);
                    }
                }
                let jjt = &jf * jf.transpose() + DMatrix::identity(6, 6) * mu2;
                let Some(chol) = jjt.cholesky() else { break };
                step = jf.transpose() * chol.solve(&err);
                let mut changed = false;
                for c in 0..n {
                    if !free[c] {
                        continue;
                    }
                    let at_low = q[c] <= self.lower[c] + 1e-12 && step[c] < 0.0;
                    let at_high = q[c] >= self.upper[c] - 1e-12 && step[c] > 0.0;
                    if at_low || at_high {
                        free[c] = false;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            let max_step = step.amax();
            if max_step > 0.3 {
                step *= 0.3 / max_step;
            }
            if max_step < 1e-12 {
                break;
            }

            // Backtracking on the projected step.
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..8 {
                let mut trial: Vec<f64> = q.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect();
                self.chain.clamp(&mut trial);
                let (tdp, tdr, tjac) = self.residual(&trial);
                let tcost = self.cost(&tdp, &tdr);
                if tcost < cost {
                    q = trial;
                    dp = tdp;
                    dr = tdr;
                    jac = tjac;
                    cost = tcost;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Candidate {
            q,
            pos_err: dp.norm(),
            rot_err: dr.norm(),
            cost,
        }
    }
}

/// Relaxed IK without instrumentation.
pub fn relaxed_ik(
    chain: &KinematicChain,
    target: &Pose7,
    q_seed: &[f64],
    params: &IkParams,
) -> Result<IkSolution, KinematicsError> {
    relaxed_ik_observed(chain, target, q_seed, params, &mut NoopObserver)
}

/// Relaxed IK reporting every round and candidate to `observer`.
pub fn relaxed_ik_observed(
    chain: &KinematicChain,
    target: &Pose7,
    q_seed: &[f64],
    params: &IkParams,
    observer: &mut dyn IkObserver,
) -> Result<IkSolution, KinematicsError> {
    params.validate()?;
    chain.check_dims(q_seed)?;
    if !target.is_finite() || !q_seed.iter().all(|v| v.is_finite()) {
        return Err(KinematicsError::InvalidArgument("non-finite IK target or seed".into()));
    }
    // Enforce normalization of the desired orientation before optimizing.
    let target_q = target.orientation.quaternion().normalize();
    let problem = Problem {
        chain,
        target_p: target.position,
        target_q,
        params,
        lower: chain.lower_limits(),
        upper: chain.upper_limits(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x51ED_1C0D);
    let seed_result = problem.descend(q_seed);
    let mut best = seed_result.clone();

    for round in 0..=params.max_relax_rounds {
        let (eps_p, eps_r) = params.tolerances_at(round);
        observer.round_started(round, eps_p, eps_r);
        let meets = |c: &Candidate| c.pos_err < eps_p && c.rot_err < eps_r;

        let mut found: Option<Candidate> = None;
        let mut consider = |c: Candidate, found: &mut Option<Candidate>, best: &mut Candidate| {
            observer.candidate(round, c.pos_err, c.rot_err);
            if c.cost < best.cost {
                *best = c.clone();
            }
            if meets(&c) && found.as_ref().is_none_or(|f| c.cost < f.cost) {
                *found = Some(c);
            }
        };

        consider(seed_result.clone(), &mut found, &mut best);
        if found.is_none() {
            // Earlier rounds' best may already satisfy the widened tolerances.
            consider(best.clone(), &mut found, &mut best);
        }
        if found.is_none() {
            for _ in 0..params.seeds_per_round {
                let seed: Vec<f64> = q_seed
                    .iter()
                    .zip(problem.lower.iter().zip(&problem.upper))
                    .map(|(q, (lo, hi))| {
                        let d = if params.seed_spread > 0.0 {
                            rng.random_range(-params.seed_spread..=params.seed_spread)
                        } else {
                            0.0
                        };
                        (q + d).clamp(*lo, *hi)
                    })
                    .collect();
                let c = problem.descend(&seed);
                consider(c, &mut found, &mut best);
            }
        }
        if let Some(c) = found {
            return Ok(IkSolution {
                q: c.q,
                position_error: c.pos_err,
                orientation_error: c.rot_err,
                relax_rounds_used: round,
            });
        }
    }
    Err(KinematicsError::IkInfeasible {
        position_error: best.pos_err,
        orientation_error: best.rot_err,
        rounds: params.max_relax_rounds,
    })
}
