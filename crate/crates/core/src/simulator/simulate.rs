use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{data_err, Error, Result};
use crate::io_config::Panel;
use crate::rng;

use super::draw::PosteriorDraw;

/// Student-t sampler rescaled to unit variance.
#[derive(Debug, Clone, Copy)]
pub struct UnitStudentT {
    dist: StudentT<f64>,
    scale: f64,
}

impl UnitStudentT {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 2.0) {
            return Err(data_err!("Student-t degrees of freedom must exceed 2, got {nu}"));
        }
        let dist = StudentT::new(nu).map_err(|e| data_err!("Student-t({nu}): {e}"))?;
        Ok(UnitStudentT {
            dist,
            scale: ((nu - 2.0) / nu).sqrt(),
        })
    }
}

impl Distribution<f64> for UnitStudentT {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng) * self.scale
    }
}

/// One unit-variance Student-t innovation.
pub fn draw_innovation<R: Rng + ?Sized>(nu: f64, rng: &mut R) -> Result<f64> {
    Ok(UnitStudentT::new(nu)?.sample(rng))
}

/// Simulates `burn_in + traj_len` quarters from `s_0 = 0`, log σ² at its
/// long-run mean, and returns the last `traj_len` observations.
///
/// Per quarter, in order: update every shock's log variance, draw the
/// Student-t innovations, advance the state, emit `y_t = d + H s_t`.
pub fn simulate_trajectory(
    draw: &PosteriorDraw,
    traj_len: usize,
    burn_in: usize,
    seed: u64,
    var_names: &[String],
) -> Result<Panel> {
    run(draw, traj_len, burn_in, seed, var_names, false).map(|(p, _)| p)
}

/// As [`simulate_trajectory`], also returning the retained log-variance path
/// (row-major, `traj_len × q`).
pub fn simulate_with_log_variance(
    draw: &PosteriorDraw,
    traj_len: usize,
    burn_in: usize,
    seed: u64,
    var_names: &[String],
) -> Result<(Panel, Vec<f64>)> {
    run(draw, traj_len, burn_in, seed, var_names, true).map(|(p, lv)| (p, lv.unwrap_or_default()))
}

fn run(
    draw: &PosteriorDraw,
    traj_len: usize,
    burn_in: usize,
    seed: u64,
    var_names: &[String],
    record_log_var: bool,
) -> Result<(Panel, Option<Vec<f64>>)> {
    let n = draw.n_states();
    let q = draw.n_shocks();
    let k = draw.n_obs();
    if var_names.len() != k {
        return Err(data_err!(
            "{} variable names for {k} observables",
            var_names.len()
        ));
    }
    let innovations = draw
        .nu
        .iter()
        .map(|&nu| UnitStudentT::new(nu))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = rng::from_seed(seed);
    let mut state = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut log_var: Vec<f64> = draw.sv.iter().map(|s| s.mu).collect();
    let mut shock = vec![0.0; q];
    let mut out = Vec::with_capacity(traj_len * k);
    let mut log_var_path = record_log_var.then(|| Vec::with_capacity(traj_len * q));

    for t in 0..burn_in + traj_len {
        for (i, sv) in draw.sv.iter().enumerate() {
            let eta: f64 = StandardNormal.sample(&mut rng);
            log_var[i] = (1.0 - sv.rho) * sv.mu + sv.rho * log_var[i] + sv.sigma_eta * eta;
            shock[i] = (0.5 * log_var[i]).exp() * innovations[i].sample(&mut rng);
        }
        for (r, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..n {
                acc += draw.transition[(r, c)] * state[c];
            }
            for c in 0..q {
                acc += draw.shock_impact[(r, c)] * shock[c];
            }
            *slot = acc;
        }
        std::mem::swap(&mut state, &mut next);

        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("state overflow at simulated period {t}")));
        }
        if t >= burn_in {
            for r in 0..k {
                let mut y = draw.obs_intercept[r];
                for c in 0..n {
                    y += draw.observation[(r, c)] * state[c];
                }
                if !y.is_finite() {
                    return Err(Error::Numerical(format!("observation overflow at simulated period {t}")));
                }
                out.push(y);
            }
            if let Some(path) = log_var_path.as_mut() {
                path.extend_from_slice(&log_var);
            }
        }
    }
    Ok((Panel::new(None, out, var_names.to_vec())?, log_var_path))
}
