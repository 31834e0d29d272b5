use std::fmt;

use nalgebra::{DMatrix, DVector};

/// AR(1) law of motion for one shock's log variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvParams {
    /// Long-run mean of log σ².
    pub mu: f64,
    /// Persistence, |rho| < 1.
    pub rho: f64,
    /// Innovation std of log σ², ≥ 0.
    pub sigma_eta: f64,
}

impl SvParams {
    /// Constant unit volatility.
    pub const OFF: SvParams = SvParams { mu: 0.0, rho: 0.0, sigma_eta: 0.0 };
}

/// One posterior draw in solved state-space form:
/// `s_t = G s_{t-1} + R diag(σ_t) ε_t`, `y_t = d + H s_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    /// G, n × n.
    pub transition: DMatrix<f64>,
    /// R, n × q.
    pub shock_impact: DMatrix<f64>,
    /// H, K × n.
    pub observation: DMatrix<f64>,
    /// d, length K.
    pub obs_intercept: DVector<f64>,
    /// One record per shock.
    pub sv: Vec<SvParams>,
    /// Student-t degrees of freedom per shock.
    pub nu: Vec<f64>,
}

impl PosteriorDraw {
    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn n_shocks(&self) -> usize {
        self.shock_impact.ncols()
    }

    pub fn n_obs(&self) -> usize {
        self.observation.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    Dimensions(String),
    NonFinite,
    UnstableTransition { spectral_radius: f64 },
    Persistence { shock: usize, rho: f64 },
    NegativeVolOfVol { shock: usize, sigma_eta: f64 },
    DegreesOfFreedom { shock: usize, nu: f64 },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Dimensions(msg) => write!(f, "inconsistent dimensions: {msg}"),
            Rejection::NonFinite => write!(f, "non-finite parameter"),
            Rejection::UnstableTransition { spectral_radius } => {
                write!(f, "unstable transition (spectral radius {spectral_radius:.6})")
            }
            Rejection::Persistence { shock, rho } => {
                write!(f, "log-variance persistence |rho| >= 1 for shock {shock} (rho = {rho})")
            }
            Rejection::NegativeVolOfVol { shock, sigma_eta } => {
                write!(f, "negative sigma_eta {sigma_eta} for shock {shock}")
            }
            Rejection::DegreesOfFreedom { shock, nu } => {
                write!(f, "degrees of freedom ≤ 2 for shock {shock} (nu = {nu})")
            }
        }
    }
}

/// Spectral radius via normalized repeated squaring:
/// `‖G^k‖^(1/k)` for `k = 1, 2, 4, …` until successive estimates agree to
/// `tol` (relative).
pub fn spectral_radius(g: &DMatrix<f64>, tol: f64) -> f64 {
    if g.nrows() == 0 {
        return 0.0;
    }
    let mut power = g.clone();
    let mut log_norm = 0.0; // G^k = exp(log_norm) * power, ‖power‖ = 1
    let mut k = 1.0f64;
    let mut prev = f64::NAN;
    for _ in 0..62 {
        let norm = power.norm();
        if norm == 0.0 {
            return 0.0;
        }
        power /= norm;
        log_norm += norm.ln();
        let est = (log_norm / k).exp();
        if (est - prev).abs() <= tol * est.max(f64::MIN_POSITIVE) {
            return est;
        }
        prev = est;
        power = &power * &power;
        log_norm *= 2.0;
        k *= 2.0;
    }
    prev
}

/// Checks every [`PosteriorDraw`] invariant; the first failure is returned.
pub fn validate_draw(draw: &PosteriorDraw) -> Result<(), Rejection> {
    let n = draw.transition.nrows();
    let q = draw.shock_impact.ncols();
    let k = draw.observation.nrows();
    if draw.transition.ncols() != n {
        return Err(Rejection::Dimensions("G is not square".into()));
    }
    if draw.shock_impact.nrows() != n {
        return Err(Rejection::Dimensions(format!(
            "R has {} rows, G has {n}",
            draw.shock_impact.nrows()
        )));
    }
    if draw.observation.ncols() != n {
        return Err(Rejection::Dimensions(format!(
            "H has {} columns, G has {n}",
            draw.observation.ncols()
        )));
    }
    if draw.obs_intercept.len() != k {
        return Err(Rejection::Dimensions(format!(
            "d has length {}, H has {k} rows",
            draw.obs_intercept.len()
        )));
    }
    if draw.sv.len() != q || draw.nu.len() != q {
        return Err(Rejection::Dimensions(format!(
            "{q} shocks but {} SV records and {} nu values",
            draw.sv.len(),
            draw.nu.len()
        )));
    }
    let finite = draw.transition.iter().all(|v| v.is_finite())
        && draw.shock_impact.iter().all(|v| v.is_finite())
        && draw.observation.iter().all(|v| v.is_finite())
        && draw.obs_intercept.iter().all(|v| v.is_finite())
        && draw
            .sv
            .iter()
            .all(|s| s.mu.is_finite() && s.rho.is_finite() && s.sigma_eta.is_finite())
        && draw.nu.iter().all(|v| !v.is_nan());
    if !finite {
        return Err(Rejection::NonFinite);
    }
    let radius = spectral_radius(&draw.transition, 1e-8);
    if !(radius < 1.0) {
        return Err(Rejection::UnstableTransition { spectral_radius: radius });
    }
    for (i, s) in draw.sv.iter().enumerate() {
        if !(s.rho.abs() < 1.0) {
            return Err(Rejection::Persistence { shock: i, rho: s.rho });
        }
        if s.sigma_eta < 0.0 {
            return Err(Rejection::NegativeVolOfVol { shock: i, sigma_eta: s.sigma_eta });
        }
    }
    for (i, &nu) in draw.nu.iter().enumerate() {
        if !(nu > 2.0) {
            return Err(Rejection::DegreesOfFreedom { shock: i, nu });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};

    pub(crate) fn scalar_draw(g: f64) -> PosteriorDraw {
        PosteriorDraw {
            transition: DMatrix::from_element(1, 1, g),
            shock_impact: DMatrix::from_element(1, 1, 1.0),
            observation: DMatrix::from_element(1, 1, 1.0),
            obs_intercept: DVector::zeros(1),
            sv: vec![SvParams::OFF],
            nu: vec![1e9],
        }
    }

    #[test]
    fn diagonal_radius() {
        let g = DMatrix::identity(2, 2) * 0.9;
        assert!((spectral_radius(&g, 1e-8) - 0.9).abs() < 1e-8);
        let mut d = scalar_draw(0.9);
        d.transition = g;
        d.shock_impact = DMatrix::identity(2, 1);
        d.observation = DMatrix::identity(1, 2);
        assert_eq!(validate_draw(&d), Ok(()));
    }

    #[test]
    fn unit_root_rejected() {
        let mut d = scalar_draw(1.0);
        d.transition = DMatrix::identity(2, 2);
        d.shock_impact = DMatrix::identity(2, 1);
        d.observation = DMatrix::identity(1, 2);
        assert!(matches!(validate_draw(&d), Err(Rejection::UnstableTransition { .. })));
    }

    #[test]
    fn rotation_and_jordan_block() {
        // complex pair with modulus 0.95
        let (c, s) = (0.95 * 0.3f64.cos(), 0.95 * 0.3f64.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((spectral_radius(&rot, 1e-8) - 0.95).abs() < 1e-7);
        // defective matrix: radius 0.5 despite large off-diagonal
        let jordan = DMatrix::from_row_slice(2, 2, &[0.5, 10.0, 0.0, 0.5]);
        assert!((spectral_radius(&jordan, 1e-10) - 0.5).abs() < 1e-6);
        let nilpotent = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(spectral_radius(&nilpotent, 1e-8), 0.0);
    }

    #[test]
    fn rejection_reasons() {
        let mut d = scalar_draw(0.5);
        d.nu = vec![2.0];
        let r = validate_draw(&d).unwrap_err();
        assert!(r.to_string().contains("degrees of freedom ≤ 2"));
        let mut d = scalar_draw(0.5);
        d.sv[0].rho = -1.0;
        assert!(matches!(validate_draw(&d), Err(Rejection::Persistence { .. })));
        let mut d = scalar_draw(0.5);
        d.obs_intercept = DVector::zeros(3);
        assert!(matches!(validate_draw(&d), Err(Rejection::Dimensions(_))));
        let d = scalar_draw(1.02);
        assert!(validate_draw(&d).unwrap_err().to_string().contains("unstable transition"));
    }

    /// Characteristic polynomial by Faddeev–LeVerrier, highest degree first.
    fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut coeffs = vec![1.0];
        let mut m = DMatrix::<f64>::zeros(n, n);
        let id = DMatrix::<f64>::identity(n, n);
        let mut c = 1.0;
        for k in 1..=n {
            m = a * &m + &id * c;
            let am = a * &m;
            c = -am.trace() / k as f64;
            coeffs.push(c);
        }
        coeffs
    }

    /// Durand–Kerner simultaneous root iteration.
    fn roots(coeffs: &[f64]) -> Vec<Complex64> {
        let n = coeffs.len() - 1;
        let eval = |z: Complex64| coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c);
        let seed = Complex64::new(0.4, 0.9);
        let mut z: Vec<Complex64> = (0..n).map(|i| seed.powu(i as u32)).collect();
        for _ in 0..2000 {
            let prev = z.clone();
            for i in 0..n {
                let mut denom = Complex64::new(1.0, 0.0);
                for j in 0..n {
                    if i != j {
                        denom *= z[i] - z[j];
                    }
                }
                let step = eval(z[i]) / denom;
                z[i] -= step;
            }
            if z.iter().zip(&prev).all(|(a, b)| (a - b).norm() < 1e-15) {
                break;
            }
        }
        z
    }

    #[test]
    fn agrees_with_characteristic_polynomial_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0;
        let (mut stable, mut unstable) = (0, 0);
        for _ in 0..300 {
            let n = rng.random_range(1..=5);
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.7..0.7));
            let oracle = roots(&char_poly(&g))
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            if (oracle - 1.0).abs() < 1e-4 {
                continue;
            }
            let mut d = scalar_draw(0.0);
            d.transition = g.clone();
            d.shock_impact = DMatrix::identity(n, 1);
            d.observation = DMatrix::identity(1, n);
            let accepted = validate_draw(&d).is_ok();
            assert_eq!(accepted, oracle < 1.0, "oracle radius {oracle}, g = {g}");
            assert!((spectral_radius(&g, 1e-10) - oracle).abs() < 1e-6 * oracle.max(1.0));
            if accepted { stable += 1 } else { unstable += 1 }
            checked += 1;
        }
        assert!(checked > 250);
        assert!(stable > 20 && unstable > 20, "{stable} stable / {unstable} unstable");
    }
}

#[cfg(test)]
pub(crate) use tests::scalar_draw;
