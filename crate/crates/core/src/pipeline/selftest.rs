//! Built-in property checks on toy fixtures, run by `macrotok selftest`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::io_config::Panel;
use crate::rng::{from_seed, stream, StreamRng};
use crate::simulator::{draw_innovation, simulate_with_log_variance, PosteriorDraw, SvParams};
use crate::tensor::{grad_check_with, Fault, Graph, ScalarFn, Tensor, Var};
use crate::tokenizer::{encode, fit_tokenizer, Token, TokenPanel};
use crate::trainer::{sample_mixed_batch, Source, WindowStore};
use crate::transformer::{build_loss, forward_trace, init_model, init_model_with_std, ModelConfig};

const SEED: u64 = 0x5e1f_7e57;

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = std::result::Result<String, String>;

fn random(shape: &[usize], rng: &mut StreamRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `Σ w ⊙ y` with fixed weights so every output entry reaches the loss.
fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let mut rng = stream(SEED, "selftest-projection", 0);
    let w = g.constant(random(g.value(y).shape(), &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn gradient(f: &dyn ScalarFn, params: &[Tensor], tol: f64, fault: Option<Fault>) -> Outcome {
    let setup = |g: &mut Graph| {
        if let Some(f) = fault {
            g.inject_fault(f);
        }
    };
    let r = grad_check_with(f, params, 1e-5, &setup).map_err(|e| e.to_string())?;
    let msg = format!("max relative error {:.2e} (limit {tol:.0e})", r.max_rel_error);
    if r.max_rel_error <= tol { Ok(msg) } else { Err(msg) }
}

fn primitive_checks(fault: Option<Fault>) -> Vec<(&'static str, Outcome)> {
    let mut rng = stream(SEED, "selftest-gradients", 0);
    let x46 = random(&[4, 6], &mut rng);
    let w63 = random(&[6, 3], &mut rng);
    let gain = random(&[6], &mut rng);
    let bias = random(&[6], &mut rng);
    let qkv: Vec<Tensor> = (0..3).map(|_| random(&[6, 4], &mut rng)).collect();

    vec![
        ("gradient: matmul", gradient(&|g: &mut Graph, v: &[Var]| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y)
        }, &[x46.clone(), w63], 1e-6, fault)),
        ("gradient: gelu", gradient(&|g: &mut Graph, v: &[Var]| {
            let y = g.gelu(v[0]);
            project(g, y)
        }, &[x46.clone()], 1e-6, fault)),
        ("gradient: layer_norm", gradient(&|g: &mut Graph, v: &[Var]| {
            let y = g.layer_norm(v[0], v[1], v[2])?;
            project(g, y)
        }, &[x46.clone(), gain, bias], 1e-6, fault)),
        ("gradient: softmax", gradient(&|g: &mut Graph, v: &[Var]| {
            let y = g.softmax(v[0]);
            project(g, y)
        }, &[x46.clone()], 1e-5, fault)),
        ("gradient: cross_entropy", gradient(&|g: &mut Graph, v: &[Var]| {
            g.cross_entropy(v[0], &[0, 5, 2, 3])
        }, &[x46], 1e-5, fault)),
        ("gradient: causal_attention", gradient(&|g: &mut Graph, v: &[Var]| {
            let y = g.causal_attention(v[0], v[1], v[2], 2, 3, 2)?;
            project(g, y)
        }, &qkv, 1e-5, fault)),
        ("gradient: tiny transformer loss", tiny_model_gradient(fault)),
    ]
}

fn tiny_model_gradient(fault: Option<Fault>) -> Outcome {
    let cfg = ModelConfig { n_vars: 2, n_bins: 3, var_dim: 2, n_layers: 1, n_heads: 1, context_len: 2, target_var: 0, mlp_factor: 2 };
    let params = init_model_with_std(&cfg, SEED, 0.5).map_err(|e| e.to_string())?;
    let mut rng = stream(SEED, "selftest-windows", 0);
    let windows: Vec<Vec<Token>> = (0..4).map(|_| (0..6).map(|_| rng.random_range(0..3)).collect()).collect();
    let f = |g: &mut Graph, v: &[Var]| {
        let refs: Vec<&[Token]> = windows.iter().map(Vec::as_slice).collect();
        build_loss(g, &params, v, &refs)
    };
    gradient(&f, params.tensors(), 1e-5, fault)
}

fn scalar_draw(g: f64, sv: SvParams, nu: f64) -> PosteriorDraw {
    PosteriorDraw {
        transition: DMatrix::from_element(1, 1, g),
        shock_impact: DMatrix::from_element(1, 1, 1.0),
        observation: DMatrix::from_element(1, 1, 1.0),
        obs_intercept: DVector::zeros(1),
        sv: vec![sv],
        nu: vec![nu],
    }
}

fn ar1_moments() -> Outcome {
    let names = vec!["y".to_string()];
    let (panel, _) = simulate_with_log_variance(&scalar_draw(0.9, SvParams::OFF, 1e9), 200_000, 1_000, SEED, &names)
        .map_err(|e| e.to_string())?;
    let y: Vec<f64> = panel.column(0).collect();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let acf = y.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / n / var;
    let target = 1.0 / (1.0 - 0.81);
    let msg = format!("variance {var:.4} (analytic {target:.4}), lag-1 autocorrelation {acf:.4}");
    if (var / target - 1.0).abs() <= 0.03 && (acf - 0.9).abs() <= 0.01 { Ok(msg) } else { Err(msg) }
}

fn sv_moments() -> Outcome {
    let names = vec!["y".to_string()];
    let sv = SvParams { mu: 0.0, rho: 0.9, sigma_eta: 0.3 };
    let (_, h) = simulate_with_log_variance(&scalar_draw(0.5, sv, 1e9), 200_000, 1_000, SEED + 1, &names)
        .map_err(|e| e.to_string())?;
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let target = 0.09 / (1.0 - 0.81);
    let msg = format!("log-variance variance {var:.4} (analytic {target:.4})");
    if (var / target - 1.0).abs() <= 0.05 { Ok(msg) } else { Err(msg) }
}

fn student_t_tails() -> Outcome {
    let mut rng = stream(SEED, "selftest-t", 0);
    let x: Vec<f64> = (0..200_000)
        .map(|_| draw_innovation(4.0, &mut rng))
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / n;
    let m4 = x.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    let kurt = m4 / (m2 * m2) - 3.0;
    let msg = format!("nu = 4: variance {m2:.3}, excess kurtosis {kurt:.2}");
    if kurt > 0.5 && (m2 - 1.0).abs() < 0.05 { Ok(msg) } else { Err(msg) }
}

fn tokenizer_balance() -> Outcome {
    let mut rng = stream(SEED, "selftest-tokenizer", 0);
    let values: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
    let panel = Panel::new(None, values, vec!["x".into()]).map_err(|e| e.to_string())?;
    let spec = fit_tokenizer(&[&panel], 10).map_err(|e| e.to_string())?;
    let tokens = encode(&panel, &spec).map_err(|e| e.to_string())?;
    let mut counts = [0usize; 10];
    tokens.tokens().iter().for_each(|&t| counts[t as usize] += 1);
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / 100_000.0).collect();
    let (lo, hi) = freqs.iter().fold((1.0f64, 0.0f64), |(a, b), &f| (a.min(f), b.max(f)));
    let msg = format!("bin frequencies in [{lo:.4}, {hi:.4}]");
    if lo >= 0.095 && hi <= 0.105 { Ok(msg) } else { Err(msg) }
}

fn batch_composition() -> Outcome {
    let mut rng = stream(SEED, "selftest-batches", 0);
    let mut panel = |rows: usize| {
        TokenPanel::new((0..rows * 7).map(|_| rng.random_range(0..10)).collect(), 7, None)
    };
    let real = vec![panel(231).map_err(|e| e.to_string())?];
    let syn = (0..20).map(|_| panel(100)).collect::<Result<Vec<_>>>().map_err(|e| e.to_string())?;
    let store = WindowStore::new(real, syn, 4, 0.15).map_err(|e| e.to_string())?;
    let mut brng = from_seed(SEED);
    for (alpha, want) in [(0.1, 26), (0.0, 0), (1.0, 256)] {
        for _ in 0..200 {
            let b = sample_mixed_batch(&store, 256, alpha, &mut brng).map_err(|e| e.to_string())?;
            let real = b.iter().filter(|w| w.source == Source::Real).count();
            if b.len() != 256 || real != want {
                return Err(format!("alpha {alpha}: {real} real of {}, expected {want}", b.len()));
            }
        }
    }
    Ok("B = 256: alpha 0.1 gives 26 real, alpha 0 and 1 give pure batches".into())
}

fn causal_mask() -> Outcome {
    let cfg = ModelConfig::baseline(0);
    let params = init_model(&cfg, SEED).map_err(|e| e.to_string())?;
    let mut rng = stream(SEED, "selftest-causal", 0);
    let (t, k, e) = (cfg.context_len, cfg.n_vars, cfg.embed_dim());
    let base: Vec<Token> = (0..t * k).map(|_| rng.random_range(0..10)).collect();
    let a = forward_trace(&params, &base).map_err(|e| e.to_string())?;
    for att in &a.attention {
        for (r, row) in att.chunks(t).enumerate() {
            if row[r % t + 1..].iter().any(|&w| w != 0.0) {
                return Err(format!("attention row {r} weights a future position"));
            }
        }
    }
    let mut mutated = base.clone();
    mutated[(t - 1) * k] = (mutated[(t - 1) * k] + 1) % 10;
    let b = forward_trace(&params, &mutated).map_err(|e| e.to_string())?;
    for (x, y) in a.hidden.iter().zip(&b.hidden) {
        if x[..(t - 1) * e] != y[..(t - 1) * e] {
            return Err("earlier positions changed after mutating the last one".into());
        }
    }
    Ok("masked rows are exactly zero; earlier activations unchanged".into())
}

/// Runs every check. `fault` is forwarded to the gradient checks so the
/// suite can demonstrate that it catches a broken backward pass.
pub fn run_selftest(fault: Option<Fault>) -> Vec<SelfCheck> {
    let mut results: Vec<(&'static str, Outcome)> = primitive_checks(fault);
    results.push(("simulator: AR(1) stationary moments", ar1_moments()));
    results.push(("simulator: stochastic-volatility variance", sv_moments()));
    results.push(("simulator: Student-t tails", student_t_tails()));
    results.push(("tokenizer: bin balance", tokenizer_balance()));
    results.push(("trainer: batch composition", batch_composition()));
    results.push(("transformer: causal mask", causal_mask()));
    results
        .into_iter()
        .map(|(name, r)| match r {
            Ok(detail) => SelfCheck { name, passed: true, detail },
            Err(detail) => SelfCheck { name, passed: false, detail },
        })
        .collect()
}
