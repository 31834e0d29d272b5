//! Posterior-draw text format.
//!
//! ```text
//! posterior_draws v1
//! dims n=<states> q=<shocks> k=<observables> count=<draws>
//! draw 1
//! G            n rows of n numbers
//! R            n rows of q numbers
//! H            k rows of n numbers
//! d            one row of k numbers
//! sv           q rows of `mu rho sigma_eta`
//! nu           one row of q numbers
//! end
//! draw 2
//! ...
//! ```
//!
//! Matrices are row-major, one matrix row per line. `#` starts a comment.
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{data_err, Error, Result};

use super::draw::{validate_draw, PosteriorDraw, Rejection, SvParams};

const MAGIC: &str = "posterior_draws v1";

#[derive(Debug, Clone)]
pub struct LoadedDraws {
    pub draws: Vec<PosteriorDraw>,
    /// (1-based draw number, reason)
    pub rejected: Vec<(usize, Rejection)>,
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        Lines { inner: it.peekable() }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .ok_or_else(|| data_err!("posterior file ended while reading {what}"))
    }

    fn expect(&mut self, label: &str) -> Result<()> {
        let (no, l) = self.next(label)?;
        if l != label {
            return Err(data_err!("posterior file line {no}: expected {label:?}, found {l:?}"));
        }
        Ok(())
    }

    fn numbers(&mut self, what: &str, count: usize) -> Result<Vec<f64>> {
        let (no, l) = self.next(what)?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| data_err!("posterior file line {no}: bad number in {what}"))?;
        if vals.len() != count {
            return Err(data_err!(
                "posterior file line {no}: {what} has {} entries, expected {count}",
                vals.len()
            ));
        }
        Ok(vals)
    }

    fn matrix(&mut self, label: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        self.expect(label)?;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(self.numbers(&format!("{label} row {}", r + 1), cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
}

fn header_field(token: Option<&str>, name: &str) -> Result<usize> {
    token
        .and_then(|t| t.strip_prefix(name))
        .and_then(|t| t.strip_prefix('='))
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| data_err!("posterior file header: missing or bad {name}="))
}

/// Parses every draw without validating invariants.
pub fn parse_posterior_draws(text: &str) -> Result<Vec<PosteriorDraw>> {
    let mut lines = Lines::new(text);
    lines.expect(MAGIC)?;
    let (_, dims) = lines.next("dims")?;
    let mut toks = dims.split_whitespace();
    if toks.next() != Some("dims") {
        return Err(data_err!("posterior file: expected dims line"));
    }
    let n = header_field(toks.next(), "n")?;
    let q = header_field(toks.next(), "q")?;
    let k = header_field(toks.next(), "k")?;
    let count = header_field(toks.next(), "count")?;
    if n == 0 || q == 0 || k == 0 {
        return Err(data_err!("posterior file: dimensions must be positive"));
    }

    let mut draws = Vec::with_capacity(count);
    for i in 1..=count {
        lines.expect(&format!("draw {i}"))?;
        let transition = lines.matrix("G", n, n)?;
        let shock_impact = lines.matrix("R", n, q)?;
        let observation = lines.matrix("H", k, n)?;
        lines.expect("d")?;
        let obs_intercept = DVector::from_vec(lines.numbers("d", k)?);
        lines.expect("sv")?;
        let mut sv = Vec::with_capacity(q);
        for s in 0..q {
            let v = lines.numbers(&format!("sv row {}", s + 1), 3)?;
            sv.push(SvParams { mu: v[0], rho: v[1], sigma_eta: v[2] });
        }
        lines.expect("nu")?;
        let nu = lines.numbers("nu", q)?;
        lines.expect("end")?;
        draws.push(PosteriorDraw {
            transition,
            shock_impact,
            observation,
            obs_intercept,
            sv,
            nu,
        });
    }
    if let Some((no, l)) = lines.inner.next() {
        return Err(data_err!("posterior file line {no}: trailing content {l:?}"));
    }
    Ok(draws)
}

/// Reads a draw file and keeps only draws passing [`validate_draw`].
pub fn load_posterior_draws(path: &Path) -> Result<LoadedDraws> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    filter_draws(parse_posterior_draws(&text)?)
}

pub fn filter_draws(all: Vec<PosteriorDraw>) -> Result<LoadedDraws> {
    let total = all.len();
    let mut draws = Vec::with_capacity(total);
    let mut rejected = Vec::new();
    for (i, d) in all.into_iter().enumerate() {
        match validate_draw(&d) {
            Ok(()) => draws.push(d),
            Err(reason) => {
                warn!("rejecting posterior draw {}: {reason}", i + 1);
                rejected.push((i + 1, reason));
            }
        }
    }
    if draws.is_empty() {
        return Err(data_err!("all {total} posterior draws were rejected"));
    }
    Ok(LoadedDraws { draws, rejected })
}

pub fn format_posterior_draws(draws: &[PosteriorDraw]) -> Result<String> {
    let first = draws
        .first()
        .ok_or_else(|| data_err!("no draws to write"))?;
    let (n, q, k) = (first.n_states(), first.n_shocks(), first.n_obs());
    let mut out = format!("{MAGIC}\ndims n={n} q={q} k={k} count={}\n", draws.len());
    let row = |out: &mut String, vals: &mut dyn Iterator<Item = f64>| {
        let parts: Vec<String> = vals.map(|v| v.to_string()).collect();
        out.push_str(&parts.join(" "));
        out.push('\n');
    };
    for (i, d) in draws.iter().enumerate() {
        if (d.n_states(), d.n_shocks(), d.n_obs()) != (n, q, k) {
            return Err(data_err!("draw {} has different dimensions", i + 1));
        }
        writeln!(out, "draw {}", i + 1).unwrap();
        for (label, m) in [("G", &d.transition), ("R", &d.shock_impact), ("H", &d.observation)] {
            out.push_str(label);
            out.push('\n');
            for r in 0..m.nrows() {
                row(&mut out, &mut m.row(r).iter().copied());
            }
        }
        out.push_str("d\n");
        row(&mut out, &mut d.obs_intercept.iter().copied());
        out.push_str("sv\n");
        for s in &d.sv {
            row(&mut out, &mut [s.mu, s.rho, s.sigma_eta].into_iter());
        }
        out.push_str("nu\n");
        row(&mut out, &mut d.nu.iter().copied());
        out.push_str("end\n");
    }
    Ok(out)
}

pub fn write_posterior_draws(draws: &[PosteriorDraw], path: &Path) -> Result<()> {
    fs::write(path, format_posterior_draws(draws)?).map_err(|e| Error::io(path, e))
}
