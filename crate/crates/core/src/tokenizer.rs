//! Percentile tokenization.
//!
//! Each variable gets `J + 1` edges at the empirical quantiles `j / J` of the
//! pooled fitting sample (linear interpolation between order statistics).
//! Bins are left-closed and right-open except the last, which is closed;
//! values outside the fitted range clamp to the extreme tokens.

use std::fmt::Write as _;

use crate::error::{data_err, shape_err, Result};
use crate::io_config::{Panel, Quarter};

pub type Token = u16;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerSpec {
    n_bins: usize,
    var_names: Vec<String>,
    /// `K` rows of `J + 1` edges.
    boundaries: Vec<Vec<f64>>,
}

/// `T_len × K` token matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPanel {
    tokens: Vec<Token>,
    n_vars: usize,
    times: Option<Vec<Quarter>>,
}

impl TokenPanel {
    pub fn new(tokens: Vec<Token>, n_vars: usize, times: Option<Vec<Quarter>>) -> Result<Self> {
        if n_vars == 0 || tokens.len() % n_vars != 0 {
            return Err(shape_err!("{} tokens do not fill rows of {n_vars}", tokens.len()));
        }
        if let Some(t) = &times {
            if t.len() * n_vars != tokens.len() {
                return Err(shape_err!("{} time labels for {} rows", t.len(), tokens.len() / n_vars));
            }
        }
        Ok(TokenPanel { tokens, n_vars, times })
    }

    pub fn n_rows(&self) -> usize {
        self.tokens.len() / self.n_vars
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn row(&self, i: usize) -> &[Token] {
        &self.tokens[i * self.n_vars..(i + 1) * self.n_vars]
    }

    /// Rows `start..end`, flattened.
    pub fn rows(&self, start: usize, end: usize) -> &[Token] {
        &self.tokens[start * self.n_vars..end * self.n_vars]
    }

    pub fn times(&self) -> Option<&[Quarter]> {
        self.times.as_deref()
    }
}

/// Type-7 empirical quantile of sorted data at level `p`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Fits per-variable edges on the pooled panels.
pub fn fit_tokenizer(pool: &[&Panel], n_bins: usize) -> Result<TokenizerSpec> {
    if n_bins < 2 {
        return Err(data_err!("need at least 2 bins, got {n_bins}"));
    }
    let first = pool.first().ok_or_else(|| data_err!("empty tokenizer pool"))?;
    let k = first.n_vars();
    if pool.iter().any(|p| p.n_vars() != k) {
        return Err(shape_err!("tokenizer pool panels disagree on variable count"));
    }
    let total: usize = pool.iter().map(|p| p.n_rows()).sum();

    let mut boundaries = Vec::with_capacity(k);
    for var in 0..k {
        let mut values = Vec::with_capacity(total);
        for p in pool {
            values.extend(p.column(var));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(data_err!("non-finite value {bad} in variable {:?}", first.var_names()[var]));
        }
        values.sort_unstable_by(f64::total_cmp);
        let distinct = 1 + values.windows(2).filter(|w| w[0] != w[1]).count();
        if values.is_empty() || distinct < n_bins {
            return Err(data_err!(
                "degenerate distribution for variable {:?}: {} distinct values, need {n_bins}",
                first.var_names()[var],
                if values.is_empty() { 0 } else { distinct }
            ));
        }
        let edges = (0..=n_bins)
            .map(|j| quantile_sorted(&values, j as f64 / n_bins as f64))
            .collect();
        boundaries.push(edges);
    }
    Ok(TokenizerSpec {
        n_bins,
        var_names: first.var_names().to_vec(),
        boundaries,
    })
}

impl TokenizerSpec {
    pub fn from_boundaries(var_names: Vec<String>, boundaries: Vec<Vec<f64>>) -> Result<Self> {
        let n_bins = boundaries
            .first()
            .map(|b| b.len().saturating_sub(1))
            .ok_or_else(|| data_err!("no boundaries"))?;
        if n_bins < 2 || var_names.len() != boundaries.len() {
            return Err(shape_err!("inconsistent tokenizer boundaries"));
        }
        for (name, b) in var_names.iter().zip(&boundaries) {
            if b.len() != n_bins + 1 {
                return Err(shape_err!("variable {name:?} has {} edges, expected {}", b.len(), n_bins + 1));
            }
            if b.iter().any(|v| !v.is_finite()) || b.windows(2).any(|w| w[1] < w[0]) {
                return Err(data_err!("edges for {name:?} must be finite and non-decreasing"));
            }
        }
        Ok(TokenizerSpec { n_bins, var_names, boundaries })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_vars(&self) -> usize {
        self.boundaries.len()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn boundaries(&self, k: usize) -> &[f64] {
        &self.boundaries[k]
    }

    /// Token of one value: the largest `j` with `edge[j] <= v`, capped at `J − 1`.
    pub fn encode_value(&self, k: usize, v: f64) -> Token {
        let edges = &self.boundaries[k];
        // edges[..idx] are all <= v
        let idx = edges.partition_point(|&e| e <= v);
        idx.saturating_sub(1).min(self.n_bins - 1) as Token
    }

    /// Whether `v` lies outside the fitted `[edge_0, edge_J]` range.
    pub fn is_clamped(&self, k: usize, v: f64) -> bool {
        let edges = &self.boundaries[k];
        v < edges[0] || v > edges[self.n_bins]
    }

    /// `(low, high)` edges of `token` for variable `k`.
    pub fn token_interval(&self, k: usize, token: usize) -> Result<(f64, f64)> {
        if k >= self.n_vars() {
            return Err(shape_err!("variable index {k} out of range"));
        }
        if token >= self.n_bins {
            return Err(data_err!("token {token} out of range 0..{}", self.n_bins));
        }
        Ok((self.boundaries[k][token], self.boundaries[k][token + 1]))
    }

    /// Text block used inside checkpoints: a header line then one line of
    /// edges per variable, `name: e0 e1 …`.
    pub fn to_text(&self) -> String {
        let mut out = format!("tokenizer bins={} vars={}\n", self.n_bins, self.n_vars());
        for (name, edges) in self.var_names.iter().zip(&self.boundaries) {
            out.push_str(name);
            out.push(':');
            for e in edges {
                write!(out, " {e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| data_err!("empty tokenizer block"))?;
        let mut parts = header.split_whitespace();
        let (Some("tokenizer"), Some(bins), Some(vars)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(data_err!("bad tokenizer header {header:?}"));
        };
        let parse_field = |s: &str, key: &str| -> Result<usize> {
            s.strip_prefix(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| data_err!("bad tokenizer header field {s:?}"))
        };
        let n_bins = parse_field(bins, "bins=")?;
        let n_vars = parse_field(vars, "vars=")?;
        let mut names = Vec::with_capacity(n_vars);
        let mut boundaries = Vec::with_capacity(n_vars);
        for line in lines {
            let (name, rest) = line
                .rsplit_once(':')
                .ok_or_else(|| data_err!("bad tokenizer line {line:?}"))?;
            let edges: Vec<f64> = rest
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| data_err!("bad edge value in tokenizer line for {name:?}"))?;
            names.push(name.to_string());
            boundaries.push(edges);
        }
        if names.len() != n_vars {
            return Err(data_err!("tokenizer block lists {} variables, header says {n_vars}", names.len()));
        }
        let spec = Self::from_boundaries(names, boundaries)?;
        if spec.n_bins != n_bins {
            return Err(data_err!("tokenizer edge count disagrees with bins={n_bins}"));
        }
        Ok(spec)
    }
}

/// Maps every value of `panel` to its token. Time labels carry over.
pub fn encode(panel: &Panel, spec: &TokenizerSpec) -> Result<TokenPanel> {
    let k = panel.n_vars();
    if k != spec.n_vars() {
        return Err(shape_err!("panel has {k} variables, tokenizer has {}", spec.n_vars()));
    }
    let mut tokens = Vec::with_capacity(panel.values().len());
    for (i, &v) in panel.values().iter().enumerate() {
        if !v.is_finite() {
            return Err(data_err!(
                "non-finite value at row {}, variable {:?}",
                i / k + 1,
                panel.var_names()[i % k]
            ));
        }
        tokens.push(spec.encode_value(i % k, v));
    }
    TokenPanel::new(tokens, k, panel.times().map(<[Quarter]>::to_vec))
}

pub fn token_interval(k: usize, token: usize, spec: &TokenizerSpec) -> Result<(f64, f64)> {
    spec.token_interval(k, token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn col(values: Vec<f64>) -> Panel {
        Panel::new(None, values, vec!["x".into()]).unwrap()
    }

    /// Sorts a copy and interpolates at `p`, written independently of the
    /// implementation's indexing.
    fn oracle_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = p * (v.len() as f64 - 1.0);
        let below = pos as usize;
        if below + 1 >= v.len() {
            return v[v.len() - 1];
        }
        let w = pos - below as f64;
        (1.0 - w) * v[below] + w * v[below + 1]
    }

    fn linear_scan(edges: &[f64], v: f64) -> Token {
        let j = edges.len() - 1;
        let mut best = 0;
        for (i, &e) in edges.iter().enumerate().take(j) {
            if e <= v {
                best = i;
            }
        }
        best as Token
    }

    #[test]
    fn median_edge_of_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let spec = fit_tokenizer(&[&col(values.clone())], 10).unwrap();
        let b = spec.boundaries(0);
        assert_eq!(b[5], 50.5);
        assert_eq!(b[0], 1.0);
        assert_eq!(b[10], 100.0);
        for j in 0..=10 {
            assert!((b[j] - oracle_quantile(&values, j as f64 / 10.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_column_rejected() {
        let err = fit_tokenizer(&[&col(vec![3.0; 50])], 10).unwrap_err().to_string();
        assert!(err.contains("degenerate distribution"), "{err}");
        let err = fit_tokenizer(&[&col((0..5).map(f64::from).collect())], 10).unwrap_err();
        assert!(err.to_string().contains("\"x\""));
    }

    #[test]
    fn tails_clamp() {
        let spec = fit_tokenizer(&[&col((0..1000).map(f64::from).collect())], 10).unwrap();
        assert_eq!(spec.encode_value(0, -1e300), 0);
        assert_eq!(spec.encode_value(0, 0.0), 0);
        assert_eq!(spec.encode_value(0, 999.0), 9);
        assert_eq!(spec.encode_value(0, 1e300), 9);
        assert!(spec.is_clamped(0, 1000.5));
        assert!(!spec.is_clamped(0, 999.0));
    }

    #[test]
    fn interval_endpoints_and_midpoints() {
        let spec = fit_tokenizer(&[&col((0..1000).map(|i| (i as f64).sqrt()).collect())], 10).unwrap();
        let b = spec.boundaries(0).to_vec();
        assert_eq!(token_interval(0, 0, &spec).unwrap(), (b[0], b[1]));
        assert_eq!(token_interval(0, 9, &spec).unwrap(), (b[9], b[10]));
        assert!(token_interval(0, 10, &spec).is_err());
        for j in 0..10 {
            let (lo, hi) = spec.token_interval(0, j).unwrap();
            assert_eq!(spec.encode_value(0, 0.5 * (lo + hi)) as usize, j);
        }
    }

    #[test]
    fn balanced_on_large_pool() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let real = col((0..231).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
        let synth = col((0..200_000).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.3 + 0.1).collect());
        let spec = fit_tokenizer(&[&real, &synth], 10).unwrap();
        let mut counts = [0usize; 10];
        for p in [&real, &synth] {
            for t in encode(p, &spec).unwrap().tokens() {
                counts[*t as usize] += 1;
            }
        }
        let n = 200_231.0;
        for c in counts {
            let f = c as f64 / n;
            assert!((0.095..=0.105).contains(&f), "{counts:?}");
        }
    }

    #[test]
    fn text_block_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..600).map(|_| rng.random::<f64>() * 1e-3 - 7.0).collect();
        let p = Panel::new(None, values, vec!["a:b".into(), "c".into(), "d e".into()]).unwrap();
        let spec = fit_tokenizer(&[&p], 7).unwrap();
        assert_eq!(TokenizerSpec::from_text(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn encode_errors() {
        let spec = fit_tokenizer(&[&col((0..100).map(f64::from).collect())], 10).unwrap();
        let two = Panel::new(None, vec![1.0, 2.0], vec!["a".into(), "b".into()]).unwrap();
        assert!(encode(&two, &spec).is_err());
        assert!(encode(&col(vec![f64::NAN]), &spec).is_err());
    }

    proptest! {
        #[test]
        fn agrees_with_linear_scan_and_is_monotone(
            seed in 0u64..1000, mut probes in proptest::collection::vec(-5.0f64..5.0, 1..200)
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let fit: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let spec = fit_tokenizer(&[&col(fit)], 10).unwrap();
            for &v in &probes {
                prop_assert_eq!(spec.encode_value(0, v), linear_scan(spec.boundaries(0), v));
            }
            probes.sort_by(f64::total_cmp);
            for w in probes.windows(2) {
                prop_assert!(spec.encode_value(0, w[0]) <= spec.encode_value(0, w[1]));
            }
        }

        #[test]
        fn fitting_is_idempotent(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = col((0..300).map(|_| rng.random::<f64>()).collect());
            prop_assert_eq!(fit_tokenizer(&[&p], 10).unwrap(), fit_tokenizer(&[&p], 10).unwrap());
        }

        #[test]
        fn any_finite_value_maps_into_range(v in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            let spec = fit_tokenizer(&[&col((0..50).map(f64::from).collect())], 10).unwrap();
            prop_assert!((spec.encode_value(0, v) as usize) < 10);
        }
    }
}
