use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{config_err, data_err, Error, Result};
use crate::io_config::{CorpusFormat, Panel};
use crate::rng;

use super::draw::PosteriorDraw;
use super::simulate::simulate_trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationPlan {
    /// M
    pub n_trajectories: usize,
    /// S
    pub traj_len: usize,
    pub burn_in: usize,
    pub base_seed: u64,
}

impl SimulationPlan {
    /// Checks the plan yields at least one window of `context_len + 1` quarters.
    pub fn validate(&self, context_len: usize) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(config_err!("simulation plan needs at least one trajectory"));
        }
        if self.traj_len < context_len + 1 {
            return Err(config_err!(
                "trajectory length {} is shorter than context length + 1 = {}",
                self.traj_len,
                context_len + 1
            ));
        }
        Ok(())
    }

    pub fn total_rows(&self) -> usize {
        self.n_trajectories * self.traj_len
    }

    /// Seed of trajectory `m`.
    pub fn trajectory_seed(&self, m: usize) -> u64 {
        rng::derive_seed(self.base_seed, "trajectory", m as u64)
    }

    /// Index of the posterior draw used for trajectory `m`, uniform over `n_draws`.
    pub fn draw_for(&self, m: usize, n_draws: usize) -> usize {
        rng::stream(self.base_seed, "draw-select", m as u64).random_range(0..n_draws)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub panels: Vec<Panel>,
    pub draw_index: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SyntheticCorpus {
    pub fn total_rows(&self) -> usize {
        self.panels.iter().map(Panel::n_rows).sum()
    }
}

/// Simulates `plan.n_trajectories` panels in parallel; output order is by `m`
/// and independent of the worker count.
pub fn generate_corpus(
    draws: &[PosteriorDraw],
    plan: &SimulationPlan,
    var_names: &[String],
) -> Result<SyntheticCorpus> {
    if draws.is_empty() {
        return Err(data_err!("no posterior draws to simulate from"));
    }
    let results: Vec<(usize, u64, Panel)> = (0..plan.n_trajectories)
        .into_par_iter()
        .map(|m| {
            let idx = plan.draw_for(m, draws.len());
            let seed = plan.trajectory_seed(m);
            simulate_trajectory(&draws[idx], plan.traj_len, plan.burn_in, seed, var_names)
                .map(|p| (idx, seed, p))
                .map_err(|e| annotate(e, m))
        })
        .collect::<Result<_>>()?;

    let mut corpus = SyntheticCorpus {
        panels: Vec::with_capacity(results.len()),
        draw_index: Vec::with_capacity(results.len()),
        seeds: Vec::with_capacity(results.len()),
    };
    for (idx, seed, panel) in results {
        corpus.draw_index.push(idx);
        corpus.seeds.push(seed);
        corpus.panels.push(panel);
    }
    Ok(corpus)
}

fn annotate(e: Error, m: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("trajectory {m}: {msg}")),
        Error::Data(msg) => Error::Data(format!("trajectory {m}: {msg}")),
        other => other,
    }
}

fn panel_rows(out: &mut String, panel: &Panel, prefix: Option<usize>) {
    for i in 0..panel.n_rows() {
        if let Some(id) = prefix {
            write!(out, "{id},").unwrap();
        }
        for (j, v) in panel.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
}

pub fn panel_file_name(m: usize) -> String {
    format!("panel_{m:06}.csv")
}

/// Writes the corpus as one `panel_id,<vars…>` CSV or a directory of
/// per-panel CSVs. Returns the files written.
pub fn write_corpus(corpus: &SyntheticCorpus, path: &Path, format: CorpusFormat) -> Result<Vec<std::path::PathBuf>> {
    let first = corpus
        .panels
        .first()
        .ok_or_else(|| data_err!("empty corpus"))?;
    let header = first.var_names().join(",");
    match format {
        CorpusFormat::Single => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            let mut buf = format!("panel_id,{header}\n");
            for (m, p) in corpus.panels.iter().enumerate() {
                panel_rows(&mut buf, p, Some(m));
                w.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
                buf.clear();
            }
            w.flush().map_err(|e| Error::io(path, e))?;
            Ok(vec![path.to_path_buf()])
        }
        CorpusFormat::Directory => {
            fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
            let mut written = Vec::with_capacity(corpus.panels.len());
            for (m, p) in corpus.panels.iter().enumerate() {
                let file = path.join(panel_file_name(m));
                let mut buf = format!("{header}\n");
                panel_rows(&mut buf, p, None);
                fs::write(&file, buf).map_err(|e| Error::io(&file, e))?;
                written.push(file);
            }
            Ok(written)
        }
    }
}

fn parse_row(line: &str, skip: usize, k: usize, what: &dyn Fn() -> String) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split(',')
        .skip(skip)
        .map(|c| c.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| data_err!("{}: bad number", what()))?;
    if vals.len() != k {
        return Err(data_err!("{}: {} values, expected {k}", what(), vals.len()));
    }
    Ok(vals)
}

fn check_header(header: Option<std::io::Result<String>>, expected: &str, path: &Path) -> Result<()> {
    let h = header
        .ok_or_else(|| data_err!("{}: empty corpus file", path.display()))?
        .map_err(|e| Error::io(path, e))?;
    if h.trim() != expected {
        return Err(data_err!("{}: header {h:?} does not match {expected:?}", path.display()));
    }
    Ok(())
}

/// Reads panels written by [`write_corpus`].
pub fn read_corpus(path: &Path, format: CorpusFormat, var_names: &[String]) -> Result<Vec<Panel>> {
    let k = var_names.len();
    let header = var_names.join(",");
    match format {
        CorpusFormat::Single => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let mut lines = BufReader::new(file).lines();
            check_header(lines.next(), &format!("panel_id,{header}"), path)?;
            let mut panels = Vec::new();
            let mut current: Option<(usize, Vec<f64>)> = None;
            for (i, line) in lines.enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let what = || format!("{} line {}", path.display(), i + 2);
                let id: usize = line
                    .split(',')
                    .next()
                    .and_then(|c| c.trim().parse().ok())
                    .ok_or_else(|| data_err!("{}: bad panel_id", what()))?;
                let row = parse_row(&line, 1, k, &what)?;
                match &mut current {
                    Some((cur, vals)) if *cur == id => vals.extend(row),
                    _ => {
                        if let Some((cur, vals)) = current.take() {
                            if id != cur + 1 {
                                return Err(data_err!("{}: panel ids not consecutive", what()));
                            }
                            panels.push(Panel::new(None, vals, var_names.to_vec())?);
                        } else if id != 0 {
                            return Err(data_err!("{}: first panel id must be 0", what()));
                        }
                        current = Some((id, row));
                    }
                }
            }
            if let Some((_, vals)) = current {
                panels.push(Panel::new(None, vals, var_names.to_vec())?);
            }
            Ok(panels)
        }
        CorpusFormat::Directory => {
            let mut panels = Vec::new();
            for m in 0.. {
                let file = path.join(panel_file_name(m));
                if !file.exists() {
                    break;
                }
                let f = fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
                let mut lines = BufReader::new(f).lines();
                check_header(lines.next(), &header, &file)?;
                let mut vals = Vec::new();
                for (i, line) in lines.enumerate() {
                    let line = line.map_err(|e| Error::io(&file, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    vals.extend(parse_row(&line, 0, k, &|| format!("{} line {}", file.display(), i + 2))?);
                }
                panels.push(Panel::new(None, vals, var_names.to_vec())?);
            }
            if panels.is_empty() {
                return Err(data_err!("{}: no panel files found", path.display()));
            }
            Ok(panels)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::toy::toy_draws;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("y{i}")).collect()
    }

    fn plan(m: usize, s: usize, seed: u64) -> SimulationPlan {
        SimulationPlan { n_trajectories: m, traj_len: s, burn_in: 20, base_seed: seed }
    }

    #[test]
    fn reduced_scale_row_count() {
        let draws = toy_draws(4, 7, 1);
        let c = generate_corpus(&draws, &plan(100, 100, 5), &names(7)).unwrap();
        assert_eq!(c.panels.len(), 100);
        assert_eq!(c.total_rows(), 10_000);
        assert!(c.panels.iter().all(|p| p.n_vars() == 7 && p.values().iter().all(|v| v.is_finite())));
        // the full-size plan by arithmetic
        assert_eq!(plan(10_000, 1_000, 0).total_rows() * 7, 70_000_000);
        assert_eq!(plan(10_000, 1_000, 0).total_rows(), 10_000_000);
    }

    #[test]
    fn singleton_matches_direct_simulation() {
        let draws = toy_draws(1, 3, 2);
        let p = plan(1, 50, 9);
        let c = generate_corpus(&draws, &p, &names(3)).unwrap();
        let direct = simulate_trajectory(&draws[0], 50, 20, p.trajectory_seed(0), &names(3)).unwrap();
        assert_eq!(c.panels[0], direct);
        assert_eq!(c.draw_index, vec![0]);
    }

    #[test]
    fn reproducible_and_thread_count_independent() {
        let draws = toy_draws(5, 3, 2);
        let a = generate_corpus(&draws, &plan(40, 30, 11), &names(3)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| generate_corpus(&draws, &plan(40, 30, 11), &names(3)).unwrap());
        assert_eq!(a, b);
        let c = generate_corpus(&draws, &plan(40, 30, 12), &names(3)).unwrap();
        assert_ne!(a.panels, c.panels);
    }

    #[test]
    fn draw_selection_uses_all_draws() {
        let p = plan(2_000, 10, 3);
        let mut counts = [0usize; 5];
        for m in 0..p.n_trajectories {
            counts[p.draw_for(m, 5)] += 1;
        }
        assert!(counts.iter().all(|&c| (300..500).contains(&c)), "{counts:?}");
    }

    #[test]
    fn plan_validation() {
        assert!(plan(1, 4, 0).validate(4).is_err());
        assert!(plan(1, 5, 0).validate(4).is_ok());
        assert!(plan(0, 5, 0).validate(4).is_err());
    }

    #[test]
    fn corpus_files_round_trip() {
        let draws = toy_draws(2, 3, 4);
        let c = generate_corpus(&draws, &plan(4, 12, 1), &names(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for format in [CorpusFormat::Single, CorpusFormat::Directory] {
            let path = dir.path().join(format!("corpus_{format}"));
            let path = if format == CorpusFormat::Single { path.with_extension("csv") } else { path };
            write_corpus(&c, &path, format).unwrap();
            assert_eq!(read_corpus(&path, format, &names(3)).unwrap(), c.panels);
        }
    }
}
