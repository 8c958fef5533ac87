//! Four stacked configurations trained from one shared initialization per
//! seed and scored on held-out data.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{evaluate, fit, init_model, prepare, Continue, Dataset, Example, TrainConfig, TrainError};
use crate::model::{Model, ModelConfig, Vocab};
use crate::nn::{write_checkpoint, AdamW, AdamWConfig};
use crate::textfmt::fixed;

pub const ROW_NAMES: [&str; 4] = ["base", "+KG", "+MMKG", "+Alignment"];

/// Model toggles of row `row`; every other field comes from `base`.
pub fn row_config(base: &ModelConfig, row: usize) -> ModelConfig {
    let (use_kg, use_mmkg, use_alignment) = match row {
        0 => (false, false, false),
        1 => (true, false, false),
        2 => (true, true, false),
        3 => (true, true, true),
        _ => panic!("ablation has four rows"),
    };
    ModelConfig { use_kg, use_mmkg, use_alignment, ..*base }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    /// Held-out accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    /// SHA-256 of the initial checkpoint of every (seed, row) run, indexed
    /// `[seed][row]`.
    pub init_digests: Vec<Vec<String>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationReport {
    /// Aligned table: configuration, mean ± std, then one column per seed.
    pub fn table(&self) -> String {
        let mut header = vec!["config".to_string(), "accuracy".to_string()];
        header.extend(self.seeds.iter().map(|s| format!("seed {s}")));
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![r.name.clone(), format!("{} ± {}", fixed(r.mean, 4), fixed(r.std, 4))];
            line.extend(r.accuracies.iter().map(|a| fixed(*a, 4)));
            lines.push(line);
        }
        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// Tab-separated twin of [`AblationReport::table`] with full precision.
    pub fn tsv(&self) -> String {
        let mut out = String::from("config\tmean\tstd");
        for s in &self.seeds {
            let _ = write!(out, "\tseed_{s}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}\t{}\t{}", r.name, r.mean, r.std);
            for a in &r.accuracies {
                let _ = write!(out, "\t{a}");
            }
            out.push('\n');
        }
        out
    }
}

/// Held-out accuracy and initial-checkpoint digest of one run.
type RunResult = Result<(f64, String), TrainError>;

fn digest(model: &Model) -> String {
    Sha256::digest(write_checkpoint(&model.params)).iter().map(|b| format!("{b:02x}")).collect()
}

/// Train every row for every seed, at most `jobs` runs at a time, and
/// report held-out accuracy on `test`.
pub fn run_ablation(
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    vocab: &Vocab,
    seeds: &[u64],
    jobs: usize,
) -> Result<AblationReport, TrainError> {
    if seeds.len() < 3 {
        return Err(TrainError::InvalidConfig(format!("ablation needs at least 3 seeds, got {}", seeds.len())));
    }
    config.validate()?;
    let full = row_config(&config.model, 3);
    let mut data: Vec<(Vec<Example>, Vec<Example>)> = Vec::with_capacity(4);
    for row in 0..4 {
        let cfg = row_config(&config.model, row);
        data.push((prepare(train, vocab, &cfg, &config.retrieval)?, prepare(test, vocab, &cfg, &config.retrieval)?));
    }
    let inits = seeds.iter().map(|&s| init_model(&full, s, &[train, test])).collect::<Result<Vec<_>, _>>()?;

    let runs: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|s| (0..4).map(move |r| (s, r))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<RunResult>>> = Mutex::new(vec![None; runs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, runs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(s, row)) = runs.get(k) else { break };
                let outcome = (|| {
                    let mut model = Model { config: row_config(&config.model, row), params: inits[s].params.clone() };
                    let start = digest(&model);
                    let run_cfg = TrainConfig { seed: seeds[s], model: model.config, ..*config };
                    let mut opt = AdamW::new(AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() });
                    fit(&mut model, &data[row].0, &run_cfg, &mut opt, |_, _| Ok(Continue::Yes))?;
                    Ok((evaluate(&model, &data[row].1)?.accuracy, start))
                })();
                results.lock().expect("no run panics while holding the lock")[k] = Some(outcome);
            });
        }
    });

    let results = results.into_inner().expect("runs finished");
    let mut acc = vec![vec![0.0; seeds.len()]; 4];
    let mut init_digests = vec![vec![String::new(); 4]; seeds.len()];
    for (k, r) in results.into_iter().enumerate() {
        let (s, row) = runs[k];
        let (a, d) = r.expect("every run executed")?;
        acc[row][s] = a;
        init_digests[s][row] = d;
    }
    let rows = ROW_NAMES
        .iter()
        .zip(acc)
        .map(|(name, accuracies)| {
            let (mean, std) = mean_std(&accuracies);
            AblationRow { name: name.to_string(), accuracies, mean, std }
        })
        .collect();
    Ok(AblationReport { seeds: seeds.to_vec(), rows, init_digests })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_stack() {
        let base = ModelConfig::default();
        let flags: Vec<_> = (0..4).map(|r| row_config(&base, r)).map(|c| (c.use_kg, c.use_mmkg, c.use_alignment)).collect();
        assert_eq!(flags, [(false, false, false), (true, false, false), (true, true, false), (true, true, true)]);
        for r in 0..4 {
            row_config(&base, r).validate().unwrap();
        }
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn table_layout() {
        let row = |n: &str, a: Vec<f64>| {
            let (mean, std) = mean_std(&a);
            AblationRow { name: n.into(), accuracies: a, mean, std }
        };
        let r = AblationReport {
            seeds: vec![1, 2, 3],
            rows: vec![row("base", vec![0.5, 0.5, 0.5]), row("+KG", vec![1.0, 0.75, 1.0])],
            init_digests: vec![],
        };
        let t = r.table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("base    0.5000 ± 0.0000  0.5000"), "{t}");
        assert_eq!(lines[0].find("accuracy"), lines[2].find("0.9167"));
        assert_eq!(r.tsv().lines().nth(1).unwrap(), "base\t0.5\t0\t0.5\t0.5\t0.5");
    }
}
