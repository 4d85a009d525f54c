//! Clean stepwise signals from continuous-time Markov chains.
//!
//! A [`RateMatrix`] drives a Gillespie simulation: from state `i` the dwell is
//! exponential with rate `|m_ii|` and the next state `j != i` is drawn with
//! probability `m_ij / |m_ii|`. The continuous path is sampled-and-held on a
//! regular grid, so dwells shorter than the sample interval may vanish.
//!
//! Levels are evenly spaced on `[0, 1]`: state `i` of a `K`-state chain sits at
//! `i / (K - 1)`.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::appkit::io::{write_json, write_trace_csv};
use crate::error::{Error, Result};
use crate::noisegen::{corrupt, NoiseKind, NoiseSpec};
use crate::rng::{derive_seed, rng_from_seed, SsdmRng};

pub const MIN_STATES: usize = 2;
pub const MAX_STATES: usize = 6;
const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateMatrixError {
    #[error("matrix is not square (row {row} has {len} entries, expected {k})")]
    NotSquare { row: usize, len: usize, k: usize },
    #[error("state count {0} outside [2, 6]")]
    StateCount(usize),
    #[error("row {row}: diagonal must be negative (got {value})")]
    NonNegativeDiagonal { row: usize, value: f64 },
    #[error("row {row}, column {col}: off-diagonal rate must be >= 0 (got {value})")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 0")]
    RowSum { row: usize, sum: f64 },
    #[error("row {row}: non-finite entry")]
    NonFinite { row: usize },
}

/// Check every rate-matrix invariant, reporting the first violation.
pub fn validate_rate_matrix(rows: &[Vec<f64>]) -> Result<(), RateMatrixError> {
    let k = rows.len();
    for (row, r) in rows.iter().enumerate() {
        if r.len() != k {
            return Err(RateMatrixError::NotSquare {
                row,
                len: r.len(),
                k,
            });
        }
    }
    if !(MIN_STATES..=MAX_STATES).contains(&k) {
        return Err(RateMatrixError::StateCount(k));
    }
    for (row, r) in rows.iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(RateMatrixError::NonFinite { row });
        }
        if r[row] >= 0.0 {
            return Err(RateMatrixError::NonNegativeDiagonal { row, value: r[row] });
        }
        if let Some((col, &value)) = r
            .iter()
            .enumerate()
            .find(|&(col, &v)| col != row && v < 0.0)
        {
            return Err(RateMatrixError::NegativeOffDiagonal { row, col, value });
        }
        let sum: f64 = r.iter().sum();
        if sum.abs() > ROW_SUM_TOL {
            return Err(RateMatrixError::RowSum { row, sum });
        }
    }
    Ok(())
}

/// A validated `K x K` transition-rate matrix, in events per sample interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl RateMatrix {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, RateMatrixError> {
        validate_rate_matrix(rows)?;
        Ok(Self {
            k: rows.len(),
            entries: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.k
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.k + to]
    }

    /// Total escape rate `|m_ii|` of a state.
    pub fn escape_rate(&self, state: usize) -> f64 {
        -self.rate(state, state)
    }

    /// Mean dwell time `1/|m_ii|`.
    pub fn mean_dwell(&self, state: usize) -> f64 {
        1.0 / self.escape_rate(state)
    }

    /// Probability of jumping to `to` when leaving `from`.
    pub fn jump_probability(&self, from: usize, to: usize) -> f64 {
        if from == to {
            0.0
        } else {
            self.rate(from, to) / self.escape_rate(from)
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.k).map(<[f64]>::to_vec).collect()
    }
}

/// One sojourn of the jump chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sojourn {
    pub state: usize,
    pub dwell: f64,
    pub next: usize,
}

/// Continuous-time jump-chain sampler (Gillespie direct method for a single
/// particle). Yields sojourns forever.
pub struct CtmcSampler<'a> {
    matrix: &'a RateMatrix,
    rng: SsdmRng,
    state: usize,
    exits: Vec<Exp<f64>>,
}

impl<'a> CtmcSampler<'a> {
    /// Start from a uniformly drawn initial state.
    pub fn new(matrix: &'a RateMatrix, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let state = rng.gen_range(0..matrix.k);
        Self::with_initial_state(matrix, rng, state)
    }

    fn with_initial_state(matrix: &'a RateMatrix, rng: SsdmRng, state: usize) -> Self {
        let exits = (0..matrix.k)
            .map(|i| Exp::new(matrix.escape_rate(i)).expect("escape rates are positive"))
            .collect();
        Self {
            matrix,
            rng,
            state,
            exits,
        }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn draw_next(&mut self, from: usize) -> usize {
        let k = self.matrix.k;
        let u: f64 = self.rng.gen::<f64>() * self.matrix.escape_rate(from);
        let mut acc = 0.0;
        let mut last = from;
        for to in (0..k).filter(|&j| j != from) {
            let r = self.matrix.rate(from, to);
            if r <= 0.0 {
                continue;
            }
            acc += r;
            last = to;
            if u < acc {
                return to;
            }
        }
        last
    }
}

impl Iterator for CtmcSampler<'_> {
    type Item = Sojourn;

    fn next(&mut self) -> Option<Sojourn> {
        let state = self.state;
        let dwell = self.exits[state].sample(&mut self.rng);
        let next = self.draw_next(state);
        self.state = next;
        Some(Sojourn { state, dwell, next })
    }
}

/// Sequence of state indices on the sample grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePath {
    pub states: Vec<usize>,
}

impl StatePath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn num_transitions(&self) -> usize {
        self.states.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

/// Gillespie simulation sampled-and-held on `{0, dt, ..., (n-1) dt}`.
pub fn simulate_ctmc(matrix: &RateMatrix, n: usize, dt: f64, seed: u64) -> Result<StatePath> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "trace length must be >= 2, got {n}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!(
            "sample interval must be > 0, got {dt}"
        )));
    }
    let mut sampler = CtmcSampler::new(matrix, seed);
    let mut current = sampler.next().expect("sampler is infinite");
    let mut boundary = current.dwell;
    let mut states = Vec::with_capacity(n);
    for idx in 0..n {
        let time = idx as f64 * dt;
        while time >= boundary {
            current = sampler.next().expect("sampler is infinite");
            boundary += current.dwell;
        }
        states.push(current.state);
    }
    Ok(StatePath { states })
}

/// Clean trace with its underlying state path.
#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseTrace {
    pub values: Vec<f64>,
    pub path: StatePath,
    pub num_states: usize,
}

impl StepwiseTrace {
    /// The evenly spaced levels `i / (K - 1)`.
    pub fn levels(&self) -> Vec<f64> {
        state_levels(self.num_states)
    }
}

pub fn state_levels(k: usize) -> Vec<f64> {
    (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
}

pub fn levels_from_path(path: &StatePath, k: usize) -> Result<StepwiseTrace> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 states, got {k}")));
    }
    if let Some(&bad) = path.states.iter().find(|&&s| s >= k) {
        return Err(Error::invalid(format!(
            "state {bad} out of range for K = {k}"
        )));
    }
    let denom = (k - 1) as f64;
    Ok(StepwiseTrace {
        values: path.states.iter().map(|&s| s as f64 / denom).collect(),
        path: path.clone(),
        num_states: k,
    })
}

/// One row of a rate-matrix catalog file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
}

/// A validated list of labelled rate matrices.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub entries: Vec<(String, RateMatrix)>,
}

/// The catalogs shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinCatalog {
    Train,
    Test,
}

impl BuiltinCatalog {
    pub fn json(self) -> &'static str {
        match self {
            BuiltinCatalog::Train => include_str!("../data/train_catalog.json"),
            BuiltinCatalog::Test => include_str!("../data/test_catalog.json"),
        }
    }
}

impl Catalog {
    pub fn builtin(which: BuiltinCatalog) -> Self {
        Self::from_json(which.json()).expect("built-in catalogs are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vec<CatalogEntry> = serde_json::from_str(text)?;
        Self::from_entries(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_entries(raw: Vec<CatalogEntry>) -> Result<Self> {
        let mut entries = Vec::with_capacity(raw.len());
        for e in raw {
            let m = RateMatrix::new(&e.rows)
                .map_err(|err| Error::invalid(format!("catalog entry {}: {err}", e.id)))?;
            if m.num_states() != e.k {
                return Err(Error::invalid(format!(
                    "catalog entry {}: K = {} but matrix is {}x{}",
                    e.id,
                    e.k,
                    m.num_states(),
                    m.num_states()
                )));
            }
            entries.push((e.id, m));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keep only matrices with `k` states.
    pub fn with_states(&self, k: usize) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(_, m)| m.num_states() == k)
                .cloned()
                .collect(),
        }
    }

    pub fn to_entries(&self) -> Vec<CatalogEntry> {
        self.entries
            .iter()
            .map(|(id, m)| CatalogEntry {
                id: id.clone(),
                k: m.num_states(),
                rows: m.rows(),
            })
            .collect()
    }
}

/// A generated trace together with its provenance.
#[derive(Debug, Clone)]
pub struct GeneratedTrace {
    pub id: String,
    pub matrix_id: String,
    pub seed: u64,
    pub clean: StepwiseTrace,
    pub noisy: Option<NoisyCopy>,
}

#[derive(Debug, Clone)]
pub struct NoisyCopy {
    pub spec: NoiseSpec,
    pub values: Vec<f64>,
}

/// What to generate for every catalog matrix.
#[derive(Debug, Clone)]
pub struct DatasetPlan {
    pub traces_per_matrix: usize,
    pub length: usize,
    pub dt: f64,
    pub seed: u64,
    /// Noise kind and SNR levels; `traces_per_matrix` fresh traces are drawn
    /// for every SNR level. `None` yields clean traces only.
    pub noise: Option<(NoiseKind, Vec<f64>)>,
}

impl DatasetPlan {
    pub fn clean(traces_per_matrix: usize, length: usize, seed: u64) -> Self {
        Self {
            traces_per_matrix,
            length,
            dt: 1.0,
            seed,
            noise: None,
        }
    }
}

/// Generate traces in memory. Pure in `(catalog, plan)`; parallel across traces.
pub fn generate_traces(catalog: &Catalog, plan: &DatasetPlan) -> Result<Vec<GeneratedTrace>> {
    use rayon::prelude::*;

    let snr_levels: Vec<Option<(usize, NoiseKind, f64)>> = match &plan.noise {
        None => vec![None],
        Some((kind, snrs)) => snrs
            .iter()
            .enumerate()
            .map(|(i, &s)| Some((i, *kind, s)))
            .collect(),
    };
    let mut jobs = Vec::new();
    for (mi, (mid, m)) in catalog.entries.iter().enumerate() {
        for level in &snr_levels {
            for ti in 0..plan.traces_per_matrix {
                jobs.push((mi, mid, m, *level, ti));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(mi, mid, m, level, ti)| {
            let snr_index = level.map_or(u64::MAX, |(i, _, _)| i as u64);
            let seed = derive_seed(plan.seed, &[mi as u64, snr_index, ti as u64]);
            let path = simulate_ctmc(m, plan.length, plan.dt, seed)?;
            let clean = levels_from_path(&path, m.num_states())?;
            let (id, noisy) = match level {
                None => (format!("{mid}-{ti:04}"), None),
                Some((_, kind, snr)) => {
                    let spec = NoiseSpec {
                        kind,
                        snr,
                        seed: derive_seed(seed, &[0x6E01_5E]),
                    };
                    let values = corrupt(&clean, &spec)?;
                    (
                        format!("{mid}-snr{}-{ti:04}", snr_tag(snr)),
                        Some(NoisyCopy { spec, values }),
                    )
                }
            };
            Ok(GeneratedTrace {
                id,
                matrix_id: mid.clone(),
                seed,
                clean,
                noisy,
            })
        })
        .collect()
}

fn snr_tag(snr: f64) -> String {
    format!("{snr}").replace('.', "p")
}

/// One manifest row: a trace (and its noisy copy, when present) on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub matrix_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub noise: Option<NoiseKind>,
    pub snr: Option<f64>,
    pub seed: u64,
    pub noise_seed: Option<u64>,
    pub trace_count: usize,
    /// Noisy trace when noise was applied, otherwise the clean trace.
    pub file: String,
    pub clean_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub length: usize,
    pub dt: f64,
    pub master_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl fmt::Display for DatasetManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} traces of length {} (seed {})",
            self.entries.len(),
            self.length,
            self.master_seed
        )
    }
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every file reference resolves under `root` and seeds are unique.
    pub fn validate(&self, root: &Path) -> Result<()> {
        let mut seeds = std::collections::HashSet::new();
        for e in &self.entries {
            if !seeds.insert(e.seed) {
                return Err(Error::invalid(format!(
                    "duplicate seed {} in manifest",
                    e.seed
                )));
            }
            for f in [&e.file, &e.clean_file] {
                if !root.join(f).is_file() {
                    return Err(Error::invalid(format!(
                        "manifest references missing file {f}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generate a dataset and store it under `out_dir` (`traces/*.csv` plus
/// `manifest.json`).
pub fn build_dataset(
    catalog: &Catalog,
    plan: &DatasetPlan,
    out_dir: &Path,
) -> Result<(DatasetManifest, Vec<GeneratedTrace>)> {
    let traces = generate_traces(catalog, plan)?;
    let manifest = write_dataset(&traces, plan, out_dir)?;
    Ok((manifest, traces))
}

pub fn write_dataset(
    traces: &[GeneratedTrace],
    plan: &DatasetPlan,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let trace_dir: PathBuf = out_dir.join("traces");
    if !traces.is_empty() {
        std::fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    } else {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    }
    let mut entries = Vec::with_capacity(traces.len());
    for tr in traces {
        let clean_rel = format!("traces/{}.clean.csv", tr.id);
        write_trace_csv(&out_dir.join(&clean_rel), &tr.clean.values)?;
        let (file, noise, snr, noise_seed) = match &tr.noisy {
            Some(nc) => {
                let rel = format!("traces/{}.noisy.csv", tr.id);
                write_trace_csv(&out_dir.join(&rel), &nc.values)?;
                (
                    rel,
                    Some(nc.spec.kind),
                    Some(nc.spec.snr),
                    Some(nc.spec.seed),
                )
            }
            None => (clean_rel.clone(), None, None, None),
        };
        entries.push(ManifestEntry {
            id: tr.id.clone(),
            matrix_id: tr.matrix_id.clone(),
            k: tr.clean.num_states,
            noise,
            snr,
            seed: tr.seed,
            noise_seed,
            trace_count: 1,
            file,
            clean_file: clean_rel,
        });
    }
    let manifest = DatasetManifest {
        length: plan.length,
        dt: plan.dt,
        master_seed: plan.seed,
        entries,
    };
    write_json(&out_dir.join(DatasetManifest::FILE_NAME), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64) -> RateMatrix {
        RateMatrix::new(&[vec![-a, a], vec![b, -b]]).unwrap()
    }

    #[test]
    fn validation_examples() {
        assert!(validate_rate_matrix(&[vec![-0.01, 0.01], vec![0.01, -0.01]]).is_ok());
        match validate_rate_matrix(&[vec![-0.01, 0.02], vec![0.01, -0.01]]) {
            Err(RateMatrixError::RowSum { row: 0, sum }) => assert!((sum - 0.01).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            validate_rate_matrix(&[vec![0.0, 0.0], vec![0.0, 0.0]]),
            Err(RateMatrixError::NonNegativeDiagonal { row: 0, .. })
        ));
        assert!(matches!(
            validate_rate_matrix(&[vec![-0.01, 0.01], vec![0.01]]),
            Err(RateMatrixError::NotSquare { row: 1, .. })
        ));
        assert!(matches!(
            validate_rate_matrix(&[
                vec![-0.01, 0.02, -0.01],
                vec![0.01, -0.02, 0.01],
                vec![0.01, 0.01, -0.02]
            ]),
            Err(RateMatrixError::NegativeOffDiagonal { row: 0, col: 2, .. })
        ));
        assert!(matches!(
            validate_rate_matrix(&[vec![-1.0]]),
            Err(RateMatrixError::StateCount(1))
        ));
    }

    #[test]
    fn slow_initial_state_gives_constant_path() {
        let m = m2(1e-9, 1e-9);
        let path = simulate_ctmc(&m, 1000, 1.0, 3).unwrap();
        // first dwell ~ Exp(1e-9): far beyond the 1000-sample window
        let first = CtmcSampler::new(&m, 3).next().unwrap();
        assert!(first.dwell > 1000.0);
        assert!(path.states.iter().all(|&s| s == path.states[0]));
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = m2(0.1, 0.3);
        let a = simulate_ctmc(&m, 1000, 1.0, 42).unwrap();
        let b = simulate_ctmc(&m, 1000, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_ctmc(&m, 1000, 1.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn simulation_preconditions() {
        let m = m2(0.1, 0.3);
        assert!(simulate_ctmc(&m, 1, 1.0, 0).is_err());
        assert!(simulate_ctmc(&m, 10, 0.0, 0).is_err());
    }

    #[test]
    fn dwell_means_match_escape_rates() {
        let m = m2(0.01, 0.5);
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for s in CtmcSampler::new(&m, 11).take(20_000) {
            sums[s.state] += s.dwell;
            counts[s.state] += 1;
        }
        assert!(counts.iter().all(|&c| c >= 10_000 - 1));
        let mean0 = sums[0] / counts[0] as f64;
        let mean1 = sums[1] / counts[1] as f64;
        assert!((mean0 / 100.0 - 1.0).abs() < 0.05, "{mean0}");
        assert!((mean1 / 2.0 - 1.0).abs() < 0.05, "{mean1}");
    }

    #[test]
    fn levels_examples() {
        let t = levels_from_path(
            &StatePath {
                states: vec![0, 1, 1],
            },
            2,
        )
        .unwrap();
        assert_eq!(t.values, vec![0.0, 1.0, 1.0]);
        let t = levels_from_path(&StatePath { states: vec![1] }, 3).unwrap();
        assert_eq!(t.values, vec![0.5]);
        let t = levels_from_path(&StatePath { states: vec![2] }, 4).unwrap();
        assert_eq!(t.values, vec![2.0 / 3.0]);
        assert!(levels_from_path(&StatePath { states: vec![0] }, 1).is_err());
        assert!(levels_from_path(&StatePath { states: vec![3] }, 3).is_err());
    }

    #[test]
    fn builtin_catalog_sizes() {
        let train = Catalog::builtin(BuiltinCatalog::Train);
        let counts: Vec<usize> = (2..=4).map(|k| train.with_states(k).len()).collect();
        assert_eq!(counts, vec![8, 12, 16]);
        let test = Catalog::builtin(BuiltinCatalog::Test);
        let counts: Vec<usize> = (2..=4).map(|k| test.with_states(k).len()).collect();
        assert_eq!(counts, vec![8, 16, 16]);
        let first = &train.entries[0].1;
        assert_eq!(first.rows(), vec![vec![-0.01, 0.01], vec![0.01, -0.01]]);
    }

    #[test]
    fn catalog_rejects_bad_matrix_and_k_label() {
        let bad = r#"[{"id":"x","K":2,"rows":[[-0.01,0.02],[0.01,-0.01]]}]"#;
        assert!(Catalog::from_json(bad).is_err());
        let mislabelled = r#"[{"id":"x","K":3,"rows":[[-0.01,0.01],[0.01,-0.01]]}]"#;
        assert!(Catalog::from_json(mislabelled).is_err());
    }

    #[test]
    fn zero_traces_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cat = Catalog::builtin(BuiltinCatalog::Train);
        let (man, traces) =
            build_dataset(&cat, &DatasetPlan::clean(0, 1000, 1), dir.path()).unwrap();
        assert!(man.entries.is_empty());
        assert!(traces.is_empty());
        assert!(!dir.path().join("traces").exists());
    }

    #[test]
    fn generated_values_are_levels() {
        let cat = Catalog::builtin(BuiltinCatalog::Test);
        let traces = generate_traces(&cat, &DatasetPlan::clean(1, 300, 5)).unwrap();
        assert_eq!(traces.len(), 40);
        for tr in &traces {
            let levels = tr.clean.levels();
            assert!(tr
                .clean
                .values
                .iter()
                .all(|v| levels.iter().any(|l| l == v)));
        }
    }
}
