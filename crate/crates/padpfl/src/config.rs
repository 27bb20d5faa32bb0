//! Scenario configuration: loading, validation, and the built-in presets.
//!
//! Configurations are plain JSON. Loading resolves every default, so the
//! effective configuration can be dumped back out and re-run bit-identically.
//! Clients are described in *parts*: contiguous groups that share a dataset
//! size, a corruption density, and an impact weight. Corruption densities and
//! impact weights may change at round boundaries (phases), which covers both
//! fixed and adaptive impact assignments.

use crate::data::{self, Dataset, Severity};
use crate::dp::PrivacyParams;
use crate::error::{Error, Result};
use crate::schedule::{validate_impacts, ImpactSchedule};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable naming the directory with the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "PADPFL_DATA_DIR";

/// A contiguous group of clients sharing size, corruption, and impact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub clients: usize,
    pub samples: usize,
}

/// Privacy budget section; omit the whole section for non-private runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySection {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_bound: f64,
    #[serde(default = "default_revelations")]
    pub revelations: u32,
}

fn default_revelations() -> u32 {
    1
}

/// A corruption density: either a named severity or a literal fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensitySpec {
    Named(Severity),
    Value(f64),
}

impl DensitySpec {
    pub fn resolve(&self, map: &SeverityMap) -> f64 {
        match self {
            DensitySpec::Named(s) => map.density(*s),
            DensitySpec::Value(v) => *v,
        }
    }
}

/// Densities per part, applied from `start_round` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPhase {
    pub start_round: usize,
    pub densities: Vec<DensitySpec>,
}

/// Per-client impact weights per part, applied from `start_round` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactPhase {
    pub start_round: usize,
    /// Weight given to *each client* of part `j`.
    pub part_weights: Vec<f64>,
}

/// Overridable mapping from severity names to pixel densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityMap {
    pub none: f64,
    pub slight: f64,
    pub moderate: f64,
    pub severe: f64,
}

impl Default for SeverityMap {
    fn default() -> Self {
        Self {
            none: Severity::None.default_density(),
            slight: Severity::Slight.default_density(),
            moderate: Severity::Moderate.default_density(),
            severe: Severity::Severe.default_density(),
        }
    }
}

impl SeverityMap {
    pub fn density(&self, s: Severity) -> f64 {
        match s {
            Severity::None => self.none,
            Severity::Slight => self.slight,
            Severity::Moderate => self.moderate,
            Severity::Severe => self.severe,
        }
    }
}

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// IDX files on disk; `dir` defaults to `$PADPFL_DATA_DIR`.
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
    },
    /// Built-in procedural digits; no files needed.
    Synthetic { train: usize, test: usize },
}

/// Constants for the convergence-bound analysis that cannot be read off a
/// metrics trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    /// Lipschitz-smoothness constant of the local losses.
    pub rho: f64,
    /// Magnitude of the negative curvature subtracted from mu.
    pub rho_minus: f64,
    /// Gradient divergence bound; 0 gives dissimilarity exactly 1.
    pub divergence: f64,
    /// Overrides for trace-derived estimates, when set.
    pub gamma: Option<f64>,
    pub grad_bound: Option<f64>,
    pub theta: Option<f64>,
    pub max_local_loss: Option<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            rho: 1.0,
            rho_minus: 0.0,
            divergence: 0.0,
            gamma: None,
            grad_bound: None,
            theta: None,
            max_local_loss: None,
        }
    }
}

/// A complete, runnable experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub num_clients: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub local_epochs: u32,
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub mu: f64,
    pub hidden_size: usize,
    #[serde(default)]
    pub privacy: Option<PrivacySection>,
    pub parts: Vec<PartSpec>,
    pub corruption: Vec<CorruptionPhase>,
    pub impacts: Vec<ImpactPhase>,
    #[serde(default)]
    pub label_skew: bool,
    #[serde(default)]
    pub severities: SeverityMap,
    pub data: DataSource,
    #[serde(default)]
    pub record_snapshots: bool,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Load and fully validate a configuration file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ScenarioConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

impl ScenarioConfig {
    /// Cross-field validation; every error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let field = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        if self.num_clients == 0 {
            return field("num_clients", "must be at least 1".into());
        }
        if self.parts.is_empty() {
            return field("parts", "at least one part is required".into());
        }
        let part_total: usize = self.parts.iter().map(|p| p.clients).sum();
        if part_total != self.num_clients {
            return field(
                "parts",
                format!("parts cover {part_total} clients, num_clients is {}", self.num_clients),
            );
        }
        for (j, part) in self.parts.iter().enumerate() {
            if part.clients == 0 || part.samples == 0 {
                return field("parts", format!("part {j} has zero clients or samples"));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return field(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            );
        }
        if self.local_epochs == 0 {
            return field("local_epochs", "must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            return field("batch_size", "must be at least 1 when set".into());
        }
        if !(self.mu >= 0.0) {
            return field("mu", format!("must be nonnegative, got {}", self.mu));
        }
        if self.hidden_size == 0 {
            return field("hidden_size", "must be at least 1".into());
        }

        self.check_phases(
            "corruption",
            self.corruption.iter().map(|p| (p.start_round, p.densities.len())),
        )?;
        for phase in &self.corruption {
            for (j, d) in phase.densities.iter().enumerate() {
                let v = d.resolve(&self.severities);
                if !(0.0..=1.0).contains(&v) {
                    return field(
                        "corruption.densities",
                        format!("part {j} density {v} outside [0, 1]"),
                    );
                }
            }
        }

        self.check_phases(
            "impacts",
            self.impacts.iter().map(|p| (p.start_round, p.part_weights.len())),
        )?;
        for phase in &self.impacts {
            let row = self.expand_weights(&phase.part_weights);
            validate_impacts(&row, Some(phase.start_round))?;
        }

        if let Some(privacy) = &self.privacy {
            if self.rounds > 0 {
                self.privacy_params()
                    .expect("section present")
                    .validate()?;
            } else if !(privacy.epsilon > 0.0) {
                return field("privacy.epsilon", "must be positive".into());
            }
        }

        if let DataSource::Synthetic { train, test } = &self.data {
            let needed: usize = self.dataset_sizes().iter().sum();
            if *train < needed {
                return field(
                    "data.train",
                    format!("{train} synthetic samples cannot cover {needed} client samples"),
                );
            }
            if *test == 0 {
                return field("data.test", "must be at least 1".into());
            }
        }
        Ok(())
    }

    fn check_phases(
        &self,
        what: &str,
        phases: impl ExactSizeIterator<Item = (usize, usize)>,
    ) -> Result<()> {
        let n = phases.len();
        if n == 0 {
            return Err(Error::Config {
                field: what.into(),
                message: "at least one phase is required".into(),
            });
        }
        let mut prev: Option<usize> = None;
        for (idx, (start, width)) in phases.enumerate() {
            if idx == 0 && start != 0 {
                return Err(Error::Config {
                    field: what.into(),
                    message: format!("first phase starts at round {start}, expected 0"),
                });
            }
            if let Some(p) = prev {
                if start <= p {
                    return Err(Error::Config {
                        field: what.into(),
                        message: format!("phase starts {p} and {start} are not increasing"),
                    });
                }
            }
            if self.rounds > 0 && start >= self.rounds {
                return Err(Error::Config {
                    field: what.into(),
                    message: format!("phase start {start} beyond {} rounds", self.rounds),
                });
            }
            if width != self.parts.len() {
                return Err(Error::Config {
                    field: what.into(),
                    message: format!(
                        "phase {idx} lists {width} parts, expected {}",
                        self.parts.len()
                    ),
                });
            }
            prev = Some(start);
        }
        Ok(())
    }

    /// One dataset size per client, expanded from the parts.
    pub fn dataset_sizes(&self) -> Vec<usize> {
        self.parts
            .iter()
            .flat_map(|p| std::iter::repeat(p.samples).take(p.clients))
            .collect()
    }

    fn expand_weights(&self, part_weights: &[f64]) -> Vec<f64> {
        self.parts
            .iter()
            .zip(part_weights)
            .flat_map(|(p, &w)| std::iter::repeat(w).take(p.clients))
            .collect()
    }

    /// The full per-round impact schedule.
    pub fn schedule(&self) -> Result<ImpactSchedule> {
        let segments: Vec<(usize, Vec<f64>)> = self
            .impacts
            .iter()
            .map(|phase| (phase.start_round, self.expand_weights(&phase.part_weights)))
            .collect();
        ImpactSchedule::piecewise(&segments, self.rounds)
    }

    /// Corruption phases expanded to one density per client.
    pub fn corruption_phases(&self) -> Result<Vec<(usize, Vec<f64>)>> {
        Ok(self
            .corruption
            .iter()
            .map(|phase| {
                let densities: Vec<f64> = self
                    .parts
                    .iter()
                    .zip(&phase.densities)
                    .flat_map(|(p, d)| {
                        std::iter::repeat(d.resolve(&self.severities)).take(p.clients)
                    })
                    .collect();
                (phase.start_round, densities)
            })
            .collect())
    }

    /// Privacy parameters for the whole run, when the run is private.
    pub fn privacy_params(&self) -> Option<PrivacyParams> {
        self.privacy.as_ref().map(|p| PrivacyParams {
            epsilon: p.epsilon,
            delta: p.delta,
            clip_bound: p.clip_bound,
            revelations: p.revelations,
            rounds: self.rounds as u32,
            dataset_sizes: self.dataset_sizes(),
        })
    }

    /// Load (or generate) the train and test datasets.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DataSource::Synthetic { train, test } => {
                use crate::federation::{stream_rng, StreamPurpose};
                use rand::Rng;
                let train_seed =
                    stream_rng(self.seed, StreamPurpose::Partition, 0, 1).gen::<u64>();
                let test_seed =
                    stream_rng(self.seed, StreamPurpose::Partition, 0, 2).gen::<u64>();
                Ok((
                    data::synthetic::generate(*train, train_seed),
                    data::synthetic::generate(*test, test_seed),
                ))
            }
            DataSource::Mnist { dir } => {
                let dir = match dir {
                    Some(d) => d.clone(),
                    None => PathBuf::from(std::env::var(DATA_DIR_ENV).map_err(|_| {
                        Error::Config {
                            field: "data.dir".into(),
                            message: format!(
                                "no directory given and {DATA_DIR_ENV} is not set"
                            ),
                        }
                    })?),
                };
                let train = data::load_mnist(
                    &find_idx(&dir, "train-images-idx3-ubyte")?,
                    &find_idx(&dir, "train-labels-idx1-ubyte")?,
                )?;
                let test = data::load_mnist(
                    &find_idx(&dir, "t10k-images-idx3-ubyte")?,
                    &find_idx(&dir, "t10k-labels-idx1-ubyte")?,
                )?;
                Ok((train, test))
            }
        }
    }

    /// Serialize the fully resolved configuration; reloading this dump
    /// reproduces the identical run.
    pub fn effective_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Replace the impact phases with weights derived from per-part ratios:
    /// part `j` clients each get `r_j / sum_j clients_j r_j`.
    pub fn with_impact_ratios(mut self, ratios_per_phase: &[(usize, Vec<f64>)]) -> Result<Self> {
        let mut phases = Vec::with_capacity(ratios_per_phase.len());
        for (start_round, ratios) in ratios_per_phase {
            phases.push(ImpactPhase {
                start_round: *start_round,
                part_weights: weights_from_ratios(&self.parts, ratios)?,
            });
        }
        self.impacts = phases;
        self.validate()?;
        Ok(self)
    }

    /// Same phase boundaries, every client weighted `1/N`.
    pub fn identical_impacts(self) -> Result<Self> {
        let phases: Vec<(usize, Vec<f64>)> = self
            .impacts
            .iter()
            .map(|p| (p.start_round, vec![1.0; self.parts.len()]))
            .collect();
        self.with_impact_ratios(&phases)
    }

    /// Each phase's part weights reversed.
    pub fn reversed_impacts(mut self) -> Result<Self> {
        for phase in &mut self.impacts {
            phase.part_weights.reverse();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        if let Some(p) = &mut self.privacy {
            p.epsilon = epsilon;
        }
        self
    }

    pub fn non_private(mut self) -> Self {
        self.privacy = None;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn find_idx(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::Config {
        field: "data.dir".into(),
        message: format!("neither {name} nor {name}.gz found in {}", dir.display()),
    })
}

/// Normalized per-client weights from per-part ratios.
pub fn weights_from_ratios(parts: &[PartSpec], ratios: &[f64]) -> Result<Vec<f64>> {
    if ratios.len() != parts.len() {
        return Err(Error::Config {
            field: "impacts".into(),
            message: format!("{} ratios for {} parts", ratios.len(), parts.len()),
        });
    }
    let total: f64 = parts
        .iter()
        .zip(ratios)
        .map(|(p, r)| p.clients as f64 * r)
        .sum();
    if !(total > 0.0) {
        return Err(Error::Config {
            field: "impacts".into(),
            message: "impact ratios sum to zero".into(),
        });
    }
    Ok(ratios.iter().map(|r| r / total).collect())
}

/// The four built-in scenarios: 60 clients in three parts, 30 rounds,
/// learning rate 0.02, and a (5, 0.01) privacy budget by default.
///
/// 1. equal sizes, corruption severe/moderate/none, impacts 0-1-2
/// 2. parts of 20/35/5 clients, corruption severe/slight/none, impacts 0-2-1
/// 3. sizes 50/120/271, no corruption, impacts 1-3-5
/// 4. corruption flips at round 10 and the impacts flip with it
pub fn preset(which: u8) -> Result<ScenarioConfig> {
    let (parts, corruption, impact_ratios): (
        Vec<PartSpec>,
        Vec<CorruptionPhase>,
        Vec<(usize, Vec<f64>)>,
    ) = match which {
        1 => (
            vec![
                PartSpec { clients: 20, samples: 150 },
                PartSpec { clients: 20, samples: 150 },
                PartSpec { clients: 20, samples: 150 },
            ],
            vec![CorruptionPhase {
                start_round: 0,
                densities: vec![
                    DensitySpec::Named(Severity::Severe),
                    DensitySpec::Named(Severity::Moderate),
                    DensitySpec::Named(Severity::None),
                ],
            }],
            vec![(0, vec![0.0, 1.0, 2.0])],
        ),
        2 => (
            vec![
                PartSpec { clients: 20, samples: 150 },
                PartSpec { clients: 35, samples: 150 },
                PartSpec { clients: 5, samples: 150 },
            ],
            vec![CorruptionPhase {
                start_round: 0,
                densities: vec![
                    DensitySpec::Named(Severity::Severe),
                    DensitySpec::Named(Severity::Slight),
                    DensitySpec::Named(Severity::None),
                ],
            }],
            vec![(0, vec![0.0, 2.0, 1.0])],
        ),
        3 => (
            vec![
                PartSpec { clients: 20, samples: 50 },
                PartSpec { clients: 20, samples: 120 },
                PartSpec { clients: 20, samples: 271 },
            ],
            vec![CorruptionPhase {
                start_round: 0,
                densities: vec![
                    DensitySpec::Named(Severity::None),
                    DensitySpec::Named(Severity::None),
                    DensitySpec::Named(Severity::None),
                ],
            }],
            vec![(0, vec![1.0, 3.0, 5.0])],
        ),
        4 => (
            vec![
                PartSpec { clients: 20, samples: 150 },
                PartSpec { clients: 20, samples: 150 },
                PartSpec { clients: 20, samples: 150 },
            ],
            vec![
                CorruptionPhase {
                    start_round: 0,
                    densities: vec![
                        DensitySpec::Named(Severity::Severe),
                        DensitySpec::Named(Severity::Moderate),
                        DensitySpec::Named(Severity::Slight),
                    ],
                },
                CorruptionPhase {
                    start_round: 10,
                    densities: vec![
                        DensitySpec::Named(Severity::Slight),
                        DensitySpec::Named(Severity::Moderate),
                        DensitySpec::Named(Severity::Severe),
                    ],
                },
            ],
            vec![(0, vec![0.0, 1.0, 2.0]), (10, vec![2.0, 1.0, 0.0])],
        ),
        other => {
            return Err(Error::InvalidParameter {
                name: "preset",
                message: format!("unknown preset {other}, expected 1..=4"),
            })
        }
    };

    let config = ScenarioConfig {
        seed: 42,
        num_clients: parts.iter().map(|p| p.clients).sum(),
        rounds: 30,
        learning_rate: 0.02,
        local_epochs: 2,
        batch_size: Some(50),
        mu: 0.01,
        hidden_size: 64,
        privacy: Some(PrivacySection {
            epsilon: 5.0,
            delta: 0.01,
            clip_bound: 10.0,
            revelations: 1,
        }),
        parts,
        corruption,
        impacts: Vec::new(),
        label_skew: false,
        severities: SeverityMap::default(),
        data: DataSource::Synthetic {
            train: 9100,
            test: 1000,
        },
        record_snapshots: false,
        analysis: AnalysisSection::default(),
        output_dir: None,
    };
    config.with_impact_ratios(&impact_ratios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn preset1_matches_scenario_table() {
        let cfg = preset(1).unwrap();
        assert_eq!(cfg.num_clients, 60);
        assert_eq!(cfg.rounds, 30);
        assert_abs_diff_eq!(cfg.learning_rate, 0.02);
        let privacy = cfg.privacy.as_ref().unwrap();
        assert_abs_diff_eq!(privacy.delta, 0.01);
        assert!(cfg.dataset_sizes().iter().all(|&m| m == 150));
        let weights = &cfg.impacts[0].part_weights;
        assert_abs_diff_eq!(weights[0], 0.0);
        assert_abs_diff_eq!(weights[1], 1.0 / 60.0, epsilon = 1e-15);
        assert_abs_diff_eq!(weights[2], 1.0 / 30.0, epsilon = 1e-15);
    }

    #[test]
    fn preset2_caption_weights() {
        let cfg = preset(2).unwrap();
        let weights = &cfg.impacts[0].part_weights;
        assert_abs_diff_eq!(weights[0], 0.0);
        assert_abs_diff_eq!(weights[1], 2.0 / 75.0, epsilon = 1e-15);
        assert_abs_diff_eq!(weights[2], 1.0 / 75.0, epsilon = 1e-15);
    }

    #[test]
    fn preset3_caption_weights() {
        let cfg = preset(3).unwrap();
        let weights = &cfg.impacts[0].part_weights;
        assert_abs_diff_eq!(weights[0], 1.0 / 180.0, epsilon = 1e-15);
        assert_abs_diff_eq!(weights[1], 1.0 / 60.0, epsilon = 1e-15);
        assert_abs_diff_eq!(weights[2], 1.0 / 36.0, epsilon = 1e-15);
        assert_eq!(
            cfg.dataset_sizes().iter().sum::<usize>(),
            20 * 50 + 20 * 120 + 20 * 271
        );
    }

    #[test]
    fn preset4_has_two_aligned_phases() {
        let cfg = preset(4).unwrap();
        assert_eq!(cfg.impacts.len(), 2);
        assert_eq!(cfg.corruption.len(), 2);
        assert_eq!(cfg.impacts[1].start_round, 10);
        let early = &cfg.impacts[0].part_weights;
        let late = &cfg.impacts[1].part_weights;
        assert_abs_diff_eq!(early[2], 1.0 / 30.0, epsilon = 1e-15);
        assert_abs_diff_eq!(late[0], 1.0 / 30.0, epsilon = 1e-15);
        assert_abs_diff_eq!(late[2], 0.0);
    }

    #[test]
    fn schedule_expansion_is_row_stochastic() {
        for which in 1..=4 {
            let cfg = preset(which).unwrap();
            let schedule = cfg.schedule().unwrap();
            for t in 0..schedule.num_rounds() {
                let sum: f64 = schedule.row(t).iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn bad_impact_row_is_rejected_with_round() {
        let mut cfg = preset(1).unwrap();
        cfg.impacts[0].part_weights = vec![0.0, 0.002, 0.002];
        match cfg.validate() {
            Err(Error::ImpactSumMismatch { round: Some(0), .. }) => {}
            other => panic!("expected sum mismatch at round 0, got {other:?}"),
        }
    }

    #[test]
    fn parts_must_cover_num_clients() {
        let mut cfg = preset(1).unwrap();
        cfg.num_clients = 61;
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = preset(4).unwrap();
        let json = cfg.effective_json();
        let back: ScenarioConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(json, back.effective_json());
    }

    #[test]
    fn load_config_reports_parse_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_config(&path), Err(Error::Parse(_))));
        assert!(load_config(&dir.path().join("absent.json")).is_err());
    }

    #[test]
    fn variant_builders_preserve_structure() {
        let cfg = preset(1).unwrap();
        let identical = cfg.clone().identical_impacts().unwrap();
        assert!(identical.impacts[0]
            .part_weights
            .iter()
            .all(|&w| (w - 1.0 / 60.0).abs() < 1e-15));
        let reversed = cfg.reversed_impacts().unwrap();
        assert_abs_diff_eq!(
            reversed.impacts[0].part_weights[0],
            1.0 / 30.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(reversed.impacts[0].part_weights[2], 0.0);
    }

    #[test]
    fn density_spec_accepts_names_and_numbers() {
        let json = r#"{"start_round": 0, "densities": ["severe", 0.11, "none"]}"#;
        let phase: CorruptionPhase = serde_json::from_str(json).unwrap();
        let map = SeverityMap::default();
        assert_abs_diff_eq!(phase.densities[0].resolve(&map), 0.4);
        assert_abs_diff_eq!(phase.densities[1].resolve(&map), 0.11);
        assert_abs_diff_eq!(phase.densities[2].resolve(&map), 0.0);
    }
}
