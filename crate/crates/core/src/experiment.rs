//! End-to-end runs: generate a biased training set and a balanced test set,
//! pretrain, then probe and measure the spectrum of the frozen encoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, ProbeConfig, ProbeParams, SpectrumReport, SubgroupReport};
use crate::numeric::ParamSet;
use crate::synthdata::{generate, Dataset, GeneratorConfig};
use crate::trainer::{pretrain, RunLog, TrainConfig};

/// Stream id of the balanced test split.
pub const TEST_STREAM: u64 = 1;

pub const SUBGROUPS: [&str; 2] = ["aligned", "conflicting"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub test_n: usize,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

impl ExperimentConfig {
    pub fn train_data(&self) -> Result<Dataset> {
        generate(&self.generator)
    }

    pub fn test_data(&self) -> Result<Dataset> {
        generate(&self.generator.balanced_split(self.test_n, TEST_STREAM))
    }
}

/// Probe results on the test split, one report per confound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub probe: ProbeParams,
    pub reports: Vec<SubgroupReport>,
    pub spectrum: SpectrumReport,
}

impl Evaluation {
    /// Test accuracy on examples conflicting with confound `j`.
    pub fn conflicting_accuracy(&self, j: usize) -> f64 {
        self.subgroup_accuracy(j, "conflicting")
    }

    pub fn aligned_accuracy(&self, j: usize) -> f64 {
        self.subgroup_accuracy(j, "aligned")
    }

    fn subgroup_accuracy(&self, j: usize, name: &str) -> f64 {
        self.reports[j].get(name).map_or(f64::NAN, |g| g.accuracy)
    }
}

/// Subgroup index (0 aligned, 1 conflicting) of every example for confound `j`.
pub fn alignment_groups(dataset: &Dataset, j: usize) -> Vec<usize> {
    (0..dataset.len()).map(|i| usize::from(!dataset.is_aligned(i, j))).collect()
}

/// Fits a target probe on the frozen training representations and reports
/// test metrics per confound partition. The spectrum is of the training
/// representations.
pub fn evaluate(params: &ParamSet, train: &Dataset, test: &Dataset, probe: &ProbeConfig) -> Result<Evaluation> {
    if train.num_confounds() != test.num_confounds() || train.input_dim() != test.input_dim() {
        return Err(Error::Consistency("train and test sets have different layouts".into()));
    }
    let phi_train = eval::extract(params, train)?;
    let classes = train.cardinality();
    let labels = train.targets();
    let fitted = eval::probe_multiclass(&phi_train, &labels, classes, probe)?;
    let phi_test = eval::extract(params, test)?;
    let probs = fitted.predict_proba(&phi_test)?;
    let test_labels = test.targets();
    let reports = (0..test.num_confounds())
        .map(|j| eval::subgroup_metrics_multiclass(&probs, &test_labels, &alignment_groups(test, j), &SUBGROUPS))
        .collect::<Result<Vec<_>>>()?;
    let spectrum = eval::spectrum(&phi_train)?;
    Ok(Evaluation { probe: fitted, reports, spectrum })
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub params: ParamSet,
    pub log: RunLog,
    pub evaluation: Evaluation,
}

impl ExperimentOutcome {
    /// Final-epoch aligned minus conflicting two-view cosine.
    pub fn final_gap(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.gap())
    }
}

pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let train = config.train_data()?;
    let test = config.test_data()?;
    let out = pretrain(&train, &config.train)?;
    let evaluation = evaluate(&out.params, &train, &test, &config.probe)?;
    Ok(ExperimentOutcome { params: out.params, log: out.log, evaluation })
}
