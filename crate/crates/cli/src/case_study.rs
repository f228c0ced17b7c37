//! The two built-in case studies.
//!
//! * `skip-connections`: the residual model in `models/xor-residual-skip.txt`
//!   and its skip-free twin, trained from the same initialization on the same
//!   xor-image data, sliced along the same direction seed.
//! * `batch-size`: the conv model in `models/blobs-conv.txt` trained on
//!   blobs(2000) at batch sizes 8, 80, and 800 with everything else fixed.
//!
//! Each study writes one CSV holding all of its experiments and a smoothness
//! report: the mean absolute discrete Laplacian of every grid (see
//! [`landscape_core::mean_abs_laplacian`]). The report describes the surfaces;
//! it does not judge them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use landscape_core::analysis::{mean_abs_laplacian, summary_stats};
use landscape_core::pipeline::{LandscapeRequest, WeightsSource};
use landscape_core::{export_csv, EvalConfig, GridSpec, LossKind, Subsample, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::failure::{Classify, CmdResult, Failure};
use crate::manifest::Produced;

pub const SKIP_MODEL: &str = include_str!("../../../models/xor-residual-skip.txt");
pub const NOSKIP_MODEL: &str = include_str!("../../../models/xor-residual-noskip.txt");
pub const BLOBS_CONV_MODEL: &str = include_str!("../../../models/blobs-conv.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    SkipConnections,
    BatchSize,
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Study::SkipConnections => "skip-connections",
            Study::BatchSize => "batch-size",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyRun {
    pub study: Study,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Fully resolved landscape requests, one per experiment.
    pub runs: Vec<LandscapeRequest>,
}

fn request(id: &str, name: &str, model: &str, dataset: &str, train: TrainConfig) -> LandscapeRequest {
    LandscapeRequest {
        id: id.into(),
        name: Some(name.into()),
        model: model.into(),
        weights: WeightsSource::Train { config: train },
        dataset: dataset.parse().expect("built-in dataset spec"),
        grid: GridSpec::square(-1.0, 1.0, 31),
        eval: EvalConfig {
            subsample: Subsample::Count(100),
            subsample_seed: 0,
            loss_kind: LossKind::CrossEntropy,
        },
        direction_seed: 2,
    }
}

pub fn plan(study: Study) -> Vec<LandscapeRequest> {
    match study {
        Study::SkipConnections => {
            // 0.02 is the rate in {0.005, 0.01, 0.02, 0.05} with the lowest worse-of-two
            // final training loss; picked on training loss alone
            let train = TrainConfig { batch_size: 32, learning_rate: 0.02, epochs: 20, seed: 1 };
            vec![
                request("skip", "residual blocks with skip connections", SKIP_MODEL, "xor-image:1000:1", train),
                request("noskip", "residual blocks without skip connections", NOSKIP_MODEL, "xor-image:1000:1", train),
            ]
        }
        Study::BatchSize => [8, 80, 800]
            .into_iter()
            .map(|batch_size| {
                let train = TrainConfig { batch_size, learning_rate: 0.05, epochs: 5, seed: 1 };
                request(
                    &format!("batch-{batch_size}"),
                    &format!("conv model, batch size {batch_size}"),
                    BLOBS_CONV_MODEL,
                    "blobs:2000:1",
                    train,
                )
            })
            .collect(),
    }
}

#[derive(Debug, Serialize)]
struct SmoothnessEntry {
    id: String,
    name: String,
    mean_abs_laplacian: Option<f64>,
    min_loss: f64,
    center_loss: Option<f64>,
    train_final_loss: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SmoothnessReport {
    study: String,
    formula: &'static str,
    experiments: Vec<SmoothnessEntry>,
}

impl CaseStudyRun {
    pub fn csv_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.csv", self.study))
    }

    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}-smoothness.json", self.study))
    }

    pub fn execute(&self) -> CmdResult<Produced> {
        let mut experiments = Vec::with_capacity(self.runs.len());
        let mut entries = Vec::with_capacity(self.runs.len());
        for req in &self.runs {
            let what = describe(req);
            let prepared = req.clone().prepare().invalid_ctx(what.clone())?;
            eprintln!("{}: {what}", self.study);
            let outcome = prepared
                .run(self.workers, &())
                .map_err(|e| Failure::Runtime(anyhow::Error::new(e).context(format!("{} failed: {what}", req.id))))?;
            let stats = summary_stats(&outcome.experiment.grid).runtime_ctx(format!("{}: no finite losses", req.id))?;
            entries.push(SmoothnessEntry {
                id: req.id.clone(),
                name: outcome.experiment.name.clone(),
                mean_abs_laplacian: mean_abs_laplacian(&outcome.experiment.grid),
                min_loss: stats.min_loss,
                center_loss: stats.center_loss,
                train_final_loss: outcome.train_losses.last().copied(),
            });
            experiments.push(outcome.experiment);
        }
        fs::create_dir_all(&self.out_dir).runtime_ctx(format!("creating {}", self.out_dir.display()))?;
        let csv = self.csv_path();
        fs::write(&csv, export_csv(&experiments)).runtime_ctx(format!("writing {}", csv.display()))?;
        let report = SmoothnessReport {
            study: self.study.to_string(),
            formula: "mean over interior points with finite stencils of |f(i+1,j) + f(i-1,j) + f(i,j+1) + f(i,j-1) - 4 f(i,j)|, grid-index units",
            experiments: entries,
        };
        let report_path = self.report_path();
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        fs::write(&report_path, json).runtime_ctx(format!("writing {}", report_path.display()))?;

        println!("{:<10} {:>20} {:>12} {:>12}", "id", "mean |laplacian|", "center loss", "train loss");
        for e in &report.experiments {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
            println!(
                "{:<10} {:>20} {:>12} {:>12}",
                e.id,
                fmt(e.mean_abs_laplacian),
                fmt(e.center_loss),
                fmt(e.train_final_loss)
            );
        }
        println!("wrote {} and {}", csv.display(), report_path.display());
        Ok(Produced { inputs: Vec::new(), outputs: vec![csv, report_path] })
    }
}

fn describe(req: &LandscapeRequest) -> String {
    let train = match &req.weights {
        WeightsSource::Train { config } => format!(
            "batch size {}, learning rate {}, {} epochs, seed {}",
            config.batch_size, config.learning_rate, config.epochs, config.seed
        ),
        _ => "pretrained".into(),
    };
    format!("{} on {} ({train})", req.id, req.dataset)
}

pub fn default_run(study: Study, out_dir: &Path, workers: usize) -> CaseStudyRun {
    CaseStudyRun {
        study,
        out_dir: out_dir.to_path_buf(),
        workers,
        runs: plan(study),
    }
}

