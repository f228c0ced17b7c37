//! `train`, `compute`, `stats`, and `clip`.

use std::fs;
use std::path::{Path, PathBuf};

use landscape_core::analysis::{clip_radius, summary_stats, ClipSpec, SummaryStats};
use landscape_core::pipeline::{LandscapeRequest, PipelineError, WeightsSource};
use landscape_core::{
    export_csv, parse_csv, train_sgd, DatasetSpec, EvalConfig, Experiment, GridSpec, LossKind, ModelParameters, Network,
    TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::failure::{invalid, Classify, CmdResult};
use crate::manifest::{sha256_hex, Produced};

pub fn read_model(path: &Path) -> CmdResult<(String, Network)> {
    let text = fs::read_to_string(path).invalid_ctx(format!("reading model file {}", path.display()))?;
    let network = text.parse::<Network>().invalid_ctx(format!("model file {}", path.display()))?;
    Ok((text, network))
}

pub fn read_experiments(path: &Path) -> CmdResult<Vec<Experiment>> {
    let file = fs::File::open(path).invalid_ctx(format!("opening {}", path.display()))?;
    parse_csv(std::io::BufReader::new(file)).invalid_ctx(path.display().to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).runtime_ctx(format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).runtime_ctx(format!("writing {}", path.display()))
}

/// `PipelineError`s from a request that already passed validation are
/// runtime failures; everything `prepare` rejects is a validation failure.
fn prepare(request: LandscapeRequest) -> CmdResult<landscape_core::pipeline::Prepared> {
    request.prepare().invalid()
}

fn run_failure(e: PipelineError, what: &str) -> crate::failure::Failure {
    crate::failure::Failure::Runtime(anyhow::Error::new(e).context(what.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model_file: PathBuf,
    pub model: String,
    pub dataset: DatasetSpec,
    pub loss_kind: LossKind,
    /// He init and shuffling both use `train.seed`.
    pub train: TrainConfig,
    pub out: PathBuf,
}

impl TrainRun {
    pub fn execute(&self) -> CmdResult<Produced> {
        let network: Network = self.model.parse().invalid()?;
        let data = self.dataset.generate().invalid()?;
        let data = conform(data, &network)?;
        self.train.validate(data.size()).invalid()?;
        let init = ModelParameters::init_he(&network, self.train.seed);
        let report = train_sgd(&network, &init, &data, self.loss_kind, &self.train)
            .runtime_ctx(format!("training {} with {:?}", self.model_file.display(), self.train))?;
        for (epoch, loss) in report.epoch_losses.iter().enumerate() {
            println!("epoch {epoch}: loss {loss:.6}");
        }
        let json = serde_json::to_string(&report.params).expect("parameters serialize");
        write_file(&self.out, json.as_bytes())?;
        println!("wrote {} ({} parameters)", self.out.display(), network.param_count());
        Ok(Produced { inputs: Vec::new(), outputs: vec![self.out.clone()] })
    }
}

fn conform(data: landscape_core::Dataset, network: &Network) -> CmdResult<landscape_core::Dataset> {
    if data.sample_shape() == network.input_shape() {
        return Ok(data);
    }
    let shape = data.sample_shape().to_vec();
    data.with_sample_shape(network.input_shape())
        .map_err(|_| invalid(format!("dataset samples have shape {shape:?}, model input is {:?}", network.input_shape())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum WeightsArg {
    File { path: PathBuf, sha256: String },
    Train { config: TrainConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeRun {
    pub model_file: PathBuf,
    pub model: String,
    pub weights: WeightsArg,
    pub dataset: DatasetSpec,
    pub grid: GridSpec,
    pub eval: EvalConfig,
    pub direction_seed: u64,
    pub id: String,
    pub name: Option<String>,
    /// Does not affect the output.
    pub workers: usize,
    pub out: PathBuf,
}

impl ComputeRun {
    pub fn execute(&self) -> CmdResult<Produced> {
        let mut inputs = Vec::new();
        let weights = match &self.weights {
            WeightsArg::Train { config } => WeightsSource::Train { config: *config },
            WeightsArg::File { path, sha256 } => {
                let bytes = fs::read(path).invalid_ctx(format!("reading weights file {}", path.display()))?;
                if !sha256.is_empty() && sha256_hex(&bytes) != *sha256 {
                    return Err(invalid(format!("weights file {} changed since it was recorded", path.display())));
                }
                let params: ModelParameters =
                    serde_json::from_slice(&bytes).invalid_ctx(format!("weights file {}", path.display()))?;
                inputs.push(path.clone());
                WeightsSource::Given { params }
            }
        };
        let request = LandscapeRequest {
            id: self.id.clone(),
            name: self.name.clone(),
            model: self.model.clone(),
            weights,
            dataset: self.dataset,
            grid: self.grid,
            eval: self.eval,
            direction_seed: self.direction_seed,
        };
        let what = match &self.weights {
            WeightsArg::Train { config } => format!("computing the landscape (training with {config:?})"),
            WeightsArg::File { path, .. } => format!("computing the landscape around {}", path.display()),
        };
        let prepared = prepare(request)?;
        let outcome = prepared.run(self.workers, &()).map_err(|e| run_failure(e, &what))?;
        write_file(&self.out, &export_csv(std::slice::from_ref(&outcome.experiment)))?;
        let stats = summary_stats(&outcome.experiment.grid).runtime()?;
        print_stats(&outcome.experiment, &stats);
        for warning in &outcome.directions.warnings {
            eprintln!("warning: {warning}");
        }
        println!("wrote {}", self.out.display());
        Ok(Produced { inputs, outputs: vec![self.out.clone()] })
    }
}

pub fn print_stats(e: &Experiment, s: &SummaryStats) {
    let center = s.center_loss.filter(|c| c.is_finite()).map_or("-".to_string(), |c| format!("{c:.6}"));
    println!(
        "{}: min {:.6} at ({}, {}), max {:.6}, mean {:.6}, center {}, {} finite, {} masked",
        e.id, s.min_loss, s.argmin_x, s.argmin_y, s.max_loss, s.mean_loss, center, s.finite_count, s.masked_count
    );
}

pub fn stats(path: &Path, json: bool) -> CmdResult<()> {
    let experiments = read_experiments(path)?;
    let mut rows = Vec::new();
    for e in &experiments {
        let s = summary_stats(&e.grid).invalid_ctx(format!("{}: experiment `{}`", path.display(), e.id))?;
        if !json {
            print_stats(e, &s);
        }
        rows.push(serde_json::json!({ "id": e.id, "name": e.name, "stats": s }));
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&rows).expect("stats serialize"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRun {
    pub input: PathBuf,
    pub radius: ClipSpec,
    pub out: PathBuf,
}

impl ClipRun {
    pub fn execute(&self) -> CmdResult<Produced> {
        let experiments = read_experiments(&self.input)?;
        let clipped: Vec<Experiment> = experiments
            .into_iter()
            .map(|mut e| {
                let r = self.radius.radius_for(&e.grid);
                let before = e.grid.losses().iter().filter(|v| v.is_nan()).count();
                e.grid = clip_radius(&e.grid, self.radius);
                let after = e.grid.losses().iter().filter(|v| v.is_nan()).count();
                println!("{}: radius {r}, masked {} points", e.id, after - before);
                e
            })
            .collect();
        write_file(&self.out, &export_csv(&clipped))?;
        println!("wrote {}", self.out.display());
        Ok(Produced { inputs: vec![self.input.clone()], outputs: vec![self.out.clone()] })
    }
}
