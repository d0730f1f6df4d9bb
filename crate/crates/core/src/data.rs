//! Multi-task datasets: ingestion, standardization and synthetic generation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// On-disk dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guess the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("json") => {
                Format::Jsonl
            }
            _ => Format::Csv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(invalid(format!("unknown data format `{other}`"))),
        }
    }
}

/// One labelled row as it appears in a data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub task_id: String,
    pub label: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub features: Vec<f64>,
}

/// Instances, labels and optional auxiliary scores of a single task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    task_id: String,
    instances: Vec<Vec<f64>>,
    labels: Vec<i8>,
    scores: Option<Vec<f64>>,
}

impl TaskDataset {
    pub fn new(
        task_id: impl Into<String>,
        instances: Vec<Vec<f64>>,
        labels: Vec<i8>,
        scores: Option<Vec<f64>>,
    ) -> Result<Self> {
        let task_id = task_id.into();
        if instances.is_empty() {
            return Err(invalid(format!("task `{task_id}` has no instances")));
        }
        if labels.len() != instances.len() {
            return Err(invalid(format!(
                "task `{task_id}`: {} labels for {} instances",
                labels.len(),
                instances.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(invalid(format!("task `{task_id}`: label {bad} is not -1 or +1")));
        }
        if let Some(scores) = &scores {
            if scores.len() != instances.len() {
                return Err(invalid(format!(
                    "task `{task_id}`: {} scores for {} instances",
                    scores.len(),
                    instances.len()
                )));
            }
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(invalid(format!("task `{task_id}`: non-finite score")));
            }
        }
        let dim = instances[0].len();
        for x in &instances {
            if x.len() != dim {
                return Err(invalid(format!("task `{task_id}`: ragged instance dimensions")));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("task `{task_id}`: non-finite feature")));
            }
        }
        Ok(TaskDataset {
            task_id,
            instances,
            labels,
            scores,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn instances(&self) -> &[Vec<f64>] {
        &self.instances
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.instances[0].len()
    }

    fn map_instances(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> TaskDataset {
        TaskDataset {
            task_id: self.task_id.clone(),
            instances: self.instances.iter().map(|x| f(x)).collect(),
            labels: self.labels.clone(),
            scores: self.scores.clone(),
        }
    }

    /// Replace every instance, keeping labels and scores.
    pub fn with_instances(&self, instances: Vec<Vec<f64>>) -> Result<TaskDataset> {
        TaskDataset::new(
            self.task_id.clone(),
            instances,
            self.labels.clone(),
            self.scores.clone(),
        )
    }

    /// Same task with a different set of auxiliary scores (or none).
    pub fn with_scores(&self, scores: Option<Vec<f64>>) -> Result<TaskDataset> {
        TaskDataset::new(
            self.task_id.clone(),
            self.instances.clone(),
            self.labels.clone(),
            scores,
        )
    }
}

/// A collection of related tasks sharing one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    tasks: Vec<TaskDataset>,
    dim: usize,
}

impl MultiTaskDataset {
    pub fn new(tasks: Vec<TaskDataset>) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| invalid("dataset contains no tasks"))?;
        let dim = first.dim();
        let mut seen = HashMap::new();
        for (i, task) in tasks.iter().enumerate() {
            if task.dim() != dim {
                return Err(invalid(format!(
                    "task `{}` has dimension {}, expected {dim}",
                    task.task_id,
                    task.dim()
                )));
            }
            if seen.insert(task.task_id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate task id `{}`", task.task_id)));
            }
        }
        Ok(MultiTaskDataset { tasks, dim })
    }

    pub fn tasks(&self) -> &[TaskDataset] {
        &self.tasks
    }

    pub fn task(&self, index: usize) -> &TaskDataset {
        &self.tasks[index]
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_instances(&self) -> usize {
        self.tasks.iter().map(TaskDataset::len).sum()
    }

    pub fn task_index(&self, task_id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.task_id == task_id)
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.task_id.clone()).collect()
    }

    /// First task without auxiliary scores, if any.
    pub fn first_unscored(&self) -> Option<&TaskDataset> {
        self.tasks.iter().find(|t| t.scores.is_none())
    }

    pub fn has_scores(&self) -> bool {
        self.first_unscored().is_none()
    }

    /// Sub-dataset made of the given task indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<MultiTaskDataset> {
        MultiTaskDataset::new(indices.iter().map(|&i| self.tasks[i].clone()).collect())
    }

    /// Every task except `held_out`.
    pub fn without_task(&self, held_out: usize) -> Result<MultiTaskDataset> {
        let keep: Vec<usize> = (0..self.tasks.len()).filter(|&i| i != held_out).collect();
        self.select(&keep)
    }

    /// Append a constant 1 feature to every instance (homogeneous bias).
    pub fn with_bias_feature(&self) -> MultiTaskDataset {
        MultiTaskDataset {
            tasks: self
                .tasks
                .iter()
                .map(|t| t.map_instances(append_bias))
                .collect(),
            dim: self.dim + 1,
        }
    }

    /// Rows in task order, then instance order.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.total_instances());
        for task in &self.tasks {
            for (i, x) in task.instances.iter().enumerate() {
                out.push(Record {
                    task_id: task.task_id.clone(),
                    label: task.labels[i] as i64,
                    score: task.scores.as_ref().map(|s| s[i]),
                    features: x.clone(),
                });
            }
        }
        out
    }

    /// Group records by task id, tasks in order of first appearance.
    pub fn from_records(records: &[Record]) -> Result<MultiTaskDataset> {
        struct Pending {
            instances: Vec<Vec<f64>>,
            labels: Vec<i8>,
            scores: Vec<Option<f64>>,
        }
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Pending> = HashMap::new();
        for r in records {
            let label = match r.label {
                1 => 1i8,
                -1 => -1i8,
                other => return Err(invalid(format!("label {other} is not -1 or +1"))),
            };
            let group = groups.entry(r.task_id.clone()).or_insert_with(|| {
                order.push(r.task_id.clone());
                Pending {
                    instances: Vec::new(),
                    labels: Vec::new(),
                    scores: Vec::new(),
                }
            });
            group.instances.push(r.features.clone());
            group.labels.push(label);
            group.scores.push(r.score);
        }
        let mut tasks = Vec::with_capacity(order.len());
        for id in order {
            let group = groups.remove(&id).expect("grouped task");
            let scores = if group.scores.iter().all(Option::is_some) {
                Some(group.scores.into_iter().map(Option::unwrap).collect())
            } else if group.scores.iter().all(Option::is_none) {
                None
            } else {
                return Err(invalid(format!(
                    "task `{id}` has scores on some rows but not on others"
                )));
            };
            tasks.push(TaskDataset::new(id, group.instances, group.labels, scores)?);
        }
        MultiTaskDataset::new(tasks)
    }
}

pub(crate) fn append_bias(x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(1.0);
    v
}

fn parse_label(raw: &str, line: usize) -> Result<i64> {
    let trimmed = raw.trim();
    let value = trimmed
        .parse::<i64>()
        .ok()
        .or_else(|| {
            trimmed
                .parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && v.abs() <= 1.0)
                .map(|v| v as i64)
        })
        .ok_or_else(|| Error::InvalidLabel {
            line,
            label: trimmed.to_string(),
        })?;
    if value != 1 && value != -1 {
        return Err(Error::InvalidLabel {
            line,
            label: trimmed.to_string(),
        });
    }
    Ok(value)
}

fn parse_real(raw: &str, line: usize, what: &str) -> Result<f64> {
    let v = raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {what} `{}`", raw.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite { line });
    }
    Ok(v)
}

fn check_record(record: &Record, line: usize, dim: &mut Option<usize>) -> Result<()> {
    if record.label != 1 && record.label != -1 {
        return Err(Error::InvalidLabel {
            line,
            label: record.label.to_string(),
        });
    }
    if record.features.iter().any(|v| !v.is_finite()) || record.score.is_some_and(|s| !s.is_finite())
    {
        return Err(Error::NonFinite { line });
    }
    match *dim {
        None => *dim = Some(record.features.len()),
        Some(expected) if expected != record.features.len() => {
            return Err(Error::DimensionMismatch {
                line,
                expected,
                found: record.features.len(),
            })
        }
        _ => {}
    }
    Ok(())
}

/// Parse records in file order. Line numbers in errors are 1-based and count
/// the CSV header.
pub fn read_records<R: Read>(reader: R, format: Format) -> Result<Vec<Record>> {
    let mut dim = None;
    let mut out = Vec::new();
    match format {
        Format::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(reader);
            let headers = rdr.headers().map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?;
            if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
                return Ok(out);
            }
            let expected = ["task_id", "label", "score"];
            if headers.len() < 3 || headers.iter().take(3).ne(expected.iter().copied()) {
                return Err(Error::Parse {
                    line: 1,
                    message: "header must start with task_id,label,score".into(),
                });
            }
            for row in rdr.records() {
                let row = row.map_err(|e| Error::Parse {
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
                let line = row.position().map_or(0, |p| p.line() as usize);
                if row.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected at least 3 columns, found {}", row.len()),
                    });
                }
                let score = match row[2].trim() {
                    "" => None,
                    s => Some(parse_real(s, line, "score")?),
                };
                let features = row
                    .iter()
                    .skip(3)
                    .map(|f| parse_real(f, line, "feature"))
                    .collect::<Result<Vec<_>>>()?;
                let record = Record {
                    task_id: row[0].to_string(),
                    label: parse_label(&row[1], line)?,
                    score,
                    features,
                };
                check_record(&record, line, &mut dim)?;
                out.push(record);
            }
        }
        Format::Jsonl => {
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let line_no = i + 1;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
                check_record(&record, line_no, &mut dim)?;
                out.push(record);
            }
        }
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<MultiTaskDataset> {
    let records = read_records(File::open(path)?, format)?;
    if records.is_empty() {
        return Err(invalid("data file contains no records"));
    }
    MultiTaskDataset::from_records(&records)
}

pub fn write_records<W: Write>(writer: W, records: &[Record], format: Format) -> Result<()> {
    let mut w = BufWriter::new(writer);
    match format {
        Format::Csv => {
            let dim = records.first().map_or(0, |r| r.features.len());
            let mut header = String::from("task_id,label,score");
            for j in 0..dim {
                header.push_str(&format!(",f{j}"));
            }
            writeln!(w, "{header}")?;
            for r in records {
                let mut line = format!("{},{},", r.task_id, r.label);
                if let Some(s) = r.score {
                    line.push_str(&s.to_string());
                }
                for f in &r.features {
                    line.push(',');
                    line.push_str(&f.to_string());
                }
                writeln!(w, "{line}")?;
            }
        }
        Format::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &MultiTaskDataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    write_records(File::create(path)?, &dataset.to_records(), format)
}

/// Per-column affine map fitted by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    /// Population standard deviations; zero marks a constant column.
    pub stds: Vec<f64>,
}

impl StandardizationParams {
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { v - m })
            .collect()
    }

    pub fn apply(&self, dataset: &MultiTaskDataset) -> Result<MultiTaskDataset> {
        if dataset.dim() != self.means.len() {
            return Err(invalid(format!(
                "standardization fitted on {} features, dataset has {}",
                self.means.len(),
                dataset.dim()
            )));
        }
        Ok(MultiTaskDataset {
            tasks: dataset
                .tasks
                .iter()
                .map(|t| t.map_instances(|x| self.transform(x)))
                .collect(),
            dim: dataset.dim,
        })
    }
}

/// Z-score every feature column, pooling all tasks.
pub fn standardize(dataset: &MultiTaskDataset) -> (MultiTaskDataset, StandardizationParams) {
    let d = dataset.dim();
    let n = dataset.total_instances() as f64;
    let mut means = vec![0.0; d];
    for x in dataset.tasks.iter().flat_map(|t| &t.instances) {
        for (m, v) in means.iter_mut().zip(x) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut vars = vec![0.0; d];
    for x in dataset.tasks.iter().flat_map(|t| &t.instances) {
        for j in 0..d {
            let c = x[j] - means[j];
            vars[j] += c * c;
        }
    }
    let stds = vars.into_iter().map(|v| (v / n).sqrt()).collect();
    let params = StandardizationParams { means, stds };
    let out = params.apply(dataset).expect("dimension matches by construction");
    (out, params)
}

/// Parameters of the synthetic related-task generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub tasks: usize,
    pub m: usize,
    pub d: usize,
    /// Norm of each task-specific weight perturbation.
    pub task_spread: f64,
    /// Labels may flip only when the true margin is within this band.
    pub noise_band: f64,
    pub flip_prob: f64,
    /// Standard deviation of the Gaussian noise added to oracle scores.
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            tasks: 5,
            m: 40,
            d: 8,
            task_spread: 0.5,
            noise_band: 0.5,
            flip_prob: 0.3,
            score_noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.m == 0 || self.d == 0 {
            return Err(invalid("tasks, m and d must all be positive"));
        }
        for (name, v) in [
            ("task_spread", self.task_spread),
            ("noise_band", self.noise_band),
            ("score_noise", self.score_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(invalid(format!(
                "flip_prob must lie in [0, 1], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }
}

/// Generating weights and noise-free labels behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Unit-norm shared weight vector.
    pub w0: Vec<f64>,
    /// Task perturbations, each of norm `task_spread`.
    pub v: Vec<Vec<f64>>,
    pub true_labels: Vec<Vec<i8>>,
    /// Signed margins `(w0 + v_t) . x` per task and instance.
    pub margins: Vec<Vec<f64>>,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Sample related linear tasks with boundary label noise and a noisy score oracle.
///
/// Instances are standard Gaussian. A true label is the sign of the margin
/// `(w0 + v_t) . x` (zero counts as +1); the observed label flips with
/// probability `flip_prob` when `|margin| < noise_band`. Scores are the margin
/// plus `N(0, score_noise^2)`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(MultiTaskDataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d;
    let w0 = unit_gaussian(&mut rng, d);
    let mut truth = GroundTruth {
        w0: w0.clone(),
        v: Vec::with_capacity(config.tasks),
        true_labels: Vec::with_capacity(config.tasks),
        margins: Vec::with_capacity(config.tasks),
    };
    let width = config.tasks.saturating_sub(1).to_string().len();
    let mut tasks = Vec::with_capacity(config.tasks);
    for t in 0..config.tasks {
        let v: Vec<f64> = unit_gaussian(&mut rng, d)
            .into_iter()
            .map(|x| x * config.task_spread)
            .collect();
        let w: Vec<f64> = w0.iter().zip(&v).map(|(a, b)| a + b).collect();
        let mut instances = Vec::with_capacity(config.m);
        let mut labels = Vec::with_capacity(config.m);
        let mut true_labels = Vec::with_capacity(config.m);
        let mut scores = Vec::with_capacity(config.m);
        let mut margins = Vec::with_capacity(config.m);
        for _ in 0..config.m {
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let margin: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            let y: i8 = if margin >= 0.0 { 1 } else { -1 };
            // draws happen unconditionally so the stream does not depend on the flags
            let flip_draw: f64 = rng.random();
            let noise: f64 = rng.sample(StandardNormal);
            let flipped = margin.abs() < config.noise_band && flip_draw < config.flip_prob;
            labels.push(if flipped { -y } else { y });
            true_labels.push(y);
            scores.push(margin + config.score_noise * noise);
            margins.push(margin);
            instances.push(x);
        }
        tasks.push(TaskDataset::new(
            format!("task{t:0width$}"),
            instances,
            labels,
            Some(scores),
        )?);
        truth.v.push(v);
        truth.true_labels.push(true_labels);
        truth.margins.push(margins);
    }
    Ok((MultiTaskDataset::new(tasks)?, truth))
}
