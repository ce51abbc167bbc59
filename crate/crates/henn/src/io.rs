//! JSON and CSV file formats: models, parameters, input samples, plans and
//! run reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use henn_core::engine::{LayerMetrics, OpMetrics};
use henn_core::model::{ApproxRelu, Conv, ConvKind, Fc, LayerSpec, ModelSpec, Shape};
use henn_core::{HeParams, OpCounts, PackPlan, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: sample {index} has {found} values, model input {shape} needs {expected}")]
    SampleLength {
        path: PathBuf,
        index: usize,
        expected: usize,
        found: usize,
        shape: Shape,
    },
    #[error("{path}: CSV samples are only accepted for single-channel models")]
    CsvChannels { path: PathBuf },
    #[error(transparent)]
    Core(#[from] henn_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LayerFile {
    Conv2d(ConvFile),
    Conv1d(ConvFile),
    Avgpool2d {
        kernel: usize,
    },
    Square,
    ApproxRelu {
        #[serde(default = "defaults::a0")]
        a0: f64,
        #[serde(default = "defaults::a1")]
        a1: f64,
        #[serde(default = "defaults::a2")]
        a2: f64,
    },
    Flatten,
    Fc {
        #[serde(rename = "in")]
        dat_in: usize,
        #[serde(rename = "out")]
        dat_out: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
}

mod defaults {
    use henn_core::model::ApproxRelu;

    pub fn a0() -> f64 {
        ApproxRelu::default().a0
    }
    pub fn a1() -> f64 {
        ApproxRelu::default().a1
    }
    pub fn a2() -> f64 {
        ApproxRelu::default().a2
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConvFile {
    #[serde(rename = "in")]
    ch_in: usize,
    #[serde(rename = "out")]
    ch_out: usize,
    kernel: usize,
    stride: usize,
    #[serde(default)]
    padding: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    name: String,
    input: Shape,
    layers: Vec<LayerFile>,
}

impl ConvFile {
    fn into_conv(self, kind: ConvKind) -> Conv {
        Conv {
            kind,
            ch_in: self.ch_in,
            ch_out: self.ch_out,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            weights: self.weights,
            bias: self.bias,
        }
    }

    fn from_conv(c: &Conv) -> Self {
        Self {
            ch_in: c.ch_in,
            ch_out: c.ch_out,
            kernel: c.kernel,
            stride: c.stride,
            padding: c.padding,
            weights: c.weights.clone(),
            bias: c.bias.clone(),
        }
    }
}

impl From<ModelFile> for ModelSpec {
    fn from(f: ModelFile) -> Self {
        let layers = f
            .layers
            .into_iter()
            .map(|l| match l {
                LayerFile::Conv2d(c) => LayerSpec::Conv(c.into_conv(ConvKind::TwoD)),
                LayerFile::Conv1d(c) => LayerSpec::Conv(c.into_conv(ConvKind::OneD)),
                LayerFile::Avgpool2d { kernel } => LayerSpec::AvgPool2d { kernel },
                LayerFile::Square => LayerSpec::Square,
                LayerFile::ApproxRelu { a0, a1, a2 } => LayerSpec::ApproxRelu(ApproxRelu { a0, a1, a2 }),
                LayerFile::Flatten => LayerSpec::Flatten,
                LayerFile::Fc {
                    dat_in,
                    dat_out,
                    weights,
                    bias,
                } => LayerSpec::Fc(Fc {
                    dat_in,
                    dat_out,
                    weights,
                    bias,
                }),
            })
            .collect();
        ModelSpec {
            name: f.name,
            input: f.input,
            layers,
        }
    }
}

impl From<&ModelSpec> for ModelFile {
    fn from(m: &ModelSpec) -> Self {
        let layers = m
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv(c) => match c.kind {
                    ConvKind::TwoD => LayerFile::Conv2d(ConvFile::from_conv(c)),
                    ConvKind::OneD => LayerFile::Conv1d(ConvFile::from_conv(c)),
                },
                LayerSpec::AvgPool2d { kernel } => LayerFile::Avgpool2d { kernel: *kernel },
                LayerSpec::Square => LayerFile::Square,
                LayerSpec::ApproxRelu(p) => LayerFile::ApproxRelu {
                    a0: p.a0,
                    a1: p.a1,
                    a2: p.a2,
                },
                LayerSpec::Flatten => LayerFile::Flatten,
                LayerSpec::Fc(f) => LayerFile::Fc {
                    dat_in: f.dat_in,
                    dat_out: f.dat_out,
                    weights: f.weights.clone(),
                    bias: f.bias.clone(),
                },
            })
            .collect();
        ModelFile {
            name: m.name.clone(),
            input: m.input,
            layers,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| FormatError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| FormatError::Write {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            let newline = if text.ends_with('\n') { "" } else { "\n" };
            match out.write_all(text.as_bytes()).and_then(|()| out.write_all(newline.as_bytes())) {
                // A closed pipe (`henn ... | head`) is not an error.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(FormatError::Write {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

pub fn parse_model(text: &str) -> std::result::Result<ModelSpec, serde_json::Error> {
    serde_json::from_str::<ModelFile>(text).map(ModelSpec::from)
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    let text = read(path)?;
    Ok(parse_json::<ModelFile>(path, &text)?.into())
}

pub fn model_to_json(m: &ModelSpec) -> String {
    serde_json::to_string_pretty(&ModelFile::from(m)).expect("model serializes")
}

pub fn save_model(path: &Path, m: &ModelSpec) -> Result<()> {
    emit(Some(path), &model_to_json(m))
}

/// Parameters from a JSON object; missing fields take their defaults.
pub fn load_params(path: &Path) -> Result<HeParams> {
    let text = read(path)?;
    let params: HeParams = parse_json(path, &text)?;
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Serialize, Deserialize)]
struct SamplesFile {
    samples: Vec<Vec<f64>>,
}

/// Input samples shaped like `shape`: JSON `{"samples": [[...], ...]}` with
/// each sample channel-major and row-major inside a channel, or (for
/// single-channel models) a headerless CSV file with one sample per line.
pub fn load_samples(path: &Path, shape: Shape) -> Result<Vec<Tensor>> {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let rows = if is_csv {
        if shape.channels != 1 {
            return Err(FormatError::CsvChannels {
                path: path.to_path_buf(),
            });
        }
        read_csv_rows(path)?
    } else {
        parse_json::<SamplesFile>(path, &read(path)?)?.samples
    };
    rows.into_iter()
        .enumerate()
        .map(|(index, data)| {
            if data.len() != shape.len() {
                return Err(FormatError::SampleLength {
                    path: path.to_path_buf(),
                    index,
                    expected: shape.len(),
                    found: data.len(),
                    shape,
                });
            }
            Ok(Tensor::new(shape, data)?)
        })
        .collect()
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let csv_err = |source| FormatError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for record in reader.deserialize::<Vec<f64>>() {
        rows.push(record.map_err(csv_err)?);
    }
    Ok(rows)
}

pub fn save_samples(path: &Path, samples: &[Tensor]) -> Result<()> {
    let file = SamplesFile {
        samples: samples.iter().map(|t| t.data.clone()).collect(),
    };
    emit(Some(path), &serde_json::to_string(&file).expect("samples serialize"))
}

pub fn plan_to_json(plan: &PackPlan) -> String {
    serde_json::to_string_pretty(plan).expect("plan serializes")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub model: String,
    pub params: HeParams,
    pub plan: PackPlan,
    pub batches: usize,
    pub per_layer: Vec<LayerMetrics>,
    pub totals: OpCounts,
    pub total_cost: f64,
    pub outputs: Vec<Vec<f64>>,
}

impl Report {
    pub fn new(m: &ModelSpec, params: HeParams, plan: PackPlan, metrics: &OpMetrics, outputs: Vec<Vec<f64>>, batches: usize) -> Self {
        Self {
            model: m.name.clone(),
            params,
            plan,
            batches,
            per_layer: metrics.per_layer.clone(),
            totals: metrics.totals,
            total_cost: metrics.total_cost,
            outputs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-layer metrics as CSV with a header row.
pub fn metrics_csv(rows: &[LayerMetrics]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "rotations", "pt_mults", "ct_mults", "adds", "level_after", "est_cost"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.layer.clone(),
            r.rotations.to_string(),
            r.pt_mults.to_string(),
            r.ct_mults.to_string(),
            r.adds.to_string(),
            r.level_after.to_string(),
            format!("{:.6e}", r.est_cost),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Two-column CSV with a header row.
pub fn pairs_csv<A: ToString, B: ToString>(header: [&str; 2], rows: &[(A, B)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
