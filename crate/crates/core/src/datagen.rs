//! Prediction-log I/O (JSONL and CSV) and a seeded synthetic generator.
//!
//! # File formats
//!
//! JSONL: one object per line,
//! `{"id": "...", "confidence": 0.93, "predicted": 4, "gold": 4, "probs": [...], "logits": [...]}`
//! with `probs` and `logits` optional.
//!
//! CSV: header `id,confidence,predicted,gold` followed by `prob_0..prob_{C-1}`
//! and then `logit_0..logit_{C-1}` when any record carries them. A record
//! without a vector leaves those cells empty.
//!
//! Labels may be integers or strings. When any label in a file is a string,
//! all labels are mapped to dense ids in order of first appearance
//! (`predicted` before `gold` within a record). A sidecar
//! `<path>.labels.json` holding `{"num_classes": C, "labels": [...] | null}`
//! is written by [`save`]; [`load`] uses it when present, both for the class
//! count and to map string labels.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{Dataset, PredictionRecord};
use crate::{Error, Result};

const LOGIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// `.csv` means CSV; anything else is read as JSONL.
    pub fn from_path(path: &Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(DataFormat::Jsonl),
            "csv" => Ok(DataFormat::Csv),
            _ => Err(Error::param("format", format!("unknown format `{s}`"))),
        }
    }
}

/// Two-component Beta confidence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub n: usize,
    pub accuracy: f64,
    pub conf_correct: (f64, f64),
    pub conf_wrong: (f64, f64),
    pub seed: u64,
    /// Symmetric Dirichlet concentration for the non-predicted mass.
    #[serde(default = "default_dirichlet")]
    pub dirichlet_alpha: f64,
}

fn default_dirichlet() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::param("num_classes", "need at least 2 classes"));
        }
        if self.n == 0 {
            return Err(Error::param("n", "must be positive"));
        }
        if !(self.accuracy > 0.0 && self.accuracy < 1.0) {
            return Err(Error::param("accuracy", format!("{} not in (0, 1)", self.accuracy)));
        }
        for (name, (a, b)) in [("conf_correct", self.conf_correct), ("conf_wrong", self.conf_wrong)] {
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::param(name, format!("Beta shapes ({a}, {b}) must be positive")));
            }
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::param("dirichlet_alpha", "must be positive"));
        }
        Ok(())
    }

    /// 150 classes, 22,500 records.
    pub fn clinc_like(seed: u64) -> Self {
        SyntheticSpec {
            num_classes: 150,
            n: 22_500,
            accuracy: 0.85,
            conf_correct: (14.0, 1.0),
            conf_wrong: (2.5, 1.4),
            seed,
            dirichlet_alpha: 1.0,
        }
    }

    /// 77 classes, 13,083 records.
    pub fn banking77_like(seed: u64) -> Self {
        SyntheticSpec {
            num_classes: 77,
            n: 13_083,
            accuracy: 0.8,
            conf_correct: (6.0, 1.0),
            conf_wrong: (2.2, 1.4),
            seed,
            dirichlet_alpha: 1.0,
        }
    }

    /// 8 classes, 1,098 records (549 per half).
    pub fn massive_like(seed: u64) -> Self {
        SyntheticSpec {
            num_classes: 8,
            n: 1_098,
            accuracy: 0.9,
            conf_correct: (8.0, 1.0),
            conf_wrong: (2.0, 2.0),
            seed,
            dirichlet_alpha: 1.0,
        }
    }

    /// 20 classes, 268 records (134 per half): small enough that selective
    /// sweeps go infeasible at small `alpha`.
    pub fn nyaya_like(seed: u64) -> Self {
        SyntheticSpec {
            num_classes: 20,
            n: 268,
            accuracy: 0.9,
            conf_correct: (8.0, 1.0),
            conf_wrong: (2.0, 2.0),
            seed,
            dirichlet_alpha: 1.0,
        }
    }

    /// Almost never wrong, with confidence concentrated near 1.
    pub fn accurate(n: usize, seed: u64) -> Self {
        SyntheticSpec {
            num_classes: 10,
            n,
            accuracy: 1.0 - 1e-6,
            conf_correct: (50.0, 2.0),
            conf_wrong: (2.0, 2.0),
            seed,
            dirichlet_alpha: 1.0,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        Ok(match name {
            "clinc-like" => Self::clinc_like(seed),
            "banking77-like" => Self::banking77_like(seed),
            "massive-like" => Self::massive_like(seed),
            "nyaya-like" => Self::nyaya_like(seed),
            "accurate" => Self::accurate(5_000, seed),
            _ => {
                return Err(Error::param(
                    "preset",
                    format!("unknown preset `{name}` (clinc-like, banking77-like, massive-like, nyaya-like, accurate)"),
                ))
            }
        })
    }
}

/// Draws one dataset. Record `i` uses its own ChaCha8 stream
/// (`seed_from_u64(seed)` with stream `i`), so records can be generated in
/// any order.
///
/// The drawn Beta value `u` becomes the top-1 confidence `1/C + (1 - 1/C) u`,
/// so the predicted class always holds the largest probability. The rest of
/// the mass is split by a Dirichlet draw; any class that would exceed the
/// confidence is capped there and the excess re-spread over the others.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let c = spec.num_classes;
    let beta_ok = Beta::new(spec.conf_correct.0, spec.conf_correct.1).map_err(|e| Error::param("conf_correct", e.to_string()))?;
    let beta_bad = Beta::new(spec.conf_wrong.0, spec.conf_wrong.1).map_err(|e| Error::param("conf_wrong", e.to_string()))?;
    let gamma = Gamma::new(spec.dirichlet_alpha, 1.0).map_err(|e| Error::param("dirichlet_alpha", e.to_string()))?;
    let floor = 1.0 / c as f64;

    let records = (0..spec.n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let gold = rng.random_range(0..c);
            let correct = rng.random::<f64>() < spec.accuracy;
            let predicted = if correct {
                gold
            } else {
                let k = rng.random_range(0..c - 1);
                if k >= gold {
                    k + 1
                } else {
                    k
                }
            };
            let u = if correct { beta_ok.sample(&mut rng) } else { beta_bad.sample(&mut rng) };
            let confidence = floor + (1.0 - floor) * u;
            let weights: Vec<f64> = (0..c - 1).map(|_| gamma.sample(&mut rng)).collect();
            let others = water_fill(&weights, 1.0 - confidence, confidence);
            let mut probs = Vec::with_capacity(c);
            let mut it = others.into_iter();
            for y in 0..c {
                probs.push(if y == predicted { confidence } else { it.next().unwrap_or(0.0) });
            }
            let logits = probs.iter().map(|p| p.max(LOGIT_FLOOR).ln()).collect();
            PredictionRecord {
                id: format!("s{i}"),
                confidence,
                predicted,
                gold,
                probs: Some(probs),
                logits: Some(logits),
            }
        })
        .collect();
    Dataset::new(records, c)
}

/// Splits `total` proportionally to `weights`, capping every share at `cap`.
/// Requires `total <= cap * weights.len()`.
fn water_fill(weights: &[f64], total: f64, cap: f64) -> Vec<f64> {
    let n = weights.len();
    let mut out = vec![0.0; n];
    let mut capped = vec![false; n];
    let mut remaining = total;
    loop {
        let w: f64 = (0..n).filter(|&i| !capped[i]).map(|i| weights[i]).sum();
        let free = (0..n).filter(|&i| !capped[i]).count();
        if free == 0 {
            break;
        }
        let mut changed = false;
        for i in 0..n {
            if capped[i] {
                continue;
            }
            out[i] = if w > 0.0 { remaining * weights[i] / w } else { remaining / free as f64 };
        }
        for i in 0..n {
            if !capped[i] && out[i] > cap {
                out[i] = cap;
                capped[i] = true;
                remaining -= cap;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    out
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels.json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    num_classes: usize,
    labels: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
enum RawLabel {
    Id(usize),
    Name(String),
}

struct RawRecord {
    line: usize,
    id: String,
    confidence: f64,
    predicted: RawLabel,
    gold: RawLabel,
    probs: Option<Vec<f64>>,
    logits: Option<Vec<f64>>,
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

pub fn load(path: &Path, format: DataFormat) -> Result<Dataset> {
    let raws = match format {
        DataFormat::Jsonl => read_jsonl(path)?,
        DataFormat::Csv => read_csv(path)?,
    };
    let sidecar_file = sidecar_path(path);
    let sidecar: Option<Sidecar> = if sidecar_file.exists() {
        Some(serde_json::from_reader(BufReader::new(File::open(&sidecar_file)?))?)
    } else {
        None
    };
    assemble(raws, sidecar)
}

fn assemble(raws: Vec<RawRecord>, sidecar: Option<Sidecar>) -> Result<Dataset> {
    let any_name = raws
        .iter()
        .any(|r| matches!(r.predicted, RawLabel::Name(_)) || matches!(r.gold, RawLabel::Name(_)));
    let mut vocab: Vec<String> = sidecar.as_ref().and_then(|s| s.labels.clone()).unwrap_or_default();
    let fixed_vocab = !vocab.is_empty();
    let mut index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();

    let mut records = Vec::with_capacity(raws.len());
    let mut max_id = 0usize;
    let mut vec_len = 0usize;
    for raw in raws {
        let mut resolve = |l: &RawLabel| -> Result<usize> {
            let name = match l {
                RawLabel::Id(v) if fixed_vocab || !any_name => return Ok(*v),
                RawLabel::Id(v) => v.to_string(),
                RawLabel::Name(s) => s.clone(),
            };
            if let Some(&i) = index.get(&name) {
                return Ok(i);
            }
            if fixed_vocab {
                return Err(parse_err(raw.line, format!("label `{name}` not in the sidecar vocabulary")));
            }
            index.insert(name.clone(), vocab.len());
            vocab.push(name);
            Ok(vocab.len() - 1)
        };
        let predicted = resolve(&raw.predicted)?;
        let gold = resolve(&raw.gold)?;
        max_id = max_id.max(predicted).max(gold);
        for v in [&raw.probs, &raw.logits].into_iter().flatten() {
            vec_len = vec_len.max(v.len());
        }
        records.push(PredictionRecord {
            id: raw.id,
            confidence: raw.confidence,
            predicted,
            gold,
            probs: raw.probs,
            logits: raw.logits,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = match &sidecar {
        Some(s) => s.num_classes,
        None => (max_id + 1).max(vec_len).max(vocab.len()),
    };
    let ds = Dataset::new(records, num_classes)?;
    if any_name || fixed_vocab {
        while vocab.len() < num_classes {
            vocab.push(vocab.len().to_string());
        }
        ds.with_labels(vocab)
    } else {
        Ok(ds)
    }
}

fn label_from_json(v: &Value, line: usize, field: &str) -> Result<RawLabel> {
    match v {
        Value::Number(n) => n
            .as_u64()
            .map(|u| RawLabel::Id(u as usize))
            .ok_or_else(|| parse_err(line, format!("`{field}` must be a non-negative integer or a string"))),
        Value::String(s) => Ok(RawLabel::Name(s.clone())),
        _ => Err(parse_err(line, format!("`{field}` must be a non-negative integer or a string"))),
    }
}

fn label_from_text(s: &str) -> RawLabel {
    match s.parse::<usize>() {
        Ok(v) => RawLabel::Id(v),
        Err(_) => RawLabel::Name(s.to_string()),
    }
}

#[derive(Deserialize)]
struct JsonLine {
    id: Value,
    confidence: f64,
    predicted: Value,
    gold: Value,
    #[serde(default)]
    probs: Option<Vec<f64>>,
    #[serde(default)]
    logits: Option<Vec<f64>>,
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let j: JsonLine = serde_json::from_str(&text).map_err(|e| parse_err(line_no, e.to_string()))?;
        let id = match j.id {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            _ => return Err(parse_err(line_no, "`id` must be a string or number")),
        };
        out.push(RawRecord {
            line: line_no,
            id,
            confidence: j.confidence,
            predicted: label_from_json(&j.predicted, line_no, "predicted")?,
            gold: label_from_json(&j.gold, line_no, "gold")?,
            probs: j.probs,
            logits: j.logits,
        });
    }
    Ok(out)
}

fn read_csv(path: &Path) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| col(name).ok_or_else(|| parse_err(1, format!("missing column `{name}`")));
    let (c_id, c_conf, c_pred, c_gold) = (need("id")?, need("confidence")?, need("predicted")?, need("gold")?);
    let indexed = |prefix: &str| -> Vec<usize> {
        let mut cols = Vec::new();
        while let Some(c) = col(&format!("{prefix}{}", cols.len())) {
            cols.push(c);
        }
        cols
    };
    let prob_cols = indexed("prob_");
    let logit_cols = indexed("logit_");

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| row.get(c).unwrap_or("").trim();
        let number = |c: usize| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("column `{}`: `{}` is not a number", &headers[c], field(c))))
        };
        let vector = |cols: &[usize]| -> Result<Option<Vec<f64>>> {
            if cols.is_empty() || cols.iter().all(|&c| field(c).is_empty()) {
                return Ok(None);
            }
            cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>().map(Some)
        };
        out.push(RawRecord {
            line,
            id: field(c_id).to_string(),
            confidence: number(c_conf)?,
            predicted: label_from_text(field(c_pred)),
            gold: label_from_text(field(c_gold)),
            probs: vector(&prob_cols)?,
            logits: vector(&logit_cols)?,
        });
    }
    Ok(out)
}

/// Writes `ds` and its `<path>.labels.json` sidecar. Labels are written as
/// integer ids; names live in the sidecar.
pub fn save(ds: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Jsonl => {
            let mut w = BufWriter::new(File::create(path)?);
            for r in ds.records() {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        DataFormat::Csv => write_csv(ds, path)?,
    }
    let sidecar = Sidecar {
        num_classes: ds.num_classes(),
        labels: ds.labels().map(<[String]>::to_vec),
    };
    let mut w = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut w, &sidecar)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let c = ds.num_classes();
    let has_probs = ds.records().iter().any(|r| r.probs.is_some());
    let has_logits = ds.records().iter().any(|r| r.logits.is_some());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["id", "confidence", "predicted", "gold"].map(String::from).to_vec();
    if has_probs {
        header.extend((0..c).map(|k| format!("prob_{k}")));
    }
    if has_logits {
        header.extend((0..c).map(|k| format!("logit_{k}")));
    }
    w.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![
            r.id.clone(),
            r.confidence.to_string(),
            r.predicted.to_string(),
            r.gold.to_string(),
        ];
        for (present, v) in [(has_probs, &r.probs), (has_logits, &r.logits)] {
            if !present {
                continue;
            }
            match v {
                Some(v) => row.extend(v.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), c)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n: 300,
            ..SyntheticSpec::massive_like(seed)
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(generate(&small(3)).unwrap(), generate(&small(4)).unwrap());
    }

    #[test]
    fn records_are_valid_and_top1_is_predicted() {
        let ds = generate(&small(5)).unwrap();
        for r in ds.records() {
            let p = r.probs.as_ref().unwrap();
            assert_eq!(p[r.predicted], r.confidence);
            assert!(p.iter().all(|&v| v <= r.confidence));
        }
    }

    #[test]
    fn water_fill_caps() {
        let out = water_fill(&[10.0, 1.0, 1.0], 0.5, 0.3);
        assert_eq!(out[0], 0.3);
        assert!((out.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        assert!((out[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn accuracy_bounds() {
        let mut s = small(1);
        s.accuracy = 1.0;
        assert!(generate(&s).is_err());
        s.accuracy = 0.0;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn format_from_path() {
        assert_eq!(DataFormat::from_path(Path::new("a/b.CSV")), DataFormat::Csv);
        assert_eq!(DataFormat::from_path(Path::new("a/b.jsonl")), DataFormat::Jsonl);
        assert_eq!("csv".parse::<DataFormat>().unwrap(), DataFormat::Csv);
    }
}
