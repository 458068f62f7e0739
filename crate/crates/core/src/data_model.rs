//! Shared records: instances, one-expert-per-instance histories, batches,
//! capacities and the cost structure.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// One case: raw features, binary label, misclassification cost and batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: bool,
    /// Misclassification cost `c_i`.
    pub weight: f64,
    /// Arrival batch (the month index for the synthetic data).
    pub batch: usize,
}

/// A list of instances with a common feature dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    instances: Vec<Instance>,
    dim: usize,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>) -> Result<Self> {
        let dim = instances.first().map_or(0, |i| i.features.len());
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if inst.features.len() != dim {
                return Err(Error::invalid(format!(
                    "instance {} has {} features, expected {dim}",
                    inst.id,
                    inst.features.len()
                )));
            }
            if !(inst.weight > 0.0 && inst.weight.is_finite()) {
                return Err(Error::invalid(format!(
                    "instance {} has non-positive weight {}",
                    inst.id, inst.weight
                )));
            }
            if inst.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("instance features"));
            }
            if !seen.insert(inst.id) {
                return Err(Error::invalid(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(Self { instances, dim })
    }

    /// An empty dataset that remembers its feature dimension.
    pub fn empty(dim: usize) -> Self {
        Self {
            instances: Vec::new(),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn get(&self, idx: usize) -> &Instance {
        &self.instances[idx]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Instance> {
        self.instances.iter()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.instances.iter().map(|i| i.id).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.instances.iter().map(|i| i.weight).collect()
    }

    pub fn prevalence(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.instances.iter().filter(|i| i.label).count() as f64 / self.len() as f64
    }

    pub fn feature_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for inst in &self.instances {
            data.extend_from_slice(&inst.features);
        }
        Matrix::from_vec(self.len(), self.dim, data)
    }

    /// Map from instance id to its position.
    pub fn id_index(&self) -> HashMap<u64, usize> {
        self.instances
            .iter()
            .enumerate()
            .map(|(pos, inst)| (inst.id, pos))
            .collect()
    }

    /// Sub-dataset of the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> Dataset {
        Dataset {
            instances: positions.iter().map(|&p| self.instances[p].clone()).collect(),
            dim: self.dim,
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&Instance) -> bool) -> Dataset {
        Dataset {
            instances: self.instances.iter().filter(|i| keep(i)).cloned().collect(),
            dim: self.dim,
        }
    }

    /// Instances whose batch lies in `batches`.
    pub fn in_batches(&self, batches: std::ops::RangeInclusive<usize>) -> Dataset {
        self.filter(|i| batches.contains(&i.batch))
    }

    /// Copy with every weight recomputed from the label and cost structure.
    pub fn with_cost(&self, cost: CostStructure) -> Dataset {
        let mut out = self.clone();
        for inst in &mut out.instances {
            inst.weight = weight_for(inst.label, cost);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "id".to_string(),
            "label".to_string(),
            "weight".to_string(),
            "batch".to_string(),
        ];
        header.extend((0..self.dim).map(|k| format!("f{k}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for inst in &self.instances {
            row.clear();
            row.push(inst.id.to_string());
            row.push(u8::from(inst.label).to_string());
            row.push(format_f64(inst.weight));
            row.push(inst.batch.to_string());
            row.extend(inst.features.iter().map(|&v| format_f64(v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let fixed = ["id", "label", "weight", "batch"];
        if header.len() < fixed.len() || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b) {
            return Err(Error::invalid(format!(
                "dataset header must start with id,label,weight,batch; got {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        for (k, name) in header.iter().skip(4).enumerate() {
            if name != format!("f{k}") {
                return Err(Error::invalid(format!("unexpected feature column `{name}`")));
            }
        }
        let dim = header.len() - 4;
        let mut instances = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<&str> {
                match rec.get(k) {
                    Some(s) if !s.trim().is_empty() => Ok(s.trim()),
                    _ => Err(Error::invalid(format!(
                        "missing value in row {} column {}",
                        line + 1,
                        header.get(k).unwrap_or("?")
                    ))),
                }
            };
            let id = parse(field(0)?, "id")?;
            let label = parse_label(field(1)?)?;
            let weight = parse(field(2)?, "weight")?;
            let batch = parse(field(3)?, "batch")?;
            let features = (0..dim)
                .map(|k| parse::<f64>(field(4 + k)?, "feature"))
                .collect::<Result<Vec<_>>>()?;
            instances.push(Instance {
                id,
                features,
                label,
                weight,
                batch,
            });
        }
        let mut ds = Dataset::new(instances)?;
        ds.dim = dim;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix::from_vec(rows.len(), self.cols, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One expert's decision on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertRecord {
    pub instance_id: u64,
    /// Expert index in `1..=J`.
    pub expert_id: usize,
    pub prediction: bool,
}

pub fn write_expert_records<W: Write>(records: &[ExpertRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["instance_id", "expert_id", "prediction"])?;
    for r in records {
        w.write_record([
            r.instance_id.to_string(),
            r.expert_id.to_string(),
            u8::from(r.prediction).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_expert_records<R: Read>(reader: R) -> Result<Vec<ExpertRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["instance_id", "expert_id", "prediction"] {
        return Err(Error::invalid("expert record header must be instance_id,expert_id,prediction"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(ExpertRecord {
            instance_id: parse(&rec[0], "instance_id")?,
            expert_id: parse(&rec[1], "expert_id")?,
            prediction: parse_label(&rec[2])?,
        });
    }
    Ok(out)
}

/// Checks the limited-data regime: at most one record per instance, expert ids in `1..=J`.
pub fn validate_history(records: &[ExpertRecord], n_experts: usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if r.expert_id == 0 || r.expert_id > n_experts {
            return Err(Error::invalid(format!(
                "expert id {} outside 1..={n_experts}",
                r.expert_id
            )));
        }
        if !seen.insert(r.instance_id) {
            return Err(Error::invalid(format!(
                "instance {} has more than one expert record",
                r.instance_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityMode {
    /// Column counts must equal the capacities.
    #[default]
    Equality,
    /// Capacities are maxima.
    UpperBound,
}

/// Batch membership plus the capacity matrix `H`.
///
/// Column 0 is the classifier, columns `1..=J` the experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySpec {
    /// Instance id to batch row. When absent, batches are contiguous runs of
    /// instances in dataset order, one per row of `capacities`, with sizes
    /// equal to the row sums in equality mode and an even split otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_of: Option<BTreeMap<u64, usize>>,
    pub capacities: Vec<Vec<i64>>,
    #[serde(default)]
    pub mode: CapacityMode,
}

impl CapacitySpec {
    /// One batch holding everything.
    pub fn single_batch(capacities: Vec<i64>, mode: CapacityMode) -> Self {
        Self {
            batch_of: None,
            capacities: vec![capacities],
            mode,
        }
    }

    pub fn n_decision_makers(&self) -> usize {
        self.capacities.first().map_or(0, Vec::len)
    }

    /// Instance positions of each batch, in dataset order.
    pub fn batches(&self, dataset: &Dataset) -> Result<Vec<Vec<usize>>> {
        let n_batches = self.capacities.len();
        let mut out = vec![Vec::new(); n_batches];
        match &self.batch_of {
            Some(map) => {
                for (pos, inst) in dataset.iter().enumerate() {
                    let b = *map.get(&inst.id).ok_or_else(|| {
                        Error::invalid(format!("instance {} has no batch", inst.id))
                    })?;
                    if b >= n_batches {
                        return Err(Error::CapacityViolation {
                            batch: b,
                            reason: format!("unknown batch index (only {n_batches} rows in H)"),
                        });
                    }
                    out[b].push(pos);
                }
            }
            None => {
                let sizes = self.contiguous_sizes(dataset.len());
                let mut pos = 0;
                for (b, size) in sizes.into_iter().enumerate() {
                    out[b].extend(pos..pos + size);
                    pos += size;
                }
            }
        }
        Ok(out)
    }

    fn contiguous_sizes(&self, n: usize) -> Vec<usize> {
        let n_batches = self.capacities.len().max(1);
        if self.mode == CapacityMode::Equality {
            let sums: Vec<usize> = self
                .capacities
                .iter()
                .map(|row| row.iter().map(|&c| c.max(0) as usize).sum())
                .collect();
            if sums.iter().sum::<usize>() == n {
                return sums;
            }
        }
        (0..n_batches)
            .map(|b| n / n_batches + usize::from(b < n % n_batches))
            .collect()
    }
}

/// Confirms the capacity invariants against the concrete batch sizes.
pub fn validate_capacity(spec: &CapacitySpec, dataset: &Dataset) -> Result<()> {
    if spec.capacities.is_empty() {
        return Err(Error::CapacityViolation {
            batch: 0,
            reason: "capacity matrix has no rows".into(),
        });
    }
    let width = spec.n_decision_makers();
    for (b, row) in spec.capacities.iter().enumerate() {
        if row.len() != width || width == 0 {
            return Err(Error::CapacityViolation {
                batch: b,
                reason: format!("row has {} columns, expected {width}", row.len()),
            });
        }
        if let Some(c) = row.iter().find(|&&c| c < 0) {
            return Err(Error::CapacityViolation {
                batch: b,
                reason: format!("negative capacity {c}"),
            });
        }
    }
    let batches = spec.batches(dataset)?;
    for (b, (row, members)) in spec.capacities.iter().zip(&batches).enumerate() {
        let total: i64 = row.iter().sum();
        let size = members.len() as i64;
        let ok = match spec.mode {
            CapacityMode::Equality => total == size,
            CapacityMode::UpperBound => total >= size,
        };
        if !ok {
            let rel = if spec.mode == CapacityMode::Equality { "≠" } else { "<" };
            return Err(Error::CapacityViolation {
                batch: b,
                reason: format!("capacity sum {total} {rel} batch size {size}"),
            });
        }
    }
    Ok(())
}

/// Ratio of false-positive to false-negative cost; `c_FN` is fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostStructure {
    lambda: f64,
}

impl CostStructure {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Misclassification cost of an instance: 1 for positives, λ for negatives.
pub fn weight_for(label: bool, cost: CostStructure) -> f64 {
    if label {
        1.0
    } else {
        cost.lambda
    }
}

/// Shortest decimal representation that parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("cannot parse {what} from `{s}`")))
}

fn parse_label(s: &str) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::invalid(format!("label must be 0 or 1, got `{other}`"))),
    }
}

/// Checks two slices have equal length.
pub fn check_same_len(what: &'static str, a: usize, b: usize) -> Result<()> {
    ensure_len(what, a, b)
}
