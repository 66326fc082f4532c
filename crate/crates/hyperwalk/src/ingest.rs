//! Subject signal matrices: disk formats and synthetic cohort generation.
//!
//! The synthetic generator plants community structure: nodes in the same
//! community share a per-timepoint latent draw, so their signals correlate
//! strongly inside any analysis window while cross-community pairs stay
//! near-uncorrelated. That is the group co-activation structure the
//! hyperedge rule downstream is designed to pick up.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One subject's node-by-timepoint signal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalMatrix {
    pub subject_id: String,
    /// R x T, rows are nodes (ROIs), columns are timepoints.
    pub values: Tensor,
    pub roi_labels: Vec<String>,
}

impl SignalMatrix {
    pub fn n_rois(&self) -> usize {
        self.values.rows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.cols()
    }

    fn validate(&self) -> Result<()> {
        if self.n_rois() < 2 || self.n_timepoints() < 2 {
            return Err(Error::Data(format!(
                "signal matrix must be at least 2x2, got {}x{}",
                self.n_rois(),
                self.n_timepoints()
            )));
        }
        if self.roi_labels.len() != self.n_rois() {
            return Err(Error::Data(format!(
                "{} roi labels for {} rows",
                self.roi_labels.len(),
                self.n_rois()
            )));
        }
        if !self.values.all_finite() {
            return Err(Error::Data("signal matrix contains non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalFormat {
    Csv,
    Binary,
}

/// Parameters of the synthetic cohort generator.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub n_rois: usize,
    pub n_timepoints: usize,
    pub n_communities: usize,
    /// Weight of the shared community latent, in (0, 1].
    pub community_strength: f64,
    pub noise_sigma: f64,
    /// Fraction of timepoints receiving an extra cross-community
    /// co-activation burst (0 disables planting).
    pub anomaly_fraction: f64,
    pub seed: u64,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 1 {
            return Err(Error::config("n_subjects", "must be at least 1"));
        }
        if self.n_rois < 2 {
            return Err(Error::config("n_rois", "must be at least 2"));
        }
        if self.n_timepoints < 2 {
            return Err(Error::config("n_timepoints", "must be at least 2"));
        }
        if self.n_communities < 1 || self.n_communities > self.n_rois {
            return Err(Error::config("n_communities", "must be in [1, n_rois]"));
        }
        if self.n_rois / self.n_communities < 2 {
            return Err(Error::config("n_communities", "every community needs at least 2 nodes"));
        }
        if !(0.0..=1.0).contains(&self.community_strength) {
            return Err(Error::config("community_strength", "must be in [0, 1]"));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::config("noise_sigma", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.anomaly_fraction) {
            return Err(Error::config("anomaly_fraction", "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Contiguous-block community assignment; the first `n_rois % n_communities`
/// communities get one extra node.
pub fn community_assignment(n_rois: usize, n_communities: usize) -> Vec<usize> {
    let base = n_rois / n_communities;
    let rem = n_rois % n_communities;
    let mut out = Vec::with_capacity(n_rois);
    for c in 0..n_communities {
        let size = base + usize::from(c < rem);
        out.extend(std::iter::repeat(c).take(size));
    }
    out
}

/// Generates one cohort; a pure function of the spec. Subject `i` uses the
/// derived seed `spec.seed + i`, so subjects are independent streams.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<SignalMatrix>> {
    spec.validate()?;
    let communities = community_assignment(spec.n_rois, spec.n_communities);
    let (r, t, c) = (spec.n_rois, spec.n_timepoints, spec.n_communities);

    let mut subjects = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(i as u64));

        // Per-timepoint community latents, drawn timepoint-major.
        let mut latents = vec![0.0f64; t * c];
        for v in latents.iter_mut() {
            *v = rng.sample(StandardNormal);
        }

        let mut values = Tensor::zeros(r, t);
        for node in 0..r {
            let comm = communities[node];
            for tp in 0..t {
                let eps: f64 = rng.sample(StandardNormal);
                let x = spec.community_strength * latents[tp * c + comm]
                    + spec.noise_sigma * eps;
                values.set(node, tp, x);
            }
        }

        if spec.anomaly_fraction > 0.0 && c >= 2 {
            plant_bursts(spec, &communities, &mut values, &mut rng);
        }

        subjects.push(SignalMatrix {
            subject_id: format!("subj_{i:03}"),
            values,
            roi_labels: (0..r).map(|n| format!("roi_{n:03}")).collect(),
        });
    }
    Ok(subjects)
}

/// Adds a shared latent burst across a fixed cross-community node group at a
/// random subset of timepoints.
fn plant_bursts(
    spec: &CohortSpec,
    communities: &[usize],
    values: &mut Tensor,
    rng: &mut ChaCha8Rng,
) {
    let r = spec.n_rois;
    let group_size = 4.min(r);
    let mut group = Vec::with_capacity(group_size);
    // one node from each of the first two communities, rest arbitrary
    let mut by_comm: Vec<usize> = vec![usize::MAX; 2];
    for (node, &cm) in communities.iter().enumerate() {
        if cm < 2 && by_comm[cm] == usize::MAX {
            by_comm[cm] = node;
        }
    }
    group.extend(by_comm);
    while group.len() < group_size {
        let cand = rng.gen_range(0..r);
        if !group.contains(&cand) {
            group.push(cand);
        }
    }
    let n_burst = (spec.anomaly_fraction * spec.n_timepoints as f64).floor() as usize;
    for _ in 0..n_burst {
        let tp = rng.gen_range(0..spec.n_timepoints);
        let latent: f64 = rng.sample(StandardNormal);
        for &node in &group {
            let old = values.get(node, tp);
            values.set(node, tp, old + spec.community_strength * latent);
        }
    }
}

// ---------------------------------------------------------------------------
// CSV format: header row of timepoint indices, one row per node starting
// with its label. Values are written in shortest round-trip decimal form.
// ---------------------------------------------------------------------------

pub fn write_signals_csv<W: Write>(m: &SignalMatrix, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = Vec::with_capacity(m.n_timepoints() + 1);
    header.push("roi".to_string());
    header.extend((0..m.n_timepoints()).map(|t| t.to_string()));
    wtr.write_record(&header)?;
    for node in 0..m.n_rois() {
        let mut rec = Vec::with_capacity(m.n_timepoints() + 1);
        rec.push(m.roi_labels[node].clone());
        rec.extend(m.values.row(node).iter().map(|v| format!("{v}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn parse_signals_csv(bytes: &[u8], subject_id: &str) -> Result<SignalMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let n_cols = rdr
        .headers()
        .map_err(|e| Error::parse(1, format!("bad csv header: {e}")))?
        .len();
    if n_cols < 2 {
        return Err(Error::parse(1, "header must contain at least one timepoint"));
    }
    let t = n_cols - 1;

    let mut labels = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::parse(line, format!("bad csv record: {e}")))?;
        if rec.len() != n_cols {
            return Err(Error::parse(
                line,
                format!("ragged row: {} fields, expected {}", rec.len(), n_cols),
            ));
        }
        labels.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| Error::parse(line, format!("bad number {field:?}: {e}")))?;
            data.push(v);
        }
    }
    let r = labels.len();
    let m = SignalMatrix {
        subject_id: subject_id.to_string(),
        values: Tensor::from_vec(r, if r == 0 { 0 } else { t }, data),
        roi_labels: labels,
    };
    m.validate()?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// Binary format: magic "HWTS", u32 LE node count, u32 LE timepoint count,
// then R*T little-endian f64 row-major. Labels are synthesized on load.
// ---------------------------------------------------------------------------

const BIN_MAGIC: &[u8; 4] = b"HWTS";

pub fn write_signals_binary<W: Write>(m: &SignalMatrix, mut w: W) -> Result<()> {
    w.write_all(BIN_MAGIC)?;
    w.write_all(&(m.n_rois() as u32).to_le_bytes())?;
    w.write_all(&(m.n_timepoints() as u32).to_le_bytes())?;
    for v in m.values.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn parse_signals_binary(bytes: &[u8], subject_id: &str) -> Result<SignalMatrix> {
    if bytes.len() < 12 {
        return Err(Error::parse(1, "truncated header"));
    }
    if &bytes[0..4] != BIN_MAGIC {
        return Err(Error::parse(1, "bad magic, expected HWTS"));
    }
    let r = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let expected = 12u64
        .checked_add(r.checked_mul(t).and_then(|n| n.checked_mul(8)).ok_or_else(|| {
            Error::parse(1, "dimension overflow")
        })?)
        .ok_or_else(|| Error::parse(1, "dimension overflow"))?;
    if bytes.len() as u64 != expected {
        return Err(Error::parse(
            1,
            format!("payload is {} bytes, header implies {}", bytes.len(), expected),
        ));
    }
    let (r, t) = (r as usize, t as usize);
    let mut data = Vec::with_capacity(r * t);
    for chunk in bytes[12..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let m = SignalMatrix {
        subject_id: subject_id.to_string(),
        values: Tensor::from_vec(r, t, data),
        roi_labels: (0..r).map(|n| format!("roi_{n:03}")).collect(),
    };
    m.validate()?;
    Ok(m)
}

/// Loads a signal file; the subject id is the file stem.
pub fn load_signals(path: &Path, format: SignalFormat) -> Result<SignalMatrix> {
    let subject_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "subject".to_string());
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    match format {
        SignalFormat::Csv => parse_signals_csv(&bytes, &subject_id),
        SignalFormat::Binary => parse_signals_binary(&bytes, &subject_id),
    }
}

pub fn save_signals(m: &SignalMatrix, path: &Path, format: SignalFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        SignalFormat::Csv => write_signals_csv(m, &mut w)?,
        SignalFormat::Binary => write_signals_binary(m, &mut w)?,
    }
    w.flush()?;
    Ok(())
}
