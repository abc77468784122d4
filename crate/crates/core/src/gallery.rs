//! Labeled samples, manifest ingestion, multi-dataset merging and synthetic
//! galleries.
//!
//! Person identities are namespaced by dataset tag (`"<tag>/<raw_id>"`) the
//! moment a [`Sample`] is built, so identities coming from different datasets
//! never collapse when galleries are merged.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub sample_id: String,
    /// Namespaced identity, `"<dataset_tag>/<raw_id>"`.
    pub person_id: String,
    pub dataset_tag: String,
    pub input: Vec<T>,
}

impl<T: Scalar> Sample<T> {
    /// Builds a sample, namespacing `raw_person_id` under `dataset_tag`.
    pub fn new(
        sample_id: impl Into<String>,
        raw_person_id: &str,
        dataset_tag: impl Into<String>,
        input: Vec<T>,
    ) -> Self {
        let dataset_tag = dataset_tag.into();
        Sample { sample_id: sample_id.into(), person_id: format!("{dataset_tag}/{raw_person_id}"), dataset_tag, input }
    }

    /// The identity label as it appeared in the source dataset.
    pub fn raw_person_id(&self) -> &str {
        self.person_id.strip_prefix(&self.dataset_tag).and_then(|s| s.strip_prefix('/')).unwrap_or(&self.person_id)
    }
}

/// An immutable pool of samples indexed by identity.
///
/// Identities iterate in sorted order so that every sampler built on top of
/// the gallery is deterministic given its rng.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedGallery<T> {
    samples: Vec<Sample<T>>,
    index: BTreeMap<String, Vec<usize>>,
    input_dim: usize,
}

impl<T: Scalar> MixedGallery<T> {
    pub fn empty(input_dim: usize) -> Self {
        MixedGallery { samples: Vec::new(), index: BTreeMap::new(), input_dim }
    }

    pub fn new(samples: Vec<Sample<T>>, input_dim: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.input.len() != input_dim {
                return Err(Error::DimensionMismatch { expected: input_dim, got: s.input.len() });
            }
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample_id `{}`", s.sample_id)));
            }
            index.entry(s.person_id.clone()).or_default().push(i);
        }
        Ok(MixedGallery { samples, index, input_dim })
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample<T> {
        &self.samples[i]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_identities(&self) -> usize {
        self.index.len()
    }

    /// Identities in sorted order.
    pub fn identities(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// Sample positions for one identity, in gallery order.
    pub fn samples_of(&self, person_id: &str) -> Option<&[usize]> {
        self.index.get(person_id).map(Vec::as_slice)
    }

    pub fn index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.index
    }

    /// Dataset tags present, sorted.
    pub fn dataset_tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.samples.iter().map(|s| s.dataset_tag.clone()).collect();
        tags.sort();
        tags.dedup();
        tags
    }
}

/// Reads a manifest CSV: `sample_id,person_id,dataset,v0,...,v{D-1}`.
///
/// Blank lines and lines starting with `#` are skipped. Errors carry the
/// 1-based line number of the offending row.
pub fn load_manifest<T: Scalar>(path: impl AsRef<Path>) -> Result<MixedGallery<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn parse_manifest<T: Scalar>(text: &str, path: &Path) -> Result<MixedGallery<T>> {
    let err = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != ["sample_id", "person_id", "dataset"] {
        return Err(err(header_line, "header must be `sample_id,person_id,dataset,v0,...`".into()));
    }
    for (k, c) in cols[3..].iter().enumerate() {
        if *c != format!("v{k}") {
            return Err(err(header_line, format!("expected column `v{k}`, found `{c}`")));
        }
    }
    let dim = cols.len() - 3;

    let mut samples = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(err(line_no, format!("malformed row: expected {} fields, got {}", dim + 3, fields.len())));
        }
        if fields.len() != dim + 3 {
            return Err(err(
                line_no,
                format!("dimension mismatch: expected {dim} vector entries, got {}", fields.len() - 3),
            ));
        }
        let (sample_id, raw_pid, tag) = (fields[0], fields[1], fields[2]);
        if sample_id.is_empty() || raw_pid.is_empty() || tag.is_empty() {
            return Err(err(line_no, "empty sample_id, person_id or dataset".into()));
        }
        if !seen.insert(sample_id.to_string()) {
            return Err(err(line_no, format!("duplicate sample_id `{sample_id}`")));
        }
        let input = fields[3..]
            .iter()
            .map(|f| match f.parse::<T>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(line_no, format!("invalid vector entry `{f}`"))),
            })
            .collect::<Result<Vec<T>>>()?;
        samples.push(Sample::new(sample_id, raw_pid, tag, input));
    }
    MixedGallery::new(samples, dim)
}

/// Writes a gallery in manifest format, optionally preceded by `#` comment lines.
pub fn write_manifest<T: Scalar, W: Write>(
    gallery: &MixedGallery<T>,
    comments: &[String],
    mut w: W,
) -> std::io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    write!(w, "sample_id,person_id,dataset")?;
    for k in 0..gallery.input_dim() {
        write!(w, ",v{k}")?;
    }
    writeln!(w)?;
    for s in gallery.samples() {
        write!(w, "{},{},{}", s.sample_id, s.raw_person_id(), s.dataset_tag)?;
        for v in &s.input {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Union of several galleries.
///
/// Empty galleries are compatible with any input dimension. Sample ids must
/// stay unique across the inputs.
pub fn merge_galleries<T: Scalar>(galleries: &[MixedGallery<T>]) -> Result<MixedGallery<T>> {
    let mut dim: Option<usize> = None;
    for g in galleries.iter().filter(|g| !g.is_empty()) {
        match dim {
            None => dim = Some(g.input_dim()),
            Some(d) if d != g.input_dim() => return Err(Error::DimensionMismatch { expected: d, got: g.input_dim() }),
            Some(_) => {}
        }
    }
    let dim = dim.or_else(|| galleries.first().map(MixedGallery::input_dim)).unwrap_or(0);
    let samples = galleries.iter().flat_map(|g| g.samples().iter().cloned()).collect();
    MixedGallery::new(samples, dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_ids: usize,
    pub per_id: usize,
    pub dim: usize,
    pub cluster_spread: f64,
    pub noise: f64,
    pub seed: u64,
    pub tag: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { n_ids: 30, per_id: 6, dim: 16, cluster_spread: 5.0, noise: 0.2, seed: 0, tag: "synth".into() }
    }
}

/// Gaussian clusters: one center per identity drawn from N(0, spread²·I),
/// then `per_id` samples at center + N(0, noise²·I).
///
/// All centers are drawn before any sample noise, so changing `noise` keeps
/// the centers fixed for a given seed.
pub fn generate_synthetic<T: Scalar>(cfg: &SyntheticConfig) -> Result<MixedGallery<T>> {
    if cfg.n_ids == 0 || cfg.per_id == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument("n_ids, per_id and dim must be positive".into()));
    }
    if !(cfg.cluster_spread >= 0.0 && cfg.noise >= 0.0) {
        return Err(Error::InvalidArgument("cluster_spread and noise must be nonnegative".into()));
    }
    let mut rng = rng::stream(cfg.seed, rng::STREAM_SYNTH);
    let mut gauss = |scale: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    };
    let centers: Vec<Vec<f64>> =
        (0..cfg.n_ids).map(|_| (0..cfg.dim).map(|_| gauss(cfg.cluster_spread)).collect()).collect();
    let mut samples = Vec::with_capacity(cfg.n_ids * cfg.per_id);
    for (i, c) in centers.iter().enumerate() {
        for j in 0..cfg.per_id {
            let input = c.iter().map(|&m| T::of(m + gauss(cfg.noise))).collect();
            samples.push(Sample::new(format!("{}-{i}-{j}", cfg.tag), &i.to_string(), cfg.tag.clone(), input));
        }
    }
    MixedGallery::new(samples, cfg.dim)
}
