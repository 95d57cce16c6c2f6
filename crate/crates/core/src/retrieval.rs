//! Descriptor readout, exact cosine retrieval and ranking metrics.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSide {
    Query,
    Reference,
}

/// A latent produced by an external encoder, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub id: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub side: LatentSide,
}

impl LatentTensor {
    pub fn new(id: impl Into<String>, shape: Vec<usize>, values: Vec<f32>, side: LatentSide) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != values.len() {
            return Err(Error::Schema(format!(
                "shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("latent contains non-finite values"));
        }
        Ok(Self {
            id: id.into(),
            shape,
            values,
            side,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub id: String,
    pub vector: Vec<f32>,
    pub label: String,
}

/// Divides by the Euclidean norm, computed in double precision.
pub fn l2_normalize(values: &[f32]) -> Result<Vec<f32>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("descriptor contains non-finite values"));
    }
    let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::domain("cannot normalize an all-zero descriptor"));
    }
    Ok(values.iter().map(|&v| (v as f64 / norm) as f32).collect())
}

/// Flattens a latent and scales it to unit length.
pub fn readout(t: &LatentTensor, label: impl Into<String>) -> Result<Descriptor> {
    Ok(Descriptor {
        id: t.id.clone(),
        vector: l2_normalize(&t.values)?,
        label: label.into(),
    })
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn cosine_sim(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.vector.len() != b.vector.len() {
        return Err(Error::domain(format!(
            "descriptor dimensions differ ({} vs {})",
            a.vector.len(),
            b.vector.len()
        )));
    }
    Ok(dot(&a.vector, &b.vector).clamp(-1.0, 1.0))
}

/// An ordered, id-unique collection of same-dimension descriptors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorSet {
    dim: usize,
    descriptors: Vec<Descriptor>,
    index: HashMap<String, usize>,
    /// Free-form producer metadata, e.g. the diffusion timestep.
    pub metadata: BTreeMap<String, String>,
}

impl DescriptorSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn from_descriptors(dim: usize, items: impl IntoIterator<Item = Descriptor>) -> Result<Self> {
        let mut set = Self::new(dim);
        for d in items {
            set.push(d)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, d: Descriptor) -> Result<()> {
        if d.vector.len() != self.dim {
            return Err(Error::Schema(format!(
                "descriptor {:?} has dimension {}, set has {}",
                d.id,
                d.vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&d.id) {
            return Err(Error::Schema(format!("duplicate descriptor id {:?}", d.id)));
        }
        self.index.insert(d.id.clone(), self.descriptors.len());
        self.descriptors.push(d);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Descriptor {
        &self.descriptors[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Descriptor> {
        self.descriptors.iter()
    }
}

/// References ordered for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query: usize,
    /// `(reference index, similarity)`.
    pub order: Vec<(usize, f64)>,
}

/// Ranks every reference for every query by descending cosine similarity.
/// Exact ties go to the lexicographically smaller reference id.
pub fn rank_all(queries: &DescriptorSet, refs: &DescriptorSet, par: Parallelism) -> Result<Vec<Ranking>> {
    if refs.is_empty() {
        return Err(Error::domain("reference set is empty"));
    }
    if queries.dim() != refs.dim() {
        return Err(Error::domain(format!(
            "query dimension {} differs from reference dimension {}",
            queries.dim(),
            refs.dim()
        )));
    }
    Ok(exec::map_range(par, queries.len(), |qi| {
        let q = &queries.get(qi).vector;
        let mut order: Vec<(usize, f64)> = refs
            .iter()
            .enumerate()
            .map(|(ri, r)| (ri, dot(q, &r.vector).clamp(-1.0, 1.0)))
            .collect();
        order.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| refs.get(a.0).id.cmp(&refs.get(b.0).id))
        });
        Ranking { query: qi, order }
    }))
}

/// 1-based ranks of the references sharing the query's label.
fn relevant_ranks(r: &Ranking, queries: &DescriptorSet, refs: &DescriptorSet) -> Vec<usize> {
    let label = &queries.get(r.query).label;
    r.order
        .iter()
        .enumerate()
        .filter(|(_, (ri, _))| &refs.get(*ri).label == label)
        .map(|(k, _)| k + 1)
        .collect()
}

fn valid_first_ranks(rankings: &[Ranking], queries: &DescriptorSet, refs: &DescriptorSet) -> Vec<usize> {
    rankings
        .iter()
        .filter_map(|r| relevant_ranks(r, queries, refs).first().copied())
        .collect()
}

/// Percentage of queries with a same-label reference in the top `k`.
/// Queries with no same-label reference are left out.
pub fn recall_at_k(rankings: &[Ranking], queries: &DescriptorSet, refs: &DescriptorSet, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::domain("recall cutoff must be at least 1"));
    }
    let firsts = valid_first_ranks(rankings, queries, refs);
    if firsts.is_empty() {
        return Err(Error::domain("no query has a same-label reference"));
    }
    let hits = firsts.iter().filter(|&&f| f <= k).count();
    Ok(100.0 * hits as f64 / firsts.len() as f64)
}

/// Non-interpolated average precision of one ranking, as a percentage,
/// or `None` when nothing is relevant.
pub fn query_average_precision(ranks: &[usize]) -> Option<f64> {
    if ranks.is_empty() {
        return None;
    }
    let s: f64 = ranks.iter().enumerate().map(|(i, &k)| (i + 1) as f64 / k as f64).sum();
    Some(100.0 * s / ranks.len() as f64)
}

pub fn average_precision(rankings: &[Ranking], queries: &DescriptorSet, refs: &DescriptorSet) -> Result<f64> {
    let aps: Vec<f64> = rankings
        .iter()
        .filter_map(|r| query_average_precision(&relevant_ranks(r, queries, refs)))
        .collect();
    if aps.is_empty() {
        return Err(Error::domain("no query has a same-label reference"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub id: String,
    pub label: String,
    pub first_relevant_rank: usize,
    pub ap: f64,
    pub top: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub schema_version: u32,
    pub direction: String,
    pub recall_at: BTreeMap<usize, f64>,
    pub ap_mean: f64,
    pub per_query: Vec<QueryResult>,
    pub excluded_queries: Vec<String>,
    pub query_metadata: BTreeMap<String, String>,
    pub reference_metadata: BTreeMap<String, String>,
}

pub fn evaluate(
    queries: &DescriptorSet,
    refs: &DescriptorSet,
    ks: &[usize],
    direction: &str,
    par: Parallelism,
) -> Result<RetrievalReport> {
    let rankings = rank_all(queries, refs, par)?;
    let mut recall_at = BTreeMap::new();
    for &k in ks {
        recall_at.insert(k, recall_at_k(&rankings, queries, refs, k)?);
    }
    let top_n = ks.iter().copied().max().unwrap_or(1).min(refs.len());
    let mut per_query = Vec::new();
    let mut excluded_queries = Vec::new();
    for r in &rankings {
        let q = queries.get(r.query);
        let ranks = relevant_ranks(r, queries, refs);
        match query_average_precision(&ranks) {
            Some(ap) => per_query.push(QueryResult {
                id: q.id.clone(),
                label: q.label.clone(),
                first_relevant_rank: ranks[0],
                ap,
                top: r.order[..top_n]
                    .iter()
                    .map(|(ri, _)| refs.get(*ri).id.clone())
                    .collect(),
            }),
            None => excluded_queries.push(q.id.clone()),
        }
    }
    if !excluded_queries.is_empty() {
        log::warn!(
            "{} queries have no same-label reference and are excluded",
            excluded_queries.len()
        );
    }
    Ok(RetrievalReport {
        schema_version: 1,
        direction: direction.to_owned(),
        recall_at,
        ap_mean: average_precision(&rankings, queries, refs)?,
        per_query,
        excluded_queries,
        query_metadata: queries.metadata.clone(),
        reference_metadata: refs.metadata.clone(),
    })
}

const MAGIC: &[u8; 8] = b"UAVDESC1";
const VERSION: u16 = 1;
const META_TAG: &[u8; 4] = b"META";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("string is not valid UTF-8".into()))
    }
}

/// Parses a descriptor pack. Packs flagged as raw are normalized here.
pub fn read_descriptor_pack(bytes: &[u8]) -> Result<DescriptorSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)
        .map_err(|_| Error::Format("file too short for a descriptor pack".into()))?
        != MAGIC
    {
        return Err(Error::Format("bad descriptor pack magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported descriptor pack version {version}")));
    }
    let normalized = match r.u8()? {
        0 => false,
        1 => true,
        f => return Err(Error::Format(format!("invalid normalized flag {f}"))),
    };
    r.u8()?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut set = DescriptorSet::new(dim);
    for _ in 0..count {
        let id = r.string()?;
        let label = r.string()?;
        let raw = r.take(dim * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let vector = if normalized {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("descriptor {id:?} has non-finite values")));
            }
            values
        } else {
            l2_normalize(&values)?
        };
        set.push(Descriptor { id, vector, label })?;
    }
    if r.pos < bytes.len() {
        if r.take(4)? != META_TAG {
            return Err(Error::Format(
                "unexpected trailing bytes after descriptor records".into(),
            ));
        }
        let n = r.u32()?;
        for _ in 0..n {
            let k = r.string()?;
            let v = r.string()?;
            set.metadata.insert(k, v);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("unexpected trailing bytes after metadata".into()));
        }
    }
    Ok(set)
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u16::try_from(s.len()).map_err(|_| Error::Schema(format!("string longer than 65535 bytes: {s:.32}...")))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serializes a set as a normalized pack. Metadata, when present, follows
/// the records.
pub fn write_descriptor_pack(set: &DescriptorSet, mut w: impl Write) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[1, 0]);
    let count = u32::try_from(set.len()).map_err(|_| Error::Schema("too many descriptors".into()))?;
    let dim = u32::try_from(set.dim()).map_err(|_| Error::Schema("descriptor dimension too large".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for d in set.iter() {
        put_str(&mut out, &d.id)?;
        put_str(&mut out, &d.label)?;
        for v in &d.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if !set.metadata.is_empty() {
        out.extend_from_slice(META_TAG);
        out.extend_from_slice(&(set.metadata.len() as u32).to_le_bytes());
        for (k, v) in &set.metadata {
            put_str(&mut out, k)?;
            put_str(&mut out, v)?;
        }
    }
    w.write_all(&out).map_err(|e| Error::io("<descriptor pack>", e))
}

pub fn load_descriptor_pack(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_descriptor_pack(&bytes)
}

pub fn save_descriptor_pack(set: &DescriptorSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_descriptor_pack(set, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Builds a set from `id,class_label` rows and a headerless little-endian
/// float32 matrix with one row per CSV row. Rows are normalized.
pub fn load_labeled_matrix(labels_csv: impl AsRef<Path>, matrix: impl AsRef<Path>) -> Result<DescriptorSet> {
    let (labels_csv, matrix) = (labels_csv.as_ref(), matrix.as_ref());
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(labels_csv)
        .map_err(|e| Error::csv(labels_csv, e))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(labels_csv, e))?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                line: rec.position().map_or(0, |p| p.line() as usize),
                message: format!("expected `id,class_label`, found {} fields", rec.len()),
            });
        }
        rows.push((rec[0].to_owned(), rec[1].to_owned()));
    }
    let bytes = std::fs::read(matrix).map_err(|e| Error::io(matrix, e))?;
    if rows.is_empty() || bytes.len() % (4 * rows.len()) != 0 || bytes.is_empty() {
        return Err(Error::Format(format!(
            "{} bytes of float32 data cannot be split into {} rows",
            bytes.len(),
            rows.len()
        )));
    }
    let dim = bytes.len() / 4 / rows.len();
    let mut set = DescriptorSet::new(dim);
    for ((id, label), chunk) in rows.into_iter().zip(bytes.chunks_exact(dim * 4)) {
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        set.push(Descriptor {
            id,
            vector: l2_normalize(&values)?,
            label,
        })?;
    }
    Ok(set)
}
