//! Bag-of-words retrieval: k-means dictionary training, TF-IDF global
//! descriptors and the persisted keyframe database.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bvft::{descriptor_set_from_bytes, descriptor_set_to_bytes, DescriptorSet};
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::pointcloud::{PointCloud, Pose2D};

/// A trained visual vocabulary: `words` centroids of dimension `dim`.
#[derive(Debug, Clone)]
pub struct Dictionary {
    /// Row-major centroid matrix, `words * dim` entries.
    pub centroids: Vec<f32>,
    pub words: usize,
    pub dim: usize,
    /// Lloyd iterations actually run (not persisted).
    pub iterations: usize,
    /// Final sum of squared distances to assigned centroids (not persisted).
    pub inertia: f64,
}

impl Dictionary {
    pub fn centroid(&self, w: usize) -> &[f32] {
        &self.centroids[w * self.dim..(w + 1) * self.dim]
    }

    pub fn content_eq(&self, other: &Dictionary) -> bool {
        self.words == other.words && self.dim == other.dim && self.centroids == other.centroids
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of the nearest centroid, ties to the smallest index.
fn nearest_centroid(dict: &Dictionary, v: &[f32]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for w in 0..dict.words {
        let d = sq_dist(dict.centroid(w), v);
        if d < best_d {
            best_d = d;
            best = w;
        }
    }
    best
}

/// K-means with plus-plus seeding and Lloyd iterations. Stops when the
/// largest centroid shift drops below 1e-4 or after `max_iter` rounds.
/// Empty clusters are re-seeded from the point farthest from its assigned
/// centroid. Deterministic for a fixed seed.
pub fn train_dictionary(
    descriptors: &[Vec<f32>],
    words: usize,
    max_iter: usize,
    seed: u64,
) -> Result<Dictionary> {
    let n = descriptors.len();
    if words == 0 {
        return Err(Error::InvalidParam("dictionary size must be >= 1".into()));
    }
    if n < words {
        return Err(Error::InvalidParam(format!(
            "need at least {words} descriptors to train {words} words, got {n}"
        )));
    }
    let dim = descriptors[0].len();
    if descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::DimensionMismatch(
            "training descriptors have mixed dimensions".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids: Vec<f32> = Vec::with_capacity(words * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&descriptors[first]);
    let mut min_d: Vec<f64> = descriptors
        .iter()
        .map(|d| sq_dist(d, &descriptors[first]))
        .collect();
    for _ in 1..words {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in min_d.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&descriptors[pick]);
        let new_c = &centroids[start..start + dim];
        for (i, d) in descriptors.iter().enumerate() {
            min_d[i] = min_d[i].min(sq_dist(d, new_c));
        }
    }

    let mut dict = Dictionary {
        centroids,
        words,
        dim,
        iterations: 0,
        inertia: 0.0,
    };

    let mut assignment = vec![0usize; n];
    let mut dist = vec![0.0f64; n];
    for iter in 0..max_iter {
        // Assignment step.
        let mut inertia = 0.0f64;
        for (i, d) in descriptors.iter().enumerate() {
            let w = nearest_centroid(&dict, d);
            assignment[i] = w;
            dist[i] = sq_dist(dict.centroid(w), d);
            inertia += dist[i];
        }
        dict.inertia = inertia;
        dict.iterations = iter + 1;

        // Update step with f64 accumulators.
        let mut sums = vec![0.0f64; words * dim];
        let mut counts = vec![0usize; words];
        for (i, d) in descriptors.iter().enumerate() {
            let w = assignment[i];
            counts[w] += 1;
            for (k, &x) in d.iter().enumerate() {
                sums[w * dim + k] += x as f64;
            }
        }
        // Re-seed empty clusters from the farthest points.
        let mut taken = dist.clone();
        for w in 0..words {
            if counts[w] > 0 {
                continue;
            }
            let far = taken
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite distances"))
                .map(|(i, _)| i)
                .expect("non-empty data");
            taken[far] = 0.0;
            counts[w] = 1;
            for k in 0..dim {
                sums[w * dim + k] = descriptors[far][k] as f64;
            }
        }

        let mut shift: f64 = 0.0;
        for w in 0..words {
            let inv = 1.0 / counts[w] as f64;
            let mut delta = 0.0f64;
            for k in 0..dim {
                let new = (sums[w * dim + k] * inv) as f32;
                let old = dict.centroids[w * dim + k];
                let d = new as f64 - old as f64;
                delta += d * d;
                dict.centroids[w * dim + k] = new;
            }
            shift = shift.max(delta.sqrt());
        }
        if shift < 1e-4 {
            break;
        }
    }

    // Final inertia under the converged centroids.
    let mut inertia = 0.0;
    for d in descriptors {
        let w = nearest_centroid(&dict, d);
        inertia += sq_dist(dict.centroid(w), d);
    }
    dict.inertia = inertia;
    if dict.centroids.iter().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate("non-finite centroid".into()));
    }
    Ok(dict)
}

/// Word-count histogram of a descriptor set under a dictionary.
pub fn quantize(set: &DescriptorSet, dict: &Dictionary) -> Result<Vec<u32>> {
    let mut hist = vec![0u32; dict.words];
    for d in &set.descriptors {
        if d.vector.len() != dict.dim {
            return Err(Error::DimensionMismatch(format!(
                "descriptor dim {} vs dictionary dim {}",
                d.vector.len(),
                dict.dim
            )));
        }
        hist[nearest_centroid(dict, &d.vector)] += 1;
    }
    Ok(hist)
}

/// Inverse document frequency: `ln(N / n_w)` per word, 0 for words absent
/// from the whole corpus.
pub fn compute_idf(corpus: &[Vec<u32>]) -> Result<Vec<f32>> {
    if corpus.is_empty() {
        return Err(Error::InvalidParam("idf needs a non-empty corpus".into()));
    }
    let words = corpus[0].len();
    let n = corpus.len() as f64;
    let mut idf = vec![0.0f32; words];
    for (w, slot) in idf.iter_mut().enumerate() {
        let docs = corpus.iter().filter(|h| h[w] > 0).count();
        if docs > 0 {
            *slot = (n / docs as f64).ln() as f32;
        }
    }
    Ok(idf)
}

/// A TF-IDF weighted, L2-normalized global descriptor. All-zero only for
/// frames without features.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub weights: Vec<f32>,
}

impl GlobalDescriptor {
    pub fn distance(&self, other: &GlobalDescriptor) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Term frequency times inverse document frequency, L2-normalized. An empty
/// histogram maps to the all-zero vector.
pub fn global_descriptor(hist: &[u32], idf: &[f32]) -> Result<GlobalDescriptor> {
    if hist.len() != idf.len() {
        return Err(Error::DimensionMismatch(format!(
            "histogram length {} vs idf length {}",
            hist.len(),
            idf.len()
        )));
    }
    let total: u64 = hist.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return Ok(GlobalDescriptor {
            weights: vec![0.0; hist.len()],
        });
    }
    let weights: Vec<f64> = hist
        .iter()
        .zip(idf)
        .map(|(&c, &w)| (c as f64 / total as f64) * w as f64)
        .collect();
    let norm = weights.iter().map(|x| x * x).sum::<f64>().sqrt();
    let weights = if norm > 0.0 {
        weights.iter().map(|x| (x / norm) as f32).collect()
    } else {
        vec![0.0; hist.len()]
    };
    Ok(GlobalDescriptor { weights })
}

/// One stored keyframe: identity, global pose, global descriptor and the
/// full local descriptor set.
#[derive(Debug, Clone)]
pub struct KeyframeEntry {
    pub frame_id: String,
    pub pose: Pose2D,
    pub global: GlobalDescriptor,
    pub descriptors: DescriptorSet,
}

/// The keyframe database: dictionary, corpus IDF and entries.
#[derive(Debug, Clone)]
pub struct KeyframeDb {
    pub dictionary: Dictionary,
    pub idf: Vec<f32>,
    pub entries: Vec<KeyframeEntry>,
    /// Spacing used during the build; not persisted.
    pub keyframe_spacing: f64,
}

impl KeyframeDb {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Compares persisted content. Build metadata (spacing, k-means
    /// iteration counts) is not stored on disk and is ignored here.
    pub fn content_eq(&self, other: &KeyframeDb) -> bool {
        self.dictionary.content_eq(&other.dictionary)
            && self.idf == other.idf
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.frame_id == b.frame_id
                    && a.pose == b.pose
                    && a.global == b.global
                    && a.descriptors.content_eq(&b.descriptors)
            })
    }

    /// TF-IDF global descriptor of an arbitrary descriptor set under this
    /// database's dictionary and IDF.
    pub fn global_for(&self, set: &DescriptorSet) -> Result<GlobalDescriptor> {
        let hist = quantize(set, &self.dictionary)?;
        global_descriptor(&hist, &self.idf)
    }
}

/// Greedy keyframe selection: a frame is kept when its translation is at
/// least `spacing` meters from the last kept frame's. The first frame is
/// always kept.
pub fn select_keyframes(poses: &[Pose2D], spacing: f64) -> Vec<usize> {
    let mut selected = Vec::new();
    let mut last: Option<Pose2D> = None;
    for (i, pose) in poses.iter().enumerate() {
        let keep = match last {
            None => true,
            Some(prev) => (pose.tx - prev.tx).hypot(pose.ty - prev.ty) >= spacing,
        };
        if keep {
            selected.push(i);
            last = Some(*pose);
        }
    }
    selected
}

/// Builds a keyframe database from posed clouds: selects keyframes by the
/// spacing rule, describes each and stores TF-IDF globals computed against
/// the keyframe corpus.
pub fn build_database(
    frames: &[PointCloud],
    spacing: f64,
    dictionary: Dictionary,
    pipeline: &Pipeline,
) -> Result<KeyframeDb> {
    let poses: Vec<Pose2D> = frames
        .iter()
        .map(|f| f.pose.ok_or_else(|| Error::MissingPose(f.frame_id.clone())))
        .collect::<Result<_>>()?;
    let selected = select_keyframes(&poses, spacing);

    let mut described = Vec::with_capacity(selected.len());
    let mut hists = Vec::with_capacity(selected.len());
    for &i in &selected {
        let frame = pipeline.describe(&frames[i])?;
        let hist = quantize(&frame.descriptors, &dictionary)?;
        hists.push(hist);
        described.push((frames[i].frame_id.clone(), poses[i], frame.descriptors));
    }
    let idf = compute_idf(&hists)?;
    let entries = described
        .into_iter()
        .zip(&hists)
        .map(|((frame_id, pose, descriptors), hist)| {
            Ok(KeyframeEntry {
                frame_id,
                pose,
                global: global_descriptor(hist, &idf)?,
                descriptors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KeyframeDb {
        dictionary,
        idf,
        entries,
        keyframe_spacing: spacing,
    })
}

/// Top-n retrieval by Euclidean distance between global descriptors,
/// ascending; ties break on the frame id. Returns `(frame_id, distance)`.
pub fn query(db: &KeyframeDb, q: &GlobalDescriptor, n: usize) -> Result<Vec<(String, f64)>> {
    if db.is_empty() {
        return Err(Error::InvalidParam("query against an empty database".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParam("query needs n >= 1".into()));
    }
    let mut ranked: Vec<(String, f64)> = db
        .entries
        .iter()
        .map(|e| (e.frame_id.clone(), e.global.distance(q)))
        .collect();
    ranked.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("finite distances")
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.truncate(n);
    Ok(ranked)
}

// --- persistence ---------------------------------------------------------

const BVDB_MAGIC: &[u8; 4] = b"BVDB";
const BVDB_VERSION: u16 = 1;

/// Serializes the database: magic "BVDB", version u16, word count u32,
/// descriptor dim u32, centroid block (f32), idf block (f32), entry count
/// u32, then per entry: length-prefixed UTF-8 frame id, pose as 3 f64,
/// global descriptor block (f32) and the embedded descriptor-set record.
/// Everything little-endian.
pub fn save_db(db: &KeyframeDb, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(BVDB_MAGIC);
    out.extend_from_slice(&BVDB_VERSION.to_le_bytes());
    out.extend_from_slice(&(db.dictionary.words as u32).to_le_bytes());
    out.extend_from_slice(&(db.dictionary.dim as u32).to_le_bytes());
    for &c in &db.dictionary.centroids {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for &w in &db.idf {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(db.entries.len() as u32).to_le_bytes());
    for entry in &db.entries {
        let id = entry.frame_id.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&entry.pose.tx.to_le_bytes());
        out.extend_from_slice(&entry.pose.ty.to_le_bytes());
        out.extend_from_slice(&entry.pose.theta.to_le_bytes());
        for &w in &entry.global.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&descriptor_set_to_bytes(&entry.descriptors));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return None;
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|s| u16::from_le_bytes(s.try_into().unwrap()))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|s| f32::from_le_bytes(s.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|s| f64::from_le_bytes(s.try_into().unwrap()))
    }
}

/// Loads a database written by [`save_db`].
pub fn load_db(path: &Path) -> Result<KeyframeDb> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let header_err = || Error::BadMagic { expected: "BVDB" };
    let magic = cur.take(4).ok_or_else(header_err)?;
    if magic != BVDB_MAGIC {
        return Err(header_err());
    }
    let version = cur.u16().ok_or_else(header_err)?;
    if version != BVDB_VERSION {
        return Err(Error::BadVersion {
            format: "BVDB",
            found: version,
            expected: BVDB_VERSION,
        });
    }
    let words = cur.u32().ok_or(Error::TruncatedDb { entry: 0 })? as usize;
    let dim = cur.u32().ok_or(Error::TruncatedDb { entry: 0 })? as usize;
    let mut centroids = Vec::with_capacity(words * dim);
    for _ in 0..words * dim {
        centroids.push(cur.f32().ok_or(Error::TruncatedDb { entry: 0 })?);
    }
    let mut idf = Vec::with_capacity(words);
    for _ in 0..words {
        idf.push(cur.f32().ok_or(Error::TruncatedDb { entry: 0 })?);
    }
    let count = cur.u32().ok_or(Error::TruncatedDb { entry: 0 })? as usize;
    let mut entries = Vec::with_capacity(count);
    for e in 0..count {
        let truncated = || Error::TruncatedDb { entry: e };
        let id_len = cur.u32().ok_or_else(truncated)? as usize;
        let id_bytes = cur.take(id_len).ok_or_else(truncated)?;
        let frame_id = std::str::from_utf8(id_bytes)
            .map_err(|_| Error::Malformed {
                path: path.into(),
                location: format!("entry {e}"),
                message: "frame id is not UTF-8".into(),
            })?
            .to_string();
        let tx = cur.f64().ok_or_else(truncated)?;
        let ty = cur.f64().ok_or_else(truncated)?;
        let theta = cur.f64().ok_or_else(truncated)?;
        let mut weights = Vec::with_capacity(words);
        for _ in 0..words {
            weights.push(cur.f32().ok_or_else(truncated)?);
        }
        // The embedded descriptor record is sized by its keypoint count and
        // the dictionary dimension.
        let header = cur.take(10).ok_or_else(truncated)?;
        let kp_count = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let body_len = 2 * kp_count * (5 + 4 * dim);
        cur.pos -= 10;
        let record = cur.take(10 + body_len).ok_or_else(truncated)?;
        let descriptors = descriptor_set_from_bytes(record, frame_id.clone())?;
        entries.push(KeyframeEntry {
            frame_id,
            pose: Pose2D::new(tx, ty, theta),
            global: GlobalDescriptor { weights },
            descriptors,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::TruncatedDb { entry: count });
    }
    Ok(KeyframeDb {
        dictionary: Dictionary {
            centroids,
            words,
            dim,
            iterations: 0,
            inertia: 0.0,
        },
        idf,
        entries,
        keyframe_spacing: 0.0,
    })
}
