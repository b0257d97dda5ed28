//! Dataset plumbing: the synthetic three-moons generator, IDX image
//! loading, delimited-table loading, precomputed-embedding ingestion,
//! and accuracy scoring.

use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::graph::PointCloud;
use crate::matrix::DenseMatrix;
use crate::oracle;
use crate::osstat::Clustering;
use crate::{Error, Result};

/// A point cloud with ground-truth class labels.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    cloud: PointCloud,
    labels: Vec<u32>,
    p: usize,
    name: String,
    provenance: String,
}

impl LabeledDataset {
    pub fn new(
        cloud: PointCloud,
        labels: Vec<u32>,
        p: usize,
        name: impl Into<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != cloud.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} points",
                labels.len(),
                cloud.len()
            )));
        }
        if p < 2 {
            return Err(Error::Parameter(format!(
                "a labeled dataset needs at least 2 classes, got {p}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c as usize >= p) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {p} classes"
            )));
        }
        Ok(LabeledDataset {
            cloud,
            labels,
            p,
            name: name.into(),
            provenance: provenance.into(),
        })
    }

    /// Concatenates several parts (e.g. a train and a test split) into
    /// one dataset. Dimensions and class counts must agree.
    pub fn concat(parts: Vec<LabeledDataset>) -> Result<LabeledDataset> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Parameter("nothing to concatenate".into()))?;
        let dim = first.cloud.dim();
        let p = first.p;
        let mut rows: Vec<Vec<f64>> = (0..first.cloud.len())
            .map(|i| first.cloud.point(i).to_vec())
            .collect();
        let mut labels = first.labels;
        let mut provenance = first.provenance;
        for part in iter {
            if part.cloud.dim() != dim || part.p != p {
                return Err(Error::Shape(format!(
                    "cannot concatenate {}x{} ({} classes) onto {dim}-dimensional data with {p} classes",
                    part.cloud.len(),
                    part.cloud.dim(),
                    part.p
                )));
            }
            for i in 0..part.cloud.len() {
                rows.push(part.cloud.point(i).to_vec());
            }
            labels.extend_from_slice(&part.labels);
            provenance.push_str(" + ");
            provenance.push_str(&part.provenance);
        }
        LabeledDataset::new(
            PointCloud::from_rows(rows)?,
            labels,
            p,
            first.name,
            provenance,
        )
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Number of points in each class.
    pub fn class_volumes(&self) -> Vec<usize> {
        let mut v = vec![0usize; self.p];
        for &c in &self.labels {
            v[c as usize] += 1;
        }
        v
    }
}

pub const MOON_POINTS_DEFAULT: usize = 500;
pub const MOON_NOISE_DEFAULT: f64 = 0.14;
pub const MOON_AMBIENT_DEFAULT: usize = 100;

/// Synthetic three-moons dataset: two unit half-circles opening
/// downwards centered at (0,0) and (3,0), and a half-circle of radius
/// 1.5 opening upwards centered at (1.5, 0.4), embedded into
/// `ambient_dim` dimensions with isotropic Gaussian noise.
///
/// Reproducible bit for bit: moon `i` uses stream `i` of a ChaCha8
/// generator seeded with `seed`, drawing its angles first and then its
/// noise row by row.
pub fn three_moons(
    n_per_moon: usize,
    noise_sd: f64,
    ambient_dim: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_per_moon == 0 {
        return Err(Error::Parameter("n_per_moon must be positive".into()));
    }
    if ambient_dim < 2 {
        return Err(Error::Parameter(format!(
            "ambient dimension {ambient_dim} cannot hold the moons' plane"
        )));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Parameter(format!(
            "noise sd {noise_sd} must be >= 0"
        )));
    }
    let moons: [(f64, f64, f64, bool); 3] = [
        (0.0, 0.0, 1.0, true),
        (3.0, 0.0, 1.0, true),
        (1.5, 0.4, 1.5, false),
    ];
    let mut rows = Vec::with_capacity(3 * n_per_moon);
    let mut labels = Vec::with_capacity(3 * n_per_moon);
    for (m, &(cx, cy, r, upper)) in moons.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m as u64);
        let angles: Vec<f64> = (0..n_per_moon)
            .map(|_| {
                let t = rng.gen_range(0.0..std::f64::consts::PI);
                if upper {
                    t
                } else {
                    t + std::f64::consts::PI
                }
            })
            .collect();
        for &t in &angles {
            let mut row = vec![0.0; ambient_dim];
            row[0] = cx + r * t.cos();
            row[1] = cy + r * t.sin();
            for v in row.iter_mut() {
                *v += noise_sd * rng.sample::<f64, _>(StandardNormal);
            }
            rows.push(row);
            labels.push(m as u32);
        }
    }
    LabeledDataset::new(
        PointCloud::from_rows(rows)?,
        labels,
        3,
        "three-moons",
        format!("synthetic, n={n_per_moon}/moon, sd={noise_sd}, dim={ambient_dim}, seed={seed}"),
    )
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn idx_u32(bytes: &[u8], offset: usize, path: &str, what: &str) -> Result<u32> {
    let mut slice = bytes.get(offset..offset + 4).ok_or(Error::Format {
        path: path.to_string(),
        offset: bytes.len() as u64,
        reason: format!("file ends before {what}"),
    })?;
    Ok(slice.read_u32::<BigEndian>().expect("4 bytes checked"))
}

/// Loads an IDX image file and its companion IDX label file into an
/// N×(rows*cols) cloud with pixel values scaled to [0, 1].
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let img_path = images.display().to_string();
    let img = read_all(images)?;
    let magic = idx_u32(&img, 0, &img_path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: img_path,
            offset: 0,
            reason: format!("magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = idx_u32(&img, 4, &img_path, "image count")? as usize;
    let rows = idx_u32(&img, 8, &img_path, "row count")? as usize;
    let cols = idx_u32(&img, 12, &img_path, "column count")? as usize;
    let d = rows * cols;
    let need = 16 + n * d;
    if img.len() < need {
        return Err(Error::Format {
            path: img_path,
            offset: img.len() as u64,
            reason: format!("{} pixel bytes missing", need - img.len()),
        });
    }

    let lbl_path = labels.display().to_string();
    let lbl = read_all(labels)?;
    let magic = idx_u32(&lbl, 0, &lbl_path, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: lbl_path,
            offset: 0,
            reason: format!("magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_lbl = idx_u32(&lbl, 4, &lbl_path, "label count")? as usize;
    if n_lbl != n {
        return Err(Error::Shape(format!(
            "images file has {n} items, labels file has {n_lbl}"
        )));
    }
    if lbl.len() < 8 + n {
        return Err(Error::Format {
            path: lbl_path,
            offset: lbl.len() as u64,
            reason: format!("{} label bytes missing", 8 + n - lbl.len()),
        });
    }

    let mut cloud = DenseMatrix::zeros(n, d);
    for i in 0..n {
        let pixels = &img[16 + i * d..16 + (i + 1) * d];
        let row = cloud.row_mut(i);
        for (slot, &px) in row.iter_mut().zip(pixels) {
            *slot = px as f64 / 255.0;
        }
    }
    let label_bytes = &lbl[8..8 + n];
    let labels_vec: Vec<u32> = label_bytes.iter().map(|&b| b as u32).collect();
    let p = labels_vec.iter().copied().max().unwrap_or(0) as usize + 1;
    LabeledDataset::new(
        PointCloud::new(cloud)?,
        labels_vec,
        p.max(2),
        "idx",
        format!("{} + {}", images.display(), labels.display()),
    )
}

/// Where the class label sits in a delimited row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    First,
    Last,
    Index(usize),
}

/// Loads a delimited numeric table, splitting one column off as the
/// class label. Blank lines are skipped.
pub fn load_delimited(path: &Path, sep: char, label: LabelColumn) -> Result<LabeledDataset> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = if sep == ' ' {
            line.split_whitespace().collect()
        } else {
            line.split(sep).map(str::trim).collect()
        };
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(Error::FormatLine {
                path: display,
                line: lineno + 1,
                reason: format!("{} fields, expected {w}", fields.len()),
            });
        }
        let label_at = match label {
            LabelColumn::First => 0,
            LabelColumn::Last => w - 1,
            LabelColumn::Index(i) => i,
        };
        if label_at >= w || w < 2 {
            return Err(Error::FormatLine {
                path: display,
                line: lineno + 1,
                reason: format!("no label column {label_at} in a {w}-field row"),
            });
        }
        let mut features = Vec::with_capacity(w - 1);
        let mut class = 0u32;
        for (i, tok) in fields.iter().enumerate() {
            if i == label_at {
                class = tok.parse().map_err(|_| Error::FormatLine {
                    path: display.clone(),
                    line: lineno + 1,
                    reason: format!("label `{tok}` is not an unsigned integer"),
                })?;
            } else {
                let v: f64 = tok.parse().map_err(|_| Error::FormatLine {
                    path: display.clone(),
                    line: lineno + 1,
                    reason: format!("field `{tok}` is not a number"),
                })?;
                features.push(v);
            }
        }
        rows.push(features);
        labels.push(class);
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: display,
            offset: 0,
            reason: "file contains no rows".into(),
        });
    }
    let p = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    LabeledDataset::new(
        PointCloud::from_rows(rows)?,
        labels,
        p.max(2),
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "delimited".into()),
        display,
    )
}

const EMBEDDING_MAGIC: &[u8; 8] = b"VMBO-E1\0";

/// Loads a precomputed embedding: 8-byte magic, u32 point count, u32
/// dimension, then f32 features row-major, all little-endian.
pub fn load_embedding(path: &Path) -> Result<PointCloud> {
    let display = path.display().to_string();
    let bytes = read_all(path)?;
    if bytes.len() < 8 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::Format {
            path: display,
            offset: 0,
            reason: "bad magic, expected VMBO-E1".into(),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::Format {
            path: display,
            offset: bytes.len() as u64,
            reason: "file ends before the header".into(),
        });
    }
    let mut header = &bytes[8..16];
    let n = header.read_u32::<LittleEndian>().expect("checked") as usize;
    let d = header.read_u32::<LittleEndian>().expect("checked") as usize;
    if n == 0 || d == 0 {
        return Err(Error::Format {
            path: display,
            offset: 8,
            reason: format!("degenerate shape {n}x{d}"),
        });
    }
    let need = 16 + 4 * n * d;
    if bytes.len() < need {
        return Err(Error::Format {
            path: display,
            offset: bytes.len() as u64,
            reason: format!("{} feature bytes missing", need - bytes.len()),
        });
    }
    let mut values = DenseMatrix::zeros(n, d);
    let mut cursor = &bytes[16..need];
    for i in 0..n {
        let row = values.row_mut(i);
        for slot in row.iter_mut() {
            *slot = cursor.read_f32::<LittleEndian>().expect("checked") as f64;
        }
    }
    PointCloud::new(values)
}

/// Writes a point cloud in the embedding format read by
/// [`load_embedding`].
pub fn save_embedding(cloud: &PointCloud, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let mut out = Vec::with_capacity(16 + 4 * cloud.len() * cloud.dim());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.write_u32::<LittleEndian>(cloud.len() as u32)
        .expect("vec write");
    out.write_u32::<LittleEndian>(cloud.dim() as u32)
        .expect("vec write");
    for i in 0..cloud.len() {
        for &v in cloud.point(i) {
            out.write_f32::<LittleEndian>(v as f32).expect("vec write");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(display, e))
}

/// How predicted cluster ids map onto truth class ids when scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelMap {
    /// Cluster i is class i (the semi-supervised setting, where
    /// fidelity points anchor the identities).
    Fixed,
    /// Choose the cluster-to-class matching that maximizes accuracy.
    BestMatch,
}

/// Fraction of points whose predicted class matches the truth.
pub fn accuracy(pred: &Clustering, truth: &[u32], map: LabelMap) -> Result<f64> {
    let n = truth.len();
    if pred.n() != n {
        return Err(Error::Shape(format!(
            "{} predictions for {n} truth labels",
            pred.n()
        )));
    }
    if n == 0 {
        return Err(Error::Parameter("cannot score an empty dataset".into()));
    }
    let p = pred.p();
    match map {
        LabelMap::Fixed => {
            let hits = pred
                .assign()
                .iter()
                .zip(truth)
                .filter(|(&a, &t)| a == t)
                .count();
            Ok(hits as f64 / n as f64)
        }
        LabelMap::BestMatch => {
            let classes = truth.iter().map(|&t| t as usize).max().unwrap_or(0) + 1;
            let side = classes.max(p);
            let mut confusion = DenseMatrix::zeros(side, side);
            for (&a, &t) in pred.assign().iter().zip(truth) {
                let (t, a) = (t as usize, a as usize);
                confusion.set(t, a, confusion.get(t, a) + 1.0);
            }
            let matching = oracle::best_class_matching(&confusion)?;
            let mut hits = 0.0;
            for (cluster, &class) in matching.iter().enumerate() {
                hits += confusion.get(class, cluster);
            }
            Ok(hits / n as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_have_paper_scale_under_defaults() {
        let data = three_moons(
            MOON_POINTS_DEFAULT,
            MOON_NOISE_DEFAULT,
            MOON_AMBIENT_DEFAULT,
            7,
        )
        .unwrap();
        assert_eq!(data.len(), 1500);
        assert_eq!(data.class_count(), 3);
        assert_eq!(data.cloud().dim(), 100);
        assert_eq!(data.class_volumes(), vec![500, 500, 500]);
    }

    #[test]
    fn noiseless_moons_sit_on_their_circles() {
        let data = three_moons(200, 0.0, 6, 3).unwrap();
        let circles = [(0.0, 0.0, 1.0), (3.0, 0.0, 1.0), (1.5, 0.4, 1.5)];
        for i in 0..data.len() {
            let pt = data.cloud().point(i);
            let (cx, cy, r) = circles[data.labels()[i] as usize];
            let res = ((pt[0] - cx).powi(2) + (pt[1] - cy).powi(2)).sqrt() - r;
            assert!(res.abs() < 1e-12, "point {i} off its circle by {res}");
            match data.labels()[i] {
                0 | 1 => assert!(pt[1] >= cy - 1e-12),
                _ => assert!(pt[1] <= cy + 1e-12),
            }
            for &pad in &pt[2..] {
                assert_eq!(pad, 0.0);
            }
        }
    }

    #[test]
    fn planar_moons_have_no_padding() {
        let data = three_moons(10, 0.1, 2, 1).unwrap();
        assert_eq!(data.cloud().dim(), 2);
        assert!(three_moons(10, 0.1, 1, 1).is_err());
        assert!(three_moons(0, 0.1, 2, 1).is_err());
    }

    #[test]
    fn moons_are_reproducible_per_seed() {
        let a = three_moons(50, 0.14, 5, 11).unwrap();
        let b = three_moons(50, 0.14, 5, 11).unwrap();
        for i in 0..a.len() {
            assert_eq!(a.cloud().point(i), b.cloud().point(i));
        }
        let c = three_moons(50, 0.14, 5, 12).unwrap();
        assert!((0..c.len()).any(|i| a.cloud().point(i) != c.cloud().point(i)));
    }

    fn write_idx_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = dir.join("imgs.idx");
        let labels = dir.join("lbls.idx");
        let mut img = Vec::new();
        img.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
        img.write_u32::<BigEndian>(2).unwrap();
        img.write_u32::<BigEndian>(2).unwrap();
        img.write_u32::<BigEndian>(2).unwrap();
        img.extend_from_slice(&[0, 255, 128, 64, 10, 20, 30, 40]);
        std::fs::write(&images, img).unwrap();
        let mut lbl = Vec::new();
        lbl.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
        lbl.write_u32::<BigEndian>(2).unwrap();
        lbl.extend_from_slice(&[1, 0]);
        std::fs::write(&labels, lbl).unwrap();
        (images, labels)
    }

    #[test]
    fn idx_fixture_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx_fixture(dir.path());
        let data = load_idx(&images, &labels).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.cloud().dim(), 4);
        assert_eq!(data.labels(), &[1, 0]);
        let want0 = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
        for (got, want) in data.cloud().point(0).iter().zip(want0) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(data.cloud().point(1)[3], 40.0 / 255.0);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx_fixture(dir.path());

        let empty = dir.path().join("empty.idx");
        std::fs::write(&empty, b"").unwrap();
        match load_idx(&empty, &labels) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }

        let bad_magic = dir.path().join("bad.idx");
        let mut bytes = std::fs::read(&images).unwrap();
        bytes[3] = 0x01;
        std::fs::write(&bad_magic, &bytes).unwrap();
        match load_idx(&bad_magic, &labels) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }

        let truncated = dir.path().join("short.idx");
        let bytes = std::fs::read(&images).unwrap();
        std::fs::write(&truncated, &bytes[..20]).unwrap();
        match load_idx(&truncated, &labels) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("expected format error, got {other:?}"),
        }

        let mismatched = dir.path().join("three.idx");
        let mut lbl = Vec::new();
        lbl.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
        lbl.write_u32::<BigEndian>(3).unwrap();
        lbl.extend_from_slice(&[1, 0, 1]);
        std::fs::write(&mismatched, lbl).unwrap();
        assert!(matches!(
            load_idx(&images, &mismatched),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn delimited_fixture_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        std::fs::write(&path, "0,1,2,1\n3.5,4,16,0\n\n7,0,9,2\n").unwrap();
        let data = load_delimited(&path, ',', LabelColumn::Last).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.cloud().dim(), 3);
        assert_eq!(data.labels(), &[1, 0, 2]);
        assert_eq!(data.class_count(), 3);
        assert_eq!(data.cloud().point(1), &[3.5, 4.0, 16.0]);

        let single = dir.path().join("one.csv");
        std::fs::write(&single, "1,0.5,2.5\n").unwrap();
        let one = load_delimited(&single, ',', LabelColumn::First).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.cloud().point(0), &[0.5, 2.5]);
        assert_eq!(one.labels(), &[1]);
    }

    #[test]
    fn ragged_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "1,2,0\n1,2,3,0\n").unwrap();
        match load_delimited(&path, ',', LabelColumn::Last) {
            Err(Error::FormatLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            load_delimited(&empty, ',', LabelColumn::Last),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn embedding_roundtrips_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embed.bin");
        let cloud =
            PointCloud::from_rows(vec![vec![0.5, -1.25], vec![3.0, 0.125], vec![-2.5, 9.0]])
                .unwrap();
        save_embedding(&cloud, &path).unwrap();
        let back = load_embedding(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.dim(), 2);
        for i in 0..3 {
            assert_eq!(back.point(i), cloud.point(i));
        }

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_embedding(&path),
            Err(Error::Format { offset: 0, .. })
        ));
        bytes[0] = b'V';
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_embedding(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn concat_stacks_parts() {
        let a = three_moons(10, 0.0, 3, 1).unwrap();
        let b = three_moons(5, 0.0, 3, 2).unwrap();
        let both = LabeledDataset::concat(vec![a.clone(), b]).unwrap();
        assert_eq!(both.len(), 45);
        assert_eq!(both.cloud().point(3), a.cloud().point(3));
        let planar = three_moons(5, 0.0, 2, 1).unwrap();
        assert!(LabeledDataset::concat(vec![a, planar]).is_err());
    }

    #[test]
    fn accuracy_modes_score_as_specified() {
        let truth = vec![0u32, 0, 1, 1, 2, 2];
        let exact = Clustering::new(truth.clone(), 3).unwrap();
        assert_eq!(accuracy(&exact, &truth, LabelMap::Fixed).unwrap(), 1.0);
        assert_eq!(accuracy(&exact, &truth, LabelMap::BestMatch).unwrap(), 1.0);

        // Swap classes 0 and 1 in the prediction.
        let swapped: Vec<u32> = truth
            .iter()
            .map(|&t| match t {
                0 => 1,
                1 => 0,
                other => other,
            })
            .collect();
        let swapped = Clustering::new(swapped, 3).unwrap();
        assert_eq!(
            accuracy(&swapped, &truth, LabelMap::BestMatch).unwrap(),
            1.0
        );
        let fixed = accuracy(&swapped, &truth, LabelMap::Fixed).unwrap();
        assert!((fixed - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn random_predictions_score_near_chance() {
        use rand::prelude::*;
        let n = 3000;
        let p = 3;
        let truth: Vec<u32> = (0..n).map(|i| (i % p) as u32).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pred: Vec<u32> = (0..n).map(|_| rng.gen_range(0..p) as u32).collect();
        let pred = Clustering::new(pred, p).unwrap();
        let acc = accuracy(&pred, &truth, LabelMap::Fixed).unwrap();
        let sigma = ((1.0 / 3.0) * (2.0 / 3.0) / n as f64).sqrt();
        assert!((acc - 1.0 / 3.0).abs() <= 3.0 * sigma, "accuracy {acc}");
    }
}
