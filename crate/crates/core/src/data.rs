//! Datasets in and artifacts out: IDX image/label files, CSV matrices,
//! synthetic Gaussian mixtures and binary PGM image grids.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::{stream_rng, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Array2<f64>,
    pub labels: Option<Vec<u8>>,
    pub name: String,
}

impl Dataset {
    pub fn new(
        samples: Array2<f64>,
        labels: Option<Vec<u8>>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != samples.nrows() {
                return Err(Error::CountMismatch {
                    images: samples.nrows(),
                    labels: l.len(),
                });
            }
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("dataset samples"));
        }
        Ok(Dataset {
            samples,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// First `n` rows (all rows if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            samples: self.samples.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            name: self.name.clone(),
        }
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Truncated {
            what,
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX image file into rows of `rows * cols` values in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f64>> {
    let magic = be_u32(bytes, 0, "IDX image file")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Version {
            what: "IDX image file",
            detail: format!("magic {magic}, expected {IDX_IMAGES_MAGIC}"),
        });
    }
    let count = be_u32(bytes, 4, "IDX image file")? as usize;
    let rows = be_u32(bytes, 8, "IDX image file")? as usize;
    let cols = be_u32(bytes, 12, "IDX image file")? as usize;
    let d = rows * cols;
    let expected = 16 + count * d;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "IDX image payload",
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes[16..expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok(Array2::from_shape_vec((count, d), values).expect("sized"))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "IDX label file")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Version {
            what: "IDX label file",
            detail: format!("magic {magic}, expected {IDX_LABELS_MAGIC}"),
        });
    }
    let count = be_u32(bytes, 4, "IDX label file")? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::Truncated {
            what: "IDX label payload",
            expected: 8 + count,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..8 + count].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<Dataset> {
    let images = images.as_ref();
    let samples = parse_idx_images(&read(images)?)?;
    let labels = labels
        .map(|p| read(p).and_then(|b| parse_idx_labels(&b)))
        .transpose()?;
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(samples, labels, name)
}

/// Each row a uniformly chosen center plus `N(0, sigma_data^2 I)`; labels hold the component.
pub fn make_gaussian_mixture(
    centers: ArrayView2<f64>,
    sigma_data: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let k = centers.nrows();
    if k == 0 {
        return Err(Error::arg("mixture needs at least one center"));
    }
    if k > 256 {
        return Err(Error::arg("at most 256 components"));
    }
    if !(sigma_data >= 0.0) {
        return Err(Error::arg("sigma_data must be nonnegative"));
    }
    let d = centers.ncols();
    let mut rng = stream_rng(seed, Stream::Data);
    let mut samples = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for mut row in samples.rows_mut() {
        let c = rng.random_range(0..k);
        labels.push(c as u8);
        for (v, &m) in row.iter_mut().zip(centers.row(c)) {
            let z: f64 = rng.sample(StandardNormal);
            *v = m + sigma_data * z;
        }
    }
    Dataset::new(samples, Some(labels), format!("mixture{k}x{d}"))
}

/// Side length of the square tile for dimension `d`, if `d` is a perfect square.
pub fn square_side(d: usize) -> Option<usize> {
    let s = (d as f64).sqrt().round() as usize;
    (s * s == d).then_some(s)
}

/// Binary PGM (P5, maxval 255) tiling `samples` row-major into a `rows x cols` grid.
/// Values are clamped to `[0, 1]` then scaled; unused tiles stay black.
pub fn render_image_grid(
    samples: ArrayView2<f64>,
    rows: usize,
    cols: usize,
    side: Option<usize>,
) -> Result<Vec<u8>> {
    let d = samples.ncols();
    let side = match side {
        Some(s) if s * s == d => s,
        Some(s) => {
            return Err(Error::arg(format!(
                "tile side {s} does not match dimension {d}"
            )))
        }
        None => square_side(d)
            .ok_or_else(|| Error::arg(format!("dimension {d} is not a perfect square")))?,
    };
    if samples.nrows() > rows * cols {
        return Err(Error::arg(format!(
            "{} samples do not fit a {rows}x{cols} grid",
            samples.nrows()
        )));
    }
    let (width, height) = (cols * side, rows * side);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + width * height, 0);
    for (k, sample) in samples.rows().into_iter().enumerate() {
        let (tr, tc) = (k / cols, k % cols);
        for (p, &v) in sample.iter().enumerate() {
            let (r, c) = (tr * side + p / side, tc * side + p % side);
            out[header + r * width + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok(out)
}

pub fn write_image_grid(
    samples: ArrayView2<f64>,
    rows: usize,
    cols: usize,
    side: Option<usize>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_image_grid(samples, rows, cols, side)?;
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

/// Comma-separated, one row per line, shortest round-trip float formatting.
pub fn write_csv(matrix: ArrayView2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in matrix.rows() {
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}").map_err(|e| Error::file(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    parse_csv(file)
}

pub fn parse_csv(reader: impl std::io::Read) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut values = Vec::new();
    let mut width = None;
    let mut nrows = 0;
    for (lineno, record) in rdr.records().enumerate() {
        let record = record?;
        if width.is_some_and(|w| w != record.len()) {
            return Err(Error::Shape(format!(
                "row {} has {} fields, expected {}",
                lineno + 1,
                record.len(),
                width.unwrap()
            )));
        }
        width = Some(record.len());
        for field in record.iter() {
            values.push(
                field.parse::<f64>().map_err(|_| {
                    Error::arg(format!("row {}: not a number: {field:?}", lineno + 1))
                })?,
            );
        }
        nrows += 1;
    }
    Ok(Array2::from_shape_vec((nrows, width.unwrap_or(0)), values).expect("sized"))
}

/// Loads a sample matrix from IDX (detected by magic) or CSV.
pub fn load_matrix(path: impl AsRef<Path>, labels: Option<&Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = read(path)?;
    if bytes.len() >= 4 && u32::from_be_bytes(bytes[..4].try_into().unwrap()) == IDX_IMAGES_MAGIC {
        return load_idx(path, labels);
    }
    let samples = parse_csv(bytes.as_slice())?;
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(samples, None, name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn idx_images(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn parses_and_scales_small_idx() {
        let bytes = idx_images(2, 2, 2, &[0, 255, 51, 102, 255, 0, 0, 0]);
        let m = parse_idx_images(&bytes).unwrap();
        assert_eq!(m.dim(), (2, 4));
        assert_eq!(m.row(0).to_vec(), vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(m[[1, 0]], 1.0);
    }

    #[test]
    fn idx_errors_are_distinct() {
        assert!(matches!(
            parse_idx_images(&[]),
            Err(Error::Truncated { .. })
        ));
        let short = idx_images(2, 2, 2, &[0, 1, 2]);
        assert!(matches!(
            parse_idx_images(&short),
            Err(Error::Truncated { .. })
        ));
        let mut wrong = idx_images(1, 1, 1, &[0]);
        wrong[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&wrong),
            Err(Error::Version { .. })
        ));
        let mut labels = Vec::new();
        labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[1, 2, 3]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 2, 3]);
        assert!(matches!(
            parse_idx_labels(&labels[..9]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::write(&img, idx_images(2, 1, 1, &[1, 2])).unwrap();
        let mut labels = Vec::new();
        labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[1, 2, 3]);
        fs::write(&lab, labels).unwrap();
        assert!(matches!(
            load_idx(&img, Some(&lab)),
            Err(Error::CountMismatch {
                images: 2,
                labels: 3
            })
        ));
    }

    #[test]
    fn mixture_with_zero_spread_repeats_center() {
        let centers = array![[1.5, -2.0, 0.25]];
        let ds = make_gaussian_mixture(centers.view(), 0.0, 10, 3).unwrap();
        for row in ds.samples.rows() {
            assert_eq!(row.to_vec(), vec![1.5, -2.0, 0.25]);
        }
        assert!(make_gaussian_mixture(Array2::zeros((0, 2)).view(), 1.0, 5, 0).is_err());
    }

    #[test]
    fn mixture_is_reproducible() {
        let centers = array![[-2.0, 0.0], [2.0, 0.0]];
        let a = make_gaussian_mixture(centers.view(), 0.1, 100, 8).unwrap();
        let b = make_gaussian_mixture(centers.view(), 0.1, 100, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_tiles_and_clamps() {
        let samples = array![[0.0, 0.0, 0.0, 0.0], [1.0, -0.07, 0.5, 1.1]];
        let pgm = render_image_grid(samples.view(), 1, 2, None).unwrap();
        let header = b"P5\n4 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let px = &pgm[header.len()..];
        // row 0: tile0 (0,0) tile1 (255,0); row 1: tile0 (0,0) tile1 (128,255)
        assert_eq!(px, &[0, 0, 255, 0, 0, 0, 128, 255]);
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        let samples = Array2::<f64>::zeros((3, 5));
        assert!(render_image_grid(samples.view(), 2, 2, None).is_err());
        let samples = Array2::<f64>::zeros((5, 4));
        assert!(render_image_grid(samples.view(), 2, 2, None).is_err());
        assert!(render_image_grid(samples.view(), 3, 2, Some(3)).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let m = array![
            [0.1, 1.0 / 3.0, -2.5e-300],
            [f64::MAX, 7.0, std::f64::consts::PI]
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_csv(m.view(), &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            m.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn csv_ragged_rows_are_rejected() {
        assert!(parse_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(parse_csv("1,abc\n".as_bytes()).unwrap_err().is_argument());
    }
}
