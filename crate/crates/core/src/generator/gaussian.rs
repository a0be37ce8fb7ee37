use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{GfrError, Result};

/// Eigenvalue floor applied when factorizing a full covariance.
pub const EIGEN_FLOOR: f64 = 1e-6;

/// Covariance structure kept per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Diagonal,
    Full,
}

impl CovarianceKind {
    pub fn name(self) -> &'static str {
        match self {
            CovarianceKind::Diagonal => "diagonal",
            CovarianceKind::Full => "full",
        }
    }
}

/// Mean and covariance of one class's features.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub mean: Array1<f64>,
    /// `d` variances for the diagonal form, `d × d` row-major otherwise.
    pub covariance: Array1<f64>,
    pub sample_count: usize,
    factor: Option<Array2<f64>>,
}

impl Prototype {
    fn new(mean: Array1<f64>, covariance: Array1<f64>, sample_count: usize, kind: CovarianceKind) -> Self {
        let mut p = Prototype {
            mean,
            covariance,
            sample_count,
            factor: None,
        };
        if kind == CovarianceKind::Full {
            p.factor = Some(full_factor(&p.covariance, p.mean.len()));
        }
        p
    }
}

/// `Q diag(sqrt(max(λ, floor)))` for a symmetric `d × d` matrix.
fn full_factor(cov: &Array1<f64>, d: usize) -> Array2<f64> {
    let m = DMatrix::from_row_slice(d, d, cov.as_slice().expect("contiguous"));
    let eig = SymmetricEigen::new(m);
    Array2::from_shape_fn((d, d), |(i, j)| {
        eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(EIGEN_FLOOR).sqrt()
    })
}

/// Per-class Gaussian feature model.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrototypeBank {
    dim: usize,
    kind: CovarianceKind,
    entries: BTreeMap<usize, Prototype>,
}

impl GaussianPrototypeBank {
    pub fn new(dim: usize, kind: CovarianceKind) -> Self {
        GaussianPrototypeBank {
            dim,
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn get(&self, class: usize) -> Option<&Prototype> {
        self.entries.get(&class)
    }

    pub fn classes(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    /// Estimates mean and unbiased covariance for each class in `classes`
    /// from the rows of `features` carrying that label. Existing entries for
    /// other classes are left untouched.
    pub fn fit(&mut self, features: &Array2<f64>, labels: &[usize], classes: &[usize]) -> Result<()> {
        if features.ncols() != self.dim {
            return Err(GfrError::input(format!(
                "features have width {}, bank expects {}",
                features.ncols(),
                self.dim
            )));
        }
        if features.nrows() != labels.len() {
            return Err(GfrError::input("feature rows and labels differ in length"));
        }
        let mut fitted = Vec::with_capacity(classes.len());
        for &c in classes {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if rows.len() < 2 {
                return Err(GfrError::Estimation(format!(
                    "class {c} has {} feature sample(s); at least 2 are needed",
                    rows.len()
                )));
            }
            let x = features.select(Axis(0), &rows);
            let n = rows.len();
            let mean = x.mean_axis(Axis(0)).expect("non-empty");
            let centered = &x - &mean;
            let covariance = match self.kind {
                CovarianceKind::Diagonal => centered.mapv(|v| v * v).sum_axis(Axis(0)) / (n - 1) as f64,
                CovarianceKind::Full => {
                    let m = centered.t().dot(&centered) / (n - 1) as f64;
                    Array1::from_iter(m.iter().copied())
                }
            };
            fitted.push((c, Prototype::new(mean, covariance, n, self.kind)));
        }
        self.entries.extend(fitted);
        Ok(())
    }

    /// Draws `μ + Σ^{1/2} ε` for each label.
    pub fn sample<R: Rng + ?Sized>(&self, labels: &[usize], rng: &mut R) -> Result<Array2<f64>> {
        let protos = labels
            .iter()
            .map(|c| {
                self.entries
                    .get(c)
                    .ok_or_else(|| GfrError::input(format!("class {c} is not covered by the prototype bank")))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = self.dim;
        let mut out = Array2::zeros((labels.len(), d));
        for (mut row, p) in out.axis_iter_mut(Axis(0)).zip(protos) {
            let eps: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let noise = match &p.factor {
                Some(l) => l.dot(&eps),
                None => &eps * &p.covariance.mapv(f64::sqrt),
            };
            row.assign(&(&p.mean + &noise));
        }
        Ok(out)
    }

    /// Rounds every stored value to `f32` precision and refreshes factors.
    pub fn quantize_f32(&mut self) {
        let kind = self.kind;
        for p in self.entries.values_mut() {
            let mean = p.mean.mapv(|v| v as f32 as f64);
            let cov = p.covariance.mapv(|v| v as f32 as f64);
            *p = Prototype::new(mean, cov, p.sample_count, kind);
        }
    }

    fn header(&self) -> String {
        format!("GFR-BANK 1 covariance={} dim={}\n", self.kind.name(), self.dim)
    }

    /// Header line followed by `[class u32][d u32][μ f32 × d][Σ f32 × d or d²]`
    /// records, little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.header().into_bytes();
        for (&c, p) in &self.entries {
            out.extend_from_slice(&(c as u32).to_le_bytes());
            out.extend_from_slice(&(self.dim as u32).to_le_bytes());
            for v in p.mean.iter().chain(p.covariance.iter()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| GfrError::format(path, m.to_string());
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not text"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("GFR-BANK") || parts.next() != Some("1") {
            return Err(bad("not a prototype bank"));
        }
        let mut kind = None;
        let mut dim = None;
        for p in parts {
            match p.split_once('=') {
                Some(("covariance", "diagonal")) => kind = Some(CovarianceKind::Diagonal),
                Some(("covariance", "full")) => kind = Some(CovarianceKind::Full),
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                _ => return Err(bad("unrecognized header field")),
            }
        }
        let (kind, dim) = kind.zip(dim).ok_or_else(|| bad("incomplete header"))?;
        let mut bank = GaussianPrototypeBank::new(dim, kind);
        let cov_len = match kind {
            CovarianceKind::Diagonal => dim,
            CovarianceKind::Full => dim * dim,
        };
        let record = 8 + 4 * (dim + cov_len);
        let body = &bytes[nl + 1..];
        if !body.len().is_multiple_of(record) {
            return Err(bad("truncated record"));
        }
        let f32_at = |chunk: &[u8], i: usize| {
            f32::from_le_bytes(chunk[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as f64
        };
        for chunk in body.chunks(record) {
            let class = u32::from_le_bytes(chunk[..4].try_into().expect("4 bytes")) as usize;
            let d = u32::from_le_bytes(chunk[4..8].try_into().expect("4 bytes")) as usize;
            if d != dim {
                return Err(bad("record dimension disagrees with header"));
            }
            let mean = (0..dim).map(|i| f32_at(chunk, i)).collect();
            let cov = (0..cov_len).map(|i| f32_at(chunk, dim + i)).collect();
            bank.entries.insert(class, Prototype::new(mean, cov, 0, kind));
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| GfrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GfrError::io(path, e))?;
        Self::decode(path, &bytes)
    }
}
