//! Representation similarity (SVCCA), layer-wise forgetting tables and
//! feature dumps for embedding plots.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, Array4, Axis};
use rand::Rng;

use crate::error::{GfrError, Result};
use crate::generator::FeatureGenerator;
use crate::model::{FeatureExtractor, TapPoint};

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.99;
pub const DEFAULT_PROBE_CAP: usize = 2000;

/// Activations of one layer over a probe set, one row per datapoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub values: Array2<f64>,
    pub layer: TapPoint,
    pub source: String,
    pub probe: String,
}

impl ActivationMatrix {
    /// More units than datapoints makes the similarity unreliable.
    pub fn is_underdetermined(&self) -> bool {
        self.values.nrows() <= self.values.ncols()
    }
}

/// Similarity of two representations plus the retained ranks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaResult {
    pub similarity: f64,
    pub dims_a: usize,
    pub dims_b: usize,
    pub threshold: f64,
}

/// Evaluation-mode activations at the named taps. Spatial maps are average
/// pooled to `n × c` when `pooled`, otherwise flattened to `(n·h·w) × c`.
pub fn collect_activations(
    extractor: &FeatureExtractor,
    taps: &[&str],
    batch: &Array4<f64>,
    pooled: bool,
    source: &str,
    probe: &str,
) -> Result<Vec<ActivationMatrix>> {
    let points = taps
        .iter()
        .map(|t| {
            t.parse::<TapPoint>()
                .map_err(|_| GfrError::input(format!("unknown tap `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let values = extractor.activations(batch, &points, pooled)?;
    Ok(points
        .into_iter()
        .zip(values)
        .map(|(layer, values)| ActivationMatrix {
            values,
            layer,
            source: source.to_string(),
            probe: probe.to_string(),
        })
        .collect())
}

/// Orthonormal basis of the leading left singular vectors of the centered
/// matrix that capture at least `threshold` of its variance.
fn reduced_basis(x: &Array2<f64>, threshold: f64, side: &str) -> Result<DMatrix<f64>> {
    let (n, p) = x.dim();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let m = DMatrix::from_row_iterator(n, p, centered.iter().copied());
    let svd = m.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if s_max == 0.0 || s_max <= 1e-12 * scale * (n as f64).sqrt() {
        return Err(GfrError::Analysis(format!("{side} activations have rank 0 after centering")));
    }
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > 1e-10 * s_max)
        .collect();
    let total: f64 = kept.iter().map(|&i| svd.singular_values[i].powi(2)).sum();
    let mut acc = 0.0;
    let mut k = 0;
    for &i in &kept {
        acc += svd.singular_values[i].powi(2);
        k += 1;
        if acc >= threshold * total * (1.0 - 1e-12) {
            break;
        }
    }
    Ok(DMatrix::from_fn(n, k, |r, c| u[(r, kept[c])]))
}

/// SVCCA similarity: centered, SVD-truncated to `threshold` of the variance
/// on each side, then the mean canonical correlation between the reduced
/// subspaces.
pub fn svcca_similarity(a: &Array2<f64>, b: &Array2<f64>, threshold: f64) -> Result<CcaResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(GfrError::Analysis(format!("variance threshold {threshold} outside (0, 1]")));
    }
    if a.nrows() != b.nrows() {
        return Err(GfrError::Analysis(format!(
            "activation matrices have {} and {} datapoints",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.nrows() < 2 || a.ncols() == 0 || b.ncols() == 0 {
        return Err(GfrError::Analysis("need at least two datapoints and one unit per side".into()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(GfrError::Analysis("activations contain non-finite values".into()));
    }
    let qa = reduced_basis(a, threshold, "first")?;
    let qb = reduced_basis(b, threshold, "second")?;
    let cross = qa.transpose() * &qb;
    let rho = cross.singular_values();
    let count = qa.ncols().min(qb.ncols());
    let mut sorted: Vec<f64> = rho.iter().copied().collect();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let mean = sorted[..count].iter().sum::<f64>() / count as f64;
    Ok(CcaResult {
        similarity: mean.clamp(0.0, 1.0),
        dims_a: qa.ncols(),
        dims_b: qb.ncols(),
        threshold,
    })
}

/// One cell of a layer-wise forgetting table: similarity between the
/// features of the model after task `t` and after task `t_prime` on task
/// `t_prime`'s probe data.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaCell {
    pub layer: TapPoint,
    pub t: usize,
    pub t_prime: usize,
    pub result: CcaResult,
}

/// Similarity table over every layer and every pair `t′ ≤ t`.
///
/// `extractors[i]` is the model after task `i + 1`; `probes[i]` is task
/// `i + 1`'s probe batch.
pub fn forgetting_curves(
    extractors: &[FeatureExtractor],
    probes: &[Array4<f64>],
    taps: &[TapPoint],
    pooled: bool,
    threshold: f64,
) -> Result<Vec<CcaCell>> {
    if probes.len() < extractors.len() {
        return Err(GfrError::Analysis(format!(
            "{} models but only {} probe sets",
            extractors.len(),
            probes.len()
        )));
    }
    let mut cells = Vec::new();
    for (ti, current) in extractors.iter().enumerate() {
        for (pi, reference) in extractors[..=ti].iter().enumerate() {
            let probe = &probes[pi];
            let a = current.activations(probe, taps, pooled)?;
            let b = reference.activations(probe, taps, pooled)?;
            for ((layer, x), y) in taps.iter().zip(&a).zip(&b) {
                cells.push(CcaCell {
                    layer: *layer,
                    t: ti + 1,
                    t_prime: pi + 1,
                    result: svcca_similarity(x, y, threshold)?,
                });
            }
        }
    }
    Ok(cells)
}

pub const CCA_CSV_HEADER: &str = "layer,t,t_prime,similarity,dims_a,dims_b";

pub fn cca_csv(cells: &[CcaCell]) -> String {
    let mut out = format!("{CCA_CSV_HEADER}\n");
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.layer, c.t, c.t_prime, c.result.similarity, c.result.dims_a, c.result.dims_b
        )
        .expect("write to string");
    }
    out
}

/// Where an exported feature came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Real,
    Generated,
}

impl FeatureSource {
    pub fn tag(self) -> u8 {
        match self {
            FeatureSource::Real => 0,
            FeatureSource::Generated => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(FeatureSource::Real),
            1 => Some(FeatureSource::Generated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub source: FeatureSource,
    pub class: u32,
    pub values: Vec<f32>,
}

/// Up to `count` real features per requested class (first occurrences) and
/// `count` generated features per class.
pub fn export_features<R: Rng + ?Sized>(
    real: Option<(&Array2<f64>, &[usize])>,
    generator: Option<&FeatureGenerator>,
    classes: &[usize],
    count: usize,
    rng: &mut R,
) -> Result<Vec<FeatureRecord>> {
    let mut records = Vec::new();
    if let Some((features, labels)) = real {
        for &c in classes {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).take(count).collect();
            if rows.is_empty() && count > 0 {
                return Err(GfrError::input(format!("no real features for class {c}")));
            }
            records.extend(rows.into_iter().map(|i| FeatureRecord {
                source: FeatureSource::Real,
                class: c as u32,
                values: features.row(i).iter().map(|&v| v as f32).collect(),
            }));
        }
    }
    if let Some(gen) = generator {
        for &c in classes {
            let samples = gen.sample(&vec![c; count], rng)?;
            records.extend(samples.rows().into_iter().map(|r| FeatureRecord {
                source: FeatureSource::Generated,
                class: c as u32,
                values: r.iter().map(|&v| v as f32).collect(),
            }));
        }
    }
    Ok(records)
}

/// `[tag u8][class u32 LE][d × f32 LE]` per record.
pub fn encode_feature_dump(records: &[FeatureRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.push(r.source.tag());
        out.extend_from_slice(&r.class.to_le_bytes());
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_feature_dump(path: &Path, bytes: &[u8], dim: usize) -> Result<Vec<FeatureRecord>> {
    let width = 5 + 4 * dim;
    if !bytes.len().is_multiple_of(width) {
        return Err(GfrError::format(path, format!("length is not a multiple of the {width}-byte record")));
    }
    bytes
        .chunks(width)
        .map(|chunk| {
            let source = FeatureSource::from_tag(chunk[0])
                .ok_or_else(|| GfrError::format(path, format!("unknown source tag {}", chunk[0])))?;
            let class = u32::from_le_bytes(chunk[1..5].try_into().expect("4 bytes"));
            let values = chunk[5..]
                .chunks(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            Ok(FeatureRecord { source, class, values })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageGeometry;
    use crate::generator::{CovarianceKind, GaussianPrototypeBank};
    use crate::model::Architecture;
    use crate::rng::rng_from_seed;
    use ndarray::{array, Array};
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_simple_fn((n, p), || rng.sample(StandardNormal))
    }

    #[test]
    fn self_similarity_is_one() {
        let a = gaussian(500, 12, 1);
        for threshold in [0.5, 0.99, 1.0] {
            let r = svcca_similarity(&a, &a, threshold).unwrap();
            assert!((r.similarity - 1.0).abs() < 1e-6, "{threshold}: {}", r.similarity);
        }
    }

    #[test]
    fn invariant_to_invertible_maps_and_scaling() {
        let a = gaussian(800, 10, 2);
        let q = gaussian(10, 10, 3) + Array2::<f64>::eye(10) * 4.0;
        let b = a.dot(&q);
        let r = svcca_similarity(&a, &b, 1.0).unwrap();
        assert!((r.similarity - 1.0).abs() < 1e-3);
        let scales = Array::from_iter((0..10).map(|i| 0.1 + i as f64));
        let c = &a * &scales;
        assert!((svcca_similarity(&a, &c, 1.0).unwrap().similarity - 1.0).abs() < 1e-3);
    }

    #[test]
    fn independent_matrices_are_dissimilar() {
        let a = gaussian(2000, 20, 4);
        let b = gaussian(2000, 20, 5);
        let r = svcca_similarity(&a, &b, DEFAULT_VARIANCE_THRESHOLD).unwrap();
        assert!(r.similarity < 0.3, "{}", r.similarity);
    }

    #[test]
    fn symmetric_and_bounded() {
        let a = gaussian(300, 8, 6);
        let b = &a.slice(ndarray::s![.., ..5]).to_owned() + &(gaussian(300, 5, 7) * 0.5);
        let ab = svcca_similarity(&a, &b, 0.99).unwrap();
        let ba = svcca_similarity(&b, &a, 0.99).unwrap();
        assert!((ab.similarity - ba.similarity).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&ab.similarity));
        assert_eq!((ab.dims_a, ab.dims_b), (ba.dims_b, ba.dims_a));
    }

    #[test]
    fn constant_input_is_rank_zero() {
        let a = Array2::from_elem((10, 3), 2.5);
        let b = gaussian(10, 3, 8);
        assert!(matches!(svcca_similarity(&a, &b, 0.99), Err(GfrError::Analysis(_))));
        assert!(svcca_similarity(&b, &b, 0.0).is_err());
        assert!(svcca_similarity(&b, &gaussian(9, 3, 1), 0.99).is_err());
    }

    #[test]
    fn truncation_keeps_the_dominant_directions() {
        let mut a = gaussian(400, 6, 9);
        for j in 3..6 {
            a.column_mut(j).mapv_inplace(|v| v * 1e-3);
        }
        let r = svcca_similarity(&a, &a, 0.99).unwrap();
        assert_eq!(r.dims_a, 3);
    }

    fn tiny_extractor(seed: u64) -> FeatureExtractor {
        let arch = Architecture::small_cnn(ImageGeometry::new(16, 16, 3), [3, 4, 5, 6]);
        FeatureExtractor::new(arch, TapPoint::Feature, &mut rng_from_seed(seed))
    }

    fn probe(n: usize, seed: u64) -> Array4<f64> {
        let mut rng = rng_from_seed(seed);
        Array4::from_shape_simple_fn((n, 3, 16, 16), || rng.sample(StandardNormal))
    }

    #[test]
    fn activation_shapes_and_errors() {
        let f = tiny_extractor(10);
        let x = probe(7, 11);
        let acts = collect_activations(&f, &["block1", "block4", "feature"], &x, true, "m", "p").unwrap();
        assert_eq!(acts[0].values.dim(), (7, 3));
        assert_eq!(acts[1].values.dim(), (7, 6));
        assert_eq!(acts[2].values.dim(), (7, 6));
        let flat = collect_activations(&f, &["block1"], &x, false, "m", "p").unwrap();
        assert_eq!(flat[0].values.dim(), (7 * 8 * 8, 3));
        assert_eq!(collect_activations(&f, &["block2"], &x, true, "m", "p").unwrap(), collect_activations(&f, &["block2"], &x, true, "m", "p").unwrap());
        assert!(matches!(collect_activations(&f, &["block9"], &x, true, "m", "p"), Err(GfrError::Input(_))));
    }

    #[test]
    fn diagonal_of_the_table_is_one() {
        let models = vec![tiny_extractor(12), tiny_extractor(13)];
        let probes = vec![probe(40, 14), probe(40, 15)];
        let taps = [TapPoint::Block(1), TapPoint::Feature];
        let cells = forgetting_curves(&models, &probes, &taps, true, 0.99).unwrap();
        assert_eq!(cells.len(), 3 * taps.len());
        for c in cells.iter().filter(|c| c.t == c.t_prime) {
            assert!((c.result.similarity - 1.0).abs() < 1e-6);
        }
        let csv = cca_csv(&cells);
        assert!(csv.starts_with(CCA_CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + cells.len());
    }

    #[test]
    fn export_counts_and_degenerate_generator() {
        let mut bank = GaussianPrototypeBank::new(2, CovarianceKind::Diagonal);
        let feats = array![[1.0, 1.0], [1.0, 1.0], [3.0, 0.0], [3.0, 0.0]];
        bank.fit(&feats, &[0, 0, 1, 1], &[0, 1]).unwrap();
        let gen = FeatureGenerator::Gaussian(bank);
        let real: Array2<f64> = gaussian(400, 2, 16);
        let labels: Vec<usize> = (0..400).map(|i| i % 2).collect();
        let mut rng = rng_from_seed(17);
        let recs = export_features(Some((&real, &labels)), Some(&gen), &[0, 1], 100, &mut rng).unwrap();
        assert_eq!(recs.len(), 400);
        let gen_c1: Vec<_> = recs
            .iter()
            .filter(|r| r.source == FeatureSource::Generated && r.class == 1)
            .collect();
        assert!(gen_c1.iter().all(|r| r.values == vec![3.0, 0.0]));
        assert!(export_features(None, Some(&gen), &[2], 1, &mut rng).is_err());
        let bytes = encode_feature_dump(&recs);
        assert_eq!(bytes.len(), 400 * (5 + 8));
        assert_eq!(decode_feature_dump(Path::new("f"), &bytes, 2).unwrap(), recs);
    }
}
