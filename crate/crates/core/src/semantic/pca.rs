use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{occupancy, FeatureSet, FeatureSource};
use crate::error::{Error, Result};
use crate::field::VoxelField;

/// Top principal directions of a feature cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `m` orthonormal rows of length `D`, by descending variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// `components · (feature - mean)`.
    pub fn project(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "feature has {} dims, basis expects {}",
                feature.len(),
                self.input_dim()
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|row| row.iter().zip(feature.iter().zip(&self.mean)).map(|(c, (f, mu))| c * (f - mu)).sum())
            .collect())
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Result<Vec<f64>> {
        if coords.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} coordinates, got {}",
                self.output_dim(),
                coords.len()
            )));
        }
        let mut out = self.mean.clone();
        for (row, c) in self.components.iter().zip(coords) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += c * r;
            }
        }
        Ok(out)
    }
}

/// Fits the `m` leading principal components of `features`.
///
/// Components are eigenvectors of the sample covariance sorted by descending
/// eigenvalue; each is signed so that its largest-magnitude entry is positive.
pub fn pca_fit(features: &FeatureSet, m: usize) -> Result<PcaBasis> {
    let d = features.dim();
    let n = features.len();
    if m == 0 || m > d {
        return Err(Error::InvalidInput(format!("cannot keep {m} components of {d}-dimensional features")));
    }
    if n < m.max(2) {
        return Err(Error::InsufficientData(format!("PCA to {m} dims needs at least {} samples, got {n}", m.max(2))));
    }
    let mut mean = vec![0.0; d];
    for v in features.iter() {
        for (mu, x) in mean.iter_mut().zip(v) {
            *mu += x;
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for v in features.iter() {
        for (c, (x, mu)) in centered.iter_mut().zip(v.iter().zip(&mean)) {
            *c = x - mu;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(m);
    let mut explained_variance = Vec::with_capacity(m);
    for &k in order.iter().take(m) {
        let mut row: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = row.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(row);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(PcaBasis { mean, components, explained_variance })
}

/// Three rows for feature previews: the leading principal directions of the
/// occupied voxels' features (at most `cap` of them, evenly strided), padded
/// with zero rows when fewer directions exist.
pub fn preview_basis(field: &VoxelField, occupancy_alpha: f64, cap: usize) -> Result<[Vec<f64>; 3]> {
    let m = field.feature_dim();
    if m == 0 {
        return Err(Error::MissingFeatures("scene has no feature lattice".into()));
    }
    let occupied: Vec<usize> = occupancy(field, occupancy_alpha).iter_ones().collect();
    let stride = occupied.len().div_ceil(cap.max(1)).max(1);
    let mut set = FeatureSet::new(m, FeatureSource::Voxels);
    let mut buf = vec![0.0; m];
    for &i in occupied.iter().step_by(stride) {
        field.node_feature(i, &mut buf);
        set.push(&buf)?;
    }
    let mut rows = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    if set.len() >= m.clamp(2, 3) {
        let basis = pca_fit(&set, m.min(3))?;
        for (row, c) in rows.iter_mut().zip(basis.components) {
            *row = c;
        }
    }
    Ok(rows)
}
