//! Correlation-distance representational dissimilarity matrices.

use crate::error::{Error, Result};
use crate::ingest::StimulusSet;
use crate::network::LayerFeatures;

/// Symmetric `N x N` dissimilarity matrix with an exactly zero diagonal,
/// indexed in the order of `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    ids: Vec<String>,
    data: Vec<f64>,
}

const CLAMP_SLACK: f64 = 1e-12;

impl Rdm {
    /// Build from a dense row-major matrix. The caller guarantees symmetry
    /// and zero diagonal; use [`Rdm::validated`] for untrusted input.
    pub(crate) fn from_parts(ids: Vec<String>, data: Vec<f64>) -> Self {
        debug_assert_eq!(ids.len() * ids.len(), data.len());
        Rdm { ids, data }
    }

    /// Check symmetry and zero diagonal. Deviations up to `1e-6` are
    /// repaired (averaged / zeroed) with a warning; beyond that it is an error
    /// naming the offending cell.
    pub fn validated(ids: Vec<String>, mut data: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if data.len() != n * n {
            return Err(Error::Input(format!(
                "RDM with {n} ids needs {} values, got {}",
                n * n,
                data.len()
            )));
        }
        check_unique(&ids)?;
        let mut repaired = false;
        for i in 0..n {
            let d = data[i * n + i];
            if d.abs() > 1e-6 || !d.is_finite() {
                return Err(Error::Input(format!("nonzero diagonal at ({0}, {0}) [{1}]: {d}", i, ids[i])));
            }
            if d != 0.0 {
                repaired |= d.abs() > 1e-9;
                data[i * n + i] = 0.0;
            }
            for j in i + 1..n {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::Input(format!("non-finite entry at ({i}, {j})")));
                }
                let diff = (a - b).abs();
                if diff > 1e-6 {
                    return Err(Error::Input(format!(
                        "asymmetric RDM at cell ({i}, {j}) [{} / {}]: {a} vs {b}",
                        ids[i], ids[j]
                    )));
                }
                if diff > 0.0 {
                    repaired |= diff > 1e-9;
                    let m = 0.5 * (a + b);
                    data[i * n + j] = m;
                    data[j * n + i] = m;
                }
            }
        }
        if repaired {
            log::warn!("RDM symmetry/diagonal deviations above 1e-9 were repaired");
        }
        Ok(Rdm { ids, data })
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ids.len() + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Input(format!("duplicate stimulus id '{id}'")));
        }
    }
    Ok(())
}

/// Centered, unit-norm copies of each row, or the indices of zero-variance rows.
fn normalized_rows(rows: &[f64], n: usize, dim: usize) -> std::result::Result<Vec<f64>, Vec<usize>> {
    let mut out = vec![0.0; n * dim];
    let mut bad = Vec::new();
    for i in 0..n {
        let row = &rows[i * dim..(i + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let dst = &mut out[i * dim..(i + 1) * dim];
        for (d, v) in dst.iter_mut().zip(row) {
            *d = v - mean;
        }
        let norm = dst.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            bad.push(i);
            continue;
        }
        dst.iter_mut().for_each(|v| *v /= norm);
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(bad)
    }
}

/// `1 - Pearson(row_i, row_j)` for every pair of rows of an `n x dim` matrix.
pub fn rdm_from_rows(rows: &[f64], dim: usize, ids: &[String]) -> Result<Rdm> {
    let n = ids.len();
    if dim < 2 {
        return Err(Error::Input(format!("correlation distance needs feature dim >= 2, got {dim}")));
    }
    if rows.len() != n * dim {
        return Err(Error::Input(format!(
            "{} feature values do not form {n} rows of {dim}",
            rows.len()
        )));
    }
    check_unique(ids)?;
    let z = normalized_rows(rows, n, dim).map_err(|bad| {
        let names: Vec<&str> = bad.iter().map(|&i| ids[i].as_str()).collect();
        Error::Input(format!("zero-variance response for stimuli: {}", names.join(", ")))
    })?;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let zi = &z[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let zj = &z[j * dim..(j + 1) * dim];
            let r: f64 = zi.iter().zip(zj).map(|(a, b)| a * b).sum();
            let mut d = 1.0 - r;
            if d < 0.0 && d > -CLAMP_SLACK {
                d = 0.0;
            } else if d > 2.0 && d < 2.0 + CLAMP_SLACK {
                d = 2.0;
            }
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(Rdm::from_parts(ids.to_vec(), data))
}

pub fn rdm_from_features(features: &LayerFeatures, ids: &[String]) -> Result<Rdm> {
    if features.num_stimuli() != ids.len() {
        return Err(Error::Input(format!(
            "{} feature rows but {} stimulus ids",
            features.num_stimuli(),
            ids.len()
        )));
    }
    rdm_from_rows(features.matrix.data(), features.dim(), ids)
}

/// Correlation distance between flattened RGB images.
pub fn pixel_rdm(stimuli: &StimulusSet) -> Result<Rdm> {
    let n = stimuli.ids.len();
    let dim = if n == 0 { 0 } else { stimuli.images.len() / n };
    rdm_from_rows(stimuli.images.data(), dim, &stimuli.ids)
}

/// Entrywise mean of RDMs that share the same id order.
pub fn average_rdms(rdms: &[Rdm]) -> Result<Rdm> {
    let first = rdms
        .first()
        .ok_or_else(|| Error::Input("cannot average zero RDMs".into()))?;
    for (k, r) in rdms.iter().enumerate().skip(1) {
        if r.ids != first.ids {
            return Err(Error::Input(format!(
                "RDM {k} has a different stimulus id order than RDM 0"
            )));
        }
    }
    let m = rdms.len() as f64;
    let mut data = vec![0.0; first.data.len()];
    for r in rdms {
        for (a, b) in data.iter_mut().zip(&r.data) {
            *a += b;
        }
    }
    data.iter_mut().for_each(|v| *v /= m);
    Ok(Rdm::from_parts(first.ids.clone(), data))
}

/// Row-major strict upper triangle: (0,1), (0,2), ..., (1,2), ...
pub fn upper_triangle(rdm: &Rdm) -> Vec<f64> {
    let n = rdm.size();
    let mut v = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        v.extend_from_slice(&rdm.data[i * n + i + 1..(i + 1) * n]);
    }
    v
}

/// Inverse of [`upper_triangle`].
pub fn from_upper_triangle(ids: Vec<String>, upper: &[f64]) -> Result<Rdm> {
    let n = ids.len();
    if upper.len() != n * n.saturating_sub(1) / 2 {
        return Err(Error::Input(format!(
            "upper triangle of length {} does not fit {n} ids",
            upper.len()
        )));
    }
    let mut data = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = upper[k];
            data[j * n + i] = upper[k];
            k += 1;
        }
    }
    Rdm::validated(ids, data)
}
