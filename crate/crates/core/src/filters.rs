//! Conv1 filter inspection: spectral peakedness and grid export.

use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::NetworkState;
use crate::rules::Rule;
use crate::stats::{mean, sample_sd};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peakedness {
    pub score: f64,
    /// The channel-averaged filter was constant; `score` is set to 1.
    pub degenerate: bool,
}

/// Magnitudes of the 2D DFT of a row-major `k x k` map.
fn dft2_magnitude(map: &[f64], k: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let fft = planner.plan_fft_forward(k);
    let mut buf: Vec<Complex<f64>> = map.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(k) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); k];
    for x in 0..k {
        for y in 0..k {
            col[y] = buf[y * k + x];
        }
        fft.process(&mut col);
        for y in 0..k {
            buf[y * k + x] = col[y];
        }
    }
    buf.iter().map(|c| c.norm()).collect()
}

/// Peak over mean of the non-DC DFT magnitudes of the channel-averaged,
/// mean-removed `[C, k, k]` filter.
pub fn gabor_peakedness(filter: &Tensor) -> Result<Peakedness> {
    let s = filter.shape();
    if s.len() != 3 || s[1] != s[2] || s[1] < 2 {
        return Err(Error::Input(format!("expected a [C, k, k] filter with k >= 2, got {s:?}")));
    }
    let (c, k) = (s[0], s[1]);
    let mut map = vec![0.0; k * k];
    for ch in 0..c {
        for (m, v) in map.iter_mut().zip(&filter.data()[ch * k * k..(ch + 1) * k * k]) {
            *m += v;
        }
    }
    let mu = map.iter().sum::<f64>() / (k * k) as f64;
    map.iter_mut().for_each(|v| *v = *v / c as f64 - mu / c as f64);
    let mag = dft2_magnitude(&map, k, &mut FftPlanner::new());
    let rest = &mag[1..];
    let peak = rest.iter().cloned().fold(0.0, f64::max);
    let avg = rest.iter().sum::<f64>() / rest.len() as f64;
    // rounding noise of an exactly constant map stays far below this
    let scale = filter.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
    if avg <= 1e-12 * scale.max(f64::MIN_POSITIVE) * (k * k) as f64 || avg == 0.0 {
        return Ok(Peakedness {
            score: 1.0,
            degenerate: true,
        });
    }
    Ok(Peakedness {
        score: peak / avg,
        degenerate: false,
    })
}

pub const GRID_FILTERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterScore {
    pub rule: Rule,
    pub scores: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub score: FilterScore,
    /// First (up to) 16 conv1 filters, each min-max normalized to `[0, 1]`,
    /// shape `[F, C, k, k]`.
    pub grid: Tensor,
}

fn conv1_filter(weight: &Tensor, o: usize) -> Result<Tensor> {
    let s = weight.shape();
    let per = s[1] * s[2] * s[3];
    Tensor::from_vec(&[s[1], s[2], s[3]], weight.data()[o * per..(o + 1) * per].to_vec())
}

pub fn summarize_filters(state: &NetworkState, rule: Rule) -> Result<FilterSummary> {
    let w = &state.convs[0].weight;
    let [o, c, k, _] = w.dims4("conv1 weight")?;
    let mut scores = Vec::with_capacity(o);
    let mut degenerate = Vec::with_capacity(o);
    for i in 0..o {
        let p = gabor_peakedness(&conv1_filter(w, i)?)?;
        scores.push(p.score);
        degenerate.push(p.degenerate);
    }
    let f = o.min(GRID_FILTERS);
    let per = c * k * k;
    let mut grid = Vec::with_capacity(f * per);
    for i in 0..f {
        let vals = &w.data()[i * per..(i + 1) * per];
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        grid.extend(vals.iter().map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 }));
    }
    let std = if scores.len() > 1 { sample_sd(&scores) } else { 0.0 };
    Ok(FilterSummary {
        score: FilterScore {
            rule,
            mean: mean(&scores),
            std,
            scores,
            degenerate,
        },
        grid: Tensor::from_vec(&[f, c, k, k], grid)?,
    })
}

/// `rule,seed,filter,peakedness,degenerate` rows.
pub fn filter_scores_csv(rows: &[(FilterScore, u64)]) -> String {
    let mut out = String::from("rule,seed,filter,peakedness,degenerate\n");
    for (s, seed) in rows {
        for (i, (v, d)) in s.scores.iter().zip(&s.degenerate).enumerate() {
            out.push_str(&format!("{},{seed},{i},{v},{d}\n", s.rule));
        }
    }
    out
}

/// Grid as CSV with one row per (filter, channel, row): the columns are
/// `filter,channel,row` followed by the `k` normalized values.
pub fn write_filter_grid_csv(grid: &Tensor, path: &Path) -> Result<()> {
    let [f, c, k, _] = grid.dims4("filter grid")?;
    let mut out = String::from("filter,channel,row");
    for x in 0..k {
        out.push_str(&format!(",c{x}"));
    }
    out.push('\n');
    for i in 0..f {
        for ch in 0..c {
            for y in 0..k {
                out.push_str(&format!("{i},{ch},{y}"));
                let base = ((i * c + ch) * k + y) * k;
                for v in &grid.data()[base..base + k] {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_he_normal, Architecture};
    use crate::testutil::rand_tensor;

    #[test]
    fn constant_filter_is_degenerate() {
        let p = gabor_peakedness(&Tensor::filled(&[3, 3, 3], 0.7)).unwrap();
        assert_eq!(p, Peakedness { score: 1.0, degenerate: true });
        assert!(gabor_peakedness(&Tensor::zeros(&[1, 1, 1])).is_err());
    }

    #[test]
    fn sinusoid_concentrates_in_two_bins() {
        let k = 8;
        let mut d = vec![0.0; k * k];
        for y in 0..k {
            for x in 0..k {
                d[y * k + x] = (std::f64::consts::TAU * (2.0 * x as f64 + y as f64) / k as f64).cos();
            }
        }
        let p = gabor_peakedness(&Tensor::from_vec(&[1, k, k], d).unwrap()).unwrap();
        assert!((p.score - 63.0 / 2.0).abs() < 1e-9, "{}", p.score);
    }

    #[test]
    fn scale_and_shift_invariant() {
        let f = rand_tensor(&[3, 5, 5], 2);
        let a = gabor_peakedness(&f).unwrap().score;
        let g = f.map(|v| 3.5 * v + 2.0);
        assert!((gabor_peakedness(&g).unwrap().score - a).abs() < 1e-10);
    }

    #[test]
    fn grid_is_normalized() {
        let a = Architecture {
            in_channels: 3,
            conv_widths: [20, 4, 4],
            fc_width: 4,
            num_classes: 10,
        };
        let s = init_he_normal(&a, 1).unwrap();
        let sum = summarize_filters(&s, Rule::Random).unwrap();
        assert_eq!(sum.grid.shape(), &[16, 3, 3, 3]);
        assert!(sum.grid.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(sum.score.scores.len(), 20);
        for i in 0..16 {
            let block = &sum.grid.data()[i * 27..(i + 1) * 27];
            assert!(block.contains(&0.0) && block.contains(&1.0));
        }
    }
}
