//! Interaction-gap fitting: the saturation breakpoint on the CPU axis and the
//! two per-regime planes `delta = k_c/f_c + k_g/f_g + b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FitError;
use crate::devicesim::DeltaCoefficients;
use crate::types::Frequency;

/// Fraction of single-branch SSE the best split must remove to be trusted.
pub const MIN_SPLIT_IMPROVEMENT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaSample {
    pub f_c: f64,
    pub f_g: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakpointFit {
    /// Highest CPU level of the unsaturated side.
    pub breakpoint: Frequency,
    pub sse_two_branch: f64,
    pub sse_single_branch: f64,
    /// The best split removed less than 5% of the single-branch SSE.
    pub low_confidence: bool,
}

/// Rows are scaled by `f_c`: jitter is multiplicative and the gap grows as
/// `1/f_c`, so unscaled residuals at the lowest CPU levels would swamp the
/// rest of the sweep.
fn design(samples: &[&DeltaSample]) -> (DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_fn(samples.len(), 3, |r, c| {
        let s = samples[r];
        match c {
            0 => 1.0,
            1 => s.f_c / s.f_g,
            _ => s.f_c,
        }
    });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.delta * s.f_c));
    (a, y)
}

/// Minimum-norm least squares; tolerates rank deficiency.
fn lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-12 * a.nrows().max(a.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let x = svd.solve(y, eps).expect("u and v were computed");
    (x, rank)
}

fn sse(a: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (a * x - y).norm_squared()
}

fn branch_sse(samples: &[&DeltaSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let (a, y) = design(samples);
    let (x, _) = lstsq(&a, &y);
    sse(&a, &y, &x)
}

fn distinct(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite frequency"));
    v.dedup();
    v
}

/// Picks the CPU split minimizing total two-branch (f_c-weighted) SSE.
///
/// Candidates are the sampled CPU levels that leave at least two levels on
/// each side; with exactly three levels the middle one is the only choice.
/// Equal SSE resolves to the lower frequency, and a split that does not
/// beat the single-branch fit by 5% falls back to the lowest candidate.
pub fn detect_breakpoint(samples: &[DeltaSample]) -> Result<BreakpointFit, FitError> {
    let levels = distinct(samples.iter().map(|s| s.f_c).collect());
    if levels.len() < 3 {
        return Err(FitError::CannotSplit {
            cpu_levels: levels.len(),
        });
    }
    let candidates: Vec<usize> = if levels.len() == 3 {
        vec![1]
    } else {
        (1..=levels.len() - 3).collect()
    };
    let all: Vec<&DeltaSample> = samples.iter().collect();
    let single = branch_sse(&all);
    let scale = samples
        .iter()
        .map(|s| (s.delta * s.f_c).powi(2))
        .sum::<f64>();
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);

    let mut best: Option<(usize, f64)> = None;
    for &i in &candidates {
        let cut = levels[i];
        let (lo, hi): (Vec<&DeltaSample>, Vec<&DeltaSample>) =
            samples.iter().partition(|s| s.f_c <= cut);
        let total = branch_sse(&lo) + branch_sse(&hi);
        match best {
            Some((_, b)) if total >= b - tol => {}
            _ => best = Some((i, total)),
        }
    }
    let (mut idx, sse_two) = best.expect("at least one candidate");
    let low_confidence = single <= tol || sse_two > (1.0 - MIN_SPLIT_IMPROVEMENT) * single;
    if low_confidence {
        idx = candidates[0];
    }
    Ok(BreakpointFit {
        breakpoint: Frequency::new(levels[idx]).expect("sampled frequency is positive"),
        sse_two_branch: sse_two,
        sse_single_branch: single,
        low_confidence,
    })
}

fn fit_branch(
    samples: &[&DeltaSample],
    branch: &'static str,
) -> Result<DeltaCoefficients, FitError> {
    let cpu = distinct(samples.iter().map(|s| s.f_c).collect());
    let gpu = distinct(samples.iter().map(|s| s.f_g).collect());
    if samples.len() < 3 || cpu.len() < 2 || gpu.len() < 2 {
        return Err(FitError::UnderdeterminedBranch {
            branch,
            samples: samples.len(),
            cpu_levels: cpu.len(),
            gpu_levels: gpu.len(),
        });
    }
    let (a, y) = design(samples);
    let (x, rank) = lstsq(&a, &y);
    if rank < 3 {
        return Err(FitError::UnderdeterminedBranch {
            branch,
            samples: samples.len(),
            cpu_levels: cpu.len(),
            gpu_levels: gpu.len(),
        });
    }
    Ok(DeltaCoefficients {
        k_c: x[0],
        k_g: x[1],
        b: x[2],
    })
}

/// Fits the unsaturated (`f_c <= breakpoint`) and saturated planes.
pub fn fit_delta(
    samples: &[DeltaSample],
    breakpoint: Frequency,
) -> Result<(DeltaCoefficients, DeltaCoefficients), FitError> {
    let (lo, hi): (Vec<&DeltaSample>, Vec<&DeltaSample>) =
        samples.iter().partition(|s| s.f_c <= breakpoint.ghz());
    Ok((
        fit_branch(&lo, "unsaturated")?,
        fit_branch(&hi, "saturated")?,
    ))
}

/// Sum of squared `f_c`-weighted residuals of a fitted piecewise model.
pub fn piecewise_sse(
    samples: &[DeltaSample],
    breakpoint: Frequency,
    uns: &DeltaCoefficients,
    sat: &DeltaCoefficients,
) -> f64 {
    samples
        .iter()
        .map(|s| {
            let m = if s.f_c <= breakpoint.ghz() { uns } else { sat };
            ((m.eval(s.f_c, s.f_g) - s.delta) * s.f_c).powi(2)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_samples(cpu: &[f64], gpu: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<DeltaSample> {
        cpu.iter()
            .flat_map(|&c| gpu.iter().map(move |&g| (c, g)))
            .map(|(f_c, f_g)| DeltaSample {
                f_c,
                f_g,
                delta: f(f_c, f_g),
            })
            .collect()
    }

    const UNS: DeltaCoefficients = DeltaCoefficients {
        k_c: 0.5,
        k_g: 0.05,
        b: -0.6,
    };
    const SAT: DeltaCoefficients = DeltaCoefficients {
        k_c: 0.03,
        k_g: 0.02,
        b: -0.16,
    };

    fn piecewise(bp: f64) -> impl Fn(f64, f64) -> f64 {
        move |c, g| {
            if c <= bp {
                UNS.eval(c, g)
            } else {
                SAT.eval(c, g)
            }
        }
    }

    #[test]
    fn recovers_breakpoint_and_branches_exactly() {
        let cpu: Vec<f64> = (1..=15).map(|i| 0.15 * i as f64).collect();
        let gpu = [0.3, 0.5, 0.7, 0.9, 1.1, 1.3];
        let bp = cpu[6];
        let s = grid_samples(&cpu, &gpu, piecewise(bp));
        let fit = detect_breakpoint(&s).unwrap();
        assert_eq!(fit.breakpoint.ghz(), bp);
        assert!(!fit.low_confidence);
        assert!(fit.sse_two_branch <= fit.sse_single_branch);
        let (u, v) = fit_delta(&s, fit.breakpoint).unwrap();
        for (got, want) in [(u, UNS), (v, SAT)] {
            assert!((got.k_c - want.k_c).abs() < 1e-9);
            assert!((got.k_g - want.k_g).abs() < 1e-9);
            assert!((got.b - want.b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_branch_data_is_low_confidence_and_lowest_split() {
        let cpu: Vec<f64> = (1..=10).map(|i| 0.2 * i as f64).collect();
        let gpu = [0.3, 0.8, 1.3];
        let s = grid_samples(&cpu, &gpu, |c, g| UNS.eval(c, g));
        let fit = detect_breakpoint(&s).unwrap();
        assert!(fit.low_confidence);
        assert_eq!(fit.breakpoint.ghz(), cpu[1]);
    }

    #[test]
    fn three_levels_force_the_middle_split() {
        let s = grid_samples(&[0.5, 1.0, 1.5], &[0.3, 1.0], piecewise(1.0));
        let fit = detect_breakpoint(&s).unwrap();
        assert_eq!(fit.breakpoint.ghz(), 1.0);
    }

    #[test]
    fn two_levels_cannot_split() {
        let s = grid_samples(&[0.5, 1.0], &[0.3, 1.0], piecewise(1.0));
        assert!(matches!(
            detect_breakpoint(&s),
            Err(FitError::CannotSplit { cpu_levels: 2 })
        ));
    }

    #[test]
    fn constant_gap_fits_as_constant() {
        let cpu = [0.4, 0.8, 1.2, 1.6, 2.0];
        let gpu = [0.3, 0.8, 1.3];
        let s = grid_samples(&cpu, &gpu, |_, _| -0.4);
        let (u, v) = fit_delta(&s, Frequency::new(1.2).unwrap()).unwrap();
        for b in [u, v] {
            assert!(b.k_c.abs() < 1e-9 && b.k_g.abs() < 1e-9);
            assert!((b.b + 0.4).abs() < 1e-9);
        }
    }

    #[test]
    fn samples_only_above_breakpoint_fail_unsaturated() {
        let s = grid_samples(&[1.6, 2.0, 2.2], &[0.3, 1.3], |_, _| -0.2);
        match fit_delta(&s, Frequency::new(1.0).unwrap()) {
            Err(FitError::UnderdeterminedBranch { branch, .. }) => {
                assert_eq!(branch, "unsaturated")
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
