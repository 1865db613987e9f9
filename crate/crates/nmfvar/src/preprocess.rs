//! Declarative, invertible transform pipeline.
//!
//! Steps: natural log, log1p, centered moving average, first difference,
//! per-variable min-max scaling. Applying a pipeline records the state needed
//! to invert it (initial columns for differencing, per-variable min/max,
//! dropped boundary counts). Moving averages are not invertible; their
//! inversion is the identity and the result is flagged as smoothed-scale.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineStep {
    Log,
    Log1p,
    MovingAverage { window: usize },
    FirstDifference,
    MinMaxScale,
}

/// An ordered list of preprocessing steps.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub steps: Vec<PipelineStep>,
}

impl PipelineSpec {
    /// Parses a comma-separated step list, e.g. `"log1p,ma7,diff,minmax"`.
    /// Tokens: `log`, `log1p`, `ma<window>`, `diff`, `minmax`. An empty string
    /// yields the empty pipeline.
    pub fn parse(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let step = match token {
                "log" => PipelineStep::Log,
                "log1p" => PipelineStep::Log1p,
                "diff" => PipelineStep::FirstDifference,
                "minmax" => PipelineStep::MinMaxScale,
                t if t.starts_with("ma") => {
                    let window: usize = t[2..].parse().map_err(|_| {
                        Error::InvalidParameter(format!("bad moving-average token '{t}'"))
                    })?;
                    PipelineStep::MovingAverage { window }
                }
                t => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown pipeline step '{t}' (expected log, log1p, ma<k>, diff, minmax)"
                    )))
                }
            };
            steps.push(step);
        }
        Ok(Self { steps })
    }
}

impl std::fmt::Display for PipelineSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for s in &self.steps {
            if !first {
                write!(f, ",")?;
            }
            first = false;
            match s {
                PipelineStep::Log => write!(f, "log")?,
                PipelineStep::Log1p => write!(f, "log1p")?,
                PipelineStep::MovingAverage { window } => write!(f, "ma{window}")?,
                PipelineStep::FirstDifference => write!(f, "diff")?,
                PipelineStep::MinMaxScale => write!(f, "minmax")?,
            }
        }
        Ok(())
    }
}

/// A pipeline step together with the state recorded while applying it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedStep {
    Log,
    Log1p,
    MovingAverage { window: usize, dropped_per_side: usize },
    FirstDifference { initial: Vec<f64> },
    MinMaxScale { min: Vec<f64>, max: Vec<f64> },
}

/// The state captured by `apply_pipeline`, sufficient to invert it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub steps: Vec<FittedStep>,
}

impl FittedPipeline {
    /// True when the pipeline contains a moving average, whose inversion is
    /// the identity: inverted values are on the smoothed scale.
    pub fn smoothed_scale(&self) -> bool {
        self.steps
            .iter()
            .any(|s| matches!(s, FittedStep::MovingAverage { .. }))
    }

    /// Total number of time points dropped by all steps.
    pub fn dropped_points(&self) -> usize {
        self.steps
            .iter()
            .map(|s| match s {
                FittedStep::MovingAverage { dropped_per_side, .. } => 2 * dropped_per_side,
                FittedStep::FirstDifference { .. } => 1,
                _ => 0,
            })
            .sum()
    }

    /// Re-applies the fitted transforms to a frame using the stored state
    /// (min-max uses the recorded bounds rather than refitting).
    pub fn reapply(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        let mut current = frame.clone();
        for step in &self.steps {
            current = match step {
                FittedStep::Log => apply_log(&current)?,
                FittedStep::Log1p => apply_log1p(&current)?,
                FittedStep::MovingAverage { window, .. } => apply_moving_average(&current, *window)?.0,
                FittedStep::FirstDifference { .. } => apply_first_difference(&current)?.0,
                FittedStep::MinMaxScale { min, max } => scale_with_bounds(&current, min, max)?,
            };
        }
        Ok(current)
    }
}

/// Runs the steps in order, recording inversion state. Returns the transformed
/// frame (with T shrunk by any boundary drops) and the fitted pipeline.
pub fn apply_pipeline(
    frame: &TimeSeriesFrame,
    spec: &PipelineSpec,
) -> Result<(TimeSeriesFrame, FittedPipeline)> {
    let mut current = frame.clone();
    let mut fitted = Vec::with_capacity(spec.steps.len());
    for step in &spec.steps {
        match step {
            PipelineStep::Log => {
                current = apply_log(&current)?;
                fitted.push(FittedStep::Log);
            }
            PipelineStep::Log1p => {
                current = apply_log1p(&current)?;
                fitted.push(FittedStep::Log1p);
            }
            PipelineStep::MovingAverage { window } => {
                let (next, dropped) = apply_moving_average(&current, *window)?;
                current = next;
                fitted.push(FittedStep::MovingAverage {
                    window: *window,
                    dropped_per_side: dropped,
                });
            }
            PipelineStep::FirstDifference => {
                let (next, initial) = apply_first_difference(&current)?;
                current = next;
                fitted.push(FittedStep::FirstDifference { initial });
            }
            PipelineStep::MinMaxScale => {
                let (next, min, max) = fit_minmax(&current)?;
                current = next;
                fitted.push(FittedStep::MinMaxScale { min, max });
            }
        }
    }
    Ok((current, FittedPipeline { steps: fitted }))
}

/// Result of inverting a pipeline.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub frame: TimeSeriesFrame,
    /// Values are on the smoothed scale (pipeline contained a moving average).
    pub smoothed_scale: bool,
}

/// Inverts the fitted steps in reverse order. Log, log1p and min-max invert
/// exactly; first differences are undone by cumulative sums from the recorded
/// initial column (gaining one column back); moving averages invert as the
/// identity. The frame may have a different column count than at fit time
/// (e.g. history plus appended forecasts).
pub fn invert_pipeline(frame: &TimeSeriesFrame, fitted: &FittedPipeline) -> Result<Inversion> {
    let mut current = frame.clone();
    for step in fitted.steps.iter().rev() {
        current = match step {
            FittedStep::Log => map_frame(&current, |v| v.exp()),
            FittedStep::Log1p => map_frame(&current, |v| v.exp_m1()),
            FittedStep::MovingAverage { .. } => current,
            FittedStep::FirstDifference { initial } => invert_first_difference(&current, initial)?,
            FittedStep::MinMaxScale { min, max } => {
                let p = current.n_vars();
                if min.len() != p || max.len() != p {
                    return Err(Error::DimensionMismatch {
                        context: "min-max inversion state",
                        left: min.len().to_string(),
                        right: p.to_string(),
                    });
                }
                let mut values = current.values().clone();
                for (i, mut row) in values.rows_mut().into_iter().enumerate() {
                    let span = max[i] - min[i];
                    row.mapv_inplace(|v| v * span + min[i]);
                }
                rebuild(&current, values, current.timestamps().to_vec())?
            }
        };
    }
    Ok(Inversion {
        smoothed_scale: fitted.smoothed_scale(),
        frame: current,
    })
}

fn map_frame(frame: &TimeSeriesFrame, f: impl Fn(f64) -> f64) -> TimeSeriesFrame {
    let values = frame.values().mapv(&f);
    rebuild(frame, values, frame.timestamps().to_vec()).expect("shape unchanged")
}

fn rebuild(
    like: &TimeSeriesFrame,
    values: Array2<f64>,
    timestamps: Vec<f64>,
) -> Result<TimeSeriesFrame> {
    TimeSeriesFrame::from_numeric(like.variable_names().to_vec(), timestamps, values)
}

fn apply_log(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    if let Some(((i, j), v)) = frame.values().indexed_iter().find(|(_, &v)| v <= 0.0) {
        return Err(Error::InvalidData(format!(
            "log requires strictly positive values; variable '{}' at {} is {}",
            frame.variable_names()[i],
            frame.time_labels()[j],
            v
        )));
    }
    Ok(map_frame(frame, f64::ln))
}

fn apply_log1p(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    if let Some(((i, j), v)) = frame.values().indexed_iter().find(|(_, &v)| v < 0.0) {
        return Err(Error::InvalidData(format!(
            "log1p requires non-negative values; variable '{}' at {} is {}",
            frame.variable_names()[i],
            frame.time_labels()[j],
            v
        )));
    }
    Ok(map_frame(frame, f64::ln_1p))
}

fn apply_moving_average(
    frame: &TimeSeriesFrame,
    window: usize,
) -> Result<(TimeSeriesFrame, usize)> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "moving-average window must be odd and positive, got {window}"
        )));
    }
    let t = frame.n_obs();
    if window > t {
        return Err(Error::InvalidParameter(format!(
            "moving-average window {window} exceeds series length {t}"
        )));
    }
    let half = window / 2;
    let t_out = t - 2 * half;
    let p = frame.n_vars();
    let mut values = Array2::zeros((p, t_out));
    let input = frame.values();
    for i in 0..p {
        for j in 0..t_out {
            let mut acc = 0.0;
            for w in 0..window {
                acc += input[(i, j + w)];
            }
            values[(i, j)] = acc / window as f64;
        }
    }
    let timestamps = frame.timestamps()[half..t - half].to_vec();
    Ok((rebuild(frame, values, timestamps)?, half))
}

fn apply_first_difference(frame: &TimeSeriesFrame) -> Result<(TimeSeriesFrame, Vec<f64>)> {
    let t = frame.n_obs();
    let p = frame.n_vars();
    let input = frame.values();
    let initial: Vec<f64> = (0..p).map(|i| input[(i, 0)]).collect();
    let mut values = Array2::zeros((p, t - 1));
    for i in 0..p {
        for j in 0..t - 1 {
            values[(i, j)] = input[(i, j + 1)] - input[(i, j)];
        }
    }
    let timestamps = frame.timestamps()[1..].to_vec();
    Ok((rebuild(frame, values, timestamps)?, initial))
}

fn invert_first_difference(frame: &TimeSeriesFrame, initial: &[f64]) -> Result<TimeSeriesFrame> {
    let p = frame.n_vars();
    if initial.len() != p {
        return Err(Error::DimensionMismatch {
            context: "first-difference inversion state",
            left: initial.len().to_string(),
            right: p.to_string(),
        });
    }
    let t = frame.n_obs();
    let mut values = Array2::zeros((p, t + 1));
    for i in 0..p {
        values[(i, 0)] = initial[i];
        for j in 0..t {
            values[(i, j + 1)] = values[(i, j)] + frame.values()[(i, j)];
        }
    }
    let spacing = frame.spacing();
    let mut timestamps = Vec::with_capacity(t + 1);
    timestamps.push(frame.timestamps()[0] - spacing);
    timestamps.extend_from_slice(frame.timestamps());
    rebuild(frame, values, timestamps)
}

fn fit_minmax(frame: &TimeSeriesFrame) -> Result<(TimeSeriesFrame, Vec<f64>, Vec<f64>)> {
    let p = frame.n_vars();
    let mut min = Vec::with_capacity(p);
    let mut max = Vec::with_capacity(p);
    for (i, row) in frame.values().axis_iter(Axis(0)).enumerate() {
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(Error::InvalidData(format!(
                "min-max scaling requires a non-constant variable; '{}' is constant at {}",
                frame.variable_names()[i],
                lo
            )));
        }
        min.push(lo);
        max.push(hi);
    }
    let scaled = scale_with_bounds(frame, &min, &max)?;
    Ok((scaled, min, max))
}

fn scale_with_bounds(frame: &TimeSeriesFrame, min: &[f64], max: &[f64]) -> Result<TimeSeriesFrame> {
    let p = frame.n_vars();
    if min.len() != p || max.len() != p {
        return Err(Error::DimensionMismatch {
            context: "min-max bounds",
            left: min.len().to_string(),
            right: p.to_string(),
        });
    }
    let mut values = frame.values().clone();
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        let span = max[i] - min[i];
        row.mapv_inplace(|v| (v - min[i]) / span);
    }
    rebuild(frame, values, frame.timestamps().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn frame(values: Array2<f64>) -> TimeSeriesFrame {
        let t = values.ncols();
        let names = (0..values.nrows()).map(|i| format!("v{i}")).collect();
        TimeSeriesFrame::from_numeric(names, (0..t).map(|i| i as f64).collect(), values).unwrap()
    }

    #[test]
    fn log_of_powers_of_e() {
        let f = frame(array![[1.0, std::f64::consts::E, std::f64::consts::E.powi(2)]]);
        let (out, _) = apply_pipeline(&f, &PipelineSpec::parse("log").unwrap()).unwrap();
        for (got, want) in out.values().iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn log_rejects_non_positive() {
        let f = frame(array![[1.0, 0.0, 2.0]]);
        let err = apply_pipeline(&f, &PipelineSpec::parse("log").unwrap()).unwrap_err();
        assert!(err.to_string().contains("v0"), "{err}");
    }

    #[test]
    fn moving_average_window3() {
        let f = frame(array![[0.0, 1.0, 2.0, 3.0, 4.0]]);
        let (out, fitted) =
            apply_pipeline(&f, &PipelineSpec::parse("ma3").unwrap()).unwrap();
        assert_eq!(out.n_obs(), 3);
        assert_eq!(out.values().row(0).to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(fitted.dropped_points(), 2);
    }

    #[test]
    fn moving_average_window_too_large() {
        let f = frame(array![[0.0, 1.0, 2.0]]);
        assert!(apply_pipeline(&f, &PipelineSpec::parse("ma5").unwrap()).is_err());
        assert!(apply_pipeline(&f, &PipelineSpec::parse("ma2").unwrap()).is_err());
    }

    #[test]
    fn first_difference_and_inverse() {
        let f = frame(array![[3.0, 5.0, 4.0, 6.0]]);
        let (out, fitted) = apply_pipeline(&f, &PipelineSpec::parse("diff").unwrap()).unwrap();
        assert_eq!(out.values().row(0).to_vec(), vec![2.0, -1.0, 2.0]);
        let inv = invert_pipeline(&out, &fitted).unwrap();
        assert!(!inv.smoothed_scale);
        assert_eq!(inv.frame.values().row(0).to_vec(), vec![3.0, 5.0, 4.0, 6.0]);
    }

    #[test]
    fn minmax_spans_unit_interval() {
        let f = frame(array![[2.0, 4.0, 3.0], [10.0, 0.0, 5.0]]);
        let (out, _) = apply_pipeline(&f, &PipelineSpec::parse("minmax").unwrap()).unwrap();
        for row in out.values().rows() {
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn minmax_rejects_constant_variable() {
        let f = frame(array![[1.0, 1.0, 1.0]]);
        let err = apply_pipeline(&f, &PipelineSpec::parse("minmax").unwrap()).unwrap_err();
        assert!(err.to_string().contains("constant"), "{err}");
    }

    #[test]
    fn round_trip_log1p_minmax() {
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        let values = Array2::from_shape_fn((3, 20), |_| 10.0 * next());
        let f = frame(values.clone());
        let spec = PipelineSpec::parse("log1p,minmax").unwrap();
        let (out, fitted) = apply_pipeline(&f, &spec).unwrap();
        let inv = invert_pipeline(&out, &fitted).unwrap();
        for (got, want) in inv.frame.values().iter().zip(values.iter()) {
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn moving_average_flags_smoothed_scale() {
        let f = frame(array![[0.0, 1.0, 2.0, 3.0, 4.0]]);
        let (out, fitted) = apply_pipeline(&f, &PipelineSpec::parse("ma3").unwrap()).unwrap();
        let inv = invert_pipeline(&out, &fitted).unwrap();
        assert!(inv.smoothed_scale);
        assert_eq!(inv.frame.values(), out.values());
    }

    #[test]
    fn t_accounting_is_exact() {
        let f = frame(Array2::from_shape_fn((2, 30), |(i, j)| (i + j) as f64 + 1.0));
        let spec = PipelineSpec::parse("log,ma5,diff,minmax").unwrap();
        let (out, fitted) = apply_pipeline(&f, &spec).unwrap();
        assert_eq!(out.n_obs(), 30 - fitted.dropped_points());
        assert_eq!(fitted.dropped_points(), 4 + 1);
    }

    #[test]
    fn parse_rejects_unknown_step() {
        assert!(PipelineSpec::parse("log,boxcox").is_err());
        assert!(PipelineSpec::parse("maX").is_err());
    }

    #[test]
    fn fitted_pipeline_serde_round_trip() {
        let f = frame(array![[3.0, 5.0, 4.0, 6.0], [1.0, 3.0, 2.0, 5.0]]);
        let (_, fitted) =
            apply_pipeline(&f, &PipelineSpec::parse("diff,minmax").unwrap()).unwrap();
        let json = serde_json::to_string(&fitted).unwrap();
        let back: FittedPipeline = serde_json::from_str(&json).unwrap();
        assert_eq!(fitted, back);
    }

    #[test]
    fn reapply_uses_stored_bounds() {
        let f = frame(array![[0.0, 2.0, 4.0, 6.0]]);
        let (_, fitted) = apply_pipeline(&f, &PipelineSpec::parse("minmax").unwrap()).unwrap();
        let g = frame(array![[0.0, 2.0, 4.0, 8.0]]);
        let re = fitted.reapply(&g).unwrap();
        // 8.0 exceeds the fitted max of 6.0, so the reapplied value exceeds 1
        assert!((re.values()[(0, 3)] - 8.0 / 6.0).abs() < 1e-12);
    }
}
