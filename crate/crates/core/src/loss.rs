//! Composite detection loss and its analytic gradient.
//!
//! `total = lambda_coord * coord + lambda_noobj * noobj + class`, where
//!
//! * `coord` sums `dx^2 + dy^2 + dw^2 + dh^2` over responsible predictors,
//! * `noobj` sums `conf^2` over predictors with no assigned object,
//! * `class` sums squared errors against a one-hot class target over
//!   responsible predictors.
//!
//! Responsible predictors carry no confidence term, and `w, h` enter the
//! loss directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    GridShape, GridTensor, GroundTruthBox, BOX_CHANNELS, CH_CONF, CH_H, CH_W, CH_X, CH_Y,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_coord: f64,
    pub lambda_noobj: f64,
}

impl LossWeights {
    pub fn new(lambda_coord: f64, lambda_noobj: f64) -> Result<Self> {
        for (name, v) in [
            ("lambda_coord", lambda_coord),
            ("lambda_noobj", lambda_noobj),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(LossWeights {
            lambda_coord,
            lambda_noobj,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_coord: 5.0,
            lambda_noobj: 0.5,
        }
    }
}

/// Targets in grid layout plus the responsibility mask, one flag per
/// `(cell, box)` predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTensor {
    grid: GridTensor,
    mask: Vec<bool>,
}

impl TargetTensor {
    pub fn new(grid: GridTensor, mask: Vec<bool>) -> Result<Self> {
        let shape = grid.shape();
        if mask.len() != shape.num_predictors() {
            return Err(Error::Shape(format!(
                "mask has {} entries, grid has {} predictors",
                mask.len(),
                shape.num_predictors()
            )));
        }
        let ch = shape.channels();
        for (p, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
            let classes = &grid.values()[p * ch + BOX_CHANNELS..(p + 1) * ch];
            let ones = classes.iter().filter(|&&v| v == 1.0).count();
            let zeros = classes.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != classes.len() {
                return Err(Error::Shape(format!(
                    "responsible predictor {p} does not carry a one-hot class target"
                )));
            }
        }
        Ok(TargetTensor { grid, mask })
    }

    /// Assigns each box to the cell containing its center, using the first
    /// free predictor slot in that cell. Boxes landing in a full cell are
    /// dropped.
    pub fn from_labels(shape: GridShape, boxes: &[GroundTruthBox]) -> Result<Self> {
        let mut grid = GridTensor::zeros(shape);
        let mut mask = vec![false; shape.num_predictors()];
        let s = shape.s as f64;
        for gt in boxes {
            if gt.class_id >= shape.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class {} out of range for {} classes",
                    gt.class_id, shape.num_classes
                )));
            }
            let col = ((gt.bbox.cx * s).floor().max(0.0) as usize).min(shape.s - 1);
            let row = ((gt.bbox.cy * s).floor().max(0.0) as usize).min(shape.s - 1);
            let Some(k) = (0..shape.b).find(|&k| !mask[shape.predictor(row, col, k)]) else {
                continue;
            };
            mask[shape.predictor(row, col, k)] = true;
            let p = grid.predictor_mut(row, col, k);
            p[CH_X] = (gt.bbox.cx * s - col as f64).clamp(0.0, 1.0);
            p[CH_Y] = (gt.bbox.cy * s - row as f64).clamp(0.0, 1.0);
            p[CH_W] = gt.bbox.w;
            p[CH_H] = gt.bbox.h;
            p[CH_CONF] = 1.0;
            p[BOX_CHANNELS + gt.class_id] = 1.0;
        }
        TargetTensor::new(grid, mask)
    }

    pub fn grid(&self) -> &GridTensor {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn shape(&self) -> GridShape {
        self.grid.shape()
    }

    /// The prediction that attains zero loss: targets on responsible
    /// predictors, zero confidence elsewhere.
    pub fn ideal_prediction(&self) -> GridTensor {
        let mut out = self.grid.clone();
        let ch = self.shape().channels();
        for (p, &m) in self.mask.iter().enumerate() {
            if !m {
                out.values_mut()[p * ch + CH_CONF] = 0.0;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub coord: f64,
    pub noobj: f64,
    pub class_term: f64,
    pub total: f64,
}

fn check_shapes(pred: &GridTensor, target: &TargetTensor) -> Result<GridShape> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(pred.shape())
}

pub fn loss(pred: &GridTensor, target: &TargetTensor, w: &LossWeights) -> Result<LossBreakdown> {
    let shape = check_shapes(pred, target)?;
    let ch = shape.channels();
    let (mut coord, mut noobj, mut class_term) = (0.0, 0.0, 0.0);
    let pv = pred.values();
    let tv = target.grid.values();
    for (p, &responsible) in target.mask.iter().enumerate() {
        let base = p * ch;
        if responsible {
            for c in [CH_X, CH_Y, CH_W, CH_H] {
                let d = pv[base + c] - tv[base + c];
                coord += d * d;
            }
            for c in BOX_CHANNELS..ch {
                let d = pv[base + c] - tv[base + c];
                class_term += d * d;
            }
        } else {
            let conf = pv[base + CH_CONF];
            noobj += conf * conf;
        }
    }
    Ok(LossBreakdown {
        coord,
        noobj,
        class_term,
        total: w.lambda_coord * coord + w.lambda_noobj * noobj + class_term,
    })
}

/// Gradient of `loss(..).total` with respect to every prediction value.
pub fn loss_gradient(
    pred: &GridTensor,
    target: &TargetTensor,
    w: &LossWeights,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; pred.values().len()];
    accumulate_gradient(pred, target, w, 1.0, &mut grad)?;
    Ok(grad)
}

/// Adds `scale * gradient` into `grad`.
pub(crate) fn accumulate_gradient(
    pred: &GridTensor,
    target: &TargetTensor,
    w: &LossWeights,
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    let shape = check_shapes(pred, target)?;
    let ch = shape.channels();
    let pv = pred.values();
    let tv = target.grid.values();
    for (p, &responsible) in target.mask.iter().enumerate() {
        let base = p * ch;
        if responsible {
            for c in [CH_X, CH_Y, CH_W, CH_H] {
                grad[base + c] += scale * 2.0 * w.lambda_coord * (pv[base + c] - tv[base + c]);
            }
            for c in BOX_CHANNELS..ch {
                grad[base + c] += scale * 2.0 * (pv[base + c] - tv[base + c]);
            }
        } else {
            grad[base + CH_CONF] += scale * 2.0 * w.lambda_noobj * pv[base + CH_CONF];
        }
    }
    Ok(())
}
