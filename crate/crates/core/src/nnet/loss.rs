use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to predictions before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½ Σ (y − t)²`
    Square,
    /// `−Σ t ln y`
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" | "mse" => Ok(LossKind::Square),
            "cross_entropy" | "xent" => Ok(LossKind::CrossEntropy),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

fn check(pred: ArrayView1<f64>, target: ArrayView1<f64>, kind: LossKind) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            expected: target.len(),
            actual: pred.len(),
            context: "prediction vs target",
        });
    }
    if kind == LossKind::CrossEntropy && pred.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidArgument(
            "cross-entropy needs predictions in [0, 1]".into(),
        ));
    }
    Ok(())
}

pub fn loss(pred: ArrayView1<f64>, target: ArrayView1<f64>, kind: LossKind) -> Result<f64> {
    check(pred, target, kind)?;
    Ok(match kind {
        LossKind::Square => 0.5 * Zip::from(pred).and(target).fold(0.0, |acc, &y, &t| acc + (y - t).powi(2)),
        LossKind::CrossEntropy => Zip::from(pred)
            .and(target)
            .fold(0.0, |acc, &y, &t| if t == 0.0 { acc } else { acc - t * y.max(LOG_FLOOR).ln() }),
    })
}

/// `∂L/∂y` for one sample.
pub fn loss_gradient(pred: ArrayView1<f64>, target: ArrayView1<f64>, kind: LossKind) -> Result<Array1<f64>> {
    check(pred, target, kind)?;
    let mut g = Array1::zeros(pred.len());
    Zip::from(&mut g)
        .and(pred)
        .and(target)
        .for_each(|g, &y, &t| *g = loss_derivative(y, t, kind));
    Ok(g)
}

#[inline]
pub(crate) fn loss_derivative(y: f64, t: f64, kind: LossKind) -> f64 {
    match kind {
        LossKind::Square => y - t,
        LossKind::CrossEntropy => {
            if t == 0.0 || y < LOG_FLOOR {
                0.0
            } else {
                -t / y
            }
        }
    }
}
