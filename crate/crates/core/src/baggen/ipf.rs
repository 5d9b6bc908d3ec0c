//! Iterative proportional fitting of a `Q x C x L` table (cluster, label,
//! bag) to its `(Z, Y)` and `(Y, B)` marginals.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpfConfig {
    pub max_iter: usize,
    /// Largest allowed absolute marginal deviation.
    pub tol: f64,
}

impl Default for IpfConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpfReport {
    pub iterations: usize,
    pub max_deviation: f64,
    pub converged: bool,
}

/// Joint probability table indexed `[cluster, label, bag]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable3D(Array3<f64>);

impl JointTable3D {
    pub fn new(table: Array3<f64>) -> Result<Self> {
        if table.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "joint table entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self(table))
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.0.dim()
    }

    pub fn total(&self) -> f64 {
        self.0.sum()
    }

    /// `Q x C` marginal over bags.
    pub fn zy_marginal(&self) -> Array2<f64> {
        self.0.sum_axis(Axis(2))
    }

    /// `C x L` marginal over clusters.
    pub fn yb_marginal(&self) -> Array2<f64> {
        self.0.sum_axis(Axis(0))
    }

    /// `Pr(B | Z = z, Y = y)`, or `None` when the `(z, y)` fiber carries no mass.
    pub fn bag_conditional(&self, z: usize, y: usize) -> Option<Vec<f64>> {
        let fiber = self.0.slice(ndarray::s![z, y, ..]);
        let s = fiber.sum();
        (s > 0.0).then(|| fiber.iter().map(|v| v / s).collect())
    }
}

/// Fitting targets. The one-dimensional marginals are implied by the two
/// joint ones; any supplied here are checked for consistency, never fitted.
#[derive(Debug, Clone)]
pub struct IpfTargets {
    pub zy: Array2<f64>,
    pub yb: Array2<f64>,
    pub z: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

impl IpfTargets {
    pub fn new(zy: Array2<f64>, yb: Array2<f64>) -> Self {
        Self {
            zy,
            yb,
            z: None,
            y: None,
            b: None,
        }
    }

    fn check(&self, dims: (usize, usize, usize)) -> Result<()> {
        let (q, c, l) = dims;
        if self.zy.dim() != (q, c) {
            return Err(Error::DimensionMismatch {
                expected: q * c,
                got: self.zy.len(),
            });
        }
        if self.yb.dim() != (c, l) {
            return Err(Error::DimensionMismatch {
                expected: c * l,
                got: self.yb.len(),
            });
        }
        const TOL: f64 = 1e-6;
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= TOL)
        };
        let y_from_zy = self.zy.sum_axis(Axis(0)).to_vec();
        let y_from_yb = self.yb.sum_axis(Axis(1)).to_vec();
        if !close(&y_from_zy, &y_from_yb) {
            return Err(Error::InvalidArgument(
                "label marginals implied by (Z,Y) and (Y,B) disagree".into(),
            ));
        }
        let implied = [
            (&self.z, self.zy.sum_axis(Axis(1)).to_vec(), "cluster"),
            (&self.y, y_from_zy, "label"),
            (&self.b, self.yb.sum_axis(Axis(0)).to_vec(), "bag"),
        ];
        for (given, implied, name) in implied {
            if let Some(given) = given {
                if !close(given, &implied) {
                    return Err(Error::InvalidArgument(format!(
                        "{name} marginal inconsistent with the joint marginals"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Alternately rescales `(z, y, .)` fibers to match `zy` and `(., y, b)` fibers
/// to match `yb` until both marginals are within `cfg.tol`.
///
/// A fiber with zero current mass but positive target cannot be scaled and
/// is an error; a fiber with zero target is set to zero.
pub fn ipf_fit(
    init: &JointTable3D,
    targets: &IpfTargets,
    cfg: &IpfConfig,
) -> Result<(JointTable3D, IpfReport)> {
    let (q, c, l) = init.dims();
    targets.check((q, c, l))?;
    let mut t = init.0.clone();
    let mut deviation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        for z in 0..q {
            for y in 0..c {
                let mut fiber = t.slice_mut(ndarray::s![z, y, ..]);
                scale_fiber(&mut fiber, targets.zy[[z, y]], || {
                    format!("cluster {z}, label {y}")
                })?;
            }
        }
        for y in 0..c {
            for b in 0..l {
                let mut fiber = t.slice_mut(ndarray::s![.., y, b]);
                scale_fiber(&mut fiber, targets.yb[[y, b]], || {
                    format!("label {y}, bag {b}")
                })?;
            }
        }
        deviation = max_deviation(&t, targets);
        if deviation <= cfg.tol {
            break;
        }
    }
    let fitted = JointTable3D(t);
    Ok((
        fitted,
        IpfReport {
            iterations,
            max_deviation: deviation,
            converged: deviation <= cfg.tol,
        },
    ))
}

fn scale_fiber(
    fiber: &mut ndarray::ArrayViewMut1<f64>,
    target: f64,
    describe: impl Fn() -> String,
) -> Result<()> {
    let s = fiber.sum();
    if target <= 0.0 {
        fiber.fill(0.0);
    } else if s > 0.0 {
        *fiber *= target / s;
    } else {
        return Err(Error::Numerical(format!(
            "no mass to scale in fiber ({}) with positive target",
            describe()
        )));
    }
    Ok(())
}

fn max_deviation(t: &Array3<f64>, targets: &IpfTargets) -> f64 {
    let zy = t.sum_axis(Axis(2));
    let yb = t.sum_axis(Axis(0));
    zy.iter()
        .zip(targets.zy.iter())
        .chain(yb.iter().zip(targets.yb.iter()))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn targets() -> IpfTargets {
        IpfTargets::new(
            array![[0.3, 0.1], [0.2, 0.4]],
            array![[0.25, 0.25], [0.1, 0.4]],
        )
    }

    #[test]
    fn fits_both_marginals() {
        let init = JointTable3D::new(Array3::from_shape_fn((2, 2, 2), |(a, b, c)| {
            1.0 + (a + 2 * b + 3 * c) as f64
        }))
        .unwrap();
        let (fit, report) = ipf_fit(&init, &targets(), &IpfConfig::default()).unwrap();
        assert!(report.converged, "{report:?}");
        assert!(report.max_deviation <= 1e-8);
        assert!((fit.total() - 1.0).abs() < 1e-9);
        let zy = fit.zy_marginal();
        assert!((zy[[1, 1]] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn uniform_start_gives_conditional_independence() {
        let init = JointTable3D::new(Array3::from_elem((2, 2, 2), 1.0)).unwrap();
        let (fit, _) = ipf_fit(&init, &targets(), &IpfConfig::default()).unwrap();
        // from a uniform start the fit is Pr(Z|Y) Pr(B|Y) Pr(Y)
        let t = fit.as_array();
        let expect = 0.3 / 0.5 * 0.25 / 0.5 * 0.5;
        assert!((t[[0, 0, 0]] - expect).abs() < 1e-10);
    }

    #[test]
    fn zero_target_fiber_zeroed() {
        let t = IpfTargets::new(
            array![[0.5, 0.0], [0.0, 0.5]],
            array![[0.25, 0.25], [0.25, 0.25]],
        );
        let init = JointTable3D::new(Array3::from_elem((2, 2, 2), 1.0)).unwrap();
        let (fit, _) = ipf_fit(&init, &t, &IpfConfig::default()).unwrap();
        assert_eq!(fit.bag_conditional(0, 1), None);
        assert!(fit.bag_conditional(0, 0).is_some());
    }

    #[test]
    fn zero_mass_with_positive_target_errors() {
        let mut a = Array3::from_elem((2, 2, 2), 1.0);
        a.slice_mut(ndarray::s![0, 0, ..]).fill(0.0);
        let init = JointTable3D::new(a).unwrap();
        assert!(matches!(
            ipf_fit(&init, &targets(), &IpfConfig::default()),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn inconsistent_marginals_rejected() {
        let mut t = targets();
        t.yb = array![[0.4, 0.4], [0.1, 0.1]];
        let init = JointTable3D::new(Array3::from_elem((2, 2, 2), 1.0)).unwrap();
        assert!(ipf_fit(&init, &t, &IpfConfig::default()).is_err());
        let mut t = targets();
        t.b = Some(vec![0.5, 0.5]);
        assert!(ipf_fit(&init, &t, &IpfConfig::default()).is_err());
        t.b = Some(vec![0.35, 0.65]);
        assert!(ipf_fit(&init, &t, &IpfConfig::default()).is_ok());
    }
}
