use serde::{Deserialize, Serialize};

use crate::color::Rgba;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub x: f64,
    pub color: Rgba,
}

/// Piecewise-linear map from a normalized scalar to RGBA. Control points
/// start at 0, end at 1 and are strictly increasing in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ControlPoint>", into = "Vec<ControlPoint>")]
pub struct RawTransferFunction {
    points: Vec<ControlPoint>,
}

impl Default for RawTransferFunction {
    /// Grey ramp that leaves the low end (noise and background) transparent.
    fn default() -> Self {
        RawTransferFunction {
            points: vec![
                ControlPoint {
                    x: 0.0,
                    color: Rgba::TRANSPARENT,
                },
                ControlPoint {
                    x: 0.3,
                    color: Rgba::new(0.6, 0.6, 0.6, 0.0),
                },
                ControlPoint {
                    x: 1.0,
                    color: Rgba::new(0.95, 0.95, 0.95, 0.5),
                },
            ],
        }
    }
}

impl TryFrom<Vec<ControlPoint>> for RawTransferFunction {
    type Error = Error;

    fn try_from(points: Vec<ControlPoint>) -> Result<Self> {
        RawTransferFunction::new(points)
    }
}

impl From<RawTransferFunction> for Vec<ControlPoint> {
    fn from(tf: RawTransferFunction) -> Self {
        tf.points
    }
}

impl RawTransferFunction {
    pub fn new(points: Vec<ControlPoint>) -> Result<Self> {
        let bad = |r: &str| Err(Error::invalid("raw_tf", r));
        if points.len() < 2 {
            return bad("needs at least two control points");
        }
        if points[0].x != 0.0 || points[points.len() - 1].x != 1.0 {
            return bad("control points must span [0, 1]");
        }
        if points
            .windows(2)
            .any(|w| w[0].x.partial_cmp(&w[1].x) != Some(std::cmp::Ordering::Less))
        {
            return bad("control points must be strictly increasing");
        }
        if points.iter().any(|p| !p.color.is_valid()) {
            return bad("colors must lie in [0, 1]");
        }
        Ok(RawTransferFunction { points })
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }

    #[inline]
    pub fn eval(&self, v: f64) -> Rgba {
        let v = v.clamp(0.0, 1.0);
        let i = self.points.partition_point(|p| p.x <= v);
        if i == 0 {
            return self.points[0].color;
        }
        if i == self.points.len() {
            return self.points[i - 1].color;
        }
        let (a, b) = (&self.points[i - 1], &self.points[i]);
        let t = (v - a.x) / (b.x - a.x);
        let mut out = [0.0; 4];
        for (c, o) in out.iter_mut().enumerate() {
            *o = a.color.0[c] + t * (b.color.0[c] - a.color.0[c]);
        }
        Rgba(out)
    }

    /// Largest `x` such that alpha is zero on all of `[0, x]`, if any.
    pub fn transparent_below(&self) -> Option<f64> {
        let mut last = None;
        for p in &self.points {
            if p.color.a() != 0.0 {
                break;
            }
            last = Some(p.x);
        }
        last
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> RawTransferFunction {
        RawTransferFunction::new(vec![
            ControlPoint {
                x: 0.0,
                color: Rgba::TRANSPARENT,
            },
            ControlPoint {
                x: 1.0,
                color: Rgba::new(1.0, 0.5, 0.0, 1.0),
            },
        ])
        .unwrap()
    }

    #[test]
    fn interpolates() {
        let tf = ramp();
        assert_eq!(tf.eval(0.5), Rgba::new(0.5, 0.25, 0.0, 0.5));
        assert_eq!(tf.eval(-1.0), Rgba::TRANSPARENT);
        assert_eq!(tf.eval(1.0), Rgba::new(1.0, 0.5, 0.0, 1.0));
        assert_eq!(tf.transparent_below(), Some(0.0));
        assert_eq!(
            RawTransferFunction::default().transparent_below(),
            Some(0.3)
        );
        assert_eq!(RawTransferFunction::default().eval(0.2).a(), 0.0);
    }

    #[test]
    fn validation() {
        let p = |x| ControlPoint {
            x,
            color: Rgba::TRANSPARENT,
        };
        assert!(RawTransferFunction::new(vec![p(0.0)]).is_err());
        assert!(RawTransferFunction::new(vec![p(0.1), p(1.0)]).is_err());
        assert!(RawTransferFunction::new(vec![p(0.0), p(0.5), p(0.5), p(1.0)]).is_err());
        let json = serde_json::to_string(&ramp()).unwrap();
        let back: RawTransferFunction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ramp());
        assert!(serde_json::from_str::<RawTransferFunction>("[]").is_err());
    }
}
