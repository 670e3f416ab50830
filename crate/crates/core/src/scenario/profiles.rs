//! Named initial/target profiles.
//!
//! Scalar generators (`circle`, `two_circles`, `vertical_interface`) use the
//! optimal profile `tanh(d / (sqrt(2) eps))` of the signed distance `d`
//! (positive inside, i.e. in phase `+1`). Three-phase generators (`rings3`,
//! `walls3`) use clamped linear transitions of width `2 eps` and stay in the
//! Gibbs simplex exactly.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{Field, SpatialGrid};

#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    /// Disk of radius `r` centred at `(cx, cy)`.
    Circle { cx: f64, cy: f64, r: f64 },
    /// Union of two disks.
    TwoCircles {
        cx1: f64,
        cy1: f64,
        r1: f64,
        cx2: f64,
        cy2: f64,
        r2: f64,
    },
    /// Phase `+1` for `x < x0`.
    VerticalInterface { x0: f64 },
    /// Phase 1 in the disk of radius `r1`, phase 2 in the annulus up to `r2`, phase 3 outside.
    Rings3 { cx: f64, cy: f64, r1: f64, r2: f64 },
    /// Phase 1 for `x < x1`, phase 2 between the walls, phase 3 for `x > x2`.
    Walls3 { x1: f64, x2: f64 },
    Constant(Vec<f64>),
}

type Params = &'static [(&'static str, f64)];

const CIRCLE: Params = &[("cx", 0.0), ("cy", 0.0), ("r", 0.5)];
const TWO_CIRCLES: Params = &[
    ("cx1", -0.35),
    ("cy1", 0.0),
    ("r1", 0.3),
    ("cx2", 0.35),
    ("cy2", 0.0),
    ("r2", 0.3),
];
const VERTICAL: Params = &[("x0", 0.0)];
const RINGS3: Params = &[("cx", 0.5), ("cy", 0.5), ("r1", 0.2), ("r2", 0.4)];
const WALLS3: Params = &[("x1", 1.0 / 3.0), ("x2", 2.0 / 3.0)];

fn parse_params(name: &str, spec: Params, tokens: &[&str]) -> std::result::Result<Vec<f64>, String> {
    let mut values: Vec<Option<f64>> = vec![None; spec.len()];
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| format!("expected `name=value` parameter, got `{tok}`"))?;
        let idx = spec
            .iter()
            .position(|(p, _)| *p == k)
            .ok_or_else(|| format!("`{name}` has no parameter `{k}`"))?;
        if values[idx].is_some() {
            return Err(format!("parameter `{k}` given twice"));
        }
        let x: f64 = v.parse().map_err(|_| format!("parameter `{k}` expects a number, got `{v}`"))?;
        if !x.is_finite() {
            return Err(format!("parameter `{k}` must be finite"));
        }
        values[idx] = Some(x);
    }
    Ok(values.iter().zip(spec).map(|(v, (_, d))| v.unwrap_or(*d)).collect())
}

impl Profile {
    /// Parses `name k=v k=v ...`.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let (&name, rest) = tokens.split_first().ok_or_else(|| "empty profile".to_string())?;
        let positive = |what: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(format!("`{what}` must be positive"))
            }
        };
        match name {
            "circle" => {
                let p = parse_params(name, CIRCLE, rest)?;
                positive("r", p[2])?;
                Ok(Profile::Circle { cx: p[0], cy: p[1], r: p[2] })
            }
            "two_circles" => {
                let p = parse_params(name, TWO_CIRCLES, rest)?;
                positive("r1", p[2])?;
                positive("r2", p[5])?;
                Ok(Profile::TwoCircles {
                    cx1: p[0],
                    cy1: p[1],
                    r1: p[2],
                    cx2: p[3],
                    cy2: p[4],
                    r2: p[5],
                })
            }
            "vertical_interface" => {
                let p = parse_params(name, VERTICAL, rest)?;
                Ok(Profile::VerticalInterface { x0: p[0] })
            }
            "rings3" => {
                let p = parse_params(name, RINGS3, rest)?;
                positive("r1", p[2])?;
                if p[3] <= p[2] {
                    return Err("`r2` must exceed `r1`".into());
                }
                Ok(Profile::Rings3 {
                    cx: p[0],
                    cy: p[1],
                    r1: p[2],
                    r2: p[3],
                })
            }
            "walls3" => {
                let p = parse_params(name, WALLS3, rest)?;
                if p[1] <= p[0] {
                    return Err("`x2` must exceed `x1`".into());
                }
                Ok(Profile::Walls3 { x1: p[0], x2: p[1] })
            }
            "constant" => {
                let [tok] = rest else {
                    return Err("`constant` expects `value=v` or `values=a:b:...`".into());
                };
                let values = match tok.split_once('=') {
                    Some(("value", v)) => vec![v.parse::<f64>().map_err(|_| format!("`value` expects a number, got `{v}`"))?],
                    Some(("values", v)) => v
                        .split(':')
                        .map(|x| x.parse::<f64>().map_err(|_| format!("`values` expects numbers separated by `:`, got `{x}`")))
                        .collect::<std::result::Result<_, _>>()?,
                    _ => return Err("`constant` expects `value=v` or `values=a:b:...`".into()),
                };
                if values.iter().any(|v| !v.is_finite()) {
                    return Err("constant values must be finite".into());
                }
                Ok(Profile::Constant(values))
            }
            other => Err(format!(
                "unknown profile `{other}` (expected circle, two_circles, vertical_interface, rings3, walls3 or constant)"
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Circle { .. } => "circle",
            Profile::TwoCircles { .. } => "two_circles",
            Profile::VerticalInterface { .. } => "vertical_interface",
            Profile::Rings3 { .. } => "rings3",
            Profile::Walls3 { .. } => "walls3",
            Profile::Constant(_) => "constant",
        }
    }

    /// Whether the generator can produce fields with `ncomp` components.
    pub fn accepts(&self, ncomp: usize) -> bool {
        match self {
            Profile::Circle { .. } | Profile::TwoCircles { .. } | Profile::VerticalInterface { .. } => ncomp == 1,
            Profile::Rings3 { .. } | Profile::Walls3 { .. } => ncomp == 3,
            Profile::Constant(v) => v.len() == 1 || v.len() == ncomp,
        }
    }

    pub fn evaluate(&self, grid: &SpatialGrid, epsilon: f64, ncomp: usize) -> Result<Field> {
        if !self.accepts(ncomp) {
            return Err(Error::InvalidParameter(format!(
                "profile `{}` cannot produce {ncomp}-component fields",
                self.name()
            )));
        }
        let smooth = |d: f64| (d / (std::f64::consts::SQRT_2 * epsilon)).tanh();
        // 1 inside (d > eps), 0 outside (d < -eps), linear in between
        let ramp = |d: f64| (0.5 + d / (2.0 * epsilon)).clamp(0.0, 1.0);
        let dist = |x: f64, y: f64, cx: f64, cy: f64| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        Ok(match *self {
            Profile::Circle { cx, cy, r } => Field::from_fn(grid, |x, y| smooth(r - dist(x, y, cx, cy))),
            Profile::TwoCircles {
                cx1,
                cy1,
                r1,
                cx2,
                cy2,
                r2,
            } => Field::from_fn(grid, |x, y| {
                let d = (r1 - dist(x, y, cx1, cy1)).max(r2 - dist(x, y, cx2, cy2));
                smooth(d)
            }),
            Profile::VerticalInterface { x0 } => Field::from_fn(grid, |x, _| smooth(x0 - x)),
            Profile::Rings3 { cx, cy, r1, r2 } => Field::from_fn_vector(grid, 3, |x, y, out| {
                let d = dist(x, y, cx, cy);
                let (s1, s2) = (ramp(r1 - d), ramp(r2 - d));
                out[0] = s1;
                out[1] = s2 - s1;
                out[2] = 1.0 - s2;
            }),
            Profile::Walls3 { x1, x2 } => Field::from_fn_vector(grid, 3, |x, _, out| {
                let (s1, s2) = (ramp(x1 - x), ramp(x2 - x));
                out[0] = s1;
                out[1] = s2 - s1;
                out[2] = 1.0 - s2;
            }),
            Profile::Constant(ref v) => {
                if v.len() == 1 {
                    Field::constant(grid, ncomp, v[0])
                } else {
                    Field::uniform(grid, v)
                }
            }
        })
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Circle { cx, cy, r } => write!(f, "circle cx={cx} cy={cy} r={r}"),
            Profile::TwoCircles {
                cx1,
                cy1,
                r1,
                cx2,
                cy2,
                r2,
            } => write!(f, "two_circles cx1={cx1} cy1={cy1} r1={r1} cx2={cx2} cy2={cy2} r2={r2}"),
            Profile::VerticalInterface { x0 } => write!(f, "vertical_interface x0={x0}"),
            Profile::Rings3 { cx, cy, r1, r2 } => write!(f, "rings3 cx={cx} cy={cy} r1={r1} r2={r2}"),
            Profile::Walls3 { x1, x2 } => write!(f, "walls3 x1={x1} x2={x2}"),
            Profile::Constant(v) if v.len() == 1 => write!(f, "constant value={}", v[0]),
            Profile::Constant(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "constant values={}", parts.join(":"))
            }
        }
    }
}
