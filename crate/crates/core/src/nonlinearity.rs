//! Catalog of nonlinearities `F(u, p, r)` with analytic partials.
//!
//! `p` is the gradient slot and `r` the Hessian slot (row-major, `r[i][j]`).
//! Unused slots in 1D are zero.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub u: f64,
    pub p: [f64; 2],
    pub r: [[f64; 2]; 2],
}

impl Jet {
    pub fn scaled(&self, tau: f64) -> Jet {
        Jet {
            u: tau * self.u,
            p: [tau * self.p[0], tau * self.p[1]],
            r: [
                [tau * self.r[0][0], tau * self.r[0][1]],
                [tau * self.r[1][0], tau * self.r[1][1]],
            ],
        }
    }
}

/// `(F_y, grad_p F, F_{r_ij})` at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Partials {
    pub fy: f64,
    pub fp: [f64; 2],
    pub fr: [[f64; 2]; 2],
}

impl Partials {
    /// `|F_y| + |grad_p F| + sum |F_{r_ij}|`
    pub fn magnitude(&self) -> f64 {
        self.fy.abs()
            + (self.fp[0].powi(2) + self.fp[1].powi(2)).sqrt()
            + self.fr.iter().flatten().map(|v| v.abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Nonlinearity {
    Zero,
    Constant(f64),
    /// `c u`
    Linear(f64),
    /// `c tanh(u)`
    Tanh(f64),
    /// `c sin(u)`
    Sin(f64),
    /// `u^2`; locally Lipschitz only, no global bound.
    Square,
    /// `tanh(u) + c sin(p_1) + c tanh(r_11)`
    Mixed(f64),
}

impl Nonlinearity {
    pub fn id(&self) -> String {
        match self {
            Nonlinearity::Zero => "zero".into(),
            Nonlinearity::Constant(c) => format!("constant({c})"),
            Nonlinearity::Linear(c) => format!("linear({c})"),
            Nonlinearity::Tanh(c) => format!("tanh({c})"),
            Nonlinearity::Sin(c) => format!("sin({c})"),
            Nonlinearity::Square => "square".into(),
            Nonlinearity::Mixed(c) => format!("mixed({c})"),
        }
    }

    /// Parse `zero`, `constant(c)`, `linear(c)`, `tanh(c)`, `sin(c)`, `square`, `mixed(c)`.
    /// A bare name takes amplitude 1.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(i) if s.ends_with(')') => {
                let v: f64 = s[i + 1..s.len() - 1]
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad amplitude in {s:?}")))?;
                (&s[..i], Some(v))
            }
            _ => (s, None),
        };
        let a = arg.unwrap_or(1.0);
        Ok(match name.trim() {
            "zero" => Nonlinearity::Zero,
            "constant" => Nonlinearity::Constant(a),
            "linear" => Nonlinearity::Linear(a),
            "tanh" => Nonlinearity::Tanh(a),
            "sin" => Nonlinearity::Sin(a),
            "square" if arg.is_none() => Nonlinearity::Square,
            "mixed" => Nonlinearity::Mixed(a),
            _ => return Err(Error::InvalidParameter(format!("unknown nonlinearity {s:?}"))),
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Nonlinearity::Zero)
            || matches!(self, Nonlinearity::Constant(c) | Nonlinearity::Linear(c) | Nonlinearity::Tanh(c) | Nonlinearity::Sin(c) if *c == 0.0)
    }

    pub fn uses_gradient(&self) -> bool {
        matches!(self, Nonlinearity::Mixed(c) if *c != 0.0)
    }

    pub fn uses_hessian(&self) -> bool {
        self.uses_gradient()
    }

    /// Declared `M_F`; `None` when `F` is not globally Lipschitz.
    pub fn declared_bound(&self) -> Option<f64> {
        match self {
            Nonlinearity::Zero | Nonlinearity::Constant(_) => Some(0.0),
            Nonlinearity::Linear(c) | Nonlinearity::Tanh(c) | Nonlinearity::Sin(c) => Some(c.abs()),
            Nonlinearity::Square => None,
            Nonlinearity::Mixed(c) => Some(1.0 + 2.0 * c.abs()),
        }
    }

    pub fn value(&self, j: &Jet) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Constant(c) => *c,
            Nonlinearity::Linear(c) => c * j.u,
            Nonlinearity::Tanh(c) => c * j.u.tanh(),
            Nonlinearity::Sin(c) => c * j.u.sin(),
            Nonlinearity::Square => j.u * j.u,
            Nonlinearity::Mixed(c) => j.u.tanh() + c * j.p[0].sin() + c * j.r[0][0].tanh(),
        }
    }

    pub fn partials(&self, j: &Jet) -> Partials {
        let mut d = Partials::default();
        match self {
            Nonlinearity::Zero | Nonlinearity::Constant(_) => {}
            Nonlinearity::Linear(c) => d.fy = *c,
            Nonlinearity::Tanh(c) => d.fy = c * sech2(j.u),
            Nonlinearity::Sin(c) => d.fy = c * j.u.cos(),
            Nonlinearity::Square => d.fy = 2.0 * j.u,
            Nonlinearity::Mixed(c) => {
                d.fy = sech2(j.u);
                d.fp[0] = c * j.p[0].cos();
                d.fr[0][0] = c * sech2(j.r[0][0]);
            }
        }
        d
    }

    /// Central-difference check of the analytic partials at a fixed set of
    /// sample jets (relative tolerance 1e-6).
    pub fn check_partials(&self, dim: usize) -> Result<()> {
        let samples = [
            Jet::default(),
            Jet {
                u: 0.7,
                p: [-0.4, 0.3],
                r: [[1.1, -0.2], [0.5, 0.9]],
            },
            Jet {
                u: -2.3,
                p: [1.7, -0.8],
                r: [[-0.6, 0.4], [-1.2, 2.0]],
            },
            Jet {
                u: 4.1,
                p: [0.05, 2.5],
                r: [[3.0, 0.0], [0.1, -0.7]],
            },
        ];
        let h = 1e-5;
        for s in &samples {
            let d = self.partials(s);
            let compare = |name: String, analytic: f64, bump: &dyn Fn(&mut Jet, f64)| -> Result<()> {
                let mut jp = *s;
                let mut jm = *s;
                bump(&mut jp, h);
                bump(&mut jm, -h);
                let fd = (self.value(&jp) - self.value(&jm)) / (2.0 * h);
                if (fd - analytic).abs() > 1e-6 * (1.0 + analytic.abs()) {
                    return Err(Error::NonlinearityPartialsMismatch(format!(
                        "{} d/d{name} at {s:?}: analytic {analytic:e} vs fd {fd:e}",
                        self.id()
                    )));
                }
                Ok(())
            };
            compare("u".into(), d.fy, &|j, e| j.u += e)?;
            for a in 0..dim {
                compare(format!("p{a}"), d.fp[a], &|j, e| j.p[a] += e)?;
                for b in 0..dim {
                    compare(format!("r{a}{b}"), d.fr[a][b], &|j, e| j.r[a][b] += e)?;
                }
            }
        }
        Ok(())
    }
}

fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    if c.is_finite() {
        1.0 / (c * c)
    } else {
        0.0
    }
}
