//! Sine-collocation basis for Navier boundary conditions.
//!
//! Fields live on the interior nodes `x_k = k L / N`, `k = 1..N-1` (tensor
//! product in 2D) and are stored as `n1 x n2` matrices (`n2 = 1` in 1D). The
//! discrete sine transform diagonalizes the Dirichlet Laplacian, so the
//! biharmonic operator is `(|kappa|^2)^2` in mode space. Lower-order
//! derivatives are pseudospectral: transform, multiply by the wavenumber,
//! evaluate the cosine (first derivative) or sine (second derivative)
//! series back on the nodes.

use nalgebra::DMatrix;
use std::f64::consts::PI;

use crate::problem::Grid;

pub type Field = DMatrix<f64>;

/// One axis of the tensor-product basis.
#[derive(Debug, Clone)]
pub struct AxisBasis {
    pub length: f64,
    pub cells: usize,
    pub nodes: Vec<f64>,
    pub kappa: Vec<f64>,
    synth: DMatrix<f64>,
    analysis: DMatrix<f64>,
    d1: DMatrix<f64>,
    d1_t: DMatrix<f64>,
    d2: DMatrix<f64>,
    d2_t: DMatrix<f64>,
}

impl AxisBasis {
    fn new(length: f64, cells: usize) -> Self {
        let m = cells - 1;
        let nodes: Vec<f64> = (1..=m).map(|k| k as f64 * length / cells as f64).collect();
        let kappa: Vec<f64> = (1..=m).map(|j| j as f64 * PI / length).collect();
        let synth = DMatrix::from_fn(m, m, |k, j| ((j + 1) as f64 * PI * (k + 1) as f64 / cells as f64).sin());
        let analysis = synth.transpose() * (2.0 / cells as f64);
        let cos = DMatrix::from_fn(m, m, |k, j| {
            ((j + 1) as f64 * PI * (k + 1) as f64 / cells as f64).cos() * kappa[j]
        });
        let d1 = &cos * &analysis;
        let kk = DMatrix::from_fn(m, m, |k, j| -synth[(k, j)] * kappa[j] * kappa[j]);
        let d2 = &kk * &analysis;
        let d1_t = d1.transpose();
        let d2_t = d2.transpose();
        AxisBasis {
            length,
            cells,
            nodes,
            kappa,
            synth,
            analysis,
            d1,
            d1_t,
            d2,
            d2_t,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Which 1D derivative matrix to apply along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    First,
    FirstT,
    Second,
    SecondT,
}

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    dim: usize,
    axes: Vec<AxisBasis>,
    shape: (usize, usize),
    cell_volume: f64,
    biharmonic: DMatrix<f64>,
    laplacian: DMatrix<f64>,
}

impl SpectralBasis {
    pub fn new(grid: &Grid) -> Self {
        let dim = grid.dimension();
        let axes: Vec<AxisBasis> = (0..dim).map(|a| AxisBasis::new(grid.extents()[a], grid.n())).collect();
        let shape = grid.shape();
        let k2 = |i: usize, j: usize| {
            let mut s = axes[0].kappa[i].powi(2);
            if dim == 2 {
                s += axes[1].kappa[j].powi(2);
            }
            s
        };
        let laplacian = DMatrix::from_fn(shape.0, shape.1, |i, j| -k2(i, j));
        let biharmonic = DMatrix::from_fn(shape.0, shape.1, |i, j| k2(i, j).powi(2));
        SpectralBasis {
            dim,
            axes,
            shape,
            cell_volume: grid.cell_volume(),
            biharmonic,
            laplacian,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn node_count(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn axis(&self, a: usize) -> &AxisBasis {
        &self.axes[a]
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Biharmonic eigenvalues `|kappa|^4` laid out like a mode field.
    pub fn biharmonic_spectrum(&self) -> &DMatrix<f64> {
        &self.biharmonic
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.shape.0, self.shape.1)
    }

    pub fn to_modes(&self, u: &Field) -> Field {
        let c = &self.axes[0].analysis * u;
        if self.dim == 2 {
            c * self.axes[1].analysis.transpose()
        } else {
            c
        }
    }

    pub fn from_modes(&self, c: &Field) -> Field {
        let u = &self.axes[0].synth * c;
        if self.dim == 2 {
            u * self.axes[1].synth.transpose()
        } else {
            u
        }
    }

    /// Single sine mode `prod_a sin(m_a pi x_a / L_a)` sampled on the nodes (modes start at 1).
    pub fn sine_mode(&self, modes: &[usize]) -> Field {
        let mut c = self.zeros();
        let j = if self.dim == 2 { modes[1] - 1 } else { 0 };
        c[(modes[0] - 1, j)] = 1.0;
        self.from_modes(&c)
    }

    pub fn apply_axis(&self, d: Deriv, u: &Field, axis: usize) -> Field {
        let ax = &self.axes[axis];
        let (m, mt) = match d {
            Deriv::First => (&ax.d1, &ax.d1_t),
            Deriv::FirstT => (&ax.d1_t, &ax.d1),
            Deriv::Second => (&ax.d2, &ax.d2_t),
            Deriv::SecondT => (&ax.d2_t, &ax.d2),
        };
        match axis {
            0 => m * u,
            _ => u * mt,
        }
    }

    pub fn gradient(&self, u: &Field) -> Vec<Field> {
        (0..self.dim).map(|a| self.apply_axis(Deriv::First, u, a)).collect()
    }

    /// Second derivative `d^2 u / dx_i dx_j`.
    pub fn hessian_entry(&self, u: &Field, i: usize, j: usize) -> Field {
        if i == j {
            self.apply_axis(Deriv::Second, u, i)
        } else {
            let t = self.apply_axis(Deriv::First, u, i);
            self.apply_axis(Deriv::First, &t, j)
        }
    }

    /// Exact matrix transpose of [`SpectralBasis::hessian_entry`].
    pub fn hessian_entry_t(&self, w: &Field, i: usize, j: usize) -> Field {
        if i == j {
            self.apply_axis(Deriv::SecondT, w, i)
        } else {
            let t = self.apply_axis(Deriv::FirstT, w, j);
            self.apply_axis(Deriv::FirstT, &t, i)
        }
    }

    pub fn laplacian(&self, u: &Field) -> Field {
        let mut out = self.apply_axis(Deriv::Second, u, 0);
        for a in 1..self.dim {
            out += self.apply_axis(Deriv::Second, u, a);
        }
        out
    }

    pub fn laplacian_t(&self, w: &Field) -> Field {
        let mut out = self.apply_axis(Deriv::SecondT, w, 0);
        for a in 1..self.dim {
            out += self.apply_axis(Deriv::SecondT, w, a);
        }
        out
    }

    pub fn biharmonic(&self, u: &Field) -> Field {
        let c = self.to_modes(u).component_mul(&self.biharmonic);
        self.from_modes(&c)
    }

    /// Solve `(I + theta * Delta^2) x = r` exactly in mode space.
    pub fn shifted_biharmonic_solve(&self, r: &Field, theta: f64) -> Field {
        let c = self
            .to_modes(r)
            .zip_map(&self.biharmonic, |c, mu| c / (1.0 + theta * mu));
        self.from_modes(&c)
    }

    pub fn inner(&self, u: &Field, w: &Field) -> f64 {
        self.cell_volume * u.dot(w)
    }

    pub fn norm(&self, u: &Field) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// `||u||^2 + ||grad u||^2 + ||Delta u||^2` evaluated in mode space.
    pub fn h2_norm_sq(&self, u: &Field) -> f64 {
        let c = self.to_modes(u);
        let parseval: f64 = self.axes.iter().map(|a| a.length / 2.0).product();
        let mut s = 0.0;
        for (cv, lap) in c.iter().zip(self.laplacian.iter()) {
            let k2 = -lap;
            s += (1.0 + k2 + k2 * k2) * cv * cv;
        }
        parseval * s
    }
}
