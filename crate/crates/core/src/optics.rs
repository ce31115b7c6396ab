//! Normal-incidence transfer-matrix model of a thin-film stack.
//!
//! Conventions:
//! - complex index `n + ik` with `k >= 0` meaning absorption;
//! - interface matrix `M_ab = (1/t_ab) [[1, r_ab], [r_ab, 1]]`;
//! - propagation matrix `P = diag(exp(-i delta), exp(+i delta))` with
//!   `delta = 2 pi n d / lambda`.
//!
//! The product `M_01 P_1 M_12 ... P_L M_L,L+1` maps the substrate-side field
//! pair `(u, 0)` onto the incident-side pair `(u0, v)`, so with `u0 = 1` we get
//! `u = 1 / M[0][0]` and `v = M[1][0] / M[0][0]`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::materials::{DispersionTable, SpectralCurve, SpectralGrid};

type Mat2 = [[Complex64; 2]; 2];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Reflection and transmission amplitudes `(r, t)` for light going from
/// medium `a` into medium `b`. `t` is returned as `1 + r`, which equals
/// `2 n_a / (n_a + n_b)`.
pub fn fresnel(n_a: Complex64, n_b: Complex64) -> Result<(Complex64, Complex64)> {
    let denom = n_a + n_b;
    if denom.norm() < 1e-300 || !denom.is_finite() {
        return Err(Error::Domain(format!(
            "fresnel denominator n_a + n_b = {denom} is degenerate"
        )));
    }
    let r = (n_a - n_b) / denom;
    Ok((r, Complex64::new(1.0, 0.0) + r))
}

/// Single-pass phase `2 pi n d / lambda` accumulated across a layer.
pub fn phase_delta(n: Complex64, thickness_nm: f64, lambda_nm: f64) -> Result<Complex64> {
    if !(lambda_nm > 0.0) || !lambda_nm.is_finite() {
        return Err(Error::Domain(format!(
            "wavelength must be positive, got {lambda_nm}"
        )));
    }
    if !(thickness_nm >= 0.0) || !thickness_nm.is_finite() {
        return Err(Error::Domain(format!(
            "thickness must be >= 0, got {thickness_nm}"
        )));
    }
    Ok(n * (2.0 * PI * thickness_nm / lambda_nm))
}

#[derive(Debug, Clone)]
pub struct Layer {
    material: Arc<DispersionTable>,
    thickness_nm: f64,
}

impl Layer {
    pub fn new(material: Arc<DispersionTable>, thickness_nm: f64) -> Result<Self> {
        if !(thickness_nm > 0.0) || !thickness_nm.is_finite() {
            return Err(Error::Domain(format!(
                "layer `{}` needs a finite positive thickness, got {thickness_nm}",
                material.material_id()
            )));
        }
        Ok(Self {
            material,
            thickness_nm,
        })
    }

    pub fn material(&self) -> &Arc<DispersionTable> {
        &self.material
    }

    pub fn thickness_nm(&self) -> f64 {
        self.thickness_nm
    }
}

/// Thin layers (top to bottom) between a semi-infinite incident medium and a
/// semi-infinite substrate.
#[derive(Debug, Clone)]
pub struct LayerStack {
    incident: Arc<DispersionTable>,
    layers: Vec<Layer>,
    substrate: Arc<DispersionTable>,
}

impl LayerStack {
    pub fn new(
        incident: Arc<DispersionTable>,
        layers: Vec<Layer>,
        substrate: Arc<DispersionTable>,
    ) -> Self {
        Self {
            incident,
            layers,
            substrate,
        }
    }

    pub fn incident(&self) -> &Arc<DispersionTable> {
        &self.incident
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn substrate(&self) -> &Arc<DispersionTable> {
        &self.substrate
    }

    fn media(&self) -> impl Iterator<Item = &Arc<DispersionTable>> {
        std::iter::once(&self.incident)
            .chain(self.layers.iter().map(|l| &l.material))
            .chain(std::iter::once(&self.substrate))
    }

    /// Indices of every medium at `lambda_nm`, incident first, substrate last.
    pub fn indices_at(&self, lambda_nm: f64) -> Result<Vec<Complex64>> {
        self.media().map(|m| m.index_at(lambda_nm)).collect()
    }

    fn is_passive_at(indices: &[Complex64]) -> bool {
        indices.iter().all(|n| n.im >= 0.0)
    }
}

/// Field amplitudes for unit incident amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSolution {
    pub reflected: Complex64,
    pub transmitted: Complex64,
}

impl FieldSolution {
    pub const INCIDENT: Complex64 = Complex64::new(1.0, 0.0);

    pub fn reflectance(&self) -> f64 {
        (self.reflected / Self::INCIDENT).norm_sqr()
    }
}

fn interface_matrix(n_a: Complex64, n_b: Complex64) -> Result<Mat2> {
    let (r, t) = fresnel(n_a, n_b)?;
    let inv_t = t.inv();
    if !inv_t.is_finite() {
        return Err(Error::Domain(format!(
            "zero transmission at interface {n_a} -> {n_b}"
        )));
    }
    Ok([[inv_t, r * inv_t], [r * inv_t, inv_t]])
}

fn solve(indices: &[Complex64], thicknesses: &[f64], lambda_nm: f64) -> Result<FieldSolution> {
    let mut m = interface_matrix(indices[0], indices[1])?;
    for (l, &d) in thicknesses.iter().enumerate() {
        let n = indices[l + 1];
        let delta = phase_delta(n, d, lambda_nm)?;
        let i_delta = Complex64::i() * delta;
        let zero = Complex64::new(0.0, 0.0);
        let p = [[(-i_delta).exp(), zero], [zero, i_delta.exp()]];
        m = mat_mul(&m, &p);
        m = mat_mul(&m, &interface_matrix(n, indices[l + 2])?);
    }
    let transmitted = FieldSolution::INCIDENT / m[0][0];
    let reflected = m[1][0] * transmitted;
    if !(transmitted.is_finite() && reflected.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite field amplitudes at {lambda_nm} nm"
        )));
    }
    Ok(FieldSolution {
        reflected,
        transmitted,
    })
}

/// Reflected and transmitted amplitudes of `stack` at `lambda_nm`.
pub fn stack_transfer(stack: &LayerStack, lambda_nm: f64) -> Result<FieldSolution> {
    let indices = stack.indices_at(lambda_nm)?;
    if indices[0].im != 0.0 {
        return Err(Error::Domain(format!(
            "incident medium `{}` must be lossless, k = {} at {lambda_nm} nm",
            stack.incident.material_id(),
            indices[0].im
        )));
    }
    let thicknesses: Vec<f64> = stack.layers.iter().map(|l| l.thickness_nm).collect();
    solve(&indices, &thicknesses, lambda_nm)
}

/// `R = |v / u0|^2`.
pub fn reflectance(stack: &LayerStack, lambda_nm: f64) -> Result<f64> {
    let indices = stack.indices_at(lambda_nm)?;
    let r = stack_transfer(stack, lambda_nm)?.reflectance();
    if LayerStack::is_passive_at(&indices) && r > 1.0 + 1e-9 {
        return Err(Error::Domain(format!(
            "passive stack produced R = {r} > 1 at {lambda_nm} nm"
        )));
    }
    Ok(r)
}

pub fn reflectance_spectrum(stack: &LayerStack, grid: SpectralGrid) -> Result<SpectralCurve> {
    crate::materials::sample_curve(grid, |l| reflectance(stack, l))
}

/// `R_flake(lambda) - R_bare(lambda)` on `grid`.
pub fn contrast_spectrum(
    flake: &LayerStack,
    bare: &LayerStack,
    grid: SpectralGrid,
) -> Result<SpectralCurve> {
    let a = reflectance_spectrum(flake, grid)?;
    let b = reflectance_spectrum(bare, grid)?;
    let diff = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x - y)
        .collect();
    SpectralCurve::new(grid, diff)
}
