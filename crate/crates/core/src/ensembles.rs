//! Random interaction ensembles.
//!
//! * Wigner: independent centred Gaussian entries. In the complex case the
//!   real parts (diagonal included) and the off-diagonal imaginary parts have
//!   standard deviation `sigma_w / sqrt(2 N)`. The real-symmetric case is
//!   the orthogonally invariant GOE with off-diagonal variance `sigma_w^2 / N`.
//! * WBRM: a Wigner draw multiplied entrywise by a deterministic band profile
//!   `a((i - j) / b)`.
//! * RRM: `U D U^H` with `D` fixed and `U` Haar distributed.
//!
//! Every sample is projected onto the traceless subspace. In exact
//! normalization mode it is then rescaled so that `Tr(W^2) / N = sigma_w^2`.

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm_sq, qr_complex, qr_real, ComplexMatrix, HermitianOperator, C64};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Wigner,
    Wbrm,
    Rrm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    RealSymmetric,
    #[default]
    ComplexHermitian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandProfile {
    /// `a(x) = 1` for `|x| <= 1`, else 0.
    HardCutoff,
    /// `a(x) = exp(-x^2 / 2)`.
    Gaussian,
}

impl BandProfile {
    pub fn value(self, x: f64) -> f64 {
        match self {
            BandProfile::HardCutoff => {
                if x.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            BandProfile::Gaussian => (-0.5 * x * x).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub profile: BandProfile,
    pub bandwidth: usize,
}

impl Band {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let offset = i as f64 - j as f64;
        self.profile.value(offset / self.bandwidth as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    #[default]
    Exact,
    Expectation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedSpectrum {
    /// Semicircle-law quantiles scaled to spectrum variance `sigma_w^2`.
    Semicircle,
}

/// The diagonal of `D` for the RRM ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixedSpectrum {
    Named(NamedSpectrum),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    #[serde(default)]
    pub symmetry: Symmetry,
    pub dim: usize,
    pub sigma_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<Band>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_spectrum: Option<FixedSpectrum>,
    #[serde(default)]
    pub normalization: NormalizationMode,
}

impl EnsembleSpec {
    pub fn wigner(dim: usize, sigma_w: f64) -> Self {
        Self {
            kind: EnsembleKind::Wigner,
            symmetry: Symmetry::ComplexHermitian,
            dim,
            sigma_w,
            band: None,
            fixed_spectrum: None,
            normalization: NormalizationMode::Exact,
        }
    }

    pub fn wbrm(dim: usize, sigma_w: f64, band: Band) -> Self {
        Self {
            kind: EnsembleKind::Wbrm,
            band: Some(band),
            ..Self::wigner(dim, sigma_w)
        }
    }

    /// RRM with a semicircle spectrum of variance `sigma_w^2`.
    pub fn rrm_semicircle(dim: usize, sigma_w: f64) -> Self {
        Self {
            kind: EnsembleKind::Rrm,
            fixed_spectrum: Some(FixedSpectrum::Named(NamedSpectrum::Semicircle)),
            ..Self::wigner(dim, sigma_w)
        }
    }

    /// RRM with an explicit spectrum. `sigma_w` is set to its standard deviation.
    pub fn rrm(spectrum: Vec<f64>) -> Self {
        let n = spectrum.len().max(1) as f64;
        let sigma = (spectrum.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        Self {
            kind: EnsembleKind::Rrm,
            dim: spectrum.len(),
            sigma_w: sigma,
            fixed_spectrum: Some(FixedSpectrum::Values(spectrum)),
            ..Self::wigner(0, 0.0)
        }
    }

    pub fn with_symmetry(mut self, symmetry: Symmetry) -> Self {
        self.symmetry = symmetry;
        self
    }

    pub fn with_normalization(mut self, normalization: NormalizationMode) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidEnsemble("dim must be at least 1".into()));
        }
        if self.dim > crate::linalg::MAX_DIM {
            return Err(Error::TooLarge {
                dim: self.dim,
                max: crate::linalg::MAX_DIM,
            });
        }
        let explicit_rrm = matches!(
            (self.kind, &self.fixed_spectrum),
            (EnsembleKind::Rrm, Some(FixedSpectrum::Values(_)))
        );
        // An explicit RRM spectrum carries its own scale and may be zero.
        if !explicit_rrm && !(self.sigma_w.is_finite() && self.sigma_w > 0.0) {
            return Err(Error::InvalidEnsemble(format!(
                "sigma_w must be positive and finite, got {}",
                self.sigma_w
            )));
        }
        match self.kind {
            EnsembleKind::Wigner => {}
            EnsembleKind::Wbrm => match self.band {
                None => return Err(Error::InvalidEnsemble("WBRM requires a band".into())),
                Some(b) if b.bandwidth == 0 => {
                    return Err(Error::InvalidEnsemble("bandwidth must be at least 1".into()))
                }
                Some(_) => {}
            },
            EnsembleKind::Rrm => {
                self.resolved_spectrum()?;
            }
        }
        if self.kind != EnsembleKind::Rrm
            && self.normalization == NormalizationMode::Exact
            && self.dim == 1
        {
            return Err(Error::Infeasible(
                "a traceless 1x1 interaction is zero and cannot have sigma_w > 0".into(),
            ));
        }
        Ok(())
    }

    /// The diagonal of `D` for RRM, checked for length and zero mean.
    pub fn resolved_spectrum(&self) -> Result<Vec<f64>> {
        let values = match &self.fixed_spectrum {
            None => return Err(Error::InvalidEnsemble("RRM requires a fixed spectrum".into())),
            Some(FixedSpectrum::Named(NamedSpectrum::Semicircle)) => {
                semicircle_quantiles(self.dim, self.sigma_w)
            }
            Some(FixedSpectrum::Values(v)) => v.clone(),
        };
        if values.len() != self.dim {
            return Err(Error::InvalidEnsemble(format!(
                "fixed spectrum has {} values for dimension {}",
                values.len(),
                self.dim
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidEnsemble("fixed spectrum is not finite".into()));
        }
        let scale = values.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if mean.abs() > 1e-12 * scale {
            return Err(Error::InvalidEnsemble(format!(
                "fixed spectrum must be centred, mean is {mean:e}"
            )));
        }
        Ok(values)
    }
}

/// Draw one interaction matrix from `spec`.
pub fn sample(spec: &EnsembleSpec, rng: &mut SeededRng) -> Result<HermitianOperator> {
    match spec.kind {
        EnsembleKind::Wigner => sample_wigner(spec, rng),
        EnsembleKind::Wbrm => sample_wbrm(spec, rng),
        EnsembleKind::Rrm => sample_rrm(spec, rng),
    }
}

pub fn sample_wigner(spec: &EnsembleSpec, rng: &mut SeededRng) -> Result<HermitianOperator> {
    expect_kind(spec, EnsembleKind::Wigner)?;
    spec.validate()?;
    let raw = raw_wigner(spec.dim, spec.symmetry, spec.sigma_w, rng);
    finish(raw, spec)
}

pub fn sample_wbrm(spec: &EnsembleSpec, rng: &mut SeededRng) -> Result<HermitianOperator> {
    expect_kind(spec, EnsembleKind::Wbrm)?;
    spec.validate()?;
    let band = spec.band.expect("validated");
    if band.bandwidth >= spec.dim {
        log::warn!(
            "bandwidth {} >= dimension {}: the band profile covers the whole matrix",
            band.bandwidth,
            spec.dim
        );
    }
    let mut raw = raw_wigner(spec.dim, spec.symmetry, spec.sigma_w, rng);
    let n = spec.dim;
    for i in 0..n {
        for j in 0..n {
            let a = band.weight(i, j);
            if a != 1.0 {
                raw[(i, j)] *= a;
            }
        }
    }
    finish(raw, spec)
}

/// Haar-distributed unitary (or orthogonal) matrix from the QR decomposition
/// of a Ginibre matrix, with the phases of `diag(R)` moved into `Q`.
pub fn sample_haar_unitary(dim: usize, symmetry: Symmetry, rng: &mut SeededRng) -> ComplexMatrix {
    assert!(dim >= 1, "Haar sampling needs dim >= 1");
    match symmetry {
        Symmetry::ComplexHermitian => {
            let scale = std::f64::consts::FRAC_1_SQRT_2;
            let entries: Vec<C64> = (0..dim * dim)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(re * scale, im * scale)
                })
                .collect();
            let ginibre = Mat::<C64>::from_fn(dim, dim, |i, j| entries[i * dim + j]);
            let (q, r) = qr_complex(ginibre);
            ComplexMatrix::from_fn(dim, dim, |i, j| {
                let rj = r[j];
                let phase = if rj.norm() > 0.0 { rj / rj.norm() } else { C64::new(1.0, 0.0) };
                q[(i, j)] * phase
            })
        }
        Symmetry::RealSymmetric => {
            let entries: Vec<f64> = (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect();
            let ginibre = Mat::<f64>::from_fn(dim, dim, |i, j| entries[i * dim + j]);
            let (q, r) = qr_real(ginibre);
            ComplexMatrix::from_fn(dim, dim, |i, j| {
                let sign = if r[j] < 0.0 { -1.0 } else { 1.0 };
                C64::new(q[(i, j)] * sign, 0.0)
            })
        }
    }
}

pub fn sample_rrm(spec: &EnsembleSpec, rng: &mut SeededRng) -> Result<HermitianOperator> {
    expect_kind(spec, EnsembleKind::Rrm)?;
    spec.validate()?;
    let diagonal = spec.resolved_spectrum()?;
    let n = spec.dim;
    let u = sample_haar_unitary(n, spec.symmetry, rng);
    let ud = ComplexMatrix::from_fn(n, n, |i, k| u[(i, k)] * diagonal[k]);
    let w = ud.matmul(&u.adjoint())?;
    Ok(HermitianOperator::hermitize(w))
}

/// Lower bounds on the Poincaré constant of an ensemble, with respect to the
/// Frobenius gradient on the space the ensemble lives in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareBound {
    /// `N / (2 sigma^2)`, valid for every ensemble here.
    pub common: f64,
    /// The exact Gaussian constant, for Wigner and WBRM only.
    pub gaussian: Option<f64>,
}

impl PoincareBound {
    pub fn tightest(&self) -> f64 {
        self.gaussian.map_or(self.common, |g| g.max(self.common))
    }
}

/// Lower bound on the Poincaré constant of `spec`.
///
/// For Wigner and WBRM (expectation mode), the largest coordinate variance
/// in an orthonormal Hermitian basis is `sigma_w^2 / N` in the complex case
/// and `2 sigma_w^2 / N` in the real case, so the Gaussian constant is
/// `N / sigma_w^2` resp. `N / (2 sigma_w^2)`. A band profile `0 <= a <= 1`
/// only shrinks variances. For RRM the bound is `N / (2 sigma_D^2)` with
/// `sigma_D^2 = Tr(D^2) / N`.
pub fn poincare_lower_bound(spec: &EnsembleSpec) -> Result<PoincareBound> {
    spec.validate()?;
    let n = spec.dim as f64;
    Ok(match spec.kind {
        EnsembleKind::Wigner | EnsembleKind::Wbrm => {
            let var = spec.sigma_w * spec.sigma_w;
            let gaussian = match spec.symmetry {
                Symmetry::ComplexHermitian => n / var,
                Symmetry::RealSymmetric => n / (2.0 * var),
            };
            PoincareBound {
                common: n / (2.0 * var),
                gaussian: Some(gaussian),
            }
        }
        EnsembleKind::Rrm => {
            let d = spec.resolved_spectrum()?;
            let var_d = d.iter().map(|x| x * x).sum::<f64>() / n;
            PoincareBound {
                common: n / (2.0 * var_d),
                gaussian: None,
            }
        }
    })
}

/// Quantiles `F^{-1}((k + 1/2) / n)` of the semicircle law with variance
/// `sigma^2`, centred and rescaled so that the returned values have mean 0
/// and `sum x^2 / n = sigma^2` exactly.
pub fn semicircle_quantiles(n: usize, sigma: f64) -> Vec<f64> {
    let radius = 2.0 * sigma;
    let cdf = |x: f64| {
        let u = (x / radius).clamp(-1.0, 1.0);
        0.5 + (u * (1.0 - u * u).sqrt() + u.asin()) / std::f64::consts::PI
    };
    let mut values = vec![0.0; n];
    for k in 0..n / 2 {
        let q = (k as f64 + 0.5) / n as f64;
        let (mut lo, mut hi) = (-radius, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * radius {
                break;
            }
        }
        let x = 0.5 * (lo + hi);
        values[k] = x;
        values[n - 1 - k] = -x;
    }
    let var = values.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if var > 0.0 {
        let s = sigma / var.sqrt();
        values.iter_mut().for_each(|x| *x *= s);
    }
    values
}

fn expect_kind(spec: &EnsembleSpec, kind: EnsembleKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::InvalidEnsemble(format!(
            "expected a {kind:?} spec, got {:?}",
            spec.kind
        )));
    }
    Ok(())
}

fn raw_wigner(n: usize, symmetry: Symmetry, sigma_w: f64, rng: &mut SeededRng) -> ComplexMatrix {
    let nf = n as f64;
    let (off_std, diag_std) = match symmetry {
        Symmetry::ComplexHermitian => {
            let s = sigma_w / (2.0 * nf).sqrt();
            (s, s)
        }
        Symmetry::RealSymmetric => (sigma_w / nf.sqrt(), sigma_w * (2.0 / nf).sqrt()),
    };
    let mut w = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            if i == j {
                let x: f64 = rng.sample(StandardNormal);
                w[(i, i)] = C64::new(diag_std * x, 0.0);
                continue;
            }
            let re: f64 = rng.sample(StandardNormal);
            let z = match symmetry {
                Symmetry::ComplexHermitian => {
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(off_std * re, off_std * im)
                }
                Symmetry::RealSymmetric => C64::new(off_std * re, 0.0),
            };
            w[(i, j)] = z;
            w[(j, i)] = z.conj();
        }
    }
    w
}

fn finish(mut w: ComplexMatrix, spec: &EnsembleSpec) -> Result<HermitianOperator> {
    let n = spec.dim;
    let shift = w.trace().re / n as f64;
    for i in 0..n {
        w[(i, i)].re -= shift;
    }
    if spec.normalization == NormalizationMode::Exact {
        let norm_sq = frobenius_norm_sq(&w);
        if norm_sq <= 0.0 {
            return Err(Error::Infeasible(
                "sample vanished after the traceless projection; cannot rescale".into(),
            ));
        }
        let factor = spec.sigma_w * (n as f64 / norm_sq).sqrt();
        w = w.scaled(C64::new(factor, 0.0));
    }
    Ok(HermitianOperator::hermitize(w))
}
