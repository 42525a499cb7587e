use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::powm;

/// Discrete-time LTI model in deviation variables:
/// `x⁺ = A x + B u + F w`, `y = C x + D u + G w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// Seconds per model step.
    pub sample_period: f64,
}

impl LtiModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        f: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        g: DMatrix<f64>,
        sample_period: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        check_dim("A cols", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("F rows", n, f.nrows())?;
        check_dim("C cols", n, c.ncols())?;
        check_dim("D rows", c.nrows(), d.nrows())?;
        check_dim("D cols", b.ncols(), d.ncols())?;
        check_dim("G rows", c.nrows(), g.nrows())?;
        check_dim("G cols", f.ncols(), g.ncols())?;
        if !(sample_period > 0.0) {
            return Err(Error::InvalidConfig(format!("sample period must be positive, got {sample_period}")));
        }
        Ok(Self {
            a,
            b,
            f,
            c,
            d,
            g,
            sample_period,
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_disturbances(&self) -> usize {
        self.f.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.f * w
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u + &self.g * w
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|l| l.norm())
            .fold(0.0, f64::max)
    }

    /// Zero-order-hold transition over `duration` seconds, obtained as a real
    /// power of the augmented one-period transition matrix.
    pub fn resampled(&self, duration: f64) -> Result<StepMatrices> {
        if !(duration > 0.0) {
            return Err(Error::InvalidConfig(format!("resampling step must be positive, got {duration}")));
        }
        let (n, nu, nw) = (self.n_states(), self.n_inputs(), self.n_disturbances());
        let dim = n + nu + nw;
        let mut m = DMatrix::identity(dim, dim);
        m.view_mut((0, 0), (n, n)).copy_from(&self.a);
        m.view_mut((0, n), (n, nu)).copy_from(&self.b);
        m.view_mut((0, n + nu), (n, nw)).copy_from(&self.f);
        let p = powm(&m, duration / self.sample_period)?;
        Ok(StepMatrices {
            a: p.view((0, 0), (n, n)).into_owned(),
            b: p.view((0, n), (n, nu)).into_owned(),
            f: p.view((0, n + nu), (n, nw)).into_owned(),
            duration,
        })
    }
}

/// Transition matrices of an [`LtiModel`] over an arbitrary hold interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub duration: f64,
}

impl StepMatrices {
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.f * w
    }
}

/// Absolute values of the variables at which the model was linearised.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub x0: DVector<f64>,
    pub u0: DVector<f64>,
    pub y0: DVector<f64>,
    pub w0: DVector<f64>,
}

impl OperatingPoint {
    pub fn validate(&self, model: &LtiModel) -> Result<()> {
        check_dim("operating state", model.n_states(), self.x0.len())?;
        check_dim("operating input", model.n_inputs(), self.u0.len())?;
        check_dim("operating output", model.n_outputs(), self.y0.len())?;
        check_dim("operating disturbance", model.n_disturbances(), self.w0.len())
    }

    pub fn zeros(model: &LtiModel) -> Self {
        Self {
            x0: DVector::zeros(model.n_states()),
            u0: DVector::zeros(model.n_inputs()),
            y0: DVector::zeros(model.n_outputs()),
            w0: DVector::zeros(model.n_disturbances()),
        }
    }
}

/// State after `j` steps of `x⁺ = A x + B u + F w`, where column `i` of
/// `profile` / `w_forecast` holds the input / disturbance of step `i + 1`.
pub fn predict(
    model: &LtiModel,
    x: &DVector<f64>,
    profile: &DMatrix<f64>,
    w_forecast: &DMatrix<f64>,
    j: usize,
) -> Result<DVector<f64>> {
    check_dim("state", model.n_states(), x.len())?;
    check_dim("profile rows", model.n_inputs(), profile.nrows())?;
    check_dim("forecast rows", model.n_disturbances(), w_forecast.nrows())?;
    if j > profile.ncols() || j > w_forecast.ncols() {
        return Err(Error::DimensionMismatch {
            context: "prediction horizon",
            expected: j,
            actual: profile.ncols().min(w_forecast.ncols()),
        });
    }
    let mut state = x.clone();
    for i in 0..j {
        state = &model.a * &state + &model.b * profile.column(i) + &model.f * w_forecast.column(i);
    }
    Ok(state)
}
