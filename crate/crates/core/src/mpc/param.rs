use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

use super::model::OperatingPoint;

/// Piecewise-affine control parametrization.
///
/// The parameter vector stores, for each decision instant in order, the
/// values of all inputs (physical first, then virtual violation inputs):
/// `p[k·n_inputs + i]`. Samples between two decision instants are linearly
/// interpolated; samples after the last instant hold its value.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlParametrization {
    decision_instants: Vec<usize>,
    check_instants: Vec<usize>,
    horizon: usize,
    n_physical: usize,
    n_virtual: usize,
    expansion: DMatrix<f64>,
}

impl ControlParametrization {
    pub fn new(
        mut decision_instants: Vec<usize>,
        mut check_instants: Vec<usize>,
        horizon: usize,
        n_physical: usize,
        n_virtual: usize,
    ) -> Result<Self> {
        if horizon == 0 || n_physical == 0 {
            return Err(Error::InvalidConfig("horizon and physical input count must be positive".into()));
        }
        for (name, list) in [("decision", &mut decision_instants), ("check", &mut check_instants)] {
            list.dedup();
            if list.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} instants must not be empty")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(format!("{name} instants must be increasing: {list:?}")));
            }
            if list[0] == 0 || *list.last().unwrap() > horizon {
                return Err(Error::InvalidConfig(format!(
                    "{name} instants must lie in 1..={horizon}: {list:?}"
                )));
            }
        }
        let mut par = Self {
            decision_instants,
            check_instants,
            horizon,
            n_physical,
            n_virtual,
            expansion: DMatrix::zeros(0, 0),
        };
        par.expansion = par.build_expansion();
        Ok(par)
    }

    /// Seven decision instants up to a 100-sample horizon, constraints
    /// checked at fourteen instants, 3 physical and 4 virtual inputs.
    pub fn reference() -> Self {
        Self::new(
            vec![1, 2, 4, 8, 16, 50, 50, 100],
            vec![1, 2, 3, 4, 6, 8, 16, 24, 32, 48, 60, 72, 84, 100],
            100,
            3,
            4,
        )
        .expect("reference parametrization is valid")
    }

    /// The reference instants clipped to a shorter horizon.
    pub fn reference_with_horizon(horizon: usize) -> Result<Self> {
        let scale = |list: &[usize]| -> Vec<usize> {
            let mut out: Vec<usize> = list
                .iter()
                .map(|&i| ((i * horizon) as f64 / 100.0).round().max(1.0) as usize)
                .collect();
            out.dedup();
            out
        };
        Self::new(
            scale(&[1, 2, 4, 8, 16, 50, 100]),
            scale(&[1, 2, 3, 4, 6, 8, 16, 24, 32, 48, 60, 72, 84, 100]),
            horizon,
            3,
            4,
        )
    }

    pub fn decision_instants(&self) -> &[usize] {
        &self.decision_instants
    }

    pub fn check_instants(&self) -> &[usize] {
        &self.check_instants
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_physical(&self) -> usize {
        self.n_physical
    }

    pub fn n_virtual(&self) -> usize {
        self.n_virtual
    }

    pub fn n_inputs(&self) -> usize {
        self.n_physical + self.n_virtual
    }

    pub fn n_params(&self) -> usize {
        self.n_inputs() * self.decision_instants.len()
    }

    pub fn param_index(&self, instant: usize, input: usize) -> usize {
        instant * self.n_inputs() + input
    }

    /// Knot weights at a (possibly fractional) sample position `t`:
    /// `value(t) = w_lo·p[k_lo] + w_hi·p[k_hi]`.
    pub fn knot_weights(&self, t: f64) -> (usize, f64, usize, f64) {
        let knots = &self.decision_instants;
        let last = knots.len() - 1;
        if t <= knots[0] as f64 {
            return (0, 1.0, 0, 0.0);
        }
        if t >= knots[last] as f64 {
            return (last, 1.0, last, 0.0);
        }
        let k = knots.partition_point(|&d| (d as f64) <= t) - 1;
        let (lo, hi) = (knots[k] as f64, knots[k + 1] as f64);
        let w_hi = (t - lo) / (hi - lo);
        (k, 1.0 - w_hi, k + 1, w_hi)
    }

    fn build_expansion(&self) -> DMatrix<f64> {
        let ni = self.n_inputs();
        let mut e = DMatrix::zeros(self.horizon * ni, self.n_params());
        for j in 1..=self.horizon {
            let (k_lo, w_lo, k_hi, w_hi) = self.knot_weights(j as f64);
            for i in 0..ni {
                let row = (j - 1) * ni + i;
                e[(row, self.param_index(k_lo, i))] += w_lo;
                e[(row, self.param_index(k_hi, i))] += w_hi;
            }
        }
        e
    }

    /// Linear map from `p` to the stacked profile `[u(1); u(2); …; u(N)]`.
    pub fn expansion_matrix(&self) -> &DMatrix<f64> {
        &self.expansion
    }

    /// Rows of the expansion matrix producing input block of sample `j` (1-based).
    pub fn sample_rows(&self, j: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.expansion.rows((j - 1) * self.n_inputs(), self.n_inputs())
    }

    /// Full profile, one column per sample `1..=N`.
    pub fn expand_profile(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("parameter vector", self.n_params(), p.len())?;
        let stacked = &self.expansion * p;
        Ok(DMatrix::from_column_slice(self.n_inputs(), self.horizon, stacked.as_slice()))
    }

    /// Profile value at a fractional sample position.
    pub fn value_at(&self, p: &DVector<f64>, t: f64) -> DVector<f64> {
        let ni = self.n_inputs();
        let (k_lo, w_lo, k_hi, w_hi) = self.knot_weights(t);
        DVector::from_fn(ni, |i, _| w_lo * p[self.param_index(k_lo, i)] + w_hi * p[self.param_index(k_hi, i)])
    }

    /// Shifts the profile left by `shift` samples (holding the final value)
    /// and re-samples it at the decision instants.
    pub fn hot_start_shift(&self, p: &DVector<f64>, shift: usize) -> Result<DVector<f64>> {
        self.shift_by(p, shift as f64)
    }

    /// [`Self::hot_start_shift`] for a fractional number of samples.
    pub fn shift_by(&self, p: &DVector<f64>, shift: f64) -> Result<DVector<f64>> {
        check_dim("parameter vector", self.n_params(), p.len())?;
        if shift < 0.0 {
            return Err(Error::InvalidConfig(format!("shift must be non-negative, got {shift}")));
        }
        if shift == 0.0 {
            return Ok(p.clone());
        }
        let ni = self.n_inputs();
        let mut out = DVector::zeros(self.n_params());
        for (k, &d) in self.decision_instants.iter().enumerate() {
            let v = self.value_at(p, d as f64 + shift);
            out.rows_mut(k * ni, ni).copy_from(&v);
        }
        Ok(out)
    }

    /// Physical inputs of samples `1..=q` in deviation coordinates.
    pub fn first_controls(&self, p: &DVector<f64>, q: usize) -> Result<DMatrix<f64>> {
        if q > self.horizon {
            return Err(Error::InvalidConfig(format!("cannot take {q} samples of a {} horizon", self.horizon)));
        }
        let profile = self.expand_profile(p)?;
        Ok(profile.view((0, 0), (self.n_physical, q)).into_owned())
    }

    /// [`Self::first_controls`] shifted back to absolute units.
    pub fn first_controls_absolute(&self, p: &DVector<f64>, q: usize, op: &OperatingPoint) -> Result<DMatrix<f64>> {
        check_dim("operating input", self.n_physical, op.u0.len())?;
        let mut u = self.first_controls(p, q)?;
        for mut col in u.column_iter_mut() {
            col += &op.u0;
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_knots() -> ControlParametrization {
        ControlParametrization::new(vec![1, 4], vec![4], 6, 1, 0).unwrap()
    }

    #[test]
    fn reference_dimensions() {
        let par = ControlParametrization::reference();
        assert_eq!(par.decision_instants(), &[1, 2, 4, 8, 16, 50, 100]);
        assert_eq!(par.check_instants().len(), 14);
        assert_eq!(par.n_params(), 49);
    }

    #[test]
    fn invalid_instants() {
        assert!(ControlParametrization::new(vec![2, 1], vec![1], 5, 1, 0).is_err());
        assert!(ControlParametrization::new(vec![1, 9], vec![1], 5, 1, 0).is_err());
        assert!(ControlParametrization::new(vec![0, 2], vec![1], 5, 1, 0).is_err());
        assert!(ControlParametrization::new(vec![1], vec![], 5, 1, 0).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let par = two_knots();
        let prof = par.expand_profile(&DVector::from_vec(vec![0.0, 3.0])).unwrap();
        assert_eq!(prof.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 3.0, 3.0, 3.0]);

        let par = ControlParametrization::reference();
        let prof = par.expand_profile(&DVector::from_element(49, 2.5)).unwrap();
        assert!(prof.iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn expansion_rows_are_convex_combinations() {
        let par = ControlParametrization::reference();
        let e = par.expansion_matrix();
        for r in 0..e.nrows() {
            let row = e.row(r);
            assert!((row.sum() - 1.0).abs() < 1e-14);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn shift_examples() {
        let par = ControlParametrization::reference();
        let constant = DVector::from_element(49, -1.25);
        assert_eq!(par.hot_start_shift(&constant, 7).unwrap(), constant);

        let p = DVector::from_fn(49, |i, _| i as f64);
        assert_eq!(par.hot_start_shift(&p, 0).unwrap(), p);
        let collapsed = par.hot_start_shift(&p, 100).unwrap();
        let last = par.value_at(&p, 100.0);
        for k in 0..7 {
            assert_eq!(collapsed.rows(k * 7, 7).into_owned(), last);
        }
    }

    #[test]
    fn shift_matches_expanded_profile() {
        let par = ControlParametrization::reference();
        let p = DVector::from_fn(49, |i, _| ((i * 37) % 11) as f64 - 5.0);
        let prof = par.expand_profile(&p).unwrap();
        let shifted = par.hot_start_shift(&p, 3).unwrap();
        for (k, &d) in par.decision_instants().iter().enumerate() {
            let src = (d + 3).min(100);
            for i in 0..7 {
                assert!((shifted[k * 7 + i] - prof[(i, src - 1)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_controls_prefix() {
        let par = two_knots();
        let p = DVector::from_vec(vec![0.0, 3.0]);
        let u = par.first_controls(&p, 3).unwrap();
        assert_eq!(u.iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
        assert!(par.first_controls(&p, 7).is_err());
    }
}
