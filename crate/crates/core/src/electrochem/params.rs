//! Physical and geometric constants of the simulated cell.
//!
//! Field names follow the JSON parameter file exactly. Curves (open-circuit
//! potentials and electrolyte conductivity) are stored as `[x, y]` pairs and
//! evaluated by piecewise-linear interpolation, clamped at the table ends.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FARADAY: f64 = 96_485.332_12;
pub const GAS_CONSTANT: f64 = 8.314_462_618;

const DEFAULT_JSON: &str = include_str!("../../data/default_params.json");

/// Piecewise-linear table of `[x, y]` pairs with strictly increasing `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curve(pub Vec<[f64; 2]>);

impl Curve {
    fn check(&self, field: &'static str) -> Result<()> {
        if self.0.len() < 2 {
            return Err(Error::param(field, "table needs at least two points"));
        }
        for w in self.0.windows(2) {
            if !(w[1][0] > w[0][0]) {
                return Err(Error::param(field, "abscissae must be strictly increasing"));
            }
        }
        if self.0.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::param(field, "table contains non-finite values"));
        }
        Ok(())
    }

    fn covers_unit_interval(&self) -> bool {
        let first = self.0[0][0];
        let last = self.0[self.0.len() - 1][0];
        first <= 0.0 && last >= 1.0
    }

    fn segment(&self, x: f64) -> usize {
        let pts = &self.0;
        // first index whose abscissa exceeds x, minus one, kept in range
        let upper = pts.partition_point(|p| p[0] <= x);
        upper.clamp(1, pts.len() - 1) - 1
    }

    /// Value and slope at `x`. Outside the table the end value is held and the slope is zero.
    pub fn eval_with_slope(&self, x: f64) -> (f64, f64) {
        let pts = &self.0;
        let first = pts[0];
        let last = pts[pts.len() - 1];
        if x <= first[0] {
            return (first[1], 0.0);
        }
        if x >= last[0] {
            return (last[1], 0.0);
        }
        let i = self.segment(x);
        let [x0, y0] = pts[i];
        let [x1, y1] = pts[i + 1];
        let slope = (y1 - y0) / (x1 - x0);
        (y0 + slope * (x - x0), slope)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with_slope(x).0
    }
}

/// All constants needed by the P2D model. Units are SI unless noted.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub L_n: f64,
    pub L_sep: f64,
    pub L_p: f64,
    pub R_n: f64,
    pub R_p: f64,
    pub c_max_n: f64,
    pub c_max_p: f64,
    /// Initial (fully charged) stoichiometries.
    pub x_n0: f64,
    pub x_p0: f64,
    pub D_n: f64,
    pub D_p: f64,
    pub D_e: f64,
    pub c_e0: f64,
    pub t_plus: f64,
    pub eps_n: f64,
    pub eps_sep: f64,
    pub eps_p: f64,
    /// Bruggeman exponent.
    pub b: f64,
    /// Reaction rate constants, A/m² (m³/mol)^1.5.
    pub k_n: f64,
    pub k_p: f64,
    pub sigma_n: f64,
    pub sigma_p: f64,
    /// Electrolyte conductivity as a function of concentration, `[c_e, κ]`.
    pub kappa: Curve,
    /// Open-circuit potentials as functions of stoichiometry, `[θ, U]`.
    pub U_n: Curve,
    pub U_p: Curve,
    /// Active surface area per electrode volume. The active solid volume
    /// fraction is derived as `a R / 3`.
    pub a_n: f64,
    pub a_p: f64,
    pub T: f64,
    pub V_cut: f64,
    /// Nominal capacity in A·h; 1C is `Q` amperes.
    pub Q: f64,
    /// Electrode plate area, m².
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Electrode {
    Negative,
    Positive,
}

impl ParameterSet {
    /// The bundled graphite / LiCoO2 parameter set.
    pub fn bundled() -> Self {
        serde_json::from_str(DEFAULT_JSON).expect("bundled parameter file is valid JSON")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: ParameterSet = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter set serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, f64); 20] = [
            ("L_n", self.L_n),
            ("L_sep", self.L_sep),
            ("L_p", self.L_p),
            ("R_n", self.R_n),
            ("R_p", self.R_p),
            ("c_max_n", self.c_max_n),
            ("c_max_p", self.c_max_p),
            ("D_n", self.D_n),
            ("D_p", self.D_p),
            ("D_e", self.D_e),
            ("c_e0", self.c_e0),
            ("k_n", self.k_n),
            ("k_p", self.k_p),
            ("sigma_n", self.sigma_n),
            ("sigma_p", self.sigma_p),
            ("a_n", self.a_n),
            ("a_p", self.a_p),
            ("T", self.T),
            ("Q", self.Q),
            ("area", self.area),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::param(field, format!("must be finite and > 0, got {value}")));
            }
        }
        if !(self.t_plus > 0.0 && self.t_plus < 1.0) {
            return Err(Error::param("t_plus", "must lie in (0, 1)"));
        }
        for (field, eps) in [("eps_n", self.eps_n), ("eps_p", self.eps_p)] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::param(field, "porosity must lie in (0, 1)"));
            }
        }
        // the separator may be entirely electrolyte
        if !(self.eps_sep > 0.0 && self.eps_sep <= 1.0) {
            return Err(Error::param("eps_sep", "porosity must lie in (0, 1]"));
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return Err(Error::param("b", "Bruggeman exponent must be >= 0"));
        }
        for (field, x) in [("x_n0", self.x_n0), ("x_p0", self.x_p0)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::param(field, "stoichiometry must lie in [0, 1]"));
            }
        }
        for (field, a, r, eps) in [
            ("a_n", self.a_n, self.R_n, self.eps_n),
            ("a_p", self.a_p, self.R_p, self.eps_p),
        ] {
            let solid = a * r / 3.0;
            if solid + eps > 1.0 + 1e-12 {
                return Err(Error::param(
                    field,
                    format!("implied solid fraction {solid:.3} plus porosity exceeds 1"),
                ));
            }
        }
        self.kappa.check("kappa")?;
        if self.kappa.0.iter().any(|p| p[1] <= 0.0) {
            return Err(Error::param("kappa", "conductivity must be positive"));
        }
        self.U_n.check("U_n")?;
        self.U_p.check("U_p")?;
        if !self.U_n.covers_unit_interval() {
            return Err(Error::param("U_n", "table must cover [0, 1]"));
        }
        if !self.U_p.covers_unit_interval() {
            return Err(Error::param("U_p", "table must cover [0, 1]"));
        }
        if !(self.V_cut.is_finite() && self.V_cut < self.ocv_full()) {
            return Err(Error::param(
                "V_cut",
                "cutoff must lie below the fully charged open-circuit voltage",
            ));
        }
        Ok(())
    }

    /// Open-circuit voltage at the given electrode stoichiometries.
    pub fn ocv(&self, theta_n: f64, theta_p: f64) -> f64 {
        self.U_p.eval(theta_p) - self.U_n.eval(theta_n)
    }

    /// Zero-current voltage of the fully charged cell.
    pub fn ocv_full(&self) -> f64 {
        self.ocv(self.x_n0, self.x_p0)
    }

    /// Current density (A/m²) corresponding to a C-rate.
    pub fn current_density(&self, c_rate: f64) -> f64 {
        c_rate * self.Q / self.area
    }

    pub fn solid_fraction(&self, electrode: Electrode) -> f64 {
        match electrode {
            Electrode::Negative => self.a_n * self.R_n / 3.0,
            Electrode::Positive => self.a_p * self.R_p / 3.0,
        }
    }

    pub(crate) fn electrode(&self, electrode: Electrode) -> ElectrodeView<'_> {
        match electrode {
            Electrode::Negative => ElectrodeView {
                thickness: self.L_n,
                c_max: self.c_max_n,
                diffusivity: self.D_n,
                rate: self.k_n,
                sigma: self.sigma_n,
                ocp: &self.U_n,
                solid_fraction: self.solid_fraction(electrode),
            },
            Electrode::Positive => ElectrodeView {
                thickness: self.L_p,
                c_max: self.c_max_p,
                diffusivity: self.D_p,
                rate: self.k_p,
                sigma: self.sigma_p,
                ocp: &self.U_p,
                solid_fraction: self.solid_fraction(electrode),
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ElectrodeView<'a> {
    pub thickness: f64,
    pub c_max: f64,
    pub diffusivity: f64,
    pub rate: f64,
    pub sigma: f64,
    pub ocp: &'a Curve,
    pub solid_fraction: f64,
}
