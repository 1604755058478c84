//! Finite-volume spherical diffusion in equal-width shells.
//!
//! Concentrations are scaled by `c_max` and represent shell averages. The
//! update is conservative: the shell-volume-weighted sum changes exactly by
//! the surface flux times `dt`.

/// Equal-width shell discretisation of a sphere of radius `radius`.
#[derive(Debug, Clone)]
pub struct ShellGrid {
    pub radius: f64,
    pub dr: f64,
    /// Shell volumes divided by 4π.
    pub volume: Vec<f64>,
    /// Outer face areas divided by 4π (`r²` at each outer face).
    pub face_area: Vec<f64>,
}

impl ShellGrid {
    pub fn new(radius: f64, shells: usize) -> Self {
        let dr = radius / shells as f64;
        let volume = (0..shells)
            .map(|k| {
                let outer = (k + 1) as f64 * dr;
                let inner = k as f64 * dr;
                (outer.powi(3) - inner.powi(3)) / 3.0
            })
            .collect();
        let face_area = (0..shells).map(|k| ((k + 1) as f64 * dr).powi(2)).collect();
        Self {
            radius,
            dr,
            volume,
            face_area,
        }
    }

    pub fn len(&self) -> usize {
        self.volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume.is_empty()
    }

    /// Volume-weighted mean of shell values.
    pub fn mean(&self, theta: &[f64]) -> f64 {
        let total: f64 = self.volume.iter().sum();
        self.volume.iter().zip(theta).map(|(v, c)| v * c).sum::<f64>() / total
    }
}

/// Factorised implicit-Euler diffusion operator for one `dt`.
///
/// Solving with a surface flux `j` (mol/m²/s, positive outward) gives
/// `θ = base + j · response`, which is what lets the cell-level Newton solve
/// eliminate every particle unknown.
#[derive(Debug, Clone)]
pub struct ParticleStepper {
    lower: Vec<f64>,
    diag_inv: Vec<f64>,
    upper_mod: Vec<f64>,
    volume_over_dt: Vec<f64>,
    /// Shell values produced by a unit outward flux from a zero start.
    response: Vec<f64>,
    /// Surface extrapolation: θ_surf = θ_last + surface_gain · j.
    surface_gain: f64,
}

impl ParticleStepper {
    pub fn new(grid: &ShellGrid, diffusivity: f64, c_max: f64, dt: f64) -> Self {
        let n = grid.len();
        let coupling: Vec<f64> = grid.face_area.iter().map(|a| diffusivity * a / grid.dr).collect();
        let mut diag = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for k in 0..n {
            diag[k] = grid.volume[k] / dt;
            if k + 1 < n {
                diag[k] += coupling[k];
                upper[k] = -coupling[k];
            }
            if k > 0 {
                diag[k] += coupling[k - 1];
                lower[k] = -coupling[k - 1];
            }
        }
        // Thomas factorisation
        let mut diag_inv = vec![0.0; n];
        let mut upper_mod = vec![0.0; n];
        let mut d = diag[0];
        diag_inv[0] = 1.0 / d;
        upper_mod[0] = upper[0] / d;
        for k in 1..n {
            d = diag[k] - lower[k] * upper_mod[k - 1];
            diag_inv[k] = 1.0 / d;
            upper_mod[k] = upper[k] / d;
        }
        let mut stepper = Self {
            lower,
            diag_inv,
            upper_mod,
            volume_over_dt: grid.volume.iter().map(|v| v / dt).collect(),
            response: vec![0.0; n],
            surface_gain: -grid.dr / (2.0 * diffusivity * c_max),
        };
        let mut unit = vec![0.0; n];
        unit[n - 1] = -grid.face_area[n - 1] / c_max;
        stepper.solve(&mut unit);
        stepper.response = unit;
        stepper
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.diag_inv[0];
        for k in 1..n {
            rhs[k] = (rhs[k] - self.lower[k] * rhs[k - 1]) * self.diag_inv[k];
        }
        for k in (0..n - 1).rev() {
            rhs[k] -= self.upper_mod[k] * rhs[k + 1];
        }
    }

    /// Zero-flux update of `old` into `out`.
    pub fn base(&self, old: &[f64], out: &mut [f64]) {
        for ((o, c), w) in out.iter_mut().zip(old).zip(&self.volume_over_dt) {
            *o = c * w;
        }
        self.solve(out);
    }

    /// Surface concentration as an affine function of flux: `(intercept, slope)`.
    pub fn surface_affine(&self, base: &[f64]) -> (f64, f64) {
        let last = base.len() - 1;
        (base[last], self.response[last] + self.surface_gain)
    }

    /// Final shell values given the zero-flux update and the converged flux.
    pub fn finish(&self, base: &[f64], flux: f64, out: &mut [f64]) {
        for ((o, b), r) in out.iter_mut().zip(base).zip(&self.response) {
            *o = b + flux * r;
        }
    }
}
