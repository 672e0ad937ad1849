//! Interaction weights `f_n` and their shifted variants `f_{n,δ}`.
//!
//! Every family is non-increasing, positive on `[0, r)` and exactly zero
//! from `r` on. The shifted kernel plateaus at `f(0)` on `[0, δr]` and is the
//! unshifted kernel translated outward by `δr` beyond it, so its support
//! ends at `(1+δ)r`.
//!
//! Note that the weight vanishes at distance exactly `r` while the neighbor
//! graph in [`crate::geometry`] keeps an edge at distance exactly `r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate_pieces, QUAD_ABS_FLOOR, QUAD_REL_TOL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelFamily {
    /// `b` on `[0, r)`.
    Indicator,
    /// `b (1 - x/r)` on `[0, r)`.
    Triangular,
    /// `c (1 - x^γ / r^γ)` on `[0, r)`.
    PowerCap { gamma: f64 },
    /// Equally spaced samples on `[0, r]`, linearly interpolated. The first
    /// sample is `f(0)`, the last must be zero.
    Tabulated { samples: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    family: KernelFamily,
    radius: f64,
    amplitude: f64,
    shift: f64,
}

impl Kernel {
    pub fn indicator(amplitude: f64, radius: f64) -> Result<Self> {
        Self::new(KernelFamily::Indicator, amplitude, radius)
    }

    pub fn triangular(amplitude: f64, radius: f64) -> Result<Self> {
        Self::new(KernelFamily::Triangular, amplitude, radius)
    }

    pub fn power_cap(amplitude: f64, radius: f64, gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::PowerCap { gamma }, amplitude, radius)
    }

    /// Tabulated kernel; the amplitude is the first sample.
    pub fn tabulated(samples: Vec<f64>, radius: f64) -> Result<Self> {
        let amplitude = samples.first().copied().unwrap_or(0.0);
        Self::new(KernelFamily::Tabulated { samples }, amplitude, radius)
    }

    pub fn new(family: KernelFamily, amplitude: f64, radius: f64) -> Result<Self> {
        let k = Kernel { family, radius, amplitude, shift: 0.0 };
        k.validate()?;
        Ok(k)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidKernel(m));
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude must be positive, got {}", self.amplitude));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return bad(format!("shift must be nonnegative, got {}", self.shift));
        }
        match &self.family {
            KernelFamily::PowerCap { gamma } if !(*gamma > 0.0 && gamma.is_finite()) => {
                bad(format!("gamma must be positive, got {gamma}"))
            }
            KernelFamily::Tabulated { samples } => {
                if samples.len() < 2 {
                    return bad("tabulated kernel needs at least two samples".into());
                }
                if samples.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return bad("tabulated samples must be finite and nonnegative".into());
                }
                if samples.windows(2).any(|w| w[1] > w[0]) {
                    return bad("tabulated samples must be non-increasing".into());
                }
                if *samples.last().unwrap() != 0.0 {
                    return bad("last tabulated sample must be 0".into());
                }
                if samples[samples.len() - 2] <= 0.0 {
                    return bad("tabulated kernel must be positive below its radius".into());
                }
                if (samples[0] - self.amplitude).abs() > 0.0 {
                    return bad("tabulated amplitude must equal the first sample".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            KernelFamily::Indicator => "indicator",
            KernelFamily::Triangular => "triangular",
            KernelFamily::PowerCap { .. } => "powercap",
            KernelFamily::Tabulated { .. } => "tabulated",
        }
    }

    /// The interaction radius `r` of the unshifted kernel.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// End of the support, `(1+δ) r`.
    pub fn support(&self) -> f64 {
        (1.0 + self.shift) * self.radius
    }

    /// `f(0)`, the plateau value.
    pub fn peak(&self) -> f64 {
        self.unshifted(0.0)
    }

    /// Returns `f_{n,δ}`. Shifting an already shifted kernel is rejected.
    pub fn shifted(&self, delta: f64) -> Result<Kernel> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidKernel(format!("shift must be nonnegative, got {delta}")));
        }
        if self.shift != 0.0 {
            return Err(Error::InvalidKernel("kernel is already shifted".into()));
        }
        Ok(Kernel { shift: delta, ..self.clone() })
    }

    /// The kernel with its shift removed.
    pub fn base(&self) -> Kernel {
        Kernel { shift: 0.0, ..self.clone() }
    }

    /// Same family and shape with a new radius (and, for parametric
    /// families, amplitude).
    pub fn with_radius_amplitude(&self, radius: f64, amplitude: f64) -> Result<Kernel> {
        let k = match &self.family {
            KernelFamily::Tabulated { samples } => {
                let s = samples[0];
                let scaled = samples.iter().map(|v| v * amplitude / s).collect();
                Kernel::tabulated(scaled, radius)?
            }
            fam => Kernel::new(fam.clone(), amplitude, radius)?,
        };
        if self.shift > 0.0 {
            k.shifted(self.shift)
        } else {
            Ok(k)
        }
    }

    #[inline]
    fn unshifted(&self, x: f64) -> f64 {
        let r = self.radius;
        if x >= r {
            return 0.0;
        }
        let b = self.amplitude;
        match &self.family {
            KernelFamily::Indicator => b,
            KernelFamily::Triangular => b * (1.0 - x / r),
            KernelFamily::PowerCap { gamma } => b * (1.0 - (x / r).powf(*gamma)),
            KernelFamily::Tabulated { samples } => {
                let m = samples.len() - 1;
                let pos = x / r * m as f64;
                let k = (pos.floor() as usize).min(m - 1);
                let frac = pos - k as f64;
                samples[k] + (samples[k + 1] - samples[k]) * frac
            }
        }
    }

    /// `f_{n,δ}(x)` for a distance `x ≥ 0`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if self.shift == 0.0 {
            return self.unshifted(x);
        }
        let u = (x - self.shift * self.radius).max(0.0);
        // a few ulps of slack so that x = (1+δ)r lands on the zero edge despite rounding
        if u >= self.radius * (1.0 - 4.0 * f64::EPSILON) {
            return 0.0;
        }
        self.unshifted(u)
    }

    /// Points in `(0, support)` where the kernel has a kink or jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        let offset = self.shift * self.radius;
        let mut out = vec![];
        if offset > 0.0 {
            out.push(offset);
        }
        if let KernelFamily::Tabulated { samples } = &self.family {
            let m = samples.len() - 1;
            out.extend((1..m).map(|k| offset + self.radius * k as f64 / m as f64));
        }
        out
    }

    /// `(1/f(0)) ∫_0^1 f(r y) y^{d-1} dy` for the unshifted kernel.
    pub fn c0_integral(&self, d: usize) -> Result<f64> {
        if self.shift != 0.0 {
            return Err(Error::arg("c0_integral expects an unshifted kernel"));
        }
        if d < 1 {
            return Err(Error::arg("dimension must be at least 1"));
        }
        let f0 = self.peak();
        if f0 <= 0.0 {
            return Err(Error::Degenerate("f(0) = 0".into()));
        }
        let r = self.radius;
        let breaks: Vec<f64> = self.breakpoints().iter().map(|b| b / r).collect();
        let dm1 = (d - 1) as i32;
        let v = integrate_pieces(
            |y| self.eval(r * y) * y.powi(dm1),
            0.0,
            1.0,
            &breaks,
            QUAD_REL_TOL * 1e-2,
            QUAD_ABS_FLOOR,
        );
        Ok(v / f0)
    }
}
