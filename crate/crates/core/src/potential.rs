//! Spacing potentials: the legacy strictly decreasing potential and the
//! performance-sensitive potential with a hill on `[r, r + 3)`.
//!
//! Both share the base term `alpha (lambda - s)^3 / (s - L)` on `(L, lambda)`
//! and vanish for `s >= lambda`. The hill adds
//! `(r + 3 - s)^p (s - r)^p / (L - s)^2`, which creates a local minimum
//! (an extra equilibrium spacing) followed by a local maximum.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;

/// Width of the hill window in metres.
pub const HILL_WIDTH: f64 = 3.0;

/// Lower edge of the scale-factor range.
pub const ALPHA_MIN: f64 = 1e-3;
/// Upper edge of the scale-factor range.
pub const ALPHA_MAX: f64 = 1e-1;
pub const SHARPNESS_MIN: f64 = 3.0;
pub const SHARPNESS_MAX: f64 = 9.0;
/// The hill start must lie strictly above `L`; clamping and search use
/// `L + HILL_START_MARGIN` as the closed lower edge.
pub const HILL_START_MARGIN: f64 = 1e-3;

const SCAN_STEP: f64 = 1e-3;
const ROOT_TOL: f64 = 1e-9;
const PEAK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Legacy,
    PerformanceSensitive,
}

/// A potential family together with its parameters.
///
/// `min_gap` and `cutoff` are copied from [`ModelParams`] so the potential can
/// be evaluated on its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub alpha: f64,
    /// Hill start `r` (m).
    pub hill_start: f64,
    /// Hill sharpness exponent `p`.
    pub sharpness: f64,
    pub min_gap: f64,
    pub cutoff: f64,
}

/// Box-constraint membership of the three tunable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxCheck {
    pub alpha_ok: bool,
    pub hill_start_ok: bool,
    pub sharpness_ok: bool,
}

impl BoxCheck {
    pub fn passes(&self) -> bool {
        self.alpha_ok && self.hill_start_ok && self.sharpness_ok
    }
}

/// Largest `|V'|` over the hill window and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopePeak {
    pub at: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    LocalMin,
    LocalMax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub spacing: f64,
    pub kind: ExtremumKind,
}

/// Interior roots of `V'` on `(L, lambda)` plus the flat region
/// `s >= flat_from` where `V'` vanishes identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibria {
    pub roots: Vec<Equilibrium>,
    pub flat_from: f64,
}

impl Equilibria {
    pub fn local_min(&self) -> Option<f64> {
        self.roots
            .iter()
            .find(|e| e.kind == ExtremumKind::LocalMin)
            .map(|e| e.spacing)
    }

    pub fn local_max(&self) -> Option<f64> {
        self.roots
            .iter()
            .find(|e| e.kind == ExtremumKind::LocalMax)
            .map(|e| e.spacing)
    }
}

impl PotentialSpec {
    /// Legacy potential: the base term with unit scale and no hill.
    pub fn legacy(params: &ModelParams) -> Self {
        Self {
            kind: PotentialKind::Legacy,
            alpha: 1.0,
            hill_start: params.cutoff,
            sharpness: 0.0,
            min_gap: params.min_gap,
            cutoff: params.cutoff,
        }
    }

    /// Performance-sensitive potential. The parameters are not checked against
    /// the feasibility box; see [`PotentialSpec::check_box`].
    pub fn performance_sensitive(params: &ModelParams, alpha: f64, hill_start: f64, sharpness: f64) -> Self {
        Self {
            kind: PotentialKind::PerformanceSensitive,
            alpha,
            hill_start,
            sharpness,
            min_gap: params.min_gap,
            cutoff: params.cutoff,
        }
    }

    /// Like [`performance_sensitive`](Self::performance_sensitive) but rejects
    /// parameters outside the feasibility box.
    pub fn performance_sensitive_checked(
        params: &ModelParams,
        alpha: f64,
        hill_start: f64,
        sharpness: f64,
    ) -> Result<Self> {
        let spec = Self::performance_sensitive(params, alpha, hill_start, sharpness);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_gap > 0.0 && self.min_gap < self.cutoff) {
            return Err(invalid("potential", "require 0 < min_gap < cutoff"));
        }
        if self.kind == PotentialKind::PerformanceSensitive {
            let b = self.check_box();
            if !b.alpha_ok {
                return Err(Error::Infeasible(format!(
                    "alpha = {} outside [{ALPHA_MIN}, {ALPHA_MAX}]",
                    self.alpha
                )));
            }
            if !b.hill_start_ok {
                return Err(Error::Infeasible(format!(
                    "r = {} outside ({}, {}]",
                    self.hill_start,
                    self.min_gap,
                    self.cutoff - HILL_WIDTH
                )));
            }
            if !b.sharpness_ok {
                return Err(Error::Infeasible(format!(
                    "p = {} outside [{SHARPNESS_MIN}, {SHARPNESS_MAX}]",
                    self.sharpness
                )));
            }
        }
        Ok(())
    }

    /// Box constraints on `(alpha, r, p)`. Always passes for the legacy kind.
    pub fn check_box(&self) -> BoxCheck {
        if self.kind == PotentialKind::Legacy {
            return BoxCheck {
                alpha_ok: true,
                hill_start_ok: true,
                sharpness_ok: true,
            };
        }
        BoxCheck {
            alpha_ok: (ALPHA_MIN..=ALPHA_MAX).contains(&self.alpha),
            hill_start_ok: self.hill_start > self.min_gap && self.hill_start <= self.cutoff - HILL_WIDTH,
            sharpness_ok: (SHARPNESS_MIN..=SHARPNESS_MAX).contains(&self.sharpness),
        }
    }

    /// Closed parameter bounds `[lo, hi]` for `(alpha, r, p)`.
    pub fn parameter_bounds(min_gap: f64, cutoff: f64) -> [(f64, f64); 3] {
        [
            (ALPHA_MIN, ALPHA_MAX),
            (min_gap + HILL_START_MARGIN, cutoff - HILL_WIDTH),
            (SHARPNESS_MIN, SHARPNESS_MAX),
        ]
    }

    /// Projects `(alpha, r, p)` into the closed feasibility box.
    pub fn clamp_to_box(mut self) -> Self {
        if self.kind == PotentialKind::PerformanceSensitive {
            let [a, r, p] = Self::parameter_bounds(self.min_gap, self.cutoff);
            self.alpha = clamp_finite(self.alpha, a);
            self.hill_start = clamp_finite(self.hill_start, r);
            self.sharpness = clamp_finite(self.sharpness, p);
        }
        self
    }

    fn has_hill(&self) -> bool {
        self.kind == PotentialKind::PerformanceSensitive
    }

    #[inline]
    fn in_hill(&self, s: f64) -> bool {
        self.has_hill() && s >= self.hill_start && s < self.hill_start + HILL_WIDTH
    }

    fn check_domain(&self, s: f64) -> Result<()> {
        if s > self.min_gap {
            Ok(())
        } else {
            Err(Error::SpacingDomain {
                s,
                min_gap: self.min_gap,
            })
        }
    }

    /// `V(s)`.
    pub fn value(&self, s: f64) -> Result<f64> {
        self.check_domain(s)?;
        if s >= self.cutoff {
            return Ok(0.0);
        }
        let a = self.cutoff - s;
        let d = s - self.min_gap;
        let mut v = self.alpha * a * a * a / d;
        if self.in_hill(s) {
            let q = (self.hill_start + HILL_WIDTH - s) * (s - self.hill_start);
            v += q.powf(self.sharpness) / (d * d);
        }
        Ok(v)
    }

    /// `V'(s)`.
    pub fn slope(&self, s: f64) -> Result<f64> {
        self.check_domain(s)?;
        Ok(self.slope_unchecked(s))
    }

    /// `V'(s)` without the domain check; callers guarantee `s > L`.
    #[inline]
    pub(crate) fn slope_unchecked(&self, s: f64) -> f64 {
        if s >= self.cutoff {
            return 0.0;
        }
        let a = self.cutoff - s;
        let d = s - self.min_gap;
        // d/ds (lambda - s)^3 / (s - L) = -(lambda - s)^2 (2s + lambda - 3L) / (s - L)^2
        let mut dv = -self.alpha * a * a * (3.0 * d + a) / (d * d);
        if self.in_hill(s) {
            let u = self.hill_start + HILL_WIDTH - s;
            let w = s - self.hill_start;
            let q = u * w;
            let p = self.sharpness;
            let qp1 = q.powf(p - 1.0);
            dv += p * qp1 * (u - w) / (d * d) - 2.0 * qp1 * q / (d * d * d);
        }
        dv
    }

    /// `V''(s)`.
    pub fn curvature(&self, s: f64) -> Result<f64> {
        self.check_domain(s)?;
        if s >= self.cutoff {
            return Ok(0.0);
        }
        let a = self.cutoff - s;
        let d = s - self.min_gap;
        let mut c = 2.0 * self.alpha * a * (3.0 * d * d + 3.0 * a * d + a * a) / (d * d * d);
        if self.in_hill(s) {
            let u = self.hill_start + HILL_WIDTH - s;
            let w = s - self.hill_start;
            let q = u * w;
            let dq = u - w;
            let p = self.sharpness;
            let d2 = d * d;
            let qp2 = q.powf(p - 2.0);
            let qp1 = qp2 * q;
            let qp = qp1 * q;
            c += p * (p - 1.0) * qp2 * dq * dq / d2 - 2.0 * p * qp1 / d2 - 4.0 * p * qp1 * dq / (d2 * d)
                + 6.0 * qp / (d2 * d2);
        }
        Ok(c)
    }

    /// Maximum of `|V'|` over the hill window `[r, r + 3]`: a 1 mm grid scan
    /// refined by golden-section search around the best cell.
    pub fn max_abs_slope_on_hill(&self) -> Result<SlopePeak> {
        if !self.has_hill() {
            return Err(invalid("potential.kind", "the legacy potential has no hill"));
        }
        let lo = self.hill_start;
        let hi = self.hill_start + HILL_WIDTH;
        if !(lo > self.min_gap) {
            return Err(Error::SpacingDomain {
                s: lo,
                min_gap: self.min_gap,
            });
        }
        let cells = (HILL_WIDTH / SCAN_STEP).ceil() as usize;
        let h = HILL_WIDTH / cells as f64;
        let abs_slope = |s: f64| self.slope_unchecked(s).abs();

        let (mut best_k, mut best) = (0, abs_slope(lo));
        for k in 1..=cells {
            let v = abs_slope(lo + k as f64 * h);
            if v > best {
                best = v;
                best_k = k;
            }
        }
        let a = lo + best_k.saturating_sub(1) as f64 * h;
        let b = (lo + (best_k + 1) as f64 * h).min(hi);
        let (at, value) = golden_section_max(abs_slope, a, b, PEAK_TOL);
        Ok(if value >= best {
            SlopePeak { at, value }
        } else {
            SlopePeak {
                at: lo + best_k as f64 * h,
                value: best,
            }
        })
    }

    /// Roots of `V'` on `(L, lambda)`, classified by the sign change of `V'`.
    pub fn find_equilibria(&self) -> Equilibria {
        let mut roots = Vec::new();
        let span = self.cutoff - self.min_gap;
        let cells = (span / SCAN_STEP).ceil() as usize;
        let h = span / cells as f64;
        let mut prev_s = self.min_gap + h;
        let mut prev = self.slope_unchecked(prev_s);
        for k in 2..cells {
            let s = self.min_gap + k as f64 * h;
            let cur = self.slope_unchecked(s);
            if prev.signum() != cur.signum() && prev != 0.0 && cur != 0.0 {
                let root = bisect(|x| self.slope_unchecked(x), prev_s, s, ROOT_TOL);
                let kind = if prev < 0.0 {
                    ExtremumKind::LocalMin
                } else {
                    ExtremumKind::LocalMax
                };
                roots.push(Equilibrium { spacing: root, kind });
            }
            prev_s = s;
            prev = cur;
        }
        Equilibria {
            roots,
            flat_from: self.cutoff,
        }
    }
}

fn clamp_finite(x: f64, (lo, hi): (f64, f64)) -> f64 {
    if x.is_nan() {
        lo
    } else {
        x.clamp(lo, hi)
    }
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 > f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    while b - a > tol {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
