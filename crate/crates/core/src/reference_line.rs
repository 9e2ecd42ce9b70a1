//! Reference line: a smoothed local window of the global route.
//!
//! The global route is pruned to a window around the ego projection,
//! smoothed by a joint QP over the interior points (reference, smoothness
//! and length costs), then resampled at uniform arc length with heading,
//! curvature and curvature rate from finite differences. Queries
//! (`point_at`, `project`) interpolate the samples with a C¹ Hermite model
//! so that projection and evaluation are exact inverses of each other.

use crate::qp::{solve_qp, QpProblem};
use crate::wrap_angle;
use nalgebra::{DMatrix, DVector, Vector2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReferenceLineError {
    #[error("route needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("route points {0} and {1} are coincident")]
    CoincidentPoints(usize, usize),
    #[error("ego is {0:.1} m from the route, beyond the 50 m projection limit")]
    EgoOffRoute(f64),
    #[error("smoothing QP failed: {0}")]
    SolverFailure(String),
    #[error("projection is ambiguous: candidate stations {0:.1} m and {1:.1} m")]
    AmbiguousProjection(f64, f64),
    #[error("smoothed line violates geometry invariants: {0}")]
    InvalidGeometry(String),
}

/// Ordered world-frame waypoints, consecutive points non-coincident.
#[derive(Debug, Clone)]
pub struct RoutePolyline {
    points: Vec<Vector2<f64>>,
}

impl RoutePolyline {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, ReferenceLineError> {
        if points.len() < 3 {
            return Err(ReferenceLineError::TooFewPoints(points.len()));
        }
        let points: Vec<Vector2<f64>> = points.iter().map(|&(x, y)| Vector2::new(x, y)).collect();
        for i in 1..points.len() {
            if (points[i] - points[i - 1]).norm() <= 1e-6 {
                return Err(ReferenceLineError::CoincidentPoints(i - 1, i));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn total_length(&self) -> f64 {
        self.cumulative().last().copied().unwrap_or(0.0)
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.points.len());
        let mut s = 0.0;
        acc.push(0.0);
        for w in self.points.windows(2) {
            s += (w[1] - w[0]).norm();
            acc.push(s);
        }
        acc
    }

    /// Nearest-segment projection: returns (arc length, distance).
    pub fn project_point(&self, p: Vector2<f64>) -> (f64, f64) {
        let cum = self.cumulative();
        let mut best = (0.0, f64::INFINITY);
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            let foot = a + ab * t;
            let d = (p - foot).norm();
            if d < best.1 {
                best = (cum[i] + ab.norm() * t, d);
            }
        }
        best
    }

    fn point_at_arc(&self, s: f64) -> Vector2<f64> {
        let cum = self.cumulative();
        let s = s.clamp(0.0, *cum.last().unwrap());
        let i = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let seg = cum[i + 1] - cum[i];
        let t = if seg > 0.0 { (s - cum[i]) / seg } else { 0.0 };
        self.points[i] + (self.points[i + 1] - self.points[i]) * t
    }
}

/// Extract the sub-polyline spanning `back` metres before and `ahead`
/// metres after the ego projection, clamped at the route ends. Defaults
/// used by callers are back = 150, ahead = 30.
pub fn extract_window(
    route: &RoutePolyline,
    ego_xy: (f64, f64),
    back: f64,
    ahead: f64,
) -> Result<RoutePolyline, ReferenceLineError> {
    let p = Vector2::new(ego_xy.0, ego_xy.1);
    let (s_ego, dist) = route.project_point(p);
    if dist >= 50.0 {
        return Err(ReferenceLineError::EgoOffRoute(dist));
    }
    let cum = route.cumulative();
    let total = *cum.last().unwrap();
    let s_lo = (s_ego - back).max(0.0);
    let s_hi = (s_ego + ahead).min(total);

    let mut pts = vec![route.point_at_arc(s_lo)];
    for (i, &s) in cum.iter().enumerate() {
        if s > s_lo + 1e-9 && s < s_hi - 1e-9 {
            pts.push(route.points[i]);
        }
    }
    pts.push(route.point_at_arc(s_hi));
    // Very short windows can collapse to two points; split the longest
    // segment until the polyline is valid again.
    while pts.len() < 3 {
        let mid = (pts[0] + pts[1]) * 0.5;
        pts.insert(1, mid);
    }
    RoutePolyline::new(pts.iter().map(|p| (p.x, p.y)).collect())
}

/// Weights of the three smoothing cost terms.
#[derive(Debug, Clone, Copy)]
pub struct SmootherWeights {
    pub w_ref: f64,
    pub w_smooth: f64,
    pub w_length: f64,
}

impl Default for SmootherWeights {
    fn default() -> Self {
        Self { w_ref: 1.0, w_smooth: 10.0, w_length: 1.0 }
    }
}

/// One uniform-arc-length sample of the smoothed line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    /// Heading, wrapped to `[-pi, pi]`.
    pub theta: f64,
    pub kappa: f64,
    pub dkappa: f64,
}

/// Smoothed, arc-length parameterised reference curve.
#[derive(Debug, Clone)]
pub struct ReferenceLine {
    samples: Vec<ReferencePoint>,
    spacing: f64,
}

/// Evaluate the three-term smoothing objective for a candidate point set
/// against the raw route. Exposed so tests can certify that smoothing never
/// increases the objective.
pub fn smoothing_objective(
    candidate: &[Vector2<f64>],
    raw: &[Vector2<f64>],
    w: &SmootherWeights,
) -> f64 {
    assert_eq!(candidate.len(), raw.len());
    let n = candidate.len();
    let mut cost = 0.0;
    for i in 0..n {
        cost += w.w_ref * (candidate[i] - raw[i]).norm_squared();
    }
    for i in 1..n - 1 {
        let d = candidate[i - 1] + candidate[i + 1] - candidate[i] * 2.0;
        cost += w.w_smooth * d.norm_squared();
    }
    for i in 0..n - 1 {
        cost += w.w_length * (candidate[i + 1] - candidate[i]).norm_squared();
    }
    cost
}

/// Smooth a route window into a reference line resampled at 1 m.
pub fn smooth(
    route: &RoutePolyline,
    weights: &SmootherWeights,
) -> Result<ReferenceLine, ReferenceLineError> {
    smooth_with_spacing(route, weights, 1.0)
}

pub fn smooth_with_spacing(
    route: &RoutePolyline,
    weights: &SmootherWeights,
    spacing: f64,
) -> Result<ReferenceLine, ReferenceLineError> {
    assert!(spacing > 0.0);
    let raw = route.points();
    let n = raw.len();
    let smoothed = if n >= 5 {
        solve_smoothing_qp(raw, weights)?
    } else {
        raw.to_vec()
    };
    resample(&smoothed, spacing)
}

/// Joint QP over all interior points; the first and last two points stay
/// pinned to the raw route to anchor the window. The x and y problems are
/// independent and share one quadratic form.
fn solve_smoothing_qp(
    raw: &[Vector2<f64>],
    w: &SmootherWeights,
) -> Result<Vec<Vector2<f64>>, ReferenceLineError> {
    let n = raw.len();
    let free: Vec<usize> = (2..n - 2).collect();
    if free.is_empty() {
        return Ok(raw.to_vec());
    }
    let nf = free.len();
    let col_of = |i: usize| -> Option<usize> { i.checked_sub(2).filter(|&c| c < nf) };

    let solve_axis = |coord: &dyn Fn(usize) -> f64| -> Result<Vec<f64>, ReferenceLineError> {
        let mut h = DMatrix::zeros(nf, nf);
        let mut g = DVector::zeros(nf);
        // w (Σ c_j x_j + k)²  →  H += 2w c cᵀ, g += 2w k c, over free columns.
        let mut add_term = |weight: f64, entries: &[(usize, f64)], constant: f64| {
            if weight == 0.0 {
                return;
            }
            let mut k = constant;
            let mut frees: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for &(idx, c) in entries {
                match col_of(idx) {
                    Some(col) => frees.push((col, c)),
                    None => k += c * coord(idx),
                }
            }
            for &(cj, vj) in &frees {
                for &(ck, vk) in &frees {
                    h[(cj, ck)] += 2.0 * weight * vj * vk;
                }
                g[cj] += 2.0 * weight * vj * k;
            }
        };
        for i in 2..n - 2 {
            add_term(w.w_ref, &[(i, 1.0)], -coord(i));
        }
        for i in 1..n - 1 {
            add_term(w.w_smooth, &[(i - 1, 1.0), (i + 1, 1.0), (i, -2.0)], 0.0);
        }
        for i in 0..n - 1 {
            add_term(w.w_length, &[(i + 1, 1.0), (i, -1.0)], 0.0);
        }
        let problem = QpProblem::new(h, g);
        let sol = solve_qp(&problem, 1e-8, 5000)
            .map_err(|e| ReferenceLineError::SolverFailure(e.to_string()))?;
        Ok(sol.x.iter().copied().collect())
    };

    let xs = solve_axis(&|i| raw[i].x)?;
    let ys = solve_axis(&|i| raw[i].y)?;
    let mut out = raw.to_vec();
    for (k, &i) in free.iter().enumerate() {
        out[i] = Vector2::new(xs[k], ys[k]);
    }
    Ok(out)
}

fn resample(points: &[Vector2<f64>], spacing: f64) -> Result<ReferenceLine, ReferenceLineError> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    if total <= spacing {
        return Err(ReferenceLineError::InvalidGeometry(format!(
            "window length {total:.3} m shorter than sample spacing"
        )));
    }
    // Snap the step so samples land exactly on [0, total].
    let segments = (total / spacing).round().max(2.0) as usize;
    let ds = total / segments as f64;

    let lerp_at = |s: f64| -> Vector2<f64> {
        let s = s.clamp(0.0, total);
        let mut i = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        i = i.min(points.len() - 2);
        let seg = cum[i + 1] - cum[i];
        let t = if seg > 0.0 { (s - cum[i]) / seg } else { 0.0 };
        points[i] + (points[i + 1] - points[i]) * t
    };

    let pos: Vec<Vector2<f64>> = (0..=segments).map(|k| lerp_at(k as f64 * ds)).collect();
    let m = pos.len();

    // Heading from central differences (one-sided at the ends), unwrapped
    // so curvature differences are meaningful across the ±pi seam.
    let mut theta_unwrapped = Vec::with_capacity(m);
    for i in 0..m {
        let (a, b) = if i == 0 {
            (pos[0], pos[1])
        } else if i == m - 1 {
            (pos[m - 2], pos[m - 1])
        } else {
            (pos[i - 1], pos[i + 1])
        };
        let d = b - a;
        let raw_theta = d.y.atan2(d.x);
        let theta = if let Some(&prev) = theta_unwrapped.last() {
            prev + wrap_angle(raw_theta - prev)
        } else {
            raw_theta
        };
        theta_unwrapped.push(theta);
    }
    let diff = |v: &[f64], i: usize| -> f64 {
        if i == 0 {
            (v[1] - v[0]) / ds
        } else if i == m - 1 {
            (v[m - 1] - v[m - 2]) / ds
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * ds)
        }
    };
    let kappa: Vec<f64> = (0..m).map(|i| diff(&theta_unwrapped, i)).collect();
    let dkappa: Vec<f64> = (0..m).map(|i| diff(&kappa, i)).collect();

    for i in 1..m {
        if (theta_unwrapped[i] - theta_unwrapped[i - 1]).abs() > std::f64::consts::PI {
            return Err(ReferenceLineError::InvalidGeometry(
                "heading jump above pi between neighbouring samples".into(),
            ));
        }
    }
    if kappa.iter().any(|k| (k * ds).abs() >= 1.0) {
        return Err(ReferenceLineError::InvalidGeometry(
            "curvature times spacing reached 1".into(),
        ));
    }

    let samples = (0..m)
        .map(|i| ReferencePoint {
            s: i as f64 * ds,
            x: pos[i].x,
            y: pos[i].y,
            theta: wrap_angle(theta_unwrapped[i]),
            kappa: kappa[i],
            dkappa: dkappa[i],
        })
        .collect();
    Ok(ReferenceLine { samples, spacing: ds })
}

impl ReferenceLine {
    /// Build directly from precomputed samples (tests and synthetic lines).
    /// Samples must be uniformly spaced in `s` starting at 0.
    pub fn from_samples(samples: Vec<ReferencePoint>) -> Result<Self, ReferenceLineError> {
        if samples.len() < 3 {
            return Err(ReferenceLineError::TooFewPoints(samples.len()));
        }
        let spacing = samples[1].s - samples[0].s;
        for (i, w) in samples.windows(2).enumerate() {
            if (w[1].s - w[0].s - spacing).abs() > 1e-9 {
                return Err(ReferenceLineError::InvalidGeometry(format!(
                    "non-uniform spacing at sample {i}"
                )));
            }
        }
        Ok(Self { samples, spacing })
    }

    pub fn samples(&self) -> &[ReferencePoint] {
        &self.samples
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn total_length(&self) -> f64 {
        self.samples.last().unwrap().s
    }

    pub fn in_range(&self, s: f64) -> bool {
        (-1e-9..=self.total_length() + 1e-9).contains(&s)
    }

    /// Interpolated reference quantities at arbitrary `s` (clamped to the
    /// line range). Positions and heading use cubic Hermite interpolation —
    /// heading slope is the stored curvature — so the effective curvature
    /// seen by projection is continuous; `kappa`/`dkappa` interpolate
    /// linearly.
    pub fn point_at(&self, s: f64) -> ReferencePoint {
        let s = s.clamp(0.0, self.total_length());
        let h = self.spacing;
        let i = ((s / h) as usize).min(self.samples.len() - 2);
        let a = &self.samples[i];
        let b = &self.samples[i + 1];
        let u = (s - a.s) / h;

        let (h00, h10, h01, h11) = hermite_basis(u);
        let ta = Vector2::new(a.theta.cos(), a.theta.sin());
        let tb = Vector2::new(b.theta.cos(), b.theta.sin());
        let pa = Vector2::new(a.x, a.y);
        let pb = Vector2::new(b.x, b.y);
        let p = pa * h00 + ta * (h10 * h) + pb * h01 + tb * (h11 * h);

        let dtheta = wrap_angle(b.theta - a.theta);
        let theta = a.theta + h00 * 0.0 + h10 * h * a.kappa + h01 * dtheta + h11 * h * b.kappa;

        ReferencePoint {
            s,
            x: p.x,
            y: p.y,
            theta: wrap_angle(theta),
            kappa: a.kappa + (b.kappa - a.kappa) * u,
            dkappa: a.dkappa + (b.dkappa - a.dkappa) * u,
        }
    }

    /// Signed lateral offset convention: positive to the left of the
    /// tangent. Returns (s, lateral, nearest sample index).
    ///
    /// With a `hint` index the search is confined to ±20 m around it;
    /// without one, two well-separated near-equal minima raise
    /// [`ReferenceLineError::AmbiguousProjection`].
    pub fn project(
        &self,
        xy: (f64, f64),
        hint: Option<usize>,
    ) -> Result<(f64, f64, usize), ReferenceLineError> {
        let p = Vector2::new(xy.0, xy.1);
        let n = self.samples.len();
        let w = (20.0 / self.spacing).ceil() as usize;
        let (lo, hi) = match hint {
            Some(idx) => (idx.saturating_sub(w), (idx + w).min(n - 1)),
            None => (0, n - 1),
        };
        let d2: Vec<f64> = (lo..=hi)
            .map(|i| (Vector2::new(self.samples[i].x, self.samples[i].y) - p).norm_squared())
            .collect();
        let rel_best = d2
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let best = lo + rel_best;

        if hint.is_none() {
            // Collect interior local minima of the sampled distance; a
            // near-tie more than 20 m away means the projection is not
            // unique.
            let best_d = d2[rel_best].sqrt();
            for i in 1..d2.len() - 1 {
                if d2[i] <= d2[i - 1] && d2[i] <= d2[i + 1] {
                    let s_i = self.samples[lo + i].s;
                    let s_b = self.samples[best].s;
                    if (s_i - s_b).abs() > 20.0 && d2[i].sqrt() <= best_d * 1.05 + 1e-9 {
                        return Err(ReferenceLineError::AmbiguousProjection(s_b, s_i));
                    }
                }
            }
        }

        let s = self.refine_foot(p, self.samples[best].s);
        let rp = self.point_at(s);
        let normal = Vector2::new(-rp.theta.sin(), rp.theta.cos());
        let lateral = (p - Vector2::new(rp.x, rp.y)).dot(&normal);
        Ok((s, lateral, best))
    }

    /// Solve the tangency condition (p − r(s))·τ(s) = 0 by bisection around
    /// the nearest sample. The same interpolated model serves `point_at`, so
    /// projection inverts evaluation exactly.
    fn refine_foot(&self, p: Vector2<f64>, s0: f64) -> f64 {
        let g = |s: f64| {
            let rp = self.point_at(s);
            let tau = Vector2::new(rp.theta.cos(), rp.theta.sin());
            (p - Vector2::new(rp.x, rp.y)).dot(&tau)
        };
        let mut lo = (s0 - 2.0 * self.spacing).max(0.0);
        let mut hi = (s0 + 2.0 * self.spacing).min(self.total_length());
        // g decreases along s near the foot: clamp to an end when the foot
        // falls outside the line.
        if g(lo) <= 0.0 {
            return lo;
        }
        if g(hi) >= 0.0 {
            return hi;
        }
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn hermite_basis(u: f64) -> (f64, f64, f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    (
        2.0 * u3 - 3.0 * u2 + 1.0,
        u3 - 2.0 * u2 + u,
        -2.0 * u3 + 3.0 * u2,
        u3 - u2,
    )
}
