//! Radau IIA collocation schemes on Lagrange interpolation polynomials.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("unsupported collocation degree {0} (supported: 1..=5)")]
    UnsupportedDegree(usize),
}

/// Radau IIA node sets on (0, 1]; the right endpoint is always included,
/// which is what makes the scheme stiffly accurate and lets intervals chain
/// states without separate continuity variables.
pub fn radau_points(degree: usize) -> Result<Vec<f64>, SchemeError> {
    Ok(match degree {
        1 => vec![1.0],
        2 => vec![1.0 / 3.0, 1.0],
        3 => vec![
            0.15505102572168219018,
            0.64494897427831780982,
            1.0,
        ],
        4 => vec![
            0.088587959512703947396,
            0.40946686444073471086,
            0.78765946176084705603,
            1.0,
        ],
        5 => vec![
            0.057104196114517682193,
            0.27684301363812382768,
            0.58359043236891682006,
            0.86024013565621944785,
            1.0,
        ],
        d => return Err(SchemeError::UnsupportedDegree(d)),
    })
}

/// A collocation scheme over the augmented node set {0} and the collocation
/// points. `dmat[j-1][r]` is the derivative of the r-th Lagrange basis
/// polynomial at collocation node j; `quad[r]` integrates the degree-d state
/// interpolant over the unit interval.
#[derive(Debug, Clone)]
pub struct CollocationScheme {
    pub degree: usize,
    /// collocation nodes in (0, 1], strictly increasing, last = 1
    pub points: Vec<f64>,
    /// d x (d+1): L'_r(tau_j) for j = 1..d, r = 0..d
    pub dmat: Vec<Vec<f64>>,
    /// d+1 weights over nodes {0, tau_1, .., tau_d}
    pub quad: Vec<f64>,
}

impl CollocationScheme {
    pub fn radau(degree: usize) -> Result<Self, SchemeError> {
        let points = radau_points(degree)?;
        Ok(Self::from_points(points))
    }

    /// Build differentiation and quadrature coefficients for arbitrary nodes
    /// in (0, 1] (used by tests with non-Radau sets as well).
    pub fn from_points(points: Vec<f64>) -> Self {
        let d = points.len();
        let mut taus = Vec::with_capacity(d + 1);
        taus.push(0.0);
        taus.extend_from_slice(&points);

        // L'_r(tau_j): for r != j use the product formula, diagonal is the
        // sum of inverse node gaps.
        let lag_deriv = |r: usize, j: usize| -> f64 {
            if r == j {
                (0..=d).filter(|&m| m != r).map(|m| 1.0 / (taus[r] - taus[m])).sum()
            } else {
                let mut prod = 1.0 / (taus[r] - taus[j]);
                for m in 0..=d {
                    if m != r && m != j {
                        prod *= (taus[j] - taus[m]) / (taus[r] - taus[m]);
                    }
                }
                prod
            }
        };
        let dmat: Vec<Vec<f64>> = (1..=d)
            .map(|j| (0..=d).map(|r| lag_deriv(r, j)).collect())
            .collect();

        // integrate each Lagrange basis exactly: build its monomial
        // coefficients by repeated multiplication, then integrate.
        let mut quad = vec![0.0; d + 1];
        for (r, q) in quad.iter_mut().enumerate() {
            let mut coeffs = vec![1.0f64]; // polynomial 1
            for (m, &tm) in taus.iter().enumerate() {
                if m == r {
                    continue;
                }
                let scale = 1.0 / (taus[r] - tm);
                // multiply by (x - tm) * scale
                let mut next = vec![0.0; coeffs.len() + 1];
                for (i, &c) in coeffs.iter().enumerate() {
                    next[i + 1] += c * scale;
                    next[i] -= c * tm * scale;
                }
                coeffs = next;
            }
            *q = coeffs.iter().enumerate().map(|(i, &c)| c / (i as f64 + 1.0)).sum();
        }

        CollocationScheme { degree: d, points, dmat, quad }
    }
}
