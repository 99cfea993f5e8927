//! Scatterer-aided phase refinement: per-link phase estimates against the
//! current scattered-field model, projected onto node-consistent phases.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::IncidenceMatrix;
use crate::phase::wrap;
use crate::stats::median;

/// Gains below this fraction of the median magnitude carry no usable phase.
pub const RELIABLE_FRACTION: f64 = 1e-3;

/// Compensated CSI with the known LOS removed,
/// `exp(j Phi_hat) o y - h_los o u` (CSI carries `exp(-j Phi)`).
pub fn form_nlos_observation(
    y: &[Complex64],
    applied: &DMatrix<f64>,
    h_los: &[Complex64],
    u_tilde: &[bool],
) -> Result<Vec<Complex64>> {
    if applied.len() != y.len() || h_los.len() != y.len() || u_tilde.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} CSI entries, phase matrix {:?}, {} LOS entries, {} flags",
            y.len(),
            applied.shape(),
            h_los.len(),
            u_tilde.len()
        )));
    }
    Ok(y.iter()
        .zip(applied.as_slice())
        .zip(h_los.iter().zip(u_tilde))
        .map(|((v, &phi), (h, &u))| {
            let comp = v * Complex64::from_polar(1.0, phi);
            if u { comp - h } else { comp }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkPhases {
    /// `arg(y_nlos conj(h_nlos))`, `M x K`; zero where unreliable.
    pub phase: DMatrix<f64>,
    pub reliable: Vec<bool>,
}

/// Per-entry ML phase of `y_nlos` against the model field `h_nlos`.
pub fn ml_link_phase(y_nlos: &[Complex64], h_nlos: &[Complex64], n_links: usize) -> Result<LinkPhases> {
    if y_nlos.len() != h_nlos.len() || n_links == 0 || y_nlos.len() % n_links != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} observations, {} model entries, {n_links} links",
            y_nlos.len(),
            h_nlos.len()
        )));
    }
    let mags: Vec<f64> = h_nlos.iter().map(|h| h.norm()).collect();
    let floor = RELIABLE_FRACTION * median(&mags).unwrap_or(0.0);
    let reliable: Vec<bool> = mags.iter().map(|&a| a > floor && a > 0.0).collect();
    let vals = y_nlos
        .iter()
        .zip(h_nlos)
        .zip(&reliable)
        .map(|((y, h), &ok)| if ok { (y * h.conj()).arg() } else { 0.0 });
    Ok(LinkPhases {
        phase: DMatrix::from_iterator(n_links, y_nlos.len() / n_links, vals),
        reliable,
    })
}

/// Node-consistent projection of wrapped link phases, one subcarrier per
/// column: `G (G^T W G)^-1 G^T W phi` with 0/1 weights from `reliable`.
pub fn node_ls(phases: &DMatrix<f64>, incidence: &IncidenceMatrix, reliable: &[bool]) -> Result<DMatrix<f64>> {
    let g = &incidence.matrix;
    let (m_links, k_count) = phases.shape();
    if m_links != g.nrows() || reliable.len() != phases.len() {
        return Err(Error::DimensionMismatch(format!(
            "phase matrix {:?}, {} incidence rows, {} flags",
            phases.shape(),
            g.nrows(),
            reliable.len()
        )));
    }
    let mut out = DMatrix::zeros(m_links, k_count);
    for k in 0..k_count {
        let w = DVector::from_iterator(m_links, (0..m_links).map(|m| if reliable[k * m_links + m] { 1.0 } else { 0.0 }));
        let gt_w = g.transpose() * DMatrix::from_diagonal(&w);
        let lhs = &gt_w * g;
        let chol = lhs.clone().cholesky().ok_or_else(|| Error::RankDeficient {
            rank: lhs.rank(1e-9),
            cols: g.ncols(),
        })?;
        let z = DVector::from_iterator(m_links, (0..m_links).map(|m| wrap(phases[(m, k)])));
        let node = chol.solve(&(gt_w * z));
        out.set_column(k, &(g * node));
    }
    Ok(out)
}

/// `applied + k_phi * correction`, `k_phi` in `(0, 1)`.
pub fn damped_update(applied: &DMatrix<f64>, correction: &DMatrix<f64>, k_phi: f64) -> Result<DMatrix<f64>> {
    if !(k_phi > 0.0 && k_phi < 1.0) {
        return Err(Error::OutOfRange(format!("phase step must lie in (0, 1), got {k_phi}")));
    }
    if applied.shape() != correction.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", applied.shape(), correction.shape())));
    }
    Ok(applied + correction * k_phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_incidence, NodeLayout};

    fn layout() -> NodeLayout {
        NodeLayout::new(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![[0.0, 3.0], [1.0, 3.0]],
        )
        .unwrap()
    }

    #[test]
    fn observation_removes_los() {
        let y = vec![Complex64::new(0.0, 1.0), Complex64::new(2.0, 0.0)];
        let applied = DMatrix::from_column_slice(2, 1, &[std::f64::consts::FRAC_PI_2, 0.0]);
        let h = vec![Complex64::new(-0.5, 0.0), Complex64::new(1.0, 0.0)];
        let out = form_nlos_observation(&y, &applied, &h, &[true, false]).unwrap();
        assert!((out[0] - Complex64::new(-0.5, 0.0)).norm() < 1e-12);
        assert!((out[1] - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        assert!(form_nlos_observation(&y, &applied, &h[..1], &[true, false]).is_err());
    }

    #[test]
    fn ml_phase_and_global_rotation() {
        let h: Vec<_> = (0..6).map(|i| Complex64::from_polar(1.0 + i as f64, 0.3 * i as f64)).collect();
        let y: Vec<_> = h.iter().map(|v| v * Complex64::from_polar(1.0, 0.7)).collect();
        let a = ml_link_phase(&y, &h, 3).unwrap();
        assert!(a.phase.iter().all(|p| (p - 0.7).abs() < 1e-12));
        let theta = 0.4;
        let rotated: Vec<_> = h.iter().map(|v| v * Complex64::from_polar(1.0, theta)).collect();
        let b = ml_link_phase(&y, &rotated, 3).unwrap();
        for (p, q) in a.phase.iter().zip(b.phase.iter()) {
            assert!((q - (p - theta)).abs() < 1e-12);
        }
        let mut weak = h.clone();
        weak[2] = Complex64::new(1e-9, 0.0);
        let c = ml_link_phase(&y, &weak, 3).unwrap();
        assert!(!c.reliable[2] && c.reliable[1]);
    }

    #[test]
    fn node_ls_matches_pseudoinverse() {
        let lay = layout();
        let g = build_incidence(&lay, None).unwrap();
        let phases = DMatrix::from_column_slice(6, 1, &[0.3, -0.2, 0.5, 0.1, -0.4, 0.25]);
        let out = node_ls(&phases, &g, &[true; 6]).unwrap();
        let pinv = g.matrix.clone().pseudo_inverse(1e-12).unwrap();
        let oracle = &g.matrix * (pinv * phases.column(0));
        for m in 0..6 {
            assert!((out[(m, 0)] - oracle[m]).abs() < 1e-10);
        }
        // idempotent on consistent phases
        let again = node_ls(&out, &g, &[true; 6]).unwrap();
        assert!((&again - &out).amax() < 1e-10);
    }

    #[test]
    fn node_ls_detects_disconnection() {
        let lay = layout();
        let g = build_incidence(&lay, None).unwrap();
        let phases = DMatrix::zeros(6, 1);
        let mut mask = [true; 6];
        for i in 0..3 {
            mask[lay.link_index(i, 1)] = false;
        }
        assert!(matches!(node_ls(&phases, &g, &mask), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn update_bounds() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let c = DMatrix::from_element(2, 2, 2.0);
        let u = damped_update(&a, &c, 0.25).unwrap();
        assert!(u.iter().all(|&v| (v - 1.5).abs() < 1e-15));
        assert!(damped_update(&a, &c, 1.0).is_err());
        assert!(damped_update(&a, &c, 0.0).is_err());
    }
}
