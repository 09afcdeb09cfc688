//! A two-piece planar system split by the switching conic: `inner` governs
//! {h <= 0}, `outer` governs {h >= 0}.

use crate::error::Result;
use crate::fields::{classify_singularity, first_integral, AffineField, QuadraticIntegral, SingularityKind};
use crate::poly::TrigPoly;
use crate::switching::SwitchingConic;
use serde::Serialize;

/// Structural class of the pair (inner piece, outer piece). The named classes
/// carry sharp cycle-count bounds; `Other` does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClassTag {
    ConstantCenter,
    ConstantSaddle,
    SaddleCenter,
    CenterSaddle,
    SaddleSaddle,
    Other,
}

#[derive(Debug, Clone, Copy)]
pub struct PiecewiseSystem {
    pub inner: AffineField,
    pub outer: AffineField,
    pub conic: SwitchingConic,
    pub class_tag: ClassTag,
    h1: QuadraticIntegral,
    h2: QuadraticIntegral,
}

impl PiecewiseSystem {
    /// Requires both pieces divergence-free (constants included); the first
    /// integrals are cached.
    pub fn new(inner: AffineField, outer: AffineField, conic: SwitchingConic) -> Result<Self> {
        let h1 = first_integral(&inner)?;
        let h2 = first_integral(&outer)?;
        let class_tag = classify_pair(&inner, &outer);
        Ok(PiecewiseSystem { inner, outer, conic, class_tag, h1, h2 })
    }

    pub fn on_unit_circle(inner: AffineField, outer: AffineField) -> Result<Self> {
        PiecewiseSystem::new(inner, outer, SwitchingConic::unit_circle())
    }

    pub fn integrals(&self) -> (&QuadraticIntegral, &QuadraticIntegral) {
        (&self.h1, &self.h2)
    }

    /// Both integrals restricted to the conic parameter angle.
    pub fn boundary_integrals(&self) -> (TrigPoly, TrigPoly) {
        let (a, b) = self.conic.semi_axes();
        (
            TrigPoly::restrict(&integral_quad(&self.h1), a, b),
            TrigPoly::restrict(&integral_quad(&self.h2), a, b),
        )
    }

    /// Upper bound on the number of isolated crossing cycles for the named
    /// classes; None for `Other`.
    pub fn class_bound(&self) -> Option<usize> {
        match self.class_tag {
            ClassTag::ConstantCenter | ClassTag::ConstantSaddle => Some(1),
            ClassTag::SaddleCenter | ClassTag::CenterSaddle | ClassTag::SaddleSaddle => Some(2),
            ClassTag::Other => None,
        }
    }

    pub fn time_reversed(&self) -> Self {
        // negating a divergence-free field keeps it divergence-free
        PiecewiseSystem::new(self.inner.negated(), self.outer.negated(), self.conic)
            .expect("negation preserves the divergence")
    }
}

fn integral_quad(h: &QuadraticIntegral) -> crate::poly::Quad {
    crate::poly::Quad {
        c00: 0.0,
        c10: h.c10,
        c01: h.c01,
        c20: h.c20,
        c11: h.c11,
        c02: h.c02,
    }
}

fn classify_pair(inner: &AffineField, outer: &AffineField) -> ClassTag {
    #[derive(PartialEq)]
    enum Piece {
        Constant,
        Center,
        Saddle,
        Other,
    }
    let piece = |f: &AffineField| {
        if f.is_constant() {
            return Piece::Constant;
        }
        match classify_singularity(f).kind {
            SingularityKind::Center => Piece::Center,
            SingularityKind::Saddle => Piece::Saddle,
            _ => Piece::Other,
        }
    };
    match (piece(inner), piece(outer)) {
        (Piece::Constant, Piece::Center) => ClassTag::ConstantCenter,
        (Piece::Constant, Piece::Saddle) => ClassTag::ConstantSaddle,
        (Piece::Saddle, Piece::Center) => ClassTag::SaddleCenter,
        (Piece::Center, Piece::Saddle) => ClassTag::CenterSaddle,
        (Piece::Saddle, Piece::Saddle) => ClassTag::SaddleSaddle,
        _ => ClassTag::Other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_tags_of_reference_pairs() {
        let mk = |i: [f64; 6], o: [f64; 6]| {
            PiecewiseSystem::on_unit_circle(
                AffineField::new(i[0], i[1], i[2], i[3], i[4], i[5]),
                AffineField::new(o[0], o[1], o[2], o[3], o[4], o[5]),
            )
            .unwrap()
        };
        let cc = mk([1., 0., 0., 0., 0., 0.], [0., 0., 2., 0., -6., 0.]);
        assert_eq!(cc.class_tag, ClassTag::ConstantCenter);
        assert_eq!(cc.class_bound(), Some(1));

        let ss = mk(
            [-0.5, 2., -4., -1., -4., -2.],
            [5., 2., -2., 1., -6., -2.],
        );
        assert_eq!(ss.class_tag, ClassTag::SaddleSaddle);
        assert_eq!(ss.class_bound(), Some(2));
    }

    #[test]
    fn non_divergence_free_piece_is_rejected() {
        let bad = AffineField::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let ok = AffineField::constant(1.0, 0.0);
        assert!(PiecewiseSystem::on_unit_circle(ok, bad).is_err());
    }

    #[test]
    fn boundary_integrals_match_pointwise() {
        let sys = PiecewiseSystem::on_unit_circle(
            AffineField::constant(2.0, -1.0),
            AffineField::new(2.0, -1.0, 2.0, -1.0, -4.0, 1.0),
        )
        .unwrap();
        let (g1, g2) = sys.boundary_integrals();
        let (h1, h2) = sys.integrals();
        for i in 0..40 {
            let phi = crate::geom::TAU * i as f64 / 40.0;
            let p = sys.conic.angle_point(phi);
            assert!((g1.eval(phi) - h1.eval(p)).abs() < 1e-13);
            assert!((g2.eval(phi) - h2.eval(p)).abs() < 1e-13);
        }
    }
}
