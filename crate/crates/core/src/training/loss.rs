use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::geo::{Group, GroupShares};

/// Mean squared error over aligned tract-day vectors.
pub fn mse_loss(z_pred: &[f64], z_true: &[f64]) -> Result<f64> {
    if z_pred.len() != z_true.len() || z_pred.is_empty() {
        return Err(Error::shape(
            "mse_loss",
            format!("{} predictions vs {} targets", z_pred.len(), z_true.len()),
        ));
    }
    let sq: f64 = z_pred.iter().zip(z_true).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(sq / z_pred.len() as f64)
}

/// Per-tract weights turning predicted counts into per-capita gaps between
/// each protected group and the non-protected group.
///
/// Column `g` holds `w_i^g / P_g − w_i^W / P_W` with `P_g = Σ_i p_i·w_i^g`, so
/// `z·M` yields the three signed per-capita gaps of a day's predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct IfgWeights {
    matrix: Array,
}

impl IfgWeights {
    pub fn new(populations: &[f64], shares: &[GroupShares]) -> Result<Self> {
        if populations.len() != shares.len() || populations.is_empty() {
            return Err(Error::shape(
                "IfgWeights",
                format!("{} populations vs {} share rows", populations.len(), shares.len()),
            ));
        }
        let group_pop = |g: Group| -> f64 { populations.iter().zip(shares).map(|(p, s)| p * s.get(g)).sum() };
        let pw = group_pop(Group::NON_PROTECTED);
        let mut empty = Vec::new();
        if !(pw > 0.0) {
            empty.push(Group::NON_PROTECTED.to_string());
        }
        let pg: Vec<f64> = Group::PROTECTED.iter().map(|&g| group_pop(g)).collect();
        for (g, p) in Group::PROTECTED.iter().zip(&pg) {
            if !(*p > 0.0) {
                empty.push(g.to_string());
            }
        }
        if !empty.is_empty() {
            return Err(Error::Config(vec![format!(
                "fairness gap needs a positive citywide population for every group; empty: {}",
                empty.join(", ")
            )]));
        }
        let n = populations.len();
        let mut m = Vec::with_capacity(n * 3);
        for s in shares {
            for (g, p) in Group::PROTECTED.iter().zip(&pg) {
                m.push(s.get(*g) / p - s.get(Group::NON_PROTECTED) / pw);
            }
        }
        Ok(Self {
            matrix: Array::new(vec![n, 3], m)?,
        })
    }

    pub fn tracts(&self) -> usize {
        self.matrix.shape()[0]
    }

    /// The day's fairness gap for a vector `z` of shape `[N]`, or `None` when
    /// no crimes were reported that day.
    pub fn term(&self, tape: &mut Tape, z: Var, reported_total: f64) -> Result<Option<Var>> {
        if !(reported_total > 0.0) {
            return Ok(None);
        }
        let gaps = tape.matvec_const(z, self.matrix.clone())?;
        let abs = tape.abs(gaps);
        let total = tape.sum(abs);
        Ok(Some(tape.scale(total, 1.0 / reported_total)))
    }

    /// Plain evaluation of [`IfgWeights::term`]; zero on days without
    /// reported crimes.
    pub fn value(&self, z_pred: &[f64], reported_total: f64) -> Result<f64> {
        if z_pred.len() != self.tracts() {
            return Err(Error::shape(
                "ifg_loss",
                format!("{} predictions for {} tracts", z_pred.len(), self.tracts()),
            ));
        }
        if !(reported_total > 0.0) {
            return Ok(0.0);
        }
        let m = self.matrix.data();
        let mut gaps = [0.0; 3];
        for (i, z) in z_pred.iter().enumerate() {
            for g in 0..3 {
                gaps[g] += z * m[i * 3 + g];
            }
        }
        Ok(gaps.iter().map(|g| g.abs()).sum::<f64>() / reported_total)
    }
}

/// The fairness gap of one day's predictions between one protected group
/// (shares `w_pos`) and the non-protected group (shares `w_neg`): the
/// absolute difference of predicted crimes per capita, divided by the day's
/// total reported crimes. Zero when nothing was reported.
pub fn ifg_pair(z_pred: &[f64], z_true: &[f64], populations: &[f64], w_pos: &[f64], w_neg: &[f64]) -> Result<f64> {
    let n = z_pred.len();
    if [z_true.len(), populations.len(), w_pos.len(), w_neg.len()].iter().any(|&l| l != n) {
        return Err(Error::shape("ifg_pair", "all inputs must have one entry per tract"));
    }
    let reported: f64 = z_true.iter().sum();
    if !(reported > 0.0) {
        return Ok(0.0);
    }
    let rate = |w: &[f64]| -> Result<f64> {
        let pop: f64 = populations.iter().zip(w).map(|(p, w)| p * w).sum();
        if !(pop > 0.0) {
            return Err(Error::Invalid("group has no population".into()));
        }
        Ok(z_pred.iter().zip(w).map(|(z, w)| z * w).sum::<f64>() / pop)
    };
    Ok((rate(w_pos)? - rate(w_neg)?).abs() / reported)
}

/// The individual-based fairness gap of one day's predictions, summed over
/// the protected groups against the non-protected group.
pub fn ifg_loss(z_pred: &[f64], z_true: &[f64], populations: &[f64], shares: &[GroupShares]) -> Result<f64> {
    if z_true.len() != z_pred.len() {
        return Err(Error::shape(
            "ifg_loss",
            format!("{} predictions vs {} targets", z_pred.len(), z_true.len()),
        ));
    }
    IfgWeights::new(populations, shares)?.value(z_pred, z_true.iter().sum())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::{grad_check, Params};

    fn shares(w: f64, ba: f64, hl: f64, a: f64) -> GroupShares {
        GroupShares { w, ba, hl, a }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 3.0], &[2.0, 3.0]).unwrap(), 0.5);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(
            mse_loss(&[3.0, 1.0, 0.5], &[3.0, 2.0, 0.0]).unwrap(),
            mse_loss(&[0.5, 3.0, 1.0], &[0.0, 3.0, 2.0]).unwrap()
        );
    }

    #[test]
    fn two_tract_fixture() {
        // tract 1 fully protected, tract 2 fully non-protected
        let v = ifg_pair(&[10.0, 0.0], &[6.0, 4.0], &[100.0, 100.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(v, 0.01);
        // same fixture inside the three-group loss: HL and A live in a third
        // tract predicted at zero, matching the zero W rate
        let p3 = [100.0, 100.0, 50.0];
        let s3 = [
            shares(0.0, 1.0, 0.0, 0.0),
            shares(1.0, 0.0, 0.0, 0.0),
            shares(0.0, 0.0, 0.5, 0.5),
        ];
        assert_eq!(ifg_loss(&[10.0, 0.0, 0.0], &[6.0, 4.0, 0.0], &p3, &s3).unwrap(), 0.01);
        // the pair alone leaves HL and A without population
        assert!(IfgWeights::new(&p3[..2], &s3[..2]).is_err());
    }

    #[test]
    fn balanced_is_zero_and_empty_day_skipped() {
        let p = [100.0, 200.0, 50.0, 80.0];
        let s = [
            shares(1.0, 0.0, 0.0, 0.0),
            shares(0.0, 1.0, 0.0, 0.0),
            shares(0.0, 0.0, 1.0, 0.0),
            shares(0.0, 0.0, 0.0, 1.0),
        ];
        // identical per-capita predictions
        let z: Vec<f64> = p.iter().map(|x| x * 0.03).collect();
        assert!(ifg_loss(&z, &[1.0, 0.0, 2.0, 0.0], &p, &s).unwrap() < 1e-15);
        assert_eq!(ifg_loss(&[5.0, 0.0, 0.0, 0.0], &[0.0; 4], &p, &s).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle_and_scales_linearly(
            rows in proptest::collection::vec((1.0f64..500.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..5.0), 4..12),
            zt in 0.5f64..40.0,
            c in 0.1f64..10.0,
        ) {
            let p: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let s: Vec<GroupShares> = rows.iter().map(|r| {
                let t = r.1 + r.2 + r.3 + r.4 + 1e-9;
                shares(r.1 / t, r.2 / t, r.3 / t, r.4 / t)
            }).collect();
            let z: Vec<f64> = rows.iter().map(|r| r.5).collect();
            let w = IfgWeights::new(&p, &s).unwrap();
            let col = |g: Group| s.iter().map(|x| x.get(g)).collect::<Vec<_>>();
            let mut zt_vec = vec![0.0; z.len()];
            zt_vec[0] = zt;
            let oracle: f64 = Group::PROTECTED.iter()
                .map(|&g| ifg_pair(&z, &zt_vec, &p, &col(g), &col(Group::W)).unwrap())
                .sum();
            let got = w.value(&z, zt).unwrap();
            prop_assert!((got - oracle).abs() <= 1e-10 * oracle.max(1e-6));
            let zc: Vec<f64> = z.iter().map(|v| v * c).collect();
            let scaled = w.value(&zc, zt).unwrap();
            prop_assert!((scaled - c * got).abs() <= 1e-10 * scaled.max(1e-6));
        }
    }

    #[test]
    fn tape_term_matches_value_and_gradient() {
        let p = [100.0, 150.0, 80.0, 60.0];
        let s = [
            shares(0.6, 0.2, 0.1, 0.1),
            shares(0.1, 0.5, 0.3, 0.1),
            shares(0.3, 0.3, 0.2, 0.2),
            shares(0.25, 0.25, 0.25, 0.25),
        ];
        let w = IfgWeights::new(&p, &s).unwrap();
        let mut params = Params::new();
        let id = params.insert("z", Array::from_vec(vec![1.0, 4.0, 0.5, 2.5])).unwrap();
        let mut tape = Tape::new();
        let z = tape.param(&params, id);
        let t = w.term(&mut tape, z, 7.0).unwrap().unwrap();
        let expect = w.value(&[1.0, 4.0, 0.5, 2.5], 7.0).unwrap();
        assert!((tape.value(t).item() - expect).abs() < 1e-15);
        let report = grad_check(
            &mut params,
            |tape, ps| {
                let z = tape.param(ps, id);
                Ok(w.term(tape, z, 7.0)?.unwrap())
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        let mut tape = Tape::new();
        let z = tape.param(&params, id);
        assert!(w.term(&mut tape, z, 0.0).unwrap().is_none());
    }
}
