use crate::data::MaskVolume;
use crate::tensorcore::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Weighted binary cross-entropy in logit space, summed over slices and
/// averaged over the pixels of each slice.
pub fn bce_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, masks: &MaskVolume, pos_weight: f64) -> Result<Var> {
    if !(pos_weight > 0.0 && pos_weight.is_finite()) {
        return Err(Error::invalid("bce_loss", format!("pos_weight must be positive, got {pos_weight}")));
    }
    let [s, c, h, w] = g.value(logits).dims4("bce_loss")?;
    let [ms, mh, mw] = masks.dims();
    if c != 1 || [s, h, w] != [ms, mh, mw] {
        return Err(Error::shape(
            "bce_loss",
            format!("logits {:?} do not match mask dims {:?}", [s, c, h, w], masks.dims()),
        ));
    }
    let scale = T::from_f64_lossy(1.0 / (h * w) as f64);
    g.bce_with_logits(logits, masks.to_tensor(), T::from_f64_lossy(pos_weight), scale)
}

/// Binarize logits: foreground where `sigmoid(logit) >= threshold`.
pub fn predict_masks(id: &str, logits: &Tensor<f32>, threshold: f64) -> Result<MaskVolume> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("predict_masks", format!("threshold must be in (0,1), got {threshold}")));
    }
    let [s, c, h, w] = logits.dims4("predict_masks")?;
    if c != 1 {
        return Err(Error::shape("predict_masks", format!("expected 1 channel, got {c}")));
    }
    let data = logits
        .data()
        .iter()
        .map(|&z| u8::from(1.0 / (1.0 + (-f64::from(z)).exp()) >= threshold))
        .collect();
    MaskVolume::new(id, [s, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(logits: Tensor<f64>, mask: &MaskVolume, w: f64) -> f64 {
        let mut g = Graph::new();
        let z = g.constant(logits);
        let l = bce_loss(&mut g, z, mask, w).unwrap();
        g.value(l).data()[0]
    }

    #[test]
    fn zero_logits_give_ln2_per_pixel() {
        let m = MaskVolume::new("m", [2, 2, 2], vec![0, 1, 1, 0, 1, 1, 1, 0]).unwrap();
        let l = loss_of(Tensor::zeros(&[2, 1, 2, 2]), &m, 1.0);
        assert!((l / 2.0 - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_prediction_has_near_zero_loss() {
        let m = MaskVolume::new("m", [1, 2, 2], vec![0, 1, 1, 0]).unwrap();
        let z = Tensor::new(&[1, 1, 2, 2], vec![-100.0, 100.0, 100.0, -100.0]).unwrap();
        assert!(loss_of(z, &m, 3.0) < 1e-40);
    }

    #[test]
    fn matches_direct_formula() {
        let m = MaskVolume::new("m", [1, 4, 4], (0..16).map(|i| u8::from(i % 3 == 0)).collect()).unwrap();
        let zs: Vec<f64> = (0..16).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.7).collect();
        let w = 2.5;
        let direct: f64 = zs
            .iter()
            .zip(m.data())
            .map(|(&z, &y)| {
                let p = 1.0 / (1.0 + (-z).exp());
                let y = f64::from(y);
                -(w * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 16.0;
        let l = loss_of(Tensor::new(&[1, 1, 4, 4], zs).unwrap(), &m, w);
        assert!((l - direct).abs() < 1e-12, "{l} vs {direct}");
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let z = Tensor::new(&[1, 1, 1, 3], vec![0.0, -3.0, 3.0]).unwrap();
        assert_eq!(predict_masks("p", &z, 0.5).unwrap().data(), &[1, 0, 1]);
        assert!(predict_masks("p", &z, 1.0).is_err());
    }

    #[test]
    fn rejects_shape_mismatch_and_bad_weight() {
        let m = MaskVolume::new("m", [1, 2, 2], vec![0; 4]).unwrap();
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[1, 1, 2, 3]));
        assert!(bce_loss(&mut g, z, &m, 1.0).is_err());
        let z = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(bce_loss(&mut g, z, &m, 0.0).is_err());
    }
}
