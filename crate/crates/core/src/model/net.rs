use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArchConfig, GateInputMap, ModelVariant};
use crate::autodiff::{Array, Padding, ParamId, Params, Tape, Var};
use crate::error::{Error, Result};
use crate::geo::{FeatureTensor, LAYOUT_ROWS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tract_id: String,
    pub day: NaiveDate,
    /// Estimated true crimes.
    pub y: f64,
    /// Reporting rate; exactly 1 when the gate is bypassed.
    pub pi: f64,
    /// Estimated reported crimes, `y·pi`.
    pub z: f64,
}

/// Network structure. Weights live in a separate [`Params`] so that the
/// same structure can drive training, gradient checks and inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub variant: ModelVariant,
    pub arch: ArchConfig,
    /// Look-back length T.
    pub days: usize,
    /// Number of determinants the gate reads; zero without a gate.
    pub gate_k: usize,
}

struct Layer {
    w: ParamId,
    b: ParamId,
}

impl Model {
    pub fn new(variant: ModelVariant, arch: ArchConfig, days: usize, gate_k: usize) -> Result<Self> {
        let errs = arch.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        if days == 0 {
            return Err(Error::Invalid("look-back length must be positive".into()));
        }
        if variant.gate_enabled && gate_k == 0 {
            return Err(Error::Invalid("the gated variant needs at least one determinant".into()));
        }
        let gate_k = if variant.gate_enabled { gate_k } else { 0 };
        Ok(Self {
            variant,
            arch,
            days,
            gate_k,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.variant.channels.len()
    }

    /// Names and shapes of every parameter, in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut branch = |prefix: &str, width: usize, cin: usize, chans: &[usize], kernel: [usize; 2]| {
            let mut c = cin;
            for (i, &co) in chans.iter().enumerate() {
                out.push((format!("{prefix}.conv{i}.w"), vec![kernel[0], kernel[1], c, co]));
                out.push((format!("{prefix}.conv{i}.b"), vec![co]));
                c = co;
            }
            out.push((format!("{prefix}.fc.w"), vec![LAYOUT_ROWS * width * c, 1]));
            out.push((format!("{prefix}.fc.b"), vec![1]));
        };
        branch(
            "pred",
            self.days,
            self.in_channels(),
            &self.arch.predictor_channels,
            self.arch.predictor_kernel,
        );
        if self.variant.gate_enabled {
            branch("gate", self.gate_k, 2, &self.arch.gate_channels, self.arch.gate_kernel);
        }
        out
    }

    /// He-uniform weights and zero biases, seeded. The predictor is drawn
    /// first so variants sharing it start from identical predictor weights.
    pub fn init_params(&self, seed: u64) -> Result<Params> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        for (name, shape) in self.param_shapes() {
            if name.ends_with(".b") {
                params.insert(name, Array::zeros(&shape))?;
            } else {
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                params.insert_he_uniform(name, &shape, fan_in, &mut rng)?;
            }
        }
        Ok(params)
    }

    /// Checks that `params` holds exactly the expected names and shapes.
    pub fn check_params(&self, params: &Params) -> Result<()> {
        let expected = self.param_shapes();
        for (name, shape) in &expected {
            let p = params
                .by_name(name)
                .ok_or_else(|| Error::MissingParameter(name.clone()))?;
            if p.value.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "check_params",
                    format!("`{name}` has shape {:?}, expected {shape:?}", p.value.shape()),
                ));
            }
        }
        if params.len() != expected.len() {
            let extra: Vec<&str> = params
                .iter()
                .map(|p| p.name.as_str())
                .filter(|n| !expected.iter().any(|(e, _)| e == n))
                .collect();
            return Err(Error::Invalid(format!("unexpected parameters {extra:?}")));
        }
        Ok(())
    }

    fn layers(&self, params: &Params, prefix: &str, blocks: usize) -> Result<(Vec<Layer>, Layer)> {
        let get = |n: String| params.id(&n);
        let convs = (0..blocks)
            .map(|i| {
                Ok(Layer {
                    w: get(format!("{prefix}.conv{i}.w"))?,
                    b: get(format!("{prefix}.conv{i}.b"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fc = Layer {
            w: get(format!("{prefix}.fc.w"))?,
            b: get(format!("{prefix}.fc.b"))?,
        };
        Ok((convs, fc))
    }

    fn branch(
        &self,
        tape: &mut Tape,
        params: &Params,
        prefix: &str,
        blocks: usize,
        input: Array,
    ) -> Result<Var> {
        let batch = input.shape()[0];
        let (convs, fc) = self.layers(params, prefix, blocks)?;
        let mut x = tape.constant(input);
        for layer in &convs {
            let w = tape.param(params, layer.w);
            let b = tape.param(params, layer.b);
            let c = tape.conv2d(x, w, b, Padding::Same)?;
            x = tape.relu(c);
        }
        let flat: usize = tape.value(x).shape()[1..].iter().product();
        let x = tape.reshape(x, &[batch, flat])?;
        let w = tape.param(params, fc.w);
        let b = tape.param(params, fc.b);
        let out = tape.fully_connected(x, w, b)?;
        tape.reshape(out, &[batch])
    }

    /// Stacks feature tensors into an N×9×T×C batch after checking channels.
    pub fn stack_features(&self, features: &[&FeatureTensor]) -> Result<Array> {
        if features.is_empty() {
            return Err(Error::shape("stack_features", "empty batch"));
        }
        let c = self.in_channels();
        let mut data = Vec::with_capacity(features.len() * LAYOUT_ROWS * self.days * c);
        for f in features {
            if f.channel_names != self.variant.channels {
                return Err(Error::shape(
                    "forward_true_crimes",
                    format!(
                        "features carry channels {:?}, variant {} expects {:?}",
                        f.channel_names, self.variant.kind, self.variant.channels
                    ),
                ));
            }
            if f.days != self.days {
                return Err(Error::shape(
                    "forward_true_crimes",
                    format!("look-back {} vs model {}", f.days, self.days),
                ));
            }
            data.extend_from_slice(&f.values);
        }
        Array::new(vec![features.len(), LAYOUT_ROWS, self.days, c], data)
    }

    pub fn stack_gates(&self, gates: &[&GateInputMap]) -> Result<Array> {
        if gates.is_empty() {
            return Err(Error::shape("stack_gates", "empty batch"));
        }
        let mut data = Vec::with_capacity(gates.len() * LAYOUT_ROWS * self.gate_k * 2);
        for g in gates {
            if g.k != self.gate_k {
                return Err(Error::shape(
                    "forward_reporting_rate",
                    format!("gate map has {} determinants, model expects {}", g.k, self.gate_k),
                ));
            }
            data.extend_from_slice(&g.values);
        }
        Array::new(vec![gates.len(), LAYOUT_ROWS, self.gate_k, 2], data)
    }

    /// True-crime estimates `y ≥ 0`, shape `[N]`.
    pub fn true_crimes_var(&self, tape: &mut Tape, params: &Params, batch: Array) -> Result<Var> {
        let logits = self.branch(tape, params, "pred", self.arch.predictor_channels.len(), batch)?;
        Ok(tape.softplus(logits))
    }

    /// Reporting rates in (0, 1), shape `[N]`.
    pub fn reporting_rate_var(&self, tape: &mut Tape, params: &Params, batch: Array) -> Result<Var> {
        if !self.variant.gate_enabled {
            return Err(Error::Invalid(format!("variant {} has no gate", self.variant.kind)));
        }
        let logits = self.branch(tape, params, "gate", self.arch.gate_channels.len(), batch)?;
        Ok(tape.sigmoid(logits))
    }

    /// Reported-crime estimates `z` for a batch. The gate is only evaluated
    /// for the gated variant; otherwise `z = y` and `gates` is ignored.
    pub fn reported_var(
        &self,
        tape: &mut Tape,
        params: &Params,
        features: &[&FeatureTensor],
        gates: Option<&[&GateInputMap]>,
    ) -> Result<Var> {
        let y = self.true_crimes_var(tape, params, self.stack_features(features)?)?;
        if !self.variant.gate_enabled {
            return Ok(y);
        }
        let gates = gates.ok_or_else(|| Error::Invalid("the gated variant needs gate inputs".into()))?;
        if gates.len() != features.len() {
            return Err(Error::shape(
                "forward_reported",
                format!("{} feature maps vs {} gate maps", features.len(), gates.len()),
            ));
        }
        let pi = self.reporting_rate_var(tape, params, self.stack_gates(gates)?)?;
        tape.mul(y, pi)
    }

    pub fn forward_true_crimes(&self, params: &Params, features: &FeatureTensor) -> Result<f64> {
        let mut tape = Tape::new();
        let y = self.true_crimes_var(&mut tape, params, self.stack_features(&[features])?)?;
        Ok(tape.value(y).data()[0])
    }

    pub fn forward_reporting_rate(&self, params: &Params, gate: &GateInputMap) -> Result<f64> {
        let mut tape = Tape::new();
        let pi = self.reporting_rate_var(&mut tape, params, self.stack_gates(&[gate])?)?;
        Ok(tape.value(pi).data()[0])
    }

    pub fn forward_reported(
        &self,
        params: &Params,
        features: &FeatureTensor,
        gate: Option<&GateInputMap>,
    ) -> Result<Prediction> {
        let mut out = self.predict_batch(params, &[features], gate.map(|g| vec![g]).as_deref())?;
        Ok(out.pop().expect("one prediction"))
    }

    /// Inference over a batch without recording gradients.
    pub fn predict_batch(
        &self,
        params: &Params,
        features: &[&FeatureTensor],
        gates: Option<&[&GateInputMap]>,
    ) -> Result<Vec<Prediction>> {
        let ys = self.true_crime_values(params, features)?;
        let pis = if self.variant.gate_enabled {
            let gates = gates.ok_or_else(|| Error::Invalid("the gated variant needs gate inputs".into()))?;
            if gates.len() != features.len() {
                return Err(Error::shape(
                    "forward_reported",
                    format!("{} feature maps vs {} gate maps", features.len(), gates.len()),
                ));
            }
            self.reporting_rate_values(params, gates)?
        } else {
            vec![1.0; features.len()]
        };
        Ok(features
            .iter()
            .zip(ys.into_iter().zip(pis))
            .map(|(f, (y, pi))| Prediction {
                tract_id: f.target_tract.clone(),
                day: f.target_day,
                y,
                pi,
                z: y * pi,
            })
            .collect())
    }

    pub fn true_crime_values(&self, params: &Params, features: &[&FeatureTensor]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let y = self.true_crimes_var(&mut tape, params, self.stack_features(features)?)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn reporting_rate_values(&self, params: &Params, gates: &[&GateInputMap]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pi = self.reporting_rate_var(&mut tape, params, self.stack_gates(gates)?)?;
        Ok(tape.value(pi).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::grad_check;
    use crate::model::VariantKind;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            predictor_channels: vec![3],
            predictor_kernel: [3, 3],
            gate_channels: vec![2, 2, 2],
            gate_kernel: [3, 3],
        }
    }

    fn random_features(model: &Model, rng: &mut ChaCha8Rng, tract: &str) -> FeatureTensor {
        let c = model.in_channels();
        let mut pad_mask = [false; LAYOUT_ROWS];
        pad_mask[0] = true;
        let mut values: Vec<f64> = (0..LAYOUT_ROWS * model.days * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for v in &mut values[..model.days * c] {
            *v = 0.0;
        }
        FeatureTensor {
            target_tract: tract.into(),
            target_day: "2020-03-01".parse().unwrap(),
            days: model.days,
            channel_names: model.variant.channels.clone(),
            pad_mask,
            values,
        }
    }

    fn random_gate(model: &Model, rng: &mut ChaCha8Rng, tract: &str) -> GateInputMap {
        GateInputMap {
            target_tract: tract.into(),
            k: model.gate_k,
            pad_mask: [false; LAYOUT_ROWS],
            values: (0..LAYOUT_ROWS * model.gate_k * 2).map(|_| rng.gen_range(0.0..1.0)).collect(),
        }
    }

    fn zero_prefix(params: &mut Params, prefix: &str) {
        for p in params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.value.fill(0.0);
        }
    }

    #[test]
    fn zero_head_gives_softplus_zero_and_half() {
        let model = Model::new(ModelVariant::tc(), small_arch(), 4, 2).unwrap();
        let mut params = model.init_params(1).unwrap();
        zero_prefix(&mut params, "pred.fc");
        zero_prefix(&mut params, "gate");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let f = random_features(&model, &mut rng, "a");
            let g = random_gate(&model, &mut rng, "a");
            let y = model.forward_true_crimes(&params, &f).unwrap();
            assert!((y - std::f64::consts::LN_2).abs() < 1e-15);
            assert_eq!(model.forward_reporting_rate(&params, &g).unwrap(), 0.5);
        }
    }

    #[test]
    fn ranges_over_random_seeds() {
        for seed in 0..100u64 {
            let model = Model::new(ModelVariant::tc(), small_arch(), 3, 7).unwrap();
            let params = model.init_params(seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let f = random_features(&model, &mut rng, "a");
            let g = random_gate(&model, &mut rng, "a");
            let p = model.forward_reported(&params, &f, Some(&g)).unwrap();
            assert!(p.y.is_finite() && p.y >= 0.0);
            assert!(p.pi > 0.0 && p.pi < 1.0);
            assert!(p.z <= p.y);
            assert_eq!(p.z, p.y * p.pi);
            // purity
            assert_eq!(model.forward_reported(&params, &f, Some(&g)).unwrap(), p);
        }
    }

    #[test]
    fn gate_is_static_across_days() {
        let model = Model::new(ModelVariant::tc(), small_arch(), 3, 2).unwrap();
        let params = model.init_params(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_gate(&model, &mut rng, "a");
        let mut pis = Vec::new();
        for d in 0..10 {
            let mut f = random_features(&model, &mut rng, "a");
            f.target_day = f.target_day + chrono::Duration::days(d);
            pis.push(model.forward_reported(&params, &f, Some(&g)).unwrap().pi);
        }
        assert!(pis.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn tc_product_and_gate_bypass() {
        let model = Model::new(ModelVariant::tc(), small_arch(), 3, 2).unwrap();
        let mut params = model.init_params(2).unwrap();
        zero_prefix(&mut params, "pred");
        zero_prefix(&mut params, "gate");
        // softplus(b) = 4 → b = ln(e^4 − 1)
        params.by_name_mut("pred.fc.b").unwrap().value.data_mut()[0] = (4f64.exp() - 1.0).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = random_features(&model, &mut rng, "a");
        let g = random_gate(&model, &mut rng, "a");
        let p = model.forward_reported(&params, &f, Some(&g)).unwrap();
        assert!((p.y - 4.0).abs() < 1e-12);
        assert_eq!(p.pi, 0.5);
        assert!((p.z - 2.0).abs() < 1e-12);
        assert!(model.forward_reported(&params, &f, None).is_err());

        let uu = Model::new(ModelVariant::uu(), small_arch(), 3, 2).unwrap();
        assert_eq!(uu.gate_k, 0);
        let up = uu.init_params(2).unwrap();
        let f = random_features(&uu, &mut rng, "a");
        let with = uu.forward_reported(&up, &f, Some(&g)).unwrap();
        let without = uu.forward_reported(&up, &f, None).unwrap();
        assert_eq!(with, without);
        assert_eq!(with.pi, 1.0);
        assert_eq!(with.z, with.y);
    }

    #[test]
    fn predictor_init_shared_across_variants() {
        let tc = Model::new(ModelVariant::tc(), small_arch(), 3, 2).unwrap();
        let uu = Model::new(ModelVariant::uu(), small_arch(), 3, 2).unwrap();
        let a = tc.init_params(11).unwrap();
        let b = uu.init_params(11).unwrap();
        for p in b.iter() {
            assert_eq!(a.by_name(&p.name).unwrap().value, p.value);
        }
        assert!(a.len() > b.len());
    }

    #[test]
    fn channel_and_k_mismatch_rejected() {
        let model = Model::new(ModelVariant::tc(), small_arch(), 3, 2).unwrap();
        let params = model.init_params(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = random_features(&model, &mut rng, "a");
        f.channel_names[1] = "other".into();
        assert!(model.forward_true_crimes(&params, &f).is_err());
        let mut other = model.clone();
        other.gate_k = 7;
        let g = random_gate(&other, &mut rng, "a");
        assert!(model.forward_reporting_rate(&params, &g).is_err());
    }

    #[test]
    fn scaling_determinants_leaves_y_unchanged() {
        let model = Model::new(ModelVariant::tc(), small_arch(), 3, 2).unwrap();
        let params = model.init_params(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_features(&model, &mut rng, "a");
        let g = random_gate(&model, &mut rng, "a");
        let mut g2 = g.clone();
        for v in g2.values.iter_mut().step_by(2) {
            *v *= 3.0;
        }
        let a = model.forward_reported(&params, &f, Some(&g)).unwrap();
        let b = model.forward_reported(&params, &f, Some(&g2)).unwrap();
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn end_to_end_mse_gradient_checks() {
        for seed in 0..20u64 {
            let model = Model::new(ModelVariant::tc(), small_arch(), 3, 2).unwrap();
            let mut params = model.init_params(seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // zero biases over zero padding put pre-activations exactly on the
            // ReLU kink, where central differences are meaningless
            for p in params.iter_mut().filter(|p| p.name.ends_with(".b")) {
                for v in p.value.data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
            let feats: Vec<FeatureTensor> =
                (0..3).map(|i| random_features(&model, &mut rng, &format!("t{i}"))).collect();
            let gates: Vec<GateInputMap> = (0..3).map(|i| random_gate(&model, &mut rng, &format!("t{i}"))).collect();
            let target: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..3.0)).collect();
            let fr: Vec<&FeatureTensor> = feats.iter().collect();
            let gr: Vec<&GateInputMap> = gates.iter().collect();
            let report = grad_check(
                &mut params,
                |tape, p| {
                    let z = model.reported_var(tape, p, &fr, Some(&gr))?;
                    tape.mse(z, &target)
                },
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn check_params_names_missing() {
        let model = Model::new(ModelVariant::tc(), small_arch(), 3, 2).unwrap();
        let params = model.init_params(0).unwrap();
        model.check_params(&params).unwrap();
        let uu = Model::new(ModelVariant::new(VariantKind::Uu, 0.0).unwrap(), small_arch(), 3, 2).unwrap();
        let uparams = uu.init_params(0).unwrap();
        match model.check_params(&uparams) {
            Err(Error::MissingParameter(n)) => assert_eq!(n, "gate.conv0.w"),
            other => panic!("{other:?}"),
        }
        assert!(uu.check_params(&params).is_err());
    }
}
