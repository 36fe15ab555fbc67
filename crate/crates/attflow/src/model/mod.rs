//! The flow network zoo: the plain encoder-decoder baseline, extractor-block
//! variants, attention-gated variants, and the midway-fusion decoder, all
//! described by one declarative spec.

mod build;
mod checkpoint;
mod network;
mod report;
mod zoo;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint_spec, spec_digest, write_checkpoint};
pub use network::{images_to_input, write_input_planes, FlowNetwork, GATE_MAX_SCALE_LOG2};
pub use report::LayerRow;
pub use zoo::{all_zoo_names, minimum_zoo_names, spec_by_name};

/// Encoder families. `Plain` is the original plain-conv encoder; the others
/// swap blocks 2..6_1 for the named extractor family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractorKind {
    Plain,
    Res,
    Inc,
    NeXt32,
    NeXt64,
}

impl ExtractorKind {
    /// Grouped-path width of the Cardinality blocks, before divisor scaling.
    pub fn cardinality_width(&self) -> Option<usize> {
        match self {
            ExtractorKind::NeXt32 => Some(32),
            ExtractorKind::NeXt64 => Some(64),
            _ => None,
        }
    }
}

/// Declarative description of one zoo entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub extractor: ExtractorKind,
    pub use_attention: bool,
    pub use_midway: bool,
    /// True when the decoder refines all the way back to input resolution;
    /// always true for attention/midway variants.
    pub full_resolution_output: bool,
    /// Divides every channel count in the plan; 1 is the paper-size model,
    /// 8 the desk-scale micro model.
    pub channel_divisor: usize,
}

/// Encoder output channels for block1..block6_1, before divisor scaling.
pub const CHANNEL_PLAN: [usize; 10] = [64, 128, 256, 256, 512, 512, 512, 512, 1024, 1024];

/// Input spatial dims must be divisible by this (six stride-2 stages).
pub const INPUT_MULTIPLE: usize = 64;

/// Prediction heads regress flow at 1/FLOW_SCALE of pixel units; the
/// pyramid outputs are already multiplied back. Keeping the regression
/// targets near unit scale is what makes short training schedules move.
pub const FLOW_SCALE: f64 = 20.0;

impl ModelSpec {
    pub fn new(extractor: ExtractorKind, use_attention: bool, use_midway: bool) -> Self {
        ModelSpec {
            extractor,
            use_attention,
            use_midway,
            full_resolution_output: use_attention || use_midway,
            channel_divisor: 1,
        }
    }

    pub fn micro(mut self) -> Self {
        self.channel_divisor = 8;
        self
    }

    pub fn with_divisor(mut self, divisor: usize) -> Self {
        self.channel_divisor = divisor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_divisor == 0 || CHANNEL_PLAN.iter().any(|c| c % self.channel_divisor != 0)
        {
            return Err(Error::InvalidArgument(format!(
                "channel divisor {} must divide the channel plan",
                self.channel_divisor
            )));
        }
        if (self.use_attention || self.use_midway) && !self.full_resolution_output {
            return Err(Error::InvalidArgument(
                "attention/midway variants must refine to full resolution".into(),
            ));
        }
        Ok(())
    }

    /// Scaled encoder channel plan.
    pub fn channels(&self) -> [usize; 10] {
        let mut plan = CHANNEL_PLAN;
        for c in &mut plan {
            *c /= self.channel_divisor;
        }
        plan
    }

    /// Zoo name of this configuration (divisor not included).
    pub fn name(&self) -> String {
        let family = match self.extractor {
            ExtractorKind::Plain => return zoo::decorate("FlowNetS", self),
            ExtractorKind::Res => "FlowNetRes",
            ExtractorKind::Inc => "FlowNetInc",
            ExtractorKind::NeXt32 => "FlowNeXt32",
            ExtractorKind::NeXt64 => "FlowNeXt64",
        };
        zoo::decorate(family, self)
    }

    /// Canonical JSON encoding; the checkpoint digest hashes this.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

/// One prediction level: flow at 1/2^scale_log2 of the input resolution.
#[derive(Debug, Clone, Copy)]
pub struct PyramidLevel {
    pub scale_log2: u8,
    pub var: Var,
}

/// The set of flow predictions a forward pass emits, finest first.
#[derive(Debug, Clone)]
pub struct FlowPyramid {
    levels: Vec<PyramidLevel>,
}

impl FlowPyramid {
    pub fn new(mut levels: Vec<PyramidLevel>) -> Self {
        levels.sort_by_key(|l| l.scale_log2);
        FlowPyramid { levels }
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn finest(&self) -> &PyramidLevel {
        &self.levels[0]
    }

    pub fn level(&self, scale_log2: u8) -> Option<&PyramidLevel> {
        self.levels.iter().find(|l| l.scale_log2 == scale_log2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Shape, Tensor};
    use crate::nn::{attention_param_count, ParamVisitor};

    fn report_channels(rows: &[LayerRow], name: &str) -> usize {
        rows.iter()
            .find(|r| r.name == name)
            .unwrap_or_else(|| panic!("no layer {name}"))
            .out_ch
    }

    #[test]
    fn baseline_param_count_near_reference() {
        let spec = ModelSpec::new(ExtractorKind::Plain, false, false);
        let net = FlowNetwork::<f32>::build(spec, 1).unwrap();
        let count = net.param_count();
        assert_eq!(count, 38_676_514); // enumerated layer-by-layer by hand

        let reference = 38_500_000.0;
        let rel = (count as f64 - reference).abs() / reference;
        assert!(rel < 0.05, "count {count} is {rel:.3} away from reference");
    }

    #[test]
    fn midway_channel_arithmetic_closes() {
        let spec = ModelSpec::new(ExtractorKind::NeXt32, false, true);
        let net = FlowNetwork::<f32>::build(spec, 1).unwrap();
        let rows = net.layer_report((384, 512)).unwrap();
        assert_eq!(report_channels(&rows, "concat"), 2432);
        assert_eq!(report_channels(&rows, "concat5"), 1026);
        assert_eq!(report_channels(&rows, "concat6"), 2050);
        assert_eq!(report_channels(&rows, "concat3"), 514);
        assert_eq!(report_channels(&rows, "concat2"), 258);
        assert_eq!(report_channels(&rows, "concat1"), 66);
        assert_eq!(report_channels(&rows, "concat0"), 34);
        let pr0 = rows.iter().find(|r| r.name == "pr0").unwrap();
        assert_eq!((pr0.out_ch, pr0.out_h, pr0.out_w), (2, 384, 512));
    }

    #[test]
    fn every_encoder_downsamples_six_times() {
        for name in all_zoo_names() {
            let spec = spec_by_name(&name, 8).unwrap();
            let net = FlowNetwork::<f32>::build(spec, 1).unwrap();
            assert_eq!(net.encoder_downsamples(), 6, "{name}");
        }
    }

    #[test]
    fn micro_forward_shapes_and_scales() {
        let spec = ModelSpec::new(ExtractorKind::Res, true, true).micro();
        let net = FlowNetwork::<f32>::build(spec, 3).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 6, 64, 128)));
        let x = g.var(g.value(x).clone());
        let pyr = net.forward(&mut g, x).unwrap();
        assert_eq!(pyr.levels().len(), 7);
        for level in pyr.levels() {
            let dims = g.value(level.var).dims().to_vec();
            let f = 1 << level.scale_log2;
            assert_eq!(dims, vec![1, 2, 64 / f, 128 / f]);
        }
    }

    #[test]
    fn baseline_emits_five_levels_finest_quarter() {
        let spec = ModelSpec::new(ExtractorKind::Plain, false, false).micro();
        let net = FlowNetwork::<f32>::build(spec, 3).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 6, 64, 64)));
        let pyr = net.forward(&mut g, x).unwrap();
        assert_eq!(pyr.levels().len(), 5);
        assert_eq!(pyr.finest().scale_log2, 2);
        assert_eq!(g.value(pyr.finest().var).dims(), &[1, 2, 16, 16]);
    }

    #[test]
    fn indivisible_input_names_required_multiple() {
        let spec = ModelSpec::new(ExtractorKind::Plain, false, false).micro();
        let net = FlowNetwork::<f32>::build(spec, 3).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 6, 60, 64)));
        let err = net.forward(&mut g, x).unwrap_err();
        assert!(err.to_string().contains("64"), "{err}");
    }

    #[test]
    fn attention_adds_exactly_the_gate_parameters() {
        for divisor in [1usize, 8] {
            let base = ModelSpec::new(ExtractorKind::NeXt32, false, false).with_divisor(divisor);
            let att = ModelSpec::new(ExtractorKind::NeXt32, true, false).with_divisor(divisor);
            let base_net = FlowNetwork::<f32>::build(base, 1).unwrap();
            let att_net = FlowNetwork::<f32>::build(att, 1).unwrap();

            // the attention variant also extends the decoder to full
            // resolution, so compare against the gated rows directly
            let rows = att_net.layer_report((384, 512)).unwrap();
            let gate_params: usize = rows.iter().filter(|r| r.is_gate).map(|r| r.params).sum();
            let non_gate: usize = rows.iter().filter(|r| !r.is_gate).map(|r| r.params).sum();
            assert_eq!(att_net.param_count(), gate_params + non_gate);
            for r in rows.iter().filter(|r| r.is_gate) {
                assert_eq!(r.params, attention_param_count(r.out_ch), "{}", r.name);
            }
            // base decoder is a prefix of the extended one; its layers match
            let base_rows = base_net.layer_report((384, 512)).unwrap();
            for br in &base_rows {
                let ar = rows.iter().find(|r| r.name == br.name).unwrap();
                assert_eq!(ar.params, br.params, "{}", br.name);
            }
        }
    }

    #[test]
    fn attmid_report_is_mid_plus_gates() {
        let mid = ModelSpec::new(ExtractorKind::NeXt32, false, true).micro();
        let attmid = ModelSpec::new(ExtractorKind::NeXt32, true, true).micro();
        let mid_net = FlowNetwork::<f32>::build(mid, 1).unwrap();
        let attmid_net = FlowNetwork::<f32>::build(attmid, 1).unwrap();
        let mid_rows = mid_net.layer_report((64, 64)).unwrap();
        let att_rows: Vec<_> = attmid_net
            .layer_report((64, 64))
            .unwrap()
            .into_iter()
            .filter(|r| !r.is_gate)
            .collect();
        assert_eq!(mid_rows, att_rows);
        assert!(attmid_net.gate_count() > 0);
    }

    #[test]
    fn gates_sit_on_eligible_skip_taps() {
        // refinement variants gate the skips into concat4..concat1 (block5_1
        // at 1/32 is too coarse for the gate's stride-2 bottleneck)
        for divisor in [1usize, 8] {
            let att = FlowNetwork::<f32>::build(
                ModelSpec::new(ExtractorKind::Res, true, false).with_divisor(divisor),
                1,
            )
            .unwrap();
            assert_eq!(att.gate_count(), 4, "divisor {divisor}");
            // midway variants gate the block4_1/block3_1/block2 taps
            let attmid = FlowNetwork::<f32>::build(
                ModelSpec::new(ExtractorKind::Res, true, true).with_divisor(divisor),
                1,
            )
            .unwrap();
            assert_eq!(attmid.gate_count(), 3, "divisor {divisor}");
        }
    }

    #[test]
    fn constant_intensity_shift_keeps_shape_contract() {
        let spec = ModelSpec::new(ExtractorKind::Inc, false, false).micro();
        let net = FlowNetwork::<f32>::build(spec, 3).unwrap();
        for shift in [0.0f32, 0.2] {
            let mut g = Graph::inference();
            let x = g.constant(Tensor::full(Shape::nchw(1, 6, 64, 64), shift));
            let pyr = net.forward(&mut g, x).unwrap();
            assert_eq!(pyr.levels().len(), 5);
            for level in pyr.levels() {
                assert_eq!(g.value(level.var).dims()[1], 2);
                assert!(g.value(level.var).is_finite());
            }
        }
    }
}
