use crate::autodiff::kernels::{conv_out_len, deconv_out_len};
use crate::autodiff::Scalar;
use crate::error::Result;
use crate::model::network::NodeOp;
use crate::model::FlowNetwork;
use crate::nn::ParamVisitor;

/// One executed layer: output shape and learned-parameter count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    pub out_ch: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub params: usize,
    pub is_gate: bool,
}

impl<T: Scalar> FlowNetwork<T> {
    /// Walks the graph in execution order, propagating shapes for the given
    /// input size. Row order is execution order.
    pub fn layer_report(&self, input_hw: (usize, usize)) -> Result<Vec<LayerRow>> {
        let (ih, iw) = input_hw;
        let mut shapes: Vec<(usize, usize, usize)> = Vec::with_capacity(self.nodes.len());
        let mut rows = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let src = node.inputs.first().map(|&i| shapes[i]);
            let (shape, params, is_gate) = match &node.op {
                NodeOp::Input => ((6, ih, iw), 0, false),
                NodeOp::Conv(l) => {
                    let (_, h, w) = src.expect("conv has an input");
                    (
                        (
                            l.out_ch(),
                            conv_out_len(h, l.kernel(), l.stride, l.pad),
                            conv_out_len(w, l.kernel(), l.stride, l.pad),
                        ),
                        l.param_count(),
                        false,
                    )
                }
                NodeOp::Deconv(l) => {
                    let (_, h, w) = src.expect("deconv has an input");
                    (
                        (
                            l.out_ch(),
                            deconv_out_len(h, l.kernel(), l.stride, l.pad),
                            deconv_out_len(w, l.kernel(), l.stride, l.pad),
                        ),
                        l.param_count(),
                        false,
                    )
                }
                NodeOp::Block(b) => {
                    let (_, h, w) = src.expect("block has an input");
                    let s = b.spec().stride;
                    ((b.spec().out_ch, h / s, w / s), b.param_count(), false)
                }
                NodeOp::Gate(gate) => (src.expect("gate has an input"), gate.param_count(), true),
                NodeOp::AvgPool { k, stride } => {
                    let (c, h, w) = src.expect("pool has an input");
                    (
                        (c, conv_out_len(h, *k, *stride, 0), conv_out_len(w, *k, *stride, 0)),
                        0,
                        false,
                    )
                }
                NodeOp::BilinearTo { reference } => {
                    let (c, _, _) = src.expect("resize has an input");
                    let (_, rh, rw) = shapes[*reference];
                    ((c, rh, rw), 0, false)
                }
                NodeOp::Concat => {
                    let c: usize = node.inputs.iter().map(|&i| shapes[i].0).sum();
                    let (_, h, w) = shapes[node.inputs[0]];
                    ((c, h, w), 0, false)
                }
                NodeOp::Scale { .. } => (src.expect("scale has an input"), 0, false),
            };
            shapes.push(shape);
            rows.push(LayerRow {
                name: node.name.clone(),
                out_ch: shape.0,
                out_h: shape.1,
                out_w: shape.2,
                params,
                is_gate,
            });
        }
        Ok(rows)
    }

    /// Formats the report as aligned text lines.
    pub fn format_report(&self, input_hw: (usize, usize)) -> Result<String> {
        let rows = self.layer_report(input_hw)?;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:>6} {:>6} {:>6} {:>12}\n",
            "layer", "ch", "h", "w", "params"
        ));
        let mut total = 0usize;
        for r in &rows {
            total += r.params;
            out.push_str(&format!(
                "{:<18} {:>6} {:>6} {:>6} {:>12}\n",
                r.name, r.out_ch, r.out_h, r.out_w, r.params
            ));
        }
        out.push_str(&format!("total params: {total}\n"));
        Ok(out)
    }
}
