//! Incremental forward pass for inputs that change in small spatial regions.
//!
//! Keeps every layer's activations from the previous call. When a few input
//! positions change, each leading convolution recomputes only the outputs whose
//! receptive field covers a changed position, using the same per-output routine
//! as the full pass, and forwards the positions whose values actually changed.
//! Dense layers are recomputed whenever anything reaches them. The outputs are
//! therefore bitwise identical to [`Network::forward`] on the same input.

use crate::policy::{conv_position, LayerGeometry, Network, ShapeError, Workspace};

pub struct IncrementalForward<'a> {
    net: &'a Network,
    theta: &'a [f32],
    conv_layers: usize,
    input: Vec<f32>,
    ws: Workspace,
    marks: Vec<Vec<u32>>,
    epoch: u32,
    pending: Vec<usize>,
    next: Vec<usize>,
    recompute: Vec<usize>,
    scratch: Vec<f32>,
}

impl<'a> IncrementalForward<'a> {
    pub fn new(net: &'a Network, theta: &'a [f32], input: Vec<f32>) -> Result<Self, ShapeError> {
        let mut ws = net.workspace();
        net.forward_into(theta, &input, &mut ws)?;
        let conv_layers = net
            .layers()
            .iter()
            .take_while(|l| matches!(l.geometry, LayerGeometry::Conv(_)))
            .count();
        let marks = net.layers()[..conv_layers]
            .iter()
            .map(|l| match l.geometry {
                LayerGeometry::Conv(g) => vec![0; g.out_h * g.out_w],
                LayerGeometry::Dense { .. } => unreachable!(),
            })
            .collect();
        Ok(IncrementalForward {
            net,
            theta,
            conv_layers,
            input,
            ws,
            marks,
            epoch: 0,
            pending: Vec::new(),
            next: Vec::new(),
            recompute: Vec::new(),
            scratch: Vec::new(),
        })
    }

    pub fn input(&self) -> &[f32] {
        &self.input
    }

    /// Mutable input; report every touched spatial position to [`Self::update`].
    pub fn input_mut(&mut self) -> &mut [f32] {
        &mut self.input
    }

    pub fn output(&self) -> &[f32] {
        self.ws.buffers.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Propagates changes at the given input positions (`y * width + x` for
    /// image inputs; ignored for flat inputs).
    pub fn update(&mut self, changed: &[usize]) {
        if changed.is_empty() {
            return;
        }
        self.pending.clear();
        self.pending.extend_from_slice(changed);
        let layers = self.net.layers();
        for l in 0..self.conv_layers {
            let LayerGeometry::Conv(g) = layers[l].geometry else {
                unreachable!()
            };
            self.epoch = self.epoch.wrapping_add(1);
            if self.epoch == 0 {
                self.marks.iter_mut().for_each(|m| m.fill(0));
                self.epoch = 1;
            }
            self.recompute.clear();
            let marks = &mut self.marks[l];
            for &p in &self.pending {
                let (iy, ix) = (p / g.in_w, p % g.in_w);
                for oy in g.covering(iy, g.out_h) {
                    for ox in g.covering(ix, g.out_w) {
                        let q = oy * g.out_w + ox;
                        if marks[q] != self.epoch {
                            marks[q] = self.epoch;
                            self.recompute.push(q);
                        }
                    }
                }
            }
            let (before, rest) = self.ws.buffers.split_at_mut(l);
            let input: &[f32] = if l == 0 { &self.input } else { &before[l - 1] };
            let out = &mut rest[0];
            self.next.clear();
            for &q in &self.recompute {
                let span = q * g.out_c..(q + 1) * g.out_c;
                self.scratch.clear();
                self.scratch.extend_from_slice(&out[span.clone()]);
                conv_position(&layers[l], &g, self.theta, input, q / g.out_w, q % g.out_w, out);
                let differs = out[span]
                    .iter()
                    .zip(&self.scratch)
                    .any(|(a, b)| a.to_bits() != b.to_bits());
                if differs {
                    self.next.push(q);
                }
            }
            std::mem::swap(&mut self.pending, &mut self.next);
            if self.pending.is_empty() {
                return;
            }
        }
        for l in self.conv_layers..layers.len() {
            let (before, rest) = self.ws.buffers.split_at_mut(l);
            let input: &[f32] = if l == 0 { &self.input } else { &before[l - 1] };
            self.net.run_layer(l, self.theta, input, &mut rest[0]);
        }
    }
}
