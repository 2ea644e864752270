//! Nested MLP family.
//!
//! Three rungs share input and output widths; each hidden width of a smaller
//! rung is at most the matching width of the next rung. Parameters are laid out
//! per layer as `W` (out × in, row-major) followed by `b`, and a smaller rung's
//! matrices are the leading sub-blocks of the larger ones. The coordinate maps
//! record where every small-rung parameter lives inside the Complex layout.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::rng::{self, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rung {
    Simple = 0,
    Medium = 1,
    Complex = 2,
}

impl Rung {
    pub const ALL: [Rung; 3] = [Rung::Simple, Rung::Medium, Rung::Complex];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Rung> {
        Rung::ALL
            .get(i)
            .copied()
            .ok_or_else(|| invalid(format!("rung index {i} out of range")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Hold,
}

/// Moves one rung in `direction`, clamped to the ladder.
pub fn adjust_complexity(rung: Rung, direction: Direction) -> Rung {
    match direction {
        Direction::Hold => rung,
        Direction::Up => Rung::ALL[(rung.index() + 1).min(2)],
        Direction::Down => Rung::ALL[rung.index().saturating_sub(1)],
    }
}

/// One dense layer: parameters start at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub offset: usize,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub rung: Rung,
    /// `[input, hidden..., output]`
    pub layer_widths: Vec<usize>,
    layers: Vec<Layer>,
    /// Multiplier on each hidden layer's activations.
    hidden_scale: Vec<f64>,
}

impl ModelArch {
    pub fn new(rung: Rung, layer_widths: Vec<usize>) -> Result<Self> {
        if layer_widths.len() < 2 || layer_widths.contains(&0) {
            return Err(invalid(format!("bad layer widths {layer_widths:?}")));
        }
        let mut offset = 0;
        let layers = layer_widths
            .windows(2)
            .map(|w| {
                let l = Layer {
                    offset,
                    inputs: w[0],
                    outputs: w[1],
                };
                offset += w[0] * w[1] + w[1];
                l
            })
            .collect();
        let hidden_scale = vec![1.0; layer_widths.len() - 2];
        Ok(Self {
            rung,
            layer_widths,
            layers,
            hidden_scale,
        })
    }

    /// Sets the activation multiplier of every hidden layer.
    pub fn with_hidden_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        check_dim(self.hidden_scale.len(), scale.len())?;
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid("hidden scales must be positive"));
        }
        self.hidden_scale = scale;
        Ok(self)
    }

    pub fn hidden_scale(&self) -> &[f64] {
        &self.hidden_scale
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("at least two widths")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Total weights plus biases.
    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Multiply-accumulates for one forward pass of one sample.
    pub fn forward_macs(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1]).sum()
    }
}

/// Parameter values for one rung, stored in that rung's own layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub rung: Rung,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(rung: Rung, len: usize) -> Self {
        Self {
            rung,
            values: vec![0.0; len],
        }
    }

    /// Rounds every value to the nearest `f32`, the precision used on the wire.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    /// Rung tag byte, little-endian `u64` length, then little-endian `f32`s.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 4 * self.values.len());
        out.push(self.rung as u8);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    /// Decodes one vector from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 9 {
            return Err(invalid("parameter vector header truncated"));
        }
        let rung = Rung::from_index(bytes[0] as usize)?;
        let len = u64::from_le_bytes(bytes[1..9].try_into().expect("8 bytes")) as usize;
        let end = len
            .checked_mul(4)
            .and_then(|b| b.checked_add(9))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| invalid("parameter vector body truncated"))?;
        let values = bytes[9..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok((Self { rung, values }, end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedModelFamily {
    pub archs: [ModelArch; 3],
    /// `coord_maps[r][k]` is the Complex-layout index of rung `r`'s `k`-th parameter.
    coord_maps: [Vec<usize>; 3],
}

impl NestedModelFamily {
    /// Scales each narrower rung's hidden activations by the ratio of the
    /// Complex width to its own, so every rung feeds the shared output
    /// weights at the magnitude the full model produces.
    pub fn with_width_scaling(mut self) -> Result<Self> {
        let full = self.archs[2].layer_widths.clone();
        for a in &mut self.archs {
            let depth = a.layer_widths.len() - 2;
            let scale = (1..=depth).map(|l| full[l] as f64 / a.layer_widths[l] as f64).collect();
            *a = a.clone().with_hidden_scale(scale)?;
        }
        Ok(self)
    }

    pub fn arch(&self, rung: Rung) -> &ModelArch {
        &self.archs[rung.index()]
    }

    pub fn param_count(&self, rung: Rung) -> usize {
        self.arch(rung).param_count()
    }

    pub fn coord_map(&self, rung: Rung) -> &[usize] {
        &self.coord_maps[rung.index()]
    }

    /// Gathers rung `rung`'s coordinates out of a Complex-layout vector.
    pub fn extract(&self, rung: Rung, full: &[f64]) -> Result<ParamVector> {
        check_dim(self.param_count(Rung::Complex), full.len())?;
        Ok(ParamVector {
            rung,
            values: self.coord_map(rung).iter().map(|&i| full[i]).collect(),
        })
    }

    /// Writes `p` into its coordinates of a Complex-layout vector.
    pub fn scatter(&self, p: &ParamVector, full: &mut [f64]) -> Result<()> {
        check_dim(self.param_count(Rung::Complex), full.len())?;
        check_dim(self.param_count(p.rung), p.values.len())?;
        for (&i, &v) in self.coord_map(p.rung).iter().zip(&p.values) {
            full[i] = v;
        }
        Ok(())
    }

    /// Moves `local` to rung `to`. Shared coordinates keep their local values;
    /// coordinates new to `to` come from `global` (Complex layout) or are zero.
    pub fn project_params(&self, to: Rung, local: &ParamVector, global: Option<&ParamVector>) -> Result<ParamVector> {
        check_dim(self.param_count(local.rung), local.values.len())?;
        if local.rung == to {
            return Ok(local.clone());
        }
        let mut full = match global {
            Some(g) => {
                if g.rung != Rung::Complex {
                    return Err(invalid("global model must be in the Complex layout"));
                }
                check_dim(self.param_count(Rung::Complex), g.values.len())?;
                g.values.clone()
            }
            None => vec![0.0; self.param_count(Rung::Complex)],
        };
        self.scatter(local, &mut full)?;
        self.extract(to, &full)
    }

    /// Capped capacity-to-demand ratio, where demand is the rung's parameter
    /// count relative to the Complex rung.
    pub fn efficiency(&self, rung: Rung, capacity_score: f64) -> f64 {
        let demand = self.param_count(rung) as f64 / self.param_count(Rung::Complex) as f64;
        (capacity_score / demand).min(1.0)
    }

    /// `α · acc_estimate + β · efficiency`.
    pub fn utility(&self, rung: Rung, capacity_score: f64, acc_estimate: f64, alpha: f64, beta: f64) -> Result<f64> {
        if alpha < 0.0 || beta < 0.0 {
            return Err(invalid("utility weights must be non-negative"));
        }
        Ok(alpha * acc_estimate + beta * self.efficiency(rung, capacity_score))
    }

    /// He-normal hidden layers, `sqrt(1/fan_in)` output layer, zero biases,
    /// drawn for the Complex layout.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let arch = self.arch(Rung::Complex);
        let mut rng = rng::stream(seed, &[purpose::MODEL_INIT]);
        let mut values = vec![0.0; arch.param_count()];
        let last = arch.layers().len() - 1;
        for (li, l) in arch.layers().iter().enumerate() {
            let gain = if li == last { 1.0 } else { 2.0 };
            let sd = (gain / l.inputs as f64).sqrt();
            for v in &mut values[l.offset..l.offset + l.inputs * l.outputs] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = sd * z;
            }
        }
        let mut p = ParamVector {
            rung: Rung::Complex,
            values,
        };
        p.round_to_f32();
        p
    }
}

/// Builds the family from three hidden-width lists of equal depth.
pub fn build_family(input_dim: usize, output_dim: usize, hidden: [&[usize]; 3]) -> Result<NestedModelFamily> {
    let depth = hidden[0].len();
    if hidden.iter().any(|h| h.len() != depth) {
        return Err(invalid("all rungs need the same number of hidden layers"));
    }
    for r in 0..2 {
        if hidden[r].iter().zip(hidden[r + 1]).any(|(a, b)| a > b) {
            return Err(invalid(format!(
                "hidden widths {:?} do not nest in {:?}",
                hidden[r],
                hidden[r + 1]
            )));
        }
    }
    let widths = |h: &[usize]| {
        let mut w = vec![input_dim];
        w.extend_from_slice(h);
        w.push(output_dim);
        w
    };
    let archs = [
        ModelArch::new(Rung::Simple, widths(hidden[0]))?,
        ModelArch::new(Rung::Medium, widths(hidden[1]))?,
        ModelArch::new(Rung::Complex, widths(hidden[2]))?,
    ];
    let big = &archs[2];
    let coord_maps = archs.clone().map(|a| {
        let mut map = Vec::with_capacity(a.param_count());
        for (small, large) in a.layers().iter().zip(big.layers()) {
            for o in 0..small.outputs {
                let row = large.offset + o * large.inputs;
                map.extend(row..row + small.inputs);
            }
            let bias = large.offset + large.inputs * large.outputs;
            map.extend(bias..bias + small.outputs);
        }
        map
    });
    Ok(NestedModelFamily { archs, coord_maps })
}

/// Builds a family from an explicit list of per-rung archs, checking that input
/// and output widths agree.
pub fn family_from_archs(archs: [ModelArch; 3]) -> Result<NestedModelFamily> {
    let (i, o) = (archs[0].input_dim(), archs[0].output_dim());
    if archs.iter().any(|a| a.input_dim() != i || a.output_dim() != o) {
        return Err(invalid("input and output widths must agree across rungs"));
    }
    let hidden: Vec<Vec<usize>> = archs
        .iter()
        .map(|a| a.layer_widths[1..a.layer_widths.len() - 1].to_vec())
        .collect();
    build_family(i, o, [&hidden[0], &hidden[1], &hidden[2]])
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_batch(arch: &ModelArch, params: &[f64], rows: &[&[f64]], labels: &[usize]) -> Result<()> {
    check_dim(arch.param_count(), params.len())?;
    check_dim(rows.len(), labels.len())?;
    if rows.is_empty() {
        return Err(invalid("batch must not be empty"));
    }
    for r in rows {
        check_dim(arch.input_dim(), r.len())?;
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= arch.output_dim()) {
        return Err(invalid(format!("label {y} out of range")));
    }
    Ok(())
}

/// Writes every layer's post-activation output for `x` into `acts`.
fn forward_one(arch: &ModelArch, params: &[f64], x: &[f64], acts: &mut [Vec<f64>]) {
    let last = arch.layers().len() - 1;
    for (li, l) in arch.layers().iter().enumerate() {
        let (prev, rest) = acts.split_at_mut(li);
        let input: &[f64] = if li == 0 { x } else { &prev[li - 1] };
        let out = &mut rest[0];
        let w = &params[l.offset..l.offset + l.inputs * l.outputs];
        let b = &params[l.offset + l.inputs * l.outputs..l.offset + l.inputs * l.outputs + l.outputs];
        for o in 0..l.outputs {
            let z = b[o] + dot(&w[o * l.inputs..(o + 1) * l.inputs], input);
            out[o] = if li == last {
                z
            } else {
                z.max(0.0) * arch.hidden_scale[li]
            };
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

fn activations(arch: &ModelArch) -> Vec<Vec<f64>> {
    arch.layer_widths[1..].iter().map(|&w| vec![0.0; w]).collect()
}

/// Logits for every row and the mean cross-entropy loss.
pub fn forward(arch: &ModelArch, params: &[f64], rows: &[&[f64]], labels: &[usize]) -> Result<(Vec<Vec<f64>>, f64)> {
    check_batch(arch, params, rows, labels)?;
    let mut acts = activations(arch);
    let mut logits = Vec::with_capacity(rows.len());
    let mut loss = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        forward_one(arch, params, x, &mut acts);
        let z = acts.last().expect("output layer");
        loss += log_sum_exp(z) - z[y];
        logits.push(z.clone());
    }
    Ok((logits, loss / rows.len() as f64))
}

/// Mean cross-entropy loss and its exact gradient, written into `grad`.
pub fn loss_and_grad(
    arch: &ModelArch,
    params: &[f64],
    rows: &[&[f64]],
    labels: &[usize],
    grad: &mut [f64],
) -> Result<f64> {
    check_batch(arch, params, rows, labels)?;
    check_dim(params.len(), grad.len())?;
    grad.fill(0.0);
    let inv_n = 1.0 / rows.len() as f64;
    let mut acts = activations(arch);
    let max_w = arch.layer_widths.iter().copied().max().unwrap_or(0);
    let mut delta = vec![0.0; max_w];
    let mut delta_prev = vec![0.0; max_w];
    let mut loss = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        forward_one(arch, params, x, &mut acts);
        let z = acts.last().expect("output layer");
        let lse = log_sum_exp(z);
        loss += lse - z[y];
        let out_w = z.len();
        for (d, v) in delta[..out_w].iter_mut().zip(z) {
            *d = (v - lse).exp() * inv_n;
        }
        delta[y] -= inv_n;

        for li in (0..arch.layers().len()).rev() {
            let l = arch.layers()[li];
            let input: &[f64] = if li == 0 { x } else { &acts[li - 1] };
            let w_end = l.offset + l.inputs * l.outputs;
            let (gw, gb) = grad[l.offset..w_end + l.outputs].split_at_mut(l.inputs * l.outputs);
            for o in 0..l.outputs {
                axpy(delta[o], input, &mut gw[o * l.inputs..(o + 1) * l.inputs]);
                gb[o] += delta[o];
            }
            if li > 0 {
                let w = &params[l.offset..w_end];
                let dp = &mut delta_prev[..l.inputs];
                dp.fill(0.0);
                for o in 0..l.outputs {
                    if delta[o] != 0.0 {
                        axpy(delta[o], &w[o * l.inputs..(o + 1) * l.inputs], dp);
                    }
                }
                let scale = arch.hidden_scale[li - 1];
                for (d, a) in dp.iter_mut().zip(input) {
                    *d = if *a <= 0.0 { 0.0 } else { *d * scale };
                }
                delta[..l.inputs].copy_from_slice(dp);
            }
        }
    }
    Ok(loss * inv_n)
}

/// Gradient only; see [`loss_and_grad`].
pub fn backward(arch: &ModelArch, params: &[f64], rows: &[&[f64]], labels: &[usize]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; params.len()];
    loss_and_grad(arch, params, rows, labels, &mut g)?;
    Ok(g)
}

/// Class probabilities for every row.
pub fn predict_proba(arch: &ModelArch, params: &[f64], rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    check_dim(arch.param_count(), params.len())?;
    let mut acts = activations(arch);
    rows.iter()
        .map(|x| {
            check_dim(arch.input_dim(), x.len())?;
            forward_one(arch, params, x, &mut acts);
            Ok(softmax(acts.last().expect("output layer")))
        })
        .collect()
}

/// Predicted class per row; ties resolve to the lowest class index.
pub fn predict(arch: &ModelArch, params: &[f64], rows: &[&[f64]]) -> Result<Vec<usize>> {
    check_dim(arch.param_count(), params.len())?;
    let mut acts = activations(arch);
    rows.iter()
        .map(|x| {
            check_dim(arch.input_dim(), x.len())?;
            forward_one(arch, params, x, &mut acts);
            let z = acts.last().expect("output layer");
            Ok((0..z.len()).fold(0, |best, c| if z[c] > z[best] { c } else { best }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn example_family() -> NestedModelFamily {
        build_family(20, 4, [&[16], &[32], &[64]]).unwrap()
    }

    #[test]
    fn param_counts() {
        let f = example_family();
        // 20·16 + 16 + 16·4 + 4, and likewise for 32 and 64 hidden units.
        assert_eq!(f.param_count(Rung::Simple), 404);
        assert_eq!(f.param_count(Rung::Medium), 804);
        assert_eq!(f.param_count(Rung::Complex), 1604);
        assert_eq!(ModelArch::new(Rung::Simple, vec![20, 4]).unwrap().param_count(), 84);
    }

    #[test]
    fn nesting_and_errors() {
        let f = example_family();
        for r in 0..2 {
            let small: std::collections::BTreeSet<_> = f.coord_maps[r].iter().collect();
            let large: std::collections::BTreeSet<_> = f.coord_maps[r + 1].iter().collect();
            assert!(small.is_subset(&large) && small.len() < large.len());
        }
        assert_eq!(f.coord_map(Rung::Complex), (0..1604).collect::<Vec<_>>().as_slice());

        let same = build_family(5, 3, [&[4], &[4], &[4]]).unwrap();
        assert_eq!(same.coord_map(Rung::Simple), same.coord_map(Rung::Complex));

        assert!(build_family(5, 3, [&[8], &[4], &[4]]).is_err());
        assert!(build_family(5, 3, [&[4], &[4, 4], &[4, 4]]).is_err());
        let bad = [
            ModelArch::new(Rung::Simple, vec![5, 4, 3]).unwrap(),
            ModelArch::new(Rung::Medium, vec![5, 4, 2]).unwrap(),
            ModelArch::new(Rung::Complex, vec![5, 4, 3]).unwrap(),
        ];
        assert!(family_from_archs(bad).is_err());
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let f = example_family();
        let arch = f.arch(Rung::Medium);
        let params = vec![0.0; arch.param_count()];
        let xs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.1; 20]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (logits, loss) = forward(arch, &params, &rows, &[0, 1, 2, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-6);
        for z in logits {
            assert!((softmax(&z).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn confident_prediction_has_small_loss() {
        let arch = ModelArch::new(Rung::Simple, vec![1, 2]).unwrap();
        // W = [[50], [-50]], b = 0
        let params = [50.0, -50.0, 0.0, 0.0];
        let (_, loss) = forward(&arch, &params, &[&[1.0]], &[0]).unwrap();
        assert!(loss < 1e-40);
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let f = example_family();
        let arch = f.arch(Rung::Complex);
        let p = f.init_params(3).values;
        let mut r = rng::stream(3, &[1]);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..20).map(|_| r.random::<f64>()).collect()).collect();
        let ys = [0, 1, 2, 3, 0];
        let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let g1 = backward(arch, &p, &rows, &ys).unwrap();
        let rows2: Vec<&[f64]> = rows.iter().chain(&rows).copied().collect();
        let ys2: Vec<usize> = ys.iter().chain(&ys).copied().collect();
        let g2 = backward(arch, &p, &rows2, &ys2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn symmetric_output_gradient_vanishes() {
        // Zero output layer and an input that is symmetric across the two
        // classes: both class rows receive equal and opposite pulls that
        // cancel when the batch holds one sample of each class.
        let arch = ModelArch::new(Rung::Simple, vec![2, 2]).unwrap();
        let params = [0.0; 6];
        let g = backward(&arch, &params, &[&[1.0, 1.0], &[1.0, 1.0]], &[0, 1]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn linear_step_decreases_loss() {
        let arch = ModelArch::new(Rung::Simple, vec![3, 3]).unwrap();
        let mut p = vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.2, 0.2, 0.0, 0.0, 0.0];
        let rows: [&[f64]; 3] = [&[1.0, 0.0, 0.5], &[0.0, 1.0, -0.5], &[0.3, 0.3, 1.0]];
        let ys = [0, 1, 2];
        let (_, before) = forward(&arch, &p, &rows, &ys).unwrap();
        let g = backward(&arch, &p, &rows, &ys).unwrap();
        for (w, gi) in p.iter_mut().zip(&g) {
            *w -= 0.01 * gi;
        }
        let (_, after) = forward(&arch, &p, &rows, &ys).unwrap();
        assert!(after < before);
    }

    #[test]
    fn projection_round_trip_and_fill() {
        let f = example_family();
        let local = ParamVector {
            rung: Rung::Simple,
            values: (0..404).map(|i| i as f64).collect(),
        };
        let global = ParamVector {
            rung: Rung::Complex,
            values: vec![7.0; 1604],
        };
        let grown = f.project_params(Rung::Complex, &local, Some(&global)).unwrap();
        let simple: std::collections::HashSet<_> = f.coord_map(Rung::Simple).iter().copied().collect();
        for (i, v) in grown.values.iter().enumerate() {
            if !simple.contains(&i) {
                assert_eq!(*v, 7.0);
            }
        }
        let back = f.project_params(Rung::Simple, &grown, None).unwrap();
        assert_eq!(back, local);
        assert_eq!(f.project_params(Rung::Simple, &local, None).unwrap(), local);
        let zero_filled = f.project_params(Rung::Medium, &local, None).unwrap();
        assert_eq!(zero_filled.values.iter().filter(|v| **v == 0.0).count(), 804 - 404 + 1);
    }

    #[test]
    fn utility_and_ladder() {
        let f = example_family();
        assert_eq!(f.utility(Rung::Complex, 1.0, 1.0, 0.5, 0.5).unwrap(), 1.0);
        assert_eq!(f.utility(Rung::Simple, 0.2, 0.37, 1.0, 0.0).unwrap(), 0.37);
        // Capacity score 0.5 against the full Complex demand: efficiency 0.5.
        let u = f.utility(Rung::Complex, 0.5, 0.8, 0.9, 0.6).unwrap();
        assert!((u - 1.02).abs() < 1e-12);
        assert!(f.utility(Rung::Complex, 0.5, 0.8, -0.1, 0.6).is_err());

        assert_eq!(adjust_complexity(Rung::Simple, Direction::Down), Rung::Simple);
        assert_eq!(adjust_complexity(Rung::Medium, Direction::Up), Rung::Complex);
        assert_eq!(adjust_complexity(Rung::Complex, Direction::Up), Rung::Complex);
        assert_eq!(adjust_complexity(Rung::Medium, Direction::Hold), Rung::Medium);
    }

    #[test]
    fn param_bytes_round_trip() {
        let f = example_family();
        let p = f.init_params(1);
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), 9 + 4 * 1604);
        let (back, used) = ParamVector::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, p);
        assert!(ParamVector::from_bytes(&bytes[..100]).is_err());
    }
}
