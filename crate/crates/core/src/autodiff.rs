//! Matrix-valued reverse-mode differentiation.
//!
//! A [`Tape`] records operations on 2-D arrays in evaluation order and
//! replays them backwards once to produce gradients for every tensor in a
//! [`ParamStore`]. Only the operations the flow models and balance losses
//! need are provided.

use std::ops::Range;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant standing in for `-inf` on masked logits.
pub const MASK_NEG: f64 = -1e9;

/// Learning-rate group of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Network,
    LogZ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorData {
    name: String,
    group: ParamGroup,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<TensorData>", try_from = "Vec<TensorData>")]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    tensors: Vec<Array2<f64>>,
}

impl From<ParamStore> for Vec<TensorData> {
    fn from(p: ParamStore) -> Self {
        p.names
            .into_iter()
            .zip(p.groups)
            .zip(p.tensors)
            .map(|((name, group), t)| TensorData {
                name,
                group,
                rows: t.nrows(),
                cols: t.ncols(),
                data: t.iter().copied().collect(),
            })
            .collect()
    }
}

impl TryFrom<Vec<TensorData>> for ParamStore {
    type Error = String;

    fn try_from(v: Vec<TensorData>) -> std::result::Result<Self, String> {
        let mut p = ParamStore::new();
        for t in v {
            let arr = Array2::from_shape_vec((t.rows, t.cols), t.data)
                .map_err(|e| format!("tensor {}: {e}", t.name))?;
            p.push(t.name, t.group, arr);
        }
        Ok(p)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            groups: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        value: Array2<f64>,
    ) -> usize {
        self.names.push(name.into());
        self.groups.push(group);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Array2<f64> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn group(&self, i: usize) -> ParamGroup {
        self.groups[i]
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients(
            self.tensors
                .iter()
                .map(|t| Array2::zeros(t.raw_dim()))
                .collect(),
        )
    }
}

/// Gradient tensors aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Array2<f64>>);

impl Gradients {
    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.0
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Weighting of sub-trajectory residuals by their length `j - i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairWeighting {
    /// Weight `lambda^(j - i)`, normalized over all pairs.
    Geometric(f64),
    /// Only the pair spanning the whole segment.
    FullOnly,
}

impl PairWeighting {
    fn weight(self, i: usize, j: usize, n: usize) -> f64 {
        match self {
            PairWeighting::Geometric(lambda) => lambda.powi((j - i) as i32),
            PairWeighting::FullOnly => {
                if i == 0 && j + 1 == n {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

enum Op {
    Param(usize),
    Const,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Tanh(Var),
    Cols(Var, usize, usize),
    MaskedLogSoftmax(Var, Array2<bool>),
    Gather(Var, Vec<usize>),
    Lookup(usize, Vec<usize>),
    SegmentSum(Var, Vec<Range<usize>>),
    SegmentExclusiveCumsum(Var, Vec<Range<usize>>),
    Broadcast(Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulConst(Var, Array2<f64>),
    AddConst(Var),
    Scale(Var, f64),
    Square(Var),
    Mean(Var),
    SegmentPairwise(Var, Vec<Range<usize>>, PairWeighting),
}

struct Node {
    op: Op,
    value: Option<Array2<f64>>,
}

/// Records a computation over parameters borrowed from a [`ParamStore`].
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Tape<'p> {
        Tape {
            params,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(i), _) => self.params.get(*i),
            (_, Some(val)) => val,
            _ => unreachable!("non-parameter nodes always hold a value"),
        }
    }

    /// Value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Option<Array2<f64>>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.push(Op::Param(index), None)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Const, Some(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), Some(v))
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), Some(v))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), Some(v))
    }

    /// Columns `lo..hi`.
    pub fn cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let v = self.value(a).slice(s![.., lo..hi]).to_owned();
        self.push(Op::Cols(a, lo, hi), Some(v))
    }

    /// Row-wise log-softmax restricted to `mask`; masked entries come out
    /// near [`MASK_NEG`] so their probability is exactly zero.
    pub fn masked_log_softmax(&mut self, a: Var, mask: Array2<bool>) -> Result<Var> {
        let x = self.value(a);
        if x.dim() != mask.dim() {
            return Err(Error::Invariant(format!(
                "mask shape {:?} vs logits {:?}",
                mask.dim(),
                x.dim()
            )));
        }
        let mut out = Array2::zeros(x.raw_dim());
        for (r, (xr, mr)) in x.outer_iter().zip(mask.outer_iter()).enumerate() {
            let row = masked_log_softmax(
                xr.as_slice().expect("row-major"),
                mr.as_slice().expect("row-major"),
            )?;
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
        }
        Ok(self.push(Op::MaskedLogSoftmax(a, mask), Some(out)))
    }

    /// Picks column `cols[r]` from each row, giving an `n x 1` column.
    pub fn gather(&mut self, a: Var, cols: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), cols.len());
        let v = Array2::from_shape_fn((cols.len(), 1), |(r, _)| x[[r, cols[r]]]);
        self.push(Op::Gather(a, cols), Some(v))
    }

    /// Selects rows of a parameter tensor.
    pub fn lookup(&mut self, param: usize, rows: Vec<usize>) -> Var {
        let t = self.params.get(param);
        let v = t.select(Axis(0), &rows);
        self.push(Op::Lookup(param, rows), Some(v))
    }

    /// Sums each row segment of an `n x 1` column, giving `segments x 1`.
    pub fn segment_sum(&mut self, a: Var, segments: Vec<Range<usize>>) -> Var {
        let x = self.value(a);
        let v = Array2::from_shape_fn((segments.len(), 1), |(k, _)| {
            segments[k].clone().map(|r| x[[r, 0]]).sum()
        });
        self.push(Op::SegmentSum(a, segments), Some(v))
    }

    /// Within each segment, row `r` receives the sum of the rows before it.
    pub fn segment_exclusive_cumsum(&mut self, a: Var, segments: Vec<Range<usize>>) -> Var {
        let x = self.value(a);
        let mut v = Array2::zeros((x.nrows(), 1));
        for seg in &segments {
            let mut acc = 0.0;
            for r in seg.clone() {
                v[[r, 0]] = acc;
                acc += x[[r, 0]];
            }
        }
        self.push(Op::SegmentExclusiveCumsum(a, segments), Some(v))
    }

    /// Repeats a `1x1` value into an `n x 1` column.
    pub fn broadcast(&mut self, a: Var, n: usize) -> Var {
        let s = self.scalar(a);
        self.push(Op::Broadcast(a), Some(Array2::from_elem((n, 1), s)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), Some(v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), Some(v))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let v = self.value(a) * &c;
        self.push(Op::MulConst(a, c), Some(v))
    }

    /// Elementwise sum with a constant of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        let v = self.value(a) + c;
        self.push(Op::AddConst(a), Some(v))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(Op::Scale(a, k), Some(v))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(Op::Square(a), Some(v))
    }

    /// Mean of all entries, as `1x1`.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.sum() / x.len() as f64;
        self.push(Op::Mean(a), Some(Array2::from_elem((1, 1), m)))
    }

    /// For each segment of an `n x 1` column `v`, the weighted mean over
    /// pairs `i < j` of `(v_i - v_j)^2`. Output is `segments x 1`.
    pub fn segment_pairwise(
        &mut self,
        a: Var,
        segments: Vec<Range<usize>>,
        weighting: PairWeighting,
    ) -> Var {
        let x = self.value(a);
        let mut out = Array2::zeros((segments.len(), 1));
        for (k, seg) in segments.iter().enumerate() {
            let n = seg.len();
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..n {
                for j in i + 1..n {
                    let w = weighting.weight(i, j, n);
                    if w == 0.0 {
                        continue;
                    }
                    let d = x[[seg.start + i, 0]] - x[[seg.start + j, 0]];
                    num += w * d * d;
                    den += w;
                }
            }
            out[[k, 0]] = if den > 0.0 { num / den } else { 0.0 };
        }
        self.push(Op::SegmentPairwise(a, segments, weighting), Some(out))
    }

    /// Back-propagates from a `1x1` loss. The tape can be consumed once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.consumed = true;
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Invariant("backward needs a scalar loss".into()));
        }
        let mut grads = self.params.zeros_like();
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Param(i) => grads.0[*i] += &g,
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adj, *row, gr);
                    accumulate(&mut adj, *a, g);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[idx].value.as_ref().expect("tanh value");
                    let ga = &g * &y.mapv(|t| 1.0 - t * t);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Cols(a, lo, hi) => {
                    let x = self.value(*a);
                    let mut ga = Array2::zeros(x.raw_dim());
                    ga.slice_mut(s![.., *lo..*hi]).assign(&g);
                    accumulate(&mut adj, *a, ga);
                }
                Op::MaskedLogSoftmax(a, mask) => {
                    let y = self.nodes[idx].value.as_ref().expect("log-softmax value");
                    let mut ga = Array2::zeros(y.raw_dim());
                    for r in 0..y.nrows() {
                        let total: f64 = g.row(r).sum();
                        for c in 0..y.ncols() {
                            if mask[[r, c]] {
                                ga[[r, c]] = g[[r, c]] - y[[r, c]].exp() * total;
                            }
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Gather(a, cols) => {
                    let x = self.value(*a);
                    let mut ga = Array2::zeros(x.raw_dim());
                    for (r, &c) in cols.iter().enumerate() {
                        ga[[r, c]] += g[[r, 0]];
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Lookup(p, rows) => {
                    let t = &mut grads.0[*p];
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = t.row_mut(r);
                        dst += &g.row(k);
                    }
                }
                Op::SegmentSum(a, segments) => {
                    let n = self.value(*a).nrows();
                    let mut ga = Array2::zeros((n, 1));
                    for (k, seg) in segments.iter().enumerate() {
                        for r in seg.clone() {
                            ga[[r, 0]] = g[[k, 0]];
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::SegmentExclusiveCumsum(a, segments) => {
                    let n = self.value(*a).nrows();
                    let mut ga = Array2::zeros((n, 1));
                    for seg in segments {
                        // d out_r / d x_q = 1 for q < r within the segment
                        let mut suffix = 0.0;
                        for r in seg.clone().rev() {
                            ga[[r, 0]] = suffix;
                            suffix += g[[r, 0]];
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Broadcast(a) => {
                    let total = g.sum();
                    accumulate(&mut adj, *a, Array2::from_elem((1, 1), total));
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, -&g);
                    accumulate(&mut adj, *a, g);
                }
                Op::MulConst(a, c) => accumulate(&mut adj, *a, &g * c),
                Op::AddConst(a) => accumulate(&mut adj, *a, g),
                Op::Scale(a, k) => accumulate(&mut adj, *a, g * *k),
                Op::Square(a) => {
                    let ga = &g * &(self.value(*a) * 2.0);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let ga = Array2::from_elem(x.raw_dim(), g[[0, 0]] / x.len() as f64);
                    accumulate(&mut adj, *a, ga);
                }
                Op::SegmentPairwise(a, segments, weighting) => {
                    let x = self.value(*a);
                    let mut ga = Array2::zeros(x.raw_dim());
                    for (k, seg) in segments.iter().enumerate() {
                        let n = seg.len();
                        let mut den = 0.0;
                        for i in 0..n {
                            for j in i + 1..n {
                                den += weighting.weight(i, j, n);
                            }
                        }
                        if den == 0.0 {
                            continue;
                        }
                        let scale = g[[k, 0]] / den;
                        for i in 0..n {
                            for j in i + 1..n {
                                let w = weighting.weight(i, j, n);
                                if w == 0.0 {
                                    continue;
                                }
                                let d = x[[seg.start + i, 0]] - x[[seg.start + j, 0]];
                                let c = 2.0 * w * d * scale;
                                ga[[seg.start + i, 0]] += c;
                                ga[[seg.start + j, 0]] -= c;
                            }
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut adj[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Log-softmax over the allowed entries of one row. Disallowed entries are
/// replaced by [`MASK_NEG`] before normalizing.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::Invariant("mask and logits differ in length".into()));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Invariant("mask allows no action".into()));
    }
    let shifted: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { x } else { MASK_NEG })
        .collect();
    let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + shifted.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(shifted.iter().map(|x| x - lse).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store_with(values: &[Array2<f64>]) -> ParamStore {
        let mut p = ParamStore::new();
        for (i, v) in values.iter().enumerate() {
            p.push(format!("p{i}"), ParamGroup::Network, v.clone());
        }
        p
    }

    #[test]
    fn masked_log_softmax_examples() {
        let one = masked_log_softmax(&[3.0, 1.0, -2.0], &[false, true, false]).unwrap();
        assert_eq!(one[1].exp(), 1.0);
        assert!(one[0].exp() < 1e-30 && one[2].exp() == 0.0);

        let two = masked_log_softmax(&[0.0, 0.0, 5.0], &[true, true, false]).unwrap();
        assert!((two[0].exp() - 0.5).abs() < 1e-15);
        assert!((two[1].exp() - 0.5).abs() < 1e-15);

        let e = std::f64::consts::E;
        let lp = masked_log_softmax(&[1.0, 0.0], &[true, true]).unwrap();
        assert!((lp[0].exp() - e / (e + 1.0)).abs() < 1e-12);
        assert!((lp[0].exp() - 0.7311).abs() < 1e-4);
        assert!((lp[1].exp() - 0.2689).abs() < 1e-4);

        assert!(matches!(
            masked_log_softmax(&[1.0, 2.0], &[false, false]),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn square_of_scalar_parameter() {
        let p = store_with(&[array![[3.0]]]);
        let mut tape = Tape::new(&p);
        let z = tape.param(0);
        let loss = tape.square(z);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.0[0][[0, 0]], 6.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = store_with(&[array![[1.0, 2.0]]]);
        let mut tape = Tape::new(&p);
        let _ = tape.param(0);
        let c = tape.constant(array![[4.0]]);
        let g = tape.backward(c).unwrap();
        assert!(g.0[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn second_backward_is_rejected() {
        let p = store_with(&[array![[1.0]]]);
        let mut tape = Tape::new(&p);
        let z = tape.param(0);
        let loss = tape.square(z);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::GraphConsumed)));
    }

    fn composite_loss(p: &ParamStore) -> (f64, Gradients) {
        let mut tape = Tape::new(p);
        let x = tape.constant(array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.9]]);
        let w = tape.param(0);
        let b = tape.param(1);
        let z = tape.param(2);
        let h = tape.matmul(x, w);
        let h = tape.add_row(h, b);
        let h = tape.tanh(h);
        let logits = tape.cols(h, 0, 3);
        let flow = tape.cols(h, 3, 4);
        let mask = array![[true, true, false], [false, true, true], [true, true, true]];
        let lp = tape.masked_log_softmax(logits, mask).unwrap();
        let chosen = tape.gather(lp, vec![0, 2, 1]);
        let segs = vec![0..2, 2..3];
        let cum = tape.segment_exclusive_cumsum(chosen, segs.clone());
        let zb = tape.broadcast(z, 3);
        let v = tape.add(flow, zb);
        let v = tape.sub(v, cum);
        let v = tape.mul_const(v, array![[1.0], [0.5], [2.0]]);
        let v = tape.add_const(v, &array![[0.1], [0.2], [0.3]]);
        #[allow(clippy::single_range_in_vec_init)]
        let pw = tape.segment_pairwise(v, vec![0..3], PairWeighting::Geometric(0.7));
        let ss = tape.segment_sum(chosen, segs);
        let sq = tape.square(ss);
        let sq = tape.scale(sq, 0.3);
        let m1 = tape.mean(sq);
        let m2 = tape.mean(pw);
        let loss = tape.add(m1, m2);
        let val = tape.scalar(loss);
        (val, tape.backward(loss).unwrap())
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let p = store_with(&[
            array![[0.2, -0.1, 0.4, 0.3], [0.5, 0.1, -0.3, 0.2]],
            array![[0.05, -0.02, 0.1, 0.0]],
            array![[0.7]],
        ]);
        let (_, g) = composite_loss(&p);
        let h = 1e-5;
        for t in 0..p.len() {
            for idx in 0..p.get(t).len() {
                let (r, c) = (idx / p.get(t).ncols(), idx % p.get(t).ncols());
                let mut plus = p.clone();
                plus.get_mut(t)[[r, c]] += h;
                let mut minus = p.clone();
                minus.get_mut(t)[[r, c]] -= h;
                let fd = (composite_loss(&plus).0 - composite_loss(&minus).0) / (2.0 * h);
                let an = g.0[t][[r, c]];
                assert!(
                    (an - fd).abs() / (fd.abs() + 1e-8) < 1e-5,
                    "tensor {t} [{r},{c}] analytic {an} fd {fd}"
                );
            }
        }
    }

    #[test]
    fn lookup_scatters_into_rows() {
        let p = store_with(&[array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]]);
        let mut tape = Tape::new(&p);
        let rows = tape.lookup(0, vec![2, 0, 2]);
        assert_eq!(
            tape.value(rows),
            &array![[5.0, 6.0], [1.0, 2.0], [5.0, 6.0]]
        );
        let m = tape.mean(rows);
        let g = tape.backward(m).unwrap();
        assert_eq!(
            g.0[0],
            array![[1.0 / 6.0, 1.0 / 6.0], [0.0, 0.0], [2.0 / 6.0, 2.0 / 6.0]]
        );
    }

    #[test]
    fn full_only_weighting_uses_endpoints() {
        let p = ParamStore::new();
        let mut tape = Tape::new(&p);
        let v = tape.constant(array![[1.0], [5.0], [3.0], [7.0], [0.0]]);
        let out = tape.segment_pairwise(v, vec![0..3, 3..5], PairWeighting::FullOnly);
        assert_eq!(tape.value(out), &array![[4.0], [49.0]]);
    }

    #[test]
    fn param_store_serde_round_trip() {
        let p = store_with(&[array![[0.1, 0.2 + 1e-17], [1.0 / 3.0, -7.5]]]);
        let json = serde_json::to_string(&p).unwrap();
        let back: ParamStore = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
