//! Central finite-difference verification of [`Graph::backward`].

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Gradients below this magnitude are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(1, |numeric|)`.
    pub max_error: f64,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`
    /// with `floor` = [`RELATIVE_FLOOR`].
    pub max_relative: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares analytic gradients of `loss_fn` with central differences of
/// step `h`. At most `per_param` entries of each parameter are probed,
/// spread evenly over the tensor.
pub fn check_gradients<F>(store: &mut ParamStore<f64>, h: f64, per_param: usize, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };
    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).item())
    };
    let mut report = GradCheckReport { max_error: 0.0, max_relative: 0.0, worst: None, checked: 0 };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = n.div_ceil(per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).data[i];
            store.get_mut(id).data[i] = orig + h;
            let up = eval(store)?;
            store.get_mut(id).data[i] = orig - h;
            let down = eval(store)?;
            store.get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let exact = analytic.get(id).map_or(0.0, |g| g.data[i]);
            let err = (exact - numeric).abs() / numeric.abs().max(1.0);
            let scale = exact.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.max_relative = report.max_relative.max((exact - numeric).abs() / scale);
            report.checked += 1;
            if err > report.max_error || report.worst.is_none() {
                report.max_error = report.max_error.max(err);
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::AttentionSpec;
    use crate::nn::layers::{EncoderBlock, LayerNorm, Linear};
    use crate::nn::params::Init;
    use crate::nn::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;

    fn input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn three_layer_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let l1 = Linear::new(&mut store, &mut rng, "l1", 4, 6, true);
        let l2 = Linear::new(&mut store, &mut rng, "l2", 6, 5, true);
        let l3 = Linear::new(&mut store, &mut rng, "l3", 5, 3, true);
        let x = input(3, 4, &mut rng);
        let report = check_gradients(&mut store, 1e-5, 64, |g| {
            let x = g.constant(x.clone());
            let h = l1.forward(g, x)?;
            let h = g.tanh(h);
            let h = l2.forward(g, h)?;
            let h = g.gelu(h);
            let h = l3.forward(g, h)?;
            let p = g.softmax(h, None)?;
            let p = g.pick(p, vec![0, 2, 1])?;
            let l = g.log_floor(p, 1e-9);
            Ok(g.mean(l))
        })
        .unwrap();
        assert!(report.max_error < TOL, "{report:?}");
    }

    #[test]
    fn encoder_block_with_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let block = EncoderBlock::new(&mut store, &mut rng, "b", 8, 2, 12);
        let ln = LayerNorm::new(&mut store, &mut rng, "ln", 8);
        let x = input(6, 8, &mut rng);
        let mask = [true, true, false, true, true, true];
        let report = check_gradients(&mut store, 1e-5, 24, |g| {
            let x = g.constant(x.clone());
            let h = block.forward(g, x, 2, 3, Some(&mask), 0.0)?;
            let h = ln.forward(g, h)?;
            let pooled = g.masked_mean_pool(h, &mask, 2)?;
            let s = g.sigmoid(pooled);
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(report.max_error < TOL, "{report:?}");
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let a = store.init("a", &[4, 3], Init::Normal(1.0), &mut rng);
        let s = store.init("s", &[2, 3], Init::Normal(1.0), &mut rng);
        let e = store.init("e", &[5, 3], Init::Normal(1.0), &mut rng);
        let sc = store.init("sc", &[4], Init::Normal(1.0), &mut rng);
        let bm = store.init("bm", &[2, 3, 2], Init::Normal(1.0), &mut rng);
        let report = check_gradients(&mut store, 1e-5, 64, |g| {
            let (av, sv, ev, scv, bmv) = (g.param(a), g.param(s), g.param(e), g.param(sc), g.param(bm));
            let pairs = g.pair_add(av, sv, 2)?;
            let t = g.tanh(pairs);
            let emb = g.embedding(ev, &[0, 3, 3, 1])?;
            let gathered = g.gather_rows(emb, vec![Some(1), None, Some(3), Some(1)])?;
            let scaled = g.scale_rows(gathered, scv)?;
            let cat = g.concat_cols(scaled, av)?;
            let r = g.relu(cat);
            let sc = g.scatter_cols(r, (0..24).map(|i| (i * 7) % 5).collect(), 5)?;
            let padded = g.pad_cols(sc, 7)?;
            let sm = g.softmax(padded, None)?;
            let d = g.row_dot(emb, gathered)?;
            let prod = g.batch_matmul(av, bmv, 2, 2, 3, 2)?;
            let prod = g.reshape(prod, &[8])?;
            let t = g.reshape(t, &[12])?;
            let x = g.weighted_sum(t, (0..12).map(|i| i as f64 * 0.1).collect())?;
            let y = g.sum(sm);
            let y2 = g.weighted_sum(sm, (0..28).map(|i| (i % 3) as f64).collect())?;
            let z = g.sum(d);
            let w = g.mean(prod);
            let total = g.add(x, y)?;
            let total = g.add(total, y2)?;
            let total = g.add(total, z)?;
            g.add(total, w)
        })
        .unwrap();
        assert!(report.max_error < TOL, "{report:?}");
    }

    #[test]
    fn causal_and_cross_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut store = ParamStore::new();
        let q = store.init("q", &[6, 4], Init::Normal(1.0), &mut rng);
        let m = store.init("m", &[4, 4], Init::Normal(1.0), &mut rng);
        let report = check_gradients(&mut store, 1e-5, 64, |g| {
            let (qv, mv) = (g.param(q), g.param(m));
            let causal = AttentionSpec { seqs: 2, q_len: 3, k_len: 3, heads: 2, key_mask: None, causal: true };
            let h = g.attention(qv, qv, qv, causal)?;
            let cross = AttentionSpec {
                seqs: 2,
                q_len: 3,
                k_len: 2,
                heads: 2,
                key_mask: Some(vec![true, true, true, false]),
                causal: false,
            };
            let c = g.attention(h, mv, mv, cross)?;
            let c = g.affine(c, 2.0, 0.5);
            let c = g.tanh(c);
            Ok(g.sum(c))
        })
        .unwrap();
        assert!(report.max_error < TOL, "{report:?}");
    }
}
