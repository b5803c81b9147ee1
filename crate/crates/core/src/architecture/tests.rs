use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::rngs::ThreadRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::synthetic::{generate, SyntheticParams};
use crate::dataset::{group_by_student, PreparedDataset, SplitRatios, Stream};
use crate::embedding::pair_slots;
use crate::genome::SearchSpace;
use crate::nn::gradcheck::{check_gradients, Evaluation};
use crate::nn::{sigmoid, Init};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn config(blocks: usize, dim: usize, heads: usize, len: usize) -> ModelConfig {
    ModelConfig {
        blocks,
        dim,
        ffn_dim: dim,
        heads,
        max_len: len,
        dropout: 0.1,
        ..Default::default()
    }
}

fn data(len: usize) -> PreparedDataset {
    let params = SyntheticParams {
        students: 20,
        exercises: 12,
        min_len: len,
        max_len: 2 * len + 3,
        seed: 5,
        ..Default::default()
    };
    let logs = group_by_student(generate(&params).unwrap());
    PreparedDataset::build(&logs, params.vocabulary(), len, SplitRatios::default(), 0, 1).unwrap()
}

fn build<T: Scalar>(config: &ModelConfig, data: &PreparedDataset, seed: u64) -> (ParamStore<T>, Network) {
    let mut store = ParamStore::new();
    let net = Network::register(&mut store, config, &data.vocabulary, &mut rng(seed)).unwrap();
    (store, net)
}

fn full_window(data: &PreparedDataset) -> &SequenceWindow {
    data.train.iter().find(|w| w.valid.iter().all(|&v| v)).expect("a full window")
}

fn logits<T: Scalar>(net: &Network, store: &ParamStore<T>, genome: &Genome, w: &SequenceWindow) -> Vec<T> {
    net.forward::<T, ThreadRng>(store, genome, w, None).unwrap().0
}

/// Rewrites every stream entry after position `t` with arbitrary in-range values.
fn perturb_suffix(window: &SequenceWindow, t: usize, vocab: &FeatureVocabulary, seed: u64) -> SequenceWindow {
    let mut r = rng(seed);
    let mut w = window.clone();
    for kind in FeatureKind::ALL {
        let rows = vocab.table_rows(kind);
        match w.stream_mut(kind) {
            Stream::Categorical(ids) => {
                for id in &mut ids[t + 1..] {
                    *id = r.random_range(0..rows.unwrap() as u32);
                }
            }
            Stream::Continuous { values, .. } => {
                for v in &mut values[t + 1..] {
                    *v = r.random_range(-3.0..3.0);
                }
            }
        }
    }
    for p in t + 1..w.len() {
        w.targets[p] = r.random_range(0..2);
        w.valid[p] = r.random();
    }
    w
}

#[test]
fn perturbing_the_future_leaves_the_past_unchanged() {
    let data = data(8);
    let cfg = config(2, 8, 2, 8);
    let (store, net) = build::<f32>(&cfg, &data, 1);
    let space = SearchSpace::initial(cfg.num_features(), cfg.blocks);
    let window = full_window(&data);
    let mut r = rng(2);
    for trial in 0..8 {
        let genome = space.sample(&mut r, None).unwrap();
        let base = logits(&net, &store, &genome, window);
        for t in 0..window.len() - 1 {
            let changed = perturb_suffix(window, t, &data.vocabulary, trial * 100 + t as u64);
            let out = logits(&net, &store, &genome, &changed);
            assert_eq!(&base[..=t], &out[..=t], "genome {genome} position {t}");
        }
    }
}

#[test]
fn zero_head_predicts_one_half() {
    let data = data(6);
    let cfg = config(1, 8, 2, 6);
    let (mut store, net) = build::<f64>(&cfg, &data, 3);
    for id in net.head.params() {
        store.get_mut(id).fill(0.0);
    }
    let genome = SearchSpace::initial(12, 1).sample(&mut rng(4), None).unwrap();
    for w in data.train.iter().take(5) {
        assert!(net.predict(&store, &genome, w).unwrap().iter().all(|&p| p == 0.5));
    }
}

#[test]
fn predictions_do_not_depend_on_other_windows() {
    let data = data(6);
    let cfg = config(1, 8, 2, 6);
    let (store, net) = build::<f32>(&cfg, &data, 5);
    let genome = SearchSpace::initial(12, 1).sample(&mut rng(6), None).unwrap();
    let a = net.predict(&store, &genome, &data.train[0]).unwrap();
    let _ = net.predict(&store, &genome, &data.train[1]).unwrap();
    let b = net.predict(&store, &genome, &data.train[0]).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn all_zero_block_reduces_to_two_norms() {
    let data = data(6);
    let cfg = config(1, 8, 2, 6);
    let (mut store, net) = build::<f64>(&cfg, &data, 7);
    let slot = &net.encoder[0];
    for id in slot.all_params() {
        let shape = store.get(id).dim();
        *store.get_mut(id) = Init::Normal { std: 0.5 }.sample(shape, &mut rng(id.index() as u64));
    }
    let x = Init::Normal { std: 2.0 }.sample::<f64, _>((6, 8), &mut rng(8));
    let zero = BlockOps::new(LocalOp::Zero, GlobalOp::Zero, GlobalOp::Zero);
    let (h, _) = slot.forward::<f64, ThreadRng>(&store, zero, &x, None, &[true; 6], 0.0, None);
    let (x1, _) = slot.norm_in.forward(&store, &x);
    let (expected, _) = slot.norm_global.forward(&store, &x1);
    assert_eq!(h, expected);
}

#[test]
fn rejects_out_of_range_categories() {
    let data = data(6);
    let cfg = config(1, 8, 2, 6);
    let (store, net) = build::<f32>(&cfg, &data, 9);
    let mut w = data.train[0].clone();
    if let Stream::Categorical(ids) = w.stream_mut(FeatureKind::Exercise) {
        ids[0] = 10_000;
    }
    let genome = Genome::uniform(vec![true; 12], vec![true; 12], 1, BlockOps::GLOBAL);
    let err = net.predict(&store, &genome, &w).unwrap_err();
    assert!(err.to_string().contains("exer"), "{err}");
}

#[test]
fn rejects_genomes_of_the_wrong_shape() {
    let data = data(6);
    let cfg = config(1, 8, 2, 6);
    let (store, net) = build::<f32>(&cfg, &data, 9);
    let genome = Genome::uniform(vec![true; 5], vec![true; 5], 1, BlockOps::GLOBAL);
    assert!(net.predict(&store, &genome, &data.train[0]).is_err());
}

#[test]
fn illustrated_genome_runs_on_five_features() {
    let data = data(6);
    let mut cfg = config(2, 8, 2, 6);
    cfg.features = FeatureKind::ALL[..5].to_vec();
    let (store, net) = build::<f32>(&cfg, &data, 10);
    let g = Genome::decode(&[1, 1, 0, 0, 0, 0, 0, 1, 0, 1, 1, 0, 1, 2, 0, 1, 0, 2, 1, 4, 2, 2], 5).unwrap();
    let p = net.predict(&store, &g, &data.train[0]).unwrap();
    assert_eq!(p.len(), 6);
    let summary = net.summary(&store, &g);
    assert_eq!(summary["encoder_inputs"], serde_json::json!(["exer", "sk"]));
    assert_eq!(summary["decoder_blocks"][1], serde_json::json!(["conv11", "MHSA", "MHSA"]));
}

// Independent vanilla pre-LN reference: plain loops over the same weights.

fn ref_norm(store: &ParamStore<f64>, ln: &LayerNorm, x: &Array2<f64>) -> Array2<f64> {
    let (g, b) = (store.get(ln.gamma), store.get(ln.beta));
    let d = x.ncols() as f64;
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) / (var + 1e-5).sqrt() * g[[0, c]] + b[[0, c]];
        }
    }
    y
}

fn ref_affine(store: &ParamStore<f64>, l: &Linear, x: &Array2<f64>) -> Array2<f64> {
    let (w, b) = (store.get(l.weight), store.get(l.bias));
    Array2::from_shape_fn((x.nrows(), w.ncols()), |(r, c)| {
        b[[0, c]] + (0..w.nrows()).map(|k| x[[r, k]] * w[[k, c]]).sum::<f64>()
    })
}

fn ref_ffn(store: &ParamStore<f64>, f: &FeedForward, x: &Array2<f64>) -> Array2<f64> {
    let h = ref_affine(store, &f.up, x).mapv(|v| v.max(0.0));
    ref_affine(store, &f.down, &h)
}

fn ref_attention(store: &ParamStore<f64>, a: &MultiHeadAttention, xq: &Array2<f64>, xkv: &Array2<f64>) -> Array2<f64> {
    let (q, k, v) = (ref_affine(store, &a.query, xq), ref_affine(store, &a.key, xkv), ref_affine(store, &a.value, xkv));
    let (len, d) = q.dim();
    let dh = d / a.heads;
    let mut ctx = Array2::zeros((len, d));
    for h in 0..a.heads {
        for t in 0..len {
            let scores: Vec<f64> = (0..=t)
                .map(|j| (0..dh).map(|c| q[[t, h * dh + c]] * k[[j, h * dh + c]]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                let p = (s - max).exp() / z;
                for c in 0..dh {
                    ctx[[t, h * dh + c]] += p * v[[j, h * dh + c]];
                }
            }
        }
    }
    ref_affine(store, &a.output, &ctx)
}

/// Literal fused input: concatenate all pair slots (zeros when unselected),
/// multiply by the whole output matrix, add positions.
fn ref_input(store: &ParamStore<f64>, f: &Fusion, embeds: &[Array2<f64>], sel: &[bool]) -> Array2<f64> {
    let (len, d) = embeds[0].dim();
    let slots = pair_slots(sel.len());
    let mut cat = Array2::zeros((len, slots.len() * d));
    for (k, &(i, j)) in slots.iter().enumerate() {
        if !(sel[i] && sel[j]) {
            continue;
        }
        let w = store.get(f.pairs[k]);
        for t in 0..len {
            for c in 0..d {
                let pre: f64 = (0..d).map(|r| embeds[i][[t, r]] * w[[r, c]] + embeds[j][[t, r]] * w[[d + r, c]]).sum();
                cat[[t, k * d + c]] = pre.tanh();
            }
        }
    }
    let out = store.get(f.out);
    let pos = store.get(f.position);
    Array2::from_shape_fn((len, d), |(t, c)| {
        pos[[t, c]] + (0..cat.ncols()).map(|r| cat[[t, r]] * out[[r, c]]).sum::<f64>()
    })
}

fn ref_vanilla(net: &Network, store: &ParamStore<f64>, w: &SequenceWindow) -> Vec<f64> {
    let embeds: Vec<Array2<f64>> = (0..net.bank.len()).map(|i| net.bank.embed(store, w, i).unwrap()).collect();
    let sel = vec![true; net.bank.len()];
    let mut x = ref_input(store, &net.encoder_input, &embeds, &sel);
    for b in &net.encoder {
        let x1 = ref_norm(store, &b.norm_in, &x);
        let gp = ref_norm(store, &b.norm_global, &(&x1 + &ref_attention(store, &b.attention[0], &x1, &x1)));
        x = &gp + &ref_ffn(store, &b.ffn[1], &gp);
    }
    let memory = ref_norm(store, &net.encoder_norm, &x);
    let mut y = ref_input(store, &net.decoder_input, &embeds, &sel);
    for b in &net.decoder {
        let x1 = ref_norm(store, &b.norm_in, &y);
        let mut gp = ref_norm(store, &b.norm_global, &(&x1 + &ref_attention(store, &b.attention[0], &x1, &x1)));
        gp = &gp + &ref_attention(store, b.cross.as_ref().unwrap(), &gp, &memory);
        y = &gp + &ref_ffn(store, &b.ffn[1], &gp);
    }
    let out = ref_norm(store, &net.decoder_norm, &y);
    ref_affine(store, &net.head, &out).iter().map(|&z| sigmoid(z)).collect()
}

#[test]
fn global_genome_matches_vanilla_reference() {
    let data = data(8);
    let cfg = config(2, 8, 2, 8);
    let (store64, net) = build::<f64>(&cfg, &data, 11);
    let store32 = store64.cast::<f32>();
    let genome = Genome::uniform(vec![true; 12], vec![true; 12], 2, BlockOps::GLOBAL);
    for w in data.train.iter().filter(|w| w.valid.iter().all(|&v| v)).take(3) {
        let reference = ref_vanilla(&net, &store64, w);
        let exact = net.predict(&store64, &genome, w).unwrap();
        let single = net.predict(&store32, &genome, w).unwrap();
        for t in 0..w.len() {
            assert!((exact[t] - reference[t]).abs() < 1e-12);
            assert!((single[t] as f64 - reference[t]).abs() < 1e-5, "{} vs {}", single[t], reference[t]);
        }
    }
}

/// Parameter count from the configuration alone.
fn closed_form_count(cfg: &ModelConfig, vocab: &FeatureVocabulary, g: &Genome) -> u64 {
    let (d, f, len, num) = (cfg.dim as u64, cfg.ffn_dim as u64, cfg.max_len as u64, cfg.num_features() as u64);
    let mut total = 0;
    for (i, kind) in cfg.features.iter().enumerate() {
        if g.encoder_inputs[i] || g.decoder_inputs[i] {
            total += vocab.table_rows(*kind).unwrap_or(1) as u64 * d;
        }
    }
    for sel in [&g.encoder_inputs, &g.decoder_inputs] {
        let k = sel.iter().filter(|&&b| b).count() as u64;
        total += match cfg.input_mode {
            InputMode::Hierarchical => k * k.saturating_sub(1) / 2 * 2 * d * d + num * (num - 1) / 2 * d * d,
            InputMode::Concat => num * d * d,
        };
        total += len * d;
    }
    let mhsa = 4 * (d * d + d);
    let ffn = d * f + f + f * d + d;
    let global = |op: GlobalOp| match op {
        GlobalOp::Zero => 0,
        GlobalOp::Ffn => ffn,
        GlobalOp::Attention => mhsa,
    };
    for (i, b) in g.blocks().enumerate() {
        total += 4 * d + global(b.global1) + global(b.global2);
        if let Some(k) = b.local.kernel() {
            total += k as u64 * d * d + d + 2 * d;
        }
        if i >= cfg.blocks {
            total += mhsa;
        }
    }
    total + 4 * d + d + 1
}

#[test]
fn parameter_count_matches_closed_form() {
    let data = data(6);
    let mut r = rng(12);
    for mode in [InputMode::Hierarchical, InputMode::Concat] {
        let mut cfg = config(2, 8, 2, 6);
        cfg.input_mode = mode;
        let (store, net) = build::<f32>(&cfg, &data, 13);
        let space = SearchSpace::initial(12, 2);
        for _ in 0..30 {
            let g = space.sample(&mut r, None).unwrap();
            assert_eq!(net.count_parameters(&store, &g), closed_form_count(&cfg, &data.vocabulary, &g));
        }
    }
}

#[test]
fn conv3_slot_costs_52_scalars_at_width_four() {
    let data = data(6);
    let cfg = config(1, 4, 2, 6);
    let (store, net) = build::<f32>(&cfg, &data, 14);
    let conv = net.encoder[0].conv(LocalOp::Conv3).unwrap();
    assert_eq!(conv.params().iter().map(|&id| store.numel(id)).sum::<usize>(), 52);
}

#[test]
fn parameter_count_grows_with_kernel_size() {
    let data = data(6);
    let cfg = config(1, 8, 2, 6);
    let (store, net) = build::<f32>(&cfg, &data, 15);
    let counts: Vec<u64> = [LocalOp::Conv3, LocalOp::Conv5, LocalOp::Conv7, LocalOp::Conv11]
        .iter()
        .map(|&lo| {
            let mut g = Genome::uniform(vec![true; 12], vec![true; 12], 1, BlockOps::GLOBAL);
            g.encoder_blocks[0].local = lo;
            net.count_parameters(&store, &g)
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    let zero = Genome::uniform(vec![true; 12], vec![true; 12], 1, BlockOps::GLOBAL);
    assert!(net.count_parameters(&store, &zero) < counts[0]);
}

#[test]
fn genomes_differing_in_one_kernel_share_everything_else() {
    let data = data(6);
    let cfg = config(2, 8, 2, 6);
    let (_, net) = build::<f32>(&cfg, &data, 16);
    let mut a = SearchSpace::initial(12, 2).sample(&mut rng(17), None).unwrap();
    a.decoder_blocks[1].local = LocalOp::Conv3;
    let mut b = a.clone();
    b.decoder_blocks[1].local = LocalOp::Conv7;
    let ua: BTreeSet<_> = net.used_params(&a).into_iter().collect();
    let ub: BTreeSet<_> = net.used_params(&b).into_iter().collect();
    let only_a: Vec<_> = ua.difference(&ub).copied().collect();
    let only_b: Vec<_> = ub.difference(&ua).copied().collect();
    assert_eq!(only_a, net.decoder[1].convs[0].params().to_vec());
    assert_eq!(only_b, net.decoder[1].convs[2].params().to_vec());
}

/// Loss gradient wiring used by several checks: sum of `probe · logits`.
fn probe_backward<T: Scalar>(
    net: &Network,
    store: &ParamStore<T>,
    genome: &Genome,
    w: &SequenceWindow,
    dropout_seed: Option<u64>,
) -> (T, Grads<T>) {
    let mut r = dropout_seed.map(rng);
    let (logits, cache) = net.forward(store, genome, w, r.as_mut()).unwrap();
    let probe: Vec<T> = (0..logits.len()).map(|t| T::from_f64_lossy(0.3 + 0.1 * t as f64)).collect();
    let loss = logits.iter().zip(&probe).map(|(&a, &b)| a * b).sum();
    let mut grads = Grads::for_store(store);
    net.backward(store, w, &cache, &probe, &mut grads);
    (loss, grads)
}

#[test]
fn backward_touches_exactly_the_used_parameters() {
    let data = data(6);
    let cfg = config(2, 8, 2, 6);
    let (store, net) = build::<f32>(&cfg, &data, 18);
    let space = SearchSpace::initial(12, 2);
    let mut r = rng(19);
    for i in 0..20 {
        let g = space.sample(&mut r, None).unwrap();
        let (_, grads) = probe_backward(&net, &store, &g, &data.train[i % data.train.len()], Some(i as u64));
        let touched: Vec<ParamId> = grads.touched().collect();
        assert_eq!(touched, net.used_params(&g), "genome {g}");
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let data = data(5);
    let mut cfg = config(1, 4, 2, 5);
    cfg.features = vec![FeatureKind::Exercise, FeatureKind::Response, FeatureKind::LagCont, FeatureKind::Skill];
    let (mut store, net) = build::<f64>(&cfg, &data, 20);
    let window = full_window(&data).clone();
    let genomes = [
        Genome::decode(&[1, 0, 1, 1, 0, 1, 1, 0, 2, 2, 1, 3, 1, 2], 4).unwrap(),
        Genome::decode(&[0, 1, 0, 0, 1, 1, 0, 1, 4, 0, 2, 0, 1, 0], 4).unwrap(),
    ];
    for genome in genomes {
        let used = net.used_params(&genome);
        let report = check_gradients(&mut store, &mut [], &used, 1e-5, |s, _| -> Evaluation {
            let (loss, grads) = probe_backward(&net, s, &genome, &window, None);
            (loss, grads, Vec::new())
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{genome}: {report:?}");
    }
}

#[test]
fn block_gradients_match_finite_differences() {
    let data = data(5);
    let cfg = config(1, 8, 2, 5);
    let (mut store, net) = build::<f64>(&cfg, &data, 21);
    let slot = net.decoder[0].clone();
    let valid = [true, true, false, true, true];
    let all_ops = [
        BlockOps::new(LocalOp::Conv5, GlobalOp::Attention, GlobalOp::Ffn),
        BlockOps::new(LocalOp::Conv3, GlobalOp::Ffn, GlobalOp::Attention),
        BlockOps::new(LocalOp::Zero, GlobalOp::Zero, GlobalOp::Attention),
        BlockOps::new(LocalOp::Conv11, GlobalOp::Zero, GlobalOp::Zero),
    ];
    let probe = Init::Normal { std: 1.0 }.sample::<f64, _>((5, 8), &mut rng(22));
    for ops in all_ops {
        let mut inputs = vec![
            Init::Normal { std: 1.0 }.sample((5, 8), &mut rng(23)),
            Init::Normal { std: 1.0 }.sample((5, 8), &mut rng(24)),
        ];
        let used = slot.used_params(ops);
        let report = check_gradients(&mut store, &mut inputs, &used, 1e-5, |s, xs| -> Evaluation {
            let (y, cache) = slot.forward::<f64, ThreadRng>(s, ops, &xs[0], Some(&xs[1]), &valid, 0.0, None);
            let loss = (&y * &probe).sum();
            let mut grads = Grads::for_store(s);
            let (dx, dm) = slot.backward(s, &cache, &probe, &mut grads);
            (loss, grads, vec![dx, dm.unwrap()])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{ops}: {report:?}");
    }
}

#[test]
fn dropout_changes_training_forward_only() {
    let data = data(6);
    let cfg = config(1, 8, 2, 6);
    let (store, net) = build::<f32>(&cfg, &data, 25);
    let g = Genome::uniform(vec![true; 12], vec![true; 12], 1, BlockOps::new(LocalOp::Conv3, GlobalOp::Attention, GlobalOp::Ffn));
    let w = full_window(&data);
    let eval = logits(&net, &store, &g, w);
    let train = net.forward(&store, &g, w, Some(&mut rng(1))).unwrap().0;
    assert_ne!(eval, train);
    assert_eq!(eval, logits(&net, &store, &g, w));
}

#[test]
fn positional_rows_beyond_the_window_are_unused() {
    let data = data(6);
    let cfg = config(1, 8, 2, 10);
    let (store, net) = build::<f64>(&cfg, &data, 26);
    let g = Genome::uniform(vec![true; 12], vec![true; 12], 1, BlockOps::GLOBAL);
    let (_, grads) = probe_backward(&net, &store, &g, &data.train[0], None);
    let pos = grads.get(net.encoder_input.position).unwrap();
    assert!(pos.slice(s![6.., ..]).iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn causality_holds_for_sampled_genomes(genome_seed in any::<u64>(), t in 0usize..7, perturb_seed in any::<u64>()) {
        let data = data(8);
        let cfg = config(2, 8, 2, 8);
        let (store, net) = build::<f64>(&cfg, &data, 27);
        let genome = SearchSpace::initial(12, 2).sample(&mut rng(genome_seed), None).unwrap();
        let w = full_window(&data);
        let base = logits(&net, &store, &genome, w);
        let out = logits(&net, &store, &genome, &perturb_suffix(w, t, &data.vocabulary, perturb_seed));
        prop_assert_eq!(&base[..=t], &out[..=t]);
    }
}
