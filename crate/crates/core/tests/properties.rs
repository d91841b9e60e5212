//! Invariants checked over randomized inputs.

use nspda::checkpoint::{Checkpoint, Model};
use nspda::grammar::{curriculum_slice, pda_accepts, sample_dataset, Grammar, StackSym};
use nspda::harness::predictions;
use nspda::learning::{clip, refinement_loss, FlatParams, LrMode, OptimizerConfig, RefinementSchedule, CLAMP_EPS};
use nspda::model::{classify, forward_sequence, init_params, pre_activations, quantize_weights, ForwardOptions, Mode, ModelOrder, ModelParams};
use nspda::par::Exec;
use nspda::programming::{program_full, STRENGTH};
use nspda::protocols::{apply_adaptive_noise, two_stage_incremental, CurriculumConfig, NoiseConfig, NoiseTargets, TrainMode, TrainSetup};
use nspda::stack::{read_vector, ActionVector, ReadNoise, Stack};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn order() -> impl Strategy<Value = ModelOrder> {
    prop_oneof![Just(ModelOrder::Second), Just(ModelOrder::Third)]
}

fn grammar() -> impl Strategy<Value = Grammar> {
    prop::sample::select(Grammar::ALL.to_vec())
}

/// A model with weights spread over every quantization bucket.
fn wide_params(order: ModelOrder, j: usize, l: usize, seed: u64) -> ModelParams {
    let mut p = init_params(order, j, l, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    let flat: Vec<f64> = (0..p.param_count()).map(|_| rand::Rng::random_range(&mut rng, -1.5..1.5)).collect();
    p.set_flat(&flat);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn push_then_pop_restores_the_stack(ops in prop::collection::vec(0usize..3, 0..12), sym in 0usize..3) {
        let mut s = Stack::new();
        for &o in &ops {
            s.apply(&ActionVector::push(3, o));
        }
        let before = s.clone();
        s.apply(&ActionVector::push(3, sym));
        prop_assert_eq!(s.top(), StackSym::Sym(sym));
        prop_assert_eq!(s.apply(&ActionVector::pop(3, sym)), Some(sym));
        prop_assert_eq!(s, before);
    }

    #[test]
    fn read_vector_decodes_to_the_top(pushes in prop::collection::vec(0usize..4, 0..10), popped in prop::option::of(0usize..4), seed in any::<u64>()) {
        let mut s = Stack::new();
        for &p in &pushes {
            s.apply(&ActionVector::push(4, p));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for noise in [ReadNoise::Random, ReadNoise::Midpoint, ReadNoise::Low, ReadNoise::High] {
            let r = read_vector(&s, popped, 4, noise, &mut rng);
            prop_assert_eq!(r.decode_top(), Some(s.top()));
        }
    }

    #[test]
    fn quantization_is_idempotent(o in order(), j in 1usize..6, l in 2usize..4, seed in any::<u64>()) {
        let p = wide_params(o, j, l, seed);
        let q = quantize_weights(&p);
        prop_assert_eq!(&quantize_weights(&q), &q);
        prop_assert!(q.w_s.iter().all(|&w| w == 0.0 || w == 1.0));
        prop_assert!(q.w_a.iter().all(|&w| w == -1.0 || w == 0.0 || w == 1.0));
        prop_assert_eq!(&q.w_o, &p.w_o);
    }

    #[test]
    fn shapes_are_checked(o in order(), j in 1usize..7, l in 2usize..5, tokens in prop::collection::vec(0usize..5, 1..8), seed in any::<u64>()) {
        let p = wide_params(o, j, l, seed);
        prop_assert!(p.validate().is_ok());
        let f = o.feature_len(l);
        prop_assert_eq!(p.w_s.len(), j * j * f);
        prop_assert_eq!(p.w_a.len(), l * j * f);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let result = forward_sequence(&p, &tokens, &vec![1; tokens.len()], ForwardOptions::smooth(), &mut rng);
        prop_assert_eq!(result.is_ok(), tokens.iter().all(|&t| t < l));
        let mut broken = p.clone();
        broken.b_a.push(0.0);
        prop_assert!(broken.validate().is_err());
    }

    #[test]
    fn one_hot_contraction_reads_one_entry(j in 1usize..6, l in 2usize..4, seed in any::<u64>(), picks in (0usize..6, 0usize..4, 0usize..4)) {
        let p = wide_params(ModelOrder::Third, j, l, seed);
        let (js, ks, ls) = (picks.0 % j, picks.1 % l, picks.2 % l);
        let mut z = vec![0.0; j];
        z[js] = 1.0;
        let mut r = vec![0.0; l];
        r[ks] = 1.0;
        let (s, u) = pre_activations(&p, &z, &r, ls, Mode::Smooth);
        for i in 0..j {
            prop_assert_eq!(s[i], p.ws4(i, js, ks, ls) + p.b_s[i]);
        }
        for c in 0..l {
            prop_assert_eq!(u[c], p.wa4(c, js, ks, ls) + p.b_a[c]);
        }
    }

    #[test]
    fn second_order_embeds_in_third_order(j in 1usize..5, l in 2usize..4, seed in any::<u64>(), x in 0usize..4, rz in prop::collection::vec(0.0f64..1.0, 8)) {
        let x = x % l;
        let second = wide_params(ModelOrder::Second, j, l, seed);
        let mut third = ModelParams::zeros(ModelOrder::Third, j, l).unwrap();
        third.b_s.clone_from(&second.b_s);
        third.b_a.clone_from(&second.b_a);
        for i in 0..j {
            for jj in 0..j {
                for k in 0..l {
                    for ll in 0..l {
                        let v = second.w_s[second.ws_index(i, jj, k)] + second.w_s[second.ws_index(i, jj, l + ll)];
                        let at = third.ws_index(i, jj, k * l + ll);
                        third.w_s[at] = v;
                    }
                }
            }
        }
        for c in 0..l {
            for jj in 0..j {
                for k in 0..l {
                    for ll in 0..l {
                        let v = second.w_a[second.wa_index(c, jj, k)] + second.w_a[second.wa_index(c, jj, l + ll)];
                        let at = third.wa_index(c, jj, k * l + ll);
                        third.w_a[at] = v;
                    }
                }
            }
        }
        // the replication is exact when r sums to one
        let mut r: Vec<f64> = rz[..l].iter().map(|v| v + 0.01).collect();
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        let z = &rz[4..4 + j];
        let (s2, u2) = pre_activations(&second, z, &r, x, Mode::Smooth);
        let (s3, u3) = pre_activations(&third, z, &r, x, Mode::Smooth);
        for (a, b) in s2.iter().zip(&s3).chain(u2.iter().zip(&u3)) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn clipping_is_idempotent(v in prop::collection::vec(-100.0f64..100.0, 0..40), c in 0.1f64..20.0) {
        let mut once = v.clone();
        clip(&mut once, c);
        let mut twice = once.clone();
        clip(&mut twice, c);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.iter().all(|x| x.abs() <= c));
    }

    #[test]
    fn refinement_loss_is_positive(hints in prop::collection::vec(any::<bool>(), 1..6), k in 1usize..5, y in any::<bool>(), seed in any::<u64>()) {
        let schedule = RefinementSchedule::new(hints, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<f64> = (0..schedule.total()).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let target = f64::from(u8::from(y));
        let loss = refinement_loss(&preds, target, &schedule).unwrap();
        prop_assert!(loss >= 0.0);
        let perfect = vec![target; schedule.total()];
        let floor = refinement_loss(&perfect, target, &schedule).unwrap();
        prop_assert!(floor <= schedule.total() as f64 * 2.0 * CLAMP_EPS);
        prop_assert!(loss > floor || preds == perfect);
        prop_assert!(refinement_loss(&preds[1..], target, &schedule).is_err());
    }

    #[test]
    fn noise_touches_only_selected_matrices(o in order(), j in 3usize..7, seed in any::<u64>(), np in 0.08f64..0.30) {
        let mut p = wide_params(o, j, 3, seed);
        let before = p.clone();
        let cfg = NoiseConfig { np, beta: 0.05, ..NoiseConfig::default() };
        let ev = apply_adaptive_noise(&mut p, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(p.w_s.len(), before.w_s.len());
        prop_assert_eq!(&p.w_o, &before.w_o);
        prop_assert_eq!(&p.b_s, &before.b_s);
        let mut after = p.clone();
        let mut orig = before.clone();
        let (ta, tb) = (after.noise_targets(), orig.noise_targets());
        for (a, b) in ta.iter().zip(&tb) {
            let size = a.data.len() / (a.a * a.b);
            for m in 0..a.a * a.b {
                let sel = ev.touched.iter().any(|(n, (p, q))| *n == a.name && p * a.b + q == m);
                let (x, y) = (&a.data[m * size..(m + 1) * size], &b.data[m * size..(m + 1) * size]);
                if !sel {
                    prop_assert_eq!(x, y, "{} matrix {} changed", a.name, m);
                }
            }
        }
    }

    #[test]
    fn slicing_is_idempotent_and_monotone(g in grammar(), seed in 0u64..1000, a in 1usize..12, b in 1usize..12) {
        let d = sample_dataset(&g.pda(), 20, 20, 1, 12, seed).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let s = curriculum_slice(&d, lo);
        prop_assert_eq!(&curriculum_slice(&s, lo).samples, &s.samples);
        let big = curriculum_slice(&d, hi);
        prop_assert!(s.samples.iter().all(|x| big.samples.contains(x)));
        prop_assert!(s.samples.iter().all(|x| x.len() <= lo));
        prop_assert_eq!(curriculum_slice(&d, d.max_len()).samples, d.samples.clone());
    }

    #[test]
    fn datasets_are_sound_and_deterministic(g in grammar(), seed in 0u64..1000) {
        let pda = g.pda();
        let d = sample_dataset(&pda, 25, 25, 1, 14, seed).unwrap();
        for s in &d.samples {
            prop_assert_eq!(pda_accepts(&pda, &s.tokens).unwrap(), s.label);
        }
        let again = sample_dataset(&pda, 25, 25, 1, 14, seed).unwrap();
        prop_assert_eq!(d.samples, again.samples);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(o in order(), j in 1usize..6, l in 2usize..4, seed in any::<u64>()) {
        let mut p = wide_params(o, j, l, seed);
        p.b_o = f64::from_bits(0x3FB9_9999_9999_999A) * 1.000_000_000_000_001;
        let ck = Checkpoint::new(Model::Nspda(p.clone()), seed).with_meta("grammar", "anbn");
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        let Model::Nspda(q) = &back.model else { panic!("kind changed") };
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&p.to_flat()), bits(&q.to_flat()));
        let tokens: Vec<usize> = (0..9).map(|i| (i * 7 + seed as usize) % l).collect();
        let a = classify(&p, &tokens, ReadNoise::Midpoint, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = classify(q, &tokens, ReadNoise::Midpoint, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn execution_strategy_does_not_change_predictions(g in grammar(), seed in 0u64..100) {
        let pda = g.pda();
        let d = sample_dataset(&pda, 15, 15, 1, 12, seed).unwrap();
        let model = Model::Nspda(wide_params(ModelOrder::Third, 4, pda.alphabet().len(), seed));
        let a = predictions(&model, &d.samples, seed, ReadNoise::Random, Exec::Sequential).unwrap();
        let b = predictions(&model, &d.samples, seed, ReadNoise::Random, Exec::Parallel).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn programmed_machines_ignore_read_noise(g in grammar(), seed in any::<u64>()) {
        let pda = g.pda();
        let p = program_full(&pda, ModelOrder::Third, nspda::programming::required_state_count(&pda, ModelOrder::Third).unwrap(), STRENGTH).unwrap();
        let d = sample_dataset(&pda, 20, 20, 1, 30, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &d.samples {
            let mid = classify(&p, &s.tokens, ReadNoise::Midpoint, &mut rng).unwrap();
            prop_assert_eq!(mid, s.label);
            for noise in [ReadNoise::Low, ReadNoise::High, ReadNoise::Random] {
                prop_assert_eq!(classify(&p, &s.tokens, noise, &mut rng).unwrap(), mid);
            }
        }
    }

    #[test]
    fn training_is_reproducible(seed in 0u64..50, noise in any::<bool>(), mode in prop_oneof![Just(TrainMode::TwoStage), Just(TrainMode::Incremental), Just(TrainMode::Standard)]) {
        let pda = Grammar::Anbn.pda();
        let d = sample_dataset(&pda, 8, 8, 1, 6, seed).unwrap();
        let setup = TrainSetup::new(
            OptimizerConfig { seed, lr_mode: LrMode::Fixed, ..OptimizerConfig::default() },
            CurriculumConfig { mode, ntr: 3, stage1_cap: 2, stage2_cap: 2, global_cap: 3 },
            NoiseConfig { enabled: noise, seed, ..NoiseConfig::default() },
        );
        let run = || {
            let mut m = init_params(ModelOrder::Third, 4, 2, seed).unwrap();
            let metrics = two_stage_incremental(&mut m, &d, &d.samples, &setup).unwrap();
            (m, metrics)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        prop_assert_eq!(a.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        prop_assert!(ma.total_epochs <= 3);
        prop_assert_eq!(ma.total_characters, mb.total_characters);
        let strip = |m: &nspda::protocols::RunMetrics| m.epochs.iter().map(|e| (e.epoch, e.characters, e.train_accuracy.to_bits(), e.mean_loss.to_bits())).collect::<Vec<_>>();
        prop_assert_eq!(strip(&ma), strip(&mb));
        let chars: Vec<u64> = ma.epochs.iter().map(|e| e.characters).collect();
        prop_assert!(chars.windows(2).all(|w| w[0] <= w[1]));
    }
}
