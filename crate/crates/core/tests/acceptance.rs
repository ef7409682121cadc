//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N [PASS|FAIL] ...` line before asserting.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transvec::data::{
    default_manipulation, gen_beads_domain, gen_grid_domain, manipulation_sequence, render,
    GridGeometry, Sample, SyntheticKind, SyntheticSpec,
};
use transvec::diffcore::{finite_diff_check, FdConfig, FdReport, Graph, Tensor, Var};
use transvec::eval::{
    discriminator_score, fid_score, frechet_distance, generator_manipulation_consistency,
    latent_vectors, pairwise_distance_correlation, ssim, DiscriminatorScoreConfig,
    FeatureExtractor, FeatureExtractorSpec, ManipulationReport,
};
use transvec::losses::{
    adversarial_d_loss, adversarial_g_loss, compose_losses, d_loss_term, g_adv_term, margin_loss,
    margin_term, transformation_vectors, travel_loss, travel_term, DistMetric, LossConfig,
    LossParts,
};
use transvec::networks::{
    build_discriminator, build_generator, build_siamese, layer_shape_plan, ArchitectureSpec,
    LayerKind, Mode, NetworkParams, Role,
};
use transvec::trainer::{
    load_checkpoint, resume, save_checkpoint, train, Direction, Directions, MemorySink, MetricsRow,
    NullSink, TrainState, TrainingConfig,
};

fn report(n: u32, pass: bool, detail: String) {
    // bypasses the harness capture so the line shows up in a plain `cargo test`
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stdout(), "criterion {n} [{verdict}] {detail}");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn images(samples: Vec<Sample>) -> Vec<Tensor<f32>> {
    samples.into_iter().map(|s| s.image).collect()
}

// ---------------------------------------------------------------- criterion 1

/// Builds a scalar loss, returning the parameter nodes of every trainable
/// forward pass of the network under test.
type LossBuilder<'a> =
    dyn Fn(&NetworkParams<f64>, &mut Graph<f64>, bool) -> (Var, Vec<BTreeMap<String, Var>>) + 'a;

/// Backpropagated gradient of a loss against central differences over the
/// parameters of one network, with every other network held fixed.
fn network_fd(net: &NetworkParams<f64>, build: &LossBuilder<'_>) -> FdReport {
    let mut g = Graph::new();
    let (loss, passes) = build(net, &mut g, true);
    let grads = g.backward(loss).unwrap();
    // a network applied twice accumulates the gradient of both passes
    let mut analytic = net.params.zeros_like();
    for vars in &passes {
        for (name, v) in vars {
            let total = analytic.get_mut(name).unwrap();
            for (a, b) in total.data_mut().iter_mut().zip(grads.wrt(*v).data()) {
                *a += b;
            }
        }
    }
    let mut probe = net.clone();
    finite_diff_check(
        |p| {
            probe.params = p.clone();
            let mut g = Graph::new();
            let (loss, _) = build(&probe, &mut g, false);
            g.value(loss).item()
        },
        &net.params,
        &analytic,
        FdConfig::default(),
    )
}

#[test]
fn criterion_1_network_gradients_match_finite_differences() {
    let started = std::time::Instant::now();
    let arch = ArchitectureSpec::new(16, 2).with_latent_dim(8);
    // larger init than 0.02 so every layer carries signal at f64 precision
    let scaled = |mut net: NetworkParams<f64>| {
        for (_, t) in net.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        }
        net
    };
    let gen = scaled(build_generator::<f64>(&arch, 1).unwrap());
    let disc = scaled(build_discriminator::<f64>(&arch, 2).unwrap());
    let siam = scaled(build_siamese::<f64>(&arch, 3).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = |rng: &mut ChaCha8Rng| {
        Tensor::new(
            vec![3, 3, 16, 16],
            (0..3 * 3 * 16 * 16)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    };
    let (x, y) = (batch(&mut rng), batch(&mut rng));
    let cosine = LossConfig::default();
    let with_l2 = LossConfig {
        dist_metric: DistMetric::CosinePlusL2,
        l2_weight: 1.0,
        ..cosine.clone()
    };
    // the margin must exceed some pair norms so the hinge is active
    let margin = LossConfig {
        margin: 50.0,
        ..cosine.clone()
    };

    let travel_wrt_g = |cfg: LossConfig| {
        let (x, siam) = (x.clone(), siam.clone());
        move |g_net: &NetworkParams<f64>, g: &mut Graph<f64>, train: bool| {
            let xv = g.constant(x.clone());
            let fake = g_net.forward(g, xv, Mode::Train, train).unwrap();
            let sr = siam.forward(g, xv, Mode::Train, false).unwrap();
            let sg = siam.forward(g, fake.output, Mode::Train, false).unwrap();
            (
                travel_term(g, sr.output, sg.output, &cfg).unwrap(),
                vec![fake.params],
            )
        }
    };
    let travel_wrt_s = |cfg: LossConfig| {
        let fake = gen.infer(&x).unwrap();
        let x = x.clone();
        move |s_net: &NetworkParams<f64>, g: &mut Graph<f64>, train: bool| {
            let xv = g.constant(x.clone());
            let fv = g.constant(fake.clone());
            let sr = s_net.forward(g, xv, Mode::Train, train).unwrap();
            let sg = s_net.forward(g, fv, Mode::Train, train).unwrap();
            (
                travel_term(g, sr.output, sg.output, &cfg).unwrap(),
                vec![sr.params, sg.params],
            )
        }
    };
    let margin_wrt_s = |s_net: &NetworkParams<f64>, g: &mut Graph<f64>, train: bool| {
        let xv = g.constant(x.clone());
        let s = s_net.forward(g, xv, Mode::Train, train).unwrap();
        (margin_term(g, s.output, &margin).unwrap(), vec![s.params])
    };
    let fake_x = gen.infer(&x).unwrap();
    let d_wrt_d = |d_net: &NetworkParams<f64>, g: &mut Graph<f64>, train: bool| {
        let yv = g.constant(y.clone());
        let fv = g.constant(fake_x.clone());
        let real = d_net.forward(g, yv, Mode::Train, train).unwrap();
        let fake = d_net.forward(g, fv, Mode::Train, train).unwrap();
        (
            d_loss_term(g, real.output, fake.output).unwrap(),
            vec![real.params, fake.params],
        )
    };
    let g_wrt_g = |g_net: &NetworkParams<f64>, g: &mut Graph<f64>, train: bool| {
        let xv = g.constant(x.clone());
        let fake = g_net.forward(g, xv, Mode::Train, train).unwrap();
        let judged = disc.forward(g, fake.output, Mode::Train, false).unwrap();
        (g_adv_term(g, judged.output), vec![fake.params])
    };

    let cases: Vec<(&str, &NetworkParams<f64>, Box<LossBuilder<'_>>)> = vec![
        ("travel/G", &gen, Box::new(travel_wrt_g(cosine.clone()))),
        ("travel+l2/G", &gen, Box::new(travel_wrt_g(with_l2.clone()))),
        ("travel/S", &siam, Box::new(travel_wrt_s(cosine.clone()))),
        (
            "travel+l2/S",
            &siam,
            Box::new(travel_wrt_s(with_l2.clone())),
        ),
        ("margin/S", &siam, Box::new(margin_wrt_s)),
        ("d_loss/D", &disc, Box::new(d_wrt_d)),
        ("g_loss/G", &gen, Box::new(g_wrt_g)),
    ];
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    let mut checked = 0;
    for (name, net, build) in &cases {
        let r = network_fd(net, build.as_ref());
        worst = worst.max(r.max_rel_err);
        checked += r.checked;
        details.push(format!("{name} {:.1e} ({} kinks)", r.max_rel_err, r.kinks));
        assert!(r.checked > 0, "{name}: nothing checked");
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        worst < 1e-4 && secs < 120.0,
        format!(
            "max relative error {worst:.2e} over {checked} coordinates in {secs:.1} s [{}]",
            details.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

fn latents(b: usize, l: usize, data: &[f64]) -> Tensor<f64> {
    Tensor::new(vec![b, l], data.to_vec()).unwrap()
}

#[test]
fn criterion_2_loss_examples_hold_exactly() {
    let cfg = LossConfig::default();
    let ln2 = std::f64::consts::LN_2;
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let single = transformation_vectors(&latents(1, 3, &[1.0, 2.0, 3.0])).unwrap();
    check("B=1 has no pairs", single.get(0, 0) == [0.0; 3]);
    let nu = transformation_vectors(&latents(2, 2, &[0.0, 0.0, 1.0, 0.0])).unwrap();
    check("nu[0][1] = (1,0)", nu.get(0, 1) == [1.0, 0.0]);
    check("nu[1][0] = (-1,0)", nu.get(1, 0) == [-1.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let random: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let field = transformation_vectors(&latents(4, 3, &random)).unwrap();
    let antisymmetric = (0..4).all(|i| {
        (0..4).all(|j| {
            field
                .get(i, j)
                .iter()
                .zip(field.get(j, i))
                .all(|(a, b)| *a == -*b)
        })
    });
    check("B=4 antisymmetry", antisymmetric);

    check(
        "identity pairing",
        travel_loss(&field, &field, &cfg).unwrap() == 0.0,
    );
    let ortho = transformation_vectors(&latents(2, 2, &[0.0, 0.0, 0.0, 1.0])).unwrap();
    check(
        "orthogonal pair",
        close(travel_loss(&nu, &ortho, &cfg).unwrap(), 1.0),
    );
    for c in [0.5, 2.0, 10.0] {
        let scaled = field.scaled(c);
        check(
            &format!("cosine scale invariance c={c}"),
            travel_loss(&field, &scaled, &cfg).unwrap().abs() < 1e-9,
        );
    }
    let l2 = LossConfig {
        dist_metric: DistMetric::CosinePlusL2,
        l2_weight: 0.5,
        ..cfg.clone()
    };
    check(
        "l2 term sees scale",
        travel_loss(&field, &field.scaled(2.0), &l2).unwrap() > 0.0,
    );

    let far = transformation_vectors(&latents(3, 1, &[0.0, 1.0, 2.5])).unwrap();
    check("margin satisfied", margin_loss(&far, &cfg).unwrap() == 0.0);
    let same = transformation_vectors(&latents(2, 2, &[0.3, 0.3, 0.3, 0.3])).unwrap();
    check(
        "margin identical",
        close(margin_loss(&same, &cfg).unwrap(), 1.0),
    );
    let near = transformation_vectors(&latents(2, 2, &[0.0, 0.0, 0.4, 0.0])).unwrap();
    check("margin 0.4", close(margin_loss(&near, &cfg).unwrap(), 0.6));

    let half = Tensor::<f64>::full(&[4, 1], 0.5);
    check(
        "d 0.5/0.5",
        close(adversarial_d_loss(&half, &half).unwrap(), 2.0 * ln2),
    );
    let one = Tensor::<f64>::full(&[4, 1], 1.0);
    let zero = Tensor::<f64>::zeros(&[4, 1]);
    check(
        "d saturated",
        adversarial_d_loss(&one, &zero).unwrap() < 1e-6,
    );
    let (real, fake) = (Tensor::full(&[2, 1], 0.9), Tensor::full(&[2, 1], 0.1));
    check(
        "d 0.9/0.1",
        close(
            adversarial_d_loss(&real, &fake).unwrap(),
            -2.0 * 0.9f64.ln(),
        ),
    );
    check("g 0.5", close(adversarial_g_loss(&half), ln2));
    check("g saturated", adversarial_g_loss(&one) < 1e-6);
    check(
        "g 0.25",
        close(
            adversarial_g_loss(&Tensor::<f64>::full(&[2, 1], 0.25)),
            4f64.ln(),
        ),
    );

    let parts = LossParts {
        l_adv_g: 0.7,
        l_travel: 0.3,
        l_sc: 0.2,
        l_d: 1.0,
    };
    let b = compose_losses(parts, &cfg);
    check("l_g_total", close(b.l_g_total, 1.0));
    check("l_s_total", close(b.l_s_total, 0.5));
    let pure = compose_losses(
        parts,
        &LossConfig {
            travel_weight: 0.0,
            ..cfg.clone()
        },
    );
    check("travel_weight 0", pure.l_g_total == 0.7);

    report(
        2,
        failures.is_empty(),
        if failures.is_empty() {
            "all loss examples hold at 1e-9".into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    );
}

// ---------------------------------------------------------------- criterion 3

fn conv_count(d: usize, role: Role) -> (usize, Vec<usize>, Vec<usize>) {
    let plan = layer_shape_plan(&ArchitectureSpec::new(d, 64), role).unwrap();
    let convs: Vec<_> = plan
        .iter()
        .filter(|l| l.spec.kind == LayerKind::ConvS2)
        .collect();
    let last_conv = convs.last().unwrap().output_shape.clone();
    let dense = plan.last().unwrap();
    assert_eq!(dense.spec.kind, LayerKind::Dense);
    (convs.len(), last_conv, dense.input_shape.clone())
}

#[test]
fn criterion_3_architecture_follows_the_schedule() {
    let (small, small_out, small_dense) = conv_count(32, Role::Discriminator);
    let (large, large_out, large_dense) = conv_count(128, Role::Discriminator);
    let mut ok = small == 3 && large == 5;
    ok &= small_out[1..] == [4, 4] && large_out[1..] == [4, 4];
    ok &= small_dense == [small_out.iter().product::<usize>()];
    ok &= large_dense == [large_out.iter().product::<usize>()];

    // every built tensor has exactly the planned shape, and nothing else exists
    let mut tensors = 0;
    for d in [16, 32, 64, 128] {
        for n in [2, 8] {
            let arch = ArchitectureSpec::new(d, n).with_latent_dim(32);
            for role in [Role::Generator, Role::Discriminator, Role::Siamese] {
                let net: NetworkParams<f32> = NetworkParams::build(&arch, role, 5).unwrap();
                let planned: BTreeMap<String, Vec<usize>> = layer_shape_plan(&arch, role)
                    .unwrap()
                    .into_iter()
                    .flat_map(|l| l.params)
                    .collect();
                let built: BTreeMap<String, Vec<usize>> = net
                    .params
                    .iter()
                    .map(|(k, t)| (k.to_string(), t.shape().to_vec()))
                    .collect();
                ok &= planned == built;
                tensors += built.len();
            }
        }
    }
    report(
        3,
        ok,
        format!(
            "d=32 discriminator has {small} convs ending {small_out:?}, d=128 has {large} ending {large_out:?}; {tensors} built tensors match the plan"
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

/// Mean SSIM by visiting every 11x11 window and summing its weighted pixels.
fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let g: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let gsum: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut total, mut count) = (0.0, 0);
    for ch in 0..c {
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g[dy] * g[dx] / (gsum * gsum);
                        let i = (ch * h + y0 + dy) * w + x0 + dx;
                        let (p, q) = (a.data()[i], b.data()[i]);
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn pair_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            out.push(d2.sqrt());
        }
    }
    out
}

#[test]
fn criterion_4_metrics_match_independent_oracles() {
    let one_d = frechet_distance(
        &DVector::from_vec(vec![0.0]),
        &DMatrix::from_vec(1, 1, vec![1.0]),
        &DVector::from_vec(vec![3.0]),
        &DMatrix::from_vec(1, 1, vec![1.0]),
    )
    .unwrap();
    let two_d = frechet_distance(
        &DVector::from_vec(vec![0.0, 0.0]),
        &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
        &DVector::from_vec(vec![1.0, 1.0]),
        &DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
    )
    .unwrap();
    let frechet_ok = (one_d - 9.0).abs() < 1e-8 && (two_d - 4.0).abs() < 1e-8;

    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let image = |rng: &mut ChaCha8Rng| {
        Tensor::new(
            vec![3, 16, 16],
            (0..3 * 16 * 16).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    };
    let first = image(&mut rng);
    let self_ssim = ssim(&first, &first).unwrap();
    let mut ssim_err: f64 = 0.0;
    for _ in 0..20 {
        let (a, b) = (image(&mut rng), image(&mut rng));
        ssim_err = ssim_err.max((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs());
    }
    let ssim_ok = (self_ssim - 1.0).abs() < 1e-12 && ssim_err < 1e-8;

    let a: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..6).map(|_| rng.random()).collect())
        .collect();
    let b: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..4).map(|_| rng.random()).collect())
        .collect();
    let r = pearson_oracle(&pair_distances(&a), &pair_distances(&b));
    let corr_err = (pairwise_distance_correlation(&a, &b).unwrap() - r * r).abs();
    let corr_ok = corr_err < 1e-10;

    report(
        4,
        frechet_ok && ssim_ok && corr_ok,
        format!(
            "frechet 1-D {one_d:.10} 2-D {two_d:.10}; ssim(x,x) {self_ssim}, max oracle gap {ssim_err:.1e} over 20 pairs; distance r² gap {corr_err:.1e}"
        ),
    );
}

// ---------------------------------------------------------------- criterion 7

fn tiny_domains(count: usize) -> (Vec<Tensor<f32>>, Vec<Tensor<f32>>) {
    let spec = SyntheticSpec {
        image_size: 16,
        ..SyntheticSpec::new(SyntheticKind::Beads, count, 70)
    };
    let x = images(gen_beads_domain(&spec).unwrap());
    let y = images(gen_grid_domain(&SyntheticSpec { seed: 71, ..spec }).unwrap());
    (x, y)
}

fn losses(rows: &[MetricsRow]) -> Vec<[f64; 4]> {
    rows.iter()
        .map(|r| [r.l_d, r.l_adv_g, r.l_travel, r.l_sc])
        .collect()
}

#[test]
fn criterion_7_runs_are_deterministic_and_resumable() {
    let (x, y) = tiny_domains(32);
    let config = |steps| TrainingConfig {
        batch_size: 4,
        log_every: 0,
        ..TrainingConfig::new(ArchitectureSpec::new(16, 2).with_latent_dim(16), steps, 21)
    };
    let mut first = MemorySink::default();
    let mut second = MemorySink::default();
    train(config(50), &x, &y, &mut first).unwrap();
    train(config(50), &x, &y, &mut second).unwrap();
    let same_trajectory = first.rows.len() == 50 && losses(&first.rows) == losses(&second.rows);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.trvl");
    let full = train(config(40), &x, &y, &mut NullSink).unwrap();
    let half = train(config(20), &x, &y, &mut NullSink).unwrap();
    save_checkpoint(&half, &path).unwrap();
    let mut restored = load_checkpoint(&path).unwrap();
    restored.check_compatible(&config(40)).unwrap();
    restored.config = config(40);
    let resumed = resume(restored, &x, &y, &mut NullSink).unwrap();
    let probe = Tensor::stack(&x[..6]).unwrap();
    let mut forwards_equal = resumed == full;
    for dir in [Direction::Xy, Direction::Yx] {
        let a = full.generator(dir).unwrap().infer(&probe).unwrap();
        let b = resumed.generator(dir).unwrap().infer(&probe).unwrap();
        forwards_equal &= a.data() == b.data();
    }
    report(
        7,
        same_trajectory && forwards_equal,
        format!(
            "50-step trajectories identical: {same_trajectory}; 20+20 resumed run equals 40-step run bit for bit: {forwards_equal}"
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

fn uniform_noise(count: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let data = (0..3 * 32 * 32)
                .map(|_| rng.random_range(-1.0f32..=1.0))
                .collect();
            Tensor::new(vec![3, 32, 32], data).unwrap()
        })
        .collect()
}

#[test]
fn criterion_8_real_data_is_indistinguishable_from_itself() {
    let grid = |count, seed| {
        images(gen_grid_domain(&SyntheticSpec::new(SyntheticKind::Grid, count, seed)).unwrap())
    };
    let cfg = DiscriminatorScoreConfig::new(ArchitectureSpec::new(32, 16), 3);
    let score = discriminator_score(&grid(256, 81), &grid(256, 82), &cfg).unwrap();

    let fx = FeatureExtractor::seeded(FeatureExtractorSpec::random(32, 7)).unwrap();
    let pool = grid(512, 83);
    let halves = fid_score(&pool[..256], &pool[256..], &fx).unwrap().value;
    let noise = fid_score(&pool[..256], &uniform_noise(256, 84), &fx)
        .unwrap()
        .value;
    let score_ok = (0.35..=0.65).contains(&score);
    let fid_ok = halves * 10.0 <= noise;
    report(
        8,
        score_ok && fid_ok,
        format!(
            "held-out real discriminator score {score:.3}; FID split halves {halves:.3} vs noise {noise:.1} ({:.0}x)",
            noise / halves
        ),
    );
}

// ---------------------------------------------------------- criteria 5 and 6

const SEEDS: [u64; 3] = [0, 1, 2];

struct SeedOutcome {
    seed: u64,
    r2_latent: f64,
    disc: f64,
    disc_untrained: f64,
    fid: f64,
    fid_untrained: f64,
    manipulation: ManipulationReport,
}

impl SeedOutcome {
    fn passes(&self) -> bool {
        self.r2_latent >= 0.5
            && self.disc >= 0.02
            && self.disc >= 2.0 * self.disc_untrained
            && self.fid <= 0.5 * self.fid_untrained
    }

    fn summary(&self) -> String {
        format!(
            "seed {} {}: r² {:.3}, disc {:.3} (untrained {:.3}), fid {:.2} (untrained {:.2})",
            self.seed,
            if self.passes() { "pass" } else { "fail" },
            self.r2_latent,
            self.disc,
            self.disc_untrained,
            self.fid,
            self.fid_untrained
        )
    }
}

struct Experiment {
    outcomes: Vec<SeedOutcome>,
    minutes: f64,
}

fn run_seed(seed: u64) -> SeedOutcome {
    let beads = |count, seed| SyntheticSpec::new(SyntheticKind::Beads, count, seed);
    let grid = |count, seed| SyntheticSpec::new(SyntheticKind::Grid, count, seed);
    let x = images(gen_beads_domain(&beads(512, 100 + seed)).unwrap());
    let y = images(gen_grid_domain(&grid(512, 200 + seed)).unwrap());
    let eval_x = images(gen_beads_domain(&beads(256, 300 + seed)).unwrap());
    let eval_y = images(gen_grid_domain(&grid(256, 400 + seed)).unwrap());

    let mut config = TrainingConfig::new(ArchitectureSpec::new(32, 16), 3000, seed);
    config.directions = Directions::XyOnly;
    config.log_every = 0;
    config.loss.dist_metric = DistMetric::CosinePlusL2;
    config.loss.l2_weight = 1.0;
    let untrained = TrainState::init(config.clone()).unwrap();
    let trained = train(config, &x, &y, &mut NullSink).unwrap();

    let fx = FeatureExtractor::seeded(FeatureExtractorSpec::random(32, 7)).unwrap();
    let disc_cfg = DiscriminatorScoreConfig::new(ArchitectureSpec::new(32, 16), 11);
    let scores = |state: &TrainState| {
        let generated = state.xy.generator.net.infer_many(&eval_x, 64).unwrap();
        let fid = fid_score(&eval_y, &generated, &fx).unwrap().value;
        let disc = discriminator_score(&eval_y, &generated, &disc_cfg).unwrap();
        (generated, fid, disc)
    };
    let (_, fid_untrained, disc_untrained) = scores(&untrained);
    let (generated, fid, disc) = scores(&trained);
    let siamese = trained.siamese_for(Direction::Xy);
    let r2_latent = pairwise_distance_correlation(
        &latent_vectors(siamese, &eval_x[..128]).unwrap(),
        &latent_vectors(siamese, &generated[..128]).unwrap(),
    )
    .unwrap_or(0.0);

    let geometry = GridGeometry::new(32, 4).unwrap();
    let (base, path) = default_manipulation(&geometry).unwrap();
    let frames =
        images(manipulation_sequence(SyntheticKind::Beads, &geometry, &base, &path).unwrap());
    let manipulation = generator_manipulation_consistency(
        &trained.xy.generator.net,
        &render(SyntheticKind::Beads, &geometry, &base),
        &frames,
        &path,
        &geometry,
    )
    .unwrap();
    SeedOutcome {
        seed,
        r2_latent,
        disc,
        disc_untrained,
        fid,
        fid_untrained,
        manipulation,
    }
}

/// The three-seed run, shared by criteria 5 and 6 so it happens once.
fn experiment() -> &'static Experiment {
    static RUN: OnceLock<Experiment> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = std::time::Instant::now();
        let outcomes = SEEDS.iter().map(|&s| run_seed(s)).collect();
        Experiment {
            outcomes,
            minutes: start.elapsed().as_secs_f64() / 60.0,
        }
    })
}

#[test]
fn criterion_5_synthetic_translation_run() {
    let run = experiment();
    let passed = run.outcomes.iter().filter(|o| o.passes()).count();
    let seeds: Vec<String> = run.outcomes.iter().map(SeedOutcome::summary).collect();
    report(
        5,
        passed >= 2,
        format!(
            "{passed}/3 seeds pass in {:.1} min [{}]",
            run.minutes,
            seeds.join("; ")
        ),
    );
}

#[test]
fn criterion_6_manipulation_follows_the_moved_square() {
    let run = experiment();
    // best seed: the passing seed the held-out discriminator finds hardest to
    // tell from real data
    let best = run
        .outcomes
        .iter()
        .max_by(|a, b| {
            (a.passes(), a.disc)
                .partial_cmp(&(b.passes(), b.disc))
                .unwrap()
        })
        .unwrap();
    let m = &best.manipulation;
    let hits = (m.accuracy * m.expected.len() as f64).round();
    let rho = m.rank_correlation.unwrap_or(f64::NAN);
    let others: Vec<String> = run
        .outcomes
        .iter()
        .map(|o| format!("seed {} {:.3}", o.seed, o.manipulation.accuracy))
        .collect();
    report(
        6,
        m.accuracy >= 6.0 / 9.0 - 1e-12 && rho > 0.0,
        format!(
            "best seed {}: {hits}/{} cells, rank correlation {rho:.3} [accuracy by seed: {}]",
            best.seed,
            m.expected.len(),
            others.join(", ")
        ),
    );
}
