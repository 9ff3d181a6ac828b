//! Exit criteria. Each test prints one `[PASS]`/`[FAIL]` line.
//! Run with `cargo test -p udakit --test acceptance -- --nocapture --test-threads 1`.

mod common;

use std::time::Instant;

use std::collections::BTreeMap;
use std::path::Path;

use common::*;
use udakit::adapt::{grl, mcc_loss, mcc_value, JointEmbedder, MccConfig, UdaMethod};
use udakit::evalkit::{confusion_normalized, emit_table, TableFormat, TableRow};
use udakit::tensor::{softmax_rows, Array, Graph};
use udakit::trainer::{
    init_model, lr_at, run_config, RunManifest, RunOptions, RunStatus, TrainConfig, TrainOutcome, WarmupCosine,
    METRICS_FILE,
};

fn verdict(name: &str, ok: bool, detail: String) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

#[test]
fn mcc_analytic_values() {
    let start = Instant::now();
    let cfg = MccConfig::default();
    let mut worst: f64 = 0.0;
    let mut ok = true;

    // exact one-hot rows, arbitrary label patterns (including uncovered classes)
    for (b, c) in [(4usize, 12usize), (3, 5), (6, 2)] {
        let mut z = Array::<f64>::zeros(&[b, c]);
        for i in 0..b {
            z.row_mut(i)[(i * 7) % c] = 1000.0;
        }
        let v = mcc_value(&z, &cfg).unwrap();
        ok &= v < 1e-6;
        worst = worst.max(v);
    }
    // margin-20 logits with every class predicted
    for c in [2usize, 5, 12] {
        let b = c + 2;
        let mut z = Array::<f64>::zeros(&[b, c]);
        for i in 0..b {
            z.row_mut(i)[i % c] = 20.0;
        }
        let v = mcc_value(&z, &cfg).unwrap();
        ok &= v < 1e-6;
        worst = worst.max(v);
    }
    // uniform logits
    let mut uni_err: f64 = 0.0;
    for c in [2usize, 5, 12] {
        for b in [2usize, 7, 16] {
            let z = Array::<f64>::zeros(&[b, c]);
            let want = (c as f64 - 1.0) / c as f64;
            let v = mcc_value(&z, &cfg).unwrap();
            let o = mcc_oracle(&rows(&z), 1.0);
            uni_err = uni_err.max((v - want).abs()).max((o - want).abs());
        }
    }
    ok &= uni_err <= 1e-6;
    // random instances against the oracle
    let mut r = rng(2024);
    let mut rand_err: f64 = 0.0;
    for _ in 0..50 {
        use rand::Rng;
        let b = r.random_range(2..=16);
        let c = r.random_range(2..=12);
        let z = random_array(&[b, c], 4.0, &mut r);
        let v = mcc_value(&z, &cfg).unwrap();
        rand_err = rand_err.max((v - mcc_oracle(&rows(&z), 1.0)).abs());
    }
    let z = random_array(&[8, 5], 3.0, &mut rng(0));
    rand_err = rand_err.max((mcc_value(&z, &cfg).unwrap() - mcc_oracle(&rows(&z), 1.0)).abs());
    ok &= rand_err <= 1e-6;
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 5.0;
    verdict(
        "mcc analytic values",
        ok,
        format!("one-hot max {worst:.2e}, uniform err {uni_err:.2e}, oracle err {rand_err:.2e}, {secs:.2}s"),
    );
}

#[test]
fn gradient_checks() {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst_mcc: f64 = 0.0;
    for seed in 0..20u64 {
        use rand::Rng;
        let mut r = rng(100 + seed);
        let b = r.random_range(2..=6);
        let c = r.random_range(2..=5);
        let z = random_array(&[b, c], 2.0, &mut r);
        let cfg = MccConfig::default();
        let analytic = {
            let mut g = Graph::new();
            let zv = g.input(z.clone());
            let l = mcc_loss(&mut g, zv, &cfg).unwrap();
            g.backward(l).get(zv).unwrap().clone()
        };
        let fd = central_differences(&z, h, |zz| mcc_value(zz, &cfg).unwrap());
        worst_mcc = worst_mcc.max(max_rel_err(analytic.data(), &fd));
    }
    let mut worst_cdan: f64 = 0.0;
    for seed in 0..20u64 {
        let case = CdanCase::random(seed);
        let lambda = 0.75;
        let ec = seed % 2 == 1;
        let (gfs, gft, gd) = case.grads(lambda, ec);
        // reversal: the recorded gradient is -lambda times the true one
        let fd_s = central_differences(&case.fs, h, |x| case.loss(x, &case.ft, &case.disc, lambda, ec));
        let fd_t = central_differences(&case.ft, h, |x| case.loss(&case.fs, x, &case.disc, lambda, ec));
        let rev = |v: &[f64]| v.iter().map(|g| -lambda * g).collect::<Vec<_>>();
        worst_cdan = worst_cdan.max(max_rel_err(gfs.data(), &rev(&fd_s)));
        worst_cdan = worst_cdan.max(max_rel_err(gft.data(), &rev(&fd_t)));
        for (k, (id, p)) in case.disc.params.iter().enumerate() {
            let fd = central_differences(&p.value, h, |x| {
                let mut d = case.disc.clone();
                d.params.get_mut(id).value = x.clone();
                case.loss(&case.fs, &case.ft, &d, lambda, ec)
            });
            worst_cdan = worst_cdan.max(max_rel_err(gd[k].data(), &fd));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "gradient checks",
        worst_mcc <= 1e-4 && worst_cdan <= 1e-4 && secs < 30.0,
        format!("mcc max rel err {worst_mcc:.2e}, cdan max rel err {worst_cdan:.2e}, {secs:.2}s"),
    );
}

#[test]
fn cdan_analytics() {
    // chance discriminator: zero last layer
    let case = CdanCase::random(77);
    let mut disc = case.disc.clone();
    for name in ["disc.l2.weight", "disc.l2.bias"] {
        let id = disc.params.id(name).unwrap();
        disc.params.get_mut(id).value.data_mut().fill(0.0);
    }
    let chance = case.loss(&case.fs, &case.ft, &disc, 1.0, false);
    let chance_ec = case.loss(&case.fs, &case.ft, &disc, 1.0, true);
    let chance_err = (chance - std::f64::consts::LN_2)
        .abs()
        .max((chance_ec - std::f64::consts::LN_2).abs());

    // reversal layer forward identity and backward scaling
    let x = random_array(&[3, 4], 5.0, &mut rng(1));
    let up = random_array(&[3, 4], 1.0, &mut rng(2));
    let mut bitwise = true;
    let mut back_err: f64 = 0.0;
    for &lambda in &[0.0, 0.25, 1.0, 3.0] {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = grl(&mut g, xv, lambda);
        bitwise &= g
            .value(y)
            .data()
            .iter()
            .zip(x.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        // loss = <up, y> so the upstream gradient is `up`
        let w = g.constant(up.clone().reshape(&[1, 12]));
        let flat = g.value(y).clone().reshape(&[1, 12]);
        let yf = g.custom(&[y], flat, Box::new(Flatten));
        let l = g.linear(yf, w, None);
        let gr = g.backward(l);
        for (gv, u) in gr.get(xv).unwrap().data().iter().zip(up.data()) {
            back_err = back_err.max((gv - (-lambda * u)).abs());
        }
    }

    // exact embedding index rule on every basis pair
    let mut index_ok = true;
    for df in 1..=4 {
        for c in 2..=4 {
            let emb = JointEmbedder::<f64>::new(df, c, 16, 0);
            for k in 0..df {
                for j in 0..c {
                    let mut f = vec![0.0; df];
                    f[k] = 1.0;
                    let mut p = vec![0.0; c];
                    p[j] = 1.0;
                    let mut g = Graph::inference();
                    let fv = g.constant(Array::from_vec(&[1, df], f));
                    let pv = g.constant(Array::from_vec(&[1, c], p));
                    let jv = emb.embed(&mut g, fv, pv).unwrap();
                    let out = g.value(jv).data();
                    index_ok &= out
                        .iter()
                        .enumerate()
                        .all(|(i, &v)| v == if i == k * c + j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    // randomized embedding: E<J, J'> = <f, f'><p, p'>
    let mut r = rng(5);
    let f1 = random_array(&[1, 6], 1.0, &mut r);
    let f2 = f1.map(|v| v + 0.3);
    let p1 = softmax_rows(&random_array(&[1, 4], 1.0, &mut r));
    let p2 = softmax_rows(&random_array(&[1, 4], 1.0, &mut r));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let want = dot(f1.data(), f2.data()) * dot(p1.data(), p2.data());
    let draws = 10_000;
    let mut acc = 0.0;
    for d in 0..draws {
        let emb = JointEmbedder::<f64>::randomized(6, 4, 1024, 10_000 + d);
        let mut g = Graph::inference();
        let fv = g.constant(Array::stack(&[&f1.clone().reshape(&[6]), &f2.clone().reshape(&[6])]));
        let pv = g.constant(Array::stack(&[&p1.clone().reshape(&[4]), &p2.clone().reshape(&[4])]));
        let jv = emb.embed(&mut g, fv, pv).unwrap();
        let j = g.value(jv);
        acc += dot(j.row(0), j.row(1));
    }
    let mc = acc / draws as f64;
    let mc_rel = (mc - want).abs() / want.abs();

    verdict(
        "cdan analytics",
        chance_err <= 1e-6 && bitwise && back_err <= 1e-12 && index_ok && mc_rel <= 0.05,
        format!(
            "chance |loss-ln2| {chance_err:.2e}, grl bitwise {bitwise}, grl backward err {back_err:.2e}, index rule {index_ok}, monte-carlo rel err {mc_rel:.4}"
        ),
    );
}

struct Flatten;

impl udakit::tensor::Function<f64> for Flatten {
    fn backward(
        &self,
        inputs: &[&Array<f64>],
        _output: &Array<f64>,
        grad: &Array<f64>,
        _needs: &[bool],
    ) -> Vec<Option<Array<f64>>> {
        vec![Some(grad.clone().reshape(inputs[0].shape()))]
    }
}

#[test]
fn scheduler() {
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for &(lr_max, warmup, total) in &[(1e-3, 20u64, 200u64), (0.5, 1, 10), (2e-5, 160, 1600), (1.0, 0, 7)] {
        let s = WarmupCosine {
            lr_max,
            warmup_steps: warmup,
            total_steps: total,
        };
        let mid = warmup + (total - warmup) / 2;
        let mid_want =
            lr_max * 0.5 * (1.0 + (std::f64::consts::PI * (mid - warmup) as f64 / (total - warmup) as f64).cos());
        let start_want = if warmup == 0 { lr_max } else { 0.0 };
        for (got, want) in [
            (lr_at(0, &s), start_want),
            (lr_at(warmup, &s), lr_max),
            (lr_at(mid, &s), mid_want),
            (lr_at(total, &s), 0.0),
        ] {
            worst = worst.max((got - want).abs());
        }
        if (total - warmup) % 2 == 0 {
            worst = worst.max((lr_at(mid, &s) - lr_max / 2.0).abs());
        }
        for step in warmup..total {
            monotone &= lr_at(step + 1, &s) <= lr_at(step, &s);
        }
    }
    verdict(
        "scheduler",
        worst <= 1e-9 && monotone,
        format!("max endpoint error {worst:.2e}, non-increasing after warmup {monotone}"),
    );
}

const SMALL_DATA: &str = r#"
[data]
kind = "synthetic"
classes = 4
per_class = 8
val_per_class = 2
image_size = 32
"#;

fn small_config(scheme: &str, extra: &str, lr: f64) -> TrainConfig {
    let text = format!(
        "name = \"{scheme}\"\nscheme = \"{scheme}\"\nepochs = 2\nbatch_size = 8\neval_batch_size = 16\n{extra}\n[model]\nresolution = 32\n[optim]\nlr = {lr}\n{SMALL_DATA}"
    );
    TrainConfig::from_toml_str(&text).unwrap()
}

fn small_uda(method: UdaMethod, extra: &str) -> TrainConfig {
    let text = format!(
        "name = \"uda\"\nscheme = \"uda\"\nepochs = 2\nbatch_size = 8\neval_batch_size = 16\n{extra}\n[model]\nresolution = 32\n[optim]\nlr = 1e-3\n[uda]\nmethod = \"{}\"\nhidden = 64\nrandom_dim = 64\n{SMALL_DATA}",
        method.as_str()
    );
    TrainConfig::from_toml_str(&text).unwrap()
}

fn run_in(cfg: &TrainConfig, dir: &Path) -> TrainOutcome {
    run_config(cfg, &RunOptions::new(dir)).unwrap()
}

#[test]
fn scheme_integrity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config("ch", "", 0.1);
    let before = init_model(&cfg, 4).unwrap();
    let out = run_in(&cfg, &tmp.path().join("ch"));
    let mut frozen = 0;
    let mut backbone_equal = true;
    let mut head_moved = false;
    for ((_, a), (_, b)) in before.params.iter().zip(out.model.params.iter()) {
        assert_eq!(a.name, b.name);
        let same = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        if a.name.starts_with("features.") {
            frozen += 1;
            backbone_equal &= same;
        } else {
            head_moved |= !same;
        }
    }
    let mcc = run_in(&small_uda(UdaMethod::Mcc, ""), &tmp.path().join("mcc"));
    let digest = mcc.manifest.discriminator_digest.clone().unwrap();
    let cdan = run_in(&small_uda(UdaMethod::Cdan, ""), &tmp.path().join("cdan"));
    let cdan_digest = cdan.manifest.discriminator_digest.clone().unwrap();
    verdict(
        "scheme integrity",
        frozen > 0
            && backbone_equal
            && head_moved
            && digest.start == digest.end
            && cdan_digest.start != cdan_digest.end,
        format!(
            "CH: {frozen} backbone tensors bitwise unchanged {backbone_equal}, head updated {head_moved}; \
             mcc discriminator unchanged {}; cdan discriminator trained {}",
            digest.start == digest.end,
            cdan_digest.start != cdan_digest.end
        ),
    );
}

#[test]
fn determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_uda(UdaMethod::CdanMcc, "augmentation = \"augmix\"");
    let a = run_in(&cfg, &tmp.path().join("a"));
    let b = run_in(&cfg, &tmp.path().join("b"));
    let threaded = run_config(
        &cfg,
        &RunOptions {
            out_dir: tmp.path().join("c"),
            parallel: true,
        },
    )
    .unwrap();
    let read = |o: &TrainOutcome| std::fs::read(o.run_dir.join(METRICS_FILE)).unwrap();
    let (ma, mb, mc) = (read(&a), read(&b), read(&threaded));
    let ckpt = |o: &TrainOutcome| std::fs::read(o.run_dir.join("checkpoints/epoch_2.safetensors")).unwrap();
    verdict(
        "determinism",
        !ma.is_empty() && ma == mb && ma == mc && ckpt(&a) == ckpt(&b),
        format!(
            "metrics.csv byte-equal across repeat {}, across thread counts {}, final checkpoint equal {} ({} bytes)",
            ma == mb,
            ma == mc,
            ckpt(&a) == ckpt(&b),
            ma.len()
        ),
    );
}

#[test]
fn leakage_guard() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reads = Vec::new();
    for method in UdaMethod::ALL {
        let out = run_in(&small_uda(method, ""), &tmp.path().join(method.as_str()));
        assert_eq!(out.manifest.status, RunStatus::Completed);
        reads.push(out.manifest.target_label_reads_in_optimization);
    }
    verdict(
        "leakage guard",
        reads.iter().all(|r| *r == Some(0)),
        format!("target label reads inside optimization per method (cdan, mcc, cdan_mcc): {reads:?}"),
    );
}

#[test]
fn reporting() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "name = \"report\"\nscheme = \"ch\"\nepochs = 1\nbatch_size = 8\n[model]\nresolution = 32\n[optim]\nlr = 0.1\n[data]\nkind = \"synthetic\"\nclasses = 12\nper_class = 4\nval_per_class = 1\nimage_size = 32\n";
    let cfg = TrainConfig::from_toml_str(text).unwrap();
    let mut cfg2 = cfg.clone();
    cfg2.seed = 7;
    let r1 = run_in(&cfg, &tmp.path().join("a")).manifest;
    let r2 = run_in(&cfg2, &tmp.path().join("b")).manifest;
    let reports = [&r1.best_reports["target"], &r2.best_reports["target"]];
    let rows: Vec<TableRow<'_>> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| TableRow {
            label: format!("run{i}"),
            report: Some(r),
        })
        .collect();
    let csv = emit_table(&rows, TableFormat::Csv).unwrap();
    let md = emit_table(&rows, TableFormat::Markdown).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let shape_ok = lines.len() == 3 && header.len() == 1 + 12 + 2 && header[13] == "macro" && header[14] == "micro";
    let two_decimals = lines[1..].iter().all(|l| {
        l.split(',')
            .skip(1)
            .all(|v| v.split_once('.').is_some_and(|(_, frac)| frac.len() == 2))
    });
    let md_rows = md.lines().count() == 4;
    let mut worst: f64 = 0.0;
    for r in reports {
        let n = confusion_normalized(r);
        for (i, row) in n.matrix.iter().enumerate() {
            if !n.empty_rows.contains(&i) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    verdict(
        "reporting",
        shape_ok && two_decimals && md_rows && worst <= 1e-9,
        format!(
            "{} columns (method + 12 classes + macro + micro) {shape_ok}, 2-decimal values {two_decimals}, \
             markdown rows {md_rows}, max |row sum - 1| {worst:.1e}",
            header.len()
        ),
    );
}

/// Final-epoch target macro accuracy of the five benchmark runs for one seed.
fn benchmark_seed(seed: u64, root: &Path) -> BTreeMap<&'static str, f64> {
    let common = format!("seed = {seed}\nepochs = 20\nbatch_size = 16\nkeep_checkpoints = \"best\"\n");
    let data = "[data]\nkind = \"synthetic\"\n";
    let parse = |t: String| TrainConfig::from_toml_str(&t).unwrap();
    let last = |m: &RunManifest| {
        assert_eq!(m.status, RunStatus::Completed, "{}", m.name);
        m.epochs.last().unwrap().metrics["target"]["macro"]
    };
    let ch = run_in(
        &parse(format!(
            "name = \"ch\"\nscheme = \"ch\"\n{common}[optim]\nlr = 0.1\n{data}"
        )),
        &root.join("ch"),
    );
    let best = ch
        .run_dir
        .join(ch.manifest.best.as_ref().unwrap().checkpoint.as_ref().unwrap());
    let init = format!("init_checkpoint = \"{}\"\n", best.display());
    let mut out = BTreeMap::new();
    let ft = run_in(
        &parse(format!(
            "name = \"ch_ft\"\nscheme = \"ch_ft\"\n{common}{init}[optim]\nlr = 1e-3\n{data}"
        )),
        &root.join("ch_ft"),
    );
    out.insert("ch_ft", last(&ft.manifest));
    for m in UdaMethod::ALL {
        let cfg = parse(format!(
            "name = \"{0}\"\nscheme = \"uda\"\n{common}{init}[optim]\nlr = 1e-3\n[uda]\nmethod = \"{0}\"\n{data}",
            m.as_str()
        ));
        out.insert(m.as_str(), last(&run_in(&cfg, &root.join(m.as_str())).manifest));
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn end_to_end_desk_scale() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let seeds = [42u64, 1, 2];
    let per_seed: Vec<_> = seeds
        .iter()
        .map(|&s| benchmark_seed(s, &tmp.path().join(s.to_string())))
        .collect();
    let reference = include_str!("data/e2e_reference.csv");
    for (seed, scores) in seeds.iter().zip(&per_seed) {
        for (method, v) in scores {
            let want = reference
                .lines()
                .skip(1)
                .find(|l| l.starts_with(&format!("{seed},{method},")))
                .and_then(|l| l.rsplit(',').next())
                .and_then(|x| x.parse::<f64>().ok());
            println!("  seed {seed:>2} {method:<9} {v:6.2} (reference {want:?})");
        }
    }
    let med = |m: &str| median(per_seed.iter().map(|s| s[m]).collect());
    let (ft, cdan, mcc, both) = (med("ch_ft"), med("cdan"), med("mcc"), med("cdan_mcc"));
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "end-to-end desk scale",
        both - ft >= 10.0 && both >= cdan.max(mcc) - 2.0 && secs < 900.0,
        format!(
            "median target macro: ch_ft {ft:.2}, cdan {cdan:.2}, mcc {mcc:.2}, cdan_mcc {both:.2}; \
             gain over ch_ft {:.2} pp (need >= 10), margin over best single {:.2} pp (need >= -2); {secs:.0}s",
            both - ft,
            both - cdan.max(mcc)
        ),
    );
}
