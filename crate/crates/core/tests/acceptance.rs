//! One PASS/FAIL line per acceptance criterion, then the usual assertion.
//!
//! Status lines go straight to the process stdout so they show up in the
//! test log even when the harness captures `println!`.

mod support;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slant_core::corpus::{Alignment, RecordKind, SummaryRecord, Workspace};
use slant_core::lexicon::{bias_table, BiasTable, Ideology, TokenDistribution, Tokenizer};
use slant_core::monoculture::{consistency_index, overall_from_off_diagonal, transfer_matrix, ModelCorpus};
use slant_core::report::{reencode, run_audit, AuditRunConfig, FeaturizerConfig, PALETTE};
use slant_core::separability::{
    diff, loss_and_gradient, polarization, polarization_report, CellId, ClassLabel, Contrast, CvConfig, FeatureVector,
    Featurizer,
};
use slant_core::separability::SeparabilityResult;
use slant_core::summarygen::{generate, GenerateOptions, HttpBackend, RetryPolicy, TemplateSet};
use slant_core::synth::{generate_corpus, generate_synth, PseudoModel, SynthCorpusSpec, SynthSpec};
use support::{Reply, StubServer};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn split(out: &[SummaryRecord], a: Alignment) -> Vec<&SummaryRecord> {
    out.iter().filter(|s| s.alignment == a).collect()
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_polarization_table_reproduction() {
    let start = Instant::now();
    let topics: Vec<String> = ["Abortion", "Gun", "Healthcare", "Immigration", "LGBTQ"].map(String::from).to_vec();
    let models: Vec<String> = ["LLaMA-7B", "Mistral-7B", "PaLM-2", "Vicuna-7B"].map(String::from).to_vec();
    let grid = [
        [-4.30, -3.51, -2.39, -0.96],
        [-5.21, -1.14, -9.49, 1.33],
        [-6.14, -2.83, -4.14, 0.75],
        [-5.66, -2.95, -0.89, -0.79],
        [-2.98, -1.87, -2.83, -0.53],
    ];
    // Encode each P as a pair of separability results whose difference is P.
    let mut results = Vec::new();
    for (t, row) in topics.iter().zip(grid) {
        for (m, p) in models.iter().zip(row) {
            for (contrast, acc) in [
                (Contrast::NeutralVsDemocrat, 0.5 + p / 200.0),
                (Contrast::NeutralVsRepublican, 0.5 - p / 200.0),
            ] {
                results.push(SeparabilityResult {
                    topic: t.clone(),
                    model_id: m.clone(),
                    contrast,
                    fold_accuracies: vec![acc; 5],
                    mean_accuracy: acc,
                    class_counts: (100, 100),
                    seed: 0,
                });
            }
        }
    }
    let rep = polarization_report(&results, &topics, &models, false).unwrap();
    let means = [-2.79, -3.63, -3.09, -2.57, -2.05];
    let maxes = [-4.30, -9.49, -6.14, -5.66, -2.98];
    let model_means = [-4.86, -2.46, -3.95, -0.04];
    let mut ok = true;
    for (i, s) in rep.topic_summary.iter().enumerate() {
        ok &= close(s.mean.unwrap(), means[i], 0.005);
        ok &= close(s.max_magnitude.unwrap(), maxes[i], 0.005);
    }
    for (i, m) in rep.model_means.iter().enumerate() {
        ok &= close(m.unwrap(), model_means[i], 0.005);
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(1);
    let got: Vec<String> = rep.topic_summary.iter().map(|s| format!("{:.4}", s.mean.unwrap())).collect();
    report(1, "polarization table reproduction", ok, &format!("topic means {got:?}, {elapsed:?}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------

/// Top-N sets for `k` models whose pairwise overlaps are exactly `overlaps`
/// (row-major over i < j): a core shared by everyone plus one-pair extras.
fn sets_with_overlaps(prefix: &str, k: usize, n: usize, overlaps: &[usize]) -> Vec<Vec<String>> {
    let core = *overlaps.iter().min().unwrap();
    let mut sets: Vec<Vec<String>> = vec![(0..core).map(|c| format!("{prefix}core{c}")).collect(); k];
    let mut pair = 0;
    for i in 0..k {
        for j in i + 1..k {
            for e in 0..overlaps[pair] - core {
                let tok = format!("{prefix}pair{i}x{j}n{e}");
                sets[i].push(tok.clone());
                sets[j].push(tok);
            }
            pair += 1;
        }
    }
    for (i, s) in sets.iter_mut().enumerate() {
        let mut f = 0;
        while s.len() < n {
            s.push(format!("{prefix}own{i}n{f}"));
            f += 1;
        }
    }
    sets
}

/// A real bias table whose `side` top-N list is exactly `tokens`.
fn table_for(tokens: &[String], side: Ideology, n: usize) -> BiasTable {
    let marked = tokens.join(" ");
    let other = "filler";
    let (dem, rep) = match side {
        Ideology::Democrat => (marked.as_str(), other),
        Ideology::Republican => (other, marked.as_str()),
    };
    let tok = Tokenizer::keep_all();
    bias_table(
        &TokenDistribution::from_texts("d", [dem], &tok).unwrap(),
        &TokenDistribution::from_texts("r", [rep], &tok).unwrap(),
        n,
        1,
    )
    .unwrap()
}

fn ci_case(side: Ideology, n: usize, overlaps: &[usize]) -> (f64, f64, f64) {
    let sets = sets_with_overlaps(side.as_str(), 4, n, overlaps);
    let tables: Vec<BiasTable> = sets.iter().map(|s| table_for(s, side, n)).collect();
    for (s, t) in sets.iter().zip(&tables) {
        let want: BTreeSet<&String> = s.iter().collect();
        let got: BTreeSet<&String> = t.top(side).iter().collect();
        assert_eq!(want, got);
    }
    let names = ["m1", "m2", "m3", "m4"];
    let pairs: Vec<(&str, &BiasTable)> = names.iter().copied().zip(&tables).collect();
    let ci = consistency_index(&pairs, side, true).unwrap();
    (ci.off_diagonal_mean, ci.overall_mean, overall_from_off_diagonal(4, ci.off_diagonal_mean))
}

#[test]
fn criterion_2_consistency_index_reconciliation() {
    let start = Instant::now();
    let (dem_off, dem_all, dem_formula) = ci_case(Ideology::Democrat, 100, &[41, 40, 41, 40, 41, 40]);
    let (rep_off, rep_all, rep_formula) = ci_case(Ideology::Republican, 1000, &[366, 366, 366, 367, 367, 367]);
    let elapsed = start.elapsed();
    let ok = close(dem_off, 40.5, 1e-9)
        && close(dem_all, 55.375, 0.01)
        && close(dem_formula, 55.375, 0.01)
        && close(rep_off, 36.65, 1e-9)
        && close(rep_all, 52.4875, 0.01)
        && close(rep_formula, 52.4875, 0.01)
        && close(rep_all, 52.49, 0.01)
        && elapsed < Duration::from_secs(1);
    report(
        2,
        "consistency index reconciliation",
        ok,
        &format!("democrat {dem_all} (off {dem_off}), republican {rep_all} (off {rep_off}), {elapsed:?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn random_corpus(rng: &mut ChaCha8Rng, vocab: &[String]) -> Vec<String> {
    let len = rng.random_range(1..=200);
    (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect()
}

#[test]
fn criterion_3_bias_score_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tok = Tokenizer::keep_all();
    let mut ok = true;
    for _ in 0..50 {
        let vocab: Vec<String> = (0..rng.random_range(2..40)).map(|i| format!("tok{i}")).collect();
        let dem = random_corpus(&mut rng, &vocab);
        let rep = random_corpus(&mut rng, &vocab);
        let threshold = rng.random_range(1..4u64);
        let n = rng.random_range(1..10);
        let d = TokenDistribution::from_texts("d", [dem.join(" ").as_str()], &tok).unwrap();
        let r = TokenDistribution::from_texts("r", [rep.join(" ").as_str()], &tok).unwrap();
        let table = bias_table(&d, &r, n, threshold).unwrap();

        // Brute force: count by linear scans.
        let mut expected = BTreeMap::new();
        for t in &vocab {
            let cd = dem.iter().filter(|x| *x == t).count();
            let cr = rep.iter().filter(|x| *x == t).count();
            if cd + cr > 0 && (cd + cr) as u64 >= threshold {
                expected.insert(t.clone(), cr as f64 / rep.len() as f64 - cd as f64 / dem.len() as f64);
            }
        }
        let got: BTreeMap<String, f64> = table.entries.iter().map(|(k, e)| (k.clone(), e.score)).collect();
        ok &= got == expected;

        let swapped = bias_table(&r, &d, n, threshold).unwrap();
        ok &= table.entries.iter().all(|(k, e)| swapped.score(k) == Some(-e.score));
        ok &= table.top_dem == swapped.top_rep && table.top_rep == swapped.top_dem;
    }
    report(3, "bias score counting oracle", ok, "50 random corpora");
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn dem_diff(lambda: f64, seed: u64) -> f64 {
    let spec = SynthSpec { injection_rate: lambda, docs_per_class: 1000, seed, ..SynthSpec::default() };
    let out = generate_synth(&spec, "m", "t").unwrap();
    let (n, d) = (split(&out.summaries, Alignment::Neutral), split(&out.summaries, Alignment::Democrat));
    diff(CellId::new("t", "m", Contrast::NeutralVsDemocrat), &n, &d, &Featurizer::default(), seed)
        .unwrap()
        .mean_accuracy
}

#[test]
fn criterion_4_chance_calibration() {
    let start = Instant::now();
    let chance: Vec<f64> = (0..10).map(|s| dem_diff(0.0, s)).collect();
    let separable: Vec<f64> = (0..10).map(|s| dem_diff(1.0, s)).collect();
    let elapsed = start.elapsed();
    // The chance band applies to the accuracy averaged over the seeds; a
    // single 2000-prediction run has a standard error near 0.011.
    let chance_mean = chance.iter().sum::<f64>() / chance.len() as f64;
    let ok = (0.47..=0.53).contains(&chance_mean)
        && separable.iter().all(|&a| a >= 0.95)
        && elapsed < Duration::from_secs(120);
    let lo = chance.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = chance.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sep_min = separable.iter().copied().fold(f64::INFINITY, f64::min);
    report(
        4,
        "chance calibration",
        ok,
        &format!("chance mean {chance_mean:.4} (per-seed range [{lo:.4}, {hi:.4}]), separable min {sep_min:.4}, {elapsed:?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn synth_p(alpha: f64, seed: u64) -> f64 {
    let spec = SynthSpec { injection_rate: 0.1, neutral_mix: alpha, docs_per_class: 1000, seed, ..SynthSpec::default() };
    let out = generate_synth(&spec, "m", "t").unwrap();
    let n = split(&out.summaries, Alignment::Neutral);
    let f = Featurizer::default();
    let d = diff(
        CellId::new("t", "m", Contrast::NeutralVsDemocrat),
        &n,
        &split(&out.summaries, Alignment::Democrat),
        &f,
        seed,
    )
    .unwrap();
    let r = diff(
        CellId::new("t", "m", Contrast::NeutralVsRepublican),
        &n,
        &split(&out.summaries, Alignment::Republican),
        &f,
        seed,
    )
    .unwrap();
    polarization(&d, &r).unwrap()
}

#[test]
fn criterion_5_polarization_sign() {
    let count = |alpha: f64, pred: fn(f64) -> bool| -> (usize, Vec<f64>) {
        let ps: Vec<f64> = (0..10).map(|s| synth_p(alpha, s)).collect();
        (ps.iter().filter(|&&p| pred(p)).count(), ps)
    };
    let (rep_lean, p02) = count(0.2, |p| p > 2.0);
    let (balanced, p05) = count(0.5, |p| p.abs() < 2.0);
    let (dem_lean, p08) = count(0.8, |p| p < -2.0);
    let ok = rep_lean >= 9 && balanced > 5 && dem_lean >= 9;
    let fmt = |v: &[f64]| v.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(" ");
    report(
        5,
        "polarization sign oracle",
        ok,
        &format!(
            "alpha 0.2: {rep_lean}/10 [{}]; alpha 0.5: {balanced}/10 [{}]; alpha 0.8: {dem_lean}/10 [{}]",
            fmt(&p02),
            fmt(&p05),
            fmt(&p08)
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_6_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dims = rng.random_range(1..=64);
        let n = rng.random_range(1..=32);
        let xs: Vec<FeatureVector> = (0..n)
            .map(|_| FeatureVector::Dense((0..dims).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let ys: Vec<ClassLabel> = (0..n)
            .map(|_| if rng.random_bool(0.5) { ClassLabel::Aligned } else { ClassLabel::Neutral })
            .collect();
        let w: Vec<f64> = (0..dims).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        let l2 = rng.random_range(0.0..0.1);
        let loss = |w: &[f64], b: f64| loss_and_gradient(&refs, &ys, w, b, l2).0;
        let (_, grad, grad_b) = loss_and_gradient(&refs, &ys, &w, b, l2);

        let h = 1e-5;
        let mut fd = Vec::with_capacity(dims + 1);
        for i in 0..dims {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[i] += h;
            down[i] -= h;
            fd.push((loss(&up, b) - loss(&down, b)) / (2.0 * h));
        }
        fd.push((loss(&w, b + h) - loss(&w, b - h)) / (2.0 * h));
        let analytic: Vec<f64> = grad.into_iter().chain([grad_b]).collect();
        let err: f64 = analytic.iter().zip(&fd).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(err / norm(&analytic).max(norm(&fd)));
    }
    let ok = worst < 1e-5;
    report(6, "gradient verification", ok, &format!("worst relative error {worst:.2e}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn markers(prefix: &str) -> Vec<String> {
    (0..10).map(|i| format!("{prefix}{i:03}")).collect()
}

fn transfer_case(shared: bool) -> (Vec<f64>, Vec<f64>) {
    let mut b = PseudoModel::new("synthB");
    if !shared {
        b.dem_markers = Some(markers("bdmark"));
        b.rep_markers = Some(markers("brmark"));
    }
    let spec = SynthCorpusSpec {
        spec: SynthSpec { injection_rate: 0.3, docs_per_class: 300, seed: 17, ..SynthSpec::default() },
        topics: vec!["synthetic".into()],
        models: vec![PseudoModel::new("synthA"), b],
    };
    let corpus = generate_corpus(&spec).unwrap();
    let all: Vec<&SummaryRecord> = corpus.summaries().collect();
    let corpora: Vec<ModelCorpus> = ["synthA", "synthB"]
        .iter()
        .map(|m| ModelCorpus {
            model_id: m.to_string(),
            neutral: all.iter().copied().filter(|s| s.model_id == *m && s.alignment == Alignment::Neutral).collect(),
            aligned: all.iter().copied().filter(|s| s.model_id == *m && s.alignment == Alignment::Democrat).collect(),
        })
        .collect();
    let t = transfer_matrix(&corpora, Contrast::NeutralVsDemocrat, &Featurizer::default(), 3, &CvConfig::default())
        .unwrap();
    let diag = vec![t.matrix.get(0, 0).unwrap(), t.matrix.get(1, 1).unwrap()];
    let off = vec![t.matrix.get(0, 1).unwrap(), t.matrix.get(1, 0).unwrap()];
    (diag, off)
}

#[test]
fn criterion_7_transfer_oracle() {
    let (s_diag, s_off) = transfer_case(true);
    let (d_diag, d_off) = transfer_case(false);
    let shared_ok = s_off.iter().zip(&s_diag).all(|(o, d)| (o - d).abs() <= 0.05);
    let disjoint_ok = d_off.iter().all(|&o| close(o, 0.5, 0.05)) && d_diag.iter().all(|&d| d >= 0.95);
    let ok = shared_ok && disjoint_ok;
    report(
        7,
        "monoculture transfer oracle",
        ok,
        &format!("shared diag {s_diag:?} off {s_off:?}; disjoint diag {d_diag:?} off {d_off:?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn cell_fills(svg: &str) -> HashMap<(usize, usize), String> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    doc.descendants()
        .filter(|n| n.tag_name().name() == "rect" && n.attribute("class") == Some("cell"))
        .map(|n| {
            let pos = (
                n.attribute("data-row").unwrap().parse().unwrap(),
                n.attribute("data-col").unwrap().parse().unwrap(),
            );
            (pos, n.attribute("fill").unwrap().to_string())
        })
        .collect()
}

fn audit_workspace(root: &Path) -> Workspace {
    let spec = SynthCorpusSpec {
        spec: SynthSpec { docs_per_class: 50, doc_length: 30, injection_rate: 0.2, seed: 8, ..SynthSpec::default() },
        topics: vec!["alpha".into(), "beta".into()],
        models: vec![PseudoModel::new("synthA"), PseudoModel::new("synthB"), PseudoModel::new("synthC")],
    };
    let ws = Workspace::open(root).unwrap();
    ws.save(&generate_corpus(&spec).unwrap()).unwrap();
    ws
}

#[test]
fn criterion_8_determinism_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ws = audit_workspace(&dir.path().join("ws"));
    let config = |out: &str| AuditRunConfig {
        n: 10,
        seed: 4,
        featurizer: FeaturizerConfig::Hashed { dims: 1 << 14 },
        ..AuditRunConfig::new(ws.root(), dir.path().join(out))
    };
    let a = run_audit(&config("a")).unwrap();
    let b = run_audit(&config("b")).unwrap();
    let identical = a.run_sha256 == b.run_sha256 && a.files == b.files;

    let mut round_trips = 0;
    let mut csv_ok = true;
    for f in a.files.iter().filter(|f| f.path.ends_with(".csv")) {
        let raw = fs::read_to_string(dir.path().join("a").join(&f.path)).unwrap();
        csv_ok &= reencode(&raw).map(|r| r == raw).unwrap_or(false);
        round_trips += 1;
    }

    let mut svg_ok = true;
    let ci_svgs: Vec<_> = a.files.iter().filter(|f| f.path.contains("ci_") && f.path.ends_with(".svg")).collect();
    svg_ok &= ci_svgs.len() == 2;
    for f in &ci_svgs {
        let fills = cell_fills(&fs::read_to_string(dir.path().join("a").join(&f.path)).unwrap());
        svg_ok &= fills.len() == 9;
        svg_ok &= (0..3).all(|i| fills.get(&(i, i)) == Some(&PALETTE[PALETTE.len() - 1].to_string()));
    }
    let ok = identical && csv_ok && svg_ok && round_trips > 0;
    report(
        8,
        "determinism and round-trip",
        ok,
        &format!("hash-identical {identical}, {round_trips} csv round-trips ok {csv_ok}, ci svg diagonals ok {svg_ok}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_9_generation_client() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path().join("ws")).unwrap();
    let lines: Vec<String> = (0..5)
        .map(|i| serde_json::json!({"article_id": format!("n{i}"), "topic": "immigration", "text": format!("News item {i}.")}).to_string())
        .collect();
    let input = dir.path().join("articles.jsonl");
    fs::write(&input, lines.join("\n")).unwrap();
    ws.ingest(&input, RecordKind::Articles).unwrap();

    let server = StubServer::start(vec![Reply::Status(503)]);
    let backend = HttpBackend::new(&server.url, Duration::from_secs(10), None);
    let opts = GenerateOptions {
        retry: RetryPolicy { initial_backoff: Duration::from_millis(5), ..RetryPolicy::default() },
        ..GenerateOptions::new("stub-model")
    };
    let first = generate(&ws, &backend, &TemplateSet::default(), &opts).unwrap();
    let first_requests = server.requests();
    let corpus = ws.load().unwrap();
    let three_each = corpus.articles().all(|a| {
        let got: BTreeSet<String> = corpus
            .summaries()
            .filter(|s| s.article_id == a.article_id)
            .map(|s| s.alignment.to_string())
            .collect();
        let n = corpus.summaries().filter(|s| s.article_id == a.article_id).count();
        n == 3 && got == Alignment::ALL.iter().map(|x| x.to_string()).collect()
    });

    server.reset_count();
    let second = generate(&ws, &backend, &TemplateSet::default(), &opts).unwrap();
    let resumed_requests = server.requests();

    let ok = first.counts.failed == 0
        && first.counts.done == 15
        && first_requests == 16
        && three_each
        && corpus.summary_count() == 15
        && resumed_requests == 0
        && second.counts.skipped == 15;
    report(
        9,
        "generation client",
        ok,
        &format!(
            "first run {} done / {} failed over {first_requests} requests, resume made {resumed_requests} requests",
            first.counts.done, first.counts.failed
        ),
    );
    assert!(ok);
}
